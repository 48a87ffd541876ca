/* tslint:disable */
/* eslint-disable */

export function alpha_bar_curve(kind: string, steps: number, beta_start: number, beta_end: number): Float64Array;

export function conditioning_plan(strategy: string, steps: number, alpha: number): string;

export function pseudo_aerial(rgba: Uint8Array, height: number, width: number, out_size: number, fill: number): Uint8Array;

export function render_scene(shape: string, color: string, u: number, scale: number, floor: number, view: string, size: number): Uint8Array;

export function strategies(): string[];

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly alpha_bar_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly conditioning_plan: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly pseudo_aerial: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly render_scene: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number) => [number, number, number, number];
    readonly strategies: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
