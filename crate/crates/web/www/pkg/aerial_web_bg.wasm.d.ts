/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const alpha_bar_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const conditioning_plan: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const pseudo_aerial: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const render_scene: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number) => [number, number, number, number];
export const strategies: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
