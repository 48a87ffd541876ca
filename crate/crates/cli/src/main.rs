use std::path::PathBuf;
use std::process::ExitCode;

use aerial_core::pipeline::{
    cmd_ablate, cmd_dataset, cmd_eval, cmd_probe, cmd_run, cmd_train_base, cmd_warp, parse_spec,
    RunConfig, RunInput,
};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "aerial",
    version,
    about = "Ground-to-aerial view translation on a toy diffusion model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set finetune_lr=7e-5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output root; shorthand for `--set out_dir=...`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                RunConfig::load(p).with_context(|| format!("[config] reading {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)
                .map_err(|e| anyhow::anyhow!("[config] {e}"))?;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct InputArgs {
    /// Front view of a dataset scene.
    #[arg(long, conflicts_with_all = ["spec", "image"])]
    scene: Option<usize>,
    /// Scene rendered from `shape,color,u,scale,floor`.
    #[arg(long)]
    spec: Option<String>,
    /// Ground-view PPM/PGM image; needs `--txt`.
    #[arg(long, requires = "txt")]
    image: Option<PathBuf>,
    /// Scene text for `--image`, e.g. "a red cube".
    #[arg(long)]
    txt: Option<String>,
}

impl InputArgs {
    fn resolve(&self) -> Result<RunInput> {
        let spec = self
            .spec
            .as_deref()
            .map(parse_spec)
            .transpose()
            .map_err(|e| anyhow::anyhow!("[config] {e}"))?;
        Ok(match (self.scene, &self.image, spec) {
            (Some(id), _, _) => RunInput::Scene(id),
            (None, Some(path), spec) => RunInput::Image {
                path: path.clone(),
                txt: self.txt.clone().unwrap_or_default(),
                spec,
            },
            (None, None, Some(spec)) => RunInput::Spec(spec),
            (None, None, None) => bail!("[config] give one of --scene, --spec or --image"),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic scene dataset.
    Dataset(ConfigArgs),
    /// Train the base denoiser on the dataset.
    TrainBase(ConfigArgs),
    /// Project a ground image to a pseudo-aerial view.
    Warp {
        input: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Translate one input over the alpha sweep.
    Run {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare the method against its ablations at one alpha.
    Ablate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score images for aerialness and, given a spec, fidelity.
    Eval {
        images: Vec<PathBuf>,
        #[arg(long)]
        spec: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train and report the viewpoint probe.
    Probe(ConfigArgs),
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dataset(c) => {
            let manifest = cmd_dataset(&c.resolve()?)?;
            println!("{}", manifest.display());
        }
        Command::TrainBase(c) => {
            let (path, sum) = cmd_train_base(&c.resolve()?)?;
            println!("{}\t{sum}", path.display());
        }
        Command::Warp { input, output, cfg } => {
            let path = cmd_warp(&input, output.as_deref(), &cfg.resolve()?)?;
            println!("{}", path.display());
        }
        Command::Run { input, cfg } => {
            let cfg = cfg.resolve()?;
            let rec = cmd_run(&input.resolve()?, &cfg)?;
            println!("run\t{}", cfg.run_dir().display());
            println!("alpha\taerialness\tfidelity");
            for s in &rec.summary {
                let fid = s.mean_fidelity.map_or("NA".into(), |f| format!("{f:.4}"));
                println!("{}\t{:.4}\t{fid}", s.alpha, s.mean_aerialness);
            }
            if let Some(a) = rec.best_alpha {
                println!("best_alpha\t{a}");
            }
        }
        Command::Ablate { input, cfg } => {
            let cfg = cfg.resolve()?;
            let report = cmd_ablate(&input.resolve()?, &cfg)?;
            println!("variant\taerialness\tfidelity");
            for (name, aer, fid) in report.means() {
                let fid = fid.map_or("NA".into(), |f| format!("{f:.4}"));
                println!("{name}\t{aer:.4}\t{fid}");
            }
        }
        Command::Eval { images, spec, cfg } => {
            let spec = spec
                .as_deref()
                .map(parse_spec)
                .transpose()
                .map_err(|e| anyhow::anyhow!("[config] {e}"))?;
            for row in cmd_eval(&images, spec.as_ref(), &cfg.resolve()?)? {
                println!("{}", row.to_line());
            }
        }
        Command::Probe(c) => {
            let probe = cmd_probe(&c.resolve()?)?;
            println!("training_accuracy\t{:.4}", probe.training_accuracy());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
