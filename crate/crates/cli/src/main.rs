use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pseudograph::dataset::SynthParams;
use pseudograph::io::read_json;
use pseudograph_cli::{
    cmd_ablate, cmd_baseline, cmd_eval, cmd_generate, cmd_render, cmd_train, CliResult, Overrides, RunManifest,
};

#[derive(Parser)]
#[command(name = "pseudograph", version, about = "Complete pseudo labels from partial ones with per-image GCNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene suite and a run manifest for it.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// First scene seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        count: u64,
        /// JSON file with generator parameters; missing fields keep defaults.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Train one GCN per scene and write complete labels.
    Train(RunArgs),
    /// Random-walk propagation of the activation maps.
    Baseline(RunArgs),
    /// Loss ablation table over the manifest's scenes.
    Ablate(RunArgs),
    /// Score predicted label files against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a label file as a palette PPM.
    Render {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    no_ent: bool,
    #[arg(long)]
    no_lp: bool,
    #[arg(long)]
    no_refine: bool,
    #[arg(long)]
    normalize_adj: bool,
}

impl RunArgs {
    fn manifest(&self) -> CliResult<RunManifest> {
        let mut m = RunManifest::load(&self.manifest)?;
        m.apply(&Overrides {
            out: self.out.clone(),
            workers: self.workers,
            seed: self.seed,
            steps: self.steps,
            beta1: self.beta1,
            beta2: self.beta2,
            no_ent: self.no_ent,
            no_lp: self.no_lp,
            no_refine: self.no_refine,
            normalize_adj: self.normalize_adj,
        })?;
        Ok(m)
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { out, seed, count, params, workers } => {
            let params: SynthParams = match params {
                Some(p) => read_json(&p)?,
                None => SynthParams::default(),
            };
            let m = cmd_generate(&out, seed, count, &params, workers)?;
            eprintln!("wrote {} scenes to {}", m.scenes.len(), out.display());
        }
        Command::Train(args) => {
            let s = cmd_train(&args.manifest()?)?;
            print_json(&s);
        }
        Command::Baseline(args) => {
            let s = cmd_baseline(&args.manifest()?)?;
            print_json(&s);
        }
        Command::Ablate(args) => {
            let (table, baseline) = cmd_ablate(&args.manifest()?)?;
            print!("{}", table.to_csv());
            println!("random-walk,,,,{baseline:.6},{}", table.rows.first().map_or(0, |r| r.scenes));
        }
        Command::Eval { pred, gt, out } => {
            let s = cmd_eval(&pred, &gt)?;
            match out {
                Some(path) => pseudograph::io::write_json(&path, &s)?,
                None => print_json(&s),
            }
        }
        Command::Render { labels, out } => cmd_render(&labels, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
