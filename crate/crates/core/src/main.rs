use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rpfault::pipeline::{
    run_both_generators, run_pipeline, stage_classify, stage_embed, stage_eval, stage_gen, stage_project, stage_train,
    Metrics, RunConfig, RunPaths,
};

#[derive(Parser)]
#[command(name = "rpfault", version, about = "Recurrence-plot VAE fault localization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize fault records and write the manifest.
    Gen(Common),
    /// PAA, normalization and recurrence-plot images; assigns the split.
    Embed(Common),
    /// Train the VAE on the training split.
    Train(Common),
    /// Project every event through the trained encoder.
    Project(Common),
    /// Fit the linear SVM on training latents.
    Classify(Common),
    /// Score the SVM and write metrics.json.
    Eval(Common),
    /// All stages end to end.
    Run(RunArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration. Later stages default to `<out>/config.toml`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paa_factor: Option<usize>,
    /// Replace an existing run directory.
    #[arg(long)]
    force: bool,
    /// Write every recurrence plot as an 8-bit PGM.
    #[arg(long)]
    dump_pgm: bool,
    /// Write every recurrence matrix as CSV.
    #[arg(long)]
    dump_matrix_csv: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Run Gen1 and Gen4 into `<out>/Gen1` and `<out>/Gen4`.
    #[arg(long)]
    both_generators: bool,
}

impl Common {
    fn resolve(&self, fresh: bool) -> Result<(RunConfig, PathBuf)> {
        let from_out = self.out.as_ref().map(|o| o.join("config.toml")).filter(|p| !fresh && p.exists());
        let mut cfg = match (&self.config, from_out) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(path)) => RunConfig::load(&path)?,
            (None, None) if fresh => RunConfig::default(),
            (None, None) => bail!("no --config given and no config.toml in the output directory"),
        };
        if let Some(seed) = self.seed {
            cfg.global_seed = seed;
        }
        if let Some(f) = self.paa_factor {
            cfg.paa_factor = f;
        }
        cfg.dump_pgm |= self.dump_pgm;
        cfg.dump_matrix_csv |= self.dump_matrix_csv;
        if self.out.is_some() {
            cfg.output_dir = self.out.clone();
        }
        cfg.validate()?;
        let out = cfg.output_dir.clone().context("no --out given and the config has no output_dir")?;
        Ok((cfg, out))
    }
}

fn print_metrics(label: &str, m: &Metrics) {
    println!(
        "{label}train_accuracy={:.4} test_accuracy={:.4} confusion={:?} final_loss={:.6}",
        m.train_accuracy, m.test_accuracy, m.confusion, m.final_loss.total
    );
}

fn staged(args: &Common, f: impl FnOnce(&RunConfig, &RunPaths) -> Result<(), rpfault::pipeline::PipelineError>) -> Result<()> {
    let (cfg, out) = args.resolve(false)?;
    f(&cfg, &RunPaths::new(out))?;
    Ok(())
}

fn run_all(args: &RunArgs) -> Result<()> {
    let (cfg, out) = args.common.resolve(true)?;
    if args.both_generators {
        for (g, m) in run_both_generators(&cfg, &out, args.common.force)? {
            print_metrics(&format!("{g}: "), &m);
        }
    } else {
        print_metrics("", &run_pipeline(&cfg, &RunPaths::new(&out), args.common.force)?);
    }
    Ok(())
}

fn gen(args: &Common) -> Result<()> {
    let (cfg, out) = args.resolve(true)?;
    stage_gen(&cfg, &RunPaths::new(out), args.force)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Embed(a) => staged(a, stage_embed),
        Command::Train(a) => staged(a, stage_train),
        Command::Project(a) => staged(a, stage_project),
        Command::Classify(a) => staged(a, stage_classify),
        Command::Eval(a) => staged(a, |c, p| stage_eval(c, p).map(|m| print_metrics("", &m))),
        Command::Run(a) => run_all(a),
    }
}

