use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use biasadapt::bilevel::Mode;
use biasadapt::data::{save_csv_dataset, GaussianMixture, ImbalanceKind, ImbalanceProfile};
use biasadapt::eval::evaluate;
use biasadapt::model::load_checkpoint;
use biasadapt::numcore::{Rng, Stream};
use biasadapt::selfcheck;
use biasadapt_cli::bench::{default_sizes, measure_overhead};
use biasadapt_cli::experiment::{build_splits, prepare_output_dir, run, run_dir, write_run, write_splits};
use biasadapt_cli::{compare, ExperimentConfig, OUTPUT_ROOT_ENV};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "biasadapt", version, about = "Bias-adaptive classifier experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    L2ac,
    Baseline,
    PlainAttractor,
    SingleLevel,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Longtail,
    Step,
    ReversedLongtail,
    Uniform,
}

impl From<KindArg> for ImbalanceKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Longtail => ImbalanceKind::Longtail,
            KindArg::Step => ImbalanceKind::Step,
            KindArg::ReversedLongtail => ImbalanceKind::ReversedLongtail,
            KindArg::Uniform => ImbalanceKind::Uniform,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write dataset CSVs: the three splits of a config, or one profile.
    GenData {
        #[arg(long, conflicts_with = "profile")]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "config")]
        profile: Option<KindArg>,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 1500)]
        n1: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 3.6)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train one run and write trace, checkpoints, and metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Weight of the balanced loss in single_level mode.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        /// Run directory; defaults to `<root>/<mode>/seed_<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Score a checkpoint on a labeled test CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Use the raw parameters instead of their moving averages.
        #[arg(long)]
        no_ema: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the gradient and oracle invariant suite.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Time the attractor's second-order step against a full lower backward.
    BenchOverhead {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        reps: usize,
    },
    /// Tabulate bACC and GM per mode across run directories.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn output_root(config: &ExperimentConfig) -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| config.eval.output_dir.clone(), PathBuf::from)
}

fn gen_data(config: Option<PathBuf>, profile: Option<ImbalanceProfile>, dim: usize, separation: f64, seed: u64, out: &Path, force: bool) -> Result<()> {
    prepare_output_dir(out, force)?;
    if let Some(path) = config {
        let config = ExperimentConfig::load(&path)?;
        let splits = build_splits(&config, seed)?;
        write_splits(&splits, out)?;
        eprintln!(
            "wrote {} labeled, {} unlabeled, {} test rows to {}",
            splits.labeled.len(),
            splits.unlabeled.len(),
            splits.test.len(),
            out.display()
        );
        return Ok(());
    }
    let profile = profile.expect("clap requires --profile without --config");
    let counts = profile.counts()?;
    let mut rng = Rng::for_stream(seed, Stream::Data);
    let data = GaussianMixture::new(profile.num_classes, dim, separation, &mut rng)?.sample(&counts, &mut rng)?;
    save_csv_dataset(&data, out.join("dataset.csv"))?;
    println!("{}", counts.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData {
            config,
            profile,
            gamma,
            n1,
            classes,
            dim,
            separation,
            seed,
            out,
            force,
        } => {
            let profile = profile
                .map(|k| ImbalanceProfile::new(k.into(), gamma, n1, classes))
                .transpose()?;
            gen_data(config, profile, dim, separation, seed, &out, force)?;
        }
        Command::Train {
            config,
            seed,
            mode,
            lambda,
            iters,
            alpha,
            eta,
            out,
            force,
        } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(m) = mode {
                config.train.mode = match m {
                    ModeArg::L2ac => Mode::L2ac,
                    ModeArg::Baseline => Mode::Baseline,
                    ModeArg::PlainAttractor => Mode::PlainAttractor,
                    ModeArg::SingleLevel => Mode::SingleLevel { lambda },
                };
            }
            if let Some(n) = iters {
                config.train.iters = n;
            }
            if let Some(a) = alpha {
                config.train.alpha = a;
            }
            if let Some(e) = eta {
                config.train.eta = e;
            }
            config.validate()?;
            let dir = out.unwrap_or_else(|| run_dir(&output_root(&config), config.train.mode, config.seed));
            prepare_output_dir(&dir, force)?;
            let splits = build_splits(&config, config.seed)?;
            let result = run(&config, &splits, config.seed, Some(&dir))?;
            write_run(&dir, &config, &result)?;
            let m = &result.metrics.mean_last;
            println!("{}: bACC {:.4}  GM {:.4}  ({})", result.metrics.mode, m.bacc, m.gm, dir.display());
        }
        Command::Eval { ckpt, test, no_ema, out } => {
            let state = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let data = biasadapt::data::load_csv_dataset(&test, state.num_classes())?;
            let (report, _) = evaluate(&state, &data, !no_ema)?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(p, json + "\n")?,
                None => println!("{json}"),
            }
        }
        Command::Selfcheck { seed, trials } => {
            let results = selfcheck::run_all(seed, trials)?;
            for r in &results {
                println!("{r}");
            }
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::BenchOverhead { config, reps } => {
            let (dims, bl, bu) = match config {
                Some(path) => {
                    let c = ExperimentConfig::load(&path)?;
                    let dim = c.data.synth.as_ref().map_or(16, |s| s.dim);
                    (c.model.dims(dim, c.data.num_classes), c.train.batch_labeled, c.train.batch_unlabeled)
                }
                None => default_sizes(),
            };
            if reps == 0 {
                bail!("--reps must be positive");
            }
            let r = measure_overhead(&dims, bl, bu, reps, 0)?;
            println!(
                "lower backward {:.3e} s, second-order step {:.3e} s, ratio {:.3} (median of {})",
                r.lower_backward_secs, r.second_order_secs, r.ratio, r.reps
            );
        }
        Command::Compare { runs, csv } => {
            let rows = compare::compare(&runs)?;
            print!("{}", compare::render_table(&rows));
            if let Some(p) = csv {
                compare::write_csv(&rows, &p)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
