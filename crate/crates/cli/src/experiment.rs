use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use biasadapt::bilevel::{train_with, write_timings_csv, write_trace_csv, Mode, PseudoSource, StepTrace};
use biasadapt::data::{load_csv_dataset, save_csv_dataset, Dataset, GaussianMixture, UNLABELED};
use biasadapt::eval::{evaluate, pseudo_label_recall, ConfusionMatrix, LastReports, MetricsReport};
use biasadapt::model::{init_model, save_checkpoint, ModelState};
use biasadapt::numcore::{Rng, Stream};
use biasadapt::pseudo::assign_pseudo_labels;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Labeled, unlabeled (true labels kept for diagnostics), and test data.
#[derive(Debug, Clone)]
pub struct Splits {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub test: Dataset,
}

/// Synthesizes the splits from the data stream of `seed`, or loads the CSVs.
pub fn build_splits(config: &ExperimentConfig, seed: u64) -> Result<Splits> {
    let k = config.data.num_classes;
    if let Some(csv) = &config.data.csv {
        let load = |p: &Path| load_csv_dataset(p, k).with_context(|| format!("loading {}", p.display()));
        return Ok(Splits {
            labeled: load(&csv.labeled)?,
            unlabeled: load(&csv.unlabeled)?,
            test: load(&csv.test)?,
        });
    }
    let s = config.data.synth.as_ref().expect("validated: synth or csv");
    let mut rng = Rng::for_stream(seed, Stream::Data);
    let mixture = GaussianMixture::new(k, s.dim, s.separation, &mut rng)?;
    let labeled = mixture.sample(&s.labeled.with_classes(k)?.counts()?, &mut rng)?;
    let unlabeled = mixture.sample(&s.unlabeled.with_classes(k)?.counts()?, &mut rng)?;
    let unlabeled = Dataset::new(
        unlabeled.features().clone(),
        vec![UNLABELED; unlabeled.len()],
        unlabeled.true_labels().to_vec(),
        k,
    )?;
    let test = mixture.sample(&s.test.with_classes(k)?.counts()?, &mut rng)?;
    Ok(Splits {
        labeled,
        unlabeled,
        test,
    })
}

pub fn write_splits(splits: &Splits, dir: &Path) -> Result<()> {
    save_csv_dataset(&splits.labeled, dir.join("labeled.csv"))?;
    save_csv_dataset(&splits.unlabeled, dir.join("unlabeled.csv"))?;
    save_csv_dataset(&splits.test, dir.join("test.csv"))?;
    Ok(())
}

/// Headline metrics of one run. Holds no timings, so equal runs serialize
/// to equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: String,
    pub seed: u64,
    pub iters: u64,
    /// Number of evaluations averaged into `mean_last`.
    pub averaged: usize,
    pub mean_last: MetricsReport,
    /// Evaluation of the final model, with pseudo-label recall on the
    /// unlabeled set.
    pub final_eval: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: RunMetrics,
    pub state: ModelState,
    pub traces: Vec<StepTrace>,
    pub confusion: ConfusionMatrix,
}

/// Trains with `config.train` under `seed`, evaluating every
/// `config.eval.interval` iterations. When `checkpoint_dir` is given,
/// intermediate checkpoints are written there.
pub fn run(config: &ExperimentConfig, splits: &Splits, seed: u64, checkpoint_dir: Option<&Path>) -> Result<RunResult> {
    let k = config.data.num_classes;
    let mut train = config.train.clone();
    train.seed = seed;
    let dims = config.model.dims(splits.labeled.dim(), k);
    let state = init_model(&dims, config.model.attractor_norm, &mut Rng::for_stream(seed, Stream::Init))?;
    let labeled = splits.labeled.labeled_view();
    let unlabeled = splits.unlabeled.unlabeled_view();

    let mut last = LastReports::new(config.eval.last);
    let outcome = train_with(&train, state, &labeled, &unlabeled, |iter, state| {
        if iter % config.eval.interval == 0 || iter == train.iters {
            last.push(evaluate(state, &splits.test, config.eval.use_ema)?.0);
        }
        if let Some(dir) = checkpoint_dir {
            let every = config.eval.checkpoint_interval;
            if every > 0 && iter % every == 0 {
                save_checkpoint(state, dir.join(format!("checkpoint_{iter:08}.json")))?;
            }
        }
        Ok(())
    })?;

    let (mut final_eval, confusion) = evaluate(&outcome.state, &splits.test, config.eval.use_ema)?;
    final_eval.pseudo_recall = Some(final_pseudo_recall(&outcome.state, &train, &splits.unlabeled)?);
    let mean_last = last.mean().unwrap_or_else(|| final_eval.clone());
    Ok(RunResult {
        metrics: RunMetrics {
            mode: train.mode.name().to_string(),
            seed,
            iters: train.iters,
            averaged: last.len(),
            mean_last,
            final_eval,
        },
        state: outcome.state,
        traces: outcome.traces,
        confusion,
    })
}

/// Pseudo-label recall over the whole unlabeled set, on un-augmented rows,
/// with the same label source and threshold as training.
fn final_pseudo_recall(
    state: &ModelState,
    train: &biasadapt::bilevel::TrainConfig,
    unlabeled: &Dataset,
) -> Result<Vec<Option<f64>>> {
    let k = state.num_classes();
    if unlabeled.is_empty() {
        return Ok(vec![None; k]);
    }
    let x = unlabeled.features();
    let biased = train.mode.uses_attractor() && train.pseudo_source == PseudoSource::Biased;
    let logits = if biased {
        state.forward_train(x)?.logits
    } else {
        state.forward_eval(x, false)?
    };
    let (_, weights) = assign_pseudo_labels(&logits, train.tau, 1.0, train.pseudo_mode)?;
    Ok(pseudo_label_recall(unlabeled.true_labels(), &logits.argmax_rows(), &weights, k))
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && std::fs::read_dir(dir)?.next().is_some() && !force {
        bail!("{} already exists and is not empty; pass --force to overwrite", dir.display());
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

/// Writes trace, timings, confusion matrix, final checkpoint, metrics, and
/// the resolved config into `dir`.
pub fn write_run(dir: &Path, config: &ExperimentConfig, result: &RunResult) -> Result<()> {
    write_trace_csv(dir.join("trace.csv"), &result.traces)?;
    write_timings_csv(dir.join("timings.csv"), &result.traces)?;
    result.confusion.write_csv(dir.join("confusion.csv"))?;
    save_checkpoint(&result.state, dir.join("final.json"))?;
    let mut json = serde_json::to_string_pretty(&result.metrics)?;
    json.push('\n');
    std::fs::write(dir.join("metrics.json"), json)?;
    let mut resolved = config.clone();
    resolved.seed = result.metrics.seed;
    resolved.train.seed = result.metrics.seed;
    std::fs::write(dir.join("config.toml"), resolved.to_toml()?)?;
    Ok(())
}

/// `<root>/<mode>/seed_<seed>`.
pub fn run_dir(root: &Path, mode: Mode, seed: u64) -> PathBuf {
    root.join(mode.name()).join(format!("seed_{seed}"))
}
