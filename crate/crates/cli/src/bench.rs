use std::time::Instant;

use anyhow::Result;
use biasadapt::bilevel::{
    lower_loss, lower_step, omega_hypergradient, upper_loss, LabeledBatch, Optimizer, TrainConfig,
};
use biasadapt::model::{init_model, Mlp, ModelDims, Params, DEFAULT_ATTRACTOR_HIDDEN};
use biasadapt::numcore::{Matrix, Rng, Stream};
use biasadapt::pseudo::PseudoBatch;
use serde::Serialize;

/// Median wall-clock seconds of one full lower backward and of the
/// backward-on-backward attractor step on the same batches.
#[derive(Debug, Clone, Serialize)]
pub struct OverheadReport {
    pub reps: usize,
    pub lower_backward_secs: f64,
    pub second_order_secs: f64,
    pub ratio: f64,
}

/// Benchmark sizes when no config is given: ten classes, a 16→32→16
/// extractor, the default attractor width and the default batch sizes.
pub fn default_sizes() -> (ModelDims, usize, usize) {
    let dims = ModelDims {
        input_dim: 16,
        hidden: vec![32],
        feature_dim: 16,
        num_classes: 10,
        attractor_hidden: DEFAULT_ATTRACTOR_HIDDEN,
    };
    let t = TrainConfig::default();
    (dims, t.batch_labeled, t.batch_unlabeled)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).expect("sizes agree")
}

/// Times both steps on random inputs of the given sizes. Every unlabeled
/// row is kept by the mask, so both passes do their full work.
pub fn measure_overhead(dims: &ModelDims, batch_labeled: usize, batch_unlabeled: usize, reps: usize, seed: u64) -> Result<OverheadReport> {
    let k = dims.num_classes;
    let mut rng = Rng::for_stream(seed, Stream::Check);
    let mut state = init_model(dims, Default::default(), &mut Rng::for_stream(seed, Stream::Init))?;
    state.omega = Mlp::glorot(&[k, dims.attractor_hidden, k], &mut rng);
    let labels: Vec<usize> = (0..batch_labeled).map(|i| i % k).collect();
    let batch = LabeledBatch::new(gaussian(batch_labeled, dims.input_dim, &mut rng), &labels, k);
    let unl: Vec<usize> = (0..batch_unlabeled).map(|i| i % k).collect();
    let x = gaussian(batch_unlabeled, dims.input_dim, &mut rng);
    let pseudo = PseudoBatch {
        x_weak: x.clone(),
        targets: LabeledBatch::new(x.clone(), &unl, k).targets,
        x_strong: x,
        weights: vec![1.0; batch_unlabeled],
    };
    let per = (batch_labeled / k).max(1);
    let bal: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat_n(c, per)).collect();
    let balanced = LabeledBatch::new(gaussian(bal.len(), dims.input_dim, &mut rng), &bal, k);

    let mut lower_times = Vec::with_capacity(reps);
    let mut second_times = Vec::with_capacity(reps);
    let mut sink = 0.0;
    for _ in 0..reps {
        let mut s = state.clone();
        let lower = lower_loss(&batch, &pseudo, &s)?;
        lower_times.push(lower.backward_secs);
        let cache = lower_step(&mut s, lower, 1e-3, &mut Optimizer::Sgd, &mut Optimizer::Sgd);
        let upper = upper_loss(&balanced, &s)?;
        let t0 = Instant::now();
        let g = omega_hypergradient(&cache, &upper.phi_grad)?;
        second_times.push(t0.elapsed().as_secs_f64());
        sink += g.norm();
    }
    std::hint::black_box(sink);
    let lower_backward_secs = median(lower_times);
    let second_order_secs = median(second_times);
    Ok(OverheadReport {
        reps,
        lower_backward_secs,
        second_order_secs,
        ratio: second_order_secs / lower_backward_secs,
    })
}
