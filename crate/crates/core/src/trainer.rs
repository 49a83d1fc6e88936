//! Simulated data-parallel training with the three strategies under study.
//!
//! One step: draw a batch, shard it across `M` logical workers, let each
//! worker derive its own keyed random stream, sample and normalize a
//! perturbation, evaluate its strategy's loss gradient on its shard, then
//! average the gradients in fixed worker order and take one SGD-with-momentum
//! step under a cosine learning-rate schedule. The result is independent of
//! worker scheduling because the only randomness is keyed by
//! `(seed, step, worker)` and the reduction order is fixed.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{batches, Batch, Dataset};
use crate::error::{Error, Result};
use crate::network::{forward, init_params, l2_norm, MlpSpec, ParameterVector};
use crate::objective::{
    accuracy, empirical_loss_grad, neighbor_loss_grad, nrs_loss, LossBreakdown,
};
use crate::perturb::{
    apply_scale_mode, sample_perturbation, sample_perturbation_in_ball, worker_rng, ScaleMode,
};
use crate::tensor::Tensor;

/// Training strategy under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Plain empirical loss.
    Baseline,
    /// Random-perturbation reference: optimize only the perturbed model's
    /// empirical loss.
    Rpr,
    /// Full three-term neighborhood region smoothing objective.
    Nrs,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Baseline => "baseline",
            Strategy::Rpr => "rpr",
            Strategy::Nrs => "nrs",
        };
        f.write_str(s)
    }
}

/// Every hyperparameter of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Neighborhood radius; must be 0 for the baseline.
    pub epsilon: f64,
    /// Divergence penalty coefficient; only the smoothing strategy uses it.
    pub alpha: f64,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Number of simulated devices; must divide `batch_size`.
    pub num_workers: usize,
    pub total_steps: usize,
    pub label_smoothing: f64,
    pub global_seed: u64,
    #[serde(default)]
    pub scale_mode: ScaleMode,
    /// Sample from the ball interior instead of its surface.
    #[serde(default)]
    pub ball_interior: bool,
    /// Run the per-step workers on OS threads; results are identical either way.
    #[serde(default)]
    pub parallel_workers: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        match self.strategy {
            Strategy::Baseline => {
                if self.epsilon != 0.0 || self.alpha != 0.0 {
                    return Err(Error::Config(
                        "baseline strategy requires epsilon = 0 and alpha = 0".into(),
                    ));
                }
            }
            Strategy::Rpr => {
                if self.alpha != 0.0 {
                    return Err(Error::Config("rpr strategy requires alpha = 0".into()));
                }
            }
            Strategy::Nrs => {}
        }
        if self.epsilon < 0.0 || self.alpha < 0.0 {
            return Err(Error::Config("epsilon and alpha must be >= 0".into()));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::Config(format!(
                "base_lr must be > 0, got {}",
                self.base_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label_smoothing must be in [0,1), got {}",
                self.label_smoothing
            )));
        }
        if self.batch_size == 0 || self.num_workers == 0 {
            return Err(Error::Config("batch_size and num_workers must be >= 1".into()));
        }
        if self.batch_size % self.num_workers != 0 {
            return Err(Error::Config(format!(
                "num_workers {} must divide batch_size {}",
                self.num_workers, self.batch_size
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the per-epoch log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Global step index at the end of the epoch (exclusive).
    pub step: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Mean loss terms over the epoch's steps.
    pub loss_total: f64,
    pub loss_empirical: f64,
    pub loss_divergence: f64,
    pub loss_neighbor: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Everything a finished run reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: TrainConfig,
    pub spec: MlpSpec,
    pub epochs: Vec<EpochRecord>,
    pub final_params: ParameterVector,
    /// Filled in by spectral analysis when requested.
    pub final_lambda_max: Option<f64>,
}

impl TrainingReport {
    pub fn final_train_acc(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.train_acc)
    }

    pub fn final_test_acc(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.test_acc)
    }

    pub fn best_test_acc(&self) -> f64 {
        self.epochs.iter().map(|e| e.test_acc).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("report serialization: {e}")))
    }

    pub fn from_json(s: &str) -> Result<TrainingReport> {
        serde_json::from_str(s).map_err(|e| Error::Data(format!("report parse: {e}")))
    }

    /// Per-epoch CSV with a fixed header.
    pub fn write_epoch_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "epoch,step,lr,loss_total,loss_empirical,loss_divergence,loss_neighbor,train_acc,test_acc"
        )?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.step,
                e.lr,
                e.loss_total,
                e.loss_empirical,
                e.loss_divergence,
                e.loss_neighbor,
                e.train_acc,
                e.test_acc
            )?;
        }
        Ok(())
    }
}

/// Split one batch into `m` contiguous equal shards, preserving order.
pub fn shard_batch(batch: &Batch, m: usize) -> Result<Vec<Batch>> {
    if m == 0 || batch.len() % m != 0 {
        return Err(Error::Config(format!(
            "shard_batch: {} workers do not divide batch of {}",
            m,
            batch.len()
        )));
    }
    let per = batch.len() / m;
    let d = batch.inputs.cols();
    let mut out = Vec::with_capacity(m);
    for w in 0..m {
        let rows = w * per..(w + 1) * per;
        let data = batch.inputs.data()[rows.start * d..rows.end * d].to_vec();
        out.push(Batch {
            inputs: Tensor::new(vec![per, d], data)?,
            labels: batch.labels[rows].to_vec(),
        });
    }
    Ok(out)
}

/// Arithmetic mean of worker gradients, summed in worker-id order.
pub fn reduce_gradients(grads: &[ParameterVector]) -> Result<ParameterVector> {
    let first = grads
        .first()
        .ok_or_else(|| Error::Contract("reduce_gradients: no gradients".into()))?;
    let dim = first.len();
    if grads.iter().any(|g| g.len() != dim) {
        return Err(Error::Contract(
            "reduce_gradients: gradient length mismatch".into(),
        ));
    }
    let mut acc = vec![0.0; dim];
    for g in grads {
        for (a, v) in acc.iter_mut().zip(g.as_slice()) {
            *a += v;
        }
    }
    let inv = 1.0 / grads.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(ParameterVector::new(acc))
}

/// Cosine schedule: `base * (1 + cos(pi*k/K)) / 2` for `0 <= k < K`.
pub fn cosine_lr(base: f64, step: usize, total_steps: usize) -> f64 {
    debug_assert!(step < total_steps, "cosine_lr: step {step} >= {total_steps}");
    let frac = step as f64 / total_steps as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// One SGD step with classic momentum and L2 weight decay coupled into the
/// gradient: `g' = g + wd*theta; v' = m*v + g'; theta' = theta - lr*v'`.
pub fn sgd_step(
    params: &ParameterVector,
    grad: &ParameterVector,
    momentum_state: &ParameterVector,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(ParameterVector, ParameterVector)> {
    if grad.len() != params.len() || momentum_state.len() != params.len() {
        return Err(Error::Contract(format!(
            "sgd_step: lengths {} / {} / {}",
            params.len(),
            grad.len(),
            momentum_state.len()
        )));
    }
    let mut new_v = Vec::with_capacity(params.len());
    let mut new_p = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let g = grad.as_slice()[i] + weight_decay * params.as_slice()[i];
        let v = momentum * momentum_state.as_slice()[i] + g;
        new_v.push(v);
        new_p.push(params.as_slice()[i] - lr * v);
    }
    Ok((ParameterVector::new(new_p), ParameterVector::new(new_v)))
}

fn shuffle_seed(global_seed: u64, epoch: usize) -> u64 {
    // distinct tag so batch order is decoupled from init and worker draws
    let mut r = worker_rng(global_seed ^ 0xBA7C_4_5EED, epoch as u64, 0);
    r.next_u64()
}

fn worker_gradient(
    spec: &MlpSpec,
    config: &TrainConfig,
    params: &ParameterVector,
    shard: &Batch,
    step: usize,
    worker_id: usize,
) -> Result<(LossBreakdown, ParameterVector)> {
    match config.strategy {
        Strategy::Baseline => {
            let (loss, grad) = empirical_loss_grad(
                spec,
                params,
                &shard.inputs,
                &shard.labels,
                config.label_smoothing,
            )?;
            Ok((LossBreakdown::empirical_only(loss), grad))
        }
        Strategy::Rpr | Strategy::Nrs => {
            let mut rng = worker_rng(config.global_seed, step as u64, worker_id as u64);
            let raw = if config.ball_interior {
                sample_perturbation_in_ball(params.len(), config.epsilon, &mut rng)?
            } else {
                sample_perturbation(params.len(), config.epsilon, &mut rng)?
            };
            let delta = apply_scale_mode(&raw, params, config.scale_mode)?;
            if config.strategy == Strategy::Rpr {
                let (loss, grad) = neighbor_loss_grad(
                    spec,
                    params,
                    &delta,
                    &shard.inputs,
                    &shard.labels,
                    config.label_smoothing,
                )?;
                Ok((LossBreakdown::neighbor_only(loss), grad))
            } else {
                nrs_loss(
                    spec,
                    params,
                    &delta,
                    &shard.inputs,
                    &shard.labels,
                    config.alpha,
                    config.label_smoothing,
                )
            }
        }
    }
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len() as f64;
    let mut acc = LossBreakdown {
        empirical: 0.0,
        divergence: 0.0,
        neighbor_empirical: 0.0,
        total: 0.0,
        alpha: parts.first().map_or(0.0, |p| p.alpha),
    };
    for p in parts {
        acc.empirical += p.empirical / n;
        acc.divergence += p.divergence / n;
        acc.neighbor_empirical += p.neighbor_empirical / n;
        acc.total += p.total / n;
    }
    acc
}

fn eval_accuracy(spec: &MlpSpec, params: &ParameterVector, ds: &Dataset) -> Result<f64> {
    let logits = forward(spec, params, &ds.inputs)?;
    accuracy(&logits, &ds.labels)
}

/// Run the full training loop and return the per-epoch report.
pub fn train(
    spec: &MlpSpec,
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainingReport> {
    config.validate()?;
    if train_set.dim() != spec.input_dim() || test_set.dim() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "train: dataset dim {} vs spec input dim {}",
            train_set.dim(),
            spec.input_dim()
        )));
    }
    if train_set.num_classes > spec.output_dim() || test_set.num_classes > spec.output_dim() {
        return Err(Error::Data(format!(
            "train: {} classes vs {} outputs",
            train_set.num_classes,
            spec.output_dim()
        )));
    }
    if config.batch_size > train_set.len() {
        return Err(Error::Config(format!(
            "train: batch_size {} exceeds training set of {}",
            config.batch_size,
            train_set.len()
        )));
    }

    let steps_per_epoch = train_set.len() / config.batch_size;
    let mut params = init_params(spec, config.global_seed);
    let mut velocity = ParameterVector::zeros(params.len());

    let mut epoch_batches: Vec<Batch> = Vec::new();
    let mut step_breakdowns: Vec<LossBreakdown> = Vec::new();
    let mut records: Vec<EpochRecord> = Vec::new();

    for step in 0..config.total_steps {
        let epoch = step / steps_per_epoch;
        let within = step % steps_per_epoch;
        if within == 0 {
            epoch_batches = batches(train_set, config.batch_size, shuffle_seed(config.global_seed, epoch))
                .map_err(|e| e.at_step(step))?;
        }
        let batch = &epoch_batches[within];
        let shards = shard_batch(batch, config.num_workers).map_err(|e| e.at_step(step))?;

        let worker_results: Vec<Result<(LossBreakdown, ParameterVector)>> =
            if config.parallel_workers {
                shards
                    .par_iter()
                    .enumerate()
                    .map(|(w, shard)| worker_gradient(spec, config, &params, shard, step, w))
                    .collect()
            } else {
                shards
                    .iter()
                    .enumerate()
                    .map(|(w, shard)| worker_gradient(spec, config, &params, shard, step, w))
                    .collect()
            };
        let mut breakdowns = Vec::with_capacity(config.num_workers);
        let mut grads = Vec::with_capacity(config.num_workers);
        for r in worker_results {
            let (b, g) = r.map_err(|e| e.at_step(step))?;
            breakdowns.push(b);
            grads.push(g);
        }

        let grad = reduce_gradients(&grads).map_err(|e| e.at_step(step))?;
        if !grad.all_finite() {
            return Err(Error::Numeric(format!("step {step}: non-finite gradient")));
        }
        let lr = cosine_lr(config.base_lr, step, config.total_steps);
        let (p, v) = sgd_step(
            &params,
            &grad,
            &velocity,
            lr,
            config.momentum,
            config.weight_decay,
        )
        .map_err(|e| e.at_step(step))?;
        params = p;
        velocity = v;
        step_breakdowns.push(mean_breakdown(&breakdowns));

        let epoch_done = within == steps_per_epoch - 1 || step == config.total_steps - 1;
        if epoch_done {
            let bd = mean_breakdown(&step_breakdowns);
            step_breakdowns.clear();
            records.push(EpochRecord {
                epoch,
                step: step + 1,
                lr,
                loss_total: bd.total,
                loss_empirical: bd.empirical,
                loss_divergence: bd.divergence,
                loss_neighbor: bd.neighbor_empirical,
                train_acc: eval_accuracy(spec, &params, train_set).map_err(|e| e.at_step(step))?,
                test_acc: eval_accuracy(spec, &params, test_set).map_err(|e| e.at_step(step))?,
            });
        }
    }

    Ok(TrainingReport {
        config: config.clone(),
        spec: spec.clone(),
        epochs: records,
        final_params: params,
        final_lambda_max: None,
    })
}

/// The norm guard for perturbation scaling: with freshly initialized weights
/// this is positive, so the divide mode never sees a zero norm in practice.
pub fn initial_norm(spec: &MlpSpec, seed: u64) -> f64 {
    l2_norm(&init_params(spec, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_two_moons;
    use crate::network::Activation;

    fn toy_config(strategy: Strategy) -> TrainConfig {
        TrainConfig {
            strategy,
            epsilon: match strategy {
                Strategy::Baseline => 0.0,
                _ => 0.1,
            },
            alpha: match strategy {
                Strategy::Nrs => 1.0,
                _ => 0.0,
            },
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 16,
            num_workers: 2,
            total_steps: 8,
            label_smoothing: 0.0,
            global_seed: 42,
            scale_mode: ScaleMode::Divide,
            ball_interior: false,
            parallel_workers: false,
        }
    }

    fn toy_spec() -> MlpSpec {
        MlpSpec::new(vec![2, 8, 2], Activation::Relu).unwrap()
    }

    #[test]
    fn shard_single_worker_is_whole_batch() {
        let ds = gen_two_moons(16, 0.1, 1).unwrap();
        let b = &batches(&ds, 8, 0).unwrap()[0];
        let shards = shard_batch(b, 1).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].inputs.data(), b.inputs.data());
        assert_eq!(shards[0].labels, b.labels);
    }

    #[test]
    fn shard_sizes_and_order() {
        let ds = gen_two_moons(8, 0.1, 2).unwrap();
        let b = &batches(&ds, 8, 0).unwrap()[0];
        let shards = shard_batch(b, 4).unwrap();
        assert_eq!(shards.len(), 4);
        assert!(shards.iter().all(|s| s.len() == 2));
        // concatenation restores the batch
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for s in &shards {
            data.extend_from_slice(s.inputs.data());
            labels.extend_from_slice(&s.labels);
        }
        assert_eq!(data, b.inputs.data());
        assert_eq!(labels, b.labels);
    }

    #[test]
    fn shard_round_trip_random_case() {
        let ds = gen_two_moons(64, 0.2, 3).unwrap();
        let b = &batches(&ds, 64, 9).unwrap()[0];
        let shards = shard_batch(b, 8).unwrap();
        let mut data = Vec::new();
        for s in &shards {
            data.extend_from_slice(s.inputs.data());
        }
        assert_eq!(data, b.inputs.data());
    }

    #[test]
    fn shard_rejects_uneven_split() {
        let ds = gen_two_moons(10, 0.1, 4).unwrap();
        let b = &batches(&ds, 10, 0).unwrap()[0];
        assert!(matches!(shard_batch(b, 3), Err(Error::Config(_))));
    }

    #[test]
    fn reduce_identical_vectors_is_identity() {
        let g = ParameterVector::new(vec![1.0, -2.0, 3.0]);
        let out = reduce_gradients(&[g.clone(), g.clone(), g.clone()]).unwrap();
        assert_eq!(out.as_slice(), g.as_slice());
    }

    #[test]
    fn reduce_opposite_vectors_is_zero() {
        let a = ParameterVector::new(vec![1.0, -2.0]);
        let b = ParameterVector::new(vec![-1.0, 2.0]);
        let out = reduce_gradients(&[a, b]).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn reduce_matches_pairwise_summation_oracle() {
        let mut rng = crate::perturb::RngStream::from_seed(12);
        let grads: Vec<ParameterVector> = (0..8)
            .map(|_| ParameterVector::new((0..100).map(|_| rng.next_gaussian()).collect()))
            .collect();
        // pairwise (tree) summation oracle
        fn pairwise(vals: &[f64]) -> f64 {
            match vals.len() {
                1 => vals[0],
                n => pairwise(&vals[..n / 2]) + pairwise(&vals[n / 2..]),
            }
        }
        let got = reduce_gradients(&grads).unwrap();
        for i in 0..100 {
            let col: Vec<f64> = grads.iter().map(|g| g.as_slice()[i]).collect();
            let want = pairwise(&col) / 8.0;
            assert!((got.as_slice()[i] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn reduce_rejects_mismatched_lengths() {
        let a = ParameterVector::zeros(3);
        let b = ParameterVector::zeros(4);
        assert!(matches!(
            reduce_gradients(&[a, b]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.3, 0, 100), 0.3);
        assert!((cosine_lr(0.3, 50, 100) - 0.15).abs() < 1e-15);
        // evaluated independently in high precision beforehand
        assert!((cosine_lr(0.2, 99, 100) - 4.934_396_342_684_43e-5).abs() < 1e-15);
    }

    #[test]
    fn sgd_plain_step_is_literal_update() {
        let p = ParameterVector::new(vec![1.0, -1.0]);
        let g = ParameterVector::new(vec![0.5, 0.25]);
        let v = ParameterVector::zeros(2);
        let (p2, _) = sgd_step(&p, &g, &v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p2.as_slice(), &[1.0 - 0.05, -1.0 - 0.025]);
    }

    #[test]
    fn sgd_zero_grad_keeps_params() {
        let p = ParameterVector::new(vec![2.0, 3.0]);
        let g = ParameterVector::zeros(2);
        let v = ParameterVector::zeros(2);
        let (p2, v2) = sgd_step(&p, &g, &v, 0.5, 0.9, 0.0).unwrap();
        assert_eq!(p2.as_slice(), p.as_slice());
        assert_eq!(v2.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn sgd_two_hand_stepped_iterations() {
        // theta=1, grad always 2, lr=0.1, momentum=0.9:
        // v1 = 2,   theta1 = 1 - 0.2  = 0.8
        // v2 = 3.8, theta2 = 0.8 - 0.38 = 0.42
        let g = ParameterVector::new(vec![2.0]);
        let (p1, v1) = sgd_step(
            &ParameterVector::new(vec![1.0]),
            &g,
            &ParameterVector::zeros(1),
            0.1,
            0.9,
            0.0,
        )
        .unwrap();
        assert!((p1.as_slice()[0] - 0.8).abs() < 1e-15);
        assert!((v1.as_slice()[0] - 2.0).abs() < 1e-15);
        let (p2, v2) = sgd_step(&p1, &g, &v1, 0.1, 0.9, 0.0).unwrap();
        assert!((v2.as_slice()[0] - 3.8).abs() < 1e-15);
        assert!((p2.as_slice()[0] - 0.42).abs() < 1e-15);
    }

    #[test]
    fn sgd_weight_decay_couples_into_gradient() {
        let p = ParameterVector::new(vec![10.0]);
        let g = ParameterVector::zeros(1);
        let v = ParameterVector::zeros(1);
        let (p2, _) = sgd_step(&p, &g, &v, 0.1, 0.0, 0.01).unwrap();
        // g' = 0 + 0.01*10 = 0.1; theta' = 10 - 0.1*0.1
        assert!((p2.as_slice()[0] - 9.99).abs() < 1e-12);
    }

    #[test]
    fn baseline_sharding_matches_single_worker() {
        let ds = gen_two_moons(64, 0.2, 5).unwrap();
        let test = gen_two_moons(32, 0.2, 6).unwrap();
        let spec = toy_spec();
        let mut c1 = toy_config(Strategy::Baseline);
        c1.num_workers = 1;
        c1.total_steps = 20;
        let mut c4 = c1.clone();
        c4.num_workers = 4;
        let r1 = train(&spec, &c1, &ds, &test).unwrap();
        let r4 = train(&spec, &c4, &ds, &test).unwrap();
        for (a, b) in r1
            .final_params
            .as_slice()
            .iter()
            .zip(r4.final_params.as_slice())
        {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn nrs_with_zero_epsilon_equals_baseline_at_double_lr() {
        let ds = gen_two_moons(32, 0.2, 7).unwrap();
        let test = gen_two_moons(16, 0.2, 8).unwrap();
        let spec = toy_spec();

        let mut nrs = toy_config(Strategy::Nrs);
        nrs.epsilon = 0.0;
        nrs.alpha = 1.0;
        nrs.total_steps = 10;
        nrs.batch_size = 16;
        nrs.momentum = 0.9;
        nrs.weight_decay = 0.0;

        let mut doubled = toy_config(Strategy::Baseline);
        doubled.base_lr = 2.0 * nrs.base_lr;
        doubled.total_steps = 10;
        doubled.batch_size = 16;
        doubled.momentum = 0.9;
        doubled.weight_decay = 0.0;

        let r_nrs = train(&spec, &nrs, &ds, &test).unwrap();
        let r_dbl = train(&spec, &doubled, &ds, &test).unwrap();
        for (a, b) in r_nrs
            .final_params
            .as_slice()
            .iter()
            .zip(r_dbl.final_params.as_slice())
        {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn identical_config_and_seed_is_bit_identical() {
        let ds = gen_two_moons(32, 0.25, 9).unwrap();
        let test = gen_two_moons(16, 0.25, 10).unwrap();
        let spec = toy_spec();
        let config = toy_config(Strategy::Nrs);
        let a = train(&spec, &config, &ds, &test).unwrap();
        let b = train(&spec, &config, &ds, &test).unwrap();
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.epochs.len(), b.epochs.len());
        for (x, y) in a.epochs.iter().zip(&b.epochs) {
            assert_eq!(x.loss_total.to_bits(), y.loss_total.to_bits());
            assert_eq!(x.test_acc.to_bits(), y.test_acc.to_bits());
        }
    }

    #[test]
    fn parallel_workers_do_not_change_the_result() {
        let ds = gen_two_moons(32, 0.25, 11).unwrap();
        let test = gen_two_moons(16, 0.25, 12).unwrap();
        let spec = toy_spec();
        let mut serial = toy_config(Strategy::Nrs);
        serial.num_workers = 4;
        serial.batch_size = 16;
        let mut parallel = serial.clone();
        parallel.parallel_workers = true;
        let a = train(&spec, &serial, &ds, &test).unwrap();
        let b = train(&spec, &parallel, &ds, &test).unwrap();
        assert_eq!(a.final_params, b.final_params);
    }

    #[test]
    fn rpr_gradient_at_zero_delta_equals_baseline_exactly() {
        let ds = gen_two_moons(16, 0.2, 13).unwrap();
        let spec = toy_spec();
        let params = init_params(&spec, 0);
        let b = &batches(&ds, 16, 0).unwrap()[0];
        let delta = ParameterVector::zeros(params.len());
        let (_, g_rpr) =
            neighbor_loss_grad(&spec, &params, &delta, &b.inputs, &b.labels, 0.0).unwrap();
        let (_, g_base) =
            empirical_loss_grad(&spec, &params, &b.inputs, &b.labels, 0.0).unwrap();
        assert_eq!(g_rpr.as_slice(), g_base.as_slice());
    }

    #[test]
    fn logged_breakdowns_satisfy_objective_identities() {
        let ds = gen_two_moons(32, 0.25, 14).unwrap();
        let test = gen_two_moons(16, 0.25, 15).unwrap();
        let spec = toy_spec();
        let mut config = toy_config(Strategy::Nrs);
        config.alpha = 2.0;
        config.total_steps = 6;
        let r = train(&spec, &config, &ds, &test).unwrap();
        for e in &r.epochs {
            assert!(e.loss_divergence >= 0.0);
            assert!(e.loss_total >= e.loss_empirical + e.loss_neighbor - 1e-12);
        }
    }

    #[test]
    fn config_validation_rules() {
        let mut c = toy_config(Strategy::Baseline);
        c.epsilon = 0.1;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = toy_config(Strategy::Rpr);
        c.alpha = 1.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = toy_config(Strategy::Nrs);
        c.batch_size = 10;
        c.num_workers = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn report_round_trips_through_json() {
        let ds = gen_two_moons(16, 0.2, 16).unwrap();
        let test = gen_two_moons(16, 0.2, 17).unwrap();
        let spec = toy_spec();
        let mut config = toy_config(Strategy::Baseline);
        config.total_steps = 2;
        config.batch_size = 8;
        let r = train(&spec, &config, &ds, &test).unwrap();
        let json = r.to_json().unwrap();
        let back = TrainingReport::from_json(&json).unwrap();
        assert_eq!(back.config, r.config);
        assert_eq!(back.final_params, r.final_params);
        assert_eq!(back.epochs.len(), r.epochs.len());
    }
}
