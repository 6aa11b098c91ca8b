//! Minibatch residual training: per-epoch sampling, the squared-residual
//! loss, Adam updates, and the staged error-correction driver.
//!
//! Each epoch draws one fresh interior batch and one fresh boundary batch,
//! takes one gradient step, and logs losses plus the relative error on a
//! fixed evaluation set. Stages are trained in sequence; once a stage
//! finishes its parameters are frozen and later stages only read it.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{loss_param_gradient, LossEvaluator, ParameterGradient};
use crate::error::{Result, SolverError};
use crate::jet::Jet;
use crate::network::{Network, NetworkConfig};
use crate::problems::{
    boundary_target, CorrectionStack, Nonlinearity, PdeProblem, ScalarField, StackEntry,
};
use crate::sampling::{sample_boundary, sample_interior, Region, SampleBatch};

/// Generator stream reserved for the fixed relative-error evaluation set.
const EVAL_SET_STREAM: u64 = u64::MAX;

/// All training hyperparameters for one run.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Interior minibatch size M.
    pub interior_batch: usize,
    /// Boundary minibatch size N; the sampling order requires M > N ≥ 1.
    pub boundary_batch: usize,
    /// Gradient steps per stage (one fresh minibatch per step).
    pub epochs: usize,
    /// Learning rate η.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Number of correction stages K (total stages trained is K+1).
    pub correction_orders: usize,
    /// Size of the fixed evaluation set S for relative error.
    pub eval_points: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            interior_batch: 256,
            boundary_batch: 64,
            epochs: 1 << 10,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            correction_orders: 0,
            eval_points: 1 << 15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.boundary_batch < 1 || self.interior_batch <= self.boundary_batch {
            return Err(SolverError::InvalidConfig(format!(
                "batch sizes must satisfy M > N ≥ 1, got M={} N={}",
                self.interior_batch, self.boundary_batch
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(SolverError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(SolverError::InvalidConfig(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(SolverError::InvalidConfig(format!(
                "adam epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.eval_points == 0 {
            return Err(SolverError::InvalidConfig(
                "evaluation set must contain at least one point".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch record emitted by every stage.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: usize,
    pub loss_interior: f64,
    pub loss_boundary: f64,
    pub loss_total: f64,
    pub relative_error: f64,
    pub wall_ms: u64,
}

impl EpochLog {
    /// Field equality ignoring wall-clock time, the one nondeterministic entry.
    pub fn same_values(&self, other: &EpochLog) -> bool {
        self.epoch == other.epoch
            && self.stage == other.stage
            && self.loss_interior == other.loss_interior
            && self.loss_boundary == other.loss_boundary
            && self.loss_total == other.loss_total
            && self.relative_error == other.relative_error
    }
}

/// Adam moment accumulators, shape-congruent with the network parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    first: ParameterGradient,
    second: ParameterGradient,
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    pub fn new(net: &Network, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            first: ParameterGradient::zeros_like(net),
            second: ParameterGradient::zeros_like(net),
            step: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update:
/// m ← β₁m + (1−β₁)g, v ← β₂v + (1−β₂)g², θ ← θ − η·m̂/(√v̂ + ε).
pub fn adam_step(state: &mut AdamState, net: &mut Network, grad: &ParameterGradient, eta: f64) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let g = &grad.layers[l];
        let m = &mut state.first.layers[l];
        let v = &mut state.second.layers[l];
        update_slice(
            layer.weights.data_mut(),
            g.weights.data(),
            m.weights.data_mut(),
            v.weights.data_mut(),
            state.beta1,
            state.beta2,
            state.epsilon,
            eta,
            bc1,
            bc2,
        );
        update_slice(
            &mut layer.biases,
            &g.biases,
            &mut m.biases,
            &mut v.biases,
            state.beta1,
            state.beta2,
            state.epsilon,
            eta,
            bc1,
            bc2,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn update_slice(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    eta: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= eta * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// Interior loss Σ_i w_i·(F_k at x_i)² as a function of the candidate network.
/// The frozen-stack contribution per point is precomputed: `shift` holds
/// ∇²N^(k−1)(x) − f(x) and `stack_value` holds N^(k−1)(x).
pub(crate) struct InteriorResidualLoss {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    shift: Vec<f64>,
    stack_value: Vec<f64>,
    nonlinear: Nonlinearity,
}

impl InteriorResidualLoss {
    pub(crate) fn for_stack(stack: &CorrectionStack, points: Vec<Vec<f64>>) -> Result<Self> {
        let w = 1.0 / points.len() as f64;
        let weights = vec![w; points.len()];
        Self::for_stack_weighted(stack, points, weights)
    }

    pub(crate) fn for_stack_weighted(
        stack: &CorrectionStack,
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let mut shift = Vec::with_capacity(points.len());
        let mut stack_value = Vec::with_capacity(points.len());
        for x in &points {
            let (sv, slap) = stack.value_and_laplacian(x)?;
            shift.push(slap - stack.problem.source(x));
            stack_value.push(sv);
        }
        Ok(InteriorResidualLoss {
            points,
            weights,
            shift,
            stack_value,
            nonlinear: stack.problem.nonlinearity(),
        })
    }

    /// Stage-0 variant straight from a problem (no frozen stages).
    pub(crate) fn for_problem(
        problem: &PdeProblem,
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    ) -> Self {
        let shift = points.iter().map(|x| -problem.source(x)).collect();
        let stack_value = vec![0.0; points.len()];
        InteriorResidualLoss {
            points,
            weights,
            shift,
            stack_value,
            nonlinear: problem.nonlinearity(),
        }
    }
}

impl LossEvaluator for InteriorResidualLoss {
    fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    fn contribution(&self, index: usize, output: &Jet) -> (f64, Jet) {
        let total_value = self.stack_value[index] + output.value;
        let r = self.shift[index] + output.laplacian() + self.nonlinear.apply(total_value);
        let w = self.weights[index];
        let c = w * r * r;
        let mut adj = Jet::constant(output.dim(), 0.0);
        let dr = 2.0 * w * r;
        adj.value = dr * self.nonlinear.derivative(total_value);
        for s in adj.second.iter_mut() {
            *s = dr;
        }
        (c, adj)
    }
}

/// Boundary loss Σ_j w_j·(N_k(y_j) − target_j)².
pub(crate) struct BoundaryFitLoss {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    targets: Vec<f64>,
}

impl BoundaryFitLoss {
    pub(crate) fn for_stack(stack: &CorrectionStack, points: Vec<Vec<f64>>) -> Result<Self> {
        let w = 1.0 / points.len() as f64;
        let weights = vec![w; points.len()];
        Self::for_stack_weighted(stack, points, weights)
    }

    pub(crate) fn for_stack_weighted(
        stack: &CorrectionStack,
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let mut targets = Vec::with_capacity(points.len());
        for y in &points {
            targets.push(boundary_target(stack, y)?);
        }
        Ok(BoundaryFitLoss {
            points,
            weights,
            targets,
        })
    }

    /// Stage-0 variant straight from a problem: targets are g(y).
    pub(crate) fn for_problem(
        problem: &PdeProblem,
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    ) -> Self {
        let targets = points.iter().map(|y| problem.boundary(y)).collect();
        BoundaryFitLoss {
            points,
            weights,
            targets,
        }
    }
}

impl LossEvaluator for BoundaryFitLoss {
    fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    fn contribution(&self, index: usize, output: &Jet) -> (f64, Jet) {
        let diff = output.value - self.targets[index];
        let w = self.weights[index];
        let mut adj = Jet::constant(output.dim(), 0.0);
        adj.value = 2.0 * w * diff;
        (w * diff * diff, adj)
    }
}

/// Interior and boundary loss terms of a candidate over sampled batches.
pub fn minibatch_loss(
    stack: &CorrectionStack,
    candidate: &dyn ScalarField,
    interior: &SampleBatch,
    boundary: &SampleBatch,
) -> Result<(f64, f64)> {
    if interior.region != Region::Interior || boundary.region != Region::Boundary {
        return Err(SolverError::InvalidInput(
            "minibatch_loss expects (interior, boundary) batches in that order".into(),
        ));
    }
    if interior.is_empty() || boundary.is_empty() {
        return Err(SolverError::InvalidInput(
            "minibatch_loss requires nonempty batches".into(),
        ));
    }
    let mut interior_term = 0.0;
    for (i, x) in interior.points.iter().enumerate() {
        let (sv, slap) = stack.value_and_laplacian(x)?;
        let (cv, clap) = candidate.value_and_laplacian(x)?;
        let r = slap + clap + stack.problem.nonlinearity().apply(sv + cv)
            - stack.problem.source(x);
        if !r.is_finite() {
            return Err(SolverError::NonFiniteLoss { batch_index: i });
        }
        interior_term += r * r;
    }
    interior_term /= interior.len() as f64;

    let mut boundary_term = 0.0;
    for (j, y) in boundary.points.iter().enumerate() {
        let diff = candidate.value(y)? - boundary_target(stack, y)?;
        if !diff.is_finite() {
            return Err(SolverError::NonFiniteLoss { batch_index: j });
        }
        boundary_term += diff * diff;
    }
    boundary_term /= boundary.len() as f64;
    Ok((interior_term, boundary_term))
}

/// Fixed evaluation set S with cached exact values and the frozen-prefix sum,
/// so per-epoch relative error costs one candidate evaluation per point.
pub struct EvalContext {
    points: Vec<Vec<f64>>,
    phi: Vec<f64>,
    phi_norm_sq: f64,
    prefix: Vec<f64>,
}

impl EvalContext {
    /// Sample S once for a run: `count` uniform interior points from a
    /// dedicated generator stream of `seed`.
    pub fn for_problem(problem: &PdeProblem, seed: u64, count: usize) -> Result<Self> {
        let exact = problem.exact_solution().ok_or_else(|| {
            SolverError::DegenerateMetric(format!(
                "problem {} has no exact solution; relative error is undefined",
                problem.name()
            ))
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(EVAL_SET_STREAM);
        let batch = sample_interior(problem.domain(), count, &mut rng)?;
        let mut phi = Vec::with_capacity(count);
        let mut norm = 0.0;
        for x in &batch.points {
            let v = exact.value(x)?;
            phi.push(v);
            norm += v * v;
        }
        if norm <= 0.0 {
            return Err(SolverError::DegenerateMetric(
                "exact solution vanishes on the evaluation set".into(),
            ));
        }
        Ok(EvalContext {
            points: batch.points,
            phi,
            phi_norm_sq: norm,
            prefix: vec![0.0; count],
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Relative error of (frozen prefix + candidate) against the exact
    /// solution: Σ(φ − N)² / Σφ².
    pub fn relative_error_of(&self, candidate: &dyn ScalarField) -> Result<f64> {
        let mut num = 0.0;
        for (i, x) in self.points.iter().enumerate() {
            let diff = self.phi[i] - self.prefix[i] - candidate.value(x)?;
            num += diff * diff;
        }
        Ok(num / self.phi_norm_sq)
    }

    /// Relative error of the frozen prefix alone.
    pub fn relative_error_of_prefix(&self) -> f64 {
        let mut num = 0.0;
        for (p, phi) in self.prefix.iter().zip(&self.phi) {
            let diff = phi - p;
            num += diff * diff;
        }
        num / self.phi_norm_sq
    }

    /// Fold a newly frozen stage into the prefix sum.
    pub fn absorb(&mut self, entry: &StackEntry) -> Result<()> {
        for (i, x) in self.points.iter().enumerate() {
            self.prefix[i] += entry.field().value(x)?;
        }
        Ok(())
    }
}

/// Seed for the stage-k network; stage 0 keeps the run seed itself.
fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed ^ (stage as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Train the next correction stage against the given frozen stack.
/// Stage index is `stack.len()`; the returned network is not yet pushed.
pub fn train_stage(
    stack: &CorrectionStack,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    eval: &EvalContext,
) -> Result<(Network, Vec<EpochLog>)> {
    cfg.validate()?;
    let stage = stack.len();
    let domain = stack.problem.domain().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stage as u64);

    let mut net = net_cfg.build(stage_seed(cfg.seed, stage))?;
    let mut adam = AdamState::new(&net, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut logs = Vec::new();

    let wrap = |epoch: usize, e: SolverError| SolverError::Diverged {
        stage,
        epoch,
        detail: e.to_string(),
    };

    if cfg.epochs == 0 {
        // Evaluation-only entry for the freshly initialized network.
        let start = Instant::now();
        let interior = sample_interior(&domain, cfg.interior_batch, &mut rng)?;
        let boundary = sample_boundary(&domain, cfg.boundary_batch, &mut rng)?;
        let (li, lb) =
            minibatch_loss(stack, &net, &interior, &boundary).map_err(|e| wrap(0, e))?;
        let rel = eval.relative_error_of(&net)?;
        logs.push(EpochLog {
            epoch: 0,
            stage,
            loss_interior: li,
            loss_boundary: lb,
            loss_total: li + lb,
            relative_error: rel,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        return Ok((net, logs));
    }

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let interior = sample_interior(&domain, cfg.interior_batch, &mut rng)?;
        let boundary = sample_boundary(&domain, cfg.boundary_batch, &mut rng)?;

        let interior_loss = InteriorResidualLoss::for_stack(stack, interior.points)
            .map_err(|e| wrap(epoch, e))?;
        let boundary_loss =
            BoundaryFitLoss::for_stack(stack, boundary.points).map_err(|e| wrap(epoch, e))?;

        let (li, mut grad) =
            loss_param_gradient(&interior_loss, &net).map_err(|e| wrap(epoch, e))?;
        let (lb, gb) = loss_param_gradient(&boundary_loss, &net).map_err(|e| wrap(epoch, e))?;
        grad.add_assign(&gb);

        adam_step(&mut adam, &mut net, &grad, cfg.learning_rate);

        let rel = eval.relative_error_of(&net)?;
        let total = li + lb;
        if !total.is_finite() || !rel.is_finite() {
            return Err(wrap(epoch, SolverError::NonFiniteGradient));
        }
        logs.push(EpochLog {
            epoch,
            stage,
            loss_interior: li,
            loss_boundary: lb,
            loss_total: total,
            relative_error: rel,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok((net, logs))
}

/// A stage that failed mid-run, carrying everything trained so far.
#[derive(Debug, Error)]
#[error("stage {stage} failed: {source}")]
pub struct StageFailure {
    pub stage: usize,
    #[source]
    pub source: SolverError,
    pub partial: CorrectionStack,
}

/// Train stages 0…K in sequence, freezing each before the next. The solution
/// estimate is the sum of all stage networks.
pub fn run_error_correction(
    problem: &PdeProblem,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
) -> std::result::Result<CorrectionStack, Box<StageFailure>> {
    let mut stack = CorrectionStack::new(problem.clone());
    stack.seed = cfg.seed;
    let fail = |stage: usize, source: SolverError, partial: &CorrectionStack| {
        Box::new(StageFailure {
            stage,
            source,
            partial: partial.clone(),
        })
    };

    if let Err(e) = cfg.validate() {
        return Err(fail(0, e, &stack));
    }
    let mut eval = match EvalContext::for_problem(problem, cfg.seed, cfg.eval_points) {
        Ok(ctx) => ctx,
        Err(e) => return Err(fail(0, e, &stack)),
    };

    for stage in 0..=cfg.correction_orders {
        let (net, logs) = match train_stage(&stack, net_cfg, cfg, &eval) {
            Ok(out) => out,
            Err(e) => return Err(fail(stage, e, &stack)),
        };
        let entry = StackEntry::Network(net);
        if let Err(e) = eval.absorb(&entry) {
            return Err(fail(stage, e, &stack));
        }
        if let Err(e) = stack.push(entry, logs) {
            return Err(fail(stage, e, &stack));
        }
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::Jet;
    use crate::network::init_siren;
    use crate::problems::{builtin_problem, manufactured_sine_1d, manufactured_sine_2d, AnalyticField};

    fn tiny_net_cfg(dim: usize) -> NetworkConfig {
        NetworkConfig {
            input_dim: dim,
            hidden_layers: 2,
            width: 16,
            omega0: 30.0,
            fourier: None,
        }
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        // With a uniform gradient, bias correction gives m̂ = g and v̂ = g²,
        // so the first update is −η·g/(|g| + ε) ≈ −η.
        let mut net = init_siren(1, 1, 4, 30.0, 0).unwrap();
        let before = net.clone();
        let mut grad = ParameterGradient::zeros_like(&net);
        for l in grad.layers.iter_mut() {
            for v in l.weights.data_mut() {
                *v = 0.5;
            }
            for v in l.biases.iter_mut() {
                *v = 0.5;
            }
        }
        let mut state = AdamState::new(&net, 0.9, 0.999, 1e-8);
        adam_step(&mut state, &mut net, &grad, 1e-3);
        for (l, layer) in net.layers.iter().enumerate() {
            for (a, b) in layer
                .weights
                .data()
                .iter()
                .zip(before.layers[l].weights.data())
            {
                assert!(((b - a) - 1e-3).abs() < 1e-10, "update {}", b - a);
            }
        }
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut net = init_siren(1, 1, 4, 30.0, 1).unwrap();
        let before = net.clone();
        let grad = ParameterGradient::zeros_like(&net);
        let mut state = AdamState::new(&net, 0.9, 0.999, 1e-8);
        adam_step(&mut state, &mut net, &grad, 1e-2);
        assert_eq!(net, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_opposes_gradient_sign() {
        let mut net = init_siren(1, 1, 3, 30.0, 2).unwrap();
        let before = net.clone();
        let mut grad = ParameterGradient::zeros_like(&net);
        let signs: Vec<f64> = (0..grad.len()).map(|i| if i % 2 == 0 { 1.0 } else { -1.5 }).collect();
        let mut idx = 0;
        for l in grad.layers.iter_mut() {
            for v in l.weights.data_mut() {
                *v = signs[idx];
                idx += 1;
            }
            for v in l.biases.iter_mut() {
                *v = signs[idx];
                idx += 1;
            }
        }
        let mut state = AdamState::new(&net, 0.9, 0.999, 1e-8);
        adam_step(&mut state, &mut net, &grad, 1e-3);
        let flat_before: Vec<f64> = before
            .layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(l.biases.iter()).copied())
            .collect();
        let flat_after: Vec<f64> = net
            .layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(l.biases.iter()).copied())
            .collect();
        for ((b, a), g) in flat_before.iter().zip(&flat_after).zip(&signs) {
            assert!((a - b) * g < 0.0, "step must oppose the gradient sign");
        }
    }

    #[test]
    fn solved_stack_with_zero_candidate_has_zero_loss() {
        let p = manufactured_sine_2d(1.0);
        let mut stack = CorrectionStack::new(p.clone());
        stack
            .push(
                StackEntry::Closed {
                    name: p.name().to_string(),
                    field: p.exact_solution().unwrap().clone(),
                },
                Vec::new(),
            )
            .unwrap();
        let zero = AnalyticField::new(2, |x| Ok(Jet::constant(x.len(), 0.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let interior = sample_interior(p.domain(), 64, &mut rng).unwrap();
        let boundary = sample_boundary(p.domain(), 16, &mut rng).unwrap();
        let (li, lb) = minibatch_loss(&stack, &zero, &interior, &boundary).unwrap();
        assert!(li < 1e-20, "interior {li}");
        assert!(lb < 1e-20, "boundary {lb}");
    }

    #[test]
    fn zero_candidate_base_loss_is_mean_squared_source() {
        let p = builtin_problem("p1_3d").unwrap();
        let stack = CorrectionStack::new(p.clone());
        let zero = AnalyticField::new(3, |x| Ok(Jet::constant(x.len(), 0.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let interior = sample_interior(p.domain(), 128, &mut rng).unwrap();
        let boundary = sample_boundary(p.domain(), 32, &mut rng).unwrap();
        let (li, lb) = minibatch_loss(&stack, &zero, &interior, &boundary).unwrap();
        let expected: f64 = interior
            .points
            .iter()
            .map(|x| {
                let f = p.source(x);
                f * f
            })
            .sum::<f64>()
            / 128.0;
        assert!((li - expected).abs() < 1e-12 * expected.max(1.0));
        assert_eq!(lb, 0.0); // g ≡ 0 and candidate ≡ 0
    }

    #[test]
    fn residual_homogeneity_under_output_scaling() {
        // With f = 0, g = 0 and an empty stack, doubling the output layer
        // doubles every residual, so both loss terms scale by 4.
        let p = PdeProblem::new(
            "homogeneous",
            crate::problems::Domain::symmetric_pi(2),
            Nonlinearity::None,
            |_| 0.0,
            |_| 0.0,
            None,
            None,
        );
        let stack = CorrectionStack::new(p.clone());
        let net = init_siren(2, 2, 8, 30.0, 5).unwrap();
        let mut doubled = net.clone();
        let last = doubled.layers.len() - 1;
        for v in doubled.layers[last].weights.data_mut() {
            *v *= 2.0;
        }
        for v in doubled.layers[last].biases.iter_mut() {
            *v *= 2.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let interior = sample_interior(p.domain(), 64, &mut rng).unwrap();
        let boundary = sample_boundary(p.domain(), 16, &mut rng).unwrap();
        let (li1, lb1) = minibatch_loss(&stack, &net, &interior, &boundary).unwrap();
        let (li2, lb2) = minibatch_loss(&stack, &doubled, &interior, &boundary).unwrap();
        assert!((li2 - 4.0 * li1).abs() < 1e-10 * li1.max(1.0));
        assert!((lb2 - 4.0 * lb1).abs() < 1e-10 * lb1.max(1.0));
    }

    #[test]
    fn minibatch_rejects_swapped_regions() {
        let p = manufactured_sine_1d(1.0);
        let stack = CorrectionStack::new(p.clone());
        let zero = AnalyticField::new(1, |x| Ok(Jet::constant(x.len(), 0.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let interior = sample_interior(p.domain(), 8, &mut rng).unwrap();
        let boundary = sample_boundary(p.domain(), 4, &mut rng).unwrap();
        assert_eq!(
            minibatch_loss(&stack, &zero, &boundary, &interior)
                .unwrap_err()
                .tag(),
            "invalid-input"
        );
    }

    #[test]
    fn zero_epoch_stage_returns_initial_network() {
        let p = manufactured_sine_1d(1.0);
        let stack = CorrectionStack::new(p.clone());
        let cfg = TrainConfig {
            epochs: 0,
            interior_batch: 16,
            boundary_batch: 4,
            eval_points: 64,
            seed: 11,
            ..TrainConfig::default()
        };
        let eval = EvalContext::for_problem(&p, cfg.seed, cfg.eval_points).unwrap();
        let (net, logs) = train_stage(&stack, &tiny_net_cfg(1), &cfg, &eval).unwrap();
        assert_eq!(logs.len(), 1);
        assert_eq!(logs[0].epoch, 0);
        assert_eq!(logs[0].stage, 0);
        assert!(logs[0].loss_total > 0.0);
        // The network is exactly the seeded initialization.
        let fresh = tiny_net_cfg(1).build(stage_seed(cfg.seed, 0)).unwrap();
        assert_eq!(net, fresh);
    }

    #[test]
    fn training_descends_on_easy_1d_problem() {
        let p = manufactured_sine_1d(1.0);
        let stack = CorrectionStack::new(p.clone());
        let cfg = TrainConfig {
            epochs: 1 << 9,
            interior_batch: 32,
            boundary_batch: 8,
            learning_rate: 3e-4,
            eval_points: 256,
            seed: 13,
            ..TrainConfig::default()
        };
        let net_cfg = NetworkConfig {
            input_dim: 1,
            hidden_layers: 2,
            width: 32,
            omega0: 30.0,
            fourier: None,
        };
        let eval = EvalContext::for_problem(&p, cfg.seed, cfg.eval_points).unwrap();
        let (_, logs) = train_stage(&stack, &net_cfg, &cfg, &eval).unwrap();
        let first = logs.first().unwrap().loss_total;
        let last = logs.last().unwrap().loss_total;
        assert!(
            last < first,
            "training failed to descend: {first} -> {last}"
        );
    }

    #[test]
    fn identical_seed_reproduces_run_exactly() {
        let p = manufactured_sine_2d(1.0);
        let net_cfg = tiny_net_cfg(2);
        let cfg = TrainConfig {
            epochs: 24,
            interior_batch: 16,
            boundary_batch: 4,
            eval_points: 64,
            seed: 17,
            ..TrainConfig::default()
        };
        let run = || {
            let stack = CorrectionStack::new(p.clone());
            let eval = EvalContext::for_problem(&p, cfg.seed, cfg.eval_points).unwrap();
            train_stage(&stack, &net_cfg, &cfg, &eval).unwrap()
        };
        let (net_a, logs_a) = run();
        let (net_b, logs_b) = run();
        assert_eq!(net_a, net_b);
        assert_eq!(logs_a.len(), logs_b.len());
        for (a, b) in logs_a.iter().zip(&logs_b) {
            assert!(a.same_values(b), "log mismatch at epoch {}", a.epoch);
        }
    }

    #[test]
    fn log_totals_are_consistent_and_finite() {
        let p = manufactured_sine_2d(1.0);
        let stack = CorrectionStack::new(p.clone());
        let cfg = TrainConfig {
            epochs: 8,
            interior_batch: 16,
            boundary_batch: 4,
            eval_points: 64,
            seed: 19,
            ..TrainConfig::default()
        };
        let eval = EvalContext::for_problem(&p, cfg.seed, cfg.eval_points).unwrap();
        let (_, logs) = train_stage(&stack, &tiny_net_cfg(2), &cfg, &eval).unwrap();
        for log in &logs {
            assert!((log.loss_total - log.loss_interior - log.loss_boundary).abs() <= 1e-12);
            assert!(log.loss_total.is_finite());
            assert!(log.relative_error.is_finite());
        }
    }

    #[test]
    fn ec_driver_trains_requested_stage_count() {
        let p = manufactured_sine_2d(1.0);
        let cfg = TrainConfig {
            epochs: 8,
            interior_batch: 16,
            boundary_batch: 4,
            eval_points: 64,
            seed: 23,
            correction_orders: 0,
            ..TrainConfig::default()
        };
        let stack = run_error_correction(&p, &tiny_net_cfg(2), &cfg).unwrap();
        assert_eq!(stack.len(), 1);
        assert_eq!(stack.stage_logs.len(), 1);
        assert_eq!(stack.seed, 23);
    }

    #[test]
    fn earlier_stages_are_frozen_by_later_ones() {
        let p = manufactured_sine_2d(1.0);
        let base_cfg = TrainConfig {
            epochs: 8,
            interior_batch: 16,
            boundary_batch: 4,
            eval_points: 64,
            seed: 29,
            correction_orders: 0,
            ..TrainConfig::default()
        };
        let mut ec_cfg = base_cfg.clone();
        ec_cfg.correction_orders = 2;

        let solo = run_error_correction(&p, &tiny_net_cfg(2), &base_cfg).unwrap();
        let ec = run_error_correction(&p, &tiny_net_cfg(2), &ec_cfg).unwrap();
        assert_eq!(ec.len(), 3);
        // Stage 0 of the K=2 run is bit-identical to the K=0 run.
        match (&solo.entries()[0], &ec.entries()[0]) {
            (StackEntry::Network(a), StackEntry::Network(b)) => assert_eq!(a, b),
            _ => panic!("expected network entries"),
        }
        // Stage tags in the logs are ordered.
        for (k, logs) in ec.stage_logs.iter().enumerate() {
            assert!(logs.iter().all(|l| l.stage == k));
        }
    }

    #[test]
    fn correction_of_exact_base_trains_toward_zero() {
        // With the exact solution frozen as stage 0, the correction equation's
        // solution is the zero function; training should reduce the loss.
        let p = manufactured_sine_2d(1.0);
        let mut wins = 0;
        for seed in 0..5 {
            let mut stack = CorrectionStack::new(p.clone());
            stack
                .push(
                    StackEntry::Closed {
                        name: p.name().to_string(),
                        field: p.exact_solution().unwrap().clone(),
                    },
                    Vec::new(),
                )
                .unwrap();
            let cfg = TrainConfig {
                epochs: 1 << 8,
                interior_batch: 32,
                boundary_batch: 8,
                learning_rate: 3e-4,
                eval_points: 64,
                seed,
                ..TrainConfig::default()
            };
            let eval = EvalContext::for_problem(&p, cfg.seed, cfg.eval_points).unwrap();
            let (_, logs) = train_stage(&stack, &tiny_net_cfg(2), &cfg, &eval).unwrap();
            if logs.last().unwrap().loss_interior < logs.first().unwrap().loss_interior {
                wins += 1;
            }
        }
        assert!(wins >= 4, "correction descended in only {wins}/5 seeds");
    }

    #[test]
    fn invalid_batch_order_rejected_by_config() {
        let cfg = TrainConfig {
            interior_batch: 8,
            boundary_batch: 8,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err().tag(), "invalid-config");
    }
}
