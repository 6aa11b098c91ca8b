//! Boundary-value problems on axis-aligned boxes and the residual operators
//! driving base training and recursive error correction.
//!
//! A problem is ∇²φ + B[φ] = f in Ω with φ = g on ∂Ω, where B is an optional
//! scalar nonlinearity applied to the value. The residual of a candidate is
//! zero exactly at the solution; correction stage k trains against a
//! recursively defined equation whose exact solution is the running error.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Result, SolverError};
use crate::jet::{seed_jets, Jet};
use crate::network::Network;
use crate::training::EpochLog;

/// Axis-aligned box [lo_i, hi_i]^d.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(SolverError::InvalidConfig(
                "domain bounds must be nonempty and of equal dimension".into(),
            ));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l < h) || !l.is_finite() || !h.is_finite() {
                return Err(SolverError::InvalidConfig(format!(
                    "domain requires lo < hi per axis, got [{l}, {h}]"
                )));
            }
        }
        Ok(Domain { lo, hi })
    }

    /// The symmetric box [−π, π]^d used by all built-in problems.
    pub fn symmetric_pi(dim: usize) -> Self {
        Domain {
            lo: vec![-PI; dim],
            hi: vec![PI; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).product()
    }

    /// Strict interior membership.
    pub fn contains_interior(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| v > l && v < h)
    }

    /// Exact face membership: inside the closed box with at least one
    /// coordinate pinned to a face value.
    pub fn on_boundary(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let closed = x
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| v >= l && v <= h);
        let pinned = x
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .any(|(v, (l, h))| v == l || v == h);
        closed && pinned
    }
}

/// Optional scalar term B applied to the candidate's value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nonlinearity {
    None,
    Sinh,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(&self, value: f64) -> f64 {
        match self {
            Nonlinearity::None => 0.0,
            Nonlinearity::Sinh => value.sinh(),
        }
    }

    /// d B / d value, the outer factor in interior-loss adjoints.
    #[inline]
    pub fn derivative(&self, value: f64) -> f64 {
        match self {
            Nonlinearity::None => 0.0,
            Nonlinearity::Sinh => value.cosh(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::None => "none",
            Nonlinearity::Sinh => "sinh",
        }
    }
}

type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type JetFn = Arc<dyn Fn(&[f64]) -> Result<Jet> + Send + Sync>;

/// A closed-form scalar field evaluable as a jet (value, gradient, pure
/// seconds), so it can stand in wherever a network can.
#[derive(Clone)]
pub struct AnalyticField {
    dim: usize,
    f: JetFn,
}

impl AnalyticField {
    pub fn new(dim: usize, f: impl Fn(&[f64]) -> Result<Jet> + Send + Sync + 'static) -> Self {
        AnalyticField { dim, f: Arc::new(f) }
    }

    /// Π_i sin(freq·x_i) over all coordinates.
    pub fn product_of_sines(dim: usize, freq: f64) -> Self {
        AnalyticField::new(dim, move |x| {
            let jets = seed_jets(x)?;
            let mut acc = jets[0].sin_scaled(freq);
            for jet in &jets[1..] {
                acc = acc.mul(&jet.sin_scaled(freq));
            }
            Ok(acc)
        })
    }
}

impl std::fmt::Debug for AnalyticField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticField").field("dim", &self.dim).finish()
    }
}

/// Anything that yields a jet at a point: networks, closed forms, stacks.
pub trait ScalarField {
    fn field_dim(&self) -> usize;
    fn jet(&self, x: &[f64]) -> Result<Jet>;
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.jet(x)?.value)
    }
    fn value_and_laplacian(&self, x: &[f64]) -> Result<(f64, f64)> {
        let jet = self.jet(x)?;
        Ok((jet.value, jet.laplacian()))
    }
}

impl ScalarField for AnalyticField {
    fn field_dim(&self) -> usize {
        self.dim
    }
    fn jet(&self, x: &[f64]) -> Result<Jet> {
        if x.len() != self.dim {
            return Err(SolverError::ShapeMismatch(format!(
                "field expects dimension {}, got {}",
                self.dim,
                x.len()
            )));
        }
        (self.f)(x)
    }
}

impl ScalarField for Network {
    fn field_dim(&self) -> usize {
        self.input_dim()
    }
    fn jet(&self, x: &[f64]) -> Result<Jet> {
        self.forward_jet(x)
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.evaluate(x)
    }
}

/// A boundary-value problem: domain, operator decomposition, data, and an
/// optional closed-form solution for error measurement.
#[derive(Clone)]
pub struct PdeProblem {
    name: String,
    domain: Domain,
    nonlinear: Nonlinearity,
    source: PointFn,
    boundary: PointFn,
    exact: Option<AnalyticField>,
    exact_laplacian: Option<PointFn>,
}

impl PdeProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        domain: Domain,
        nonlinear: Nonlinearity,
        source: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        boundary: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        exact: Option<AnalyticField>,
        exact_laplacian: Option<PointFn>,
    ) -> Self {
        PdeProblem {
            name: name.into(),
            domain,
            nonlinear,
            source: Arc::new(source),
            boundary: Arc::new(boundary),
            exact,
            exact_laplacian,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinear
    }

    pub fn source(&self, x: &[f64]) -> f64 {
        (self.source)(x)
    }

    pub fn boundary(&self, y: &[f64]) -> f64 {
        (self.boundary)(y)
    }

    pub fn exact_solution(&self) -> Option<&AnalyticField> {
        self.exact.as_ref()
    }

    /// Hand-derived Laplacian of the exact solution, where registered;
    /// independent of the jet machinery so tests can cross-check both.
    pub fn exact_laplacian(&self, x: &[f64]) -> Option<f64> {
        self.exact_laplacian.as_ref().map(|f| f(x))
    }
}

impl std::fmt::Debug for PdeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PdeProblem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("nonlinear", &self.nonlinear)
            .finish()
    }
}

/// Names accepted by [`builtin_problem`], stable CLI-facing identifiers.
pub const BUILTIN_PROBLEMS: [&str; 4] = ["p1_3d", "p2_2d", "p3_2d", "pb_demo"];

/// Registry of shipped problems, all on [−π,π]^d with zero boundary data.
pub fn builtin_problem(name: &str) -> Result<PdeProblem> {
    match name {
        // ∇²φ = −75 sin(5x)sin(5y)sin(5z), φ = sin(5x)sin(5y)sin(5z)
        "p1_3d" => Ok(PdeProblem::new(
            "p1_3d",
            Domain::symmetric_pi(3),
            Nonlinearity::None,
            |x: &[f64]| -75.0 * (5.0 * x[0]).sin() * (5.0 * x[1]).sin() * (5.0 * x[2]).sin(),
            |_| 0.0,
            Some(AnalyticField::product_of_sines(3, 5.0)),
            Some(Arc::new(|x: &[f64]| {
                -75.0 * (5.0 * x[0]).sin() * (5.0 * x[1]).sin() * (5.0 * x[2]).sin()
            })),
        )),
        // φ = sin(20x)sin(20y); the source carries the matching constant
        // −2·20² = −800 at frequency 20.
        "p2_2d" => Ok(PdeProblem::new(
            "p2_2d",
            Domain::symmetric_pi(2),
            Nonlinearity::None,
            |x: &[f64]| -800.0 * (20.0 * x[0]).sin() * (20.0 * x[1]).sin(),
            |_| 0.0,
            Some(AnalyticField::product_of_sines(2, 20.0)),
            Some(Arc::new(|x: &[f64]| {
                -800.0 * (20.0 * x[0]).sin() * (20.0 * x[1]).sin()
            })),
        )),
        // φ = (π² − y²)·sin(10x), ∇²φ = (100y² − 100π² − 2)·sin(10x)
        "p3_2d" => Ok(PdeProblem::new(
            "p3_2d",
            Domain::symmetric_pi(2),
            Nonlinearity::None,
            |x: &[f64]| (100.0 * x[1] * x[1] - 100.0 * PI * PI - 2.0) * (10.0 * x[0]).sin(),
            |_| 0.0,
            Some(AnalyticField::new(2, |x| {
                let jets = seed_jets(x)?;
                let y_sq = jets[1].mul(&jets[1]);
                let poly = Jet::constant(2, PI * PI).sub(&y_sq);
                Ok(poly.mul(&jets[0].sin_scaled(10.0)))
            })),
            Some(Arc::new(|x: &[f64]| {
                (100.0 * x[1] * x[1] - 100.0 * PI * PI - 2.0) * (10.0 * x[0]).sin()
            })),
        )),
        // Manufactured sinh case: φ = sin(x)sin(y),
        // f = ∇²φ + sinh(φ) = −2 sin(x)sin(y) + sinh(sin(x)sin(y)).
        "pb_demo" => Ok(PdeProblem::new(
            "pb_demo",
            Domain::symmetric_pi(2),
            Nonlinearity::Sinh,
            |x: &[f64]| {
                let phi = x[0].sin() * x[1].sin();
                -2.0 * phi + phi.sinh()
            },
            |_| 0.0,
            Some(AnalyticField::product_of_sines(2, 1.0)),
            Some(Arc::new(|x: &[f64]| -2.0 * x[0].sin() * x[1].sin())),
        )),
        other => Err(SolverError::UnknownProblem(other.to_string())),
    }
}

/// Manufactured 2D Poisson benchmark: φ = sin(k·x)sin(k·y) on [−π,π]²,
/// f = −2k²·sin(k·x)sin(k·y), zero boundary for integer k.
pub fn manufactured_sine_2d(freq: f64) -> PdeProblem {
    let c = -2.0 * freq * freq;
    PdeProblem::new(
        format!("sine2d_k{freq}"),
        Domain::symmetric_pi(2),
        Nonlinearity::None,
        move |x: &[f64]| c * (freq * x[0]).sin() * (freq * x[1]).sin(),
        |_| 0.0,
        Some(AnalyticField::product_of_sines(2, freq)),
        Some(Arc::new(move |x: &[f64]| {
            c * (freq * x[0]).sin() * (freq * x[1]).sin()
        })),
    )
}

/// Manufactured 1D benchmark: φ = sin(k·x) on [−π,π], f = −k²·sin(k·x).
pub fn manufactured_sine_1d(freq: f64) -> PdeProblem {
    let c = -freq * freq;
    PdeProblem::new(
        format!("sine1d_k{freq}"),
        Domain::symmetric_pi(1),
        Nonlinearity::None,
        move |x: &[f64]| c * (freq * x[0]).sin(),
        |_| 0.0,
        Some(AnalyticField::product_of_sines(1, freq)),
        Some(Arc::new(move |x: &[f64]| c * (freq * x[0]).sin())),
    )
}

/// One frozen stage of an error-correction run.
#[derive(Clone, Debug)]
pub enum StackEntry {
    Network(Network),
    /// A registered closed form standing in for a trained stage; `name`
    /// identifies the problem whose exact solution it is.
    Closed { name: String, field: AnalyticField },
}

impl StackEntry {
    pub fn field(&self) -> &dyn ScalarField {
        match self {
            StackEntry::Network(net) => net,
            StackEntry::Closed { field, .. } => field,
        }
    }

    pub fn field_dim(&self) -> usize {
        self.field().field_dim()
    }
}

/// Ordered frozen stages N₀…N_K; the running approximation is their sum.
#[derive(Clone, Debug)]
pub struct CorrectionStack {
    pub problem: PdeProblem,
    entries: Vec<StackEntry>,
    /// Per-stage training logs, parallel to `entries`.
    pub stage_logs: Vec<Vec<EpochLog>>,
    /// Seed of the run that produced the stack (persisted in checkpoints).
    pub seed: u64,
}

impl CorrectionStack {
    pub fn new(problem: PdeProblem) -> Self {
        CorrectionStack {
            problem,
            entries: Vec::new(),
            stage_logs: Vec::new(),
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[StackEntry] {
        &self.entries
    }

    pub fn push(&mut self, entry: StackEntry, logs: Vec<EpochLog>) -> Result<()> {
        if entry.field_dim() != self.problem.dim() {
            return Err(SolverError::ShapeMismatch(format!(
                "stack entry dimension {} does not match problem dimension {}",
                entry.field_dim(),
                self.problem.dim()
            )));
        }
        self.entries.push(entry);
        self.stage_logs.push(logs);
        Ok(())
    }

    /// Σ_{j≤K} N_j(x); zero for an empty stack.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for e in &self.entries {
            acc += e.field().value(x)?;
        }
        Ok(acc)
    }

    /// Value and Laplacian of the summed stack.
    pub fn value_and_laplacian(&self, x: &[f64]) -> Result<(f64, f64)> {
        let mut v = 0.0;
        let mut lap = 0.0;
        for e in &self.entries {
            let (ev, el) = e.field().value_and_laplacian(x)?;
            v += ev;
            lap += el;
        }
        Ok((v, lap))
    }

    /// Prefix sum N^(k−1)(x) = Σ_{j<k} N_j(x).
    pub fn prefix_value(&self, k: usize, x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for e in &self.entries[..k] {
            acc += e.field().value(x)?;
        }
        Ok(acc)
    }
}

impl ScalarField for CorrectionStack {
    fn field_dim(&self) -> usize {
        self.problem.dim()
    }
    fn jet(&self, x: &[f64]) -> Result<Jet> {
        let mut acc = Jet::constant(x.len(), 0.0);
        for e in &self.entries {
            acc = acc.add(&e.field().jet(x)?);
        }
        Ok(acc)
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        CorrectionStack::value(self, x)
    }
    fn value_and_laplacian(&self, x: &[f64]) -> Result<(f64, f64)> {
        CorrectionStack::value_and_laplacian(self, x)
    }
}

/// Base residual F₀ from precomputed value and Laplacian:
/// ∇²N + B[N] − f at `x`.
pub fn residual_f0(problem: &PdeProblem, value: f64, laplacian: f64, x: &[f64]) -> f64 {
    laplacian + problem.nonlinear.apply(value) - problem.source(x)
}

/// Residual of the k-th correction equation for `candidate` over a stack of
/// k frozen stages, computed from the summed stack (the two formulations are
/// algebraically identical; see [`residual_fk_recursive`] for the other route).
pub fn residual_fk(
    stack: &CorrectionStack,
    candidate: &dyn ScalarField,
    x: &[f64],
) -> Result<f64> {
    if stack.is_empty() {
        return Err(SolverError::StackUnderflow(
            "correction residual needs at least one frozen stage; use the base residual instead"
                .into(),
        ));
    }
    let (sv, slap) = stack.value_and_laplacian(x)?;
    let (cv, clap) = candidate.value_and_laplacian(x)?;
    Ok(residual_f0(&stack.problem, sv + cv, slap + clap, x))
}

/// Literal recursive evaluation of the k-th correction residual:
/// F_k[c] = F_{k−1}[N_{k−1}] + ∇²c − B[N^(k−1)] + B[N^(k−1) + c].
/// Exists as the independent cross-check of [`residual_fk`].
pub fn residual_fk_recursive(
    stack: &CorrectionStack,
    candidate: &dyn ScalarField,
    x: &[f64],
) -> Result<f64> {
    if stack.is_empty() {
        return Err(SolverError::StackUnderflow(
            "correction residual needs at least one frozen stage".into(),
        ));
    }
    recursive_residual(&stack.problem, stack.entries(), candidate, x)
}

fn recursive_residual(
    problem: &PdeProblem,
    frozen: &[StackEntry],
    candidate: &dyn ScalarField,
    x: &[f64],
) -> Result<f64> {
    let (cv, clap) = candidate.value_and_laplacian(x)?;
    if frozen.is_empty() {
        return Ok(residual_f0(problem, cv, clap, x));
    }
    let (last, prefix) = frozen.split_last().expect("nonempty");
    let prev = recursive_residual(problem, prefix, last.field(), x)?;
    let mut prefix_sum = 0.0;
    for e in frozen {
        prefix_sum += e.field().value(x)?;
    }
    Ok(prev + clap - problem.nonlinear.apply(prefix_sum)
        + problem.nonlinear.apply(prefix_sum + cv))
}

/// Boundary data for stage k = stack.len(): g(y) − N^(k−1)(y).
/// The error φ_k is known exactly on ∂Ω because g is.
pub fn boundary_target(stack: &CorrectionStack, y: &[f64]) -> Result<f64> {
    Ok(stack.problem.boundary(y) - stack.value(y)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_siren;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_interior(problem: &PdeProblem, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let d = problem.dim();
        (0..d)
            .map(|i| {
                let lo = problem.domain().lo()[i];
                let hi = problem.domain().hi()[i];
                rng.gen_range(lo..hi)
            })
            .collect()
    }

    #[test]
    fn p1_point_values() {
        let p = builtin_problem("p1_3d").unwrap();
        let x = [PI / 10.0, PI / 10.0, PI / 10.0];
        let phi = p.exact_solution().unwrap().value(&x).unwrap();
        assert!((phi - 1.0).abs() < 1e-12);
        assert!((p.source(&x) + 75.0).abs() < 1e-10);
    }

    #[test]
    fn p3_boundary_zeros() {
        let p = builtin_problem("p3_2d").unwrap();
        let phi = p.exact_solution().unwrap();
        for t in 0..20 {
            let v = -PI + 2.0 * PI * t as f64 / 19.0;
            assert!(phi.value(&[v, PI]).unwrap().abs() < 1e-9);
            assert!(phi.value(&[v, -PI]).unwrap().abs() < 1e-9);
            assert!(phi.value(&[PI, v]).unwrap().abs() < 1e-9);
            assert!(phi.value(&[-PI, v]).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn p2_laplacian_matches_source_at_random_points() {
        // Hand-derived: ∇²[sin(20x)sin(20y)] = −800·sin(20x)sin(20y) = f.
        let p = builtin_problem("p2_2d").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = random_interior(&p, &mut rng);
            let lap = p.exact_laplacian(&x).unwrap();
            assert!((lap - p.source(&x)).abs() < 1e-9);
        }
    }

    #[test]
    fn registered_solutions_have_vanishing_residual() {
        // |∇²φ + B[φ] − f| ≤ 1e-8 using the hand-derived Laplacian, and the
        // jet route must agree with the hand-derived one.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in BUILTIN_PROBLEMS {
            let p = builtin_problem(name).unwrap();
            let phi = p.exact_solution().unwrap();
            for _ in 0..200 {
                let x = random_interior(&p, &mut rng);
                let hand_lap = p.exact_laplacian(&x).unwrap();
                let (v, jet_lap) = phi.value_and_laplacian(&x).unwrap();
                let residual = residual_f0(&p, v, hand_lap, &x);
                assert!(
                    residual.abs() <= 1e-8,
                    "{name}: residual {residual} at {x:?}"
                );
                assert!(
                    (jet_lap - hand_lap).abs() <= 1e-8 * hand_lap.abs().max(1.0),
                    "{name}: jet laplacian {jet_lap} vs hand {hand_lap}"
                );
            }
        }
    }

    #[test]
    fn unknown_problem_rejected() {
        assert_eq!(
            builtin_problem("p9_zz").unwrap_err().tag(),
            "unknown-problem"
        );
    }

    #[test]
    fn residual_f0_zero_candidate() {
        let p = builtin_problem("p1_3d").unwrap();
        let x = [PI / 10.0, PI / 10.0, PI / 10.0];
        // N ≡ 0: residual = 0 + 0 − f = 75.
        let r = residual_f0(&p, 0.0, 0.0, &x);
        assert!((r - 75.0).abs() < 1e-10);
    }

    #[test]
    fn sinh_term_vanishes_at_zero_value() {
        let p = builtin_problem("pb_demo").unwrap();
        let x = [0.3, -0.4];
        let r = residual_f0(&p, 0.0, 0.0, &x);
        assert!((r + p.source(&x)).abs() < 1e-14);
    }

    #[test]
    fn zero_candidate_reduces_to_prefix_residual() {
        // With B ≡ 0 and candidate ≡ 0, F_k equals F₀ of the frozen prefix.
        let p = builtin_problem("p3_2d").unwrap();
        let mut stack = CorrectionStack::new(p.clone());
        let net = init_siren(2, 2, 8, 30.0, 3).unwrap();
        stack.push(StackEntry::Network(net.clone()), Vec::new()).unwrap();
        let zero = AnalyticField::new(2, |x| Ok(Jet::constant(x.len(), 0.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = random_interior(&p, &mut rng);
            let rk = residual_fk(&stack, &zero, &x).unwrap();
            let (v, lap) = net.value_and_laplacian(&x).unwrap();
            let r0 = residual_f0(&p, v, lap, &x);
            assert!((rk - r0).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_base_with_zero_candidate_has_zero_residual() {
        let p = builtin_problem("pb_demo").unwrap();
        let phi = p.exact_solution().unwrap().clone();
        let mut stack = CorrectionStack::new(p.clone());
        stack
            .push(
                StackEntry::Closed {
                    name: "pb_demo".into(),
                    field: phi,
                },
                Vec::new(),
            )
            .unwrap();
        let zero = AnalyticField::new(2, |x| Ok(Jet::constant(x.len(), 0.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = random_interior(&p, &mut rng);
            let rk = residual_fk(&stack, &zero, &x).unwrap();
            assert!(rk.abs() < 1e-8, "residual {rk} at {x:?}");
        }
    }

    #[test]
    fn recursive_and_summed_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for name in ["p3_2d", "pb_demo"] {
            let p = builtin_problem(name).unwrap();
            let mut stack = CorrectionStack::new(p.clone());
            for s in 0..3 {
                stack
                    .push(
                        StackEntry::Network(init_siren(2, 2, 6, 30.0, 100 + s).unwrap()),
                        Vec::new(),
                    )
                    .unwrap();
            }
            let candidate = init_siren(2, 2, 6, 30.0, 999).unwrap();
            for _ in 0..200 {
                let x = random_interior(&p, &mut rng);
                let a = residual_fk(&stack, &candidate, &x).unwrap();
                let b = residual_fk_recursive(&stack, &candidate, &x).unwrap();
                assert!(
                    (a - b).abs() <= 1e-8 * (1.0 + a.abs()),
                    "{name}: {a} vs {b} at {x:?}"
                );
            }
        }
    }

    #[test]
    fn residual_fk_requires_frozen_stage() {
        let p = builtin_problem("p2_2d").unwrap();
        let stack = CorrectionStack::new(p);
        let zero = AnalyticField::new(2, |x| Ok(Jet::constant(x.len(), 0.0)));
        assert_eq!(
            residual_fk(&stack, &zero, &[0.0, 0.0]).unwrap_err().tag(),
            "stack-underflow"
        );
    }

    #[test]
    fn boundary_targets_telescope() {
        let p = builtin_problem("p3_2d").unwrap();
        let mut stack = CorrectionStack::new(p.clone());
        // k = 0: target is g itself.
        let y = [PI, 0.5];
        assert_eq!(boundary_target(&stack, &y).unwrap(), 0.0);

        for s in 0..3 {
            stack
                .push(
                    StackEntry::Network(init_siren(2, 2, 6, 30.0, 40 + s).unwrap()),
                    Vec::new(),
                )
                .unwrap();
            // Σ_{j<k} N_j(y) + target_k(y) = g(y) exactly.
            let target = boundary_target(&stack, &y).unwrap();
            let sum = stack.value(&y).unwrap();
            assert!((sum + target - p.boundary(&y)).abs() <= 1e-12);
        }
    }

    #[test]
    fn boundary_target_subtracts_prefix() {
        // k=1, g=0, N⁽⁰⁾(y) = 0.2 ⇒ target −0.2.
        let p = builtin_problem("p2_2d").unwrap();
        let mut stack = CorrectionStack::new(p);
        let c = AnalyticField::new(2, |x| Ok(Jet::constant(x.len(), 0.2)));
        stack
            .push(
                StackEntry::Closed {
                    name: "const".into(),
                    field: c,
                },
                Vec::new(),
            )
            .unwrap();
        let y = [PI, 0.1];
        assert!((boundary_target(&stack, &y).unwrap() + 0.2).abs() < 1e-15);
    }

    #[test]
    fn sinh_correction_expansion_pattern() {
        // For G[·] = ∇²[·] + sinh[·] − f and φ_ε = φ − N:
        //   G[N] = −∇²φ_ε + sinh(N) − sinh(N + φ_ε),
        // and φ_ε solves the first correction equation exactly.
        let p = builtin_problem("pb_demo").unwrap();
        let phi = p.exact_solution().unwrap().clone();
        // Imperfect base approximation: 0.9·φ.
        let base = AnalyticField::new(2, {
            let phi = phi.clone();
            move |x| Ok(phi.jet(x)?.scale(0.9))
        });
        let eps = AnalyticField::new(2, {
            let phi = phi.clone();
            let base = base.clone();
            move |x| Ok(phi.jet(x)?.sub(&base.jet(x)?))
        });

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut stack = CorrectionStack::new(p.clone());
        stack
            .push(
                StackEntry::Closed {
                    name: "base".into(),
                    field: base.clone(),
                },
                Vec::new(),
            )
            .unwrap();

        for _ in 0..100 {
            let x = random_interior(&p, &mut rng);
            let (nv, nlap) = base.value_and_laplacian(&x).unwrap();
            let g_of_n = residual_f0(&p, nv, nlap, &x);
            let (ev, elap) = eps.value_and_laplacian(&x).unwrap();
            let pattern = -elap + nv.sinh() - (nv + ev).sinh();
            assert!(
                (g_of_n - pattern).abs() <= 1e-8 * (1.0 + g_of_n.abs()),
                "expansion mismatch: {g_of_n} vs {pattern}"
            );
            // φ_ε is the exact solution of the correction equation.
            let rk = residual_fk(&stack, &eps, &x).unwrap();
            assert!(rk.abs() < 1e-8, "correction residual {rk}");
        }
    }
}
