//! Second-order jets: value, input gradient, and pure second input derivatives.
//!
//! A [`Jet`] carries (f, ∂f/∂x_i, ∂²f/∂x_i²) for every input coordinate i.
//! Propagation through affine maps and element-wise nonlinearities is exact
//! because cross-coordinate mixing only ever happens inside affine layers,
//! where curvature is zero; the mixed partials ∂²f/∂x_i∂x_j are never needed
//! to recover the Laplacian Σ_i ∂²f/∂x_i².

use crate::error::{Result, SolverError};
use crate::linalg::{dot_acc, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    /// Function value.
    pub value: f64,
    /// ∂f/∂x_i per input coordinate.
    pub grad: Vec<f64>,
    /// ∂²f/∂x_i² per input coordinate (pure seconds only).
    pub second: Vec<f64>,
}

impl Jet {
    /// A constant: zero first and second derivatives.
    pub fn constant(dim: usize, value: f64) -> Self {
        Jet {
            value,
            grad: vec![0.0; dim],
            second: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    /// Trace of the pure-second block: the Laplacian when the jet holds a
    /// scalar field's output.
    pub fn laplacian(&self) -> f64 {
        self.second.iter().sum()
    }

    pub fn add(&self, rhs: &Jet) -> Jet {
        debug_assert_eq!(self.dim(), rhs.dim());
        Jet {
            value: self.value + rhs.value,
            grad: zip_map(&self.grad, &rhs.grad, |a, b| a + b),
            second: zip_map(&self.second, &rhs.second, |a, b| a + b),
        }
    }

    pub fn sub(&self, rhs: &Jet) -> Jet {
        debug_assert_eq!(self.dim(), rhs.dim());
        Jet {
            value: self.value - rhs.value,
            grad: zip_map(&self.grad, &rhs.grad, |a, b| a - b),
            second: zip_map(&self.second, &rhs.second, |a, b| a - b),
        }
    }

    /// Product rule on the diagonal: (fg)_i'' = f''g + 2f'g' + fg''.
    pub fn mul(&self, rhs: &Jet) -> Jet {
        debug_assert_eq!(self.dim(), rhs.dim());
        let d = self.dim();
        let mut grad = vec![0.0; d];
        let mut second = vec![0.0; d];
        for i in 0..d {
            grad[i] = self.grad[i] * rhs.value + self.value * rhs.grad[i];
            second[i] = self.second[i] * rhs.value
                + 2.0 * self.grad[i] * rhs.grad[i]
                + self.value * rhs.second[i];
        }
        Jet {
            value: self.value * rhs.value,
            grad,
            second,
        }
    }

    pub fn scale(&self, c: f64) -> Jet {
        Jet {
            value: c * self.value,
            grad: self.grad.iter().map(|g| c * g).collect(),
            second: self.second.iter().map(|s| c * s).collect(),
        }
    }

    pub fn neg(&self) -> Jet {
        self.scale(-1.0)
    }

    /// sin(ω·u) with exact first and pure-second propagation.
    pub fn sin_scaled(&self, omega: f64) -> Jet {
        let (s, c) = sin_cos(omega * self.value);
        let d = self.dim();
        let mut grad = vec![0.0; d];
        let mut second = vec![0.0; d];
        for i in 0..d {
            grad[i] = omega * c * self.grad[i];
            second[i] = -omega * omega * s * self.grad[i] * self.grad[i]
                + omega * c * self.second[i];
        }
        Jet { value: s, grad, second }
    }

    /// cos(ω·u), companion to [`Jet::sin_scaled`] for feature maps.
    pub fn cos_scaled(&self, omega: f64) -> Jet {
        let (s, c) = sin_cos(omega * self.value);
        let d = self.dim();
        let mut grad = vec![0.0; d];
        let mut second = vec![0.0; d];
        for i in 0..d {
            grad[i] = -omega * s * self.grad[i];
            second[i] = -omega * omega * c * self.grad[i] * self.grad[i]
                - omega * s * self.second[i];
        }
        Jet { value: c, grad, second }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad.iter().all(|g| g.is_finite())
            && self.second.iter().all(|s| s.is_finite())
    }
}

/// Shared sin/cos evaluation so every path computes the pair identically.
#[inline]
pub(crate) fn sin_cos(arg: f64) -> (f64, f64) {
    (arg.sin(), arg.cos())
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

/// Seed one jet per coordinate of `x`: jet i is the coordinate function x_i,
/// so value = x_i, grad = e_i, second = 0.
pub fn seed_jets(x: &[f64]) -> Result<Vec<Jet>> {
    if x.is_empty() {
        return Err(SolverError::InvalidInput(
            "cannot seed jets from an empty point".into(),
        ));
    }
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(SolverError::InvalidInput(format!(
            "non-finite coordinate {bad} in seed point"
        )));
    }
    let d = x.len();
    Ok(x.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let mut jet = Jet::constant(d, xi);
            jet.grad[i] = 1.0;
            jet
        })
        .collect())
}

/// Affine map of a jet vector: out_j = (W v + b)_j with grad and second
/// transported by the same linear combination (affine maps have zero
/// curvature, so this is exact).
pub fn jet_affine(weights: &Matrix, biases: &[f64], input: &[Jet]) -> Result<Vec<Jet>> {
    if input.len() != weights.cols() {
        return Err(SolverError::ShapeMismatch(format!(
            "affine map expects {} input jets, got {}",
            weights.cols(),
            input.len()
        )));
    }
    if biases.len() != weights.rows() {
        return Err(SolverError::ShapeMismatch(format!(
            "affine map expects {} biases, got {}",
            weights.rows(),
            biases.len()
        )));
    }
    let d = input.first().map(Jet::dim).unwrap_or(0);
    if input.iter().any(|j| j.dim() != d) {
        return Err(SolverError::ShapeMismatch(
            "input jets disagree on coordinate dimension".into(),
        ));
    }

    let n = weights.rows();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let row = weights.row(j);
        let mut value = biases[j];
        for (w, jet) in row.iter().zip(input) {
            value = w.mul_add(jet.value, value);
        }
        let mut grad = vec![0.0; d];
        let mut second = vec![0.0; d];
        for i in 0..d {
            let mut g = 0.0;
            let mut s = 0.0;
            for (w, jet) in row.iter().zip(input) {
                g = w.mul_add(jet.grad[i], g);
                s = w.mul_add(jet.second[i], s);
            }
            grad[i] = g;
            second[i] = s;
        }
        out.push(Jet { value, grad, second });
    }
    Ok(out)
}

/// Element-wise sin(ω·u) over a jet vector.
pub fn jet_sin(omega: f64, input: &[Jet]) -> Vec<Jet> {
    input.iter().map(|j| j.sin_scaled(omega)).collect()
}

/// Element-wise cos(ω·u) over a jet vector.
pub fn jet_cos(omega: f64, input: &[Jet]) -> Vec<Jet> {
    input.iter().map(|j| j.cos_scaled(omega)).collect()
}
