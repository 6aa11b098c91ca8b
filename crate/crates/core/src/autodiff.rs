//! Reverse pass over the jet forward computation: exact parameter gradients
//! of scalar losses built from network values, gradients, and Laplacians.

use crate::error::{Result, SolverError};
use crate::jet::Jet;
use crate::linalg::Matrix;
use crate::network::{Activation, CompBlock, Network, Tape};

/// Per-layer gradient buffers, shape-congruent with the owning network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterGradient {
    pub layers: Vec<LayerGradient>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl ParameterGradient {
    pub fn zeros_like(net: &Network) -> Self {
        ParameterGradient {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParameterGradient) {
        debug_assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.data_mut().iter_mut().zip(b.weights.data()) {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in self.layers.iter_mut() {
            for x in l.weights.data_mut() {
                *x *= c;
            }
            for x in l.biases.iter_mut() {
                *x *= c;
            }
        }
    }

    pub fn iter_flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().copied().chain(l.biases.iter().copied()))
    }

    pub fn norm(&self) -> f64 {
        self.iter_flat().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter_flat().all(|v| v.is_finite())
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.biases.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A scalar loss over network outputs at a fixed point set.
///
/// `contribution` returns the loss term for point `index` together with its
/// partial derivatives with respect to the output jet (packed as a jet:
/// `value` ↦ ∂c/∂N, `grad[i]` ↦ ∂c/∂(∂N/∂x_i), `second[i]` ↦ ∂c/∂(∂²N/∂x_i²)).
pub trait LossEvaluator {
    fn points(&self) -> &[Vec<f64>];
    fn contribution(&self, index: usize, output: &Jet) -> (f64, Jet);
}

/// Total loss and its exact parameter gradient for `loss` over `net`.
///
/// Runs one recorded jet forward pass per point and back-propagates the
/// evaluator's adjoint through activations and affine layers. The point loop
/// and all reductions are sequential, so results are reproducible.
pub fn loss_param_gradient(
    loss: &impl LossEvaluator,
    net: &Network,
) -> Result<(f64, ParameterGradient)> {
    let mut total = 0.0;
    let mut grad = ParameterGradient::zeros_like(net);
    for (index, x) in loss.points().iter().enumerate() {
        let (out, tape) = net.forward_recorded(x)?;
        let (c, adjoint) = loss.contribution(index, &out);
        if !c.is_finite() {
            return Err(SolverError::NonFiniteLoss { batch_index: index });
        }
        total += c;
        backward(net, &tape, &adjoint, &mut grad);
    }
    if !grad.is_finite() {
        return Err(SolverError::NonFiniteGradient);
    }
    Ok((total, grad))
}

/// Accumulate d(loss)/d(θ) into `grad` given the adjoint of the output jet.
fn backward(net: &Network, tape: &Tape, adjoint: &Jet, grad: &mut ParameterGradient) {
    let layers = net.layers.len();
    let d = adjoint.dim();

    // Adjoint block for the final pre-activation (the single output unit).
    let mut upstream = CompBlock::zeros(1, d);
    upstream.comp_mut(0)[0] = adjoint.value;
    for i in 0..d {
        upstream.comp_mut(1 + i)[0] = adjoint.grad[i];
        upstream.comp_mut(1 + d + i)[0] = adjoint.second[i];
    }

    for l in (0..layers).rev() {
        let record = &tape.records[l];
        let layer = &net.layers[l];
        let gl = &mut grad.layers[l];

        // Affine backward: dW[j][k] += Σ_c upstream_c[j]·input_c[k], db[j] += upstream_0[j].
        let rows = layer.weights.rows();
        let cols = layer.weights.cols();
        for j in 0..rows {
            let mut bias_adj = 0.0;
            for c in 0..record.input.comps() {
                let u = upstream.comp(c)[j];
                if c == 0 {
                    bias_adj = u;
                }
                if u == 0.0 {
                    continue;
                }
                let input = record.input.comp(c);
                let wrow =
                    &mut gl.weights.data_mut()[j * cols..(j + 1) * cols];
                for (w, inp) in wrow.iter_mut().zip(input) {
                    *w = u.mul_add(*inp, *w);
                }
            }
            gl.biases[j] += bias_adj;
        }

        if l == 0 {
            // The input block is either raw coordinates or the frozen
            // feature map; neither carries trainable parameters.
            break;
        }

        // d(input of layer l) = Wᵀ·upstream, per component.
        let mut dinput = CompBlock::zeros(cols, d);
        for c in 0..dinput.comps() {
            layer
                .weights
                .matvec_transpose_add(upstream.comp(c), dinput.comp_mut(c));
        }

        // Activation backward: input of layer l = act(pre of layer l−1).
        let pre = &tape.records[l - 1].pre;
        upstream = activation_backward(&dinput, pre, net.activation, net.omega0);
    }
}

/// Map adjoints of act(pre) back to adjoints of pre.
///
/// For z = sin(ω·u) with jet components (Vz, Gz_i, Sz_i):
///   Vz   = sin(ωVu)
///   Gz_i = ω·cos(ωVu)·Gu_i
///   Sz_i = −ω²·sin(ωVu)·Gu_i² + ω·cos(ωVu)·Su_i
fn activation_backward(
    dz: &CompBlock,
    pre: &CompBlock,
    activation: Activation,
    omega0: f64,
) -> CompBlock {
    match activation {
        Activation::Identity => dz.clone(),
        Activation::Sine => {
            let units = dz.units;
            let d = dz.dim;
            let mut du = CompBlock::zeros(units, d);
            let w = omega0;
            for j in 0..units {
                let u = pre.comp(0)[j];
                let (s, c) = crate::jet::sin_cos(w * u);
                let mut dv = dz.comp(0)[j] * (w * c);
                for i in 0..d {
                    let gu = pre.comp(1 + i)[j];
                    let su = pre.comp(1 + d + i)[j];
                    let dzg = dz.comp(1 + i)[j];
                    let dzs = dz.comp(1 + d + i)[j];
                    // ∂Gz_i/∂Vu = −ω²·s·Gu_i ; ∂Sz_i/∂Vu = −ω³·c·Gu_i² − ω²·s·Su_i
                    dv += dzg * (-w * w * s * gu)
                        + dzs * (-w * w * w * c * gu * gu - w * w * s * su);
                    // ∂Sz_i/∂Gu_i = −2ω²·s·Gu_i ; ∂Gz_i/∂Gu_i = ∂Sz_i/∂Su_i = ω·c
                    du.comp_mut(1 + i)[j] = dzg * (w * c) + dzs * (-2.0 * w * w * s * gu);
                    du.comp_mut(1 + d + i)[j] = dzs * (w * c);
                }
                du.comp_mut(0)[j] = dv;
            }
            du
        }
    }
}
