//! Sine-activated multilayer perceptron with an optional frozen Gaussian
//! Fourier feature front-end.
//!
//! Two evaluation paths exist: a value-only fast path ([`Network::evaluate`])
//! and the jet path ([`Network::forward_jet`] / [`Network::forward_with_laplacian`]).
//! Both share the same accumulation kernels so the value component is
//! bit-identical between them.

use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Result, SolverError};
use crate::jet::{jet_affine, jet_cos, jet_sin, seed_jets, sin_cos, Jet};
use crate::linalg::{dot_acc, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// sin(ω₀·u) on every hidden layer (the production setting).
    Sine,
    /// Pass-through hidden units; diagnostic only. Any composition of affine
    /// layers has identically zero second derivatives.
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// Frozen random Fourier feature map x ↦ [cos(2πBx), sin(2πBx)].
#[derive(Clone, Debug, PartialEq)]
pub struct FourierFeatureMap {
    /// Frequency matrix, n×d, entries i.i.d. normal(0, σ²).
    frequencies: Matrix,
    /// 2π·B, cached so every path uses identical scaled entries.
    scaled: Matrix,
    sigma: f64,
}

impl FourierFeatureMap {
    pub fn feature_count(&self) -> usize {
        self.frequencies.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.frequencies.cols()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.feature_count()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn frequencies(&self) -> &Matrix {
        &self.frequencies
    }

    /// Rebuild from a stored frequency matrix (checkpoint loading).
    pub fn from_frequencies(frequencies: Matrix, sigma: f64) -> Result<Self> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(SolverError::InvalidConfig(format!(
                "fourier sigma must be positive and finite, got {sigma}"
            )));
        }
        if frequencies.data().iter().any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidInput(
                "fourier frequency matrix has non-finite entries".into(),
            ));
        }
        let mut scaled = frequencies.clone();
        for v in scaled.data_mut() {
            *v *= 2.0 * std::f64::consts::PI;
        }
        Ok(FourierFeatureMap {
            frequencies,
            scaled,
            sigma,
        })
    }
}

/// Draw a feature map with entries i.i.d. normal(0, σ²); deterministic per seed.
pub fn sample_fourier_map(dim: usize, n: usize, sigma: f64, seed: u64) -> Result<FourierFeatureMap> {
    if dim == 0 || n == 0 {
        return Err(SolverError::InvalidConfig(
            "fourier map needs dim ≥ 1 and n ≥ 1".into(),
        ));
    }
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(SolverError::InvalidConfig(format!(
            "fourier sigma must be positive, got {sigma}"
        )));
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut freq = Matrix::zeros(n, dim);
    for i in 0..n {
        for j in 0..dim {
            freq.set(i, j, rng.sample(normal));
        }
    }
    FourierFeatureMap::from_frequencies(freq, sigma)
}

/// Value-only feature map: [cos(2π(Bx)_1..n), sin(2π(Bx)_1..n)].
pub fn apply_fourier(map: &FourierFeatureMap, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != map.input_dim() {
        return Err(SolverError::ShapeMismatch(format!(
            "fourier map expects dimension {}, got {}",
            map.input_dim(),
            x.len()
        )));
    }
    let n = map.feature_count();
    let mut out = vec![0.0; 2 * n];
    for j in 0..n {
        let arg = dot_acc(map.scaled.row(j), x, 0.0);
        let (s, c) = sin_cos(arg);
        out[j] = c;
        out[n + j] = s;
    }
    Ok(out)
}

/// Jet-aware feature map: exact first/second derivative propagation through
/// the affine map 2πB followed by element-wise trig.
pub fn apply_fourier_jets(map: &FourierFeatureMap, input: &[Jet]) -> Result<Vec<Jet>> {
    let zeros = vec![0.0; map.feature_count()];
    let args = jet_affine(&map.scaled, &zeros, input)?;
    let mut out = jet_cos(1.0, &args);
    out.extend(jet_sin(1.0, &args));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub omega0: f64,
    pub activation: Activation,
    pub input_map: Option<FourierFeatureMap>,
    input_dim: usize,
}

impl Network {
    /// Dimension of the domain points the network consumes.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.rows() * l.weights.cols() + l.biases.len())
            .sum()
    }

    /// Attach a frozen Fourier feature front-end. The first layer must have
    /// been built for the mapped width 2n.
    pub fn with_input_map(mut self, map: FourierFeatureMap) -> Result<Network> {
        let first_cols = self.layers[0].weights.cols();
        if first_cols != map.output_dim() {
            return Err(SolverError::ShapeMismatch(format!(
                "first layer expects {} inputs but fourier map produces {}",
                first_cols,
                map.output_dim()
            )));
        }
        self.input_dim = map.input_dim();
        self.input_map = Some(map);
        Ok(self)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(SolverError::ShapeMismatch(format!(
                "network expects dimension {}, got point of dimension {}",
                self.input_dim,
                x.len()
            )));
        }
        Ok(())
    }

    /// Value-only forward pass. Bit-identical to the value component of the
    /// jet path because both use the same dot kernel and activation ordering.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let mut cur: Vec<f64> = match &self.input_map {
            Some(map) => apply_fourier(map, x)?,
            None => x.to_vec(),
        };
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            next.resize(layer.weights.rows(), 0.0);
            layer.weights.matvec_into(&cur, Some(&layer.biases), &mut next);
            if l < last {
                match self.activation {
                    Activation::Sine => {
                        for v in next.iter_mut() {
                            let (s, _) = sin_cos(self.omega0 * *v);
                            *v = s;
                        }
                    }
                    Activation::Identity => {}
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur[0])
    }

    /// Full jet forward pass: value, input gradient, pure second derivatives.
    pub fn forward_jet(&self, x: &[f64]) -> Result<Jet> {
        self.check_point(x)?;
        let block = self.forward_block(x)?;
        Ok(block.jet(0))
    }

    /// Exact value, gradient, and Laplacian at `x`.
    pub fn forward_with_laplacian(&self, x: &[f64]) -> Result<(f64, Vec<f64>, f64)> {
        let jet = self.forward_jet(x)?;
        let lap = jet.laplacian();
        Ok((jet.value, jet.grad, lap))
    }

    /// Jet pass over the whole network, returning the final pre-activation
    /// block (the output unit).
    pub(crate) fn forward_block(&self, x: &[f64]) -> Result<CompBlock> {
        let mut cur = self.input_block(x)?;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = affine_block(&layer.weights, &layer.biases, &cur);
            if l < last {
                activate_block(&mut pre, self.activation, self.omega0);
            }
            cur = pre;
        }
        Ok(cur)
    }

    /// Jet pass recording per-layer inputs and pre-activations for the
    /// reverse parameter-gradient pass.
    pub(crate) fn forward_recorded(&self, x: &[f64]) -> Result<(Jet, Tape)> {
        self.check_point(x)?;
        let mut records = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_block(x)?;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = affine_block(&layer.weights, &layer.biases, &cur);
            let mut post = pre.clone();
            if l < last {
                activate_block(&mut post, self.activation, self.omega0);
            }
            records.push(LayerRecord { input: cur, pre });
            cur = post;
        }
        let out = cur.jet(0);
        Ok((out, Tape { records }))
    }

    fn input_block(&self, x: &[f64]) -> Result<CompBlock> {
        self.check_point(x)?;
        let d = self.input_dim;
        match &self.input_map {
            None => {
                let mut block = CompBlock::zeros(d, d);
                for (i, &xi) in x.iter().enumerate() {
                    block.comp_mut(0)[i] = xi;
                    block.comp_mut(1 + i)[i] = 1.0;
                }
                Ok(block)
            }
            Some(map) => {
                let jets = apply_fourier_jets(map, &seed_jets(x)?)?;
                Ok(CompBlock::from_jets(&jets, d))
            }
        }
    }
}

/// Component-major activation storage for one layer: component 0 is the
/// value, components 1..=d the gradient, components d+1..=2d the pure
/// seconds. Lets the affine transport reuse dense matvec kernels.
#[derive(Clone, Debug)]
pub(crate) struct CompBlock {
    pub units: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl CompBlock {
    pub fn zeros(units: usize, dim: usize) -> Self {
        CompBlock {
            units,
            dim,
            data: vec![0.0; units * (1 + 2 * dim)],
        }
    }

    pub fn comps(&self) -> usize {
        1 + 2 * self.dim
    }

    #[inline]
    pub fn comp(&self, c: usize) -> &[f64] {
        &self.data[c * self.units..(c + 1) * self.units]
    }

    #[inline]
    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.units..(c + 1) * self.units]
    }

    pub fn from_jets(jets: &[Jet], dim: usize) -> Self {
        let mut block = CompBlock::zeros(jets.len(), dim);
        for (j, jet) in jets.iter().enumerate() {
            block.comp_mut(0)[j] = jet.value;
            for i in 0..dim {
                block.comp_mut(1 + i)[j] = jet.grad[i];
                block.comp_mut(1 + dim + i)[j] = jet.second[i];
            }
        }
        block
    }

    pub fn jet(&self, unit: usize) -> Jet {
        let d = self.dim;
        Jet {
            value: self.comp(0)[unit],
            grad: (0..d).map(|i| self.comp(1 + i)[unit]).collect(),
            second: (0..d).map(|i| self.comp(1 + d + i)[unit]).collect(),
        }
    }
}

/// W·block + b on the value component; W·block on derivative components.
pub(crate) fn affine_block(weights: &Matrix, biases: &[f64], input: &CompBlock) -> CompBlock {
    let mut out = CompBlock::zeros(weights.rows(), input.dim);
    weights.matvec_into(input.comp(0), Some(biases), out.comp_mut(0));
    for c in 1..input.comps() {
        weights.matvec_into(input.comp(c), None, out.comp_mut(c));
    }
    out
}

/// In-place element-wise activation with exact jet propagation.
pub(crate) fn activate_block(block: &mut CompBlock, activation: Activation, omega0: f64) {
    match activation {
        Activation::Identity => {}
        Activation::Sine => {
            let units = block.units;
            let d = block.dim;
            for j in 0..units {
                let u = block.comp(0)[j];
                let (s, c) = sin_cos(omega0 * u);
                block.comp_mut(0)[j] = s;
                for i in 0..d {
                    let g = block.comp(1 + i)[j];
                    let su = block.comp(1 + d + i)[j];
                    block.comp_mut(1 + i)[j] = omega0 * c * g;
                    block.comp_mut(1 + d + i)[j] =
                        -omega0 * omega0 * s * g * g + omega0 * c * su;
                }
            }
        }
    }
}

/// Recorded forward state for the reverse pass: per layer, the input jets
/// and the pre-activation jets.
pub(crate) struct LayerRecord {
    pub input: CompBlock,
    pub pre: CompBlock,
}

pub(crate) struct Tape {
    pub records: Vec<LayerRecord>,
}

/// Build a sine network with the initialization sine training requires:
/// first layer uniform in ±1/fan_in, deeper layers uniform in ±√(6/fan_in)/ω₀,
/// biases zero. Deterministic per seed.
pub fn init_siren(
    input_dim: usize,
    hidden_layers: usize,
    width: usize,
    omega0: f64,
    seed: u64,
) -> Result<Network> {
    if input_dim == 0 || hidden_layers == 0 || width == 0 {
        return Err(SolverError::InvalidConfig(
            "network dimensions must all be ≥ 1".into(),
        ));
    }
    if omega0 <= 0.0 || !omega0.is_finite() {
        return Err(SolverError::InvalidConfig(format!(
            "omega0 must be positive, got {omega0}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = Vec::with_capacity(hidden_layers + 1);
    dims.push((width, input_dim));
    for _ in 1..hidden_layers {
        dims.push((width, width));
    }
    dims.push((1, width));

    let mut layers = Vec::with_capacity(dims.len());
    for (l, (rows, cols)) in dims.into_iter().enumerate() {
        let fan_in = cols as f64;
        let limit = if l == 0 {
            1.0 / fan_in
        } else {
            (6.0 / fan_in).sqrt() / omega0
        };
        let dist = Uniform::new_inclusive(-limit, limit);
        let mut weights = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                weights.set(i, j, rng.sample(dist));
            }
        }
        layers.push(Layer {
            weights,
            biases: vec![0.0; rows],
        });
    }
    Ok(Network {
        layers,
        omega0,
        activation: Activation::Sine,
        input_map: None,
        input_dim,
    })
}

/// Architecture settings bundled for stage construction.
#[derive(Clone, Debug)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub omega0: f64,
    pub fourier: Option<FourierConfig>,
}

#[derive(Clone, Copy, Debug)]
pub struct FourierConfig {
    pub sigma: f64,
    pub n: usize,
}

impl NetworkConfig {
    /// Instantiate a network for this architecture. When a feature map is
    /// configured the map is drawn from a seed offset so weights and
    /// frequencies come from independent streams.
    pub fn build(&self, seed: u64) -> Result<Network> {
        match self.fourier {
            None => init_siren(
                self.input_dim,
                self.hidden_layers,
                self.width,
                self.omega0,
                seed,
            ),
            Some(f) => {
                let map = sample_fourier_map(
                    self.input_dim,
                    f.n,
                    f.sigma,
                    seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
                )?;
                let net = init_siren(
                    map.output_dim(),
                    self.hidden_layers,
                    self.width,
                    self.omega0,
                    seed,
                )?;
                net.with_input_map(map)
            }
        }
    }
}
