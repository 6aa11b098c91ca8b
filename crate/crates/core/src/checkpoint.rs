//! Versioned plain-text checkpoints for correction stacks.
//!
//! Layout: a `GDGM1` header, run metadata, then one section per stage. A
//! stage is either a full network (architecture, optional Fourier frequency
//! matrix, then parameters in layer order, row-major) or a reference to a
//! registered closed-form solution. All reals use 17 significant digits so a
//! load reproduces the saved stack bit-for-bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, SolverError};
use crate::linalg::Matrix;
use crate::network::{Activation, FourierFeatureMap, Layer, Network};
use crate::problems::{builtin_problem, CorrectionStack, StackEntry};

pub const FORMAT_TAG: &str = "GDGM1";

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serialize a stack to its checkpoint text.
pub fn render_stack(stack: &CorrectionStack) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{FORMAT_TAG}");
    let _ = writeln!(out, "problem {}", stack.problem.name());
    let _ = writeln!(out, "seed {}", stack.seed);
    let _ = writeln!(out, "stages {}", stack.len());
    for (k, entry) in stack.entries().iter().enumerate() {
        let _ = writeln!(out, "stage {k}");
        match entry {
            StackEntry::Closed { name, .. } => {
                let _ = writeln!(out, "kind exact");
                let _ = writeln!(out, "name {name}");
            }
            StackEntry::Network(net) => {
                let _ = writeln!(out, "kind net");
                let activation = match net.activation {
                    Activation::Sine => "sine",
                    Activation::Identity => "identity",
                };
                let _ = writeln!(out, "activation {activation}");
                let _ = writeln!(out, "omega0 {}", fmt_f(net.omega0));
                match &net.input_map {
                    None => {
                        let _ = writeln!(out, "fourier none");
                    }
                    Some(map) => {
                        let _ = writeln!(
                            out,
                            "fourier n={} sigma={}",
                            map.feature_count(),
                            fmt_f(map.sigma())
                        );
                        let _ = writeln!(out, "frequencies");
                        for i in 0..map.frequencies().rows() {
                            let row: Vec<String> =
                                map.frequencies().row(i).iter().map(|v| fmt_f(*v)).collect();
                            let _ = writeln!(out, "{}", row.join(" "));
                        }
                    }
                }
                let _ = writeln!(out, "layers {}", net.layers.len());
                for (l, layer) in net.layers.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "layer {l} rows={} cols={}",
                        layer.weights.rows(),
                        layer.weights.cols()
                    );
                    let _ = writeln!(out, "weights");
                    for i in 0..layer.weights.rows() {
                        let row: Vec<String> =
                            layer.weights.row(i).iter().map(|v| fmt_f(*v)).collect();
                        let _ = writeln!(out, "{}", row.join(" "));
                    }
                    let _ = writeln!(out, "biases");
                    let row: Vec<String> = layer.biases.iter().map(|v| fmt_f(*v)).collect();
                    let _ = writeln!(out, "{}", row.join(" "));
                }
            }
        }
    }
    let _ = writeln!(out, "end");
    out
}

pub fn save_stack(stack: &CorrectionStack, path: &Path) -> Result<()> {
    fs::write(path, render_stack(stack)).map_err(|e| SolverError::io(path, e))
}

struct Cursor<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Cursor<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| SolverError::Checkpoint("unexpected end of file".into()))
    }

    fn expect_keyword(&mut self, keyword: &str) -> Result<&'a str> {
        let (line_no, line) = self.next()?;
        match line.strip_prefix(keyword) {
            Some(rest) if rest.is_empty() || rest.starts_with(' ') => Ok(rest.trim_start()),
            _ => Err(SolverError::Checkpoint(format!(
                "line {line_no}: expected `{keyword}`, found `{line}`"
            ))),
        }
    }
}

fn parse_f(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| SolverError::Checkpoint(format!("bad {what} value `{s}`")))
}

fn parse_u(s: &str, what: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| SolverError::Checkpoint(format!("bad {what} value `{s}`")))
}

fn parse_row(line: &str, expect: usize, what: &str) -> Result<Vec<f64>> {
    let row: Vec<f64> = line
        .split_whitespace()
        .map(|s| parse_f(s, what))
        .collect::<Result<_>>()?;
    if row.len() != expect {
        return Err(SolverError::Checkpoint(format!(
            "{what}: expected {expect} values, found {}",
            row.len()
        )));
    }
    Ok(row)
}

/// Parse checkpoint text back into a stack. The problem and any closed-form
/// stages must resolve through the problem registry.
pub fn parse_stack(text: &str) -> Result<CorrectionStack> {
    let mut cur = Cursor {
        lines: text.lines().enumerate(),
    };
    let (_, header) = cur.next()?;
    if header != FORMAT_TAG {
        return Err(SolverError::Checkpoint(format!(
            "version mismatch: expected `{FORMAT_TAG}`, found `{header}`"
        )));
    }
    let problem_name = cur.expect_keyword("problem")?.to_string();
    let problem = builtin_problem(&problem_name).map_err(|_| {
        SolverError::Checkpoint(format!(
            "checkpoint references unregistered problem `{problem_name}`"
        ))
    })?;
    let seed = cur
        .expect_keyword("seed")?
        .parse::<u64>()
        .map_err(|_| SolverError::Checkpoint("bad seed value".into()))?;
    let stages = parse_u(cur.expect_keyword("stages")?, "stages")?;

    let mut stack = CorrectionStack::new(problem.clone());
    stack.seed = seed;
    for k in 0..stages {
        let tag = parse_u(cur.expect_keyword("stage")?, "stage index")?;
        if tag != k {
            return Err(SolverError::Checkpoint(format!(
                "stage sections out of order: expected {k}, found {tag}"
            )));
        }
        let kind = cur.expect_keyword("kind")?;
        match kind {
            "exact" => {
                let name = cur.expect_keyword("name")?.to_string();
                let source = builtin_problem(&name).map_err(|_| {
                    SolverError::Checkpoint(format!(
                        "closed-form stage references unknown problem `{name}`"
                    ))
                })?;
                let field = source.exact_solution().cloned().ok_or_else(|| {
                    SolverError::Checkpoint(format!(
                        "problem `{name}` has no registered exact solution"
                    ))
                })?;
                stack.push(StackEntry::Closed { name, field }, Vec::new())?;
            }
            "net" => {
                let activation = match cur.expect_keyword("activation")? {
                    "sine" => Activation::Sine,
                    "identity" => Activation::Identity,
                    other => {
                        return Err(SolverError::Checkpoint(format!(
                            "unknown activation `{other}`"
                        )))
                    }
                };
                let omega0 = parse_f(cur.expect_keyword("omega0")?, "omega0")?;
                let fourier_spec = cur.expect_keyword("fourier")?;
                let input_map = if fourier_spec == "none" {
                    None
                } else {
                    let mut n = None;
                    let mut sigma = None;
                    for part in fourier_spec.split_whitespace() {
                        if let Some(v) = part.strip_prefix("n=") {
                            n = Some(parse_u(v, "fourier n")?);
                        } else if let Some(v) = part.strip_prefix("sigma=") {
                            sigma = Some(parse_f(v, "fourier sigma")?);
                        }
                    }
                    let (n, sigma) = match (n, sigma) {
                        (Some(n), Some(s)) => (n, s),
                        _ => {
                            return Err(SolverError::Checkpoint(format!(
                                "malformed fourier spec `{fourier_spec}`"
                            )))
                        }
                    };
                    cur.expect_keyword("frequencies")?;
                    let mut rows = Vec::with_capacity(n);
                    let dim = problem.dim();
                    for _ in 0..n {
                        let (_, line) = cur.next()?;
                        rows.push(parse_row(line, dim, "frequency row")?);
                    }
                    Some(FourierFeatureMap::from_frequencies(
                        Matrix::from_rows(rows)?,
                        sigma,
                    )?)
                };
                let layer_count = parse_u(cur.expect_keyword("layers")?, "layers")?;
                let mut layers = Vec::with_capacity(layer_count);
                for l in 0..layer_count {
                    let spec = cur.expect_keyword("layer")?;
                    let mut rows = None;
                    let mut cols = None;
                    let mut idx = None;
                    for (i, part) in spec.split_whitespace().enumerate() {
                        if i == 0 {
                            idx = Some(parse_u(part, "layer index")?);
                        } else if let Some(v) = part.strip_prefix("rows=") {
                            rows = Some(parse_u(v, "layer rows")?);
                        } else if let Some(v) = part.strip_prefix("cols=") {
                            cols = Some(parse_u(v, "layer cols")?);
                        }
                    }
                    let (idx, rows, cols) = match (idx, rows, cols) {
                        (Some(i), Some(r), Some(c)) => (i, r, c),
                        _ => {
                            return Err(SolverError::Checkpoint(format!(
                                "malformed layer spec `{spec}`"
                            )))
                        }
                    };
                    if idx != l {
                        return Err(SolverError::Checkpoint(format!(
                            "layer sections out of order: expected {l}, found {idx}"
                        )));
                    }
                    cur.expect_keyword("weights")?;
                    let mut wrows = Vec::with_capacity(rows);
                    for _ in 0..rows {
                        let (_, line) = cur.next()?;
                        wrows.push(parse_row(line, cols, "weight row")?);
                    }
                    cur.expect_keyword("biases")?;
                    let (_, line) = cur.next()?;
                    let biases = parse_row(line, rows, "bias row")?;
                    layers.push(Layer {
                        weights: Matrix::from_rows(wrows)?,
                        biases,
                    });
                }
                let net = rebuild_network(layers, omega0, activation, input_map, problem.dim())?;
                stack.push(StackEntry::Network(net), Vec::new())?;
            }
            other => {
                return Err(SolverError::Checkpoint(format!(
                    "unknown stage kind `{other}`"
                )))
            }
        }
    }
    cur.expect_keyword("end")?;
    Ok(stack)
}

fn rebuild_network(
    layers: Vec<Layer>,
    omega0: f64,
    activation: Activation,
    input_map: Option<FourierFeatureMap>,
    problem_dim: usize,
) -> Result<Network> {
    if layers.is_empty() {
        return Err(SolverError::Checkpoint("network with no layers".into()));
    }
    for w in layers.windows(2) {
        if w[1].weights.cols() != w[0].weights.rows() {
            return Err(SolverError::Checkpoint(format!(
                "layer shapes do not compose: {}x{} then {}x{}",
                w[0].weights.rows(),
                w[0].weights.cols(),
                w[1].weights.rows(),
                w[1].weights.cols()
            )));
        }
    }
    if layers.last().unwrap().weights.rows() != 1 {
        return Err(SolverError::Checkpoint(
            "final layer must produce one output".into(),
        ));
    }
    let net = Network {
        input_dim: layers[0].weights.cols(),
        layers,
        omega0,
        activation,
        input_map: None,
    };
    let net = match input_map {
        Some(map) => net.with_input_map(map)?,
        None => net,
    };
    if net.input_dim() != problem_dim {
        return Err(SolverError::Checkpoint(format!(
            "network input dimension {} does not match problem dimension {problem_dim}",
            net.input_dim()
        )));
    }
    Ok(net)
}

pub fn load_stack(path: &Path) -> Result<CorrectionStack> {
    let text = fs::read_to_string(path).map_err(|e| SolverError::io(path, e))?;
    parse_stack(&text)
}
