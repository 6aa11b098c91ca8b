//! Error metrics, the dense-quadrature objective gradient used as a
//! statistical oracle, and file exports (CSV logs, SVG heatmaps with value
//! tables).

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::autodiff::{loss_param_gradient, ParameterGradient};
use crate::error::{Result, SolverError};
use crate::network::Network;
use crate::problems::{CorrectionStack, PdeProblem, ScalarField};
use crate::sampling::{sample_boundary, sample_interior};
use crate::training::{
    BoundaryFitLoss, EpochLog, EvalContext, InteriorResidualLoss,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Relative squared error Σ(φ−N)² / Σφ² over the point set S.
pub fn relative_error<P, Q>(predict: P, phi: Q, points: &[Vec<f64>]) -> Result<f64>
where
    P: Fn(&[f64]) -> Result<f64>,
    Q: Fn(&[f64]) -> Result<f64>,
{
    if points.is_empty() {
        return Err(SolverError::InvalidInput(
            "relative error needs a nonempty evaluation set".into(),
        ));
    }
    let mut num = 0.0;
    let mut denom = 0.0;
    for x in points {
        let p = phi(x)?;
        let n = predict(x)?;
        let diff = p - n;
        num += diff * diff;
        denom += p * p;
    }
    if denom <= 0.0 {
        return Err(SolverError::DegenerateMetric(
            "reference solution vanishes on the evaluation set".into(),
        ));
    }
    Ok(num / denom)
}

/// Gradient of the trapezoid-quadrature approximation of the continuous
/// objective (interior residual integral plus boundary mismatch integral,
/// both against uniform measures). The oracle side of the unbiasedness check:
/// minibatch gradients must average to this.
pub fn quadrature_objective_gradient(
    problem: &PdeProblem,
    net: &Network,
    resolution: usize,
) -> Result<ParameterGradient> {
    if problem.dim() > 2 {
        return Err(SolverError::UnsupportedOracle(format!(
            "quadrature oracle supports d ≤ 2, problem has d = {}",
            problem.dim()
        )));
    }
    if resolution < 8 {
        return Err(SolverError::InvalidConfig(format!(
            "quadrature resolution must be ≥ 8, got {resolution}"
        )));
    }
    let d = problem.dim();
    let domain = problem.domain();

    // Interior: tensor-product trapezoid, divided by volume (uniform ν₁).
    let axis_nodes: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..resolution)
                .map(|t| {
                    domain.lo()[i]
                        + domain.side(i) * (t as f64 / (resolution - 1) as f64)
                })
                .collect()
        })
        .collect();
    let axis_weights: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let h = domain.side(i) / (resolution - 1) as f64;
            (0..resolution)
                .map(|t| {
                    if t == 0 || t == resolution - 1 {
                        h / 2.0
                    } else {
                        h
                    }
                })
                .collect()
        })
        .collect();

    let volume = domain.volume();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match d {
        1 => {
            for t in 0..resolution {
                points.push(vec![axis_nodes[0][t]]);
                weights.push(axis_weights[0][t] / volume);
            }
        }
        2 => {
            for a in 0..resolution {
                for b in 0..resolution {
                    points.push(vec![axis_nodes[0][a], axis_nodes[1][b]]);
                    weights.push(axis_weights[0][a] * axis_weights[1][b] / volume);
                }
            }
        }
        _ => unreachable!("dimension checked above"),
    }
    let interior = InteriorResidualLoss::for_problem(problem, points, weights);
    let (_, mut grad) = loss_param_gradient(&interior, net)?;

    // Boundary: uniform ν₂ on the surface. d=1 is the two endpoints with
    // probability 1/2 each; d=2 is a trapezoid along each face over the
    // total perimeter.
    let mut bpoints = Vec::new();
    let mut bweights = Vec::new();
    match d {
        1 => {
            bpoints.push(vec![domain.lo()[0]]);
            bpoints.push(vec![domain.hi()[0]]);
            bweights.push(0.5);
            bweights.push(0.5);
        }
        2 => {
            let perimeter = 2.0 * (domain.side(0) + domain.side(1));
            for axis in 0..2 {
                let free = 1 - axis;
                for pin in [domain.lo()[axis], domain.hi()[axis]] {
                    for t in 0..resolution {
                        let mut y = vec![0.0; 2];
                        y[axis] = pin;
                        y[free] = axis_nodes[free][t];
                        bpoints.push(y);
                        bweights.push(axis_weights[free][t] / perimeter);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    let boundary = BoundaryFitLoss::for_problem(problem, bpoints, bweights);
    let (_, bgrad) = loss_param_gradient(&boundary, net)?;
    grad.add_assign(&bgrad);
    Ok(grad)
}

const RAMP_LOW: (u8, u8, u8) = (0x21, 0x66, 0xAC);
const RAMP_HIGH: (u8, u8, u8) = (0xB2, 0x18, 0x2B);

fn ramp_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let mix = |a: u8, b: u8| -> u8 { (a as f64 + (b as f64 - a as f64) * t).round() as u8 };
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(RAMP_LOW.0, RAMP_HIGH.0),
        mix(RAMP_LOW.1, RAMP_HIGH.1),
        mix(RAMP_LOW.2, RAMP_HIGH.2)
    )
}

/// Render a scalar field on a tensor grid (2D, or a 3D slice with exactly
/// two varying axes) as an SVG heatmap plus a plain-text value table with
/// the same basename. Returns (svg path, values path).
pub fn export_field<P>(predict: P, grid: &[Vec<f64>], basename: &Path) -> Result<(PathBuf, PathBuf)>
where
    P: Fn(&[f64]) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(SolverError::InvalidInput("empty field grid".into()));
    }
    let d = grid[0].len();

    // Identify the varying axes; a 3D slice pins the rest.
    let mut axis_values: Vec<Vec<f64>> = vec![Vec::new(); d];
    for p in grid {
        for (axis, v) in p.iter().enumerate() {
            if !axis_values[axis].contains(v) {
                axis_values[axis].push(*v);
            }
        }
    }
    let free: Vec<usize> = (0..d).filter(|i| axis_values[*i].len() > 1).collect();
    if free.len() != 2 {
        return Err(SolverError::InvalidConfig(format!(
            "field export needs exactly 2 varying axes, found {}",
            free.len()
        )));
    }
    let rows = axis_values[free[0]].len();
    let cols = axis_values[free[1]].len();
    if rows * cols != grid.len() {
        return Err(SolverError::InvalidInput(format!(
            "grid is not a {rows}×{cols} tensor product"
        )));
    }

    let mut values = Vec::with_capacity(grid.len());
    for p in grid {
        values.push(predict(p)?);
    }
    let vmax = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    // Values table.
    let txt_path = basename.with_extension("txt");
    let col_names: Vec<&str> = match d {
        1 => vec!["x"],
        2 => vec!["x", "y"],
        3 => vec!["x", "y", "z"],
        _ => {
            return Err(SolverError::InvalidConfig(format!(
                "field export supports up to 3 coordinates, got {d}"
            )))
        }
    };
    let mut txt = String::new();
    let _ = writeln!(txt, "# scalar field values, one grid point per row");
    let _ = writeln!(
        txt,
        "# heatmap ramp: {} at -max to {} at +max, symmetric limit max|value| = {:.16e}",
        rgb_hex(RAMP_LOW),
        rgb_hex(RAMP_HIGH),
        vmax
    );
    let _ = writeln!(txt, "{},value", col_names.join(","));
    for (p, v) in grid.iter().zip(&values) {
        for c in p {
            let _ = write!(txt, "{c:.16e},");
        }
        let _ = writeln!(txt, "{v:.16e}");
    }
    fs::write(&txt_path, txt).map_err(|e| SolverError::io(&txt_path, e))?;

    // SVG heatmap: row axis vertical (increasing upward), column axis horizontal.
    let svg_path = basename.with_extension("svg");
    let cell = 6usize;
    let width = cols * cell;
    let height = rows * cell;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(
        svg,
        "<!-- scalar field heatmap; linear two-color ramp {} -> {}, symmetric limits ±{:.6e} -->",
        rgb_hex(RAMP_LOW),
        rgb_hex(RAMP_HIGH),
        vmax
    );
    for r in 0..rows {
        for c in 0..cols {
            let v = values[r * cols + c];
            let t = if vmax == 0.0 {
                0.5
            } else {
                (v + vmax) / (2.0 * vmax)
            };
            let x = c * cell;
            let y = (rows - 1 - r) * cell;
            let _ = writeln!(
                svg,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\"/>",
                ramp_color(t)
            );
        }
    }
    let _ = writeln!(svg, "</svg>");
    fs::write(&svg_path, svg).map_err(|e| SolverError::io(&svg_path, e))?;

    Ok((svg_path, txt_path))
}

fn rgb_hex(c: (u8, u8, u8)) -> String {
    format!("#{:02X}{:02X}{:02X}", c.0, c.1, c.2)
}

/// Read back a values table written by [`export_field`].
pub fn read_field_values(path: &Path) -> Result<Vec<(Vec<f64>, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| SolverError::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if line.ends_with("value") {
            continue; // column header
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    SolverError::InvalidInput(format!("bad numeric field `{s}` in {path:?}"))
                })
            })
            .collect::<Result<_>>()?;
        let (value, coords) = fields.split_last().ok_or_else(|| {
            SolverError::InvalidInput(format!("empty row in {path:?}"))
        })?;
        out.push((coords.to_vec(), *value));
    }
    Ok(out)
}

pub const LOG_HEADER: &str =
    "epoch,stage,loss_interior,loss_boundary,loss_total,relative_error,wall_ms";

/// Append epoch logs as CSV. Writes the header only when the file is new or
/// empty, so successive correction stages can extend one file.
pub fn write_logs(logs: &[EpochLog], path: &Path) -> Result<()> {
    if logs.is_empty() {
        return Err(SolverError::InvalidInput(
            "refusing to write an empty log set".into(),
        ));
    }
    let need_header = match fs::metadata(path) {
        Ok(meta) => meta.len() == 0,
        Err(_) => true,
    };
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| SolverError::io(path, e))?;
    let mut text = String::new();
    if need_header {
        let _ = writeln!(text, "{LOG_HEADER}");
    }
    for log in logs {
        let _ = writeln!(
            text,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            log.epoch,
            log.stage,
            log.loss_interior,
            log.loss_boundary,
            log.loss_total,
            log.relative_error,
            log.wall_ms
        );
    }
    file.write_all(text.as_bytes())
        .map_err(|e| SolverError::io(path, e))?;
    Ok(())
}

/// Parse a CSV produced by [`write_logs`]; full-precision round trip.
pub fn read_logs(path: &Path) -> Result<Vec<EpochLog>> {
    let text = fs::read_to_string(path).map_err(|e| SolverError::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == LOG_HEADER => {}
        other => {
            return Err(SolverError::InvalidInput(format!(
                "unexpected log header {other:?} in {path:?}"
            )))
        }
    }
    let mut logs = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(SolverError::InvalidInput(format!(
                "log row {i} has {} fields, expected 7",
                fields.len()
            )));
        }
        let parse_u = |s: &str| {
            s.parse::<usize>().map_err(|_| {
                SolverError::InvalidInput(format!("bad integer `{s}` in log row {i}"))
            })
        };
        let parse_f = |s: &str| {
            s.parse::<f64>().map_err(|_| {
                SolverError::InvalidInput(format!("bad float `{s}` in log row {i}"))
            })
        };
        logs.push(EpochLog {
            epoch: parse_u(fields[0])?,
            stage: parse_u(fields[1])?,
            loss_interior: parse_f(fields[2])?,
            loss_boundary: parse_f(fields[3])?,
            loss_total: parse_f(fields[4])?,
            relative_error: parse_f(fields[5])?,
            wall_ms: fields[6].parse::<u64>().map_err(|_| {
                SolverError::InvalidInput(format!("bad wall_ms `{}` in log row {i}", fields[6]))
            })?,
        });
    }
    Ok(logs)
}

/// Per-stage summary in an [`EvalReport`].
#[derive(Clone, Debug, PartialEq)]
pub struct StageSummary {
    pub stage: usize,
    /// Relative error of the prefix N^(stage) on S, when φ is known.
    pub relative_error: Option<f64>,
    pub loss_interior: f64,
    pub loss_boundary: f64,
}

/// Evaluation summary of a trained stack.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub problem: String,
    pub stages: usize,
    pub eval_points: usize,
    /// Relative error of the full stack on S, when φ is known.
    pub relative_error: Option<f64>,
    pub per_stage: Vec<StageSummary>,
}

impl EvalReport {
    /// Deterministic `key = value` rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "problem = {}", self.problem);
        let _ = writeln!(out, "stages = {}", self.stages);
        let _ = writeln!(out, "eval_points = {}", self.eval_points);
        match self.relative_error {
            Some(v) => {
                let _ = writeln!(out, "relative_error = {v:.16e}");
            }
            None => {
                let _ = writeln!(out, "relative_error = n/a (no exact solution registered)");
            }
        }
        for s in &self.per_stage {
            match s.relative_error {
                Some(v) => {
                    let _ = writeln!(out, "stage.{}.relative_error = {v:.16e}", s.stage);
                }
                None => {
                    let _ = writeln!(out, "stage.{}.relative_error = n/a", s.stage);
                }
            }
            let _ = writeln!(
                out,
                "stage.{}.loss_interior = {:.16e}",
                s.stage, s.loss_interior
            );
            let _ = writeln!(
                out,
                "stage.{}.loss_boundary = {:.16e}",
                s.stage, s.loss_boundary
            );
        }
        out
    }
}

/// Summarize a stack: prefix relative errors on the seeded evaluation set and
/// per-stage losses on deterministic fresh batches.
pub fn evaluate_stack(
    stack: &CorrectionStack,
    eval_points: usize,
    interior_batch: usize,
    boundary_batch: usize,
) -> Result<EvalReport> {
    if stack.is_empty() {
        return Err(SolverError::StackUnderflow(
            "cannot evaluate an empty stack".into(),
        ));
    }
    let problem = &stack.problem;
    let has_exact = problem.exact_solution().is_some();
    let eval = if has_exact {
        Some(EvalContext::for_problem(problem, stack.seed, eval_points)?)
    } else {
        None
    };

    let mut per_stage = Vec::with_capacity(stack.len());
    for k in 0..stack.len() {
        // Prefix stack through stage k, and its last entry as the candidate.
        let mut prefix = CorrectionStack::new(problem.clone());
        for e in &stack.entries()[..k] {
            prefix.push(e.clone(), Vec::new())?;
        }
        let candidate = stack.entries()[k].field();

        let mut rng = ChaCha8Rng::seed_from_u64(stack.seed);
        rng.set_stream((1 << 32) + k as u64);
        let interior = sample_interior(problem.domain(), interior_batch, &mut rng)?;
        let boundary = sample_boundary(problem.domain(), boundary_batch, &mut rng)?;
        let (li, lb) = minibatch_loss_prefix(&prefix, candidate, &interior, &boundary)?;

        let rel = match &eval {
            Some(ctx) => {
                let mut through = CorrectionStack::new(problem.clone());
                for e in &stack.entries()[..=k] {
                    through.push(e.clone(), Vec::new())?;
                }
                Some(ctx.relative_error_of(&through)?)
            }
            None => None,
        };
        per_stage.push(StageSummary {
            stage: k,
            relative_error: rel,
            loss_interior: li,
            loss_boundary: lb,
        });
    }

    Ok(EvalReport {
        problem: problem.name().to_string(),
        stages: stack.len(),
        eval_points,
        relative_error: per_stage.last().and_then(|s| s.relative_error),
        per_stage,
    })
}

fn minibatch_loss_prefix(
    prefix: &CorrectionStack,
    candidate: &dyn ScalarField,
    interior: &crate::sampling::SampleBatch,
    boundary: &crate::sampling::SampleBatch,
) -> Result<(f64, f64)> {
    crate::training::minibatch_loss(prefix, candidate, interior, boundary)
}
