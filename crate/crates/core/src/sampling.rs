//! Monte-Carlo minibatch sampling on box domains and deterministic
//! evaluation grids.
//!
//! Interior and boundary draws are uniform (with respect to volume and
//! surface measure respectively); the generator is owned by the caller so a
//! fixed seed reproduces every batch bit-for-bit.

use rand::distributions::Uniform;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SolverError};
use crate::problems::Domain;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Interior,
    Boundary,
}

#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub points: Vec<Vec<f64>>,
    pub region: Region,
    /// Generator word position at the start of the draw, recorded so a batch
    /// can be re-derived from (seed, position).
    pub seed_pos: u128,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Draw `m` i.i.d. uniform points from the open box. Points exactly on a
/// face are redrawn, so containment is strict.
pub fn sample_interior(domain: &Domain, m: usize, rng: &mut ChaCha8Rng) -> Result<SampleBatch> {
    if m == 0 {
        return Err(SolverError::InvalidConfig(
            "interior batch size must be ≥ 1".into(),
        ));
    }
    let seed_pos = rng.get_word_pos();
    let d = domain.dim();
    let dists: Vec<Uniform<f64>> = (0..d)
        .map(|i| Uniform::new(domain.lo()[i], domain.hi()[i]))
        .collect();
    let mut points = Vec::with_capacity(m);
    while points.len() < m {
        let p: Vec<f64> = dists.iter().map(|dist| rng.sample(dist)).collect();
        if domain.contains_interior(&p) {
            points.push(p);
        }
    }
    Ok(SampleBatch {
        points,
        region: Region::Interior,
        seed_pos,
    })
}

/// Draw `n` points uniformly from the boundary: a face is chosen with
/// probability proportional to its (d−1)-measure, then the free coordinates
/// are uniform on the face. For d = 1 the boundary is the two endpoints with
/// equal probability.
pub fn sample_boundary(domain: &Domain, n: usize, rng: &mut ChaCha8Rng) -> Result<SampleBatch> {
    if n == 0 {
        return Err(SolverError::InvalidConfig(
            "boundary batch size must be ≥ 1".into(),
        ));
    }
    let seed_pos = rng.get_word_pos();
    let d = domain.dim();

    // Measure of each face pair: Π_{j≠i} side_j (an empty product for d=1).
    let pair_measure: Vec<f64> = (0..d)
        .map(|i| {
            (0..d)
                .filter(|j| *j != i)
                .map(|j| domain.side(j))
                .product::<f64>()
        })
        .collect();
    let total: f64 = 2.0 * pair_measure.iter().sum::<f64>();
    let face_dist = Uniform::new(0.0, total);

    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u = rng.sample(face_dist);
        let mut axis = d - 1;
        let mut high = true;
        'faces: for i in 0..d {
            for h in [false, true] {
                if u < pair_measure[i] {
                    axis = i;
                    high = h;
                    break 'faces;
                }
                u -= pair_measure[i];
            }
        }
        let mut p = vec![0.0; d];
        for j in 0..d {
            if j == axis {
                p[j] = if high { domain.hi()[j] } else { domain.lo()[j] };
            } else {
                p[j] = rng.sample(Uniform::new(domain.lo()[j], domain.hi()[j]));
            }
        }
        points.push(p);
    }
    Ok(SampleBatch {
        points,
        region: Region::Boundary,
        seed_pos,
    })
}

/// Deterministic tensor grid including endpoints, lexicographic order with
/// the last free axis fastest. `slice` pins named axes to fixed values; the
/// grid then spans the remaining axes while every output point keeps full
/// dimension.
pub fn eval_grid(
    domain: &Domain,
    resolution: usize,
    slice: Option<&[(usize, f64)]>,
) -> Result<Vec<Vec<f64>>> {
    if resolution < 2 {
        return Err(SolverError::InvalidConfig(
            "grid resolution must be ≥ 2".into(),
        ));
    }
    let d = domain.dim();
    let mut pinned: Vec<Option<f64>> = vec![None; d];
    if let Some(slices) = slice {
        for (axis, value) in slices {
            if *axis >= d {
                return Err(SolverError::InvalidConfig(format!(
                    "slice axis {axis} out of range for dimension {d}"
                )));
            }
            if pinned[*axis].is_some() {
                return Err(SolverError::InvalidConfig(format!(
                    "slice axis {axis} pinned twice"
                )));
            }
            pinned[*axis] = Some(*value);
        }
    }
    let free: Vec<usize> = (0..d).filter(|i| pinned[*i].is_none()).collect();
    if free.is_empty() {
        return Err(SolverError::InvalidConfig(
            "slice pins every axis; nothing to grid".into(),
        ));
    }

    let count = resolution.pow(free.len() as u32);
    let mut points = Vec::with_capacity(count);
    let mut index = vec![0usize; free.len()];
    loop {
        let mut p = vec![0.0; d];
        for (slot, axis) in free.iter().enumerate() {
            let t = index[slot] as f64 / (resolution - 1) as f64;
            p[*axis] = domain.lo()[*axis] + domain.side(*axis) * t;
        }
        for (axis, pin) in pinned.iter().enumerate() {
            if let Some(v) = pin {
                p[axis] = *v;
            }
        }
        points.push(p);

        // Odometer increment, last axis fastest.
        let mut slot = free.len();
        loop {
            if slot == 0 {
                return Ok(points);
            }
            slot -= 1;
            index[slot] += 1;
            if index[slot] < resolution {
                break;
            }
            index[slot] = 0;
        }
    }
}
