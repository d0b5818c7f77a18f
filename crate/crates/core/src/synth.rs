//! Ground-truth synthetic data and verification oracles.
//!
//! Scenarios plant actions as well-separated nonnegative subspaces: every
//! patch of a (person, interval) cell is a sparse nonnegative combination of
//! that cell's action basis plus rectified noise. The exact nonnegative-lasso
//! oracle enumerates supports and is used to certify the iterative solver.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::PatchSet;

const BASIS_REJECTION_LIMIT: usize = 1000;

/// A planted multi-person, multi-interval scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub persons: usize,
    pub intervals: usize,
    /// `assignments[person][interval]` = zero-based action id.
    pub assignments: Vec<Vec<usize>>,
    /// Patch dimension m.
    pub patch_dim: usize,
    /// Atoms per action basis (subspace dimension d, d << m).
    pub subspace_dim: usize,
    /// Nonzero coefficients per generated patch.
    pub code_sparsity: usize,
    /// Rectified Gaussian noise level.
    pub noise: f64,
    /// Patches per (person, interval) cell.
    pub patches_per_set: usize,
    /// Largest allowed cosine between atoms of different actions.
    pub max_cross_cosine: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.persons == 0 || self.intervals == 0 {
            return Err(Error::Config("scenario needs persons and intervals".into()));
        }
        if self.assignments.len() != self.persons
            || self.assignments.iter().any(|row| row.len() != self.intervals)
        {
            return Err(Error::Config(format!(
                "assignments must be {}x{}",
                self.persons, self.intervals
            )));
        }
        if self.subspace_dim == 0 || self.code_sparsity == 0 {
            return Err(Error::Config(
                "subspace_dim and code_sparsity must be >= 1".into(),
            ));
        }
        if self.code_sparsity > self.subspace_dim {
            return Err(Error::Config(format!(
                "code_sparsity {} exceeds subspace_dim {}",
                self.code_sparsity, self.subspace_dim
            )));
        }
        if self.noise < 0.0 {
            return Err(Error::Config("noise must be >= 0".into()));
        }
        if self.patches_per_set == 0 || self.patch_dim == 0 {
            return Err(Error::Config(
                "patch_dim and patches_per_set must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.max_cross_cosine) {
            return Err(Error::Config("max_cross_cosine must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn action_count(&self) -> usize {
        self.assignments
            .iter()
            .flat_map(|row| row.iter())
            .max()
            .map(|&a| a + 1)
            .unwrap_or(0)
    }
}

/// Generated patch sets plus the ground truth behind them.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    /// `patchsets[person][interval]`, person ids are one-based downstream.
    pub patchsets: Vec<Vec<PatchSet>>,
    /// One basis per action id.
    pub bases: Vec<Array2<f64>>,
}

fn draw_atom(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    // Sparse supports keep random nonnegative atoms from all pointing the
    // same way; dense ones would have pairwise cosine around 0.75.
    let support = (dim / 10).max(1).min(dim);
    let positions = rand::seq::index::sample(rng, dim, support);
    let mut atom = Array1::zeros(dim);
    for p in positions {
        atom[p] = rng.random_range(0.5..1.0);
    }
    let norm = atom.dot(&atom).sqrt();
    atom / norm
}

fn max_cross_cosine(bases: &[Array2<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in bases.iter().enumerate() {
        for b in bases.iter().skip(i + 1) {
            for col_a in a.columns() {
                for col_b in b.columns() {
                    worst = worst.max(col_a.dot(&col_b));
                }
            }
        }
    }
    worst
}

/// Generate all patch sets of a scenario. Deterministic per seed.
pub fn generate(scenario: &Scenario) -> Result<GeneratedData> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let actions = scenario.action_count();

    let mut bases: Vec<Array2<f64>> = Vec::new();
    let mut accepted = false;
    for _ in 0..BASIS_REJECTION_LIMIT {
        bases = (0..actions)
            .map(|_| {
                let mut b = Array2::zeros((scenario.patch_dim, scenario.subspace_dim));
                for mut col in b.columns_mut() {
                    col.assign(&draw_atom(&mut rng, scenario.patch_dim));
                }
                b
            })
            .collect();
        if actions < 2 || max_cross_cosine(&bases) <= scenario.max_cross_cosine {
            accepted = true;
            break;
        }
    }
    if !accepted {
        return Err(Error::SeparationInfeasible(BASIS_REJECTION_LIMIT));
    }

    let normal = StandardNormal;
    let mut patchsets = Vec::with_capacity(scenario.persons);
    for person in 0..scenario.persons {
        let mut row = Vec::with_capacity(scenario.intervals);
        for interval in 0..scenario.intervals {
            let basis = &bases[scenario.assignments[person][interval]];
            let mut data = Array2::zeros((scenario.patch_dim, scenario.patches_per_set));
            for j in 0..scenario.patches_per_set {
                let chosen =
                    rand::seq::index::sample(&mut rng, scenario.subspace_dim, scenario.code_sparsity);
                let mut clean: Array1<f64> = Array1::zeros(scenario.patch_dim);
                for atom_idx in chosen {
                    let weight = rng.random_range(0.5..1.5);
                    clean = clean + &basis.column(atom_idx) * weight;
                }
                // Rescale into [0, 1] when needed; the patch stays inside the
                // planted cone, which is what downstream modeling sees.
                let peak = clean.iter().cloned().fold(0.0, f64::max);
                if peak > 1.0 {
                    clean /= peak;
                }
                for (row_idx, &v) in clean.iter().enumerate() {
                    let eps: f64 = normal.sample(&mut rng);
                    data[(row_idx, j)] = (v + scenario.noise * eps).clamp(0.0, 1.0);
                }
            }
            row.push(PatchSet::new(person + 1, interval, data)?);
        }
        patchsets.push(row);
    }
    Ok(GeneratedData { patchsets, bases })
}

/// Exact nonnegative-lasso solution of
/// `min_{a >= 0} 1/2 ||x - D a||^2 + lambda * sum(a)` by support enumeration.
///
/// Every support's stationarity system is solved; candidates with nonnegative
/// coefficients passing the full KKT conditions compete on objective value.
/// Limited to 12 atoms (2^k supports). Independent of the iterative solver.
pub fn oracle_nn_lasso(x: &ArrayView1<f64>, atoms: &Array2<f64>, lambda: f64) -> Result<Array1<f64>> {
    let k = atoms.ncols();
    if k > 12 {
        return Err(Error::OracleTooLarge(k));
    }
    if atoms.nrows() != x.len() {
        return Err(Error::ShapeMismatch(format!(
            "x has {} rows, atoms have {}",
            x.len(),
            atoms.nrows()
        )));
    }
    let gram = atoms.t().dot(atoms);
    let corr = atoms.t().dot(x);
    let kkt_tol = 1e-9;

    let objective_of = |a: &Array1<f64>| -> f64 {
        let r = x - &atoms.dot(a);
        0.5 * r.dot(&r) + lambda * a.sum()
    };
    let kkt_ok = |a: &Array1<f64>| -> bool {
        let g = gram.dot(a) - &corr;
        a.iter().zip(g.iter()).all(|(&ai, &gi)| {
            let slack = gi + lambda;
            if ai > 0.0 {
                slack.abs() <= kkt_tol * (1.0 + corr.iter().cloned().fold(0.0, f64::max))
            } else {
                slack >= -kkt_tol * (1.0 + corr.iter().cloned().fold(0.0, f64::max))
            }
        })
    };

    let mut best: Option<(f64, Array1<f64>)> = None;
    let mut fallback: Option<(f64, Array1<f64>)> = None;
    for mask in 0..(1usize << k) {
        let support: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let mut candidate = Array1::zeros(k);
        if !support.is_empty() {
            let s = support.len();
            let mut sys = vec![vec![0.0f64; s + 1]; s];
            for (r, &i) in support.iter().enumerate() {
                for (c, &j) in support.iter().enumerate() {
                    sys[r][c] = gram[(i, j)];
                }
                sys[r][s] = corr[i] - lambda;
            }
            let Some(solution) = solve_linear(sys) else {
                continue;
            };
            if solution.iter().any(|&v| v < -1e-12) {
                continue;
            }
            for (&i, &v) in support.iter().zip(solution.iter()) {
                candidate[i] = v.max(0.0);
            }
        }
        let obj = objective_of(&candidate);
        if fallback.as_ref().is_none_or(|(fo, _)| obj < *fo) {
            fallback = Some((obj, candidate.clone()));
        }
        if kkt_ok(&candidate) && best.as_ref().is_none_or(|(bo, _)| obj < *bo) {
            best = Some((obj, candidate));
        }
    }
    Ok(best
        .or(fallback)
        .map(|(_, a)| a)
        .expect("the empty support is always a candidate"))
}

/// Gaussian elimination with partial pivoting on an augmented system.
fn solve_linear(mut sys: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = sys.len();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&a, &b| sys[a][col].abs().partial_cmp(&sys[b][col].abs()).unwrap())?;
        if sys[pivot_row][col].abs() < 1e-12 {
            return None;
        }
        sys.swap(col, pivot_row);
        for row in 0..n {
            if row != col {
                let factor = sys[row][col] / sys[col][col];
                for c in col..=n {
                    let v = sys[col][c];
                    sys[row][c] -= factor * v;
                }
            }
        }
    }
    Some((0..n).map(|i| sys[i][n] / sys[i][i]).collect())
}
