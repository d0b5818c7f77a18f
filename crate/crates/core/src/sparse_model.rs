//! Nonnegative dictionary learning and sparse coding.
//!
//! The model represents a patch set `X` as `D A` with `D, A >= 0`, minimizing
//!
//! ```text
//!     1/2 ||X - D A||_F^2 + lambda ||A||_{1,1}
//! ```
//!
//! with every dictionary atom constrained to the nonnegative unit ball. The
//! coding subproblem is solved per column by cyclic coordinate descent from a
//! zero start; the dictionary subproblem by projected block-coordinate
//! updates. Both are deterministic, so identical inputs and seeds give
//! bit-identical results.

use std::collections::HashMap;
use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::PatchSet;

/// A learned nonnegative basis for one person in one interval. Every column
/// has Euclidean norm in `(0, 1]`.
#[derive(Debug, Clone)]
pub struct Dictionary {
    pub person_id: usize,
    pub interval: usize,
    pub atoms: Array2<f64>,
}

impl Dictionary {
    pub fn new(person_id: usize, interval: usize, atoms: Array2<f64>) -> Result<Self> {
        if atoms.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::NonFinite(
                "dictionary atoms must be finite and nonnegative".into(),
            ));
        }
        for (i, col) in atoms.columns().into_iter().enumerate() {
            let norm = col.dot(&col).sqrt();
            if norm <= 0.0 || norm > 1.0 + 1e-9 {
                return Err(Error::ShapeMismatch(format!(
                    "atom {i} has norm {norm}, expected (0, 1]"
                )));
            }
        }
        Ok(Self {
            person_id,
            interval,
            atoms,
        })
    }

    pub fn patch_dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.ncols()
    }
}

/// Maps a row range of concatenated codes back to its source dictionary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBlock {
    pub person_id: usize,
    pub rows: Range<usize>,
}

/// Nonnegative coefficients, one column per coded patch.
#[derive(Debug, Clone)]
pub struct SparseCodes {
    pub coeffs: Array2<f64>,
    /// Present for leave-one-out coding against a concatenated dictionary.
    pub blocks: Option<Vec<CodeBlock>>,
}

impl SparseCodes {
    /// Total l1 mass of the coefficients.
    pub fn total_energy(&self) -> f64 {
        self.coeffs.sum()
    }

    /// l1 mass of one block of rows.
    pub fn block_energy(&self, block: &CodeBlock) -> f64 {
        self.coeffs
            .slice(ndarray::s![block.rows.clone(), ..])
            .sum()
    }
}

/// Solver settings shared by coding and dictionary learning.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    /// Sparsity weight (lambda) applied to [0,1]-scaled patches.
    pub sparsity_weight: f64,
    /// Outer alternations in dictionary learning.
    pub max_outer_iter: usize,
    /// Coordinate-descent sweeps per coding call.
    pub max_inner_iter: usize,
    /// Relative objective improvement below which learning stops.
    pub rel_obj_tol: f64,
    /// Max allowed KKT violation for a coding solution.
    pub kkt_tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sparsity_weight: 0.15,
            max_outer_iter: 60,
            max_inner_iter: 200,
            rel_obj_tol: 1e-5,
            kkt_tol: 1e-6,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sparsity_weight > 0.0 && self.sparsity_weight.is_finite()) {
            return Err(Error::Config(format!(
                "sparsity weight must be positive, got {}",
                self.sparsity_weight
            )));
        }
        for (name, v) in [
            ("max_outer_iter", self.max_outer_iter as f64),
            ("max_inner_iter", self.max_inner_iter as f64),
            ("rel_obj_tol", self.rel_obj_tol),
            ("kkt_tol", self.kkt_tol),
        ] {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Copy with a seed derived for one (person, interval) problem, so
    /// parallel scheduling cannot change results.
    pub fn for_problem(&self, person_id: usize, interval: usize) -> SolverConfig {
        let mut cfg = self.clone();
        cfg.seed = self
            .seed
            .wrapping_add((person_id as u64).wrapping_mul(0x9e3779b97f4a7c15))
            .wrapping_add((interval as u64).wrapping_mul(0xd1b54a32d192ed03));
        cfg
    }
}

/// One column's coordinate-descent solve.
///
/// `cost_col` is `D^T x` for this column, `gram` is `D^T D`. The incremental
/// gradient is `g = gram * a - cost_col`; the per-coordinate KKT conditions
/// are `a_i > 0 => |g_i + lambda| <= tol` and `a_i = 0 => g_i + lambda >= -tol`.
fn cd_solve_column(
    cost_col: &[f64],
    gram: &Array2<f64>,
    lambda: f64,
    max_sweeps: usize,
    kkt_tol: f64,
    warm: Option<&[f64]>,
) -> Vec<f64> {
    let k = cost_col.len();
    let mut a = vec![0.0f64; k];
    let mut g: Vec<f64> = cost_col.iter().map(|&c| -c).collect();
    if let Some(start) = warm {
        a.copy_from_slice(start);
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = gram.row(i).dot(&ndarray::ArrayView1::from(&a[..])) - cost_col[i];
        }
    }
    for _ in 0..max_sweeps {
        for i in 0..k {
            let gii = gram[(i, i)];
            if gii <= 0.0 {
                continue;
            }
            let old = a[i];
            let new = (old - (g[i] + lambda) / gii).max(0.0);
            if new != old {
                let delta = new - old;
                let grow = gram.row(i);
                let gs = grow.as_slice().expect("gram rows are contiguous");
                for (gv, &gr) in g.iter_mut().zip(gs) {
                    *gv += delta * gr;
                }
                a[i] = new;
            }
        }
        let mut worst = 0.0f64;
        for i in 0..k {
            let slack = g[i] + lambda;
            let v = if a[i] > 0.0 { slack.abs() } else { (-slack).max(0.0) };
            worst = worst.max(v);
        }
        if worst <= kkt_tol {
            break;
        }
    }
    a
}

fn check_finite(name: &str, m: &ArrayView2<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}

/// Code every column of `data` against `atoms`. Columns are independent, so
/// they run in parallel; results are written by index and stay deterministic.
pub(crate) fn code_matrix(
    data: &ArrayView2<f64>,
    atoms: &ArrayView2<f64>,
    cfg: &SolverConfig,
    warm: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    if data.nrows() != atoms.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "data has {} rows but atoms have {}",
            data.nrows(),
            atoms.nrows()
        )));
    }
    check_finite("patch data", data)?;
    check_finite("dictionary atoms", atoms)?;
    let k = atoms.ncols();
    let n = data.ncols();
    let gram = atoms.t().dot(atoms);
    let cost = atoms.t().dot(data); // k x n
    let lambda = cfg.sparsity_weight;
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let c: Vec<f64> = cost.column(j).to_vec();
            let w: Option<Vec<f64>> = warm.map(|w| w.column(j).to_vec());
            cd_solve_column(
                &c,
                &gram,
                lambda,
                cfg.max_inner_iter,
                cfg.kkt_tol,
                w.as_deref(),
            )
        })
        .collect();
    let mut out = Array2::zeros((k, n));
    for (j, col) in columns.iter().enumerate() {
        out.column_mut(j).assign(&Array1::from_vec(col.clone()));
    }
    Ok(out)
}

/// Minimize `1/2 ||X - D A||_F^2 + lambda ||A||_{1,1}` over `A >= 0` with the
/// dictionary fixed.
pub fn sparse_code(x: &PatchSet, dict: &Dictionary, cfg: &SolverConfig) -> Result<SparseCodes> {
    cfg.validate()?;
    let coeffs = code_matrix(&x.data.view(), &dict.atoms.view(), cfg, None)?;
    Ok(SparseCodes {
        coeffs,
        blocks: None,
    })
}

/// Value of the learning objective at `(atoms, codes)`.
///
/// Residuals are accumulated per column and summed sequentially, keeping the
/// result independent of thread scheduling.
pub fn objective(
    data: &ArrayView2<f64>,
    atoms: &ArrayView2<f64>,
    codes: &ArrayView2<f64>,
    lambda: f64,
) -> f64 {
    let atoms_t = atoms.t().to_owned(); // k x m, rows contiguous
    let per_column: Vec<f64> = (0..data.ncols())
        .into_par_iter()
        .map(|j| {
            let mut r: Vec<f64> = data.column(j).to_vec();
            for (i, &a) in codes.column(j).iter().enumerate() {
                if a != 0.0 {
                    let atom = atoms_t.row(i);
                    let atom = atom.as_slice().expect("contiguous");
                    for (rv, &dv) in r.iter_mut().zip(atom) {
                        *rv -= a * dv;
                    }
                }
            }
            0.5 * r.iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    per_column.iter().sum::<f64>() + lambda * codes.sum()
}

/// Largest KKT violation of `codes` for the coding problem, recomputed from
/// scratch (independent of the solver's incremental bookkeeping).
pub fn kkt_violation(
    data: &ArrayView2<f64>,
    atoms: &ArrayView2<f64>,
    codes: &ArrayView2<f64>,
    lambda: f64,
) -> f64 {
    let residual_grams: Vec<f64> = (0..data.ncols())
        .into_par_iter()
        .map(|j| {
            let x = data.column(j);
            let a = codes.column(j);
            let da = atoms.dot(&a);
            let r = &da - &x;
            let g = atoms.t().dot(&r);
            let mut worst = 0.0f64;
            for (i, &gi) in g.iter().enumerate() {
                let slack = gi + lambda;
                let v = if a[i] > 0.0 { slack.abs() } else { (-slack).max(0.0) };
                worst = worst.max(v);
            }
            worst
        })
        .collect();
    residual_grams.into_iter().fold(0.0, f64::max)
}

/// Project onto the nonnegative unit ball: clamp negatives, then rescale if
/// the norm exceeds one.
fn project_atom(mut v: Array1<f64>) -> Array1<f64> {
    v.mapv_inplace(|x| x.max(0.0));
    let norm = v.dot(&v).sqrt();
    if norm > 1.0 {
        v /= norm;
    }
    v
}

/// Learn a `k`-atom dictionary by alternating minimization.
///
/// Returns the dictionary, the codes for the returned dictionary, and the
/// objective value after each outer iteration (non-increasing).
pub fn learn_dictionary(
    x: &PatchSet,
    k: usize,
    cfg: &SolverConfig,
) -> Result<(Dictionary, SparseCodes, Vec<f64>)> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::Config("dictionary size must be >= 1".into()));
    }
    let n = x.patch_count();
    if n < k {
        return Err(Error::InsufficientData { needed: k, got: n });
    }
    check_finite("patch data", &x.data.view())?;
    let lambda = cfg.sparsity_weight;

    // Initialize with k distinct nonzero data columns, normalized.
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let mut atoms = Array2::zeros((x.patch_dim(), k));
    let mut filled = 0;
    for &j in &order {
        if filled == k {
            break;
        }
        let col = x.data.column(j);
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            atoms.column_mut(filled).assign(&(&col / norm));
            filled += 1;
        }
    }
    if filled < k {
        return Err(Error::InsufficientData {
            needed: k,
            got: filled,
        });
    }

    let mut codes: Option<Array2<f64>> = None;
    let mut trace: Vec<f64> = Vec::new();
    for _ in 0..cfg.max_outer_iter {
        // Coding step. A fresh zero-start solve can in principle end a hair
        // above the carried codes' objective (both are within solver
        // tolerance of the subproblem optimum); extra sweeps from the carried
        // codes are monotone per sweep and restore the descent guarantee.
        let mut a = code_matrix(&x.data.view(), &atoms.view(), cfg, None)?;
        if let Some(prev) = &codes {
            let fresh = objective(&x.data.view(), &atoms.view(), &a.view(), lambda);
            let carried = objective(&x.data.view(), &atoms.view(), &prev.view(), lambda);
            if fresh > carried {
                a = code_matrix(&x.data.view(), &atoms.view(), cfg, Some(prev))?;
            }
        }

        // Dictionary step: per-atom exact minimization, projected.
        let b = x.data.dot(&a.t()); // m x k
        let code_gram = a.dot(&a.t()); // k x k
        let mut worst_column: Option<usize> = None;
        for i in 0..k {
            let cgii = code_gram[(i, i)];
            if cgii > 0.0 {
                let d_cg = atoms.dot(&code_gram.column(i));
                let u = &atoms.column(i) + &((&b.column(i) - &d_cg) / cgii);
                let u = project_atom(u);
                if u.iter().any(|&v| v > 0.0) {
                    atoms.column_mut(i).assign(&u);
                }
                // an all-zero projection keeps the previous atom; the column
                // goes dead and is reseeded below or next round
            } else {
                // Dead atom (unused by every code): reseed from the worst
                // represented column. Its code row is zero, so the objective
                // is unaffected.
                let j = *worst_column.get_or_insert_with(|| {
                    worst_represented_column(&x.data.view(), &atoms.view(), &a.view())
                });
                let col = x.data.column(j);
                let norm = col.dot(&col).sqrt();
                if norm > 0.0 {
                    atoms.column_mut(i).assign(&(&col / norm));
                }
            }
        }

        let obj = objective(&x.data.view(), &atoms.view(), &a.view(), lambda);
        let converged = trace
            .last()
            .is_some_and(|prev| prev - obj <= cfg.rel_obj_tol * prev.abs().max(f64::MIN_POSITIVE));
        trace.push(obj);
        codes = Some(a);
        if converged {
            break;
        }
    }

    let codes = codes.expect("at least one outer iteration");
    let dict = Dictionary::new(x.person_id, x.interval, atoms)?;
    Ok((
        dict,
        SparseCodes {
            coeffs: codes,
            blocks: None,
        },
        trace,
    ))
}

fn worst_represented_column(
    data: &ArrayView2<f64>,
    atoms: &ArrayView2<f64>,
    codes: &ArrayView2<f64>,
) -> usize {
    let errs: Vec<f64> = (0..data.ncols())
        .into_par_iter()
        .map(|j| {
            let r = &data.column(j) - &atoms.dot(&codes.column(j));
            r.dot(&r)
        })
        .collect();
    errs.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(j, _)| j)
        .unwrap_or(0)
}

/// Minimized coding objective `R*(X, D)`: the representation error of `x`
/// under the fixed dictionary.
pub fn representation_error(x: &PatchSet, dict: &Dictionary, cfg: &SolverConfig) -> Result<f64> {
    let codes = sparse_code(x, dict, cfg)?;
    Ok(objective(
        &x.data.view(),
        &dict.atoms.view(),
        &codes.coeffs.view(),
        cfg.sparsity_weight,
    ))
}

/// Cache of representation errors keyed by (patch set, dictionary) identity.
///
/// The temporal and spatio-temporal measures reuse each solve several times;
/// `solve_count` exposes how many distinct solves actually ran.
#[derive(Debug, Default)]
pub struct RepErrorCache {
    values: HashMap<(usize, usize, usize, usize), f64>,
    pub solve_count: usize,
}

impl RepErrorCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(x: &PatchSet, dict: &Dictionary) -> (usize, usize, usize, usize) {
        (x.person_id, x.interval, dict.person_id, dict.interval)
    }

    pub fn get_or_solve(
        &mut self,
        x: &PatchSet,
        dict: &Dictionary,
        cfg: &SolverConfig,
    ) -> Result<f64> {
        let key = Self::key(x, dict);
        if let Some(&v) = self.values.get(&key) {
            return Ok(v);
        }
        let v = representation_error(x, dict, cfg)?;
        self.values.insert(key, v);
        self.solve_count += 1;
        Ok(v)
    }

    /// Solve any missing (patch set, dictionary) pairs in parallel.
    pub fn precompute(
        &mut self,
        tasks: &[(&PatchSet, &Dictionary)],
        cfg: &SolverConfig,
    ) -> Result<()> {
        let mut missing: Vec<(usize, (usize, usize, usize, usize))> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (idx, (x, d)) in tasks.iter().enumerate() {
            let key = Self::key(x, d);
            if !self.values.contains_key(&key) && seen.insert(key) {
                missing.push((idx, key));
            }
        }
        let solved: Vec<Result<f64>> = missing
            .par_iter()
            .map(|&(idx, _)| {
                let (x, d) = tasks[idx];
                representation_error(x, d, cfg)
            })
            .collect();
        for ((_, key), value) in missing.into_iter().zip(solved) {
            self.values.insert(key, value?);
            self.solve_count += 1;
        }
        Ok(())
    }
}
