//! Per-interval action grouping.
//!
//! Each person's patches are coded against the concatenation of everyone
//! else's dictionaries (leave-one-out). The l1 mass a person's codes place on
//! another's atoms, normalized and symmetrized by a minimum, forms the
//! action-similarity matrix; thresholding at `r / (P - 1)` and taking
//! connected components yields the groups.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::PatchSet;
use crate::sparse_model::{code_matrix, CodeBlock, Dictionary, SolverConfig, SparseCodes};

/// Symmetric person-by-person action similarity with unit diagonal.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    pub person_ids: Vec<usize>,
    pub entries: Array2<f64>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GroupingConfig {
    /// Relaxation constant r in [0, 1]; the edge threshold is r / (P - 1).
    pub relaxation: f64,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self { relaxation: 0.9 }
    }
}

impl GroupingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.relaxation) {
            return Err(Error::Config(format!(
                "relaxation must lie in [0, 1], got {}",
                self.relaxation
            )));
        }
        Ok(())
    }
}

/// The grouping of one interval: partition blocks are disjoint, cover every
/// present person, and are ordered by smallest member id.
#[derive(Debug, Clone)]
pub struct GroupingResult {
    pub partition: Vec<Vec<usize>>,
    pub tau: f64,
    pub similarity: AffinityMatrix,
    pub adjacency: Array2<bool>,
    pub warnings: Vec<String>,
}

/// Code person `j` (an index into the slices) against the concatenation of
/// every other person's dictionary, in ascending position order.
pub fn loo_code(
    j: usize,
    patchsets: &[PatchSet],
    dicts: &[Dictionary],
    cfg: &SolverConfig,
) -> Result<SparseCodes> {
    if patchsets.len() < 3 {
        return Err(Error::UseSpecialCase("leave-one-out grouping"));
    }
    if patchsets.len() != dicts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} patch sets but {} dictionaries",
            patchsets.len(),
            dicts.len()
        )));
    }
    let m = patchsets[j].patch_dim();
    let mut blocks = Vec::new();
    let mut total_atoms = 0;
    for (i, d) in dicts.iter().enumerate() {
        if i == j {
            continue;
        }
        if d.patch_dim() != m {
            return Err(Error::ShapeMismatch(format!(
                "dictionary for person {} has {} rows, expected {}",
                d.person_id,
                d.patch_dim(),
                m
            )));
        }
        blocks.push(CodeBlock {
            person_id: d.person_id,
            rows: total_atoms..total_atoms + d.atom_count(),
        });
        total_atoms += d.atom_count();
    }
    let mut concatenated = Array2::zeros((m, total_atoms));
    let mut offset = 0;
    for (i, d) in dicts.iter().enumerate() {
        if i == j {
            continue;
        }
        concatenated
            .slice_mut(ndarray::s![.., offset..offset + d.atom_count()])
            .assign(&d.atoms);
        offset += d.atom_count();
    }
    let coeffs = code_matrix(
        &patchsets[j].data.view(),
        &concatenated.view(),
        cfg,
        None,
    )?;
    Ok(SparseCodes {
        coeffs,
        blocks: Some(blocks),
    })
}

/// Assemble the similarity matrix from every person's leave-one-out codes.
///
/// `s_ij = min(E(i on j) / E(i), E(j on i) / E(j))` with block energies `E`;
/// the diagonal is 1. A person whose total code energy vanishes gets zero
/// off-diagonals and a warning.
pub fn similarity_matrix(
    loo_codes: &[SparseCodes],
    person_ids: &[usize],
) -> Result<(AffinityMatrix, Vec<String>)> {
    let p = person_ids.len();
    if loo_codes.len() != p {
        return Err(Error::ShapeMismatch(format!(
            "{} code sets for {} persons",
            loo_codes.len(),
            p
        )));
    }
    let mut warnings = Vec::new();
    // share[i][j] = energy person i places on person j's atoms / total of i
    let mut share = Array2::zeros((p, p));
    for (i, codes) in loo_codes.iter().enumerate() {
        let blocks = codes.blocks.as_ref().ok_or_else(|| {
            Error::ShapeMismatch(format!(
                "codes for person {} carry no block index",
                person_ids[i]
            ))
        })?;
        let total = codes.total_energy();
        if total <= 0.0 {
            warnings.push(format!(
                "person {} has zero leave-one-out code energy; treating as dissimilar to everyone",
                person_ids[i]
            ));
            continue;
        }
        for block in blocks {
            let j = person_ids
                .iter()
                .position(|&id| id == block.person_id)
                .ok_or_else(|| {
                    Error::ShapeMismatch(format!("unknown person {} in blocks", block.person_id))
                })?;
            share[(i, j)] = codes.block_energy(block) / total;
        }
    }
    let mut entries = Array2::zeros((p, p));
    for i in 0..p {
        entries[(i, i)] = 1.0;
        for j in i + 1..p {
            let s = share[(i, j)].min(share[(j, i)]);
            entries[(i, j)] = s;
            entries[(j, i)] = s;
        }
    }
    Ok((
        AffinityMatrix {
            person_ids: person_ids.to_vec(),
            entries,
        },
        warnings,
    ))
}

/// Threshold of the similarity graph for `p_present` persons.
pub fn threshold(relaxation: f64, p_present: usize) -> f64 {
    relaxation / (p_present as f64 - 1.0)
}

/// Keep edges with `s_ij >= tau`, `tau = r / (P_present - 1)`.
pub fn binarize(s: &AffinityMatrix, cfg: &GroupingConfig) -> Array2<bool> {
    let p = s.person_ids.len();
    let tau = threshold(cfg.relaxation, p);
    Array2::from_shape_fn((p, p), |(i, j)| i == j || s.entries[(i, j)] >= tau)
}

/// Connected components of the adjacency, each sorted ascending and the list
/// ordered by smallest member id.
pub fn connected_components(adjacency: &Array2<bool>, person_ids: &[usize]) -> Vec<Vec<usize>> {
    let p = person_ids.len();
    let mut seen = vec![false; p];
    let mut partition = Vec::new();
    for start in 0..p {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        let mut component = Vec::new();
        seen[start] = true;
        while let Some(v) = stack.pop() {
            component.push(person_ids[v]);
            for u in 0..p {
                if !seen[u] && (adjacency[(v, u)] || adjacency[(u, v)]) {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        component.sort_unstable();
        partition.push(component);
    }
    partition.sort_by_key(|c| c[0]);
    partition
}

/// Full per-interval grouping: leave-one-out coding for every person (in
/// parallel), similarity, binarization, components.
pub fn group_actions(
    patchsets: &[PatchSet],
    dicts: &[Dictionary],
    solver_cfg: &SolverConfig,
    grouping_cfg: &GroupingConfig,
) -> Result<GroupingResult> {
    grouping_cfg.validate()?;
    if patchsets.len() < 3 {
        return Err(Error::UseSpecialCase("per-interval grouping"));
    }
    let codes: Vec<Result<SparseCodes>> = (0..patchsets.len())
        .into_par_iter()
        .map(|j| loo_code(j, patchsets, dicts, solver_cfg))
        .collect();
    let codes: Vec<SparseCodes> = codes.into_iter().collect::<Result<_>>()?;
    let person_ids: Vec<usize> = patchsets.iter().map(|s| s.person_id).collect();
    let (similarity, warnings) = similarity_matrix(&codes, &person_ids)?;
    let adjacency = binarize(&similarity, grouping_cfg);
    let partition = connected_components(&adjacency, &person_ids);
    Ok(GroupingResult {
        partition,
        tau: threshold(grouping_cfg.relaxation, person_ids.len()),
        similarity,
        adjacency,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn unit_cols(mut m: Array2<f64>) -> Array2<f64> {
        for mut col in m.columns_mut() {
            let norm = col.dot(&col).sqrt();
            if norm > 0.0 {
                col /= norm;
            }
        }
        m
    }

    fn person_dict(person_id: usize, atoms: Array2<f64>) -> Dictionary {
        Dictionary::new(person_id, 0, unit_cols(atoms)).unwrap()
    }

    fn three_person_setup() -> (Vec<PatchSet>, Vec<Dictionary>) {
        // persons 1 and 3 share a direction; person 2 is orthogonal-ish
        let shared = array![[0.9, 0.7], [0.4, 0.7], [0.0, 0.1], [0.1, 0.0]];
        let other = array![[0.0, 0.1], [0.1, 0.0], [0.9, 0.6], [0.4, 0.8]];
        let build = |person_id: usize, basis: &Array2<f64>| {
            let nb = unit_cols(basis.clone());
            let mut data = Array2::zeros((4, 6));
            for j in 0..6 {
                let w = 0.4 + 0.1 * (j % 3) as f64;
                data.column_mut(j).assign(&(&nb.column(j % 2) * w));
            }
            PatchSet::new(person_id, 0, data).unwrap()
        };
        let sets = vec![build(1, &shared), build(2, &other), build(3, &shared)];
        let dicts = vec![
            person_dict(1, shared.clone()),
            person_dict(2, other.clone()),
            person_dict(3, shared),
        ];
        (sets, dicts)
    }

    #[test]
    fn loo_blocks_skip_the_coded_person_in_order() {
        let (sets, dicts) = three_person_setup();
        let cfg = SolverConfig::default();
        let codes = loo_code(1, &sets, &dicts, &cfg).unwrap();
        let blocks = codes.blocks.unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].person_id, 1);
        assert_eq!(blocks[1].person_id, 3);
        assert_eq!(blocks[0].rows, 0..2);
        assert_eq!(blocks[1].rows, 2..4);
    }

    #[test]
    fn zero_patches_code_to_zero_blocks() {
        let (mut sets, dicts) = three_person_setup();
        sets[0] = PatchSet {
            person_id: 1,
            interval: 0,
            data: Array2::zeros((4, 6)),
        };
        let codes = loo_code(0, &sets, &dicts, &SolverConfig::default()).unwrap();
        assert!(codes.coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loo_needs_three_persons() {
        let (sets, dicts) = three_person_setup();
        assert!(matches!(
            loo_code(0, &sets[..2], &dicts[..2], &SolverConfig::default()),
            Err(Error::UseSpecialCase(_))
        ));
    }

    fn manual_codes(shares: &[(usize, f64)], width: usize) -> SparseCodes {
        // one column; each block one row with the stated energy
        let mut coeffs = Array2::zeros((shares.len(), width));
        let mut blocks = Vec::new();
        for (row, (person_id, energy)) in shares.iter().enumerate() {
            coeffs[(row, 0)] = *energy;
            blocks.push(CodeBlock {
                person_id: *person_id,
                rows: row..row + 1,
            });
        }
        SparseCodes {
            coeffs,
            blocks: Some(blocks),
        }
    }

    #[test]
    fn equal_energies_give_uniform_off_diagonals() {
        let ids = [1, 2, 3, 4];
        let codes: Vec<SparseCodes> = ids
            .iter()
            .map(|&j| {
                let shares: Vec<(usize, f64)> = ids
                    .iter()
                    .filter(|&&i| i != j)
                    .map(|&i| (i, 2.0))
                    .collect();
                manual_codes(&shares, 1)
            })
            .collect();
        let (s, warnings) = similarity_matrix(&codes, &ids).unwrap();
        assert!(warnings.is_empty());
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 1.0 } else { 1.0 / 3.0 };
                assert!((s.entries[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_energy_person_is_isolated_with_warning() {
        let ids = [1, 2, 3];
        let codes = vec![
            manual_codes(&[(2, 1.0), (3, 1.0)], 1),
            manual_codes(&[(1, 0.0), (3, 0.0)], 1),
            manual_codes(&[(1, 1.0), (2, 1.0)], 1),
        ];
        let (s, warnings) = similarity_matrix(&codes, &ids).unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(s.entries[(1, 0)], 0.0);
        assert_eq!(s.entries[(1, 2)], 0.0);
        assert_eq!(s.entries[(1, 1)], 1.0);
    }

    #[test]
    fn similarity_is_symmetric_with_unit_diagonal() {
        let (sets, dicts) = three_person_setup();
        let result = group_actions(
            &sets,
            &dicts,
            &SolverConfig {
                sparsity_weight: 0.05,
                ..SolverConfig::default()
            },
            &GroupingConfig::default(),
        )
        .unwrap();
        let s = &result.similarity.entries;
        for i in 0..3 {
            assert_eq!(s[(i, i)], 1.0);
            for j in 0..3 {
                assert_eq!(s[(i, j)], s[(j, i)]);
                assert!((0.0..=1.0).contains(&s[(i, j)]));
            }
        }
        // persons 1 and 3 share an action; person 2 stands apart
        assert_eq!(
            result.partition,
            vec![vec![1, 3], vec![2]],
            "similarity was {s:?}"
        );
    }

    #[test]
    fn tau_follows_the_present_person_count() {
        assert!((threshold(0.9, 4) - 0.3).abs() < 1e-15);
        assert!((threshold(0.9, 5) - 0.225).abs() < 1e-15);
    }

    #[test]
    fn all_ones_similarity_stays_complete() {
        let s = AffinityMatrix {
            person_ids: vec![1, 2, 3, 4],
            entries: Array2::from_elem((4, 4), 1.0),
        };
        let adj = binarize(&s, &GroupingConfig::default());
        assert!(adj.iter().all(|&b| b));
        let partition = connected_components(&adj, &s.person_ids);
        assert_eq!(partition, vec![vec![1, 2, 3, 4]]);
    }

    #[test]
    fn identity_adjacency_gives_singletons() {
        let adj = Array2::from_shape_fn((3, 3), |(i, j)| i == j);
        let partition = connected_components(&adj, &[1, 2, 3]);
        assert_eq!(partition, vec![vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn missing_edge_inside_a_group_does_not_split_it() {
        // five persons: person 2 differs; edge (1,4) is below threshold but
        // both stay connected through 3 and 5
        let ids = [1, 2, 3, 4, 5];
        let mut entries = Array2::from_elem((5, 5), 0.4);
        for i in 0..5 {
            entries[(i, i)] = 1.0;
        }
        for j in 0..5 {
            if j != 1 {
                entries[(1, j)] = 0.05;
                entries[(j, 1)] = 0.05;
            }
        }
        entries[(0, 3)] = 0.21;
        entries[(3, 0)] = 0.21;
        let s = AffinityMatrix {
            person_ids: ids.to_vec(),
            entries,
        };
        let cfg = GroupingConfig::default();
        let tau = threshold(cfg.relaxation, 5);
        assert!((tau - 0.225).abs() < 1e-15);
        let adj = binarize(&s, &cfg);
        assert!(!adj[(0, 3)]);
        let partition = connected_components(&adj, &ids);
        assert_eq!(partition, vec![vec![1, 3, 4, 5], vec![2]]);
    }

    #[test]
    fn raising_relaxation_only_refines_the_partition() {
        // deterministic pseudo-random symmetric matrix
        let p = 6;
        let mut state = 99u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % 1000) as f64 / 1000.0
        };
        let mut entries = Array2::zeros((p, p));
        for i in 0..p {
            entries[(i, i)] = 1.0;
            for j in i + 1..p {
                let v = next();
                entries[(i, j)] = v;
                entries[(j, i)] = v;
            }
        }
        let ids: Vec<usize> = (1..=p).collect();
        let s = AffinityMatrix {
            person_ids: ids.clone(),
            entries,
        };
        let mut previous: Option<Vec<Vec<usize>>> = None;
        for r in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
            let adj = binarize(&s, &GroupingConfig { relaxation: r });
            let partition = connected_components(&adj, &ids);
            if let Some(prev) = &previous {
                // every new block is contained in some previous block
                for block in &partition {
                    assert!(
                        prev.iter()
                            .any(|old| block.iter().all(|id| old.contains(id))),
                        "partition {partition:?} does not refine {prev:?} at r={r}"
                    );
                }
            }
            previous = Some(partition);
        }
    }
}
