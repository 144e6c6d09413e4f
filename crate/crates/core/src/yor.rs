//! Young orthogonal form of the irreducible representations of `S_n`.
//!
//! Basis vectors are standard tableaux in last-letter order. For the
//! adjacent transposition `τ_j = (j, j+1)` and a tableau `T` let
//! `r = c_T(j+1) - c_T(j)` be the axial distance (difference of contents).
//! Then `τ_j v_T = (1/r) v_T + sqrt(1 - 1/r²) v_{T'}` where `T'` swaps `j`
//! and `j+1`; when `T'` is not standard, `|r| = 1` and `τ_j` acts by `±1`.
//! The Young–Jucys–Murphy elements `X_j = Σ_{i<j} (i, j)` are diagonal with
//! `X_j v_T = c_T(j) v_T`.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::SparseMatrix;
use crate::snpart::{contents, standard_tableaux, Partition, StandardTableau};

/// Concrete orthogonal matrices for one irrep `S^λ`.
#[derive(Clone, Debug)]
pub struct IrrepAction {
    shape: Partition,
    basis: Vec<StandardTableau>,
    /// `adj[j - 1]` represents `(j, j + 1)`.
    adj: Vec<SparseMatrix>,
    /// `yjm[j - 1][t]` is the eigenvalue of `X_j` on basis vector `t`.
    yjm: Vec<Vec<i64>>,
}

/// Builds the Young orthogonal form of `lambda ⊢ n`.
pub fn build_irrep(lambda: &Partition, n: usize) -> Result<IrrepAction> {
    if lambda.n() != n {
        return Err(Error::BoxCountMismatch {
            shape: lambda.to_string(),
            expected: n,
            found: lambda.n(),
        });
    }
    let basis = standard_tableaux(lambda);
    let dim = basis.len();
    let index: HashMap<Vec<u8>, usize> = basis
        .iter()
        .enumerate()
        .map(|(i, t)| (t.row_word(), i))
        .collect();
    let content: Vec<Vec<i64>> = basis.iter().map(|t| contents(t).0).collect();

    let mut adj = Vec::with_capacity(n.saturating_sub(1));
    for j in 1..n {
        let mut triplets = Vec::with_capacity(2 * dim);
        for (t, tab) in basis.iter().enumerate() {
            let r = (content[t][j] - content[t][j - 1]) as f64;
            triplets.push((t, t, 1.0 / r));
            if let Some(swapped) = tab.swap_adjacent(j) {
                let partner = index[&swapped.row_word()];
                triplets.push((t, partner, (1.0 - 1.0 / (r * r)).sqrt()));
            }
        }
        adj.push(SparseMatrix::from_triplets(dim, triplets));
    }

    let yjm = (0..n)
        .map(|j| content.iter().map(|c| c[j]).collect())
        .collect();

    Ok(IrrepAction {
        shape: lambda.clone(),
        basis,
        adj,
        yjm,
    })
}

impl IrrepAction {
    pub fn shape(&self) -> &Partition {
        &self.shape
    }

    pub fn n(&self) -> usize {
        self.shape.n()
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[StandardTableau] {
        &self.basis
    }

    /// Matrix of `(j, j + 1)`, `1 <= j < n`.
    pub fn adjacent(&self, j: usize) -> Result<&SparseMatrix> {
        if j == 0 || j >= self.n() {
            return Err(Error::IndexOutOfRange {
                index: j,
                min: 1,
                max: self.n().saturating_sub(1),
            });
        }
        Ok(&self.adj[j - 1])
    }

    /// All adjacent transpositions, `adjacent_all()[j - 1] = (j, j + 1)`.
    pub fn adjacent_all(&self) -> &[SparseMatrix] {
        &self.adj
    }

    /// Matrix of the transposition `(i, j)` for `1 <= i < j <= n`, obtained by
    /// conjugating `τ_i` with `τ_{i+1}, ..., τ_{j-1}`.
    pub fn transposition_matrix(&self, i: usize, j: usize) -> Result<SparseMatrix> {
        let n = self.n();
        if i == 0 || i >= j || j > n {
            return Err(Error::IndexOutOfRange {
                index: if i == 0 || i >= j { i } else { j },
                min: 1,
                max: n,
            });
        }
        let mut m = self.adj[i - 1].clone();
        for k in i + 1..j {
            let t = &self.adj[k - 1];
            m = t.matmul(&m).matmul(t);
        }
        Ok(m)
    }

    /// Diagonal of `X_j`, `1 <= j <= n`.
    pub fn yjm_diagonal(&self, j: usize) -> Result<&[i64]> {
        if j == 0 || j > self.n() {
            return Err(Error::IndexOutOfRange {
                index: j,
                min: 1,
                max: self.n(),
            });
        }
        Ok(&self.yjm[j - 1])
    }

    /// Debug export: shape, basis rows and coordinate triplets.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Export<'a> {
            shape: &'a [usize],
            dim: usize,
            basis: Vec<&'a [Vec<usize>]>,
            adjacent: Vec<Vec<(usize, usize, f64)>>,
            yjm: &'a [Vec<i64>],
        }
        let export = Export {
            shape: self.shape.parts(),
            dim: self.dim(),
            basis: self.basis.iter().map(|t| t.rows()).collect(),
            adjacent: self.adj.iter().map(SparseMatrix::triplets).collect(),
            yjm: &self.yjm,
        };
        serde_json::to_value(export).expect("plain data serializes")
    }
}

/// Matrix of the transposition `(i, j)` on `rep`.
pub fn transposition_matrix(rep: &IrrepAction, i: usize, j: usize) -> Result<SparseMatrix> {
    rep.transposition_matrix(i, j)
}

/// Diagonal of the YJM element `X_j` on `rep`.
pub fn yjm_matrix(rep: &IrrepAction, j: usize) -> Result<Vec<i64>> {
    rep.yjm_diagonal(j).map(<[i64]>::to_vec)
}

/// Scalar by which `Σ_j X_j` (the sum of all transpositions) acts on `S^λ`.
pub fn central_sum_eigenvalue(lambda: &Partition) -> i64 {
    lambda.box_contents().iter().sum()
}

fn max_abs_diff(a: &SparseMatrix, b: &SparseMatrix) -> f64 {
    let (da, db) = (a.to_dense(), b.to_dense());
    let mut worst: f64 = 0.0;
    for i in 0..a.dim() {
        for j in 0..a.dim() {
            worst = worst.max((da[(i, j)] - db[(i, j)]).abs());
        }
    }
    worst
}

fn diagonal(values: &[i64]) -> SparseMatrix {
    SparseMatrix::from_triplets(
        values.len(),
        values
            .iter()
            .enumerate()
            .map(|(i, &c)| (i, i, c as f64))
            .collect(),
    )
}

/// Largest entrywise violations of the defining relations of one irrep.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RepresentationDefects {
    /// `τ_j² = I` and `τ_j = τ_jᵀ`.
    pub involution: f64,
    /// `τ_j τ_{j+1} τ_j = τ_{j+1} τ_j τ_{j+1}` and `τ_i τ_j = τ_j τ_i` for `|i-j| >= 2`.
    pub braid: f64,
    /// `X_{j+1} = τ_j X_j τ_j + τ_j` with `X_1 = 0`.
    pub yjm_recursion: f64,
    /// `Σ_{i<j} (i, j)` against the content diagonal.
    pub content: f64,
    /// Whether content words separate the basis.
    pub distinct_contents: bool,
}

impl RepresentationDefects {
    pub fn max(&self) -> f64 {
        self.involution
            .max(self.braid)
            .max(self.yjm_recursion)
            .max(self.content)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.distinct_contents && self.max() <= tol
    }
}

/// Checks the Coxeter relations and the YJM structure of `rep`.
pub fn representation_defects(rep: &IrrepAction) -> Result<RepresentationDefects> {
    let n = rep.n();
    let id = SparseMatrix::identity(rep.dim());
    let a = rep.adjacent_all();
    let mut out = RepresentationDefects::default();
    for j in 0..a.len() {
        out.involution = out
            .involution
            .max(max_abs_diff(&a[j].matmul(&a[j]), &id))
            .max(a[j].asymmetry());
        if j + 1 < a.len() {
            let l = a[j].matmul(&a[j + 1]).matmul(&a[j]);
            let r = a[j + 1].matmul(&a[j]).matmul(&a[j + 1]);
            out.braid = out.braid.max(max_abs_diff(&l, &r));
        }
        for i in j + 2..a.len() {
            out.braid = out
                .braid
                .max(max_abs_diff(&a[i].matmul(&a[j]), &a[j].matmul(&a[i])));
        }
    }
    out.yjm_recursion = rep
        .yjm_diagonal(1)?
        .iter()
        .map(|&c| c.abs() as f64)
        .fold(0.0, f64::max);
    for j in 1..n {
        let t = rep.adjacent(j)?;
        let conj = t.matmul(&diagonal(rep.yjm_diagonal(j)?)).matmul(t);
        let rhs = SparseMatrix::from_triplets(
            rep.dim(),
            conj.triplets().into_iter().chain(t.triplets()).collect(),
        );
        out.yjm_recursion = out
            .yjm_recursion
            .max(max_abs_diff(&diagonal(rep.yjm_diagonal(j + 1)?), &rhs));
    }
    for j in 2..=n {
        let sum = (1..j).try_fold(
            SparseMatrix::from_triplets(rep.dim(), Vec::new()),
            |acc, i| {
                let t = rep.transposition_matrix(i, j)?;
                Ok::<_, Error>(SparseMatrix::from_triplets(
                    rep.dim(),
                    acc.triplets().into_iter().chain(t.triplets()).collect(),
                ))
            },
        )?;
        out.content = out
            .content
            .max(max_abs_diff(&sum, &diagonal(rep.yjm_diagonal(j)?)));
    }
    let mut seen = std::collections::HashSet::new();
    out.distinct_contents =
        (0..rep.dim()).all(|t| seen.insert((1..=n).map(|j| rep.yjm[j - 1][t]).collect::<Vec<_>>()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snpart::{branch_restrict, partitions};

    fn p(parts: &[usize]) -> Partition {
        Partition::new(parts.to_vec()).unwrap()
    }

    fn close(a: &SparseMatrix, b: &SparseMatrix, tol: f64) -> bool {
        let (da, db) = (a.to_dense(), b.to_dense());
        (0..a.dim()).all(|i| (0..a.dim()).all(|j| (da[(i, j)] - db[(i, j)]).abs() <= tol))
    }

    #[test]
    fn two_one_matrices() {
        let rep = build_irrep(&p(&[2, 1]), 3).unwrap();
        let t1 = rep.adjacent(1).unwrap().to_dense();
        assert_eq!(
            (t1[(0, 0)], t1[(0, 1)], t1[(1, 0)], t1[(1, 1)]),
            (1.0, 0.0, 0.0, -1.0)
        );
        let t2 = rep.adjacent(2).unwrap();
        let h = 3f64.sqrt() / 2.0;
        let expect =
            SparseMatrix::from_triplets(2, vec![(0, 0, -0.5), (0, 1, h), (1, 0, h), (1, 1, 0.5)]);
        assert!(close(t2, &expect, 1e-15));
        assert_eq!(rep.yjm_diagonal(1).unwrap(), &[0, 0]);
        assert_eq!(rep.yjm_diagonal(2).unwrap(), &[1, -1]);
        assert_eq!(rep.yjm_diagonal(3).unwrap(), &[-1, 1]);
    }

    #[test]
    fn relations_hold_for_every_shape_up_to_seven() {
        for n in 2..=7 {
            for lambda in partitions(n, n) {
                let rep = build_irrep(&lambda, n).unwrap();
                let d = representation_defects(&rep).unwrap();
                assert!(d.passes(1e-12), "{lambda}: {d:?}");
            }
        }
    }

    #[test]
    fn sign_flip_in_mixing_breaks_braid_relation() {
        let mut rep = build_irrep(&p(&[3, 2]), 5).unwrap();
        // Flip the mixing entries of one tableau pair: still a symmetric
        // involution, no longer compatible with its neighbours.
        let (r0, c0, _) = rep.adj[1]
            .triplets()
            .into_iter()
            .find(|&(r, c, _)| r < c)
            .unwrap();
        let flipped = rep.adj[1]
            .triplets()
            .into_iter()
            .map(|(r, c, v)| {
                (
                    r,
                    c,
                    if (r, c) == (r0, c0) || (r, c) == (c0, r0) {
                        -v
                    } else {
                        v
                    },
                )
            })
            .collect();
        rep.adj[1] = SparseMatrix::from_triplets(rep.dim(), flipped);
        let d = representation_defects(&rep).unwrap();
        assert!(d.involution < 1e-12);
        assert!(d.braid > 0.1, "{d:?}");
        assert!(!d.passes(1e-12));
    }

    #[test]
    fn trivial_irrep_is_all_ones() {
        let rep = build_irrep(&Partition::trivial(5), 5).unwrap();
        for t in rep.adjacent_all() {
            assert_eq!(t.to_dense()[(0, 0)], 1.0);
        }
    }

    #[test]
    fn rejects_wrong_box_count_and_indices() {
        assert!(build_irrep(&p(&[2, 1]), 4).is_err());
        let rep = build_irrep(&p(&[2, 1]), 3).unwrap();
        assert!(rep.adjacent(0).is_err());
        assert!(rep.adjacent(3).is_err());
        assert!(rep.transposition_matrix(2, 2).is_err());
        assert!(rep.transposition_matrix(1, 4).is_err());
        assert!(rep.yjm_diagonal(4).is_err());
    }

    #[test]
    fn long_transposition_on_two_one() {
        let rep = build_irrep(&p(&[2, 1]), 3).unwrap();
        let t13 = rep.transposition_matrix(1, 3).unwrap();
        let (a1, a2) = (rep.adjacent(1).unwrap(), rep.adjacent(2).unwrap());
        assert!(close(&t13, &a2.matmul(a1).matmul(a2), 1e-15));
        assert!(close(&t13.matmul(&t13), &SparseMatrix::identity(2), 1e-14));
        assert!(close(&rep.transposition_matrix(2, 3).unwrap(), a2, 0.0));
    }

    #[test]
    fn at_most_two_nonzeros_per_row() {
        for n in 2..=7 {
            for lambda in partitions(n, n) {
                let rep = build_irrep(&lambda, n).unwrap();
                assert!(rep.adjacent_all().iter().all(|t| t.max_row_nnz() <= 2));
            }
        }
    }

    #[test]
    fn yjm_sum_is_central_scalar() {
        assert_eq!(central_sum_eigenvalue(&Partition::trivial(6)), 15);
        assert_eq!(central_sum_eigenvalue(&Partition::sign(6)), -15);
        assert_eq!(central_sum_eigenvalue(&p(&[2, 1])), 0);
        for n in 1..=7 {
            for lambda in partitions(n, n) {
                let rep = build_irrep(&lambda, n).unwrap();
                let c = central_sum_eigenvalue(&lambda);
                for t in 0..rep.dim() {
                    let s: i64 = (1..=n).map(|j| rep.yjm_diagonal(j).unwrap()[t]).sum();
                    assert_eq!(s, c);
                }
            }
        }
    }

    #[test]
    fn yjm_diagonal_matches_transposition_sum() {
        for n in 2..=6 {
            for lambda in partitions(n, n) {
                let rep = build_irrep(&lambda, n).unwrap();
                for j in 2..=n {
                    let mut sum = rep.transposition_matrix(1, j).unwrap().to_dense();
                    for i in 2..j {
                        sum += rep.transposition_matrix(i, j).unwrap().to_dense();
                    }
                    let diag = rep.yjm_diagonal(j).unwrap();
                    for a in 0..rep.dim() {
                        for b in 0..rep.dim() {
                            let expect = if a == b { diag[a] as f64 } else { 0.0 };
                            assert!((sum[(a, b)] - expect).abs() < 1e-10);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn restriction_is_block_diagonal_along_branching() {
        // The first n-2 generators of S^λ equal the direct sum of the
        // generators of the shapes obtained by removing the box holding n.
        for n in 3..=7 {
            for lambda in partitions(n, n) {
                let rep = build_irrep(&lambda, n).unwrap();
                let branches = branch_restrict(&lambda, n - 1).unwrap();
                // Last-letter order groups by the row of n, bottom row first.
                let mut offset = 0;
                for row in lambda.removable_rows() {
                    let mu = lambda.remove_box(row).unwrap();
                    assert!(branches.iter().any(|(b, c)| *b == mu && *c == 1));
                    let sub = build_irrep(&mu, n - 1).unwrap();
                    for j in 1..n - 1 {
                        let big = rep.adjacent(j).unwrap();
                        let small = sub.adjacent(j).unwrap();
                        for a in 0..sub.dim() {
                            for b in 0..rep.dim() {
                                let expect = if (offset..offset + sub.dim()).contains(&b) {
                                    small.get(a, b - offset)
                                } else {
                                    0.0
                                };
                                assert!((big.get(offset + a, b) - expect).abs() < 1e-12);
                            }
                        }
                    }
                    offset += sub.dim();
                }
                assert_eq!(offset, rep.dim());
            }
        }
    }

    #[test]
    fn json_export_has_triplets() {
        let rep = build_irrep(&p(&[2, 1]), 3).unwrap();
        let v = rep.to_json();
        assert_eq!(v["dim"], 2);
        assert_eq!(v["basis"][0][0][1], 2);
        assert_eq!(v["adjacent"][1].as_array().unwrap().len(), 4);
    }
}
