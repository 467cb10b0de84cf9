//! The coarse space `V_H^(m)`: an ordered list of block-supported basis
//! functions, its sparse Galerkin matrix `P^T A P` and the coarse solve.

use faer::Mat;
use log::warn;

use crate::dg::{DgOperator, Triplets};
use crate::error::{Error, Result};
use crate::grid::FineGrid;
use crate::linalg::{self, CsrMatrix, SparseCholesky};
use crate::offline::{BasisFunction, Provenance};

/// Relative pivot below which a candidate is treated as linearly dependent.
pub const PIVOT_TOL: f64 = 1e-12;

/// How the reduced matrix is rebuilt after an enrichment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Assembly {
    /// Recompute every entry of `P^T A P` from scratch.
    #[default]
    Reassemble,
    /// Keep existing entries and compute only the new rows and columns.
    Incremental,
}

/// `A p` for a block-supported `p`, stored on the block and its edge neighbors.
#[derive(Debug, Clone)]
struct Applied {
    blocks: Vec<usize>,
    values: Vec<Vec<f64>>,
}

impl Applied {
    fn on_block(&self, block: usize) -> Option<&[f64]> {
        self.blocks
            .iter()
            .position(|&b| b == block)
            .map(|k| self.values[k].as_slice())
    }
}

fn apply_local(op: &DgOperator, fine: &FineGrid, block: usize, values: &[f64]) -> Applied {
    let npb = fine.nodes_per_block();
    let mut blocks = fine.coarse().edge_neighbors(block);
    blocks.push(block);
    blocks.sort_unstable();
    let mut out = vec![vec![0.0; npb]; blocks.len()];
    let base = block * npb;
    for (l, &v) in values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        // A is symmetric, so row `base + l` is also that column
        let (cols, vals) = op.matrix.row(base + l);
        for (&c, &a) in cols.iter().zip(vals) {
            let b = c / npb;
            let k = blocks
                .binary_search(&b)
                .expect("coupling beyond edge neighbors");
            out[k][c - b * npb] += a * v;
        }
    }
    Applied {
        blocks,
        values: out,
    }
}

/// Outcome of offering candidates to the space.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AddReport {
    pub accepted: usize,
    pub rejected: Vec<Provenance>,
}

#[derive(Debug, Clone)]
pub struct CoarseSolution {
    pub coeffs: Vec<f64>,
    /// `u_H = P c` on the fine DG DOFs.
    pub fine: Vec<f64>,
    pub dim: usize,
}

pub struct MultiscaleSpace {
    npb: usize,
    num_dofs: usize,
    assembly: Assembly,
    basis: Vec<BasisFunction>,
    applied: Vec<Applied>,
    by_block: Vec<Vec<usize>>,
    gram_entries: Triplets,
    gram: CsrMatrix,
    rhs: Vec<f64>,
    chol: Option<SparseCholesky>,
}

impl MultiscaleSpace {
    pub fn new(
        op: &DgOperator,
        fine: &FineGrid,
        candidates: Vec<BasisFunction>,
        assembly: Assembly,
    ) -> Result<(Self, AddReport)> {
        let mut space = MultiscaleSpace {
            npb: fine.nodes_per_block(),
            num_dofs: fine.num_dofs(),
            assembly,
            basis: Vec::new(),
            applied: Vec::new(),
            by_block: vec![Vec::new(); fine.coarse().num_blocks()],
            gram_entries: Vec::new(),
            gram: CsrMatrix::zeros(0, 0),
            rhs: Vec::new(),
            chol: None,
        };
        let report = space.add_candidates(op, fine, candidates)?;
        Ok((space, report))
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[BasisFunction] {
        &self.basis
    }

    pub fn gram(&self) -> &CsrMatrix {
        &self.gram
    }

    /// Number of basis functions supported on each block.
    pub fn block_counts(&self) -> Vec<usize> {
        self.by_block.iter().map(|v| v.len()).collect()
    }

    /// `P c`.
    pub fn prolong(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.num_dofs];
        for (bf, &c) in self.basis.iter().zip(coeffs) {
            let base = bf.block * self.npb;
            for (l, v) in bf.values.iter().enumerate() {
                u[base + l] += c * v;
            }
        }
        u
    }

    /// `P^T v`.
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|bf| {
                let base = bf.block * self.npb;
                linalg::dot(&bf.values, &v[base..base + self.npb])
            })
            .collect()
    }

    fn prolong_abs(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.num_dofs];
        for (bf, &c) in self.basis.iter().zip(coeffs) {
            let base = bf.block * self.npb;
            for (l, v) in bf.values.iter().enumerate() {
                u[base + l] += (c * v).abs();
            }
        }
        u
    }

    fn restrict_abs(&self, v: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|bf| {
                let base = bf.block * self.npb;
                bf.values
                    .iter()
                    .zip(&v[base..base + self.npb])
                    .map(|(a, b)| (a * b).abs())
                    .sum()
            })
            .collect()
    }

    /// Fine coefficient vector of basis function `k`.
    pub fn basis_fine(&self, k: usize) -> Vec<f64> {
        let mut u = vec![0.0; self.num_dofs];
        let bf = &self.basis[k];
        u[bf.block * self.npb..(bf.block + 1) * self.npb].copy_from_slice(&bf.values);
        u
    }

    fn entry(&self, q: usize, applied_p: &Applied) -> Option<f64> {
        let bq = &self.basis[q];
        applied_p
            .on_block(bq.block)
            .map(|w| linalg::dot(&bq.values, w))
    }

    /// Entries `(q, p)` with `q` among `rows` near `p`.
    fn entries_for(&self, p: usize, only_below: bool) -> Triplets {
        let ap = &self.applied[p];
        let mut t = Vec::new();
        for &b in &ap.blocks {
            for &q in &self.by_block[b] {
                if only_below && q > p {
                    continue;
                }
                if let Some(v) = self.entry(q, ap) {
                    if q == p {
                        t.push((p, p, v));
                    } else {
                        t.push((q, p, v));
                        t.push((p, q, v));
                    }
                }
            }
        }
        t
    }

    /// Offers new block-supported functions. Each is scaled to unit A-norm;
    /// a candidate whose A-orthogonal component relative to the current space
    /// and the already accepted candidates falls below [`PIVOT_TOL`] is
    /// dropped. Refactors the reduced system.
    pub fn add_candidates(
        &mut self,
        op: &DgOperator,
        fine: &FineGrid,
        candidates: Vec<BasisFunction>,
    ) -> Result<AddReport> {
        let mut report = AddReport::default();
        let mut cands = Vec::with_capacity(candidates.len());
        let mut applied = Vec::with_capacity(candidates.len());
        for mut bf in candidates {
            let ap = apply_local(op, fine, bf.block, &bf.values);
            let norm_sq = linalg::dot(&bf.values, ap.on_block(bf.block).unwrap());
            if !(norm_sq > 0.0) || !norm_sq.is_finite() {
                warn!(
                    "dropping candidate {:?}: A-norm^2 {norm_sq:e}",
                    bf.provenance
                );
                report.rejected.push(bf.provenance);
                continue;
            }
            let s = 1.0 / norm_sq.sqrt();
            bf.values.iter_mut().for_each(|v| *v *= s);
            let ap = Applied {
                blocks: ap.blocks,
                values: ap
                    .values
                    .into_iter()
                    .map(|w| w.into_iter().map(|x| x * s).collect())
                    .collect(),
            };
            cands.push(bf);
            applied.push(ap);
        }
        let k = cands.len();
        if k == 0 {
            return Ok(report);
        }
        // Coupling to the current space, G_{old,B}, and among candidates, G_BB.
        let m = self.dim();
        let mut coupling = Mat::<f64>::zeros(m, k);
        let mut s = Mat::<f64>::zeros(k, k);
        for (j, ap) in applied.iter().enumerate() {
            for &b in &ap.blocks {
                for &q in &self.by_block[b] {
                    coupling[(q, j)] = self.entry(q, ap).unwrap();
                }
            }
            for (i, other) in cands.iter().enumerate().take(j + 1) {
                if let Some(w) = ap.on_block(other.block) {
                    let v = linalg::dot(&other.values, w);
                    s[(i, j)] = v;
                    s[(j, i)] = v;
                }
            }
        }
        if m > 0 {
            let chol = self.chol.as_ref().expect("non-empty space is factored");
            let mut x = Mat::<f64>::zeros(m, k);
            for j in 0..k {
                let g: Vec<f64> = coupling.col(j).iter().copied().collect();
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (i, v) in chol.solve(&g).into_iter().enumerate() {
                    x[(i, j)] = v;
                }
            }
            s -= coupling.transpose() * &x;
        }
        // Left-looking Cholesky of the Schur complement with rejection.
        let mut l = Mat::<f64>::zeros(k, k);
        let mut accepted = Vec::with_capacity(k);
        for j in 0..k {
            let mut d = s[(j, j)];
            for &a in &accepted {
                d -= l[(j, a)] * l[(j, a)];
            }
            if !(d > PIVOT_TOL) {
                warn!(
                    "dropping candidate {:?}: dependent on the current space (pivot {d:e})",
                    cands[j].provenance
                );
                report.rejected.push(cands[j].provenance);
                continue;
            }
            let piv = d.sqrt();
            l[(j, j)] = piv;
            for i in j + 1..k {
                let mut v = s[(i, j)];
                for &a in &accepted {
                    v -= l[(i, a)] * l[(j, a)];
                }
                l[(i, j)] = v / piv;
            }
            accepted.push(j);
        }
        let mut keep = vec![false; k];
        for &j in &accepted {
            keep[j] = true;
        }
        for ((bf, ap), keep) in cands.into_iter().zip(applied).zip(keep) {
            if !keep {
                continue;
            }
            let idx = self.basis.len();
            self.by_block[bf.block].push(idx);
            self.basis.push(bf);
            self.applied.push(ap);
            report.accepted += 1;
        }
        self.rebuild(op, m)?;
        Ok(report)
    }

    fn rebuild(&mut self, op: &DgOperator, previous_dim: usize) -> Result<()> {
        let n = self.dim();
        let start = match self.assembly {
            Assembly::Reassemble => {
                self.gram_entries.clear();
                0
            }
            Assembly::Incremental => previous_dim,
        };
        for p in start..n {
            let t = self.entries_for(p, true);
            self.gram_entries.extend(t);
        }
        self.gram = CsrMatrix::from_triplets(n, n, self.gram_entries.clone());
        self.rhs = self.restrict(&op.load);
        self.chol = Some(SparseCholesky::factor(&self.gram).map_err(|e| {
            e.with_context(format!("factorizing the {n}-dimensional coarse system"))
        })?);
        Ok(())
    }

    /// Galerkin solution in the current space, with two refinement steps
    /// driven by the fine residual.
    pub fn solve(&self, op: &DgOperator) -> Result<CoarseSolution> {
        let n = self.dim();
        if n == 0 {
            return Ok(CoarseSolution {
                coeffs: Vec::new(),
                fine: vec![0.0; self.num_dofs],
                dim: 0,
            });
        }
        let chol = self.chol.as_ref().unwrap();
        let mut c = chol.solve(&self.rhs);
        for _ in 0..2 {
            let r = self.restrict(&op.residual(&self.prolong(&c)));
            let dc = chol.solve(&r);
            c.iter_mut().zip(&dc).for_each(|(x, d)| *x += d);
        }
        let u = self.prolong(&c);
        let r = self.restrict(&op.residual(&u));
        let rn = linalg::norm2(&r);
        let bn = linalg::norm2(&self.rhs);
        // rounding floor of a double precision `c`, through `|P|^T |A| |P| |c|`
        let abs_u = self.prolong_abs(&c);
        let floor =
            8.0 * f64::EPSILON * linalg::norm2(&self.restrict_abs(&op.matrix.abs_apply(&abs_u)));
        if rn > (1e-12 * bn).max(floor) && bn > 0.0 {
            let worst = r
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(k, _)| self.basis[k].provenance);
            return Err(Error::Numerical(format!(
                "coarse solve residual {rn:e} > max(1e-12 * {bn:e}, rounding floor {floor:e}); largest at basis {worst:?}"
            )));
        }
        Ok(CoarseSolution {
            coeffs: c,
            fine: u,
            dim: n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::CoefficientField;
    use crate::grid::{build_grids, Rect};
    use crate::offline::{OfflineData, PouKind};

    fn setup(nb: usize, nf: usize) -> (FineGrid, CoefficientField, DgOperator) {
        let f = build_grids(Rect::unit(), nb, nb, nf, nf).unwrap();
        let k = CoefficientField::from_fn(&f, |x, y| {
            if (y - 0.5).abs() < 0.1 {
                100.0
            } else {
                1.0 + x
            }
        })
        .unwrap();
        let op = DgOperator::assemble(&f, &k, 2.0, &|_, _| 1.0).unwrap();
        (f, k, op)
    }

    fn nodal_basis(f: &FineGrid) -> Vec<BasisFunction> {
        let npb = f.nodes_per_block();
        (0..f.num_dofs())
            .map(|d| {
                let mut values = vec![0.0; npb];
                values[d % npb] = 1.0;
                BasisFunction {
                    block: f.block_of_dof(d),
                    values,
                    provenance: Provenance::Online {
                        iteration: 0,
                        sub_iteration: 0,
                        node: d,
                    },
                }
            })
            .collect()
    }

    #[test]
    fn full_space_reproduces_fine_solution() {
        let (f, _, op) = setup(2, 2);
        let (space, rep) =
            MultiscaleSpace::new(&op, &f, nodal_basis(&f), Assembly::Reassemble).unwrap();
        assert_eq!(rep.accepted, f.num_dofs());
        let uh = op.solve_fine().unwrap();
        let sol = space.solve(&op).unwrap();
        let diff: Vec<f64> = uh.iter().zip(&sol.fine).map(|(a, b)| a - b).collect();
        assert!(linalg::norm2(&diff) < 1e-10 * linalg::norm2(&uh));
    }

    #[test]
    fn gram_equals_dense_triple_product() {
        let (f, k, op) = setup(3, 3);
        let off = OfflineData::build(&f, &k, 2.0, PouKind::Bilinear, 3).unwrap();
        let basis = off
            .split_and_collect(&f, &off.uniform_layers(&f, 2, true))
            .unwrap();
        let (space, _) = MultiscaleSpace::new(&op, &f, basis, Assembly::Reassemble).unwrap();
        let n = space.dim();
        let cols: Vec<Vec<f64>> = (0..n).map(|k| space.basis_fine(k)).collect();
        for p in 0..n {
            let ap = op.apply(&cols[p]);
            for q in 0..n {
                let g = linalg::dot(&cols[q], &ap);
                assert!((space.gram().get(q, p) - g).abs() < 1e-12, "({q},{p})");
            }
            assert!((space.gram().get(p, p) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dependent_and_zero_candidates_rejected() {
        let (f, k, op) = setup(2, 3);
        let off = OfflineData::build(&f, &k, 2.0, PouKind::Bilinear, 2).unwrap();
        let basis = off
            .split_and_collect(&f, &off.uniform_layers(&f, 1, true))
            .unwrap();
        let dup = basis[0].clone();
        let mut zero = basis[1].clone();
        zero.values.iter_mut().for_each(|v| *v = 0.0);
        let (mut space, _) = MultiscaleSpace::new(&op, &f, basis, Assembly::Reassemble).unwrap();
        let before = space.dim();
        let rep = space
            .add_candidates(&op, &f, vec![dup.clone(), zero, dup])
            .unwrap();
        assert_eq!(rep.accepted, 0);
        assert_eq!(rep.rejected.len(), 3);
        assert_eq!(space.dim(), before);
    }

    #[test]
    fn single_function_space_gives_optimal_step() {
        let (f, k, op) = setup(2, 2);
        let off = OfflineData::build(&f, &k, 2.0, PouKind::Bilinear, 2).unwrap();
        let basis = off
            .split_and_collect(&f, &off.uniform_layers(&f, 1, true))
            .unwrap();
        let (space, _) =
            MultiscaleSpace::new(&op, &f, vec![basis[4].clone()], Assembly::Reassemble).unwrap();
        let phi = space.basis_fine(0);
        let alpha = linalg::dot(&op.load, &phi) / op.a_apply(&phi, &phi);
        let sol = space.solve(&op).unwrap();
        assert!((sol.coeffs[0] - alpha).abs() < 1e-12 * alpha.abs());
    }

    #[test]
    fn incremental_matches_reassembly() {
        let (f, k, op) = setup(3, 3);
        let off = OfflineData::build(&f, &k, 2.0, PouKind::Bilinear, 3).unwrap();
        let l1 = off
            .split_and_collect(&f, &off.uniform_layers(&f, 1, true))
            .unwrap();
        let l2 = off
            .split_and_collect(&f, &off.uniform_layers(&f, 2, true))
            .unwrap();
        let extra: Vec<BasisFunction> = l2
            .into_iter()
            .filter(|b| matches!(b.provenance, Provenance::Offline { k: 2, .. }))
            .collect();
        let mut results = Vec::new();
        for mode in [Assembly::Reassemble, Assembly::Incremental] {
            let (mut s, _) = MultiscaleSpace::new(&op, &f, l1.clone(), mode).unwrap();
            s.add_candidates(&op, &f, extra.clone()).unwrap();
            results.push((s.gram().clone(), s.solve(&op).unwrap().fine));
        }
        let (g0, u0) = &results[0];
        let (g1, u1) = &results[1];
        assert_eq!(g0.nnz(), g1.nnz());
        for (i, j, v) in g0.triplets() {
            assert!((g1.get(i, j) - v).abs() < 1e-14);
        }
        for (a, b) in u0.iter().zip(u1) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let (f, k, _) = setup(2, 2);
        let op = DgOperator::assemble(&f, &k, 2.0, &|_, _| 0.0).unwrap();
        let off = OfflineData::build(&f, &k, 2.0, PouKind::Bilinear, 2).unwrap();
        let basis = off
            .split_and_collect(&f, &off.uniform_layers(&f, 1, true))
            .unwrap();
        let (space, _) = MultiscaleSpace::new(&op, &f, basis, Assembly::Reassemble).unwrap();
        assert!(space.solve(&op).unwrap().fine.iter().all(|&v| v == 0.0));
    }
}
