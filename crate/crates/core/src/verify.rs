//! Numerical estimates of the inverse-inequality constant, the continuity
//! and coercivity constants of `a_DG`, and runtime checks of the a posteriori
//! bound and the contraction estimate.

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coefficient::CoefficientField;
use crate::dg::{self, DgOperator};
use crate::error::{Error, Result};
use crate::grid::FineGrid;
use crate::linalg::{self, SparseCholesky};

/// Local node indices on the boundary of a block, and the rest.
fn split_boundary(fine: &FineGrid) -> (Vec<usize>, Vec<usize>) {
    let (nx, ny) = (fine.nx(), fine.ny());
    (0..fine.nodes_per_block()).partition(|&l| {
        let (i, j) = fine.local_node_coords(l);
        i == 0 || j == 0 || i == nx || j == ny
    })
}

/// Mass matrix of the piecewise-linear traces on the block boundary, over
/// the boundary nodes in `bnd` order.
fn boundary_mass(fine: &FineGrid, bnd: &[usize]) -> Mat<f64> {
    let n = bnd.len();
    let pos = |l: usize| bnd.iter().position(|&b| b == l).unwrap();
    let mut m = Mat::<f64>::zeros(n, n);
    let (nx, ny) = (fine.nx(), fine.ny());
    let mut add_seg = |a: usize, b: usize, h: f64| {
        let (pa, pb) = (pos(a), pos(b));
        m[(pa, pa)] += h / 3.0;
        m[(pb, pb)] += h / 3.0;
        m[(pa, pb)] += h / 6.0;
        m[(pb, pa)] += h / 6.0;
    };
    for i in 0..nx {
        add_seg(fine.local_node(i, 0), fine.local_node(i + 1, 0), fine.hx());
        add_seg(
            fine.local_node(i, ny),
            fine.local_node(i + 1, ny),
            fine.hx(),
        );
    }
    for j in 0..ny {
        add_seg(fine.local_node(0, j), fine.local_node(0, j + 1), fine.hy());
        add_seg(
            fine.local_node(nx, j),
            fine.local_node(nx, j + 1),
            fine.hy(),
        );
    }
    m
}

/// Discrete harmonic extension of boundary traces and its energy.
struct BlockTrace {
    bnd: Vec<usize>,
    /// Columns: the extension of each boundary unit vector to all block nodes.
    extension: Mat<f64>,
    /// `E^T K E`, the Schur complement of `a_H^K` onto the boundary.
    schur: Mat<f64>,
    mass: Mat<f64>,
    stiffness: Mat<f64>,
}

fn block_trace(fine: &FineGrid, field: &CoefficientField, block: usize) -> Result<BlockTrace> {
    let k = dg::local_stiffness(fine, field, block);
    let (bnd, int) = split_boundary(fine);
    let npb = fine.nodes_per_block();
    let nb = bnd.len();
    let mut extension = Mat::<f64>::zeros(npb, nb);
    for (c, &b) in bnd.iter().enumerate() {
        extension[(b, c)] = 1.0;
    }
    if !int.is_empty() {
        let kii = Mat::<f64>::from_fn(int.len(), int.len(), |a, b| k[(int[a], int[b])]);
        let l = linalg::cholesky_lower(kii.as_ref())?;
        let mut rhs = Mat::<f64>::from_fn(int.len(), nb, |a, c| -k[(int[a], bnd[c])]);
        linalg::solve_lower_in_place(l.as_ref(), rhs.as_mut());
        linalg::solve_lower_transpose_in_place(l.as_ref(), rhs.as_mut());
        for (a, &i) in int.iter().enumerate() {
            for c in 0..nb {
                extension[(i, c)] = rhs[(a, c)];
            }
        }
    }
    let ke = &k * &extension;
    let schur = extension.transpose() * &ke;
    let schur = Mat::<f64>::from_fn(nb, nb, |i, j| 0.5 * (schur[(i, j)] + schur[(j, i)]));
    Ok(BlockTrace {
        mass: boundary_mass(fine, &bnd),
        bnd,
        extension,
        schur,
        stiffness: k,
    })
}

/// Mesh parameter used in the inverse inequality.
pub fn cinv_h(fine: &FineGrid) -> f64 {
    fine.hx().min(fine.hy())
}

/// `C_inv` for one block: the square root of the largest
/// `a_H^K(v^, v^) h / (kappa_K int_dK v^2)` over boundary traces `v`, with
/// `v^` the discrete harmonic extension.
pub fn estimate_cinv(fine: &FineGrid, field: &CoefficientField, block: usize) -> Result<f64> {
    let t = block_trace(fine, field, block)?;
    let scale = cinv_h(fine) / field.block_max(block);
    let a = Mat::<f64>::from_fn(t.schur.nrows(), t.schur.ncols(), |i, j| {
        scale * t.schur[(i, j)]
    });
    let ev = linalg::generalized_symmetric_eigenvalues(a.as_ref(), t.mass.as_ref())
        .map_err(|e| e.with_context(format!("boundary mass on block {block}")))?;
    Ok(ev.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Samples the flux bound `int_dK |kappa grad u . n|^2 <= kappa_K C^2 h^-1 a_H^K(u, u)`
/// with the flux defined variationally through the harmonic extension.
/// Returns the largest observed ratio `lhs / rhs`.
pub fn check_flux_bound(
    fine: &FineGrid,
    field: &CoefficientField,
    block: usize,
    cinv: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let t = block_trace(fine, field, block)?;
    let lm = linalg::cholesky_lower(t.mass.as_ref())?;
    let npb = fine.nodes_per_block();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let u: Vec<f64> = (0..npb).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ku = linalg::dense_matvec(t.stiffness.as_ref(), &u);
        let energy = linalg::dot(&u, &ku);
        if energy <= 0.0 {
            continue;
        }
        // F_c = int_K kappa grad u . grad (extension of e_c)
        let flux: Vec<f64> = (0..t.bnd.len())
            .map(|c| (0..npb).map(|r| t.extension[(r, c)] * ku[r]).sum())
            .collect();
        let lhs = linalg::dot(&flux, &linalg::cholesky_solve(lm.as_ref(), &flux));
        let rhs = field.block_max(block) * cinv * cinv / cinv_h(fine) * energy;
        worst = worst.max(lhs / rhs);
    }
    Ok(worst)
}

/// Extremal generalized eigenvalues of `(A, G)`, where `G` is the DG-norm Gram
/// matrix: the sharpest constants with `lo |u|^2_DG <= a_DG(u, u) <= hi |u|^2_DG`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremal {
    pub lo: f64,
    pub hi: f64,
    /// Largest Ritz residual estimate (zero for the dense path).
    pub residual: f64,
    pub method: &'static str,
}

/// Dense route for small systems, symmetric Lanczos in the `G` inner product
/// with full reorthogonalization otherwise.
pub fn extremal_constants(op: &DgOperator, seed: u64) -> Result<Extremal> {
    let n = op.num_dofs();
    if n <= 800 {
        let a = op.matrix.to_dense();
        let g = op.dg_gram.to_dense();
        let ev = linalg::generalized_symmetric_eigenvalues(a.as_ref(), g.as_ref())
            .map_err(|e| e.with_context("DG-norm Gram matrix"))?;
        return Ok(Extremal {
            lo: ev[0],
            hi: ev[n - 1],
            residual: 0.0,
            method: "dense",
        });
    }
    lanczos_extremal(op, seed, 1e-10, 600.min(n))
}

fn lanczos_extremal(op: &DgOperator, seed: u64, tol: f64, max_steps: usize) -> Result<Extremal> {
    let n = op.num_dofs();
    let g =
        SparseCholesky::factor(&op.dg_gram).map_err(|e| e.with_context("DG-norm Gram matrix"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nq = op.dg_gram.quad_form(&q).sqrt();
    q.iter_mut().for_each(|v| *v /= nq);
    let mut qs: Vec<Vec<f64>> = Vec::new();
    let mut gqs: Vec<Vec<f64>> = Vec::new();
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut last = Extremal {
        lo: f64::NAN,
        hi: f64::NAN,
        residual: f64::INFINITY,
        method: "lanczos",
    };
    for step in 0..max_steps {
        let aq = op.matrix.matvec(&q);
        let a = linalg::dot(&q, &aq);
        let mut w = g.solve(&aq);
        gqs.push(op.dg_gram.matvec(&q));
        qs.push(q.clone());
        alpha.push(a);
        // full reorthogonalization in the G inner product, twice
        for _ in 0..2 {
            for (qk, gqk) in qs.iter().zip(&gqs) {
                let c = linalg::dot(&w, gqk);
                w.iter_mut().zip(qk).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = op.dg_gram.quad_form(&w).max(0.0).sqrt();
        let m = alpha.len();
        let t = Mat::<f64>::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let evd = t
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Numerical(format!("tridiagonal eigensolver failed: {e:?}")))?;
        let s = evd.S().column_vector();
        let u = evd.U();
        let (lo, hi) = (s[0], s[m - 1]);
        let scale = lo.abs().max(hi.abs());
        let res = (b * u[(m - 1, 0)]).abs().max((b * u[(m - 1, m - 1)]).abs());
        last = Extremal {
            lo,
            hi,
            residual: res,
            method: "lanczos",
        };
        if res <= tol * scale || b <= 1e-14 * scale || step + 1 == n {
            return Ok(last);
        }
        beta.push(b);
        q = w.iter().map(|x| x / b).collect();
    }
    if last.residual.is_finite() {
        log::warn!(
            "Lanczos stopped after {max_steps} steps with residual {:e}",
            last.residual
        );
        return Ok(last);
    }
    Err(Error::Numerical("Lanczos produced no estimate".into()))
}

/// Where the constants used in `eta^2` come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstantsSource {
    /// Extremal eigenvalues of `(A, G)`.
    Extremal,
    /// `1 -/+ C_inv gamma^-1/2`.
    InverseEstimate,
}

#[derive(Debug, Clone)]
pub struct ConstantsReport {
    pub gamma: f64,
    pub h: f64,
    pub cinv_per_block: Vec<f64>,
    pub cinv: f64,
    pub a0_inverse: f64,
    pub a1_inverse: f64,
    pub extremal: Option<Extremal>,
    /// Worst sampled flux-bound ratio, should be at most 1.
    pub flux_ratio: f64,
}

impl ConstantsReport {
    pub fn compute(
        fine: &FineGrid,
        field: &CoefficientField,
        op: &DgOperator,
        with_extremal: bool,
        flux_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let nblocks = fine.coarse().num_blocks();
        let cinv_per_block = (0..nblocks)
            .map(|b| estimate_cinv(fine, field, b))
            .collect::<Result<Vec<_>>>()?;
        let cinv = cinv_per_block.iter().copied().fold(0.0, f64::max);
        let g = op.gamma();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flux_ratio: f64 = 0.0;
        if flux_samples > 0 {
            for (b, &c) in cinv_per_block.iter().enumerate() {
                flux_ratio =
                    flux_ratio.max(check_flux_bound(fine, field, b, c, flux_samples, &mut rng)?);
            }
        }
        let extremal = if with_extremal {
            Some(extremal_constants(op, seed)?)
        } else {
            None
        };
        Ok(ConstantsReport {
            gamma: g,
            h: cinv_h(fine),
            cinv,
            a0_inverse: 1.0 - cinv / g.sqrt(),
            a1_inverse: 1.0 + cinv / g.sqrt(),
            cinv_per_block,
            extremal,
            flux_ratio,
        })
    }

    /// Whether the sufficient penalty condition `gamma > C_inv^2` holds.
    pub fn penalty_condition_holds(&self) -> bool {
        self.gamma > self.cinv * self.cinv
    }

    /// `(a0, a1, source)` for the a posteriori bound: extremal values when
    /// available, the inverse-estimate formula otherwise.
    pub fn eta_constants(&self) -> Result<(f64, f64, ConstantsSource)> {
        if let Some(e) = self.extremal {
            if e.lo > 0.0 {
                return Ok((e.lo, e.hi, ConstantsSource::Extremal));
            }
            return Err(Error::Verification(format!(
                "a_DG is not coercive in the DG norm: smallest ratio {:e}",
                e.lo
            )));
        }
        if self.a0_inverse > 0.0 {
            return Ok((
                self.a0_inverse,
                self.a1_inverse,
                ConstantsSource::InverseEstimate,
            ));
        }
        Err(Error::Verification(format!(
            "gamma = {} <= C_inv^2 = {:.6}; the inverse estimate gives no positive coercivity constant",
            self.gamma,
            self.cinv * self.cinv
        )))
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("gamma: {}\n", self.gamma));
        s.push_str(&format!("h: {}\n", self.h));
        s.push_str(&format!("c_inv: {}\n", self.cinv));
        let (lo, hi) = self
            .cinv_per_block
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
        s.push_str(&format!("c_inv_block_min: {lo}\n"));
        s.push_str(&format!("c_inv_block_max: {hi}\n"));
        s.push_str("c_inv_trace_space: bilinear (fine Q1 traces substituted for biquadratic)\n");
        s.push_str(&format!(
            "penalty_condition_gamma_gt_cinv_sq: {}\n",
            self.penalty_condition_holds()
        ));
        s.push_str(&format!("a0_inverse: {}\n", self.a0_inverse));
        s.push_str(&format!("a1_inverse: {}\n", self.a1_inverse));
        s.push_str(&format!("flux_bound_max_ratio: {}\n", self.flux_ratio));
        if let Some(e) = self.extremal {
            s.push_str(&format!("coercivity_margin: {}\n", e.lo));
            s.push_str(&format!("continuity_extremal: {}\n", e.hi));
            s.push_str(&format!("extremal_method: {}\n", e.method));
            s.push_str(&format!("extremal_residual: {:e}\n", e.residual));
        }
        match self.eta_constants() {
            Ok((a0, a1, src)) => {
                s.push_str(&format!("eta_a0: {a0}\n"));
                s.push_str(&format!("eta_a1: {a1}\n"));
                s.push_str(&format!(
                    "eta_constants_source: {}\n",
                    match src {
                        ConstantsSource::Extremal => "extremal",
                        ConstantsSource::InverseEstimate => "inverse_estimate",
                    }
                ));
            }
            Err(e) => s.push_str(&format!("eta_constants_source: unavailable ({e})\n")),
        }
        s
    }
}

/// Outcome of sampling the continuity and coercivity inequalities.
#[derive(Debug, Clone)]
pub struct FormBoundsReport {
    pub samples: usize,
    /// Smallest sampled `a(u, u) / |u|^2_DG`.
    pub min_ratio: f64,
    /// Largest sampled `|a(u, v)| / (|u|_DG |v|_DG)`.
    pub max_ratio: f64,
    pub violations: Vec<String>,
}

/// Checks `a(u, u) >= a0 |u|^2` and `|a(u, v)| <= a1 |u| |v|` on random
/// functions, for the inverse-estimate constants (when positive) and the extremal ones.
pub fn check_form_bounds(
    op: &DgOperator,
    report: &ConstantsReport,
    samples: usize,
    seed: u64,
) -> FormBoundsReport {
    let n = op.num_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FormBoundsReport {
        samples,
        min_ratio: f64::INFINITY,
        max_ratio: 0.0,
        violations: Vec::new(),
    };
    let mut bounds = Vec::new();
    if report.a0_inverse > 0.0 {
        bounds.push(("inverse_estimate", report.a0_inverse, report.a1_inverse));
    }
    if let Some(e) = report.extremal {
        bounds.push(("extremal", e.lo, e.hi.max(e.lo.abs())));
    }
    for s in 0..samples {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (nu, nv) = (op.dg_norm_sq(&u), op.dg_norm_sq(&v));
        let auu = op.matrix.quad_form(&u);
        let auv = op.a_apply(&u, &v);
        let r0 = auu / nu;
        let r1 = auv.abs() / (nu * nv).sqrt();
        out.min_ratio = out.min_ratio.min(r0);
        out.max_ratio = out.max_ratio.max(r1);
        for &(name, a0, a1) in &bounds {
            if r0 < a0 * (1.0 - 1e-10) {
                out.violations.push(format!(
                    "sample {s}: a(u,u)/|u|^2 = {r0} < {name} a0 = {a0}"
                ));
            }
            if r1 > a1 * (1.0 + 1e-10) {
                out.violations.push(format!(
                    "sample {s}: |a(u,v)|/(|u||v|) = {r1} > {name} a1 = {a1}"
                ));
            }
        }
    }
    out
}

/// One iteration's data for the bound checks.
#[derive(Debug, Clone, Copy)]
pub struct BoundSample {
    pub iteration: usize,
    pub sub_iteration: usize,
    /// `|u_h - u_H|_A^2` before the step.
    pub error_sq: f64,
    pub eta_sq: f64,
    pub theta: Option<f64>,
    /// `|e_after|_A / |e_before|_A`, when a step followed.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    /// `eta^2 / error^2` per sample; infinite when the error is zero.
    pub slack: Vec<f64>,
    pub min_slack: f64,
    /// Largest `ratio^2 - (1 - theta)`.
    pub worst_contraction_excess: f64,
    pub violations: Vec<String>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Asserts `error^2 <= eta^2 + 1e-8 scale` and `ratio^2 <= 1 - theta + 1e-8`.
pub fn check_bound(samples: &[BoundSample], scale: f64) -> BoundReport {
    let mut rep = BoundReport {
        slack: Vec::with_capacity(samples.len()),
        min_slack: f64::INFINITY,
        worst_contraction_excess: f64::NEG_INFINITY,
        violations: Vec::new(),
    };
    for s in samples {
        let slack = if s.error_sq > 0.0 {
            s.eta_sq / s.error_sq
        } else {
            f64::INFINITY
        };
        rep.slack.push(slack);
        rep.min_slack = rep.min_slack.min(slack);
        if s.error_sq > s.eta_sq + 1e-8 * scale {
            rep.violations.push(format!(
                "iteration {} sub-iteration {}: error^2 {:e} exceeds eta^2 {:e}",
                s.iteration, s.sub_iteration, s.error_sq, s.eta_sq
            ));
        }
        if let (Some(th), Some(r)) = (s.theta, s.ratio) {
            let excess = r * r - (1.0 - th);
            rep.worst_contraction_excess = rep.worst_contraction_excess.max(excess);
            if excess > 1e-8 {
                rep.violations.push(format!(
                    "iteration {} sub-iteration {}: ratio^2 {:.12} > 1 - theta {:.12}",
                    s.iteration,
                    s.sub_iteration,
                    r * r,
                    1.0 - th
                ));
            }
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grids, Rect};
    use nalgebra::DMatrix;

    fn unit(nb: usize, nf: usize) -> (FineGrid, CoefficientField) {
        let f = build_grids(Rect::unit(), nb, nb, nf, nf).unwrap();
        let k = CoefficientField::constant(&f, 1.0).unwrap();
        (f, k)
    }

    #[test]
    fn cinv_single_cell_matches_brute_force() {
        let (f, k) = unit(2, 1);
        let c = estimate_cinv(&f, &k, 0).unwrap();
        // trace space = all 4 nodes; energy is the cell stiffness itself
        let h = 0.5;
        let ke = dg::cell_stiffness(h, h, 1.0);
        let kk = DMatrix::<f64>::from_fn(4, 4, |i, j| ke[i][j] * h);
        // boundary mass: 4 segments around the cell, nodes 0-1, 1-3, 3-2, 2-0
        let mut m = DMatrix::<f64>::zeros(4, 4);
        for (a, b) in [(0, 1), (1, 3), (3, 2), (2, 0)] {
            m[(a, a)] += h / 3.0;
            m[(b, b)] += h / 3.0;
            m[(a, b)] += h / 6.0;
            m[(b, a)] += h / 6.0;
        }
        let l = m.clone().cholesky().unwrap().l();
        let li = l.try_inverse().unwrap();
        let cmat: DMatrix<f64> = &li * kk * li.transpose();
        let top = cmat.symmetric_eigen().eigenvalues.max();
        assert!((c - top.sqrt()).abs() < 1e-10 * c);
    }

    #[test]
    fn cinv_invariant_under_kappa_scaling_and_refinement() {
        let (f, _) = unit(2, 3);
        let k = CoefficientField::from_fn(&f, |x, y| 1.0 + 40.0 * (x * y)).unwrap();
        let c1 = estimate_cinv(&f, &k, 3).unwrap();
        let c2 = estimate_cinv(&f, &k.scaled(17.0), 3).unwrap();
        assert!((c1 - c2).abs() < 1e-10 * c1);
        let mut prev = 0.0;
        for nf in [1, 2, 4, 8] {
            let (f, k) = unit(1, nf);
            let c = estimate_cinv(&f, &k, 0).unwrap();
            assert!(c >= prev - 1e-10, "nf {nf}: {c} < {prev}");
            prev = c;
        }
    }

    #[test]
    fn flux_bound_holds_with_estimated_constant() {
        let (f, _) = unit(2, 4);
        let k = CoefficientField::from_fn(&f, |x, _| if x > 0.3 { 50.0 } else { 1.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for b in 0..4 {
            let c = estimate_cinv(&f, &k, b).unwrap();
            let r = check_flux_bound(&f, &k, b, c, 100, &mut rng).unwrap();
            assert!(r <= 1.0 + 1e-10, "block {b}: {r}");
        }
    }

    #[test]
    fn inverse_estimate_constants_sum_to_two_and_extremal_is_coercive() {
        let (f, k) = unit(2, 2);
        let op = DgOperator::assemble(&f, &k, 2.0, &|_, _| 1.0).unwrap();
        let rep = ConstantsReport::compute(&f, &k, &op, true, 20, 0).unwrap();
        assert!((rep.a0_inverse + rep.a1_inverse - 2.0).abs() < 1e-15);
        let e = rep.extremal.unwrap();
        assert!(e.lo > 0.0);
        let l = check_form_bounds(&op, &rep, 50, 1);
        assert!(l.violations.is_empty(), "{:?}", l.violations);
        assert!(l.min_ratio >= e.lo * (1.0 - 1e-10));
    }

    #[test]
    fn coercivity_improves_with_gamma() {
        let (f, k) = unit(2, 2);
        let mut prev = f64::NEG_INFINITY;
        for g in [2.0, 8.0, 32.0] {
            let op = DgOperator::assemble(&f, &k, g, &|_, _| 1.0).unwrap();
            let e = extremal_constants(&op, 0).unwrap();
            assert!(e.lo > prev);
            assert!(e.lo < 1.0);
            prev = e.lo;
        }
        assert!(prev > 0.8);
    }

    #[test]
    fn lanczos_matches_dense() {
        let f = build_grids(Rect::unit(), 3, 3, 3, 3).unwrap();
        let k = CoefficientField::from_fn(&f, |x, y| if (x - y).abs() < 0.2 { 1e3 } else { 1.0 })
            .unwrap();
        let op = DgOperator::assemble(&f, &k, 2.0, &|_, _| 1.0).unwrap();
        let dense = extremal_constants(&op, 0).unwrap();
        assert_eq!(dense.method, "dense");
        let lz = lanczos_extremal(&op, 3, 1e-10, op.num_dofs()).unwrap();
        let scale = dense.hi.abs().max(dense.lo.abs());
        assert!(
            (lz.lo - dense.lo).abs() < 1e-8 * scale,
            "{} vs {}",
            lz.lo,
            dense.lo
        );
        assert!((lz.hi - dense.hi).abs() < 1e-8 * scale);
    }

    #[test]
    fn continuous_function_ratio_is_one() {
        let (f, k) = unit(2, 3);
        let op = DgOperator::assemble(&f, &k, 2.0, &|_, _| 1.0).unwrap();
        let u: Vec<f64> = (0..f.num_dofs())
            .map(|d| {
                let (x, y) = f.dof_position(d);
                (x * (1.0 - x)) * (y * (1.0 - y)).sqrt()
            })
            .collect();
        let r = op.matrix.quad_form(&u) / op.dg_norm_sq(&u);
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_checks() {
        let ok = [BoundSample {
            iteration: 1,
            sub_iteration: 0,
            error_sq: 1.0,
            eta_sq: 3.0,
            theta: Some(0.2),
            ratio: Some(0.85),
        }];
        let r = check_bound(&ok, 1.0);
        assert!(r.passed());
        assert!((r.min_slack - 3.0).abs() < 1e-15);
        let bad = [BoundSample {
            eta_sq: 0.5,
            ..ok[0]
        }];
        assert!(!check_bound(&bad, 1.0).passed());
        let slow = [BoundSample {
            ratio: Some(0.95),
            ..ok[0]
        }];
        assert!(!check_bound(&slow, 1.0).passed());
        let zero = [BoundSample {
            error_sq: 0.0,
            eta_sq: 0.0,
            theta: None,
            ratio: None,
            ..ok[0]
        }];
        assert!(check_bound(&zero, 1.0).passed());
    }
}
