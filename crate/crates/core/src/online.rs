//! Online stage: local residuals, their Riesz representatives (the online
//! basis functions), modified residuals for the a posteriori bound, and
//! region selection.

use std::fmt;

use rayon::prelude::*;

use crate::dg::DgOperator;
use crate::error::{Error, Result};
use crate::grid::{FineGrid, Neighborhood};
use crate::linalg::{self, CsrMatrix, SparseCholesky};
use crate::offline::{BasisFunction, OfflineData, Provenance};
use crate::space::{AddReport, MultiscaleSpace};

/// Inner product used to represent the local residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RieszForm {
    /// `a_DG` restricted to `V_0^h(omega_i)`. The representative is then the
    /// exact optimal one-dimensional correction, so adding it lowers the squared
    /// energy error by at least `|R_i|^2`.
    #[default]
    Energy,
    /// `a_omega_i`: block energies plus interior-edge penalties, no consistency terms.
    Neighborhood,
}

impl RieszForm {
    pub fn parse(s: &str) -> Result<RieszForm> {
        match s {
            "energy" => Ok(RieszForm::Energy),
            "neighborhood" => Ok(RieszForm::Neighborhood),
            other => Err(Error::Format(format!("unknown riesz form `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RieszForm::Energy => "energy",
            RieszForm::Neighborhood => "neighborhood",
        }
    }
}

/// Restriction of the global fine residual `b - A u_H` to the free DOFs of a
/// neighborhood.
pub fn residual_functional(residual: &[f64], nb: &Neighborhood) -> Vec<f64> {
    nb.free.iter().map(|&l| residual[nb.dofs[l]]).collect()
}

#[derive(Debug, Clone)]
pub struct ResidualIndicator {
    pub node: usize,
    /// `|R_i|^2 = R_i(phi)`.
    pub norm_sq: f64,
    /// `phi` on the free DOFs of the neighborhood.
    pub phi: Vec<f64>,
    /// Riesz-form energy of `phi`; equals `norm_sq` up to round-off.
    pub phi_energy: f64,
}

/// Factored local systems, one per coarse node.
pub struct LocalSolvers {
    form: RieszForm,
    matrices: Vec<CsrMatrix>,
    factors: Vec<SparseCholesky>,
}

impl LocalSolvers {
    pub fn build(op: &DgOperator, offline: &OfflineData, form: RieszForm) -> Result<Self> {
        let built = offline
            .neighborhoods
            .par_iter()
            .zip(&offline.a_omega)
            .map(|(nb, a_omega)| {
                let m = match form {
                    RieszForm::Energy => op.matrix.principal_submatrix(&nb.free_dofs_global()),
                    RieszForm::Neighborhood => a_omega.principal_submatrix(&nb.free),
                };
                let f = SparseCholesky::factor(&m)
                    .map_err(|e| e.with_context(format!("local system at node {}", nb.node)))?;
                Ok((m, f))
            })
            .collect::<Result<Vec<_>>>()?;
        let (matrices, factors) = built.into_iter().unzip();
        Ok(LocalSolvers {
            form,
            matrices,
            factors,
        })
    }

    pub fn form(&self) -> RieszForm {
        self.form
    }

    pub fn matrix(&self, node: usize) -> &CsrMatrix {
        &self.matrices[node]
    }

    /// Solves `m(phi, v) = R_i(v)` for all free `v`.
    pub fn riesz_solve(&self, node: usize, functional: &[f64]) -> Result<ResidualIndicator> {
        let m = &self.matrices[node];
        let phi = self.factors[node]
            .solve_checked(m, functional, 1e-10)
            .map_err(|e| e.with_context(format!("local solve at node {node}")))?;
        let norm_sq = linalg::dot(functional, &phi);
        let phi_energy = m.quad_form(&phi);
        Ok(ResidualIndicator {
            node,
            norm_sq: norm_sq.max(0.0),
            phi,
            phi_energy,
        })
    }

    /// Indicators for `nodes` given the global residual vector.
    pub fn indicators(
        &self,
        offline: &OfflineData,
        residual: &[f64],
        nodes: &[usize],
    ) -> Result<Vec<ResidualIndicator>> {
        nodes
            .par_iter()
            .map(|&i| {
                let nb = &offline.neighborhoods[i];
                self.riesz_solve(i, &residual_functional(residual, nb))
            })
            .collect()
    }
}

/// Factored `a_omega` on the range `W_i` of `v -> I(chi_i v)` per node.
pub struct ModifiedSolvers {
    /// Local indices spanning `W_i`: the DOFs where `chi_i` is nonzero.
    support: Vec<Vec<usize>>,
    matrices: Vec<CsrMatrix>,
    factors: Vec<SparseCholesky>,
}

impl ModifiedSolvers {
    pub fn build(fine: &FineGrid, offline: &OfflineData) -> Result<Self> {
        let built = offline
            .neighborhoods
            .par_iter()
            .zip(&offline.a_omega)
            .map(|(nb, a_omega)| {
                let chi = offline.pou.neighborhood_chi(fine, nb);
                let scale = chi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let support: Vec<usize> = (0..nb.num_dofs())
                    .filter(|&l| chi[l].abs() > 1e-14 * scale)
                    .collect();
                let m = a_omega.principal_submatrix(&support);
                let f = SparseCholesky::factor(&m).map_err(|e| {
                    e.with_context(format!("modified residual space at node {}", nb.node))
                })?;
                Ok((support, m, f))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut support = Vec::new();
        let mut matrices = Vec::new();
        let mut factors = Vec::new();
        for (s, m, f) in built {
            support.push(s);
            matrices.push(m);
            factors.push(f);
        }
        Ok(ModifiedSolvers {
            support,
            matrices,
            factors,
        })
    }

    /// `|R~_i|^2 = sup_{w in W_i} R(w)^2 / a_omega(w, w)`. Because `W_i` is
    /// spanned by unit nodal vectors the sup is a Riesz solve on that support.
    pub fn norm_sq(&self, offline: &OfflineData, residual: &[f64], node: usize) -> f64 {
        let nb = &offline.neighborhoods[node];
        let r: Vec<f64> = self.support[node]
            .iter()
            .map(|&l| residual[nb.dofs[l]])
            .collect();
        let x = self.factors[node].solve_refined(&self.matrices[node], &r, 1);
        linalg::dot(&r, &x).max(0.0)
    }

    pub fn all_norms_sq(&self, offline: &OfflineData, residual: &[f64]) -> Vec<f64> {
        (0..self.support.len())
            .into_par_iter()
            .map(|i| self.norm_sq(offline, residual, i))
            .collect()
    }

    pub fn support(&self, node: usize) -> &[usize] {
        &self.support[node]
    }
}

/// Constants entering `eta^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaConstants {
    pub a0: f64,
    pub a1: f64,
    /// Maximum number of vertices per coarse block; 4 for rectangles.
    pub c0: f64,
}

impl EtaConstants {
    pub fn new(a0: f64, a1: f64) -> Result<Self> {
        if !(a0 > 0.0) || !(a1 >= a0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < a0 <= a1 for the a posteriori bound, got a0 = {a0}, a1 = {a1}"
            )));
        }
        Ok(EtaConstants { a0, a1, c0: 4.0 })
    }
}

/// `eta^2 = 2 a0^-1 a1 C0 sum_i (1 + 1/lambda_i) |R~_i|^2` with
/// `lambda_i = lambda_{L_i + 1}` of the initial space.
pub fn eta_sq(constants: &EtaConstants, excluded_eigs: &[f64], modified_sq: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for (i, (&lam, &r)) in excluded_eigs.iter().zip(modified_sq).enumerate() {
        if r == 0.0 {
            continue;
        }
        if !(lam > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "node {i}: first excluded eigenvalue {lam:e} is not positive"
            )));
        }
        sum += (1.0 + 1.0 / lam) * r;
    }
    Ok(2.0 * constants.a1 / constants.a0 * constants.c0 * sum)
}

/// `theta~ = sum_{i in S} |R_i|^2 / eta^2`.
pub fn theta(selected_sum_sq: f64, eta_sq: f64) -> Result<f64> {
    if eta_sq == 0.0 {
        if selected_sum_sq == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::Numerical(format!(
            "eta^2 = 0 while the selected residuals sum to {selected_sum_sq:e}"
        )));
    }
    Ok(selected_sum_sq / eta_sq)
}

/// Which neighborhoods of a color class receive a new basis function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Every node of the class with a nonzero residual.
    All,
    /// Nodes whose residual norm exceeds `tol` (relative to the run's scale).
    Threshold { tol: f64 },
    /// Smallest set of largest residuals holding a fraction `theta` of the
    /// squared total, among nodes above `tol` when given.
    Cumulative { theta: f64, tol: Option<f64> },
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Strategy> {
        let t: Vec<&str> = s.split_whitespace().collect();
        let num = |x: &str| {
            x.parse::<f64>()
                .map_err(|_| Error::Format(format!("strategy `{s}`: bad number `{x}`")))
        };
        let st = match t.as_slice() {
            ["all"] => Strategy::All,
            ["threshold", tol] => Strategy::Threshold { tol: num(tol)? },
            ["cumulative", th] => Strategy::Cumulative {
                theta: num(th)?,
                tol: None,
            },
            ["cumulative", th, tol] => Strategy::Cumulative {
                theta: num(th)?,
                tol: Some(num(tol)?),
            },
            _ => return Err(Error::Format(format!("unknown strategy `{s}`"))),
        };
        st.validate()?;
        Ok(st)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Strategy::All => Ok(()),
            Strategy::Threshold { tol } if tol > 0.0 && tol.is_finite() => Ok(()),
            Strategy::Cumulative { theta, tol }
                if theta > 0.0 && theta <= 1.0 && tol.is_none_or(|t| t > 0.0 && t.is_finite()) =>
            {
                Ok(())
            }
            _ => Err(Error::InvalidArgument(format!(
                "invalid strategy parameters `{self}`"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::All => write!(f, "all"),
            Strategy::Threshold { tol } => write!(f, "threshold {tol}"),
            Strategy::Cumulative { theta, tol: None } => write!(f, "cumulative {theta}"),
            Strategy::Cumulative {
                theta,
                tol: Some(t),
            } => write!(f, "cumulative {theta} {t}"),
        }
    }
}

/// Picks the nodes to enrich from `(node, |R_i|^2)` pairs. Thresholds compare
/// `|R_i|` with `tol * scale`. The result is sorted by node index.
pub fn select_regions(indicators: &[(usize, f64)], strategy: &Strategy, scale: f64) -> Vec<usize> {
    let above = |tol: Option<f64>| -> Vec<(usize, f64)> {
        indicators
            .iter()
            .copied()
            .filter(|&(_, r2)| r2 > 0.0 && tol.is_none_or(|t| r2.sqrt() > t * scale))
            .collect()
    };
    let mut out: Vec<usize> = match *strategy {
        Strategy::All => above(None).into_iter().map(|(i, _)| i).collect(),
        Strategy::Threshold { tol } => above(Some(tol)).into_iter().map(|(i, _)| i).collect(),
        Strategy::Cumulative { theta, tol } => {
            let mut c = above(tol);
            c.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let total: f64 = c.iter().map(|x| x.1).sum();
            let mut acc = 0.0;
            let mut chosen = Vec::new();
            for (i, r2) in c {
                if acc >= theta * total && !chosen.is_empty() {
                    break;
                }
                acc += r2;
                chosen.push(i);
            }
            chosen
        }
    };
    out.sort_unstable();
    out
}

/// Splits `phi` (on the free DOFs of `nb`) into one basis function per
/// member block, skipping blocks where it vanishes.
pub fn split_online(
    fine: &FineGrid,
    nb: &Neighborhood,
    phi: &[f64],
    iteration: usize,
    sub_iteration: usize,
) -> Vec<BasisFunction> {
    let npb = fine.nodes_per_block();
    let mut pieces: Vec<Vec<f64>> = vec![vec![0.0; npb]; nb.blocks.len()];
    for (&l, &v) in nb.free.iter().zip(phi) {
        pieces[l / npb][l % npb] = v;
    }
    nb.blocks
        .iter()
        .zip(pieces)
        .filter(|(_, values)| values.iter().any(|&v| v != 0.0))
        .map(|(&block, values)| BasisFunction {
            block,
            values,
            provenance: Provenance::Online {
                iteration,
                sub_iteration,
                node: nb.node,
            },
        })
        .collect()
}

/// Adds the representatives of the selected indicators to the space.
pub fn enrich(
    space: &mut MultiscaleSpace,
    op: &DgOperator,
    fine: &FineGrid,
    offline: &OfflineData,
    selected: &[&ResidualIndicator],
    iteration: usize,
    sub_iteration: usize,
) -> Result<AddReport> {
    let mut cands = Vec::new();
    for ind in selected {
        let nb = &offline.neighborhoods[ind.node];
        cands.extend(split_online(fine, nb, &ind.phi, iteration, sub_iteration));
    }
    if cands.is_empty() {
        return Ok(AddReport::default());
    }
    space.add_candidates(op, fine, cands)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::CoefficientField;
    use crate::grid::{build_grids, Rect};
    use crate::offline::PouKind;
    use crate::space::Assembly;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        fine: FineGrid,
        op: DgOperator,
        off: OfflineData,
    }

    fn setup(nb: usize, nf: usize) -> Setup {
        let fine = build_grids(Rect::unit(), nb, nb, nf, nf).unwrap();
        let k =
            CoefficientField::from_fn(
                &fine,
                |x, y| if (x - 0.3).abs() < 0.07 { 1e3 } else { 1.0 + y },
            )
            .unwrap();
        let op = DgOperator::assemble(&fine, &k, 2.0, &|_, _| 1.0).unwrap();
        let off = OfflineData::build(&fine, &k, 2.0, PouKind::Bilinear, 3).unwrap();
        Setup { fine, op, off }
    }

    #[test]
    fn selection_rules() {
        let r = [(0, 9.0), (1, 4.0), (2, 1.0)];
        let c = Strategy::Cumulative {
            theta: 0.5,
            tol: None,
        };
        assert_eq!(select_regions(&r, &c, 1.0), vec![0]);
        let c1 = Strategy::Cumulative {
            theta: 1.0,
            tol: None,
        };
        assert_eq!(
            select_regions(&[(0, 9.0), (1, 0.0), (2, 1.0)], &c1, 1.0),
            vec![0, 2]
        );
        assert!(select_regions(&r, &Strategy::Threshold { tol: 5.0 }, 1.0).is_empty());
        assert_eq!(
            select_regions(&r, &Strategy::Threshold { tol: 1.5 }, 1.0),
            vec![0, 1]
        );
        assert_eq!(select_regions(&r, &Strategy::All, 1.0), vec![0, 1, 2]);
        // ties go to the lower node index
        let ties = [(5, 4.0), (2, 4.0), (7, 1.0)];
        let c4 = Strategy::Cumulative {
            theta: 0.4,
            tol: None,
        };
        assert_eq!(select_regions(&ties, &c4, 1.0), vec![2]);
    }

    #[test]
    fn strategy_text_round_trip() {
        for s in [
            "all",
            "threshold 0.001",
            "cumulative 0.5",
            "cumulative 0.5 0.00001",
        ] {
            assert_eq!(Strategy::parse(s).unwrap().to_string(), s);
        }
        assert!(Strategy::parse("cumulative 1.5").is_err());
        assert!(Strategy::parse("threshold -1").is_err());
        assert!(Strategy::parse("dorfler").is_err());
    }

    #[test]
    fn zero_functional_and_exact_solution() {
        let s = setup(2, 3);
        let ls = LocalSolvers::build(&s.op, &s.off, RieszForm::Energy).unwrap();
        let nb = &s.off.neighborhoods[4];
        let ind = ls.riesz_solve(4, &vec![0.0; nb.free.len()]).unwrap();
        assert_eq!(ind.norm_sq, 0.0);
        assert!(ind.phi.iter().all(|&v| v == 0.0));
        let uh = s.op.solve_fine().unwrap();
        let r = s.op.residual(&uh);
        let ms = ModifiedSolvers::build(&s.fine, &s.off).unwrap();
        let scale = linalg::dot(&s.op.load, &uh);
        for i in 0..s.off.neighborhoods.len() {
            let ind = ls
                .riesz_solve(i, &residual_functional(&r, &s.off.neighborhoods[i]))
                .unwrap();
            assert!(ind.norm_sq < 1e-20 * scale);
            assert!(ms.norm_sq(&s.off, &r, i) < 1e-20 * scale);
        }
    }

    #[test]
    fn riesz_identity_and_maximizer() {
        let s = setup(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for form in [RieszForm::Energy, RieszForm::Neighborhood] {
            let ls = LocalSolvers::build(&s.op, &s.off, form).unwrap();
            let r = s.op.residual(&vec![0.0; s.fine.num_dofs()]);
            for i in [0, 5, 6] {
                let f = residual_functional(&r, &s.off.neighborhoods[i]);
                let ind = ls.riesz_solve(i, &f).unwrap();
                assert!((ind.norm_sq - ind.phi_energy).abs() <= 1e-9 * ind.norm_sq);
                let m = ls.matrix(i);
                for _ in 0..200 {
                    let v: Vec<f64> = (0..f.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let rv = linalg::dot(&f, &v);
                    assert!(rv * rv / m.quad_form(&v) <= ind.norm_sq * (1.0 + 1e-9));
                }
            }
        }
    }

    #[test]
    fn modified_norm_matches_sampled_sup() {
        let s = setup(2, 2);
        let ms = ModifiedSolvers::build(&s.fine, &s.off).unwrap();
        let r = s.op.residual(&vec![0.0; s.fine.num_dofs()]);
        let node = 4;
        let nb = &s.off.neighborhoods[node];
        let exact = ms.norm_sq(&s.off, &r, node);
        // brute force over v in V^h(omega): w = I(chi v), ratio R(w)^2 / a_omega(w, w)
        let chi = s.off.pou.neighborhood_chi(&s.fine, nb);
        let a = &s.off.a_omega[node];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut best: f64 = 0.0;
        let support = ms.support(node).to_vec();
        let rz: Vec<f64> = support.iter().map(|&l| r[nb.dofs[l]]).collect();
        let az = a.principal_submatrix(&support);
        let x = crate::linalg::SparseCholesky::factor(&az)
            .unwrap()
            .solve(&rz);
        for t in 0..20_000 {
            let mut v: Vec<f64> = (0..nb.num_dofs())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            if t % 2 == 0 {
                // bias samples toward the maximizer to make the sup reachable
                for (k, &l) in support.iter().enumerate() {
                    v[l] = x[k] / chi[l] + 1e-3 * v[l];
                }
            }
            let w: Vec<f64> = v.iter().zip(&chi).map(|(a, b)| a * b).collect();
            let rw: f64 = (0..w.len()).map(|l| r[nb.dofs[l]] * w[l]).sum();
            best = best.max(rw * rw / a.quad_form(&w));
        }
        assert!(best <= exact * (1.0 + 1e-9));
        assert!(best >= 0.99 * exact, "{best} vs {exact}");
        let scaled: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        assert!((ms.norm_sq(&s.off, &scaled, node) - 9.0 * exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn eta_and_theta_by_hand() {
        let c = EtaConstants::new(0.5, 1.5).unwrap();
        let eta = eta_sq(&c, &[0.5, 2.0], &[1.0, 4.0]).unwrap();
        // 2 * 1.5 / 0.5 * 4 * (3 * 1 + 1.5 * 4)
        assert!((eta - 24.0 * 9.0).abs() < 1e-12);
        assert!((theta(54.0, eta).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(eta_sq(&c, &[0.5, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(theta(0.0, 0.0).unwrap(), 0.0);
        assert!(theta(1.0, 0.0).is_err());
        assert!(EtaConstants::new(-0.1, 1.0).is_err());
    }

    #[test]
    fn one_class_step_reduces_error_by_indicator_sum() {
        let s = setup(4, 3);
        let layers = s.off.uniform_layers(&s.fine, 1, true);
        let basis = s.off.split_and_collect(&s.fine, &layers).unwrap();
        let (mut space, _) =
            MultiscaleSpace::new(&s.op, &s.fine, basis, Assembly::Reassemble).unwrap();
        let ls = LocalSolvers::build(&s.op, &s.off, RieszForm::Energy).unwrap();
        let uh = s.op.solve_fine().unwrap();
        let err = |u: &[f64]| {
            let d: Vec<f64> = uh.iter().zip(u).map(|(a, b)| a - b).collect();
            s.op.a_norm_sq(&d).unwrap()
        };
        let classes = crate::grid::color_classes(s.fine.coarse());
        for (c, class) in classes.iter().enumerate() {
            let u = space.solve(&s.op).unwrap().fine;
            let before = err(&u);
            let r = s.op.residual(&u);
            let inds = ls.indicators(&s.off, &r, class).unwrap();
            let sum: f64 = inds.iter().map(|i| i.norm_sq).sum();
            let refs: Vec<&ResidualIndicator> = inds.iter().collect();
            enrich(&mut space, &s.op, &s.fine, &s.off, &refs, 1, c).unwrap();
            let after = err(&space.solve(&s.op).unwrap().fine);
            assert!(
                before - after >= sum - 1e-10 * before,
                "class {c}: {before} -> {after}, sum {sum}"
            );
        }
    }

    #[test]
    fn split_pieces_stay_in_member_blocks() {
        let s = setup(3, 2);
        let nb = &s.off.neighborhoods[5];
        let phi = vec![1.0; nb.free.len()];
        let pieces = split_online(&s.fine, nb, &phi, 2, 1);
        assert_eq!(pieces.len(), 4);
        for p in &pieces {
            assert!(nb.blocks.contains(&p.block));
        }
        assert!(split_online(&s.fine, nb, &vec![0.0; nb.free.len()], 2, 1).is_empty());
    }
}
