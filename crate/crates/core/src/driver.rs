//! The full pipeline: offline space, coarse solves, online enrichment in
//! four color classes, error metrics and the convergence history.

use std::fmt;
use std::time::Instant;

use log::{debug, info, warn};

use crate::coefficient::{self, CoefficientField};
use crate::config::{FieldSource, RunConfig};
use crate::dg::DgOperator;
use crate::error::{Error, Result};
use crate::grid::{self, FineGrid};
use crate::linalg;
use crate::offline::OfflineData;
use crate::online::{self, EtaConstants, LocalSolvers, ModifiedSolvers};
use crate::space::{CoarseSolution, MultiscaleSpace};
use crate::verify::{self, BoundReport, BoundSample, ConstantsReport};

/// Grids, coefficient, operator and the fine reference solution.
pub struct Problem {
    pub fine: FineGrid,
    pub field: CoefficientField,
    pub op: DgOperator,
    /// `u_h`.
    pub reference: Vec<f64>,
    reference_dg: f64,
    reference_l2: f64,
}

impl Problem {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let g = &cfg.grid;
        let fine = grid::build_grids(g.domain, g.coarse.0, g.coarse.1, g.fine.0, g.fine.1)?;
        let field = match &cfg.field {
            FieldSource::File { path, shift } => coefficient::load_field(path, &fine, *shift)?,
            FieldSource::Preset { preset, contrast } => coefficient::generate_channels_inclusions(
                &fine,
                &preset.features(),
                *contrast,
                cfg.seed,
            )?,
            FieldSource::Features { features, contrast } => {
                coefficient::generate_channels_inclusions(&fine, features, *contrast, cfg.seed)?
            }
        };
        Self::new(fine, field, cfg.solver.gamma, cfg.solver.source)
    }

    /// Assembles the operator for a constant source and solves the fine problem.
    pub fn new(fine: FineGrid, field: CoefficientField, gamma: f64, source: f64) -> Result<Self> {
        let op = DgOperator::assemble(&fine, &field, gamma, &move |_, _| source)?;
        let reference = op
            .solve_fine()
            .map_err(|e| e.with_context("fine reference solve"))?;
        let reference_dg = op.dg_norm(&reference);
        let reference_l2 = op.l2_norm(&reference);
        Ok(Problem {
            fine,
            field,
            op,
            reference,
            reference_dg,
            reference_l2,
        })
    }

    /// Relative `(e_2, e_a)` of `u_H` against `u_h`, `e_a` in the DG norm.
    pub fn errors(&self, u: &[f64]) -> Result<(f64, f64)> {
        if !(self.reference_dg > 0.0 && self.reference_l2 > 0.0) {
            return Err(Error::Numerical(
                "reference solution is zero; relative errors undefined".into(),
            ));
        }
        let d = diff(&self.reference, u);
        Ok((
            self.op.l2_norm(&d) / self.reference_l2,
            self.op.dg_norm(&d) / self.reference_dg,
        ))
    }

    /// `|u_h - u|_A^2`.
    pub fn energy_error_sq(&self, u: &[f64]) -> Result<f64> {
        self.op.a_norm_sq(&diff(&self.reference, u))
    }

    /// Offline data with enough eigenvectors for `layers` per node.
    pub fn offline(&self, cfg: &RunConfig, layers: usize) -> Result<OfflineData> {
        OfflineData::build(
            &self.fine,
            &self.field,
            cfg.solver.gamma,
            cfg.solver.pou,
            layers,
        )
        .map_err(|e| e.with_context("offline stage"))
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Galerkin solve in the current space.
pub fn coarse_solve(op: &DgOperator, space: &MultiscaleSpace) -> Result<CoarseSolution> {
    space.solve(op)
}

/// One line of the convergence history: the state after a sub-iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub sub_iteration: usize,
    pub dof: usize,
    pub e_a: f64,
    pub e_2: f64,
    /// `|u_h - u_H|_A^2` after the step.
    pub energy_error_sq: f64,
    /// `sum_{i in S} |R_i|^2` of the regions enriched in this step.
    pub sum_residual_sq: Option<f64>,
    /// `eta^2` of the solution the step started from.
    pub eta_sq: Option<f64>,
    pub theta: Option<f64>,
    /// `|e_after|_A / |e_before|_A`.
    pub contraction_ratio: Option<f64>,
    pub selected: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceHistory {
    pub rows: Vec<HistoryRow>,
}

impl ConvergenceHistory {
    pub const HEADER: &'static str =
        "iteration,sub_iteration,dof,e_a,e_2,sum_residual_sq,eta_sq,theta,contraction_ratio,wall_ms";

    pub fn last(&self) -> &HistoryRow {
        self.rows
            .last()
            .expect("history always holds the initial solve")
    }

    /// Last row of every completed online iteration, after row 0.
    pub fn iteration_ends(&self) -> Vec<&HistoryRow> {
        let mut out: Vec<&HistoryRow> = Vec::new();
        for r in &self.rows {
            match out.last() {
                Some(p) if p.iteration == r.iteration => *out.last_mut().unwrap() = r,
                _ => out.push(r),
            }
        }
        out
    }

    /// Online iterations needed until `e_a <= target`, if reached.
    pub fn iterations_to(&self, target: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.e_a <= target)
            .map(|r| r.iteration)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:e},{:e},{},{},{},{},{:.3}\n",
                r.iteration,
                r.sub_iteration,
                r.dof,
                r.e_a,
                r.e_2,
                opt(r.sum_residual_sq),
                opt(r.eta_sq),
                opt(r.theta),
                opt(r.contraction_ratio),
                r.wall_ms
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    TargetError,
    EmptySelection,
    MaxIterations,
    DofBudget,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::TargetError => "target error reached",
            StopReason::EmptySelection => "no region selected in a full iteration",
            StopReason::MaxIterations => "maximum iterations",
            StopReason::DofBudget => "dof budget",
        })
    }
}

/// One color-class step's indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorRecord {
    pub iteration: usize,
    pub sub_iteration: usize,
    pub node: usize,
    pub residual_norm_sq: f64,
    pub selected: bool,
}

/// What the observer sees after each coarse solve.
pub struct StepView<'a> {
    pub problem: &'a Problem,
    pub offline: &'a OfflineData,
    pub space: &'a MultiscaleSpace,
    pub solution: &'a CoarseSolution,
    pub row: &'a HistoryRow,
    /// `|u_h - u_H|_A^2` before the step; `None` for the initial solve.
    pub energy_error_sq_before: Option<f64>,
}

pub struct RunOutput {
    pub history: ConvergenceHistory,
    pub stop_reason: StopReason,
    pub lambda_min: f64,
    pub layers: Vec<usize>,
    pub block_counts: Vec<usize>,
    pub indicators: Vec<IndicatorRecord>,
    pub constants: Option<ConstantsReport>,
    pub bound_check: Option<BoundReport>,
    pub solution: CoarseSolution,
    pub rejected: usize,
}

impl RunOutput {
    /// `(a_0, a_1)` used for `eta^2`, when the run was certified.
    pub fn eta_constants(&self) -> Option<(f64, f64)> {
        self.constants
            .as_ref()?
            .eta_constants()
            .ok()
            .map(|(a, b, _)| (a, b))
    }
}

/// Full run from a configuration.
pub fn run_adaptive(cfg: &RunConfig) -> Result<(Problem, OfflineData, RunOutput)> {
    cfg.validate()?;
    let problem = Problem::build(cfg)?;
    let offline = problem.offline(cfg, cfg.solver.layers)?;
    let out = run_with(&problem, &offline, cfg, |_| {})?;
    Ok((problem, offline, out))
}

/// Online loop on prebuilt problem and offline data, which may be shared by
/// runs that differ only in online settings or the number of layers.
pub fn run_with(
    problem: &Problem,
    offline: &OfflineData,
    cfg: &RunConfig,
    mut observer: impl FnMut(&StepView<'_>),
) -> Result<RunOutput> {
    let start = Instant::now();
    let elapsed = |on: bool| {
        if on {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    };
    let timings = cfg.output.timings;
    let (fine, op) = (&problem.fine, &problem.op);

    let layers = offline.uniform_layers(fine, cfg.solver.layers, cfg.solver.include_boundary);
    let lambda_min = offline.lambda_min(&layers);
    let initial = offline.split_and_collect(fine, &layers)?;
    let (mut space, report) = MultiscaleSpace::new(op, fine, initial, cfg.solver.assembly)?;
    let mut rejected = report.rejected.len();
    if rejected > 0 {
        warn!("{rejected} initial basis functions rejected as dependent");
    }
    info!(
        "initial space: {} functions, Lambda_min = {lambda_min:e}",
        space.dim()
    );

    let mut solution =
        coarse_solve(op, &space).map_err(|e| e.with_context("initial coarse solve"))?;
    let (e_2, e_a) = problem.errors(&solution.fine)?;
    let mut err_sq = problem.energy_error_sq(&solution.fine)?;
    let mut history = ConvergenceHistory::default();
    history.rows.push(HistoryRow {
        iteration: 0,
        sub_iteration: 0,
        dof: space.dim(),
        e_a,
        e_2,
        energy_error_sq: err_sq,
        sum_residual_sq: None,
        eta_sq: None,
        theta: None,
        contraction_ratio: None,
        selected: 0,
        wall_ms: elapsed(timings),
    });
    observer(&StepView {
        problem,
        offline,
        space: &space,
        solution: &solution,
        row: history.last(),
        energy_error_sq_before: None,
    });

    // threshold tolerances are relative to the initial solution's energy
    let scale = op.a_norm_sq(&solution.fine)?.sqrt();
    let solvers = LocalSolvers::build(op, offline, cfg.online.riesz)?;
    let certified = if cfg.online.certified {
        let constants = ConstantsReport::compute(fine, &problem.field, op, true, 100, cfg.seed)?;
        let (a0, a1, _) = constants.eta_constants()?;
        let modified = ModifiedSolvers::build(fine, offline)?;
        let excluded: Vec<f64> = layers
            .iter()
            .enumerate()
            .map(|(i, &l)| offline.first_excluded(i, l).unwrap_or(0.0))
            .collect();
        Some((constants, EtaConstants::new(a0, a1)?, modified, excluded))
    } else {
        None
    };
    let classes = grid::color_classes(fine.coarse());
    let mut indicators_log = Vec::new();

    let mut stop = stop_check(cfg, &history, space.dim(), 0);
    let mut iteration = 0;
    while stop.is_none() {
        iteration += 1;
        let mut any_selected = false;
        for (class, nodes) in classes.iter().enumerate() {
            let residual = op.residual(&solution.fine);
            let inds = solvers
                .indicators(offline, &residual, nodes)
                .map_err(|e| e.with_context(format!("iteration {iteration} class {class}")))?;
            let pairs: Vec<(usize, f64)> = inds.iter().map(|r| (r.node, r.norm_sq)).collect();
            let selected = online::select_regions(&pairs, &cfg.online.strategy, scale);
            let picked: Vec<&online::ResidualIndicator> = inds
                .iter()
                .filter(|r| selected.binary_search(&r.node).is_ok())
                .collect();
            let sum_sq: f64 = picked.iter().map(|r| r.norm_sq).sum();
            indicators_log.extend(pairs.iter().map(|&(node, r2)| IndicatorRecord {
                iteration,
                sub_iteration: class,
                node,
                residual_norm_sq: r2,
                selected: selected.binary_search(&node).is_ok(),
            }));

            let (eta_sq, theta) = match &certified {
                Some((_, constants, modified, excluded)) => {
                    let r_tilde = modified.all_norms_sq(offline, &residual);
                    let eta = match online::eta_sq(constants, excluded, &r_tilde) {
                        Ok(v) => v * cfg.online.bound_scale,
                        Err(e) => {
                            warn!("eta unavailable ({e}); treating the bound as infinite");
                            f64::INFINITY
                        }
                    };
                    (
                        Some(eta),
                        Some(if eta.is_finite() {
                            online::theta(sum_sq, eta)?
                        } else {
                            0.0
                        }),
                    )
                }
                None => (None, None),
            };

            let before = err_sq;
            if !picked.is_empty() {
                any_selected = true;
                let rep = online::enrich(&mut space, op, fine, offline, &picked, iteration, class)
                    .map_err(|e| e.with_context(format!("iteration {iteration} class {class}")))?;
                rejected += rep.rejected.len();
                solution = coarse_solve(op, &space).map_err(|e| {
                    e.with_context(format!("coarse solve, iteration {iteration} class {class}"))
                })?;
            }
            let (e_2, e_a) = problem.errors(&solution.fine)?;
            err_sq = problem.energy_error_sq(&solution.fine)?;
            let ratio = if before > 0.0 {
                Some((err_sq / before).sqrt())
            } else {
                None
            };
            debug!(
                "iteration {iteration} class {class}: {} selected, dof {}, e_a {e_a:e}",
                picked.len(),
                space.dim()
            );
            history.rows.push(HistoryRow {
                iteration,
                sub_iteration: class,
                dof: space.dim(),
                e_a,
                e_2,
                energy_error_sq: err_sq,
                sum_residual_sq: Some(sum_sq),
                eta_sq,
                theta,
                contraction_ratio: ratio,
                selected: picked.len(),
                wall_ms: elapsed(timings),
            });
            observer(&StepView {
                problem,
                offline,
                space: &space,
                solution: &solution,
                row: history.last(),
                energy_error_sq_before: Some(before),
            });
            if cfg.stop.target_error.is_some_and(|t| e_a <= t) {
                stop = Some(StopReason::TargetError);
                break;
            }
            if cfg.stop.dof_budget.is_some_and(|b| space.dim() >= b) {
                stop = Some(StopReason::DofBudget);
                break;
            }
        }
        if stop.is_none() && !any_selected {
            stop = Some(StopReason::EmptySelection);
        }
        if stop.is_none() {
            stop = stop_check(cfg, &history, space.dim(), iteration);
        }
    }
    let stop_reason = stop.unwrap();
    info!(
        "stopped after {iteration} iterations ({stop_reason}): dof {}, e_a {:e}",
        space.dim(),
        history.last().e_a
    );

    let (constants, bound_check) = match certified {
        Some((constants, ..)) => {
            let samples = bound_samples(&history);
            let scale = problem.op.a_norm_sq(&problem.reference)?;
            (Some(constants), Some(verify::check_bound(&samples, scale)))
        }
        None => (None, None),
    };
    Ok(RunOutput {
        block_counts: space.block_counts(),
        history,
        stop_reason,
        lambda_min,
        layers,
        indicators: indicators_log,
        constants,
        bound_check,
        solution,
        rejected,
    })
}

fn stop_check(
    cfg: &RunConfig,
    h: &ConvergenceHistory,
    dof: usize,
    iteration: usize,
) -> Option<StopReason> {
    if cfg.stop.target_error.is_some_and(|t| h.last().e_a <= t) {
        Some(StopReason::TargetError)
    } else if cfg.stop.dof_budget.is_some_and(|b| dof >= b) {
        Some(StopReason::DofBudget)
    } else if iteration >= cfg.stop.max_iterations {
        Some(StopReason::MaxIterations)
    } else {
        None
    }
}

/// Pairs each certified row with the error of the state it started from.
pub fn bound_samples(h: &ConvergenceHistory) -> Vec<BoundSample> {
    h.rows
        .windows(2)
        .filter_map(|w| {
            let (prev, row) = (&w[0], &w[1]);
            Some(BoundSample {
                iteration: row.iteration,
                sub_iteration: row.sub_iteration,
                error_sq: prev.energy_error_sq,
                eta_sq: row.eta_sq?,
                theta: row.theta,
                ratio: row.contraction_ratio,
            })
        })
        .collect()
}

/// Failures of the certified checks on a finished run: the bound report
/// plus `samples` random draws of the continuity and coercivity inequalities.
pub fn verification_failures(
    problem: &Problem,
    out: &RunOutput,
    samples: usize,
    seed: u64,
) -> Vec<String> {
    let mut fails = Vec::new();
    match (&out.bound_check, &out.constants) {
        (Some(t), Some(c)) => {
            fails.extend(t.violations.iter().cloned());
            let l = verify::check_form_bounds(&problem.op, c, samples, seed);
            fails.extend(l.violations);
            if c.flux_ratio > 1.0 + 1e-10 {
                fails.push(format!("flux bound ratio {} exceeds 1", c.flux_ratio));
            }
        }
        _ => fails.push("run was not certified".into()),
    }
    fails
}

/// Largest `|a(u_h - u_H, v)| / (|u_h - u_H|_A |v|_A)` over the basis.
pub fn galerkin_defect(problem: &Problem, space: &MultiscaleSpace, u: &[f64]) -> Result<f64> {
    let e = diff(&problem.reference, u);
    let en = problem.op.a_norm_sq(&e)?.sqrt();
    if en == 0.0 {
        return Ok(0.0);
    }
    let ae = problem.op.apply(&e);
    let proj = space.restrict(&ae);
    // basis functions have unit A-norm
    Ok(proj.iter().fold(0.0f64, |m, v| m.max(v.abs())) / en)
}

/// `|u_h - P c|_A` for arbitrary coefficients.
pub fn competitor_error(problem: &Problem, space: &MultiscaleSpace, coeffs: &[f64]) -> Result<f64> {
    let u = space.prolong(coeffs);
    Ok(problem.energy_error_sq(&u)?.max(0.0).sqrt())
}

pub fn relative_norm(a: &[f64], b: &[f64]) -> f64 {
    linalg::norm2(&diff(a, b)) / linalg::norm2(b).max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::Preset;
    use crate::grid::{build_grids, Rect};
    use crate::offline::{BasisFunction, Provenance};
    use crate::space::Assembly;

    fn cfg(nb: usize, nf: usize) -> RunConfig {
        let mut c = RunConfig::with_field(FieldSource::Preset {
            preset: Preset::FourChannels,
            contrast: 1e3,
        });
        c.grid.coarse = (nb, nb);
        c.grid.fine = (nf, nf);
        c.output.timings = false;
        c
    }

    #[test]
    fn errors_of_trivial_approximations() {
        let p = Problem::build(&cfg(3, 3)).unwrap();
        assert_eq!(p.errors(&p.reference).unwrap(), (0.0, 0.0));
        let z = vec![0.0; p.reference.len()];
        let (e2, ea) = p.errors(&z).unwrap();
        assert!((e2 - 1.0).abs() < 1e-15 && (ea - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_source_gives_zero_and_refuses_relative_errors() {
        let f = build_grids(Rect::unit(), 2, 2, 2, 2).unwrap();
        let k = CoefficientField::constant(&f, 1.0).unwrap();
        let p = Problem::new(f, k, 2.0, 0.0).unwrap();
        assert!(p.reference.iter().all(|&v| v == 0.0));
        assert!(p.errors(&p.reference).is_err());
    }

    #[test]
    fn single_function_space_matches_one_dimensional_galerkin() {
        let p = Problem::build(&cfg(2, 3)).unwrap();
        let npb = p.fine.nodes_per_block();
        let values: Vec<f64> = (0..npb).map(|l| 1.0 + (l % 5) as f64).collect();
        let phi = BasisFunction {
            block: 1,
            values: values.clone(),
            provenance: Provenance::Offline { node: 0, k: 1 },
        };
        let (space, _) =
            MultiscaleSpace::new(&p.op, &p.fine, vec![phi], Assembly::Reassemble).unwrap();
        let sol = coarse_solve(&p.op, &space).unwrap();
        let mut full = vec![0.0; p.fine.num_dofs()];
        full[npb..2 * npb].copy_from_slice(&values);
        let alpha = linalg::dot(&p.op.load, &full) / p.op.matrix.quad_form(&full);
        let expect: Vec<f64> = full.iter().map(|v| alpha * v).collect();
        assert!(relative_norm(&sol.fine, &expect) < 1e-12);
    }

    #[test]
    fn zero_iterations_keep_only_initial_row() {
        let mut c = cfg(3, 4);
        c.stop.max_iterations = 0;
        let (_, _, out) = run_adaptive(&c).unwrap();
        assert_eq!(out.history.rows.len(), 1);
        assert_eq!(out.stop_reason, StopReason::MaxIterations);
    }

    #[test]
    fn homogeneous_run_decays_with_orthogonality() {
        let mut c = RunConfig::with_field(FieldSource::Features {
            features: vec![],
            contrast: 1.0,
        });
        c.grid.coarse = (4, 4);
        c.grid.fine = (4, 4);
        c.stop.max_iterations = 2;
        c.output.timings = false;
        let p = Problem::build(&c).unwrap();
        let off = p.offline(&c, 2).unwrap();
        let mut defects = Vec::new();
        let out = run_with(&p, &off, &c, |v| {
            defects.push(galerkin_defect(v.problem, v.space, &v.solution.fine).unwrap());
            if let Some(b) = v.energy_error_sq_before {
                let drop = b - v.row.energy_error_sq;
                let sum = v.row.sum_residual_sq.unwrap();
                assert!(drop >= sum - 1e-10 * b.max(1e-300), "{drop} < {sum}");
            }
        })
        .unwrap();
        assert!(defects.iter().all(|&d| d < 1e-9), "{defects:?}");
        let ends = out.history.iteration_ends();
        for w in ends.windows(2) {
            assert!(w[1].e_a < w[0].e_a);
            assert!(w[1].dof >= w[0].dof);
        }
    }

    #[test]
    fn certified_run_satisfies_bounds_and_is_deterministic() {
        let mut c = cfg(3, 4);
        c.stop.max_iterations = 2;
        c.online.certified = true;
        let (_, _, a) = run_adaptive(&c).unwrap();
        let th = a.bound_check.as_ref().unwrap();
        assert!(th.passed(), "{:?}", th.violations);
        assert!(th.min_slack >= 1.0);
        let (_, _, b) = run_adaptive(&c).unwrap();
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        c.online.bound_scale = 1e-6;
        let (_, _, bad) = run_adaptive(&c).unwrap();
        assert!(!bad.bound_check.unwrap().passed());
    }

    #[test]
    fn incremental_assembly_matches_reassembly() {
        let mut c = cfg(3, 3);
        c.stop.max_iterations = 2;
        let (_, _, a) = run_adaptive(&c).unwrap();
        c.solver.assembly = Assembly::Incremental;
        let (_, _, b) = run_adaptive(&c).unwrap();
        assert_eq!(a.history.rows.len(), b.history.rows.len());
        for (x, y) in a.history.rows.iter().zip(&b.history.rows) {
            assert_eq!(x.dof, y.dof);
            assert!((x.e_a - y.e_a).abs() <= 1e-9 * x.e_a.max(1e-12));
        }
    }

    #[test]
    fn csv_header_is_fixed() {
        let mut c = cfg(2, 2);
        c.stop.max_iterations = 1;
        let (_, _, out) = run_adaptive(&c).unwrap();
        let csv = out.history.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), ConvergenceHistory::HEADER);
        for l in lines {
            assert_eq!(l.split(',').count(), 10);
        }
    }
}
