//! Run artifacts written to an output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::coefficient;
use crate::config::{self, RunConfig};
use crate::driver::{Problem, RunOutput};
use crate::error::{Error, Result};
use crate::offline::OfflineData;

pub const INDICATOR_HEADER: &str =
    "iteration,sub_iteration,node_index,residual_norm_sq,selected_flag";
pub const EIGEN_HEADER: &str = "node_index,k,lambda";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)
        .map_err(|e| Error::from(e).with_context(format!("writing {}", path.display())))
}

/// `key: value` summary of a run.
pub fn summary_text(cfg: &RunConfig, problem: &Problem, out: &RunOutput) -> String {
    let mut s = String::new();
    let last = out.history.last();
    let _ = writeln!(
        s,
        "coarse_blocks: {} {}",
        cfg.grid.coarse.0, cfg.grid.coarse.1
    );
    let _ = writeln!(
        s,
        "fine_cells_per_block: {} {}",
        cfg.grid.fine.0, cfg.grid.fine.1
    );
    let _ = writeln!(s, "fine_dofs: {}", problem.fine.num_dofs());
    let _ = writeln!(s, "contrast: {}", problem.field.contrast());
    let _ = writeln!(s, "gamma: {}", cfg.solver.gamma);
    let _ = writeln!(s, "pou: {}", cfg.solver.pou.name());
    let _ = writeln!(s, "layers: {}", cfg.solver.layers);
    let _ = writeln!(s, "include_boundary: {}", cfg.solver.include_boundary);
    let _ = writeln!(
        s,
        "assembly: {}",
        config::assembly_name(cfg.solver.assembly)
    );
    let _ = writeln!(s, "riesz: {}", cfg.online.riesz.name());
    let _ = writeln!(s, "strategy: {}", cfg.online.strategy);
    let _ = writeln!(s, "lambda_min: {:e}", out.lambda_min);
    let _ = writeln!(s, "initial_dof: {}", out.history.rows[0].dof);
    let _ = writeln!(s, "initial_e_a: {:e}", out.history.rows[0].e_a);
    let _ = writeln!(s, "iterations: {}", last.iteration);
    let _ = writeln!(s, "final_dof: {}", last.dof);
    let _ = writeln!(s, "final_e_a: {:e}", last.e_a);
    let _ = writeln!(s, "final_e_2: {:e}", last.e_2);
    let _ = writeln!(s, "rejected_candidates: {}", out.rejected);
    let _ = writeln!(s, "stop_reason: {}", out.stop_reason);
    let counts: Vec<String> = out.block_counts.iter().map(|c| c.to_string()).collect();
    let _ = writeln!(s, "block_basis_counts: {}", counts.join(" "));
    if let Some(t) = &out.bound_check {
        let _ = writeln!(s, "bound_min_slack: {:e}", t.min_slack);
        let _ = writeln!(
            s,
            "contraction_max_excess: {:e}",
            t.worst_contraction_excess
        );
        let _ = writeln!(
            s,
            "bound_check: {}",
            if t.passed() { "pass" } else { "fail" }
        );
    }
    if let Some(c) = &out.constants {
        for line in c.to_text().lines() {
            let _ = writeln!(s, "constants.{line}");
        }
    }
    s
}

pub fn indicators_csv(out: &RunOutput, iteration: usize) -> String {
    let mut s = format!("{INDICATOR_HEADER}\n");
    for r in out.indicators.iter().filter(|r| r.iteration == iteration) {
        let _ = writeln!(
            s,
            "{},{},{},{:e},{}",
            r.iteration,
            r.sub_iteration,
            r.node,
            r.residual_norm_sq,
            u8::from(r.selected)
        );
    }
    s
}

/// Every computed eigenvalue of every neighborhood, `k` 1-based.
pub fn eigen_csv(offline: &OfflineData) -> String {
    let mut s = format!("{EIGEN_HEADER}\n");
    for spec in &offline.spectra {
        for (k, l) in spec.values.iter().enumerate() {
            let _ = writeln!(s, "{},{},{:e}", spec.node, k + 1, l);
        }
    }
    s
}

/// Writes `history.csv`, `summary.txt` and whatever the config and `verify`
/// ask for.
pub fn write_outputs(
    dir: &Path,
    cfg: &RunConfig,
    problem: &Problem,
    offline: &OfflineData,
    out: &RunOutput,
    verify: bool,
) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::from(e).with_context(format!("creating {}", dir.display())))?;
    write(&dir.join("history.csv"), &out.history.to_csv())?;
    write(&dir.join("summary.txt"), &summary_text(cfg, problem, out))?;
    if verify {
        if let Some(c) = &out.constants {
            write(&dir.join("constants.txt"), &c.to_text())?;
        }
    }
    if cfg.output.indicators {
        let sub = dir.join("indicators");
        fs::create_dir_all(&sub)?;
        for it in 1..=out.history.last().iteration {
            write(
                &sub.join(format!("iteration_{it:03}.csv")),
                &indicators_csv(out, it),
            )?;
        }
    }
    if cfg.output.eigens {
        let sub = dir.join("eigens");
        fs::create_dir_all(&sub)?;
        write(&sub.join("eigenvalues.csv"), &eigen_csv(offline))?;
    }
    if cfg.output.field {
        coefficient::save_field(&dir.join("field.txt"), &problem.field)?;
    }
    Ok(())
}
