//! Dense brute-force oracles. Every form is evaluated from pointwise values
//! of bilinear shape functions with Gauss quadrature, independently of the
//! library's element matrices and edge helpers.

#![allow(dead_code)]

use msdg::coefficient::CoefficientField;
use msdg::grid::FineGrid;
use nalgebra::{DMatrix, DVector};

const G3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// Value and gradient of a fine function restricted to `block` at `(x, y)`,
/// plus the coefficient of the cell that contains the point.
pub fn eval(
    fine: &FineGrid,
    field: &CoefficientField,
    u: &[f64],
    block: usize,
    x: f64,
    y: f64,
) -> (f64, [f64; 2], f64) {
    let r = fine.coarse().block_rect(block);
    let (hx, hy) = (fine.hx(), fine.hy());
    let tx = (x - r.x0) / hx;
    let ty = (y - r.y0) / hy;
    let cx = (tx.floor().max(0.0) as usize).min(fine.nx() - 1);
    let cy = (ty.floor().max(0.0) as usize).min(fine.ny() - 1);
    let (sx, sy) = (tx - cx as f64, ty - cy as f64);
    let v = |i: usize, j: usize| u[fine.dof(block, cx + i, cy + j)];
    let (v00, v10, v01, v11) = (v(0, 0), v(1, 0), v(0, 1), v(1, 1));
    let val = v00 * (1.0 - sx) * (1.0 - sy)
        + v10 * sx * (1.0 - sy)
        + v01 * (1.0 - sx) * sy
        + v11 * sx * sy;
    let gx = ((v10 - v00) * (1.0 - sy) + (v11 - v01) * sy) / hx;
    let gy = ((v01 - v00) * (1.0 - sx) + (v11 - v10) * sx) / hy;
    let kappa = field.cell(fine.cell_index(block, cx, cy));
    (val, [gx, gy], kappa)
}

/// One side of a coarse edge: block and outward normal of that block.
#[derive(Clone, Copy)]
pub struct EdgeSide {
    pub block: usize,
    pub normal: [f64; 2],
}

/// A coarse edge as a segment with one or two sides, enumerated from block
/// coordinates.
pub struct Edge {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub sides: Vec<EdgeSide>,
    pub vertical: bool,
}

pub fn edges(fine: &FineGrid) -> Vec<Edge> {
    let c = fine.coarse();
    let (nbx, nby) = (c.nx(), c.ny());
    let mut out = Vec::new();
    for by in 0..nby {
        for bx in 0..nbx {
            let k = c.block_index(bx, by);
            let r = c.block_rect(k);
            // left side of this block
            let left = EdgeSide {
                block: k,
                normal: [-1.0, 0.0],
            };
            let mut sides = vec![left];
            if bx > 0 {
                sides.insert(
                    0,
                    EdgeSide {
                        block: c.block_index(bx - 1, by),
                        normal: [1.0, 0.0],
                    },
                );
            }
            out.push(Edge {
                a: (r.x0, r.y0),
                b: (r.x0, r.y1),
                sides,
                vertical: true,
            });
            if bx + 1 == nbx {
                out.push(Edge {
                    a: (r.x1, r.y0),
                    b: (r.x1, r.y1),
                    sides: vec![EdgeSide {
                        block: k,
                        normal: [1.0, 0.0],
                    }],
                    vertical: true,
                });
            }
            let bottom = EdgeSide {
                block: k,
                normal: [0.0, -1.0],
            };
            let mut sides = vec![bottom];
            if by > 0 {
                sides.insert(
                    0,
                    EdgeSide {
                        block: c.block_index(bx, by - 1),
                        normal: [0.0, 1.0],
                    },
                );
            }
            out.push(Edge {
                a: (r.x0, r.y0),
                b: (r.x1, r.y0),
                sides,
                vertical: false,
            });
            if by + 1 == nby {
                out.push(Edge {
                    a: (r.x0, r.y1),
                    b: (r.x1, r.y1),
                    sides: vec![EdgeSide {
                        block: k,
                        normal: [0.0, 1.0],
                    }],
                    vertical: false,
                });
            }
        }
    }
    out
}

/// Quadrature points `(x, y, weight)` along an edge, three per fine segment.
fn edge_points(fine: &FineGrid, e: &Edge) -> Vec<(f64, f64, f64)> {
    let nseg = if e.vertical { fine.ny() } else { fine.nx() };
    let len = ((e.b.0 - e.a.0).powi(2) + (e.b.1 - e.a.1).powi(2)).sqrt() / nseg as f64;
    let mut pts = Vec::new();
    for s in 0..nseg {
        for &(t, w) in &G3 {
            let f = (s as f64 + t) / nseg as f64;
            pts.push((
                e.a.0 + f * (e.b.0 - e.a.0),
                e.a.1 + f * (e.b.1 - e.a.1),
                w * len,
            ));
        }
    }
    pts
}

fn kappa_max(fine: &FineGrid, field: &CoefficientField, block: usize) -> f64 {
    let mut m: f64 = 0.0;
    for cy in 0..fine.ny() {
        for cx in 0..fine.nx() {
            m = m.max(field.cell(fine.cell_index(block, cx, cy)));
        }
    }
    m
}

/// Pieces of the DG form for one pair of functions.
pub struct FormParts {
    pub volume: f64,
    pub consistency: f64,
    pub penalty: f64,
}

/// `sum_K int kappa grad u . grad v` over `blocks`.
pub fn volume_form(
    fine: &FineGrid,
    field: &CoefficientField,
    u: &[f64],
    v: &[f64],
    blocks: &[usize],
) -> f64 {
    let (hx, hy) = (fine.hx(), fine.hy());
    let mut s = 0.0;
    for &k in blocks {
        let r = fine.coarse().block_rect(k);
        for cy in 0..fine.ny() {
            for cx in 0..fine.nx() {
                for &(ty, wy) in &G3 {
                    for &(tx, wx) in &G3 {
                        let x = r.x0 + (cx as f64 + tx) * hx;
                        let y = r.y0 + (cy as f64 + ty) * hy;
                        let (_, gu, kap) = eval(fine, field, u, k, x, y);
                        let (_, gv, _) = eval(fine, field, v, k, x, y);
                        s += wx * wy * hx * hy * kap * (gu[0] * gv[0] + gu[1] * gv[1]);
                    }
                }
            }
        }
    }
    s
}

/// Consistency and penalty terms of the DG form over the selected edges.
pub fn edge_forms(
    fine: &FineGrid,
    field: &CoefficientField,
    gamma: f64,
    u: &[f64],
    v: &[f64],
    keep: impl Fn(&Edge) -> bool,
) -> (f64, f64) {
    let (mut cons, mut pen) = (0.0, 0.0);
    for e in edges(fine).iter().filter(|e| keep(e)) {
        let h = if e.vertical { fine.hx() } else { fine.hy() };
        let kbar = e
            .sides
            .iter()
            .map(|s| kappa_max(fine, field, s.block))
            .sum::<f64>()
            / e.sides.len() as f64;
        // jump uses the first side's outward normal; average flux of both sides
        let n = e.sides[0].normal;
        let wavg = if e.sides.len() == 2 { 0.5 } else { 1.0 };
        for (x, y, w) in edge_points(fine, e) {
            let (mut ju, mut jv, mut fu, mut fv) = (0.0, 0.0, 0.0, 0.0);
            for (k, s) in e.sides.iter().enumerate() {
                let sign = if k == 0 { 1.0 } else { -1.0 };
                let (uu, gu, kap) = eval(fine, field, u, s.block, x, y);
                let (vv, gv, _) = eval(fine, field, v, s.block, x, y);
                ju += sign * uu;
                jv += sign * vv;
                fu += wavg * kap * (gu[0] * n[0] + gu[1] * n[1]);
                fv += wavg * kap * (gv[0] * n[0] + gv[1] * n[1]);
            }
            cons += w * (fu * jv + fv * ju);
            pen += w * gamma / h * kbar * ju * jv;
        }
    }
    (cons, pen)
}

pub fn dg_form(
    fine: &FineGrid,
    field: &CoefficientField,
    gamma: f64,
    u: &[f64],
    v: &[f64],
) -> FormParts {
    let all: Vec<usize> = (0..fine.coarse().num_blocks()).collect();
    let (consistency, penalty) = edge_forms(fine, field, gamma, u, v, |_| true);
    FormParts {
        volume: volume_form(fine, field, u, v, &all),
        consistency,
        penalty,
    }
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

/// Dense `a_DG` and DG-norm Gram matrices by evaluating the forms on pairs of
/// nodal basis functions.
pub fn dg_matrices(
    fine: &FineGrid,
    field: &CoefficientField,
    gamma: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = fine.num_dofs();
    let mut a = DMatrix::zeros(n, n);
    let mut g = DMatrix::zeros(n, n);
    let basis: Vec<Vec<f64>> = (0..n).map(|i| unit(n, i)).collect();
    for p in 0..n {
        for q in p..n {
            let f = dg_form(fine, field, gamma, &basis[p], &basis[q]);
            let av = f.volume - f.consistency + f.penalty;
            let gv = f.volume + f.penalty;
            a[(p, q)] = av;
            a[(q, p)] = av;
            g[(p, q)] = gv;
            g[(q, p)] = gv;
        }
    }
    (a, g)
}

/// `(1, v)` for every nodal basis function.
pub fn load(fine: &FineGrid, field: &CoefficientField) -> DVector<f64> {
    let n = fine.num_dofs();
    let (hx, hy) = (fine.hx(), fine.hy());
    DVector::from_iterator(
        n,
        (0..n).map(|p| {
            let e = unit(n, p);
            let k = fine.block_of_dof(p);
            let r = fine.coarse().block_rect(k);
            let mut s = 0.0;
            for cy in 0..fine.ny() {
                for cx in 0..fine.nx() {
                    for &(ty, wy) in &G3 {
                        for &(tx, wx) in &G3 {
                            let x = r.x0 + (cx as f64 + tx) * hx;
                            let y = r.y0 + (cy as f64 + ty) * hy;
                            s += wx * wy * hx * hy * eval(fine, field, &e, k, x, y).0;
                        }
                    }
                }
            }
            s
        }),
    )
}

/// Coarse bilinear hat of `node` and its gradient.
pub fn hat(fine: &FineGrid, node: usize, x: f64, y: f64) -> (f64, [f64; 2]) {
    let c = fine.coarse();
    let (xi, yi) = c.node_position(node);
    let (hx, hy) = (c.block_width(), c.block_height());
    let fx = 1.0 - (x - xi).abs() / hx;
    let fy = 1.0 - (y - yi).abs() / hy;
    if fx <= 0.0 || fy <= 0.0 {
        return (0.0, [0.0, 0.0]);
    }
    let dx = -(x - xi).signum() / hx;
    let dy = -(y - yi).signum() / hy;
    (fx * fy, [dx * fy, fx * dy])
}

/// DOFs of the blocks around `node`, in block order.
pub fn neighborhood_dofs(fine: &FineGrid, node: usize) -> (Vec<usize>, Vec<usize>) {
    let blocks = fine.coarse().blocks_of_node(node);
    let mut sorted = blocks.clone();
    sorted.sort_unstable();
    let dofs = sorted.iter().flat_map(|&b| fine.block_dofs(b)).collect();
    (sorted, dofs)
}

/// Dense `(a_omega, s_omega)` with the bilinear partition of unity, over
/// `neighborhood_dofs` order.
pub fn spectral_matrices(
    fine: &FineGrid,
    field: &CoefficientField,
    gamma: f64,
    node: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (blocks, dofs) = neighborhood_dofs(fine, node);
    let n = fine.num_dofs();
    let m = dofs.len();
    let (hx, hy) = (fine.hx(), fine.hy());
    let mut a = DMatrix::zeros(m, m);
    let mut s = DMatrix::zeros(m, m);
    let inside =
        |e: &Edge| e.sides.len() == 2 && e.sides.iter().all(|sd| blocks.contains(&sd.block));
    for p in 0..m {
        let u = unit(n, dofs[p]);
        for q in p..m {
            let v = unit(n, dofs[q]);
            let vol = volume_form(fine, field, &u, &v, &blocks);
            let (_, pen) = edge_forms(fine, field, gamma, &u, &v, inside);
            a[(p, q)] = vol + pen;
            a[(q, p)] = vol + pen;
            let mut ms = 0.0;
            for &k in &blocks {
                let r = fine.coarse().block_rect(k);
                for cy in 0..fine.ny() {
                    for cx in 0..fine.nx() {
                        for &(ty, wy) in &G3 {
                            for &(tx, wx) in &G3 {
                                let x = r.x0 + (cx as f64 + tx) * hx;
                                let y = r.y0 + (cy as f64 + ty) * hy;
                                let (uu, _, kap) = eval(fine, field, &u, k, x, y);
                                let (vv, _, _) = eval(fine, field, &v, k, x, y);
                                let (_, g) = hat(fine, node, x, y);
                                ms +=
                                    wx * wy * hx * hy * kap * (g[0] * g[0] + g[1] * g[1]) * uu * vv;
                            }
                        }
                    }
                }
            }
            s[(p, q)] = ms;
            s[(q, p)] = ms;
        }
    }
    (a, s)
}

/// Eigenvalues of `a x = lambda s x`, ascending.
pub fn generalized_eigenvalues(a: &DMatrix<f64>, s: &DMatrix<f64>) -> Vec<f64> {
    let l = s.clone().cholesky().expect("s positive definite").l();
    let li = l.try_inverse().unwrap();
    let c = &li * a * li.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mut ev: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Fine DOFs of the blocks around `node` that do not lie on a block side
/// away from the node.
pub fn free_dofs(fine: &FineGrid, node: usize) -> Vec<usize> {
    let (xi, yi) = fine.coarse().node_position(node);
    let (blocks, _) = neighborhood_dofs(fine, node);
    let tol = 1e-12;
    let mut out = Vec::new();
    for &k in &blocks {
        let r = fine.coarse().block_rect(k);
        let far_x = if (r.x0 - xi).abs() < tol { r.x1 } else { r.x0 };
        let far_y = if (r.y0 - yi).abs() < tol { r.y1 } else { r.y0 };
        for d in fine.block_dofs(k) {
            let (x, y) = fine.dof_position(d);
            if (x - far_x).abs() > tol && (y - far_y).abs() > tol {
                out.push(d);
            }
        }
    }
    out
}

/// `|R_i|^2 = r_F^T A_FF^-1 r_F`.
pub fn residual_norm_sq(a: &DMatrix<f64>, r: &DVector<f64>, free: &[usize]) -> f64 {
    let m = free.len();
    let aff = DMatrix::from_fn(m, m, |i, j| a[(free[i], free[j])]);
    let rf = DVector::from_iterator(m, free.iter().map(|&i| r[i]));
    let x = aff
        .cholesky()
        .expect("local matrix positive definite")
        .solve(&rf);
    rf.dot(&x)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}
