//! Interior-penalty DG forms on the block-discontinuous bilinear space.
//!
//! Inside a coarse block functions are continuous bilinear on the fine cells;
//! jumps, averages and penalties live only on coarse edges. Boundary edges
//! take `{w} = [w] = w` with the outward normal, which imposes `u = 0` weakly.

use faer::Mat;
use rayon::prelude::*;

use crate::coefficient::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{CoarseEdge, EdgeAdjacency, FineGrid, Side};
use crate::linalg::{CsrMatrix, SparseCholesky};

pub type Triplets = Vec<(usize, usize, f64)>;

/// Two-point Gauss rule on [0, 1].
pub(crate) const GAUSS2: [(f64, f64); 2] = [
    (0.211_324_865_405_187_1, 0.5),
    (0.788_675_134_594_812_9, 0.5),
];

/// Three-point Gauss rule on [0, 1].
pub(crate) const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

fn stiffness_1d(h: f64) -> [[f64; 2]; 2] {
    [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]]
}

fn mass_1d(h: f64) -> [[f64; 2]; 2] {
    [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]]
}

/// `int kappa grad phi_a . grad phi_b` over one `hx x hy` cell with constant
/// `kappa`; local order (0,0), (1,0), (0,1), (1,1).
pub fn cell_stiffness(hx: f64, hy: f64, kappa: f64) -> [[f64; 4]; 4] {
    let (sx, mx, sy, my) = (stiffness_1d(hx), mass_1d(hx), stiffness_1d(hy), mass_1d(hy));
    let mut k = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            let (ax, ay, bx, by) = (a & 1, a >> 1, b & 1, b >> 1);
            k[a][b] = kappa * (sx[ax][bx] * my[ay][by] + mx[ax][bx] * sy[ay][by]);
        }
    }
    k
}

pub fn cell_mass(hx: f64, hy: f64) -> [[f64; 4]; 4] {
    let (mx, my) = (mass_1d(hx), mass_1d(hy));
    let mut m = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            m[a][b] = mx[a & 1][b & 1] * my[a >> 1][b >> 1];
        }
    }
    m
}

/// Dense block stiffness `a_H^K` in the block's local node order.
pub fn local_stiffness(fine: &FineGrid, field: &CoefficientField, block: usize) -> Mat<f64> {
    let n = fine.nodes_per_block();
    let mut k = Mat::<f64>::zeros(n, n);
    for cy in 0..fine.ny() {
        for cx in 0..fine.nx() {
            let kappa = field.cell(fine.cell_index(block, cx, cy));
            let ke = cell_stiffness(fine.hx(), fine.hy(), kappa);
            let nodes = [
                fine.local_node(cx, cy),
                fine.local_node(cx + 1, cy),
                fine.local_node(cx, cy + 1),
                fine.local_node(cx + 1, cy + 1),
            ];
            for a in 0..4 {
                for b in 0..4 {
                    k[(nodes[a], nodes[b])] += ke[a][b];
                }
            }
        }
    }
    k
}

/// Dense block mass matrix in local node order.
pub fn local_mass(fine: &FineGrid) -> Mat<f64> {
    let n = fine.nodes_per_block();
    let me = cell_mass(fine.hx(), fine.hy());
    let mut m = Mat::<f64>::zeros(n, n);
    for cy in 0..fine.ny() {
        for cx in 0..fine.nx() {
            let nodes = [
                fine.local_node(cx, cy),
                fine.local_node(cx + 1, cy),
                fine.local_node(cx, cy + 1),
                fine.local_node(cx + 1, cy + 1),
            ];
            for a in 0..4 {
                for b in 0..4 {
                    m[(nodes[a], nodes[b])] += me[a][b];
                }
            }
        }
    }
    m
}

/// Side of `block` lying on `edge`.
pub fn touching_side(fine: &FineGrid, block: usize, edge: &CoarseEdge) -> Side {
    let coarse = fine.coarse();
    let (bx, by) = coarse.block_coords(block);
    let (ix, iy) = coarse.node_coords(edge.nodes[0]);
    if edge.normal.is_vertical_edge() {
        if bx == ix {
            Side::Left
        } else {
            Side::Right
        }
    } else if by == iy {
        Side::Bottom
    } else {
        Side::Top
    }
}

/// Number of fine segments along a coarse edge and their length.
pub fn edge_segments(fine: &FineGrid, edge: &CoarseEdge) -> (usize, f64) {
    if edge.normal.is_vertical_edge() {
        (fine.ny(), fine.hy())
    } else {
        (fine.nx(), fine.hx())
    }
}

/// Trace and normal flux of a block's bilinear function at parameter `s` of
/// segment `seg` on `side`. The trace is a combination of two DOFs, the flux
/// `kappa grad u . n` of four, taken from the adjacent fine cell.
pub fn side_point(
    fine: &FineGrid,
    field: &CoefficientField,
    block: usize,
    side: Side,
    seg: usize,
    s: f64,
    normal: (f64, f64),
) -> ([(usize, f64); 2], [(usize, f64); 4]) {
    match side {
        Side::Left | Side::Right => {
            let (i, cx) = if side == Side::Left {
                (0, 0)
            } else {
                (fine.nx(), fine.nx() - 1)
            };
            let j = seg;
            let kappa = field.cell(fine.cell_index(block, cx, j));
            let c = kappa * normal.0 / fine.hx();
            (
                [
                    (fine.dof(block, i, j), 1.0 - s),
                    (fine.dof(block, i, j + 1), s),
                ],
                [
                    (fine.dof(block, cx + 1, j), c * (1.0 - s)),
                    (fine.dof(block, cx, j), -c * (1.0 - s)),
                    (fine.dof(block, cx + 1, j + 1), c * s),
                    (fine.dof(block, cx, j + 1), -c * s),
                ],
            )
        }
        Side::Bottom | Side::Top => {
            let (j, cy) = if side == Side::Bottom {
                (0, 0)
            } else {
                (fine.ny(), fine.ny() - 1)
            };
            let i = seg;
            let kappa = field.cell(fine.cell_index(block, i, cy));
            let c = kappa * normal.1 / fine.hy();
            (
                [
                    (fine.dof(block, i, j), 1.0 - s),
                    (fine.dof(block, i + 1, j), s),
                ],
                [
                    (fine.dof(block, i, cy + 1), c * (1.0 - s)),
                    (fine.dof(block, i, cy), -c * (1.0 - s)),
                    (fine.dof(block, i + 1, cy + 1), c * s),
                    (fine.dof(block, i + 1, cy), -c * s),
                ],
            )
        }
    }
}

/// The blocks on an edge with their jump sign and average weight.
pub fn edge_sides(edge: &CoarseEdge) -> Vec<(usize, f64, f64)> {
    match edge.adjacency {
        EdgeAdjacency::Interior { plus, minus } => vec![(plus, 1.0, 0.5), (minus, -1.0, 0.5)],
        EdgeAdjacency::Boundary { block } => vec![(block, 1.0, 1.0)],
    }
}

/// Edge contributions in global DOF numbering.
#[derive(Debug, Clone, Default)]
pub struct EdgeTerms {
    /// Entry `(v, u)` holds `int_E {kappa grad u . n_E} [v]`.
    pub consistency: Triplets,
    /// Entry `(v, u)` holds `(gamma / h) int_E kappa_bar [u] [v]`.
    pub penalty: Triplets,
}

pub fn edge_terms(
    fine: &FineGrid,
    field: &CoefficientField,
    edge: &CoarseEdge,
    gamma: f64,
) -> EdgeTerms {
    let (nseg, len) = edge_segments(fine, edge);
    let h = fine.normal_spacing(edge);
    let pen = gamma / h * field.kappa_bar(edge);
    let normal = edge.normal.components();
    let sides: Vec<(usize, Side, f64, f64)> = edge_sides(edge)
        .into_iter()
        .map(|(b, js, aw)| (b, touching_side(fine, b, edge), js, aw))
        .collect();
    let mut out = EdgeTerms::default();
    let mut jump = Vec::with_capacity(4);
    let mut flux = Vec::with_capacity(8);
    for seg in 0..nseg {
        for &(s, w) in &GAUSS2 {
            jump.clear();
            flux.clear();
            for &(block, side, js, aw) in &sides {
                let (tr, fl) = side_point(fine, field, block, side, seg, s, normal);
                jump.extend(tr.iter().map(|&(d, c)| (d, js * c)));
                flux.extend(fl.iter().map(|&(d, c)| (d, aw * c)));
            }
            let wj = w * len;
            for &(v, jv) in &jump {
                for &(u, fu) in &flux {
                    out.consistency.push((v, u, wj * jv * fu));
                }
                for &(u, ju) in &jump {
                    out.penalty.push((v, u, wj * pen * jv * ju));
                }
            }
        }
    }
    out
}

/// Load vector `(f, phi_a)` with a 2x2 Gauss rule per fine cell.
pub fn load_vector(fine: &FineGrid, f: &(dyn Fn(f64, f64) -> f64 + Sync)) -> Vec<f64> {
    let (hx, hy) = (fine.hx(), fine.hy());
    let npb = fine.nodes_per_block();
    let per_block: Vec<Vec<f64>> = (0..fine.coarse().num_blocks())
        .into_par_iter()
        .map(|block| {
            let rect = fine.coarse().block_rect(block);
            let mut b = vec![0.0; npb];
            for cy in 0..fine.ny() {
                for cx in 0..fine.nx() {
                    let nodes = [
                        fine.local_node(cx, cy),
                        fine.local_node(cx + 1, cy),
                        fine.local_node(cx, cy + 1),
                        fine.local_node(cx + 1, cy + 1),
                    ];
                    for &(sy, wy) in &GAUSS2 {
                        for &(sx, wx) in &GAUSS2 {
                            let x = rect.x0 + (cx as f64 + sx) * hx;
                            let y = rect.y0 + (cy as f64 + sy) * hy;
                            let fw = f(x, y) * wx * wy * hx * hy;
                            let phi = [
                                (1.0 - sx) * (1.0 - sy),
                                sx * (1.0 - sy),
                                (1.0 - sx) * sy,
                                sx * sy,
                            ];
                            for a in 0..4 {
                                b[nodes[a]] += fw * phi[a];
                            }
                        }
                    }
                }
            }
            b
        })
        .collect();
    per_block.concat()
}

fn block_triplets(fine: &FineGrid, block: usize, local: &Mat<f64>) -> Triplets {
    let base = block * fine.nodes_per_block();
    let n = local.nrows();
    let mut t = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let v = local[(i, j)];
            if v != 0.0 {
                t.push((base + i, base + j, v));
            }
        }
    }
    t
}

/// The assembled fine-scale IPDG system and its pieces.
#[derive(Debug, Clone)]
pub struct DgOperator {
    gamma: f64,
    /// `sum_K a_H^K`.
    pub stiffness: CsrMatrix,
    /// `sum_E int_E {kappa grad u . n_E} [v]`, rows test, columns trial.
    pub consistency: CsrMatrix,
    /// `sum_E (gamma / h) int_E kappa_bar [u] [v]`.
    pub penalty: CsrMatrix,
    /// `a_DG`.
    pub matrix: CsrMatrix,
    /// Gram matrix of the DG norm: stiffness plus penalty.
    pub dg_gram: CsrMatrix,
    pub mass: CsrMatrix,
    pub load: Vec<f64>,
}

impl DgOperator {
    pub fn assemble(
        fine: &FineGrid,
        field: &CoefficientField,
        gamma: f64,
        f: &(dyn Fn(f64, f64) -> f64 + Sync),
    ) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "penalty must be positive, got {gamma}"
            )));
        }
        let (fnc, fnr) = field.dims();
        if (fnc, fnr) != fine.cell_counts() {
            return Err(Error::InvalidArgument(format!(
                "field is {fnc}x{fnr} but the grid has {:?} cells",
                fine.cell_counts()
            )));
        }
        let n = fine.num_dofs();
        let coarse = fine.coarse();
        let stiff: Triplets = (0..coarse.num_blocks())
            .into_par_iter()
            .map(|b| block_triplets(fine, b, &local_stiffness(fine, field, b)))
            .collect::<Vec<_>>()
            .concat();
        let mass_local = local_mass(fine);
        let mass: Triplets = (0..coarse.num_blocks())
            .flat_map(|b| block_triplets(fine, b, &mass_local))
            .collect();
        let edges: Vec<EdgeTerms> = coarse
            .edges()
            .par_iter()
            .map(|e| edge_terms(fine, field, e, gamma))
            .collect();
        let mut cons = Vec::new();
        let mut pen = Vec::new();
        for e in edges {
            cons.extend(e.consistency);
            pen.extend(e.penalty);
        }
        let stiffness = CsrMatrix::from_triplets(n, n, stiff);
        let consistency = CsrMatrix::from_triplets(n, n, cons);
        let penalty = CsrMatrix::from_triplets(n, n, pen);
        let dg_gram = stiffness.linear_combination(1.0, &penalty, 1.0);
        let sym: Triplets = consistency
            .triplets()
            .flat_map(|(i, j, v)| [(i, j, -v), (j, i, -v)])
            .chain(dg_gram.triplets())
            .collect();
        let matrix = CsrMatrix::from_triplets(n, n, sym);
        Ok(DgOperator {
            gamma,
            stiffness,
            consistency,
            penalty,
            matrix,
            dg_gram,
            mass: CsrMatrix::from_triplets(n, n, mass),
            load: load_vector(fine, f),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn num_dofs(&self) -> usize {
        self.load.len()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.matvec(u)
    }

    /// `a_DG(u, v)`.
    pub fn a_apply(&self, u: &[f64], v: &[f64]) -> f64 {
        self.matrix.bilinear(u, v)
    }

    pub fn dg_norm_sq(&self, u: &[f64]) -> f64 {
        self.dg_gram.quad_form(u).max(0.0)
    }

    pub fn dg_norm(&self, u: &[f64]) -> f64 {
        self.dg_norm_sq(u).sqrt()
    }

    /// `a_DG(u, u)`, failing if it is negative beyond round-off.
    pub fn a_norm_sq(&self, u: &[f64]) -> Result<f64> {
        let value = self.matrix.quad_form(u);
        let dg_norm_sq = self.dg_norm_sq(u);
        if value < -1e-12 * dg_norm_sq {
            return Err(Error::Coercivity { value, dg_norm_sq });
        }
        Ok(value.max(0.0))
    }

    pub fn a_norm(&self, u: &[f64]) -> Result<f64> {
        Ok(self.a_norm_sq(u)?.sqrt())
    }

    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        self.mass.quad_form(u).max(0.0).sqrt()
    }

    /// `b - A u`, accurately summed.
    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.residual(&self.load, u)
    }

    pub fn factor(&self) -> Result<SparseCholesky> {
        SparseCholesky::factor(&self.matrix)
            .map_err(|e| e.with_context("factorizing the fine DG matrix"))
    }

    /// Fine reference solution `u_h`, to `1e-10 |b|` or the rounding floor
    /// when that is larger (high contrast).
    pub fn solve_fine(&self) -> Result<Vec<f64>> {
        self.factor()?
            .solve_checked(&self.matrix, &self.load, 1e-10)
            .map_err(|e| e.with_context("fine solve"))
    }
}
