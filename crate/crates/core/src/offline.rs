//! Offline stage: partition of unity, neighborhood spectral problems and the
//! initial block-supported basis.

use faer::Mat;
use log::debug;
use rayon::prelude::*;

use crate::coefficient::CoefficientField;
use crate::dg::Triplets;
use crate::dg::{self, GAUSS3};
use crate::error::{Error, Result};
use crate::grid::{self, FineGrid, Neighborhood};
use crate::linalg::{self, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PouKind {
    /// Tensor-product hat functions of the coarse block.
    Bilinear,
    /// `a_H^K`-harmonic extension of the bilinear boundary values.
    Multiscale,
}

impl PouKind {
    pub fn parse(s: &str) -> Result<PouKind> {
        match s {
            "bilinear" => Ok(PouKind::Bilinear),
            "multiscale" => Ok(PouKind::Multiscale),
            other => Err(Error::Format(format!(
                "unknown partition of unity `{other}`"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PouKind::Bilinear => "bilinear",
            PouKind::Multiscale => "multiscale",
        }
    }
}

/// The four functions `chi_j^K` of one block, as values on its fine nodes.
/// Corner numbering follows [`grid::CoarseGrid::block_vertex`].
pub fn build_pou(
    fine: &FineGrid,
    field: &CoefficientField,
    block: usize,
    kind: PouKind,
) -> Result<[Vec<f64>; 4]> {
    let (nx, ny) = (fine.nx(), fine.ny());
    let npb = fine.nodes_per_block();
    let hat = |corner: usize, local: usize| {
        let (i, j) = fine.local_node_coords(local);
        let tx = i as f64 / nx as f64;
        let ty = j as f64 / ny as f64;
        let fx = if corner & 1 == 1 { tx } else { 1.0 - tx };
        let fy = if corner >> 1 == 1 { ty } else { 1.0 - ty };
        fx * fy
    };
    let mut out: [Vec<f64>; 4] = std::array::from_fn(|c| (0..npb).map(|l| hat(c, l)).collect());
    if kind == PouKind::Bilinear || nx < 2 || ny < 2 {
        return Ok(out);
    }
    let k = dg::local_stiffness(fine, field, block);
    let interior: Vec<usize> = (0..npb)
        .filter(|&l| {
            let (i, j) = fine.local_node_coords(l);
            i > 0 && j > 0 && i < nx && j < ny
        })
        .collect();
    let boundary: Vec<usize> = (0..npb).filter(|l| !interior.contains(l)).collect();
    let kii = Mat::<f64>::from_fn(interior.len(), interior.len(), |a, b| {
        k[(interior[a], interior[b])]
    });
    let l = linalg::cholesky_lower(kii.as_ref())
        .map_err(|e| e.with_context(format!("harmonic extension on block {block}")))?;
    for chi in out.iter_mut() {
        let rhs: Vec<f64> = interior
            .iter()
            .map(|&a| -boundary.iter().map(|&b| k[(a, b)] * chi[b]).sum::<f64>())
            .collect();
        let x = linalg::cholesky_solve(l.as_ref(), &rhs);
        for (&a, v) in interior.iter().zip(x) {
            chi[a] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    pub kind: PouKind,
    funcs: Vec<[Vec<f64>; 4]>,
}

impl PartitionOfUnity {
    pub fn build(fine: &FineGrid, field: &CoefficientField, kind: PouKind) -> Result<Self> {
        let funcs = (0..fine.coarse().num_blocks())
            .into_par_iter()
            .map(|b| build_pou(fine, field, b, kind))
            .collect::<Result<Vec<_>>>()?;
        Ok(PartitionOfUnity { kind, funcs })
    }

    pub fn chi(&self, block: usize, corner: usize) -> &[f64] {
        &self.funcs[block][corner]
    }

    /// `chi_i^K`: the function of `block` attached to coarse node `node`.
    pub fn chi_for_node(&self, fine: &FineGrid, block: usize, node: usize) -> &[f64] {
        let corner = fine
            .coarse()
            .corner_of(block, node)
            .expect("node must be a vertex of the block");
        self.chi(block, corner)
    }

    /// `chi_i^K` of every member block, laid out in the neighborhood's local order.
    pub fn neighborhood_chi(&self, fine: &FineGrid, nb: &Neighborhood) -> Vec<f64> {
        nb.blocks
            .iter()
            .flat_map(|&b| self.chi_for_node(fine, b, nb.node).iter().copied())
            .collect()
    }
}

/// Local index of a global DOF inside a neighborhood, if it belongs to it.
pub fn local_index(fine: &FineGrid, nb: &Neighborhood, dof: usize) -> Option<usize> {
    let npb = fine.nodes_per_block();
    let block = fine.block_of_dof(dof);
    nb.member_position(block)
        .map(|p| p * npb + dof - block * npb)
}

fn to_local(
    fine: &FineGrid,
    nb: &Neighborhood,
    t: impl IntoIterator<Item = (usize, usize, f64)>,
) -> Triplets {
    t.into_iter()
        .filter_map(|(i, j, v)| Some((local_index(fine, nb, i)?, local_index(fine, nb, j)?, v)))
        .collect()
}

/// `a_omega`: member block stiffnesses plus the penalty on the coarse edges
/// inside the neighborhood, in local DOF order.
pub fn assemble_a_omega(
    fine: &FineGrid,
    field: &CoefficientField,
    nb: &Neighborhood,
    gamma: f64,
) -> CsrMatrix {
    let npb = fine.nodes_per_block();
    let mut t = Triplets::new();
    for (p, &b) in nb.blocks.iter().enumerate() {
        let k = dg::local_stiffness(fine, field, b);
        for j in 0..npb {
            for i in 0..npb {
                if k[(i, j)] != 0.0 {
                    t.push((p * npb + i, p * npb + j, k[(i, j)]));
                }
            }
        }
    }
    for &e in &nb.interior_edges {
        let terms = dg::edge_terms(fine, field, fine.coarse().edge(e), gamma);
        t.extend(to_local(fine, nb, terms.penalty));
    }
    let n = nb.num_dofs();
    CsrMatrix::from_triplets(n, n, t)
}

/// `s_omega`: `kappa |grad chi_i|^2`-weighted mass plus the jump-of-chi
/// weighted average terms on interior edges, in local DOF order.
pub fn assemble_s_omega(
    fine: &FineGrid,
    field: &CoefficientField,
    nb: &Neighborhood,
    pou: &PartitionOfUnity,
    gamma: f64,
) -> CsrMatrix {
    let npb = fine.nodes_per_block();
    let (hx, hy) = (fine.hx(), fine.hy());
    let chi_loc = pou.neighborhood_chi(fine, nb);
    let mut t = Triplets::new();
    for (p, &b) in nb.blocks.iter().enumerate() {
        let chi = &chi_loc[p * npb..(p + 1) * npb];
        for cy in 0..fine.ny() {
            for cx in 0..fine.nx() {
                let kappa = field.cell(fine.cell_index(b, cx, cy));
                let nodes = [
                    fine.local_node(cx, cy),
                    fine.local_node(cx + 1, cy),
                    fine.local_node(cx, cy + 1),
                    fine.local_node(cx + 1, cy + 1),
                ];
                let c: Vec<f64> = nodes.iter().map(|&n| chi[n]).collect();
                let mut m = [[0.0; 4]; 4];
                for &(sy, wy) in &GAUSS3 {
                    for &(sx, wx) in &GAUSS3 {
                        let gx = ((c[1] - c[0]) * (1.0 - sy) + (c[3] - c[2]) * sy) / hx;
                        let gy = ((c[2] - c[0]) * (1.0 - sx) + (c[3] - c[1]) * sx) / hy;
                        let wgt = wx * wy * hx * hy * kappa * (gx * gx + gy * gy);
                        let phi = [
                            (1.0 - sx) * (1.0 - sy),
                            sx * (1.0 - sy),
                            (1.0 - sx) * sy,
                            sx * sy,
                        ];
                        for a in 0..4 {
                            for bb in 0..4 {
                                m[a][bb] += wgt * phi[a] * phi[bb];
                            }
                        }
                    }
                }
                for a in 0..4 {
                    for bb in 0..4 {
                        t.push((p * npb + nodes[a], p * npb + nodes[bb], m[a][bb]));
                    }
                }
            }
        }
    }
    for &e in &nb.interior_edges {
        let edge = fine.coarse().edge(e);
        let (nseg, len) = dg::edge_segments(fine, edge);
        let pen = gamma / fine.normal_spacing(edge) * field.kappa_bar(edge);
        let normal = edge.normal.components();
        for seg in 0..nseg {
            for &(s, w) in &GAUSS3 {
                let mut jump_chi = 0.0;
                let mut avg: Vec<(usize, f64)> = Vec::with_capacity(4);
                for (b, js, aw) in dg::edge_sides(edge) {
                    let side = dg::touching_side(fine, b, edge);
                    let (tr, _) = dg::side_point(fine, field, b, side, seg, s, normal);
                    for (d, c) in tr {
                        let l = local_index(fine, nb, d).expect("edge inside the neighborhood");
                        jump_chi += js * c * chi_loc[l];
                        avg.push((l, aw * c));
                    }
                }
                let wgt = w * len * pen * jump_chi * jump_chi;
                if wgt == 0.0 {
                    continue;
                }
                for &(i, ci) in &avg {
                    for &(j, cj) in &avg {
                        t.push((i, j, wgt * ci * cj));
                    }
                }
            }
        }
    }
    let n = nb.num_dofs();
    CsrMatrix::from_triplets(n, n, t)
}

/// Eigenpairs of one neighborhood's spectral problem.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub node: usize,
    /// All eigenvalues, ascending.
    pub values: Vec<f64>,
    /// The first few eigenvectors as columns, `s`-orthonormal.
    pub vectors: Mat<f64>,
}

impl SpectralResult {
    pub fn num_vectors(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.col(k).iter().copied().collect()
    }
}

/// Smallest `count` eigenpairs of `a x = lambda s x`.
///
/// If `s` is numerically semi-definite its factorization fails; it is then
/// shifted by `1e-12` of its mean diagonal and the solve repeated. Either way
/// the returned vectors are normalized and checked against the unshifted forms.
pub fn solve_spectral(
    node: usize,
    a: &CsrMatrix,
    s: &CsrMatrix,
    count: usize,
) -> Result<SpectralResult> {
    let n = a.nrows();
    if count > n {
        return Err(Error::InvalidArgument(format!(
            "requested {count} eigenpairs from a {n}-dimensional local space"
        )));
    }
    let ad = a.to_dense();
    let sd = s.to_dense();
    let eig = match linalg::generalized_symmetric_eigen(ad.as_ref(), sd.as_ref(), count) {
        Ok(eig) => eig,
        Err(_) => {
            let trace: f64 = (0..n).map(|i| sd[(i, i)]).sum();
            let eps = 1e-12 * trace / n as f64;
            debug!("node {node}: shifting s by {eps:e}");
            let sreg =
                Mat::<f64>::from_fn(n, n, |i, j| sd[(i, j)] + if i == j { eps } else { 0.0 });
            linalg::generalized_symmetric_eigen(ad.as_ref(), sreg.as_ref(), count)
                .map_err(|e| e.with_context(format!("spectral problem at node {node}")))?
        }
    };
    let mut vectors = eig.vectors;
    let anorm = a.frobenius_norm();
    for k in 0..count {
        let v: Vec<f64> = vectors.col(k).iter().copied().collect();
        let sv = s.quad_form(&v);
        if !(sv > 0.0) {
            return Err(Error::Numerical(format!(
                "eigenvector {k} at node {node} has s-norm {sv:e}"
            )));
        }
        let scale = 1.0 / sv.sqrt();
        for i in 0..n {
            vectors[(i, k)] *= scale;
        }
        let v: Vec<f64> = vectors.col(k).iter().copied().collect();
        let av = a.matvec(&v);
        let svv = s.matvec(&v);
        let lam = eig.values[k];
        let res = av
            .iter()
            .zip(&svv)
            .map(|(x, y)| (x - lam * y).powi(2))
            .sum::<f64>()
            .sqrt();
        if res > 1e-8 * anorm {
            return Err(Error::Numerical(format!(
                "eigenpair {k} at node {node}: residual {res:e} > 1e-8 |a| = {:e}",
                1e-8 * anorm
            )));
        }
    }
    Ok(SpectralResult {
        node,
        values: eig.values,
        vectors,
    })
}

/// Where a basis function came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// `k` is 1-based, so `k = 1` is the constant eigenfunction.
    Offline { node: usize, k: usize },
    Online {
        iteration: usize,
        sub_iteration: usize,
        node: usize,
    },
}

/// A fine function supported on a single coarse block.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisFunction {
    pub block: usize,
    /// Values on the block's fine nodes, local order.
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

/// Everything the offline stage computes once per field and penalty.
#[derive(Debug, Clone)]
pub struct OfflineData {
    pub pou: PartitionOfUnity,
    pub neighborhoods: Vec<Neighborhood>,
    /// `a_omega` per node, local order.
    pub a_omega: Vec<CsrMatrix>,
    pub spectra: Vec<SpectralResult>,
}

impl OfflineData {
    /// Solves every neighborhood's spectral problem, keeping `count`
    /// eigenvectors (and all eigenvalues) per node.
    pub fn build(
        fine: &FineGrid,
        field: &CoefficientField,
        gamma: f64,
        kind: PouKind,
        count: usize,
    ) -> Result<Self> {
        let pou = PartitionOfUnity::build(fine, field, kind)?;
        let nodes = fine.coarse().num_nodes();
        let neighborhoods = (0..nodes)
            .map(|i| grid::neighborhood(fine, i))
            .collect::<Result<Vec<_>>>()?;
        let solved: Vec<(CsrMatrix, SpectralResult)> = neighborhoods
            .par_iter()
            .map(|nb| {
                let a = assemble_a_omega(fine, field, nb, gamma);
                let s = assemble_s_omega(fine, field, nb, &pou, gamma);
                let spec = solve_spectral(nb.node, &a, &s, count.min(a.nrows()))?;
                Ok((a, spec))
            })
            .collect::<Result<Vec<_>>>()?;
        let (a_omega, spectra): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
        debug!("offline: solved {nodes} local spectral problems");
        Ok(OfflineData {
            pou,
            neighborhoods,
            a_omega,
            spectra,
        })
    }

    /// `L_i` for every node: `layers` everywhere, or zero on boundary nodes
    /// when `include_boundary` is off.
    pub fn uniform_layers(
        &self,
        fine: &FineGrid,
        layers: usize,
        include_boundary: bool,
    ) -> Vec<usize> {
        (0..self.neighborhoods.len())
            .map(|i| {
                if !include_boundary && fine.coarse().is_boundary_node(i) {
                    0
                } else {
                    layers
                }
            })
            .collect()
    }

    /// `Lambda_min = min_i lambda_{L_i + 1}` over nodes carrying basis functions.
    pub fn lambda_min(&self, layers: &[usize]) -> f64 {
        self.spectra
            .iter()
            .zip(layers)
            .filter(|(_, &l)| l > 0)
            .filter_map(|(s, &l)| s.values.get(l).copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// `lambda_{L_i + 1}` at one node.
    pub fn first_excluded(&self, node: usize, layers: usize) -> Option<f64> {
        self.spectra[node].values.get(layers).copied()
    }

    /// Initial space `V_H^(0)`: for each node and each of its first `L_i`
    /// eigenfunctions, one function per member block, the nodal interpolant of
    /// `chi_i^K psi_k` on that block.
    pub fn split_and_collect(
        &self,
        fine: &FineGrid,
        layers: &[usize],
    ) -> Result<Vec<BasisFunction>> {
        if layers.len() != self.neighborhoods.len() {
            return Err(Error::InvalidArgument(format!(
                "{} layer counts for {} nodes",
                layers.len(),
                self.neighborhoods.len()
            )));
        }
        let npb = fine.nodes_per_block();
        let mut out = Vec::new();
        for ((nb, spec), &l) in self.neighborhoods.iter().zip(&self.spectra).zip(layers) {
            if l > spec.num_vectors() {
                return Err(Error::InvalidArgument(format!(
                    "node {} needs {l} eigenfunctions but only {} were computed (local dimension {})",
                    nb.node,
                    spec.num_vectors(),
                    spec.values.len()
                )));
            }
            let chi = self.pou.neighborhood_chi(fine, nb);
            for k in 0..l {
                let psi = spec.vector(k);
                for (p, &b) in nb.blocks.iter().enumerate() {
                    let values: Vec<f64> = (0..npb)
                        .map(|q| chi[p * npb + q] * psi[p * npb + q])
                        .collect();
                    if values.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    out.push(BasisFunction {
                        block: b,
                        values,
                        provenance: Provenance::Offline {
                            node: nb.node,
                            k: k + 1,
                        },
                    });
                }
            }
        }
        Ok(out)
    }
}
