//! Nested rectangular coarse/fine grids and the block-discontinuous DOF layout.
//!
//! Indexing is row-major with x fastest everywhere:
//! blocks `by * nx_blocks + bx`, coarse nodes `iy * (nx_blocks + 1) + ix`,
//! fine nodes inside a block `j * (nx + 1) + i`. Every block owns its own copy
//! of the nodes on its boundary, so a geometric node on an interior coarse edge
//! carries two DOFs (four at an interior coarse vertex).

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn unit() -> Self {
        Rect::new(0.0, 0.0, 1.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

/// Direction of an edge's fixed normal `n_E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normal {
    PlusX,
    MinusX,
    PlusY,
    MinusY,
}

impl Normal {
    pub fn components(self) -> (f64, f64) {
        match self {
            Normal::PlusX => (1.0, 0.0),
            Normal::MinusX => (-1.0, 0.0),
            Normal::PlusY => (0.0, 1.0),
            Normal::MinusY => (0.0, -1.0),
        }
    }

    pub fn is_vertical_edge(self) -> bool {
        matches!(self, Normal::PlusX | Normal::MinusX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeAdjacency {
    /// `n_E` points from `plus` to `minus`.
    Interior { plus: usize, minus: usize },
    /// `n_E` points out of the domain.
    Boundary { block: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseEdge {
    pub normal: Normal,
    pub adjacency: EdgeAdjacency,
    /// Coarse node indices of the two endpoints (lower/left first).
    pub nodes: [usize; 2],
}

impl CoarseEdge {
    pub fn is_interior(&self) -> bool {
        matches!(self.adjacency, EdgeAdjacency::Interior { .. })
    }

    pub fn blocks(&self) -> Vec<usize> {
        match self.adjacency {
            EdgeAdjacency::Interior { plus, minus } => vec![plus, minus],
            EdgeAdjacency::Boundary { block } => vec![block],
        }
    }
}

/// Uniform rectangular coarse partition `T^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrid {
    domain: Rect,
    nx: usize,
    ny: usize,
    edges: Vec<CoarseEdge>,
}

impl CoarseGrid {
    pub fn new(domain: Rect, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(format!(
                "coarse block counts must be positive, got {nx}x{ny}"
            )));
        }
        let degenerate = !(domain.width() > 0.0 && domain.height() > 0.0)
            || !domain.width().is_finite()
            || !domain.height().is_finite();
        if degenerate {
            return Err(Error::InvalidArgument(format!(
                "degenerate domain {domain:?}"
            )));
        }
        let block = |bx: usize, by: usize| by * nx + bx;
        let node = |ix: usize, iy: usize| iy * (nx + 1) + ix;
        let mut edges = Vec::with_capacity((nx + 1) * ny + nx * (ny + 1));
        for by in 0..ny {
            for ix in 0..=nx {
                let (normal, adjacency) = if ix == 0 {
                    (
                        Normal::MinusX,
                        EdgeAdjacency::Boundary {
                            block: block(0, by),
                        },
                    )
                } else if ix == nx {
                    (
                        Normal::PlusX,
                        EdgeAdjacency::Boundary {
                            block: block(nx - 1, by),
                        },
                    )
                } else {
                    (
                        Normal::PlusX,
                        EdgeAdjacency::Interior {
                            plus: block(ix - 1, by),
                            minus: block(ix, by),
                        },
                    )
                };
                edges.push(CoarseEdge {
                    normal,
                    adjacency,
                    nodes: [node(ix, by), node(ix, by + 1)],
                });
            }
        }
        for iy in 0..=ny {
            for bx in 0..nx {
                let (normal, adjacency) = if iy == 0 {
                    (
                        Normal::MinusY,
                        EdgeAdjacency::Boundary {
                            block: block(bx, 0),
                        },
                    )
                } else if iy == ny {
                    (
                        Normal::PlusY,
                        EdgeAdjacency::Boundary {
                            block: block(bx, ny - 1),
                        },
                    )
                } else {
                    (
                        Normal::PlusY,
                        EdgeAdjacency::Interior {
                            plus: block(bx, iy - 1),
                            minus: block(bx, iy),
                        },
                    )
                };
                edges.push(CoarseEdge {
                    normal,
                    adjacency,
                    nodes: [node(bx, iy), node(bx + 1, iy)],
                });
            }
        }
        Ok(CoarseGrid {
            domain,
            nx,
            ny,
            edges,
        })
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn num_blocks(&self) -> usize {
        self.nx * self.ny
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn block_width(&self) -> f64 {
        self.domain.width() / self.nx as f64
    }

    pub fn block_height(&self) -> f64 {
        self.domain.height() / self.ny as f64
    }

    pub fn block_index(&self, bx: usize, by: usize) -> usize {
        by * self.nx + bx
    }

    pub fn block_coords(&self, block: usize) -> (usize, usize) {
        (block % self.nx, block / self.nx)
    }

    pub fn block_rect(&self, block: usize) -> Rect {
        let (bx, by) = self.block_coords(block);
        let (w, h) = (self.block_width(), self.block_height());
        let x0 = self.domain.x0 + bx as f64 * w;
        let y0 = self.domain.y0 + by as f64 * h;
        Rect::new(x0, y0, x0 + w, y0 + h)
    }

    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        iy * (self.nx + 1) + ix
    }

    pub fn node_coords(&self, node: usize) -> (usize, usize) {
        (node % (self.nx + 1), node / (self.nx + 1))
    }

    pub fn node_position(&self, node: usize) -> (f64, f64) {
        let (ix, iy) = self.node_coords(node);
        (
            self.domain.x0 + ix as f64 * self.block_width(),
            self.domain.y0 + iy as f64 * self.block_height(),
        )
    }

    pub fn edges(&self) -> &[CoarseEdge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &CoarseEdge {
        &self.edges[e]
    }

    /// Coarse node at vertex `corner` of a block; corners are numbered
    /// 0 = (left, bottom), 1 = (right, bottom), 2 = (left, top), 3 = (right, top).
    pub fn block_vertex(&self, block: usize, corner: usize) -> usize {
        let (bx, by) = self.block_coords(block);
        self.node_index(bx + (corner & 1), by + (corner >> 1))
    }

    /// Which corner of `block` the node is, if any.
    pub fn corner_of(&self, block: usize, node: usize) -> Option<usize> {
        (0..4).find(|&c| self.block_vertex(block, c) == node)
    }

    pub fn blocks_of_node(&self, node: usize) -> Vec<usize> {
        let (ix, iy) = self.node_coords(node);
        let mut out = Vec::with_capacity(4);
        for by in [iy.wrapping_sub(1), iy] {
            for bx in [ix.wrapping_sub(1), ix] {
                if bx < self.nx && by < self.ny {
                    out.push(self.block_index(bx, by));
                }
            }
        }
        out
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let (ix, iy) = self.node_coords(node);
        ix == 0 || iy == 0 || ix == self.nx || iy == self.ny
    }

    /// Blocks sharing an edge with `block`.
    pub fn edge_neighbors(&self, block: usize) -> Vec<usize> {
        let (bx, by) = self.block_coords(block);
        let mut out = Vec::with_capacity(4);
        if by > 0 {
            out.push(self.block_index(bx, by - 1));
        }
        if bx > 0 {
            out.push(self.block_index(bx - 1, by));
        }
        if bx + 1 < self.nx {
            out.push(self.block_index(bx + 1, by));
        }
        if by + 1 < self.ny {
            out.push(self.block_index(bx, by + 1));
        }
        out
    }
}

/// Side of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Conforming uniform refinement `T^h` of a coarse grid, with `nx x ny` fine
/// cells per block.
#[derive(Debug, Clone, PartialEq)]
pub struct FineGrid {
    coarse: CoarseGrid,
    nx: usize,
    ny: usize,
}

impl FineGrid {
    pub fn new(coarse: CoarseGrid, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(format!(
                "fine cells per block must be positive, got {nx}x{ny}"
            )));
        }
        Ok(FineGrid { coarse, nx, ny })
    }

    pub fn coarse(&self) -> &CoarseGrid {
        &self.coarse
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.coarse.block_width() / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.coarse.block_height() / self.ny as f64
    }

    /// Fine spacing normal to a coarse edge.
    pub fn normal_spacing(&self, edge: &CoarseEdge) -> f64 {
        if edge.normal.is_vertical_edge() {
            self.hx()
        } else {
            self.hy()
        }
    }

    pub fn nodes_per_block(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn cells_per_block(&self) -> usize {
        self.nx * self.ny
    }

    pub fn num_dofs(&self) -> usize {
        self.coarse.num_blocks() * self.nodes_per_block()
    }

    /// Global fine cell counts along each axis.
    pub fn cell_counts(&self) -> (usize, usize) {
        (self.coarse.nx() * self.nx, self.coarse.ny() * self.ny)
    }

    pub fn num_cells(&self) -> usize {
        let (a, b) = self.cell_counts();
        a * b
    }

    pub fn local_node(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn local_node_coords(&self, local: usize) -> (usize, usize) {
        (local % (self.nx + 1), local / (self.nx + 1))
    }

    pub fn dof(&self, block: usize, i: usize, j: usize) -> usize {
        block * self.nodes_per_block() + self.local_node(i, j)
    }

    pub fn block_of_dof(&self, dof: usize) -> usize {
        dof / self.nodes_per_block()
    }

    pub fn block_dofs(&self, block: usize) -> std::ops::Range<usize> {
        let n = self.nodes_per_block();
        block * n..(block + 1) * n
    }

    pub fn dof_position(&self, dof: usize) -> (f64, f64) {
        let block = self.block_of_dof(dof);
        let (i, j) = self.local_node_coords(dof % self.nodes_per_block());
        let r = self.coarse.block_rect(block);
        (r.x0 + i as f64 * self.hx(), r.y0 + j as f64 * self.hy())
    }

    /// Global fine cell index of local cell `(cx, cy)` in `block`.
    pub fn cell_index(&self, block: usize, cx: usize, cy: usize) -> usize {
        let (bx, by) = self.coarse.block_coords(block);
        let (ncx, _) = self.cell_counts();
        (by * self.ny + cy) * ncx + bx * self.nx + cx
    }

    pub fn cell_center(&self, global_cell: usize) -> (f64, f64) {
        let (ncx, _) = self.cell_counts();
        let (gx, gy) = (global_cell % ncx, global_cell / ncx);
        let d = self.coarse.domain();
        (
            d.x0 + (gx as f64 + 0.5) * self.hx(),
            d.y0 + (gy as f64 + 0.5) * self.hy(),
        )
    }

    /// The four global DOFs of local cell `(cx, cy)`, ordered
    /// (0,0), (1,0), (0,1), (1,1).
    pub fn cell_dofs(&self, block: usize, cx: usize, cy: usize) -> [usize; 4] {
        [
            self.dof(block, cx, cy),
            self.dof(block, cx + 1, cy),
            self.dof(block, cx, cy + 1),
            self.dof(block, cx + 1, cy + 1),
        ]
    }

    pub fn on_side(&self, local: usize, side: Side) -> bool {
        let (i, j) = self.local_node_coords(local);
        match side {
            Side::Left => i == 0,
            Side::Right => i == self.nx,
            Side::Bottom => j == 0,
            Side::Top => j == self.ny,
        }
    }
}

/// Builds the nested grids for `domain` with `nbx x nby` blocks, each split
/// into `nx x ny` fine cells.
pub fn build_grids(domain: Rect, nbx: usize, nby: usize, nx: usize, ny: usize) -> Result<FineGrid> {
    FineGrid::new(CoarseGrid::new(domain, nbx, nby)?, nx, ny)
}

/// Coarse neighborhood `omega_i`: the union of blocks sharing coarse node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub node: usize,
    /// Member blocks in ascending order.
    pub blocks: Vec<usize>,
    /// Coarse edges strictly inside `omega_i`.
    pub interior_edges: Vec<usize>,
    /// Global DOFs of the member blocks, block after block; position in this
    /// list is the local DOF index.
    pub dofs: Vec<usize>,
    /// Local indices of DOFs that are free in `V_0^h(omega_i)`: everything except
    /// the nodes on the two sides of each member block away from the node.
    pub free: Vec<usize>,
}

impl Neighborhood {
    pub fn num_dofs(&self) -> usize {
        self.dofs.len()
    }

    pub fn free_dofs_global(&self) -> Vec<usize> {
        self.free.iter().map(|&l| self.dofs[l]).collect()
    }

    pub fn member_position(&self, block: usize) -> Option<usize> {
        self.blocks.iter().position(|&b| b == block)
    }
}

/// The two sides of `block` that do not touch its corner `corner`.
pub fn far_sides(corner: usize) -> [Side; 2] {
    let horiz = if corner & 1 == 0 {
        Side::Right
    } else {
        Side::Left
    };
    let vert = if corner >> 1 == 0 {
        Side::Top
    } else {
        Side::Bottom
    };
    [horiz, vert]
}

pub fn neighborhood(fine: &FineGrid, node: usize) -> Result<Neighborhood> {
    let coarse = fine.coarse();
    if node >= coarse.num_nodes() {
        return Err(Error::InvalidArgument(format!(
            "node index {node} out of range (grid has {} nodes)",
            coarse.num_nodes()
        )));
    }
    let mut blocks = coarse.blocks_of_node(node);
    blocks.sort_unstable();
    let interior_edges: Vec<usize> = coarse
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_interior() && e.nodes.contains(&node))
        .map(|(k, _)| k)
        .collect();
    let npb = fine.nodes_per_block();
    let mut dofs = Vec::with_capacity(blocks.len() * npb);
    let mut free = Vec::new();
    for (pos, &b) in blocks.iter().enumerate() {
        let corner = coarse
            .corner_of(b, node)
            .expect("member block must contain the node");
        let [s1, s2] = far_sides(corner);
        for local in 0..npb {
            dofs.push(b * npb + local);
            if !fine.on_side(local, s1) && !fine.on_side(local, s2) {
                free.push(pos * npb + local);
            }
        }
    }
    Ok(Neighborhood {
        node,
        blocks,
        interior_edges,
        dofs,
        free,
    })
}

/// Partitions coarse nodes into the four parity classes used for the
/// sub-iterations: with 1-based indices `(i, j)`, the order is
/// odd x odd, odd x even, even x odd, even x even. Neighborhoods within a
/// class never share a block.
pub fn color_classes(coarse: &CoarseGrid) -> [Vec<usize>; 4] {
    let mut classes: [Vec<usize>; 4] = Default::default();
    for node in 0..coarse.num_nodes() {
        let (ix, iy) = coarse.node_coords(node);
        // 0-based even == 1-based odd
        let class = match (ix % 2, iy % 2) {
            (0, 0) => 0,
            (0, 1) => 1,
            (1, 0) => 2,
            _ => 3,
        };
        classes[class].push(node);
    }
    classes
}
