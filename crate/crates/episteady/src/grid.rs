//! Uniform cell-centered grids with no-flux (Neumann) boundaries.
//!
//! Nodes are cell centers of a uniform Cartesian mesh; quadrature weights are
//! the uniform cell areas, so the discrete Laplacian (3-point / 5-point stencil
//! with mirrored ghosts) is exactly symmetric under the quadrature inner
//! product and its rows sum to zero by construction. A disk is represented by
//! retaining the cells whose centers lie inside the circle (staircase
//! boundary); the mask error in the measure is O(h) and is absorbed by the
//! tolerances of everything built on top.
//!
//! Node indices run row-major over retained cells (x fastest), which keeps the
//! Laplacian bandwidth at nx and lets the banded solver in [`crate::linalg`]
//! handle every implicit system in the crate.

use crate::error::{Result, SimError};
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_GRID_ID: AtomicU64 = AtomicU64::new(1);

/// Domain geometry. Intervals start at 0; rectangles and disks are centered
/// at the origin.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    /// `[0, length]` split into `n` cells.
    Interval { length: f64, n: usize },
    /// `[-lx/2, lx/2] x [-ly/2, ly/2]` split into `nx` x `ny` cells.
    Rectangle { lx: f64, ly: f64, nx: usize, ny: usize },
    /// Cells of the `n` x `n` mesh on `[-radius, radius]^2` whose centers lie
    /// inside the circle of the given radius.
    Disk { radius: f64, n: usize },
}

/// Grid kind tag (mirrors [`DomainSpec`] without the parameters).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Interval,
    Rectangle,
    MaskedDisk,
}

/// Direction order used everywhere a stencil is walked: -x, +x, -y, +y.
const DIRS: usize = 4;

/// A discretized domain: retained cell centers, neighbor topology, quadrature.
#[derive(Debug)]
pub struct Grid {
    id: u64,
    pub kind: GridKind,
    pub dim: usize,
    /// Cells per axis of the bounding box (ny = 1 in 1D).
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    /// Lower corner of the bounding box.
    pub x0: f64,
    pub y0: f64,
    /// Uniform quadrature weight per node: hx in 1D, hx*hy in 2D.
    pub weight: f64,
    /// Analytic measure of the continuous domain (pi R^2 for the disk).
    pub domain_measure: f64,
    /// node -> (ix, iy) of its cell.
    cells: Vec<(usize, usize)>,
    /// iy*nx + ix -> node index (None where masked out).
    cell_node: Vec<Option<usize>>,
    /// node -> neighbor node per direction (None across the boundary: mirror ghost).
    neighbors: Vec<[Option<usize>; DIRS]>,
    /// Nodes whose full stencil is present.
    interior: Vec<bool>,
    /// Max |i - j| over stencil pairs: bandwidth for the assembled operators.
    pub bandwidth: usize,
}

impl Grid {
    /// Build a grid from a domain spec. Fails on degenerate resolutions, empty
    /// masks, or masks with isolated nodes.
    pub fn build(spec: &DomainSpec) -> Result<Grid> {
        match *spec {
            DomainSpec::Interval { length, n } => {
                if !(length > 0.0) {
                    return Err(SimError::config(format!(
                        "interval length must be positive, got {length}"
                    )));
                }
                if n < 3 {
                    return Err(SimError::config(format!(
                        "interval resolution must be at least 3 cells, got {n}"
                    )));
                }
                let hx = length / n as f64;
                Ok(Self::assemble_full(
                    GridKind::Interval,
                    1,
                    n,
                    1,
                    hx,
                    1.0,
                    0.0,
                    0.0,
                    hx,
                    length,
                ))
            }
            DomainSpec::Rectangle { lx, ly, nx, ny } => {
                if !(lx > 0.0) || !(ly > 0.0) {
                    return Err(SimError::config(format!(
                        "rectangle extents must be positive, got {lx} x {ly}"
                    )));
                }
                if nx < 3 || ny < 3 {
                    return Err(SimError::config(format!(
                        "rectangle resolution must be at least 3 cells per axis, got {nx} x {ny}"
                    )));
                }
                let hx = lx / nx as f64;
                let hy = ly / ny as f64;
                Ok(Self::assemble_full(
                    GridKind::Rectangle,
                    2,
                    nx,
                    ny,
                    hx,
                    hy,
                    -0.5 * lx,
                    -0.5 * ly,
                    hx * hy,
                    lx * ly,
                ))
            }
            DomainSpec::Disk { radius, n } => {
                if !(radius > 0.0) {
                    return Err(SimError::config(format!(
                        "disk radius must be positive, got {radius}"
                    )));
                }
                if n < 3 {
                    return Err(SimError::config(format!(
                        "disk resolution must be at least 3 cells per axis, got {n}"
                    )));
                }
                let h = 2.0 * radius / n as f64;
                let x0 = -radius;
                let keep = |ix: usize, iy: usize| {
                    let x = x0 + (ix as f64 + 0.5) * h;
                    let y = x0 + (iy as f64 + 0.5) * h;
                    x * x + y * y <= radius * radius
                };
                let grid = Self::assemble_masked(
                    GridKind::MaskedDisk,
                    n,
                    n,
                    h,
                    h,
                    x0,
                    x0,
                    h * h,
                    std::f64::consts::PI * radius * radius,
                    keep,
                )?;
                if grid.n_nodes() == 0 {
                    return Err(SimError::config(format!(
                        "disk of radius {radius} at resolution {n} retains no grid nodes"
                    )));
                }
                Ok(grid)
            }
        }
    }

    fn assemble_full(
        kind: GridKind,
        dim: usize,
        nx: usize,
        ny: usize,
        hx: f64,
        hy: f64,
        x0: f64,
        y0: f64,
        weight: f64,
        measure: f64,
    ) -> Grid {
        // Full rectangles keep every cell; reuse the masked path with a
        // keep-all predicate (it cannot fail).
        Self::assemble_masked(kind, nx, ny, hx, hy, x0, y0, weight, measure, |_, _| true)
            .map(|mut g| {
                g.dim = dim;
                g
            })
            .expect("full grid assembly cannot fail")
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble_masked(
        kind: GridKind,
        nx: usize,
        ny: usize,
        hx: f64,
        hy: f64,
        x0: f64,
        y0: f64,
        weight: f64,
        measure: f64,
        keep: impl Fn(usize, usize) -> bool,
    ) -> Result<Grid> {
        let mut cell_node = vec![None; nx * ny];
        let mut cells = Vec::new();
        for iy in 0..ny {
            for ix in 0..nx {
                if keep(ix, iy) {
                    cell_node[iy * nx + ix] = Some(cells.len());
                    cells.push((ix, iy));
                }
            }
        }
        let n = cells.len();
        let mut neighbors = vec![[None; DIRS]; n];
        let mut interior = vec![true; n];
        let mut bandwidth = 0usize;
        for (node, &(ix, iy)) in cells.iter().enumerate() {
            let mut nb = [None; DIRS];
            let candidates: [Option<(usize, usize)>; DIRS] = [
                ix.checked_sub(1).map(|x| (x, iy)),
                if ix + 1 < nx { Some((ix + 1, iy)) } else { None },
                iy.checked_sub(1).map(|y| (ix, y)),
                if iy + 1 < ny { Some((ix, iy + 1)) } else { None },
            ];
            let dirs = if ny == 1 { 2 } else { DIRS };
            for d in 0..dirs {
                if let Some((jx, jy)) = candidates[d] {
                    if let Some(other) = cell_node[jy * nx + jx] {
                        nb[d] = Some(other);
                        bandwidth = bandwidth.max(node.abs_diff(other));
                    }
                }
            }
            for d in 0..dirs {
                if nb[d].is_none() {
                    interior[node] = false;
                }
            }
            neighbors[node] = nb;
        }
        // Reject masks with isolated nodes: a node with no neighbors would be
        // decoupled from the PDE entirely.
        if n > 1 {
            for (node, nb) in neighbors.iter().enumerate() {
                if nb.iter().all(|o| o.is_none()) {
                    let (ix, iy) = cells[node];
                    return Err(SimError::config(format!(
                        "mask leaves node at cell ({ix}, {iy}) isolated (no stencil neighbors)"
                    )));
                }
            }
        }
        Ok(Grid {
            id: NEXT_GRID_ID.fetch_add(1, Ordering::Relaxed),
            kind,
            dim: if ny == 1 { 1 } else { 2 },
            nx,
            ny,
            hx,
            hy,
            x0,
            y0,
            weight,
            domain_measure: measure,
            cells,
            cell_node,
            neighbors,
            interior,
            bandwidth,
        })
    }

    /// Unique id used to detect fields built on a different grid.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn n_nodes(&self) -> usize {
        self.cells.len()
    }

    /// Cell indices (ix, iy) of a node.
    pub fn cell(&self, node: usize) -> (usize, usize) {
        self.cells[node]
    }

    /// Node at cell (ix, iy), if retained.
    pub fn node_at(&self, ix: usize, iy: usize) -> Option<usize> {
        self.cell_node[iy * self.nx + ix]
    }

    /// Coordinates of a node (y = 0 in 1D).
    pub fn coords(&self, node: usize) -> (f64, f64) {
        let (ix, iy) = self.cells[node];
        let x = self.x0 + (ix as f64 + 0.5) * self.hx;
        let y = if self.dim == 1 {
            0.0
        } else {
            self.y0 + (iy as f64 + 0.5) * self.hy
        };
        (x, y)
    }

    /// Neighbor nodes in direction order (-x, +x, -y, +y).
    pub fn neighbors(&self, node: usize) -> &[Option<usize>; DIRS] {
        &self.neighbors[node]
    }

    /// True when the node's full stencil is present.
    pub fn is_interior(&self, node: usize) -> bool {
        self.interior[node]
    }

    /// Quadrature measure of the grid: sum of cell weights. Differs from
    /// [`Grid::domain_measure`] by O(h) for the masked disk; all solver algebra
    /// uses this value for internal consistency.
    pub fn measure_h(&self) -> f64 {
        self.weight * self.n_nodes() as f64
    }

    /// Compensated quadrature of a nodal field: sum_i weight * f_i.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.n_nodes());
        self.weight * neumaier_sum(f.iter().copied())
    }

    /// Compensated weighted inner product sum_i weight * f_i * g_i.
    pub fn weighted_dot(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.n_nodes());
        debug_assert_eq!(g.len(), self.n_nodes());
        self.weight * neumaier_sum(f.iter().zip(g).map(|(a, b)| a * b))
    }

    /// Apply the Neumann Laplacian in difference form: missing neighbors are
    /// mirror ghosts and contribute nothing, so constants map to exactly zero.
    pub fn apply_laplacian(&self, f: &[f64], out: &mut [f64]) {
        debug_assert_eq!(f.len(), self.n_nodes());
        debug_assert_eq!(out.len(), self.n_nodes());
        let ix2 = 1.0 / (self.hx * self.hx);
        let iy2 = 1.0 / (self.hy * self.hy);
        for (node, nb) in self.neighbors.iter().enumerate() {
            let fi = f[node];
            let mut acc = 0.0;
            if let Some(j) = nb[0] {
                acc += (f[j] - fi) * ix2;
            }
            if let Some(j) = nb[1] {
                acc += (f[j] - fi) * ix2;
            }
            if let Some(j) = nb[2] {
                acc += (f[j] - fi) * iy2;
            }
            if let Some(j) = nb[3] {
                acc += (f[j] - fi) * iy2;
            }
            out[node] = acc;
        }
    }

    /// Row entries of the Neumann Laplacian in assembly order: off-diagonals
    /// (-x, +x, -y, +y as present) followed by the diagonal, which is the
    /// negative of the floating-point sum of the off-diagonals in that order.
    /// Summing the returned entries left to right gives exactly 0.0.
    pub fn laplacian_row(&self, node: usize) -> Vec<(usize, f64)> {
        let ix2 = 1.0 / (self.hx * self.hx);
        let iy2 = 1.0 / (self.hy * self.hy);
        let mut row = Vec::with_capacity(5);
        let mut diag = 0.0;
        let nb = &self.neighbors[node];
        let coef = [ix2, ix2, iy2, iy2];
        for d in 0..DIRS {
            if let Some(j) = nb[d] {
                row.push((j, coef[d]));
                diag += coef[d];
            }
        }
        row.push((node, -diag));
        row
    }

    /// Assemble the banded matrix `lap_coef * L + diag(d)`, where `L` is the
    /// Neumann Laplacian. `d` is evaluated per node.
    pub fn assemble(&self, lap_coef: f64, d: impl Fn(usize) -> f64) -> crate::linalg::BandMatrix {
        let n = self.n_nodes();
        let b = self.bandwidth.max(1);
        let mut a = crate::linalg::BandMatrix::zero(n, b, b);
        for node in 0..n {
            for (j, v) in self.laplacian_row(node) {
                if j == node {
                    a.add(node, node, lap_coef * v + d(node));
                } else {
                    a.add(node, j, lap_coef * v);
                }
            }
        }
        a
    }

    /// Squared Euclidean distance between two nodes.
    pub fn dist2(&self, a: usize, b: usize) -> f64 {
        let (xa, ya) = self.coords(a);
        let (xb, yb) = self.coords(b);
        (xa - xb) * (xa - xb) + (ya - yb) * (ya - yb)
    }

    /// Smallest grid spacing.
    pub fn h_min(&self) -> f64 {
        if self.dim == 1 {
            self.hx
        } else {
            self.hx.min(self.hy)
        }
    }

    /// Check a field was built on this grid.
    pub fn check_field(&self, f: &Field) -> Result<()> {
        if f.grid_id != self.id || f.values.len() != self.n_nodes() {
            return Err(SimError::config(
                "field does not belong to this grid (mismatched grid id or length)",
            ));
        }
        Ok(())
    }
}

/// A nodal scalar field tied to the grid it was built on.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid_id: u64,
    pub values: Vec<f64>,
}

impl Field {
    pub fn constant(grid: &Grid, c: f64) -> Field {
        Field { grid_id: grid.id, values: vec![c; grid.n_nodes()] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Field {
        let values = (0..grid.n_nodes())
            .map(|i| {
                let (x, y) = grid.coords(i);
                f(x, y)
            })
            .collect();
        Field { grid_id: grid.id, values }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Field {
        assert_eq!(values.len(), grid.n_nodes(), "field length must match grid");
        Field { grid_id: grid.id, values }
    }

    pub fn grid_id(&self) -> u64 {
        self.grid_id
    }

    pub fn inf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Max-norm of a slice.
pub fn inf_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Neumaier (improved Kahan) compensated summation: keeps quadrature and
/// conservation checks at the rounding floor even on 129^2 grids.
pub fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
