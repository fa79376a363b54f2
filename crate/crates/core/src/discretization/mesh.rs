//! Structured interval and rectangle meshes.

use crate::error::{invalid, Result};

/// Mesh description accepted by [`build_mesh`].
#[derive(Debug, Clone, PartialEq)]
pub enum MeshSpec {
    /// 1D slab: consecutive segments `[breakpoints[k], breakpoints[k+1]]`,
    /// each split into cells of size `cell_sizes[k]`.
    Segments {
        breakpoints: Vec<f64>,
        cell_sizes: Vec<f64>,
    },
    /// 2D uniform `nx x ny` rectangle grid.
    Rectangle {
        nx: usize,
        ny: usize,
        x: [f64; 2],
        y: [f64; 2],
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Cell {
    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
        ]
    }
}

/// Cell side, used for neighbor lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub fn axis(self) -> usize {
        match self {
            Side::Left | Side::Right => 0,
            Side::Bottom | Side::Top => 1,
        }
    }

    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            Side::Left => [-1.0, 0.0],
            Side::Right => [1.0, 0.0],
            Side::Bottom => [0.0, -1.0],
            Side::Top => [0.0, 1.0],
        }
    }
}

/// An edge (a point in 1D); `normal` points out of `owner`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub owner: usize,
    pub neighbor: Option<usize>,
    pub normal: [f64; 2],
    pub side: Side,
}

#[derive(Debug, Clone)]
pub struct SpatialMesh {
    dim: usize,
    nx: usize,
    ny: usize,
    cells: Vec<Cell>,
    edges: Vec<Edge>,
}

impl SpatialMesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, c: usize) -> &Cell {
        &self.cells[c]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.nx * j
    }

    pub fn ij(&self, c: usize) -> (usize, usize) {
        (c % self.nx, c / self.nx)
    }

    pub fn sides(&self) -> &'static [Side] {
        if self.dim == 1 {
            &[Side::Left, Side::Right]
        } else {
            &[Side::Left, Side::Right, Side::Bottom, Side::Top]
        }
    }

    pub fn neighbor(&self, c: usize, side: Side) -> Option<usize> {
        let (i, j) = self.ij(c);
        match side {
            Side::Left => (i > 0).then(|| c - 1),
            Side::Right => (i + 1 < self.nx).then(|| c + 1),
            Side::Bottom => (self.dim == 2 && j > 0).then(|| c - self.nx),
            Side::Top => (self.dim == 2 && j + 1 < self.ny).then(|| c + self.nx),
        }
    }

    /// Lower-left and upper-right corners of the domain.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        (self.cells[0].lo, self.cells[self.cells.len() - 1].hi)
    }
}

pub fn build_mesh(spec: &MeshSpec) -> Result<SpatialMesh> {
    let (dim, nx, ny, cells) = match spec {
        MeshSpec::Segments {
            breakpoints,
            cell_sizes,
        } => {
            if breakpoints.len() < 2 || cell_sizes.len() + 1 != breakpoints.len() {
                return invalid("segment mesh needs k+1 breakpoints and k cell sizes");
            }
            let mut cells = Vec::new();
            for (k, &h) in cell_sizes.iter().enumerate() {
                let (a, b) = (breakpoints[k], breakpoints[k + 1]);
                let len = b - a;
                if !(len > 0.0) || !(h > 0.0) {
                    return invalid(format!("degenerate segment [{a}, {b}] with size {h}"));
                }
                let n = (len / h).round();
                if n < 1.0 || (n * h - len).abs() > 1e-9 * len {
                    return invalid(format!(
                        "segment [{a}, {b}] is not divisible into cells of size {h}"
                    ));
                }
                let n = n as usize;
                for i in 0..n {
                    let lo = if i == 0 {
                        a
                    } else {
                        a + len * i as f64 / n as f64
                    };
                    let hi = if i + 1 == n {
                        b
                    } else {
                        a + len * (i + 1) as f64 / n as f64
                    };
                    cells.push(Cell {
                        lo: [lo, 0.0],
                        hi: [hi, 1.0],
                    });
                }
            }
            let nx = cells.len();
            (1, nx, 1, cells)
        }
        MeshSpec::Rectangle { nx, ny, x, y } => {
            let (nx, ny) = (*nx, *ny);
            if nx == 0 || ny == 0 {
                return invalid("rectangle mesh needs positive cell counts");
            }
            if !(x[1] > x[0]) || !(y[1] > y[0]) {
                return invalid("degenerate rectangle bounds");
            }
            let hx = (x[1] - x[0]) / nx as f64;
            let hy = (y[1] - y[0]) / ny as f64;
            let coord = |lo: f64, hi: f64, n: usize, h: f64, k: usize| {
                if k == n {
                    hi
                } else {
                    lo + h * k as f64
                }
            };
            let mut cells = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    cells.push(Cell {
                        lo: [coord(x[0], x[1], nx, hx, i), coord(y[0], y[1], ny, hy, j)],
                        hi: [
                            coord(x[0], x[1], nx, hx, i + 1),
                            coord(y[0], y[1], ny, hy, j + 1),
                        ],
                    });
                }
            }
            (2, nx, ny, cells)
        }
    };
    let mut mesh = SpatialMesh {
        dim,
        nx,
        ny,
        cells,
        edges: Vec::new(),
    };
    let mut edges = Vec::new();
    for c in 0..mesh.num_cells() {
        for &side in mesh.sides() {
            let nb = mesh.neighbor(c, side);
            // interior edges are recorded once, from the lower-index side
            let keep = match side {
                Side::Right | Side::Top => true,
                Side::Left | Side::Bottom => nb.is_none(),
            };
            if keep {
                edges.push(Edge {
                    owner: c,
                    neighbor: nb,
                    normal: side.outward_normal(),
                    side,
                });
            }
        }
    }
    mesh.edges = edges;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_material_mesh_has_200_cells() {
        let m = build_mesh(&MeshSpec::Segments {
            breakpoints: vec![0.0, 1.0, 11.0],
            cell_sizes: vec![0.01, 0.1],
        })
        .unwrap();
        assert_eq!(m.num_cells(), 200);
        assert_eq!(m.cell(99).hi[0], 1.0);
        assert!((m.cell(100).width(0) - 0.1).abs() < 1e-12);
        assert_eq!(m.edges().iter().filter(|e| e.neighbor.is_none()).count(), 2);
    }

    #[test]
    fn rectangle_edge_counts() {
        let m = build_mesh(&MeshSpec::Rectangle {
            nx: 2,
            ny: 2,
            x: [0.0, 1.0],
            y: [0.0, 1.0],
        })
        .unwrap();
        assert_eq!(m.num_cells(), 4);
        let interior = m.edges().iter().filter(|e| e.neighbor.is_some()).count();
        assert_eq!(interior, 4);
        assert_eq!(m.edges().len() - interior, 8);
    }

    #[test]
    fn full_scale_rectangle() {
        let m = build_mesh(&MeshSpec::Rectangle {
            nx: 80,
            ny: 80,
            x: [-1.0, 1.0],
            y: [-1.0, 1.0],
        })
        .unwrap();
        assert_eq!(m.num_cells(), 6400);
        assert_eq!(m.bounds(), ([-1.0, -1.0], [1.0, 1.0]));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(build_mesh(&MeshSpec::Rectangle {
            nx: 0,
            ny: 2,
            x: [0.0, 1.0],
            y: [0.0, 1.0]
        })
        .is_err());
        assert!(build_mesh(&MeshSpec::Rectangle {
            nx: 2,
            ny: 2,
            x: [1.0, 1.0],
            y: [0.0, 1.0]
        })
        .is_err());
        assert!(build_mesh(&MeshSpec::Segments {
            breakpoints: vec![0.0, 1.0],
            cell_sizes: vec![0.3],
        })
        .is_err());
        assert!(build_mesh(&MeshSpec::Segments {
            breakpoints: vec![0.0, 1.0],
            cell_sizes: vec![-0.1],
        })
        .is_err());
    }

    #[test]
    fn neighbors_are_consistent() {
        let m = build_mesh(&MeshSpec::Rectangle {
            nx: 3,
            ny: 2,
            x: [0.0, 3.0],
            y: [0.0, 2.0],
        })
        .unwrap();
        for c in 0..m.num_cells() {
            for (a, b) in [(Side::Left, Side::Right), (Side::Bottom, Side::Top)] {
                if let Some(n) = m.neighbor(c, a) {
                    assert_eq!(m.neighbor(n, b), Some(c));
                    assert_eq!(m.cell(n).hi[a.axis()], m.cell(c).lo[a.axis()]);
                }
            }
        }
    }
}
