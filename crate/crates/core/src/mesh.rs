//! Uniform bulk grid on the unit square and 1D boundary meshes on its
//! boundary.
//!
//! The boundary is parameterized by counterclockwise arclength `s ∈ [0, 4)`
//! starting at the origin. Boundary node positions are stored as integer
//! ticks of size `1/den`, so coordinates computed from a boundary mesh agree
//! bit-for-bit with the bulk grid coordinates they sit on.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Which part of the boundary carries the dynamic boundary condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundarySelector {
    FullBoundary,
    /// `(0,1) × {0}`; the rest of the boundary is homogeneous Dirichlet.
    BottomEdge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundarySegment {
    pub nodes: [usize; 2],
    pub cell: usize,
}

#[derive(Clone, Debug)]
pub struct BulkMesh {
    pub n: usize,
    pub node_coords: Vec<[f64; 2]>,
    /// Counterclockwise: lower-left, lower-right, upper-right, upper-left.
    pub cells: Vec<[usize; 4]>,
    pub boundary_segments: Vec<BoundarySegment>,
    pub dirichlet_mask: Vec<bool>,
    pub selector: BoundarySelector,
}

pub fn build_bulk_mesh(n: usize) -> Result<BulkMesh> {
    build_bulk_mesh_with(n, BoundarySelector::FullBoundary)
}

pub fn build_bulk_mesh_with(n: usize, selector: BoundarySelector) -> Result<BulkMesh> {
    if n == 0 {
        return Err(invalid("bulk mesh needs at least one cell per side"));
    }
    let np = n + 1;
    let nf = n as f64;
    let mut node_coords = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            node_coords.push([i as f64 / nf, j as f64 / nf]);
        }
    }
    let mut cells = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let a = j * np + i;
            cells.push([a, a + 1, a + 1 + np, a + np]);
        }
    }
    let mut mesh = BulkMesh {
        n,
        node_coords,
        cells,
        boundary_segments: Vec::with_capacity(4 * n),
        dirichlet_mask: vec![false; np * np],
        selector,
    };
    for k in 0..4 * n {
        let a = mesh.boundary_node(k);
        let b = mesh.boundary_node((k + 1) % (4 * n));
        let cell = match k / n {
            0 => k,
            1 => (k - n) * n + (n - 1),
            2 => (n - 1) * n + (3 * n - 1 - k),
            _ => (4 * n - 1 - k) * n,
        };
        mesh.boundary_segments.push(BoundarySegment { nodes: [a, b], cell });
    }
    if selector == BoundarySelector::BottomEdge {
        for k in 0..4 * n {
            if !(1..n).contains(&k) {
                let v = mesh.boundary_node(k);
                mesh.dirichlet_mask[v] = true;
            }
        }
    }
    Ok(mesh)
}

impl BulkMesh {
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn num_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    /// Bulk node at boundary tick `k` (arclength `k/n`), counterclockwise from
    /// the origin.
    pub fn boundary_node(&self, k: usize) -> usize {
        let n = self.n;
        let k = k % (4 * n);
        match k / n {
            0 => self.node(k, 0),
            1 => self.node(n, k - n),
            2 => self.node(3 * n - k, n),
            _ => self.node(0, 4 * n - k),
        }
    }

    /// Bulk node index of each node of a boundary mesh restricted from this
    /// grid.
    pub fn trace_map(&self, bm: &BoundaryMesh) -> Result<Vec<usize>> {
        if bm.den != self.n {
            return Err(Error::MeshMismatch(format!(
                "boundary mesh resolution 1/{} does not match bulk 1/{}",
                bm.den, self.n
            )));
        }
        Ok(bm.ticks.iter().map(|&t| self.boundary_node(t)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    ClosedLoop,
    Interval,
}

#[derive(Clone, Debug)]
pub struct BoundaryMesh {
    pub topology: Topology,
    /// Node positions in units of `1/den`.
    pub ticks: Vec<usize>,
    pub den: usize,
    pub arclengths: Vec<f64>,
    pub segments: Vec<[usize; 2]>,
    pub parent: Option<Arc<BoundaryMesh>>,
    /// Interval only: whether the first/last node is tied to the Dirichlet
    /// part of the boundary.
    pub endpoint_dirichlet: [bool; 2],
}

impl BoundaryMesh {
    fn from_ticks(topology: Topology, first: usize, count: usize, den: usize, endpoint_dirichlet: [bool; 2]) -> Self {
        let (nnodes, segments): (usize, Vec<[usize; 2]>) = match topology {
            Topology::ClosedLoop => (count, (0..count).map(|k| [k, (k + 1) % count]).collect()),
            Topology::Interval => (count + 1, (0..count).map(|k| [k, k + 1]).collect()),
        };
        let ticks: Vec<usize> = (0..nnodes).map(|k| first + k).collect();
        let arclengths = ticks.iter().map(|&t| t as f64 / den as f64).collect();
        Self { topology, ticks, den, arclengths, segments, parent: None, endpoint_dirichlet }
    }

    /// Closed loop over the whole boundary with `per_unit` segments per unit
    /// arclength.
    pub fn closed_loop(per_unit: usize) -> Result<Self> {
        if per_unit == 0 {
            return Err(invalid("boundary mesh needs at least one segment per unit length"));
        }
        Ok(Self::from_ticks(Topology::ClosedLoop, 0, 4 * per_unit, per_unit, [false; 2]))
    }

    /// Interval mesh of the bottom edge `[0, 1]`.
    pub fn bottom_edge(per_unit: usize, endpoint_dirichlet: [bool; 2]) -> Result<Self> {
        if per_unit == 0 {
            return Err(invalid("boundary mesh needs at least one segment per unit length"));
        }
        Ok(Self::from_ticks(Topology::Interval, 0, per_unit, per_unit, endpoint_dirichlet))
    }

    pub fn num_nodes(&self) -> usize {
        self.ticks.len()
    }

    pub fn num_elements(&self) -> usize {
        self.segments.len()
    }

    pub fn h(&self) -> f64 {
        1.0 / self.den as f64
    }

    pub fn total_length(&self) -> f64 {
        self.num_elements() as f64 / self.den as f64
    }

    pub fn element_length(&self, _e: usize) -> f64 {
        self.h()
    }

    pub fn element_bounds(&self, e: usize) -> (f64, f64) {
        let t = self.ticks[self.segments[e][0]];
        (t as f64 / self.den as f64, (t + 1) as f64 / self.den as f64)
    }

    /// Point of the unit square at node `i`.
    pub fn point(&self, i: usize) -> [f64; 2] {
        let den = self.den;
        let t = self.ticks[i] % (4 * den);
        let d = den as f64;
        let o = (t % den) as f64;
        match t / den {
            0 => [o / d, 0.0],
            1 => [1.0, o / d],
            2 => [(den - t % den) as f64 / d, 1.0],
            _ => [0.0, (den - t % den) as f64 / d],
        }
    }

    /// Nodes carrying a degree of freedom (interval endpoints flagged
    /// Dirichlet are excluded).
    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| !self.is_dirichlet_node(i)).collect()
    }

    pub fn is_dirichlet_node(&self, i: usize) -> bool {
        self.topology == Topology::Interval
            && ((i == 0 && self.endpoint_dirichlet[0]) || (i + 1 == self.num_nodes() && self.endpoint_dirichlet[1]))
    }

    /// `free_index()[i] = Some(k)` if node `i` is the `k`-th free node.
    pub fn free_index(&self) -> Vec<Option<usize>> {
        let mut k = 0;
        (0..self.num_nodes())
            .map(|i| {
                if self.is_dirichlet_node(i) {
                    None
                } else {
                    k += 1;
                    Some(k - 1)
                }
            })
            .collect()
    }

    pub fn num_free(&self) -> usize {
        self.free_nodes().len()
    }

    /// Refinement ratio `fine.den / self.den` if `fine` is a dyadic (or any
    /// integer) refinement of `self` covering the same arc.
    pub fn refinement_ratio(&self, fine: &BoundaryMesh) -> Result<usize> {
        let bad = |why: &str| Error::NotNested(why.to_string());
        if self.topology != fine.topology {
            return Err(bad("topologies differ"));
        }
        if fine.den % self.den != 0 {
            return Err(bad("fine resolution is not a multiple of the coarse one"));
        }
        let r = fine.den / self.den;
        if fine.ticks[0] != self.ticks[0] * r || fine.num_elements() != self.num_elements() * r {
            return Err(bad("meshes cover different arcs"));
        }
        Ok(r)
    }

    /// Locates arclength `s` in the mesh: element index and local coordinate
    /// in `[0, 1]`. Closed loops wrap modulo the total length.
    pub fn locate(&self, s: f64) -> Result<(usize, f64)> {
        let ne = self.num_elements();
        let start = self.ticks[0] as f64 / self.den as f64;
        let len = self.total_length();
        let mut x = (s - start) * self.den as f64;
        match self.topology {
            Topology::ClosedLoop => x = x.rem_euclid(ne as f64),
            Topology::Interval => {
                if x < -1e-12 || x > ne as f64 + 1e-12 {
                    return Err(Error::OutOfDomain { s, length: len });
                }
                x = x.clamp(0.0, ne as f64);
            }
        }
        let e = (x.floor() as usize).min(ne - 1);
        Ok((e, x - e as f64))
    }
}

/// Restricts the bulk grid to the selected boundary part.
pub fn restrict_to_boundary(mesh: &BulkMesh, selector: BoundarySelector) -> BoundaryMesh {
    match selector {
        BoundarySelector::FullBoundary => BoundaryMesh::closed_loop(mesh.n).expect("n >= 1"),
        BoundarySelector::BottomEdge => BoundaryMesh::bottom_edge(mesh.n, [true, true]).expect("n >= 1"),
    }
}

/// Splits every segment into `2^levels` equal children.
pub fn refine_boundary(bm: &BoundaryMesh, levels: u32) -> BoundaryMesh {
    let r = 1usize << levels;
    let mut fine = BoundaryMesh::from_ticks(
        bm.topology,
        bm.ticks[0] * r,
        bm.num_elements() * r,
        bm.den * r,
        bm.endpoint_dirichlet,
    );
    fine.parent = Some(Arc::new(bm.clone()));
    fine
}

/// Contiguous description of a patch: `count` elements starting at `start`,
/// wrapping on closed loops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchRange {
    pub start: usize,
    pub count: usize,
}

impl PatchRange {
    pub fn elements(&self, ne: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.count).map(move |k| (self.start + k) % ne)
    }
}

pub fn element_patch_range(bm: &BoundaryMesh, element: usize, m: usize) -> PatchRange {
    let ne = bm.num_elements();
    match bm.topology {
        Topology::ClosedLoop => {
            if m >= ne || 2 * m + 1 >= ne {
                PatchRange { start: 0, count: ne }
            } else {
                PatchRange { start: (element + ne - m) % ne, count: 2 * m + 1 }
            }
        }
        Topology::Interval => {
            let lo = element.saturating_sub(m);
            let hi = element.saturating_add(m).min(ne - 1);
            PatchRange { start: lo, count: hi - lo + 1 }
        }
    }
}

/// `U_m(T)`: elements reachable from `element` by at most `m` vertex-adjacency
/// expansions, sorted.
pub fn element_patch(bm: &BoundaryMesh, element: usize, m: usize) -> Vec<usize> {
    let ne = bm.num_elements();
    let mut v: Vec<usize> = element_patch_range(bm, element, m).elements(ne).collect();
    v.sort_unstable();
    v
}
