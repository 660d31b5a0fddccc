//! Finite element matrices and vectors: Q1 on the bulk grid, P1 on boundary
//! meshes, the trace constraint, loads and prolongations.
//!
//! Bulk and boundary matrices are returned on free degrees of freedom;
//! Dirichlet nodes are eliminated.

use crate::coefficients::Coefficient;
use crate::error::{Error, Result};
use crate::mesh::{BoundaryMesh, BulkMesh, Topology};
use crate::par::Execution;
use crate::sparse::CsrMatrix;

const Q1_MASS: [[f64; 4]; 4] = [[4.0, 2.0, 1.0, 2.0], [2.0, 4.0, 2.0, 1.0], [1.0, 2.0, 4.0, 2.0], [2.0, 1.0, 2.0, 4.0]];
const Q1_STIFF: [[f64; 4]; 4] =
    [[4.0, -1.0, -2.0, -1.0], [-1.0, 4.0, -1.0, -2.0], [-2.0, -1.0, 4.0, -1.0], [-1.0, -2.0, -1.0, 4.0]];
const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Degree-of-freedom bookkeeping between the bulk grid and a boundary mesh
/// restricted from it.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub bulk_free: Vec<Option<usize>>,
    pub bulk_free_nodes: Vec<usize>,
    /// Bulk node of every trace-mesh node.
    pub trace_nodes: Vec<usize>,
    pub trace_free: Vec<Option<usize>>,
    /// Bulk free index of every free trace dof.
    pub trace_to_bulk_free: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &BulkMesh, trace: &BoundaryMesh) -> Result<Self> {
        let mut bulk_free = vec![None; mesh.num_nodes()];
        let mut bulk_free_nodes = Vec::new();
        for (i, &d) in mesh.dirichlet_mask.iter().enumerate() {
            if !d {
                bulk_free[i] = Some(bulk_free_nodes.len());
                bulk_free_nodes.push(i);
            }
        }
        let trace_nodes = mesh.trace_map(trace)?;
        let trace_free = trace.free_index();
        let mut trace_to_bulk_free = Vec::new();
        for (i, tf) in trace_free.iter().enumerate() {
            if tf.is_some() {
                let b = bulk_free[trace_nodes[i]].ok_or_else(|| {
                    Error::MeshMismatch(format!("free trace node {i} sits on a Dirichlet bulk node"))
                })?;
                trace_to_bulk_free.push(b);
            } else if bulk_free[trace_nodes[i]].is_some() {
                return Err(Error::MeshMismatch(format!("Dirichlet trace node {i} sits on a free bulk node")));
            }
        }
        Ok(Self { bulk_free, bulk_free_nodes, trace_nodes, trace_free, trace_to_bulk_free })
    }

    pub fn num_bulk(&self) -> usize {
        self.bulk_free_nodes.len()
    }

    pub fn num_trace(&self) -> usize {
        self.trace_to_bulk_free.len()
    }

    /// Trace operator: bulk free dofs → free trace dofs.
    pub fn trace_matrix(&self) -> CsrMatrix {
        let t: Vec<_> = self.trace_to_bulk_free.iter().enumerate().map(|(k, &b)| (k, b, 1.0)).collect();
        CsrMatrix::from_triplets(self.num_trace(), self.num_bulk(), &t)
    }

    pub fn trace(&self, u: &[f64]) -> Vec<f64> {
        self.trace_to_bulk_free.iter().map(|&b| u[b]).collect()
    }

    pub fn restrict_bulk(&self, full: &[f64]) -> Vec<f64> {
        self.bulk_free_nodes.iter().map(|&i| full[i]).collect()
    }

    pub fn extend_bulk(&self, free: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.bulk_free.len()];
        for (k, &i) in self.bulk_free_nodes.iter().enumerate() {
            v[i] = free[k];
        }
        v
    }
}

/// Restricts a full-node boundary vector to free dofs.
pub fn restrict_boundary(bm: &BoundaryMesh, full: &[f64]) -> Vec<f64> {
    bm.free_nodes().iter().map(|&i| full[i]).collect()
}

pub fn extend_boundary(bm: &BoundaryMesh, free: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; bm.num_nodes()];
    for (k, &i) in bm.free_nodes().iter().enumerate() {
        v[i] = free[k];
    }
    v
}

fn bulk_element_triplets(mesh: &BulkMesh, exec: Execution, local: [[f64; 4]; 4]) -> Vec<(usize, usize, f64)> {
    let n = mesh.n;
    let rows = exec.map(n, |j| {
        let mut t = Vec::with_capacity(16 * n);
        for i in 0..n {
            let c = mesh.cells[j * n + i];
            for a in 0..4 {
                for b in 0..4 {
                    t.push((c[a], c[b], local[a][b]));
                }
            }
        }
        t
    });
    rows.concat()
}

fn scaled(m: [[f64; 4]; 4], s: f64) -> [[f64; 4]; 4] {
    m.map(|r| r.map(|v| v * s))
}

/// Q1 mass and `κ`-weighted stiffness on all nodes (no elimination).
pub fn assemble_bulk_full(mesh: &BulkMesh, kappa: f64, exec: Execution) -> (CsrMatrix, CsrMatrix) {
    let nn = mesh.num_nodes();
    let h = mesh.h();
    let m = bulk_element_triplets(mesh, exec, scaled(Q1_MASS, h * h / 36.0));
    let k = bulk_element_triplets(mesh, exec, scaled(Q1_STIFF, kappa / 6.0));
    (CsrMatrix::from_triplets(nn, nn, &m), CsrMatrix::from_triplets(nn, nn, &k))
}

/// `(M_Ω, K)` on free bulk dofs.
pub fn assemble_bulk_matrices(mesh: &BulkMesh, kappa: f64, exec: Execution) -> Result<(CsrMatrix, CsrMatrix)> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
    }
    let (m, k) = assemble_bulk_full(mesh, kappa, exec);
    let (map, nf) = bulk_free_map(mesh);
    Ok((m.select(&map, nf, &map, nf), k.select(&map, nf, &map, nf)))
}

fn bulk_free_map(mesh: &BulkMesh) -> (Vec<Option<usize>>, usize) {
    let mut k = 0;
    let map = mesh
        .dirichlet_mask
        .iter()
        .map(|&d| {
            if d {
                None
            } else {
                k += 1;
                Some(k - 1)
            }
        })
        .collect();
    (map, k)
}

/// Boundary P1 mass and coefficient-weighted stiffness on all nodes.
pub fn assemble_boundary_full(bm: &BoundaryMesh, c: &Coefficient, with_alpha_shift: bool) -> (CsrMatrix, CsrMatrix) {
    let nn = bm.num_nodes();
    let mut m = Vec::with_capacity(4 * bm.num_elements());
    let mut a = Vec::with_capacity(4 * bm.num_elements());
    let shift = if with_alpha_shift { c.alpha() } else { 0.0 };
    for (e, seg) in bm.segments.iter().enumerate() {
        let (s0, s1) = bm.element_bounds(e);
        let l = s1 - s0;
        let w = c.integral(s0, s1) / (l * l);
        for p in 0..2 {
            for q in 0..2 {
                let mass = if p == q { l / 3.0 } else { l / 6.0 };
                let stiff = if p == q { w } else { -w };
                m.push((seg[p], seg[q], mass));
                a.push((seg[p], seg[q], stiff + shift * mass));
            }
        }
    }
    (CsrMatrix::from_triplets(nn, nn, &m), CsrMatrix::from_triplets(nn, nn, &a))
}

/// `(M_Γ, A)` on free boundary dofs; with the shift, `A = 𝔞 + α(·,·)_Γ`.
pub fn assemble_boundary_matrices(bm: &BoundaryMesh, c: &Coefficient, with_alpha_shift: bool) -> (CsrMatrix, CsrMatrix) {
    let (m, a) = assemble_boundary_full(bm, c, with_alpha_shift);
    let map = bm.free_index();
    let nf = bm.num_free();
    (m.select(&map, nf, &map, nf), a.select(&map, nf, &map, nf))
}

/// Boundary mass on free dofs (coefficient independent).
pub fn boundary_mass(bm: &BoundaryMesh) -> CsrMatrix {
    assemble_boundary_matrices(bm, &Coefficient::constant(1.0).expect("positive"), false).0
}

/// Boundary mass and unweighted Laplacian on free dofs.
pub fn boundary_mass_laplacian(bm: &BoundaryMesh) -> (CsrMatrix, CsrMatrix) {
    assemble_boundary_matrices(bm, &Coefficient::constant(1.0).expect("positive"), false)
}

/// Linear interpolation from `coarse` to a nested `fine` mesh, all nodes.
pub fn prolong_boundary(coarse: &BoundaryMesh, fine: &BoundaryMesh) -> Result<CsrMatrix> {
    let r = coarse.refinement_ratio(fine)?;
    let nc = coarse.num_nodes();
    let mut t = Vec::with_capacity(2 * fine.num_nodes());
    for i in 0..fine.num_nodes() {
        let e = i / r;
        let o = i % r;
        if o == 0 {
            t.push((i, e % nc, 1.0));
        } else {
            let w = o as f64 / r as f64;
            let seg = coarse.segments[e];
            t.push((i, seg[0], 1.0 - w));
            t.push((i, seg[1], w));
        }
    }
    Ok(CsrMatrix::from_triplets(fine.num_nodes(), nc, &t))
}

/// [`prolong_boundary`] restricted to free dofs on both meshes.
pub fn prolong_boundary_free(coarse: &BoundaryMesh, fine: &BoundaryMesh) -> Result<CsrMatrix> {
    let p = prolong_boundary(coarse, fine)?;
    Ok(p.select(&fine.free_index(), fine.num_free(), &coarse.free_index(), coarse.num_free()))
}

/// Bilinear interpolation from a coarse bulk grid to a nested fine one, all
/// nodes.
pub fn prolong_bulk(coarse: &BulkMesh, fine: &BulkMesh) -> Result<CsrMatrix> {
    if fine.n % coarse.n != 0 {
        return Err(Error::NotNested(format!("bulk grids 1/{} and 1/{}", coarse.n, fine.n)));
    }
    let r = fine.n / coarse.n;
    let mut t = Vec::with_capacity(4 * fine.num_nodes());
    let split = |i: usize| -> [(usize, f64); 2] {
        let (i0, o) = (i / r, i % r);
        if o == 0 {
            [(i0, 1.0), (i0, 0.0)]
        } else {
            let w = o as f64 / r as f64;
            [(i0, 1.0 - w), (i0 + 1, w)]
        }
    };
    for jf in 0..=fine.n {
        for i_f in 0..=fine.n {
            let row = fine.node(i_f, jf);
            for (jc, wy) in split(jf) {
                for (ic, wx) in split(i_f) {
                    let w = wx * wy;
                    if w != 0.0 {
                        t.push((row, coarse.node(ic, jc), w));
                    }
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(fine.num_nodes(), coarse.num_nodes(), &t))
}

/// Constraint `b(q − v|_Γ, μ)` with `μ` in P1 on the trace mesh (free nodes),
/// `v` on bulk free dofs and `q` in P1 on `q_mesh`, a refinement of the
/// trace mesh. Columns are `[u-block | p-block]`.
pub fn assemble_constraint_general(
    mesh: &BulkMesh,
    trace: &BoundaryMesh,
    q_mesh: &BoundaryMesh,
) -> Result<(CsrMatrix, CsrMatrix)> {
    let dofs = DofMap::new(mesh, trace)?;
    let m_trace = boundary_mass(trace);
    let ub = m_trace.matmul(&dofs.trace_matrix()).scale(-1.0);
    let p = prolong_boundary_free(trace, q_mesh)?;
    let pb = p.transpose().matmul(&boundary_mass(q_mesh));
    Ok((ub, pb))
}

/// `B = [−M_Γ T | M_Γ]` for `Q_H = M_H = V_H|_Γ`.
pub fn assemble_constraint(mesh: &BulkMesh, bm_coarse: &BoundaryMesh) -> Result<CsrMatrix> {
    let (ub, pb) = assemble_constraint_general(mesh, bm_coarse, bm_coarse)?;
    Ok(hcat(&ub, &pb))
}

pub fn hcat(a: &CsrMatrix, b: &CsrMatrix) -> CsrMatrix {
    assert_eq!(a.nrows(), b.nrows());
    CsrMatrix::block(&[vec![Some(a), Some(b)]], &[a.nrows()], &[a.ncols(), b.ncols()])
}

/// Single-field baseline: `m(u,v) = (u,v)_Ω + (u,v)_Γ`,
/// `a(u,v) = κ(∇u,∇v)_Ω + (a_ε ∇_Γ u, ∇_Γ v)_Γ` on bulk free dofs.
pub fn assemble_single_field(
    mesh: &BulkMesh,
    trace: &BoundaryMesh,
    c: &Coefficient,
    kappa: f64,
    exec: Execution,
) -> Result<(CsrMatrix, CsrMatrix)> {
    let dofs = DofMap::new(mesh, trace)?;
    let (mo, k) = assemble_bulk_matrices(mesh, kappa, exec)?;
    let (mg, a) = assemble_boundary_matrices(trace, c, false);
    let t = dofs.trace_matrix();
    let tt = t.transpose();
    let m = mo.add_scaled(1.0, &tt.matmul(&mg).matmul(&t), 1.0);
    let s = k.add_scaled(1.0, &tt.matmul(&a).matmul(&t), 1.0);
    Ok((m, s))
}

/// Load vectors on all nodes (before elimination): `b_Ω` from `f(x, y, t)`
/// and `b_Γ` from `g(s, t)`, both with 2-point Gauss rules per direction.
pub fn assemble_loads(
    mesh: &BulkMesh,
    bm: &BoundaryMesh,
    f: &(dyn Fn(f64, f64, f64) -> f64 + Sync),
    g: &(dyn Fn(f64, f64) -> f64 + Sync),
    t: f64,
) -> (Vec<f64>, Vec<f64>) {
    let h = mesh.h();
    let mut bo = vec![0.0; mesh.num_nodes()];
    for c in &mesh.cells {
        let [x0, y0] = mesh.node_coords[c[0]];
        for &gy in &GAUSS2 {
            for &gx in &GAUSS2 {
                let fv = f(x0 + gx * h, y0 + gy * h, t) * h * h / 4.0;
                let phi = [(1.0 - gx) * (1.0 - gy), gx * (1.0 - gy), gx * gy, (1.0 - gx) * gy];
                for a in 0..4 {
                    bo[c[a]] += fv * phi[a];
                }
            }
        }
    }
    let mut bg = vec![0.0; bm.num_nodes()];
    for (e, seg) in bm.segments.iter().enumerate() {
        let (s0, s1) = bm.element_bounds(e);
        let l = s1 - s0;
        for &gq in &GAUSS2 {
            let gv = g(s0 + gq * l, t) * l / 2.0;
            bg[seg[0]] += gv * (1.0 - gq);
            bg[seg[1]] += gv * gq;
        }
    }
    (bo, bg)
}

/// Nodal interpolation of `u0(x, y)` onto all bulk nodes.
pub fn interpolate_bulk(mesh: &BulkMesh, u0: &dyn Fn(f64, f64) -> f64) -> Vec<f64> {
    mesh.node_coords.iter().map(|&[x, y]| u0(x, y)).collect()
}

/// Whether a boundary mesh is closed.
pub fn is_closed(bm: &BoundaryMesh) -> bool {
    bm.topology == Topology::ClosedLoop
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{make_random_coefficient, make_smooth_coefficient};
    use crate::mesh::{build_bulk_mesh, build_bulk_mesh_with, refine_boundary, restrict_to_boundary, BoundarySelector};
    use crate::sparse::dot;
    use faer::Mat;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn ones(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    // Element integrals of products of bilinear shape functions by
    // tensor-product Simpson, exact for biquadratics.
    fn q1_oracle() -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
        let pts = [(0.0, 1.0 / 6.0), (0.5, 4.0 / 6.0), (1.0, 1.0 / 6.0)];
        let phi = |a: usize, x: f64, y: f64| match a {
            0 => (1.0 - x) * (1.0 - y),
            1 => x * (1.0 - y),
            2 => x * y,
            _ => (1.0 - x) * y,
        };
        let grad = |a: usize, x: f64, y: f64| match a {
            0 => [-(1.0 - y), -(1.0 - x)],
            1 => [1.0 - y, -x],
            2 => [y, x],
            _ => [-y, 1.0 - x],
        };
        let mut m = [[0.0; 4]; 4];
        let mut k = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                for &(x, wx) in &pts {
                    for &(y, wy) in &pts {
                        m[a][b] += wx * wy * phi(a, x, y) * phi(b, x, y);
                        let (ga, gb) = (grad(a, x, y), grad(b, x, y));
                        k[a][b] += wx * wy * (ga[0] * gb[0] + ga[1] * gb[1]);
                    }
                }
            }
        }
        (m, k)
    }

    #[test]
    fn element_matrices_match_oracle() {
        let (m, k) = q1_oracle();
        for a in 0..4 {
            for b in 0..4 {
                assert!((m[a][b] - Q1_MASS[a][b] / 36.0).abs() < 1e-15);
                assert!((k[a][b] - Q1_STIFF[a][b] / 6.0).abs() < 1e-15);
            }
        }
        let mesh = build_bulk_mesh(1).unwrap();
        let (_, k) = assemble_bulk_full(&mesh, 1.0, Execution::Sequential);
        for i in 0..4 {
            assert!((k.get(i, i) - 2.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bulk_partition_of_unity_and_kernel() {
        for n in [1, 3, 8] {
            let mesh = build_bulk_mesh(n).unwrap();
            let (m, k) = assemble_bulk_matrices(&mesh, 0.1, Execution::default()).unwrap();
            let total: f64 = m.values().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            let r = k.mul_vec(&ones(k.ncols()));
            assert!(r.iter().all(|v| v.abs() < 1e-12));
            assert!(m.symmetry_defect() <= 1e-14 * m.max_abs());
            assert!(k.symmetry_defect() <= 1e-14 * k.max_abs());
        }
    }

    #[test]
    fn parallel_and_sequential_assembly_identical() {
        let mesh = build_bulk_mesh(16).unwrap();
        let a = assemble_bulk_full(&mesh, 0.3, Execution::Sequential);
        let b = assemble_bulk_full(&mesh, 0.3, Execution::Parallel);
        assert_eq!(a, b);
    }

    #[test]
    fn dirichlet_elimination_sizes() {
        let mesh = build_bulk_mesh_with(4, BoundarySelector::BottomEdge).unwrap();
        let (m, _) = assemble_bulk_matrices(&mesh, 1.0, Execution::Sequential).unwrap();
        assert_eq!(m.nrows(), 25 - 13);
        assert!(assemble_bulk_matrices(&mesh, 0.0, Execution::Sequential).is_err());
    }

    #[test]
    fn spd_probes() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let mesh = build_bulk_mesh_with(6, BoundarySelector::BottomEdge).unwrap();
        let (mo, k) = assemble_bulk_matrices(&mesh, 1.0, Execution::Sequential).unwrap();
        let c = make_random_coefficient(1.0 / 16.0, 3, 1.0).unwrap();
        let bm = BoundaryMesh::bottom_edge(32, [true, true]).unwrap();
        let (mg, a) = assemble_boundary_matrices(&bm, &c, false);
        for _ in 0..100 {
            for mat in [&mo, &mg, &k, &a] {
                let x: Vec<f64> = (0..mat.nrows()).map(|_| rng.random::<f64>() - 0.5).collect();
                assert!(dot(&x, &mat.mul_vec(&x)) > 0.0);
            }
        }
    }

    #[test]
    fn boundary_stencil_and_length() {
        let c = Coefficient::constant(1.0).unwrap();
        let bm = BoundaryMesh::closed_loop(5).unwrap();
        let (m, a) = assemble_boundary_matrices(&bm, &c, false);
        let l = 0.2;
        assert!((a.get(3, 2) + 1.0 / l).abs() < 1e-12);
        assert!((a.get(3, 3) - 2.0 / l).abs() < 1e-12);
        assert!((a.get(3, 4) + 1.0 / l).abs() < 1e-12);
        // cyclic closure
        assert!((a.get(0, 19) + 1.0 / l).abs() < 1e-12);
        let total: f64 = m.values().iter().sum();
        assert!((total - 4.0).abs() < 1e-12);
        assert!(a.mul_vec(&ones(20)).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn alpha_shift_is_entrywise() {
        let c = make_smooth_coefficient(1.0 / 8.0).unwrap();
        let bm = BoundaryMesh::closed_loop(16).unwrap();
        let (m, a) = assemble_boundary_matrices(&bm, &c, false);
        let (_, s) = assemble_boundary_matrices(&bm, &c, true);
        let expect = a.add_scaled(1.0, &m, c.alpha());
        assert!(s.max_abs_diff(&expect) <= 1e-14 * s.max_abs());
    }

    #[test]
    fn constraint_entries_and_consistency() {
        let mesh = build_bulk_mesh(4).unwrap();
        let bm = restrict_to_boundary(&mesh, BoundarySelector::FullBoundary);
        let b = assemble_constraint(&mesh, &bm).unwrap();
        let nb = mesh.num_nodes();
        let l = 0.25;
        // p-block columns start after the bulk dofs
        assert!((b.get(0, nb) - 2.0 * l / 3.0).abs() < 1e-15, "two segments meet at a loop node");
        assert!((b.get(0, nb + 1) - l / 6.0).abs() < 1e-15);
        let dofs = DofMap::new(&mesh, &bm).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let v: Vec<f64> = (0..nb).map(|_| rng.random::<f64>()).collect();
        let mut x = v.clone();
        x.extend(dofs.trace(&v));
        assert!(b.mul_vec(&x).iter().all(|r| r.abs() < 1e-13));
    }

    #[test]
    fn single_segment_mass_oracle() {
        // ∫_0^ℓ (1 − s/ℓ)² = ℓ/3, ∫_0^ℓ (1 − s/ℓ)(s/ℓ) = ℓ/6 by Simpson.
        let l = 0.125f64;
        let f = |g: &dyn Fn(f64) -> f64| l / 6.0 * (g(0.0) + 4.0 * g(l / 2.0) + g(l));
        let d = f(&|s| (1.0 - s / l).powi(2));
        let o = f(&|s| (1.0 - s / l) * (s / l));
        let bm = BoundaryMesh::closed_loop(8).unwrap();
        let m = boundary_mass(&bm);
        assert!((m.get(5, 5) - 2.0 * d).abs() < 1e-15);
        assert!((m.get(5, 6) - o).abs() < 1e-15);
    }

    fn dense_rank(m: &Mat<f64>) -> usize {
        let s = m.singular_values().unwrap();
        let tol = s[0] * 1e-12 * m.nrows().max(m.ncols()) as f64;
        s.iter().filter(|&&v| v > tol).count()
    }

    #[test]
    fn constraint_full_row_rank() {
        for n in [2, 4, 8] {
            for sel in [BoundarySelector::FullBoundary, BoundarySelector::BottomEdge] {
                let mesh = build_bulk_mesh_with(n, sel).unwrap();
                let bm = restrict_to_boundary(&mesh, sel);
                let b = assemble_constraint(&mesh, &bm).unwrap();
                assert_eq!(dense_rank(&b.to_dense()), b.nrows());
            }
        }
    }

    #[test]
    fn loads() {
        let mesh = build_bulk_mesh(5).unwrap();
        let bm = restrict_to_boundary(&mesh, BoundarySelector::FullBoundary);
        let (m, _) = assemble_bulk_full(&mesh, 1.0, Execution::Sequential);
        let (bo, bg) = assemble_loads(&mesh, &bm, &|_, _, _| 1.0, &|_, t| t, 0.0);
        let m1 = m.mul_vec(&ones(m.nrows()));
        assert!(bo.iter().zip(&m1).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(bg.iter().all(|&v| v == 0.0));
        let (bo, bg) = assemble_loads(&mesh, &bm, &|_, _, _| 0.0, &|_, _| 0.0, 0.3);
        assert!(bo.iter().chain(&bg).all(|&v| v == 0.0));
        let (_, bg) = assemble_loads(&mesh, &bm, &|_, _, _| 0.0, &|_, t| t, 0.5);
        let mg = boundary_mass(&bm);
        let expect = mg.mul_vec(&vec![0.5; bm.num_nodes()]);
        assert!(bg.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn prolongation() {
        let c = BoundaryMesh::closed_loop(2).unwrap();
        let p0 = prolong_boundary(&c, &refine_boundary(&c, 0)).unwrap();
        assert_eq!(p0, CsrMatrix::identity(8));
        let f = refine_boundary(&c, 1);
        let p = prolong_boundary(&c, &f).unwrap();
        let mut hat = vec![0.0; 8];
        hat[3] = 1.0;
        let v = p.mul_vec(&hat);
        let mut expect = vec![0.0; 16];
        expect[5] = 0.5;
        expect[6] = 1.0;
        expect[7] = 0.5;
        assert_eq!(v, expect);
        let f3 = refine_boundary(&c, 3);
        let p3 = prolong_boundary(&c, &f3).unwrap();
        assert!(p3.mul_vec(&ones(8)).iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let wrapped = p.mul_vec(&{
            let mut h = vec![0.0; 8];
            h[0] = 1.0;
            h
        });
        assert_eq!((wrapped[15], wrapped[0], wrapped[1]), (0.5, 1.0, 0.5));
        assert!(prolong_boundary(&f, &c).is_err());
    }

    #[test]
    fn bulk_prolongation_reproduces_bilinears() {
        let c = build_bulk_mesh(3).unwrap();
        let f = build_bulk_mesh(12).unwrap();
        let p = prolong_bulk(&c, &f).unwrap();
        let g = |x: f64, y: f64| 1.0 + 2.0 * x - y + 3.0 * x * y;
        let v = p.mul_vec(&interpolate_bulk(&c, &g));
        let w = interpolate_bulk(&f, &g);
        assert!(v.iter().zip(&w).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn galerkin_consistency_random_field() {
        // random field constant on cells of the coarse mesh resolution is resolved by both meshes
        let c = make_random_coefficient(1.0 / 8.0, 9, 1.0).unwrap();
        let coarse = BoundaryMesh::bottom_edge(8, [true, true]).unwrap();
        let fine = refine_boundary(&coarse, 3);
        let (_, ac) = assemble_boundary_matrices(&coarse, &c, false);
        let (_, af) = assemble_boundary_matrices(&fine, &c, false);
        let p = prolong_boundary_free(&coarse, &fine).unwrap();
        let g = p.transpose().matmul(&af).matmul(&p);
        assert!(g.max_abs_diff(&ac) <= 1e-12 * ac.max_abs());
    }

    #[test]
    fn galerkin_consistency_smooth_field() {
        let c = make_smooth_coefficient(1.0 / 16.0).unwrap();
        let coarse = BoundaryMesh::closed_loop(4).unwrap();
        let fine = refine_boundary(&coarse, 4);
        let (_, ac) = assemble_boundary_matrices(&coarse, &c, false);
        let (_, af) = assemble_boundary_matrices(&fine, &c, false);
        let p = prolong_boundary_free(&coarse, &fine).unwrap();
        let g = p.transpose().matmul(&af).matmul(&p);
        assert!(g.max_abs_diff(&ac) <= 1e-12 * ac.max_abs());
    }

    proptest! {
        #[test]
        fn prolonged_constant_is_constant(n in 1usize..6, levels in 0u32..4, closed in any::<bool>()) {
            let c = if closed { BoundaryMesh::closed_loop(n).unwrap() } else { BoundaryMesh::bottom_edge(n, [false, false]).unwrap() };
            let f = refine_boundary(&c, levels);
            let p = prolong_boundary(&c, &f).unwrap();
            for v in p.mul_vec(&ones(c.num_nodes())) {
                prop_assert!((v - 1.0).abs() < 1e-15);
            }
        }
    }
}
