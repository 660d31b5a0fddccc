//! Localized orthogonal decomposition on boundary meshes: quasi-interpolation,
//! the L² projection, patch-local corrector problems and the resulting
//! Petrov-Galerkin multiscale space.
//!
//! All vectors and matrices live on free dofs (interval endpoints tied to
//! the Dirichlet boundary are eliminated on both meshes).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_boundary_full, boundary_mass, boundary_mass_laplacian, prolong_boundary, prolong_boundary_free};
use crate::coefficients::Coefficient;
use crate::error::{invalid, Error, Result};
use crate::mesh::{element_patch, element_patch_range, BoundaryMesh, Topology};
use crate::par::Execution;
use crate::sparse::{energy_norm, CsrMatrix, Factorization};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterpolationKind {
    Clement,
    Nodal,
}

/// Bilinear form used in the corrector problems: `𝔞` or `ã = 𝔞 + α(·,·)_Γ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectorForm {
    Plain,
    Shifted,
}

impl CorrectorForm {
    pub fn shifted(self) -> bool {
        self == CorrectorForm::Shifted
    }
}

/// Localization layers; `GLOBAL` saturates to the whole mesh.
pub const GLOBAL: usize = usize::MAX;

#[derive(Clone, Debug)]
pub struct InterpolationOperator {
    pub kind: InterpolationKind,
    /// Coarse free dofs × fine free dofs.
    pub matrix: CsrMatrix,
}

impl InterpolationOperator {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(v)
    }
}

fn fine_node_of_coarse(coarse: &BoundaryMesh, fine: &BoundaryMesh, z: usize) -> usize {
    let r = fine.den / coarse.den;
    (coarse.ticks[z] * r - fine.ticks[0]) % fine.num_nodes()
}

pub fn build_interpolation(fine: &BoundaryMesh, coarse: &BoundaryMesh, kind: InterpolationKind) -> Result<InterpolationOperator> {
    coarse.refinement_ratio(fine)?;
    let cmap = coarse.free_index();
    let fmap = fine.free_index();
    let full = match kind {
        InterpolationKind::Clement => {
            let p = prolong_boundary(coarse, fine)?;
            let (m, _) = assemble_boundary_full(fine, &Coefficient::constant(1.0)?, false);
            let w = p.transpose().matmul(&m);
            // (1, φ_z)_Γ over the full hat, including Dirichlet neighbours
            let denom: Vec<f64> = (0..w.nrows()).map(|z| w.row(z).map(|(_, v)| v).sum()).collect();
            let t: Vec<_> = w.triplets().into_iter().map(|(z, j, v)| (z, j, v / denom[z])).collect();
            CsrMatrix::from_triplets(w.nrows(), w.ncols(), &t)
        }
        InterpolationKind::Nodal => {
            let t: Vec<_> =
                (0..coarse.num_nodes()).map(|z| (z, fine_node_of_coarse(coarse, fine, z), 1.0)).collect();
            CsrMatrix::from_triplets(coarse.num_nodes(), fine.num_nodes(), &t)
        }
    };
    let matrix = full.select(&cmap, coarse.num_free(), &fmap, fine.num_free());
    Ok(InterpolationOperator { kind, matrix })
}

/// `Π_H = M_H⁻¹ Pᵀ M_h`.
pub struct L2Projection {
    /// `Pᵀ M_h` on free dofs.
    pub weighted: CsrMatrix,
    pub coarse_mass: CsrMatrix,
    factor: Factorization,
}

impl L2Projection {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.factor.solve(&self.weighted.mul_vec(v))
    }
}

pub fn build_l2_projection(fine: &BoundaryMesh, coarse: &BoundaryMesh) -> Result<L2Projection> {
    let p = prolong_boundary_free(coarse, fine)?;
    let weighted = p.transpose().matmul(&boundary_mass(fine));
    let coarse_mass = boundary_mass(coarse);
    let factor = Factorization::cholesky(&coarse_mass, "coarse boundary mass")?;
    Ok(L2Projection { weighted, coarse_mass, factor })
}

/// Projection onto the coarse space whose kernel is the fine-scale space of
/// the chosen interpolation: `Π_H` for Clément, nodal sampling for nodal.
pub enum CoarseProjection {
    L2(L2Projection),
    Nodal(InterpolationOperator),
}

impl CoarseProjection {
    pub fn new(fine: &BoundaryMesh, coarse: &BoundaryMesh, kind: InterpolationKind) -> Result<Self> {
        Ok(match kind {
            InterpolationKind::Clement => CoarseProjection::L2(build_l2_projection(fine, coarse)?),
            InterpolationKind::Nodal => CoarseProjection::Nodal(build_interpolation(fine, coarse, kind)?),
        })
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            CoarseProjection::L2(p) => p.apply(v),
            CoarseProjection::Nodal(i) => i.apply(v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectorConfig {
    pub kind: InterpolationKind,
    pub form: CorrectorForm,
    /// Patch layers; [`GLOBAL`] for the unlocalized operator.
    pub m: usize,
}

#[derive(Clone, Debug)]
pub struct CorrectorBasis {
    /// Per coarse free dof `z`: sparse `G_m λ_z` over fine free dofs.
    pub correctors: Vec<Vec<(usize, f64)>>,
    /// Per coarse free dof: coarse elements of `∪_{T ∋ z} U_m(T)`, sorted.
    pub supports: Vec<Vec<usize>>,
    pub config: CorrectorConfig,
    pub num_fine: usize,
    pub num_coarse: usize,
}

impl CorrectorBasis {
    pub fn dense(&self, z: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_fine];
        for &(j, x) in &self.correctors[z] {
            v[j] = x;
        }
        v
    }

    /// Fine free dofs × coarse free dofs.
    pub fn matrix(&self) -> CsrMatrix {
        let mut t = Vec::new();
        for (z, c) in self.correctors.iter().enumerate() {
            t.extend(c.iter().map(|&(j, v)| (j, z, v)));
        }
        CsrMatrix::from_triplets(self.num_fine, self.num_coarse, &t)
    }
}

struct CorrectorContext<'a> {
    fine: &'a BoundaryMesh,
    coarse: &'a BoundaryMesh,
    r: usize,
    /// Stiffness of the corrector form on all fine nodes.
    a_full: CsrMatrix,
    /// `Pᵀ M_h` on all nodes.
    constraint_rows: CsrMatrix,
    /// `∫_t a / h²` per fine element.
    weights: Vec<f64>,
    shift: f64,
    fine_free: Vec<Option<usize>>,
    coarse_free: Vec<Option<usize>>,
    config: CorrectorConfig,
}

type ElementCorrectors = Vec<(usize, Vec<(usize, f64)>)>;

impl CorrectorContext<'_> {
    /// Local unknowns (fine node indices) and constraint coarse nodes for
    /// coarse element `e`.
    fn patch(&self, e: usize) -> (Vec<usize>, Vec<usize>) {
        let nf = self.fine.num_nodes();
        let nc = self.coarse.num_nodes();
        let r = self.r;
        let closed = self.coarse.topology == Topology::ClosedLoop;
        if self.config.kind == InterpolationKind::Nodal {
            let unknowns = (1..r).map(|o| (e * r + o) % nf).collect();
            return (unknowns, Vec::new());
        }
        let range = element_patch_range(self.coarse, e, self.config.m);
        let ne = self.coarse.num_elements();
        let (unknowns, coarse_nodes): (Vec<usize>, Vec<usize>) = if closed && range.count == ne {
            ((0..nf).collect(), (0..nc).collect())
        } else {
            let first = range.start * r;
            (
                (1..range.count * r).map(|k| (first + k) % nf).collect(),
                (0..=range.count).map(|k| (range.start + k) % nc).collect(),
            )
        };
        let unknowns = unknowns.into_iter().filter(|&j| self.fine_free[j].is_some()).collect();
        let coarse_nodes = coarse_nodes.into_iter().filter(|&z| self.coarse_free[z].is_some()).collect();
        (unknowns, coarse_nodes)
    }

    fn solve_element(&self, e: usize) -> Result<ElementCorrectors> {
        let nf = self.fine.num_nodes();
        let r = self.r;
        let h = self.fine.h();
        let seg = self.coarse.segments[e];
        let hats: Vec<(usize, usize)> =
            (0..2).filter_map(|k| self.coarse_free[seg[k]].map(|zf| (k, zf))).collect();
        let (unknowns, coarse_nodes) = self.patch(e);
        if hats.is_empty() || unknowns.is_empty() {
            return Ok(hats.into_iter().map(|(_, zf)| (zf, Vec::new())).collect());
        }
        let mut local = vec![usize::MAX; nf];
        for (k, &j) in unknowns.iter().enumerate() {
            local[j] = k;
        }
        let nu = unknowns.len();

        // element right-hand sides a_T(λ_z, φ_j)
        let mut rhs = vec![vec![0.0; nu]; hats.len()];
        for k in 0..r {
            let t = e * r + k;
            let nodes = [t % nf, (t + 1) % nf];
            let w = self.weights[t];
            let ke = [
                [w + self.shift * h / 3.0, -w + self.shift * h / 6.0],
                [-w + self.shift * h / 6.0, w + self.shift * h / 3.0],
            ];
            for (hi, &(side, _)) in hats.iter().enumerate() {
                let lam = |o: usize| {
                    let x = o as f64 / r as f64;
                    if side == 0 {
                        1.0 - x
                    } else {
                        x
                    }
                };
                let vals = [lam(k), lam(k + 1)];
                for p in 0..2 {
                    let li = local[nodes[p]];
                    if li != usize::MAX {
                        rhs[hi][li] += ke[p][0] * vals[0] + ke[p][1] * vals[1];
                    }
                }
            }
        }

        let mut trip = Vec::new();
        for (k, &j) in unknowns.iter().enumerate() {
            for (c, v) in self.a_full.row(j) {
                if local[c] != usize::MAX {
                    trip.push((k, local[c], v));
                }
            }
        }
        let rows: Vec<Vec<(usize, f64)>> = coarse_nodes
            .iter()
            .map(|&z| {
                self.constraint_rows
                    .row(z)
                    .filter(|&(c, _)| local[c] != usize::MAX)
                    .map(|(c, v)| (local[c], v))
                    .collect()
            })
            .collect();
        let selected = independent_rows(&rows, nu);
        if selected.len() >= nu {
            return Ok(hats.into_iter().map(|(_, zf)| (zf, Vec::new())).collect());
        }
        for (q, &ri) in selected.iter().enumerate() {
            for &(c, v) in &rows[ri] {
                trip.push((nu + q, c, v));
                trip.push((c, nu + q, v));
            }
        }
        let n = nu + selected.len();
        let sys = CsrMatrix::from_triplets(n, n, &trip);
        let fail = |reason: String| Error::SingularPatch { element: e, reason };
        let lu = Factorization::lu(&sys, "corrector patch").map_err(|err| fail(err.to_string()))?;
        let mut out = Vec::with_capacity(hats.len());
        for (hi, &(_, zf)) in hats.iter().enumerate() {
            let mut b = rhs[hi].clone();
            b.resize(n, 0.0);
            let (x, res) = lu.solve_refined(&sys, &b, 1e-12);
            if !res.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(fail(format!("non-finite solution (residual {res:e})")));
            }
            let w: Vec<(usize, f64)> = unknowns
                .iter()
                .zip(&x)
                .filter(|(_, v)| **v != 0.0)
                .map(|(&j, &v)| (self.fine_free[j].expect("unknowns are free"), v))
                .collect();
            out.push((zf, w));
        }
        Ok(out)
    }
}

/// Greedy selection of linearly independent sparse rows (pivoted Cholesky on
/// the Gram matrix, rows visited in order).
fn independent_rows(rows: &[Vec<(usize, f64)>], ncols: usize) -> Vec<usize> {
    let k = rows.len();
    let mut dense = vec![0.0; ncols];
    let mut gram = vec![vec![0.0; k]; k];
    for i in 0..k {
        for &(c, v) in &rows[i] {
            dense[c] = v;
        }
        for j in 0..=i {
            let g: f64 = rows[j].iter().map(|&(c, v)| v * dense[c]).sum();
            gram[i][j] = g;
            gram[j][i] = g;
        }
        for &(c, _) in &rows[i] {
            dense[c] = 0.0;
        }
    }
    let mut selected: Vec<usize> = Vec::new();
    let mut l: Vec<Vec<f64>> = Vec::new();
    for i in 0..k {
        let mut li = Vec::with_capacity(selected.len() + 1);
        for (a, &sa) in selected.iter().enumerate() {
            let s: f64 = (0..a).map(|b| li[b] * l[a][b]).sum();
            li.push((gram[i][sa] - s) / l[a][a]);
        }
        let d = gram[i][i] - li.iter().map(|x| x * x).sum::<f64>();
        if d > 1e-10 * gram[i][i] && gram[i][i] > 0.0 {
            li.push(d.sqrt());
            l.push(li);
            selected.push(i);
        }
    }
    selected
}

pub fn compute_correctors(
    fine: &BoundaryMesh,
    coarse: &BoundaryMesh,
    c: &Coefficient,
    config: CorrectorConfig,
    exec: Execution,
) -> Result<CorrectorBasis> {
    let r = coarse.refinement_ratio(fine)?;
    let (_, a_full) = assemble_boundary_full(fine, c, config.form.shifted());
    let (m_full, _) = assemble_boundary_full(fine, &Coefficient::constant(1.0)?, false);
    let constraint_rows = prolong_boundary(coarse, fine)?.transpose().matmul(&m_full);
    let h = fine.h();
    let weights = (0..fine.num_elements())
        .map(|t| {
            let (a, b) = fine.element_bounds(t);
            c.integral(a, b) / (h * h)
        })
        .collect();
    let ctx = CorrectorContext {
        fine,
        coarse,
        r,
        a_full,
        constraint_rows,
        weights,
        shift: if config.form.shifted() { c.alpha() } else { 0.0 },
        fine_free: fine.free_index(),
        coarse_free: coarse.free_index(),
        config,
    };
    let per_element = exec.try_map(coarse.num_elements(), |e| ctx.solve_element(e))?;
    let nc = coarse.num_free();
    let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); nc];
    for list in per_element {
        for (z, w) in list {
            for (j, v) in w {
                *acc[z].entry(j).or_insert(0.0) += v;
            }
        }
    }
    let correctors = acc.into_iter().map(|m| m.into_iter().collect()).collect();
    let layers = if config.kind == InterpolationKind::Nodal { 0 } else { config.m };
    let mut supports = vec![Vec::new(); nc];
    for e in 0..coarse.num_elements() {
        let patch = element_patch(coarse, e, layers);
        for &v in &coarse.segments[e] {
            if let Some(z) = ctx.coarse_free[v] {
                supports[z].extend(patch.iter().copied());
            }
        }
    }
    for s in &mut supports {
        s.sort_unstable();
        s.dedup();
    }
    Ok(CorrectorBasis { correctors, supports, config, num_fine: fine.num_free(), num_coarse: nc })
}

/// Multiscale space `(id − G_m) Q_H` represented on the fine mesh.
pub struct LodSpace {
    /// Fine free dofs × coarse free dofs; column `z` is `λ_z − G_m λ_z`.
    pub basis: CsrMatrix,
    /// Coarse-to-fine linear interpolation on free dofs.
    pub prolongation: CsrMatrix,
    pub projection: CoarseProjection,
    pub config: Option<CorrectorConfig>,
}

impl LodSpace {
    /// Corrector-free space: the prolonged coarse P1 space.
    pub fn plain(fine: &BoundaryMesh, coarse: &BoundaryMesh) -> Result<Self> {
        let prolongation = prolong_boundary_free(coarse, fine)?;
        Ok(Self {
            basis: prolongation.clone(),
            prolongation,
            projection: CoarseProjection::new(fine, coarse, InterpolationKind::Clement)?,
            config: None,
        })
    }

    pub fn num_coarse(&self) -> usize {
        self.basis.ncols()
    }

    pub fn num_fine(&self) -> usize {
        self.basis.nrows()
    }

    /// Fine-mesh representation of coarse coefficients.
    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        self.basis.mul_vec(x)
    }
}

pub fn lod_basis_matrix(cb: &CorrectorBasis, fine: &BoundaryMesh, coarse: &BoundaryMesh) -> Result<LodSpace> {
    let prolongation = prolong_boundary_free(coarse, fine)?;
    if (prolongation.nrows(), prolongation.ncols()) != (cb.num_fine, cb.num_coarse) {
        return Err(Error::MeshMismatch("corrector basis was computed on different meshes".into()));
    }
    let basis = prolongation.add_scaled(1.0, &cb.matrix(), -1.0);
    Ok(LodSpace {
        basis,
        prolongation,
        projection: CoarseProjection::new(fine, coarse, cb.config.kind)?,
        config: Some(cb.config),
    })
}

/// Petrov-Galerkin boundary matrices `(Pᵀ M_h B, Pᵀ A_h B)`.
pub fn lod_boundary_matrices(ls: &LodSpace, fine_mass: &CsrMatrix, fine_stiff: &CsrMatrix) -> Result<(CsrMatrix, CsrMatrix)> {
    if fine_mass.nrows() != ls.num_fine() || fine_stiff.nrows() != ls.num_fine() {
        return Err(invalid("fine matrices do not match the LOD space"));
    }
    let pt = ls.prolongation.transpose();
    Ok((pt.matmul(&fine_mass.matmul(&ls.basis)), pt.matmul(&fine_stiff.matmul(&ls.basis))))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub m: usize,
    pub relative_energy_error: f64,
}

/// `max_z ‖(G − G_m)λ_z‖_{H¹} / ‖λ_z‖_{H¹}` for `m = 0..=max_m`, Clément kind.
pub fn corrector_decay_profile(
    fine: &BoundaryMesh,
    coarse: &BoundaryMesh,
    c: &Coefficient,
    form: CorrectorForm,
    max_m: usize,
    exec: Execution,
) -> Result<Vec<DecayRow>> {
    let cfg = |m| CorrectorConfig { kind: InterpolationKind::Clement, form, m };
    let global = compute_correctors(fine, coarse, c, cfg(GLOBAL), exec)?;
    let (mass, lap) = boundary_mass_laplacian(fine);
    let h1 = mass.add_scaled(1.0, &lap, 1.0);
    let p = prolong_boundary_free(coarse, fine)?;
    let nc = coarse.num_free();
    let hat_norms: Vec<f64> = (0..nc)
        .map(|z| {
            let mut e = vec![0.0; nc];
            e[z] = 1.0;
            energy_norm(&h1, &p.mul_vec(&e))
        })
        .collect();
    let mut rows = Vec::with_capacity(max_m + 1);
    for m in 0..=max_m {
        let local = compute_correctors(fine, coarse, c, cfg(m), exec)?;
        let worst = (0..nc)
            .map(|z| {
                let mut d = global.dense(z);
                for &(j, v) in &local.correctors[z] {
                    d[j] -= v;
                }
                energy_norm(&h1, &d) / hat_norms[z]
            })
            .fold(0.0, f64::max);
        rows.push(DecayRow { m, relative_energy_error: worst });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_boundary_matrices;
    use crate::coefficients::{harmonic_element_averages, make_random_coefficient, make_smooth_coefficient};
    use crate::mesh::refine_boundary;
    use crate::sparse::{dot, norm_inf};
    use rand::{Rng, SeedableRng};

    fn interval(n: usize) -> BoundaryMesh {
        BoundaryMesh::bottom_edge(n, [true, true]).unwrap()
    }

    fn random_vec(rng: &mut rand::rngs::StdRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    #[test]
    fn interpolation_preserves_constants() {
        for coarse in [BoundaryMesh::closed_loop(2).unwrap(), BoundaryMesh::bottom_edge(4, [false, false]).unwrap()] {
            let fine = refine_boundary(&coarse, 3);
            for kind in [InterpolationKind::Clement, InterpolationKind::Nodal] {
                let i = build_interpolation(&fine, &coarse, kind).unwrap();
                let v = i.apply(&vec![1.0; fine.num_free()]);
                assert!(v.iter().all(|x| (x - 1.0).abs() < 1e-14), "{kind:?}");
            }
        }
    }

    #[test]
    fn nodal_samples_coarse_nodes() {
        let coarse = interval(4);
        let fine = refine_boundary(&coarse, 2);
        let i = build_interpolation(&fine, &coarse, InterpolationKind::Nodal).unwrap();
        let v: Vec<f64> = (0..fine.num_free()).map(|k| k as f64).collect();
        // fine free index of coarse node z (z = 1..3) is 4z − 1
        assert_eq!(i.apply(&v), vec![3.0, 7.0, 11.0]);
        assert!(build_interpolation(&coarse, &fine, InterpolationKind::Nodal).is_err());
    }

    #[test]
    fn clement_factors_through_l2_projection() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(2);
        for coarse in [BoundaryMesh::closed_loop(2).unwrap(), interval(8)] {
            let fine = refine_boundary(&coarse, 2);
            let i = build_interpolation(&fine, &coarse, InterpolationKind::Clement).unwrap();
            let pi = build_l2_projection(&fine, &coarse).unwrap();
            let p = prolong_boundary_free(&coarse, &fine).unwrap();
            for _ in 0..50 {
                let v = random_vec(&mut rng, fine.num_free());
                let a = i.apply(&v);
                let b = i.apply(&p.mul_vec(&pi.apply(&v)));
                assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
            }
            for _ in 0..10 {
                let q = random_vec(&mut rng, coarse.num_free());
                let back = pi.apply(&p.mul_vec(&q));
                assert!(back.iter().zip(&q).all(|(x, y)| (x - y).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn kernels_coincide() {
        // Project random vectors onto ker Π_H and check I_H annihilates them
        // and they are L²-orthogonal to coarse functions.
        let mut rng = rand::rngs::StdRng::seed_from_u64(4);
        let coarse = interval(8);
        let fine = refine_boundary(&coarse, 3);
        let i = build_interpolation(&fine, &coarse, InterpolationKind::Clement).unwrap();
        let pi = build_l2_projection(&fine, &coarse).unwrap();
        let p = prolong_boundary_free(&coarse, &fine).unwrap();
        let mf = boundary_mass(&fine);
        for _ in 0..100 {
            let v = random_vec(&mut rng, fine.num_free());
            let pv = p.mul_vec(&pi.apply(&v));
            let w: Vec<f64> = v.iter().zip(&pv).map(|(a, b)| a - b).collect();
            assert!(norm_inf(&pi.apply(&w)) < 1e-10);
            assert!(norm_inf(&i.apply(&w)) < 1e-10);
            let q = p.mul_vec(&random_vec(&mut rng, coarse.num_free()));
            assert!(dot(&q, &mf.mul_vec(&w)).abs() < 1e-12);
        }
    }

    fn cfg(kind: InterpolationKind, form: CorrectorForm, m: usize) -> CorrectorConfig {
        CorrectorConfig { kind, form, m }
    }

    #[test]
    fn correctors_lie_in_the_kernel() {
        let c = make_random_coefficient(1.0 / 32.0, 5, 1.0).unwrap();
        let coarse = interval(8);
        let fine = refine_boundary(&coarse, 3);
        let pi = build_l2_projection(&fine, &coarse).unwrap();
        for m in [0, 1, 2, GLOBAL] {
            let cb = compute_correctors(&fine, &coarse, &c, cfg(InterpolationKind::Clement, CorrectorForm::Shifted, m), Execution::default()).unwrap();
            for z in 0..cb.num_coarse {
                assert!(norm_inf(&pi.apply(&cb.dense(z))) < 1e-10, "m={m} z={z}");
            }
            let ls = lod_basis_matrix(&cb, &fine, &coarse).unwrap();
            let id = ls.projection.apply(&ls.basis.mul_vec(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]));
            assert!((id[2] - 1.0).abs() < 1e-10 && id.iter().enumerate().all(|(k, v)| k == 2 || v.abs() < 1e-10));
        }
    }

    #[test]
    fn full_loop_plain_form_is_solvable() {
        let c = make_smooth_coefficient(1.0 / 8.0).unwrap();
        let coarse = BoundaryMesh::closed_loop(2).unwrap();
        let fine = refine_boundary(&coarse, 3);
        let cb = compute_correctors(&fine, &coarse, &c, cfg(InterpolationKind::Clement, CorrectorForm::Plain, GLOBAL), Execution::default()).unwrap();
        let pi = build_l2_projection(&fine, &coarse).unwrap();
        for z in 0..cb.num_coarse {
            assert!(norm_inf(&pi.apply(&cb.dense(z))) < 1e-10);
        }
    }

    #[test]
    fn localization_saturates() {
        let c = make_random_coefficient(1.0 / 16.0, 8, 4.0).unwrap();
        let mut c = c;
        c.periodic = true;
        for coarse in [interval(6), BoundaryMesh::closed_loop(2).unwrap()] {
            let fine = refine_boundary(&coarse, 2);
            let ne = coarse.num_elements();
            let a = compute_correctors(&fine, &coarse, &c, cfg(InterpolationKind::Clement, CorrectorForm::Shifted, GLOBAL), Execution::Sequential).unwrap();
            let b = compute_correctors(&fine, &coarse, &c, cfg(InterpolationKind::Clement, CorrectorForm::Shifted, ne), Execution::Parallel).unwrap();
            for z in 0..a.num_coarse {
                let d: f64 = a.dense(z).iter().zip(b.dense(z)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(d < 1e-12);
            }
        }
    }

    #[test]
    fn nodal_correctors_stay_in_the_element() {
        let c = make_smooth_coefficient(1.0 / 32.0).unwrap();
        let coarse = interval(4);
        let fine = refine_boundary(&coarse, 4);
        let cb = compute_correctors(&fine, &coarse, &c, cfg(InterpolationKind::Nodal, CorrectorForm::Plain, 3), Execution::default()).unwrap();
        let nodal = build_interpolation(&fine, &coarse, InterpolationKind::Nodal).unwrap();
        for z in 0..cb.num_coarse {
            // coarse free dof z is coarse node z+1, fine node 16(z+1), fine free index 16(z+1) − 1
            let centre = 16 * (z + 1) - 1;
            for &(j, _) in &cb.correctors[z] {
                assert!(j + 16 > centre && j < centre + 16 && j != centre);
            }
            assert!(norm_inf(&nodal.apply(&cb.dense(z))) == 0.0);
            assert_eq!(cb.supports[z], vec![z, z + 1]);
        }
    }

    #[test]
    fn nodal_stiffness_is_harmonic_average_stiffness() {
        // coefficient constant on fine elements so that the fine-scale problem
        // sees exactly the field whose harmonic averages are compared
        let coarse = interval(8);
        let fine = refine_boundary(&coarse, 4);
        let base = make_smooth_coefficient(1.0 / 20.0).unwrap();
        let c = base.element_means(&fine).unwrap();
        let cb = compute_correctors(&fine, &coarse, &c, cfg(InterpolationKind::Nodal, CorrectorForm::Plain, 0), Execution::default()).unwrap();
        let ls = lod_basis_matrix(&cb, &fine, &coarse).unwrap();
        let (mf, af) = assemble_boundary_matrices(&fine, &c, false);
        let (_, at) = lod_boundary_matrices(&ls, &mf, &af).unwrap();
        let harm = Coefficient::piecewise(coarse.h(), harmonic_element_averages(&c, &coarse)).unwrap();
        let (_, ah) = assemble_boundary_matrices(&coarse, &harm, false);
        assert!(at.max_abs_diff(&ah) <= 1e-12 * ah.max_abs(), "{}", at.max_abs_diff(&ah));
    }

    #[test]
    fn homogenized_coefficient_for_full_periods() {
        let coarse = interval(4);
        let c = make_smooth_coefficient(1.0 / 16.0).unwrap();
        let h = harmonic_element_averages(&c, &coarse);
        assert!(h.iter().all(|v| (v - 0.5).abs() < 1e-10));
        let (_, lap) = boundary_mass_laplacian(&coarse);
        let harm = Coefficient::piecewise(coarse.h(), h).unwrap();
        let (_, ah) = assemble_boundary_matrices(&coarse, &harm, false);
        assert!(ah.max_abs_diff(&lap.scale(0.5)) <= 1e-10 * lap.max_abs());
        // the LOD stiffness sees the fine-element means of the field and
        // approaches the homogenized one as h resolves ε
        let mut errs = Vec::new();
        for levels in [4, 5, 6] {
            let fine = refine_boundary(&coarse, levels);
            let cb = compute_correctors(&fine, &coarse, &c, cfg(InterpolationKind::Nodal, CorrectorForm::Plain, 0), Execution::default()).unwrap();
            let ls = lod_basis_matrix(&cb, &fine, &coarse).unwrap();
            let (mf, af) = assemble_boundary_matrices(&fine, &c, false);
            let (_, at) = lod_boundary_matrices(&ls, &mf, &af).unwrap();
            errs.push(at.max_abs_diff(&lap.scale(0.5)) / lap.max_abs());
        }
        assert!(errs[1] < errs[0] / 3.0 && errs[2] < errs[1] / 3.0 && errs[2] < 1e-3, "{errs:?}");
    }

    #[test]
    fn corrector_free_space_reproduces_coarse_matrices() {
        let c = Coefficient::constant(0.7).unwrap();
        let coarse = BoundaryMesh::closed_loop(2).unwrap();
        let fine = refine_boundary(&coarse, 2);
        let ls = LodSpace::plain(&fine, &coarse).unwrap();
        let (mf, af) = assemble_boundary_matrices(&fine, &c, false);
        let (mt, at) = lod_boundary_matrices(&ls, &mf, &af).unwrap();
        let (mc, ac) = assemble_boundary_matrices(&coarse, &c, false);
        assert!(at.max_abs_diff(&ac) < 1e-12);
        assert!(mt.max_abs_diff(&mc) < 1e-12);
        // constant coefficient, nodal: correctors vanish
        let cb = compute_correctors(&fine, &coarse, &c, cfg(InterpolationKind::Nodal, CorrectorForm::Plain, 0), Execution::default()).unwrap();
        assert!(cb.correctors.iter().all(|v| v.iter().all(|&(_, x)| x.abs() < 1e-14)));
    }

    #[test]
    fn mass_preserves_constants() {
        let c = make_random_coefficient(1.0 / 8.0, 3, 4.0).unwrap();
        let mut c = c;
        c.periodic = true;
        let coarse = BoundaryMesh::closed_loop(2).unwrap();
        let fine = refine_boundary(&coarse, 3);
        let cb = compute_correctors(&fine, &coarse, &c, cfg(InterpolationKind::Clement, CorrectorForm::Shifted, 1), Execution::default()).unwrap();
        let ls = lod_basis_matrix(&cb, &fine, &coarse).unwrap();
        let (mf, af) = assemble_boundary_matrices(&fine, &c, false);
        let (mt, _) = lod_boundary_matrices(&ls, &mf, &af).unwrap();
        let one = vec![1.0; mt.nrows()];
        assert!((dot(&one, &mt.mul_vec(&one)) - 4.0).abs() < 1e-10);
    }

    #[test]
    fn basis_support_bookkeeping() {
        let c = make_random_coefficient(1.0 / 32.0, 6, 1.0).unwrap();
        let coarse = interval(8);
        let fine = refine_boundary(&coarse, 2);
        let m = 1;
        let cb = compute_correctors(&fine, &coarse, &c, cfg(InterpolationKind::Clement, CorrectorForm::Shifted, m), Execution::default()).unwrap();
        let ls = lod_basis_matrix(&cb, &fine, &coarse).unwrap();
        let bt = ls.basis.transpose();
        for z in 0..cb.num_coarse {
            let node = z + 1;
            // U_{m+1}(supp λ_z) as an arclength interval
            let lo = node.saturating_sub(m + 2) as f64 / 8.0;
            let hi = ((node + m + 2).min(8)) as f64 / 8.0;
            for (j, _) in bt.row(z) {
                let s = fine.arclengths[j + 1];
                assert!(lo <= s && s <= hi);
            }
        }
    }

    #[test]
    fn global_correctors_are_a_orthogonal_to_the_kernel() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(12);
        let c = make_random_coefficient(1.0 / 32.0, 1, 1.0).unwrap();
        let coarse = interval(4);
        let fine = refine_boundary(&coarse, 3);
        let cb = compute_correctors(&fine, &coarse, &c, cfg(InterpolationKind::Clement, CorrectorForm::Shifted, GLOBAL), Execution::default()).unwrap();
        let ls = lod_basis_matrix(&cb, &fine, &coarse).unwrap();
        let (_, at) = assemble_boundary_matrices(&fine, &c, true);
        let pi = build_l2_projection(&fine, &coarse).unwrap();
        let p = prolong_boundary_free(&coarse, &fine).unwrap();
        for _ in 0..20 {
            let v = random_vec(&mut rng, fine.num_free());
            let pv = p.mul_vec(&pi.apply(&v));
            let w: Vec<f64> = v.iter().zip(&pv).map(|(a, b)| a - b).collect();
            let aw = at.mul_vec(&w);
            for z in 0..ls.num_coarse() {
                let mut e = vec![0.0; ls.num_coarse()];
                e[z] = 1.0;
                let q = ls.basis.mul_vec(&e);
                let scale = energy_norm(&at, &q) * energy_norm(&at, &w);
                assert!(dot(&q, &aw).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn decay_profile_is_monotone_and_saturates() {
        let c = make_random_coefficient(1.0 / 32.0, 2, 1.0).unwrap();
        let coarse = interval(8);
        let fine = refine_boundary(&coarse, 3);
        let rows = corrector_decay_profile(&fine, &coarse, &c, CorrectorForm::Shifted, 8, Execution::default()).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].relative_energy_error <= w[0].relative_energy_error * (1.0 + 1e-9) + 1e-13);
        }
        assert!(rows[8].relative_energy_error < 1e-12);
        assert!(rows[0].relative_energy_error > 1e-3);
    }

    #[test]
    fn clement_decay_rate_for_constant_coefficient() {
        // ideal basis: C² cubic spline with vanishing P1 moments away from z;
        // its decay is the root of z⁴ + 26z³ + 66z² + 26z + 1 inside (-1, 0)
        let w = -13.0 + 105f64.sqrt();
        let root = ((w + (w * w - 4.0).sqrt()) / 2.0).abs();
        assert!((root - 0.430575).abs() < 1e-6);
        let coarse = interval(32);
        let fine = refine_boundary(&coarse, 4);
        let c = Coefficient::constant(1.0).unwrap();
        let rows = corrector_decay_profile(&fine, &coarse, &c, CorrectorForm::Plain, 9, Execution::default()).unwrap();
        for m in 5..=9 {
            let ratio = rows[m].relative_energy_error / rows[m - 1].relative_energy_error;
            assert!((ratio - root).abs() < 5e-3, "m = {m}: {ratio}");
        }
    }

    #[test]
    fn independent_row_selection() {
        let rows = vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 2.0), (1, 2.0)], vec![(1, 1.0)], vec![(0, 3.0)]];
        assert_eq!(independent_rows(&rows, 2), vec![0, 2]);
    }
}
