//! Reference solutions, error norms, observed orders, the Petrov-Galerkin
//! Ritz projection and discrete inf-sup estimates.

use std::fmt::Write as _;

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_boundary_matrices, assemble_bulk_matrices, boundary_mass, boundary_mass_laplacian, prolong_boundary_free,
    prolong_bulk, DofMap,
};
use crate::coefficients::Coefficient;
use crate::error::{invalid, Error, Result};
use crate::lod::{build_l2_projection, LodSpace, GLOBAL};
use crate::mesh::{build_bulk_mesh_with, refine_boundary, restrict_to_boundary, BoundaryMesh, BulkMesh};
use crate::par::Execution;
use crate::pdae::{assemble_system, Formulation, PdaeSystem, Problem, Trajectory, Variant};
use crate::sparse::{energy_norm, CsrMatrix, Factorization};

/// Fine standard-FEM solution every coarse run is compared with.
pub struct ReferenceSolution {
    pub system: PdaeSystem,
    pub trajectory: Trajectory,
    /// `M` and `M + K(κ=1)` on reference bulk free dofs.
    pub bulk_l2: CsrMatrix,
    pub bulk_h1: CsrMatrix,
    /// Mass and mass plus Laplacian on the reference boundary mesh.
    pub bdry_l2: CsrMatrix,
    pub bdry_h1: CsrMatrix,
}

impl ReferenceSolution {
    pub fn mesh(&self) -> &BulkMesh {
        &self.system.mesh
    }

    pub fn boundary_mesh(&self) -> &BoundaryMesh {
        &self.system.q_mesh
    }

    pub fn final_u(&self) -> &[f64] {
        self.trajectory.final_u()
    }

    pub fn final_p(&self) -> &[f64] {
        self.trajectory.final_p()
    }
}

/// Rough peak footprint of the reference solve in MB. A refined boundary
/// forces the saddle formulation and an LU factorization.
pub fn reference_memory_estimate_mb(n_ref: usize, boundary_levels: u32) -> f64 {
    let n = ((n_ref + 1) * (n_ref + 1)) as f64;
    // nested-dissection fill ~ N log N entries, index + value, plus matrices
    let chol = n * (12.0 * n.log2() + 60.0) * 12.0 / 1.0e6;
    if boundary_levels == 0 {
        chol
    } else {
        1.35 * chol
    }
}

/// Standard FEM on the `n_ref` grid. The boundary mesh is refined
/// `boundary_levels` more times than the bulk trace and must carry at least
/// `cells_per_period` elements per coefficient period `ε`.
pub fn compute_reference(
    problem: &Problem,
    c: &Coefficient,
    n_ref: usize,
    boundary_levels: u32,
    cells_per_period: f64,
    budget_mb: f64,
    exec: Execution,
) -> Result<ReferenceSolution> {
    if !n_ref.is_power_of_two() || n_ref < 2 {
        return Err(invalid(format!("n_ref = {n_ref} must be a power of two")));
    }
    let eps = c.epsilon;
    let per_unit = (n_ref << boundary_levels) as f64;
    if eps.is_finite() && per_unit * eps < cells_per_period - 1e-9 {
        return Err(invalid(format!(
            "reference boundary mesh 1/{per_unit} has fewer than {cells_per_period} cells per period ε = {eps}"
        )));
    }
    let est = reference_memory_estimate_mb(n_ref, boundary_levels);
    if est > budget_mb {
        return Err(Error::MemoryBudget { estimate_mb: est.ceil() as u64, budget_mb: budget_mb as u64 });
    }
    let mesh = build_bulk_mesh_with(n_ref, problem.selector)?;
    let q = refine_boundary(&restrict_to_boundary(&mesh, problem.selector), boundary_levels);
    let system = assemble_system(&mesh, &q, c, problem.kappa, Variant::StandardFem, None, exec)?;
    // p lives on a finer mesh than the trace when refined: no elimination
    let formulation = if boundary_levels == 0 { Formulation::Eliminated } else { Formulation::Saddle };
    let trajectory = problem.integrate(&system, formulation)?;
    let (bulk_l2, k1) = assemble_bulk_matrices(&mesh, 1.0, exec)?;
    let bulk_h1 = bulk_l2.add_scaled(1.0, &k1, 1.0);
    let (bdry_l2, lap) = boundary_mass_laplacian(&q);
    let bdry_h1 = bdry_l2.add_scaled(1.0, &lap, 1.0);
    Ok(ReferenceSolution { system, trajectory, bulk_l2, bulk_h1, bdry_l2, bdry_h1 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub h_omega: f64,
    pub h_gamma: f64,
    /// Patch layers; `None` for standard FEM or unlocalized correctors.
    pub m: Option<usize>,
    pub err_u_l2: f64,
    pub err_p_l2: f64,
    pub err_u_h1: f64,
    pub err_p_h1: f64,
    pub err_p_full_h1: f64,
    /// `‖Π p_ref − p_c‖` on the coarse boundary mesh, `Π` the L² projection
    /// and `p_c` the coarse boundary unknown (`p_H` or `Π_H p̃_H`). Blind to
    /// the unresolvable sub-`H` oscillation of the exact trace.
    #[serde(default)]
    pub err_p_l2_projected: f64,
}

/// Bulk prolongation between free dofs of nested grids.
pub fn prolong_bulk_free(coarse: &BulkMesh, fine: &BulkMesh) -> Result<CsrMatrix> {
    if coarse.selector != fine.selector {
        return Err(Error::MeshMismatch("bulk grids carry different boundary selectors".into()));
    }
    let p = prolong_bulk(coarse, fine)?;
    let dc = DofMap::new(coarse, &restrict_to_boundary(coarse, coarse.selector))?;
    let df = DofMap::new(fine, &restrict_to_boundary(fine, fine.selector))?;
    Ok(p.select(&df.bulk_free, df.num_bulk(), &dc.bulk_free, dc.num_bulk()))
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Errors of `(u, p)` at step `step` of `traj` against the reference at the
/// same step.
pub fn error_norms_at(sys: &PdaeSystem, traj: &Trajectory, reference: &ReferenceSolution, step: usize) -> Result<ErrorRow> {
    if traj.times.len() != reference.trajectory.times.len() || (traj.tau - reference.trajectory.tau).abs() > 1e-15 {
        return Err(invalid("trajectory and reference use different time grids"));
    }
    let rb = reference.boundary_mesh();
    let pu = prolong_bulk_free(&sys.mesh, reference.mesh())?;
    let eu = diff(&pu.mul_vec(&traj.u[step]), &reference.trajectory.u[step]);
    let p_ref = &reference.trajectory.p[step];
    // p_H itself for standard FEM, Π_H p̃_H for PG-LOD
    let (qc, pc) = match sys.variant {
        Variant::StandardFem => (&sys.q_mesh, traj.p[step].clone()),
        Variant::Pglod => (&sys.trace_mesh, sys.projected_p(&traj.p[step])),
    };
    let ep = diff(&prolong_boundary_free(qc, rb)?.mul_vec(&pc), p_ref);
    let proj = build_l2_projection(rb, qc)?;
    let err_p_l2_projected = energy_norm(&proj.coarse_mass, &diff(&proj.apply(p_ref), &pc));
    let pf = prolong_boundary_free(&sys.p_mesh, rb)?;
    let ef = diff(&pf.mul_vec(&sys.p_fine(&traj.p[step])), p_ref);
    Ok(ErrorRow {
        h_omega: sys.mesh.h(),
        h_gamma: sys.q_mesh.h(),
        m: sys.lod.as_ref().and_then(|l| l.config).map(|c| c.m).filter(|&m| m != GLOBAL),
        err_u_l2: energy_norm(&reference.bulk_l2, &eu),
        err_p_l2: energy_norm(&reference.bdry_l2, &ep),
        err_u_h1: energy_norm(&reference.bulk_h1, &eu),
        err_p_h1: energy_norm(&reference.bdry_h1, &ep),
        err_p_full_h1: energy_norm(&reference.bdry_h1, &ef),
        err_p_l2_projected,
    })
}

/// Errors at the final time.
pub fn error_norms(sys: &PdaeSystem, traj: &Trajectory, reference: &ReferenceSolution) -> Result<ErrorRow> {
    error_norms_at(sys, traj, reference, traj.steps())
}

pub const REPORT_COLUMNS: &str = "H_Omega,H_Gamma,m,err_u_L2,err_p_L2,err_u_H1,err_p_H1,err_p_full_H1";

pub fn report_csv(rows: &[ErrorRow]) -> String {
    let mut s = format!("{REPORT_COLUMNS}\n");
    for r in rows {
        let m = r.m.map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            r.h_omega, r.h_gamma, m, r.err_u_l2, r.err_p_l2, r.err_u_h1, r.err_p_h1, r.err_p_full_h1
        );
    }
    s
}

/// `log₂(e_k / e_{k+1})` for consecutive rows; `None` where undefined.
pub fn observed_orders(errors: &[f64]) -> Vec<Option<f64>> {
    errors
        .windows(2)
        .map(|w| (w[0] > 0.0 && w[1] > 0.0 && w[0].is_finite() && w[1].is_finite()).then(|| (w[0] / w[1]).log2()))
        .collect()
}

/// Mean order over the last `k` halvings, `log₂(e_{n-k} / e_n) / k`.
pub fn mean_order(errors: &[f64], k: usize) -> Option<f64> {
    let n = errors.len();
    if k == 0 || n < k + 1 {
        return None;
    }
    let (a, b) = (errors[n - 1 - k], errors[n - 1]);
    (a > 0.0 && b > 0.0).then(|| (a / b).log2() / k as f64)
}

/// Least-squares slope of `log e` against `log(1/h)` over the last `k` rows.
pub fn least_squares_order(hs: &[f64], errors: &[f64], k: usize) -> Option<f64> {
    let n = errors.len();
    if hs.len() != n || k < 2 || n < k {
        return None;
    }
    let pts: Vec<(f64, f64)> = (n - k..n)
        .map(|i| (-hs[i].log2(), errors[i].log2()))
        .filter(|(_, y)| y.is_finite())
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(-sxy / sxx)
}

/// Smallest admissible patch size for the Ritz projection and PG-LOD runs.
pub fn default_patch_layers(h_gamma: f64) -> usize {
    (1.0 / h_gamma).log2().ceil().max(1.0) as usize
}

pub struct RitzProjection {
    /// Coarse bulk free coefficients.
    pub u: Vec<f64>,
    /// Coarse LOD coefficients.
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Spaces of the Ritz projection: coarse bulk grid, reference bulk grid the
/// data lives on, and an LOD space on `fine` built with the shifted form.
pub struct RitzSpaces<'a> {
    pub coarse: &'a BulkMesh,
    pub reference: &'a BulkMesh,
    pub fine: &'a BoundaryMesh,
    pub lod: &'a LodSpace,
    pub coefficient: &'a Coefficient,
    pub kappa: f64,
}

pub struct RitzOperator {
    pub k_coarse: CsrMatrix,
    pub k_ref: CsrMatrix,
    pub a_fine: CsrMatrix,
    pub prolong: CsrMatrix,
    pub saddle: CsrMatrix,
    pub factor: Factorization,
    pub dofs: DofMap,
    sizes: [usize; 3],
    fine_prolong: CsrMatrix,
}

impl RitzOperator {
    pub fn new(s: &RitzSpaces, exec: Execution) -> Result<Self> {
        let trace = restrict_to_boundary(s.coarse, s.coarse.selector);
        if let Some(cfg) = s.lod.config {
            let need = default_patch_layers(trace.h());
            if cfg.m != GLOBAL && cfg.m < need {
                return Err(invalid(format!("m = {} is below the admissible patch size {need}", cfg.m)));
            }
        }
        let dofs = DofMap::new(s.coarse, &trace)?;
        let (_, k_coarse) = assemble_bulk_matrices(s.coarse, s.kappa, exec)?;
        let (_, k_ref) = assemble_bulk_matrices(s.reference, s.kappa, exec)?;
        let (_, a_fine) = assemble_boundary_matrices(s.fine, s.coefficient, true);
        let prolong = prolong_bulk_free(s.coarse, s.reference)?;
        let fine_prolong = s.lod.prolongation.clone();
        let m_h = boundary_mass(&trace);
        let b_u = m_h.matmul(&dofs.trace_matrix()).scale(-1.0);
        let a_lod = fine_prolong.transpose().matmul(&a_fine.matmul(&s.lod.basis));
        let (nu, np, nl) = (dofs.num_bulk(), a_lod.nrows(), m_h.nrows());
        if np != nl {
            return Err(Error::MeshMismatch("LOD space is not built on the bulk trace mesh".into()));
        }
        let but = b_u.transpose();
        let saddle = CsrMatrix::block(
            &[
                vec![Some(&k_coarse), None, Some(&but)],
                vec![None, Some(&a_lod), Some(&m_h)],
                vec![Some(&b_u), Some(&m_h), None],
            ],
            &[nu, np, nl],
            &[nu, np, nl],
        );
        let factor = Factorization::lu(&saddle, "Ritz projection")?;
        Ok(Self { k_coarse, k_ref, a_fine, prolong, saddle, factor, dofs, sizes: [nu, np, nl], fine_prolong })
    }

    /// Projects `(u, p)` given on reference bulk free dofs and LOD fine
    /// boundary free dofs.
    pub fn apply(&self, u_fine: &[f64], p_fine: &[f64]) -> Result<RitzProjection> {
        let [nu, np, nl] = self.sizes;
        let mut rhs = self.prolong.tr_mul_vec(&self.k_ref.mul_vec(u_fine));
        rhs.extend(self.fine_prolong.tr_mul_vec(&self.a_fine.mul_vec(p_fine)));
        rhs.resize(nu + np + nl, 0.0);
        let (x, res) = self.factor.solve_refined(&self.saddle, &rhs, 1e-13);
        if !(res <= 1e-10) {
            return Err(Error::Factorization { context: "Ritz projection".into(), reason: format!("residual {res:e}") });
        }
        Ok(RitzProjection { u: x[..nu].to_vec(), p: x[nu..nu + np].to_vec(), lambda: x[nu + np..].to_vec() })
    }

    /// `𝔎(u − R_u, w) + ã(p − R_p, r)` for a coarse pair `(w, r)`; `r` as
    /// coarse P1 coefficients.
    pub fn orthogonality_residual(&self, lod: &LodSpace, u_fine: &[f64], p_fine: &[f64], r: &RitzProjection, w: &[f64], q: &[f64]) -> f64 {
        let eu = diff(u_fine, &self.prolong.mul_vec(&r.u));
        let ep = diff(p_fine, &lod.reconstruct(&r.p));
        let wf = self.prolong.mul_vec(w);
        let qf = self.fine_prolong.mul_vec(q);
        crate::sparse::dot(&wf, &self.k_ref.mul_vec(&eu)) + crate::sparse::dot(&qf, &self.a_fine.mul_vec(&ep))
    }
}

pub fn ritz_projection(s: &RitzSpaces, u_fine: &[f64], p_fine: &[f64], exec: Execution) -> Result<RitzProjection> {
    RitzOperator::new(s, exec)?.apply(u_fine, p_fine)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfSup {
    pub beta: f64,
    /// Set when the pairing has no multiplier or trace dofs.
    pub degenerate: bool,
}

fn csr_dense_rows(a: &CsrMatrix) -> Mat<f64> {
    a.to_dense()
}

fn sym_eigen(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let e = a.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = e.S().column_vector();
    let vals: Vec<f64> = (0..a.nrows()).map(|i| s[i]).collect();
    Ok((vals, e.U().to_owned()))
}

/// Discrete inf-sup constant of `b(q − v|_Γ, μ)` on `V_H × Q_H × M_H` with
/// the `H¹(Ω) × H¹(Γ)` norm on trial pairs and a spectral `H^{-1/2}(Γ)`
/// norm on multipliers.
pub fn infsup_constant(mesh: &BulkMesh, q_mesh: &BoundaryMesh, exec: Execution) -> Result<InfSup> {
    let trace = restrict_to_boundary(mesh, mesh.selector);
    let dofs = DofMap::new(mesh, &trace)?;
    let k = dofs.num_trace();
    let nq = q_mesh.num_free();
    if k == 0 || (nq == 0 && dofs.num_bulk() == 0) {
        return Ok(InfSup { beta: 0.0, degenerate: true });
    }
    let (b_u, b_p) = crate::assembly::assemble_constraint_general(mesh, &trace, q_mesh)?;
    let (mb, kb) = assemble_bulk_matrices(mesh, 1.0, exec)?;
    let xu = Factorization::cholesky(&mb.add_scaled(1.0, &kb, 1.0), "bulk H1 Gram")?;
    let (mq, lq) = boundary_mass_laplacian(q_mesh);
    let xp = Factorization::cholesky(&mq.add_scaled(1.0, &lq, 1.0), "boundary H1 Gram")?;
    // S = B X⁻¹ Bᵀ, one column per multiplier dof
    let but = b_u.transpose();
    let bpt = b_p.transpose();
    let cols = exec.map(k, |j| {
        let mut e = vec![0.0; k];
        e[j] = 1.0;
        let yu = xu.solve(&but.mul_vec(&e));
        let yp = xp.solve(&bpt.mul_vec(&e));
        let a = b_u.mul_vec(&yu);
        let b = b_p.mul_vec(&yp);
        a.iter().zip(&b).map(|(x, y)| x + y).collect::<Vec<f64>>()
    });
    let s = Mat::<f64>::from_fn(k, k, |i, j| 0.5 * (cols[j][i] + cols[i][j]));
    // Ψ: M-orthonormal eigenvectors of the trace (Laplacian, mass) pencil
    let (mt, lt) = boundary_mass_laplacian(&trace);
    let (md, ld) = (csr_dense_rows(&mt), csr_dense_rows(&lt));
    let (mv, mvec) = sym_eigen(&md)?;
    let mih = Mat::<f64>::from_fn(k, k, |i, j| (0..k).map(|l| mvec[(i, l)] * mvec[(j, l)] / mv[l].sqrt()).sum());
    let c0 = &mih * &ld * &mih;
    let c0 = Mat::<f64>::from_fn(k, k, |i, j| 0.5 * (c0[(i, j)] + c0[(j, i)]));
    let (lam, v) = sym_eigen(&c0)?;
    let psi = &mih * &v;
    // with G = MΨ W Ψᵀ M the pencil (S, G) reduces to W^{-1/2} Ψᵀ S Ψ W^{-1/2}
    let w: Vec<f64> = lam.iter().map(|&l| (1.0 + l.max(0.0)).powf(0.25)).collect();
    let mut c = psi.transpose() * &s * &psi;
    for i in 0..k {
        for j in 0..k {
            c[(i, j)] *= w[i] * w[j];
        }
    }
    let c = Mat::<f64>::from_fn(k, k, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let (ev, _) = sym_eigen(&c)?;
    let min = ev.first().copied().unwrap_or(0.0);
    Ok(InfSup { beta: min.max(0.0).sqrt(), degenerate: !(min > 0.0) })
}
