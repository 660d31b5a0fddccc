//! Block PDAE system `M ẋ + S x + Bᵀ λ = b`, `B x = 0` and its implicit Euler
//! integrator, in saddle-point or eliminated form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_boundary_matrices, assemble_bulk_matrices, assemble_constraint_general, assemble_loads, boundary_mass,
    interpolate_bulk, prolong_boundary_free, restrict_boundary, DofMap,
};
use crate::coefficients::Coefficient;
use crate::error::{invalid, Error, Result};
use crate::lod::{lod_boundary_matrices, LodSpace};
use crate::mesh::{restrict_to_boundary, BoundaryMesh, BulkMesh};
use crate::par::Execution;
use crate::sparse::{dot, norm_inf, CsrMatrix, Factorization};

/// Boundary discretization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// P1 on a boundary mesh nested in the bulk trace mesh.
    StandardFem,
    /// Petrov-Galerkin LOD trial space, coarse P1 test space.
    Pglod,
}

/// Whether `p` is kept as an unknown with a multiplier, or folded into `u`
/// through the trace identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    Saddle,
    Eliminated,
}

pub type BulkField = dyn Fn(f64, f64, f64) -> f64 + Sync;
pub type BoundaryField = dyn Fn(f64, f64) -> f64 + Sync;

/// Problem data shared by every discretization of one experiment.
pub struct Problem {
    pub selector: crate::mesh::BoundarySelector,
    pub kappa: f64,
    pub tau: f64,
    pub t_end: f64,
    pub u0: Box<dyn Fn(f64, f64) -> f64 + Sync>,
    pub f: Box<BulkField>,
    pub g: Box<BoundaryField>,
}

impl Problem {
    pub fn integrate(&self, sys: &PdaeSystem, formulation: Formulation) -> Result<Trajectory> {
        implicit_euler(sys, formulation, self.tau, self.t_end, &*self.u0, &*self.f, &*self.g)
    }
}

pub struct PdaeSystem {
    pub variant: Variant,
    pub mesh: BulkMesh,
    /// Restriction of the bulk grid to the dynamic boundary; carries `M_H`.
    pub trace_mesh: BoundaryMesh,
    /// Mesh of the coarse boundary coefficients (`Q_H`, or the coarse space
    /// underlying the LOD basis).
    pub q_mesh: BoundaryMesh,
    pub dofs: DofMap,
    pub kappa: f64,
    pub m_bulk: CsrMatrix,
    pub k_bulk: CsrMatrix,
    pub m_q: CsrMatrix,
    pub a_q: CsrMatrix,
    /// Constraint blocks `[B_u | B_p]`, rows indexed by free trace dofs.
    pub b_u: CsrMatrix,
    pub b_p: CsrMatrix,
    /// Trace-mesh mass, for multiplier norms.
    pub m_trace: CsrMatrix,
    /// Coarse projection of `p` onto the trace space: `p`-coefficients →
    /// free trace dofs. Identity unless `Q_H` is finer than the trace mesh.
    pub p_to_trace: CsrMatrix,
    pub lod: Option<LodSpace>,
    /// Mesh carrying the fine representation of `p` (`p̃_H` for PG-LOD).
    pub p_mesh: BoundaryMesh,
}

impl PdaeSystem {
    pub fn num_u(&self) -> usize {
        self.m_bulk.nrows()
    }

    pub fn num_p(&self) -> usize {
        self.m_q.nrows()
    }

    pub fn num_lambda(&self) -> usize {
        self.b_u.nrows()
    }

    pub fn block_mass(&self) -> CsrMatrix {
        let (nu, np) = (self.num_u(), self.num_p());
        CsrMatrix::block(&[vec![Some(&self.m_bulk), None], vec![None, Some(&self.m_q)]], &[nu, np], &[nu, np])
    }

    pub fn block_stiffness(&self) -> CsrMatrix {
        let (nu, np) = (self.num_u(), self.num_p());
        CsrMatrix::block(&[vec![Some(&self.k_bulk), None], vec![None, Some(&self.a_q)]], &[nu, np], &[nu, np])
    }

    pub fn constraint(&self) -> CsrMatrix {
        crate::assembly::hcat(&self.b_u, &self.b_p)
    }

    /// `[[M + τS, Bᵀ], [B, 0]]`.
    pub fn saddle_matrix(&self, tau: f64) -> CsrMatrix {
        let a = self.block_mass().add_scaled(1.0, &self.block_stiffness(), tau);
        let b = self.constraint();
        let bt = b.transpose();
        let n = a.nrows();
        let k = b.nrows();
        CsrMatrix::block(&[vec![Some(&a), Some(&bt)], vec![Some(&b), None]], &[n, k], &[n, k])
    }

    fn can_eliminate(&self) -> bool {
        self.num_p() == self.num_lambda()
    }

    /// `(M_Ω + Tᵀ M_q T, K + Tᵀ A_q T)` on bulk free dofs.
    pub fn eliminated_matrices(&self) -> Result<(CsrMatrix, CsrMatrix)> {
        if !self.can_eliminate() {
            return Err(Error::Unavailable(
                "elimination needs the boundary space to coincide with the trace space".into(),
            ));
        }
        let t = self.dofs.trace_matrix();
        let tt = t.transpose();
        let m = self.m_bulk.add_scaled(1.0, &tt.matmul(&self.m_q).matmul(&t), 1.0);
        let s = self.k_bulk.add_scaled(1.0, &tt.matmul(&self.a_q).matmul(&t), 1.0);
        Ok((m, s))
    }

    /// Load vectors at time `t` on free dofs: `(b_Ω, b_Γ)` with `b_Γ` in the
    /// boundary test space.
    pub fn loads(&self, f: &BulkField, g: &BoundaryField, t: f64) -> (Vec<f64>, Vec<f64>) {
        let (bo, bg) = assemble_loads(&self.mesh, &self.q_mesh, f, g, t);
        (self.dofs.restrict_bulk(&bo), restrict_boundary(&self.q_mesh, &bg))
    }

    /// Boundary coefficients consistent with a bulk state: `p` such that the
    /// constraint holds exactly.
    pub fn consistent_p(&self, u: &[f64]) -> Result<Vec<f64>> {
        let tr = self.dofs.trace(u);
        if self.can_eliminate() {
            return Ok(tr);
        }
        let p = prolong_boundary_free(&self.trace_mesh, &self.q_mesh)?;
        Ok(p.mul_vec(&tr))
    }

    /// Coarse trace-space representative of `p` (`Π_H p̃` resp. `p_H`).
    pub fn projected_p(&self, p: &[f64]) -> Vec<f64> {
        self.p_to_trace.mul_vec(p)
    }

    /// Fine representation of `p` on free dofs of [`PdaeSystem::p_mesh`].
    pub fn p_fine(&self, p: &[f64]) -> Vec<f64> {
        match &self.lod {
            Some(ls) => ls.reconstruct(p),
            None => p.to_vec(),
        }
    }

    /// `‖B x‖_∞` for a state `x = (u, p)`.
    pub fn constraint_residual(&self, u: &[f64], p: &[f64]) -> f64 {
        let r: Vec<f64> = self.b_u.mul_vec(u).iter().zip(self.b_p.mul_vec(p)).map(|(a, b)| a + b).collect();
        norm_inf(&r)
    }
}

/// Assembles the PDAE blocks.
///
/// `q_mesh` is the boundary mesh of the `p` coefficients: for
/// [`Variant::StandardFem`] any refinement of the bulk trace mesh, for
/// [`Variant::Pglod`] the trace mesh itself with `lod` built on it.
pub fn assemble_system(
    mesh: &BulkMesh,
    q_mesh: &BoundaryMesh,
    c: &Coefficient,
    kappa: f64,
    variant: Variant,
    lod: Option<(LodSpace, &BoundaryMesh)>,
    exec: Execution,
) -> Result<PdaeSystem> {
    let trace_mesh = restrict_to_boundary(mesh, mesh.selector);
    let dofs = DofMap::new(mesh, &trace_mesh)?;
    let (m_bulk, k_bulk) = assemble_bulk_matrices(mesh, kappa, exec)?;
    let (b_u, b_p) = assemble_constraint_general(mesh, &trace_mesh, q_mesh)?;
    let m_trace = boundary_mass(&trace_mesh);
    let (m_q, a_q, lod, p_to_trace, p_mesh) = match variant {
        Variant::StandardFem => {
            let (m, a) = assemble_boundary_matrices(q_mesh, c, false);
            let mass = m_trace.clone();
            let fact = Factorization::cholesky(&mass, "trace mass")?;
            // Π_H onto the trace space: M_H⁻¹ Pᵀ M_q, dense only when Q is refined
            let p2t = if q_mesh.den == trace_mesh.den {
                CsrMatrix::identity(dofs.num_trace())
            } else {
                let w = b_p.to_dense();
                let cols: Vec<Vec<f64>> = (0..w.ncols())
                    .map(|j| fact.solve(&(0..w.nrows()).map(|i| w[(i, j)]).collect::<Vec<_>>()))
                    .collect();
                let mut t = Vec::new();
                for (j, col) in cols.iter().enumerate() {
                    for (i, &v) in col.iter().enumerate() {
                        if v.abs() > 1e-300 {
                            t.push((i, j, v));
                        }
                    }
                }
                CsrMatrix::from_triplets(dofs.num_trace(), b_p.ncols(), &t)
            };
            (m, a, None, p2t, q_mesh.clone())
        }
        Variant::Pglod => {
            let (space, fine) = lod.ok_or(Error::MissingCorrectorBasis)?;
            if q_mesh.den != trace_mesh.den || q_mesh.topology != trace_mesh.topology {
                return Err(Error::MeshMismatch("the LOD coarse mesh must be the bulk trace mesh".into()));
            }
            if space.num_coarse() != q_mesh.num_free() || space.num_fine() != fine.num_free() {
                return Err(Error::MeshMismatch("LOD space does not match the boundary meshes".into()));
            }
            let (mf, af) = assemble_boundary_matrices(fine, c, false);
            let (mt, at) = lod_boundary_matrices(&space, &mf, &af)?;
            let n = dofs.num_trace();
            (mt, at, Some(space), CsrMatrix::identity(n), fine.clone())
        }
    };
    if b_p.ncols() != m_q.nrows() {
        return Err(Error::MeshMismatch("constraint and boundary blocks disagree".into()));
    }
    Ok(PdaeSystem {
        variant,
        mesh: mesh.clone(),
        trace_mesh,
        q_mesh: q_mesh.clone(),
        dofs,
        kappa,
        m_bulk,
        k_bulk,
        m_q,
        a_q,
        b_u,
        b_p,
        m_trace,
        p_to_trace,
        lod,
        p_mesh,
    })
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub formulation: Formulation,
    pub tau: f64,
    pub times: Vec<f64>,
    /// Bulk free-dof coefficients per step.
    pub u: Vec<Vec<f64>>,
    /// Boundary coefficients per step (coarse LOD coefficients for PG-LOD).
    pub p: Vec<Vec<f64>>,
    /// Multipliers per step (`None` at `t_0` and for the eliminated form).
    pub lambda: Vec<Option<Vec<f64>>>,
}

impl Trajectory {
    pub fn final_u(&self) -> &[f64] {
        self.u.last().expect("non-empty trajectory")
    }

    pub fn final_p(&self) -> &[f64] {
        self.p.last().expect("non-empty trajectory")
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }
}

/// Direct solve of `[[A, Bᵀ], [B, 0]] (x, y) = (f, g)`; returns `(x, y)`.
pub fn solve_saddle(a: &CsrMatrix, b: &CsrMatrix, f: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = a.nrows();
    let k = b.nrows();
    if a.ncols() != n || b.ncols() != n || f.len() != n || g.len() != k {
        return Err(invalid("saddle block dimensions are inconsistent"));
    }
    for i in 0..k {
        if b.row(i).all(|(_, v)| v == 0.0) {
            return Err(Error::Factorization {
                context: "saddle".into(),
                reason: format!("constraint row {i} is zero (B is rank deficient)"),
            });
        }
    }
    let bt = b.transpose();
    let s = CsrMatrix::block(&[vec![Some(a), Some(&bt)], vec![Some(b), None]], &[n, k], &[n, k]);
    let lu = Factorization::lu(&s, "saddle")?;
    let mut rhs = f.to_vec();
    rhs.extend_from_slice(g);
    let (sol, res) = lu.solve_refined(&s, &rhs, 1e-12);
    if !(res <= 1e-10) {
        return Err(Error::Factorization { context: "saddle".into(), reason: format!("relative residual {res:e}") });
    }
    let y = sol[n..].to_vec();
    let mut x = sol;
    x.truncate(n);
    Ok((x, y))
}

/// Implicit Euler with uniform step `tau` up to `t_end`.
pub fn implicit_euler(
    sys: &PdaeSystem,
    formulation: Formulation,
    tau: f64,
    t_end: f64,
    u0: &dyn Fn(f64, f64) -> f64,
    f: &BulkField,
    g: &BoundaryField,
) -> Result<Trajectory> {
    if !(tau > 0.0) || !(t_end > 0.0) {
        return Err(invalid("time step and horizon must be positive"));
    }
    let steps = (t_end / tau).round() as usize;
    if steps == 0 || (steps as f64 * tau - t_end).abs() > 1e-12 * t_end.max(1.0) {
        return Err(invalid(format!("tau = {tau} does not divide T = {t_end}")));
    }
    let u_init = sys.dofs.restrict_bulk(&interpolate_bulk(&sys.mesh, u0));
    let p_init = sys.consistent_p(&u_init)?;
    let mut traj = Trajectory {
        formulation,
        tau,
        times: vec![0.0],
        u: vec![u_init],
        p: vec![p_init],
        lambda: vec![None],
    };
    let (nu, np, nl) = (sys.num_u(), sys.num_p(), sys.num_lambda());
    match formulation {
        Formulation::Saddle => {
            let mass = sys.block_mass();
            let s = sys.saddle_matrix(tau);
            let lu = Factorization::lu(&s, "implicit Euler saddle").map_err(|e| Error::StepFailed { step: 1, reason: e.to_string() })?;
            for n in 1..=steps {
                let t = n as f64 * tau;
                let (bo, bg) = sys.loads(f, g, t);
                let mut x = traj.u[n - 1].clone();
                x.extend_from_slice(&traj.p[n - 1]);
                let mut rhs = mass.mul_vec(&x);
                for (i, v) in bo.iter().chain(&bg).enumerate() {
                    rhs[i] += tau * v;
                }
                rhs.resize(nu + np + nl, 0.0);
                let (sol, res) = lu.solve_refined(&s, &rhs, 1e-13);
                if !res.is_finite() || sol.iter().any(|v| !v.is_finite()) {
                    return Err(Error::StepFailed { step: n, reason: format!("residual {res:e}") });
                }
                traj.times.push(t);
                traj.u.push(sol[..nu].to_vec());
                traj.p.push(sol[nu..nu + np].to_vec());
                traj.lambda.push(Some(sol[nu + np..].iter().map(|v| v / tau).collect()));
            }
        }
        Formulation::Eliminated => {
            let (m, k) = sys.eliminated_matrices()?;
            let a = m.add_scaled(1.0, &k, tau);
            let method = match sys.variant {
                Variant::StandardFem => crate::sparse::Method::Cholesky,
                Variant::Pglod => crate::sparse::Method::Lu,
            };
            let fact = Factorization::new(&a, method, "implicit Euler eliminated")
                .map_err(|e| Error::StepFailed { step: 1, reason: e.to_string() })?;
            let tt = sys.dofs.trace_matrix().transpose();
            for n in 1..=steps {
                let t = n as f64 * tau;
                let (bo, bg) = sys.loads(f, g, t);
                let mut rhs = m.mul_vec(&traj.u[n - 1]);
                let bgt = tt.mul_vec(&bg);
                for i in 0..nu {
                    rhs[i] += tau * (bo[i] + bgt[i]);
                }
                let (u, res) = fact.solve_refined(&a, &rhs, 1e-13);
                if !res.is_finite() || u.iter().any(|v| !v.is_finite()) {
                    return Err(Error::StepFailed { step: n, reason: format!("residual {res:e}") });
                }
                let p = sys.dofs.trace(&u);
                traj.times.push(t);
                traj.u.push(u);
                traj.p.push(p);
                traj.lambda.push(None);
            }
        }
    }
    Ok(traj)
}

/// `‖λ_H‖_{L²(Γ)}` per step; unavailable for the eliminated form.
pub fn lagrange_multiplier_report(sys: &PdaeSystem, traj: &Trajectory) -> Result<Vec<f64>> {
    if traj.formulation == Formulation::Eliminated {
        return Err(Error::Unavailable("the eliminated formulation carries no multiplier".into()));
    }
    Ok(traj
        .lambda
        .iter()
        .map(|l| match l {
            Some(l) => dot(l, &sys.m_trace.mul_vec(l)).max(0.0).sqrt(),
            None => 0.0,
        })
        .collect())
}

/// Per-step diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub norm_u: f64,
    pub norm_p: f64,
    pub constraint_residual: f64,
    pub trace_defect: f64,
}

pub fn step_diagnostics(sys: &PdaeSystem, traj: &Trajectory) -> Vec<StepDiagnostics> {
    (0..traj.times.len())
        .map(|n| {
            let u = &traj.u[n];
            let p = &traj.p[n];
            let pp = sys.projected_p(p);
            let tr = sys.dofs.trace(u);
            let scale = norm_inf(u).max(norm_inf(p)).max(1.0);
            StepDiagnostics {
                t: traj.times[n],
                norm_u: dot(u, &sys.m_bulk.mul_vec(u)).max(0.0).sqrt(),
                norm_p: dot(&pp, &sys.m_trace.mul_vec(&pp)).max(0.0).sqrt(),
                constraint_residual: sys.constraint_residual(u, p) / scale,
                trace_defect: pp.iter().zip(&tr).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale,
            }
        })
        .collect()
}

/// CSV with columns `t,norm_u,norm_p,constraint_residual`.
pub fn trajectory_csv(sys: &PdaeSystem, traj: &Trajectory) -> String {
    let mut s = String::from("t,norm_u,norm_p,constraint_residual\n");
    for d in step_diagnostics(sys, traj) {
        let _ = writeln!(s, "{:.6},{:.12e},{:.12e},{:.3e}", d.t, d.norm_u, d.norm_p, d.constraint_residual);
    }
    s
}
