//! Configuration-driven convergence studies: per-H rows against one shared
//! reference, written out as CSV, JSON and SVG.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coefficients::{Coefficient, CoefficientSpec};
use crate::error::{invalid, Error, Result};
use crate::errors::{
    compute_reference, default_patch_layers, error_norms, least_squares_order, mean_order, observed_orders, report_csv,
    ErrorRow, ReferenceSolution,
};
use crate::lod::{compute_correctors, lod_basis_matrix, CorrectorConfig, CorrectorForm, InterpolationKind};
use crate::mesh::{build_bulk_mesh_with, refine_boundary, restrict_to_boundary, BoundarySelector};
use crate::par::Execution;
use crate::pdae::{assemble_system, Formulation, Problem, Variant};
use crate::plot::{render_svg, PlotSeries, PlotStyle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Exp1Smooth,
    Exp1Random,
    Exp2Mixed,
    Exp3BoundaryRefine,
    Custom,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.into())).map_err(|_| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Right-hand sides, initial value and dynamic boundary part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSet {
    /// Whole boundary dynamic, `f ≡ 1`, `g = t`, `u₀ = sin(πx)cos(5πy/2 + 1)`.
    FullBoundary,
    /// Bottom edge dynamic, `f ≡ 1`, `g ≡ 0`, `u₀ = sin(πx)cos(5πy/2)`.
    BottomEdge,
    /// Bottom edge dynamic, `f ≡ 1`, `g ≡ 0`, `u₀ = sin(3πx)cos(5πy/2 + 1)`.
    BottomEdgeShifted,
}

impl DataSet {
    pub fn selector(self) -> BoundarySelector {
        match self {
            DataSet::FullBoundary => BoundarySelector::FullBoundary,
            _ => BoundarySelector::BottomEdge,
        }
    }

    pub fn problem(self, kappa: f64, tau: f64, t_end: f64) -> Problem {
        let (u0, g): (Box<dyn Fn(f64, f64) -> f64 + Sync>, Box<dyn Fn(f64, f64) -> f64 + Sync>) = match self {
            DataSet::FullBoundary => {
                (Box::new(|x, y| (PI * x).sin() * (2.5 * PI * y + 1.0).cos()), Box::new(|_, t| t))
            }
            DataSet::BottomEdge => (Box::new(|x, y| (PI * x).sin() * (2.5 * PI * y).cos()), Box::new(|_, _| 0.0)),
            DataSet::BottomEdgeShifted => {
                (Box::new(|x, y| (3.0 * PI * x).sin() * (2.5 * PI * y + 1.0).cos()), Box::new(|_, _| 0.0))
            }
        };
        Problem { selector: self.selector(), kappa, tau, t_end, u0, f: Box::new(|_, _, _| 1.0), g }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunVariant {
    UniformFem,
    Pglod,
}

/// Patch layers as a function of `H_Γ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum MPolicy {
    Fixed { m: usize },
    /// `m = ⌈log₂(1/H_Γ)⌉ + offset`.
    LogScaled { offset: usize },
}

impl MPolicy {
    pub fn layers(self, h_gamma: f64) -> usize {
        match self {
            MPolicy::Fixed { m } => m,
            MPolicy::LogScaled { offset } => default_patch_layers(h_gamma) + offset,
        }
    }

    fn tag(self) -> String {
        match self {
            MPolicy::Fixed { m } => format!("m{m}"),
            MPolicy::LogScaled { offset: 0 } => "mlog".into(),
            MPolicy::LogScaled { offset } => format!("mlog+{offset}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorField {
    UL2,
    PL2,
    UH1,
    PH1,
    PFullH1,
    PL2Projected,
}

impl ErrorField {
    pub const ALL: [ErrorField; 6] = [
        ErrorField::UL2,
        ErrorField::PL2,
        ErrorField::UH1,
        ErrorField::PH1,
        ErrorField::PFullH1,
        ErrorField::PL2Projected,
    ];

    pub fn get(self, r: &ErrorRow) -> f64 {
        match self {
            ErrorField::UL2 => r.err_u_l2,
            ErrorField::PL2 => r.err_p_l2,
            ErrorField::UH1 => r.err_u_h1,
            ErrorField::PH1 => r.err_p_h1,
            ErrorField::PFullH1 => r.err_p_full_h1,
            ErrorField::PL2Projected => r.err_p_l2_projected,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorField::UL2 => "err_u_L2",
            ErrorField::PL2 => "err_p_L2",
            ErrorField::UH1 => "err_u_H1",
            ErrorField::PH1 => "err_p_H1",
            ErrorField::PFullH1 => "err_p_full_H1",
            ErrorField::PL2Projected => "err_p_L2_projected",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotConfig {
    pub fields: Vec<ErrorField>,
    pub guide_slopes: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub data: DataSet,
    pub coefficient: CoefficientSpec,
    pub kappa: f64,
    pub tau: f64,
    pub t_end: f64,
    /// Bulk mesh sizes `H_Ω = 2^-k`.
    pub h_exponents: Vec<u32>,
    /// Uniform boundary refinements applied on top of each bulk trace mesh
    /// (standard FEM only).
    pub boundary_levels: Vec<u32>,
    pub variants: Vec<RunVariant>,
    /// One PG-LOD series per policy.
    pub m_policies: Vec<MPolicy>,
    pub interpolation: InterpolationKind,
    pub form: CorrectorForm,
    pub n_ref: usize,
    /// Extra uniform refinements of the reference boundary mesh.
    pub reference_boundary_levels: u32,
    /// Minimal reference boundary cells per coefficient period.
    pub reference_cells_per_period: f64,
    pub memory_budget_mb: f64,
    pub plot: PlotConfig,
    pub execution: Execution,
}

/// Seed of the random coefficient draws used by the default configurations.
pub const DEFAULT_SEED: u64 = 2024;

impl ExperimentConfig {
    /// Desk-scale defaults.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let eps = 2f64.powi(-6);
        // random draws degenerate at H = ε; keep H_min = 2ε as in the long mode
        let eps_random = 2f64.powi(-7);
        let base = ExperimentConfig {
            experiment: kind,
            data: DataSet::FullBoundary,
            coefficient: CoefficientSpec::Smooth { epsilon: eps },
            kappa: 0.1,
            tau: 0.01,
            t_end: 0.1,
            h_exponents: (2..=6).collect(),
            boundary_levels: vec![0],
            variants: vec![RunVariant::UniformFem, RunVariant::Pglod],
            m_policies: vec![MPolicy::LogScaled { offset: 0 }],
            interpolation: InterpolationKind::Nodal,
            form: CorrectorForm::Plain,
            n_ref: 1 << 9,
            reference_boundary_levels: 0,
            reference_cells_per_period: 4.0,
            memory_budget_mb: 8192.0,
            plot: PlotConfig { fields: vec![ErrorField::UL2, ErrorField::PL2], guide_slopes: vec![2.0] },
            execution: Execution::default(),
        };
        match kind {
            ExperimentKind::Exp1Smooth | ExperimentKind::Custom => base,
            ExperimentKind::Exp1Random => ExperimentConfig {
                coefficient: CoefficientSpec::Random { epsilon: eps_random, seed: DEFAULT_SEED },
                plot: PlotConfig { fields: vec![ErrorField::UL2, ErrorField::PL2], guide_slopes: vec![2.0, 0.5] },
                ..base
            },
            ExperimentKind::Exp2Mixed => ExperimentConfig {
                data: DataSet::BottomEdge,
                coefficient: CoefficientSpec::Random { epsilon: eps_random, seed: DEFAULT_SEED },
                variants: vec![RunVariant::Pglod],
                m_policies: vec![MPolicy::LogScaled { offset: 0 }, MPolicy::Fixed { m: 1 }, MPolicy::Fixed { m: 2 }],
                interpolation: InterpolationKind::Clement,
                form: CorrectorForm::Shifted,
                plot: PlotConfig { fields: vec![ErrorField::PFullH1], guide_slopes: vec![1.0] },
                ..base
            },
            ExperimentKind::Exp3BoundaryRefine => ExperimentConfig {
                data: DataSet::BottomEdgeShifted,
                coefficient: CoefficientSpec::Smooth { epsilon: 0.25 },
                h_exponents: vec![3],
                boundary_levels: (0..=4).collect(),
                variants: vec![RunVariant::UniformFem],
                plot: PlotConfig { fields: vec![ErrorField::UL2, ErrorField::PL2, ErrorField::PH1], guide_slopes: vec![] },
                ..base
            },
        }
    }

    /// Long-mode parameters: `ε = 2⁻⁹`, `H` down to `2⁻⁸`,
    /// `n_ref = 2¹⁰`.
    pub fn paper_scale(kind: ExperimentKind) -> Self {
        let mut c = Self::defaults(kind);
        let eps = 2f64.powi(-9);
        c.coefficient = match c.coefficient {
            CoefficientSpec::Smooth { epsilon } if epsilon < 0.25 => CoefficientSpec::Smooth { epsilon: eps },
            CoefficientSpec::Random { seed, .. } => CoefficientSpec::Random { epsilon: eps, seed },
            other => other,
        };
        c.n_ref = 1 << 10;
        // 2¹⁰ boundary cells would see ε = 2⁻⁹ only twice per period
        if let Some(e) = c.coefficient.epsilon() {
            while ((c.n_ref << c.reference_boundary_levels) as f64) * e < c.reference_cells_per_period {
                c.reference_boundary_levels += 1;
            }
        }
        if kind == ExperimentKind::Exp3BoundaryRefine {
            c.boundary_levels = (0..=7).collect();
        } else {
            c.h_exponents = (2..=8).collect();
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.h_exponents.is_empty() || self.boundary_levels.is_empty() || self.variants.is_empty() {
            return Err(Error::Config("empty mesh or variant list".into()));
        }
        if !(self.kappa > 0.0 && self.tau > 0.0 && self.t_end > 0.0) {
            return Err(Error::Config("kappa, tau and t_end must be positive".into()));
        }
        if !self.n_ref.is_power_of_two() {
            return Err(Error::Config("n_ref must be a power of two".into()));
        }
        if !(self.reference_cells_per_period >= 1.0) {
            return Err(Error::Config("reference_cells_per_period must be at least 1".into()));
        }
        for &k in &self.h_exponents {
            for &l in &self.boundary_levels {
                if (1usize << (k + l)) > self.n_ref << self.reference_boundary_levels {
                    return Err(Error::Config(format!("H_Γ = 2^-{} is finer than the reference", k + l)));
                }
            }
        }
        if self.variants.contains(&RunVariant::Pglod) {
            if self.m_policies.is_empty() {
                return Err(Error::Config("PG-LOD needs at least one m policy".into()));
            }
            if self.boundary_levels != [0] {
                return Err(Error::Config("PG-LOD runs on the bulk trace mesh (boundary_levels = [0])".into()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses TOML or JSON; keys not given are taken from the defaults of
    /// the named experiment.
    pub fn parse(text: &str) -> Result<Self> {
        let user: Value = match serde_json::from_str::<Value>(text) {
            Ok(v) => v,
            Err(_) => {
                let t: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
                serde_json::to_value(t).map_err(|e| Error::Config(e.to_string()))?
            }
        };
        let kind = match user.get("experiment") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("experiment: {e}")))?,
            None => ExperimentKind::Custom,
        };
        let mut base = serde_json::to_value(Self::defaults(kind)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                // tagged enums are replaced whole
                let whole = v.get("kind").is_some() || v.get("policy").is_some();
                match b.get_mut(&k) {
                    Some(slot) if !whole => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RowFailure {
    pub h_exponent: u32,
    pub boundary_level: u32,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesResult {
    pub label: String,
    pub variant: RunVariant,
    pub policy: Option<MPolicy>,
    pub rows: Vec<ErrorRow>,
    pub seconds: Vec<f64>,
    pub failures: Vec<RowFailure>,
    /// Pairwise orders per error column.
    pub orders: BTreeMap<String, Vec<Option<f64>>>,
    /// Mean order over the last three halvings.
    pub last3: BTreeMap<String, Option<f64>>,
    pub least_squares_last4: BTreeMap<String, Option<f64>>,
}

impl SeriesResult {
    pub fn column(&self, f: ErrorField) -> Vec<f64> {
        self.rows.iter().map(|r| f.get(r)).collect()
    }

    pub fn order_last3(&self, f: ErrorField) -> Option<f64> {
        self.last3.get(f.name()).copied().flatten()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub reference_seconds: f64,
    pub total_seconds: f64,
    pub series: Vec<SeriesResult>,
}

impl ExperimentOutcome {
    pub fn has_failures(&self) -> bool {
        self.series.iter().any(|s| !s.failures.is_empty())
    }

    pub fn series(&self, label: &str) -> Option<&SeriesResult> {
        self.series.iter().find(|s| s.label == label)
    }

    /// Series written to `report.csv`: the first PG-LOD series if present.
    pub fn primary(&self) -> &SeriesResult {
        self.series.iter().find(|s| s.variant == RunVariant::Pglod).unwrap_or(&self.series[0])
    }
}

fn series_specs(cfg: &ExperimentConfig) -> Vec<(String, RunVariant, Option<MPolicy>)> {
    let mut out = Vec::new();
    for &v in &cfg.variants {
        match v {
            RunVariant::UniformFem => out.push(("uniform-fem".to_string(), v, None)),
            RunVariant::Pglod => {
                for &p in &cfg.m_policies {
                    let label = if cfg.m_policies.len() == 1 { "pglod".to_string() } else { format!("pglod-{}", p.tag()) };
                    out.push((label, v, Some(p)));
                }
            }
        }
    }
    out
}

/// Builds the boundary coefficient for the experiment's boundary part.
pub fn build_coefficient(cfg: &ExperimentConfig) -> Result<Coefficient> {
    let sel = cfg.data.selector();
    let bm = restrict_to_boundary(&build_bulk_mesh_with(1, sel)?, sel);
    cfg.coefficient.build(bm.topology, bm.total_length())
}

/// One row: bulk mesh `2^-k`, boundary refined `level` times.
pub fn run_row(
    cfg: &ExperimentConfig,
    problem: &Problem,
    c: &Coefficient,
    reference: &ReferenceSolution,
    variant: RunVariant,
    policy: Option<MPolicy>,
    k: u32,
    level: u32,
    exec: Execution,
) -> Result<ErrorRow> {
    let mesh = build_bulk_mesh_with(1 << k, problem.selector)?;
    let trace = restrict_to_boundary(&mesh, problem.selector);
    let sys = match variant {
        RunVariant::UniformFem => {
            let q = refine_boundary(&trace, level);
            assemble_system(&mesh, &q, c, cfg.kappa, Variant::StandardFem, None, exec)?
        }
        RunVariant::Pglod => {
            if level != 0 {
                return Err(invalid("PG-LOD rows use the bulk trace mesh"));
            }
            let fine = reference.boundary_mesh();
            let m = policy.ok_or_else(|| invalid("PG-LOD row without m policy"))?.layers(trace.h());
            let cc = CorrectorConfig { kind: cfg.interpolation, form: cfg.form, m };
            let cb = compute_correctors(fine, &trace, c, cc, exec)?;
            let ls = lod_basis_matrix(&cb, fine, &trace)?;
            assemble_system(&mesh, &trace, c, cfg.kappa, Variant::Pglod, Some((ls, fine)), exec)?
        }
    };
    let traj = problem.integrate(&sys, Formulation::Saddle)?;
    error_norms(&sys, &traj, reference)
}

fn summarize(label: String, variant: RunVariant, policy: Option<MPolicy>, results: Vec<(u32, u32, Result<ErrorRow>, f64)>) -> SeriesResult {
    let mut s = SeriesResult {
        label,
        variant,
        policy,
        rows: Vec::new(),
        seconds: Vec::new(),
        failures: Vec::new(),
        orders: BTreeMap::new(),
        last3: BTreeMap::new(),
        least_squares_last4: BTreeMap::new(),
    };
    for (k, l, r, t) in results {
        match r {
            Ok(row) => {
                s.rows.push(row);
                s.seconds.push(t);
            }
            Err(e) => s.failures.push(RowFailure { h_exponent: k, boundary_level: l, message: e.to_string() }),
        }
    }
    let hs: Vec<f64> = s.rows.iter().map(|r| r.h_gamma).collect();
    for f in ErrorField::ALL {
        let e = s.column(f);
        s.orders.insert(f.name().into(), observed_orders(&e));
        s.last3.insert(f.name().into(), mean_order(&e, 3));
        s.least_squares_last4.insert(f.name().into(), least_squares_order(&hs, &e, 4));
    }
    s
}

/// Runs every series of `cfg` against one shared reference.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let exec = cfg.execution;
    let problem = cfg.data.problem(cfg.kappa, cfg.tau, cfg.t_end);
    let c = build_coefficient(cfg)?;
    let reference = compute_reference(
        &problem,
        &c,
        cfg.n_ref,
        cfg.reference_boundary_levels,
        cfg.reference_cells_per_period,
        cfg.memory_budget_mb,
        exec,
    )?;
    let reference_seconds = start.elapsed().as_secs_f64();
    let specs = series_specs(cfg);
    let mut jobs = Vec::new();
    for (si, (_, v, p)) in specs.iter().enumerate() {
        for &k in &cfg.h_exponents {
            for &l in &cfg.boundary_levels {
                jobs.push((si, *v, *p, k, l));
            }
        }
    }
    let results = exec.map(jobs.len(), |j| {
        let (_, v, p, k, l) = jobs[j];
        let t = Instant::now();
        let r = run_row(cfg, &problem, &c, &reference, v, p, k, l, Execution::Sequential);
        (r, t.elapsed().as_secs_f64())
    });
    let mut grouped: Vec<Vec<(u32, u32, Result<ErrorRow>, f64)>> = specs.iter().map(|_| Vec::new()).collect();
    for ((si, _, _, k, l), (r, t)) in jobs.into_iter().zip(results) {
        grouped[si].push((k, l, r, t));
    }
    let series = specs
        .into_iter()
        .zip(grouped)
        .map(|((label, v, p), res)| summarize(label, v, p, res))
        .collect();
    Ok(ExperimentOutcome { config: cfg.clone(), reference_seconds, total_seconds: start.elapsed().as_secs_f64(), series })
}

pub fn convergence_svg(outcome: &ExperimentOutcome) -> Result<String> {
    let cfg = &outcome.config;
    let mut series = Vec::new();
    for s in &outcome.series {
        for &f in &cfg.plot.fields {
            series.push(PlotSeries {
                label: format!("{} {}", s.label, f.name()),
                points: s.rows.iter().map(|r| (r.h_gamma, f.get(r))).collect(),
            });
        }
    }
    let x_label = if cfg.boundary_levels.len() > 1 { "H_Gamma" } else { "H" };
    let style = PlotStyle {
        title: serde_json::to_value(cfg.experiment).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
        x_label: x_label.into(),
        y_label: "error".into(),
        guide_slopes: cfg.plot.guide_slopes.clone(),
        ..Default::default()
    };
    render_svg(&series, &style)
}

/// Writes `report.csv`, one `report_<label>.csv` per series,
/// `summary.json` and `convergence.svg` into `dir`.
pub fn write_bundle(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), report_csv(&outcome.primary().rows))?;
    for s in &outcome.series {
        std::fs::write(dir.join(format!("report_{}.csv", s.label)), report_csv(&s.rows))?;
    }
    let summary = serde_json::to_string_pretty(outcome).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), summary)?;
    if outcome.series.iter().any(|s| !s.rows.is_empty()) {
        std::fs::write(dir.join("convergence.svg"), convergence_svg(outcome)?)?;
    }
    Ok(())
}
