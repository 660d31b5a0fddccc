//! Boundary diffusion coefficients `a_ε(s)` as functions of arclength.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mesh::{BoundaryMesh, Topology};

/// Quadrature panels for the smooth field are at most `ε / PANELS_PER_PERIOD`.
pub const PANELS_PER_PERIOD: f64 = 128.0;

const GAUSS3_X: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS3_W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

#[derive(Clone, Debug, PartialEq)]
pub enum CoefficientKind {
    Constant(f64),
    /// `1 / (2 + cos(2π s / ε))`.
    Smooth,
    /// Constant on cells `[kε, (k+1)ε)`.
    Piecewise { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coefficient {
    pub kind: CoefficientKind,
    pub epsilon: f64,
    pub seed: Option<u64>,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// Parameter domain `[0, total_length]` of piecewise fields.
    pub total_length: f64,
    /// Whether arguments wrap modulo `total_length`.
    pub periodic: bool,
}

/// Serializable description used in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoefficientSpec {
    Constant { value: f64 },
    Smooth { epsilon: f64 },
    Random { epsilon: f64, seed: u64 },
}

impl CoefficientSpec {
    /// Builds the field on the arc covered by `bm` (closed loops wrap).
    pub fn build(&self, topology: Topology, total_length: f64) -> Result<Coefficient> {
        let mut c = match *self {
            CoefficientSpec::Constant { value } => Coefficient::constant(value)?,
            CoefficientSpec::Smooth { epsilon } => make_smooth_coefficient(epsilon)?,
            CoefficientSpec::Random { epsilon, seed } => make_random_coefficient(epsilon, seed, total_length)?,
        };
        c.periodic = topology == Topology::ClosedLoop;
        Ok(c)
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            CoefficientSpec::Constant { .. } => None,
            CoefficientSpec::Smooth { epsilon } | CoefficientSpec::Random { epsilon, .. } => Some(epsilon),
        }
    }
}

/// splitmix64 draw mapped to `[0, 1)` by keeping the top 53 bits.
pub fn unit_draw(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn make_smooth_coefficient(epsilon: f64) -> Result<Coefficient> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(Coefficient {
        kind: CoefficientKind::Smooth,
        epsilon,
        seed: None,
        lower_bound: 1.0 / 3.0,
        upper_bound: 1.0,
        total_length: f64::INFINITY,
        periodic: false,
    })
}

pub fn make_random_coefficient(epsilon: f64, seed: u64, total_length: f64) -> Result<Coefficient> {
    if !(epsilon > 0.0) || !(total_length > 0.0) {
        return Err(invalid("epsilon and total length must be positive"));
    }
    let cells = (total_length / epsilon).round();
    if (cells * epsilon - total_length).abs() > 1e-12 || cells < 1.0 {
        return Err(invalid(format!("epsilon {epsilon} does not divide the length {total_length}")));
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let values: Vec<f64> = (0..cells as usize).map(|_| 0.1 + 0.9 * unit_draw(&mut rng)).collect();
    let mut c = Coefficient::piecewise(epsilon, values)?;
    c.seed = Some(seed);
    Ok(c)
}

pub fn eval_coefficient(c: &Coefficient, s: f64) -> Result<f64> {
    c.eval(s)
}

impl Coefficient {
    pub fn constant(value: f64) -> Result<Self> {
        if !(value > 0.0) {
            return Err(invalid(format!("constant coefficient must be positive, got {value}")));
        }
        Ok(Self {
            kind: CoefficientKind::Constant(value),
            epsilon: f64::INFINITY,
            seed: None,
            lower_bound: value,
            upper_bound: value,
            total_length: f64::INFINITY,
            periodic: false,
        })
    }

    /// Piecewise-constant field with the given per-cell values on cells of
    /// length `cell`.
    pub fn piecewise(cell: f64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|&v| !(v > 0.0)) || !(cell > 0.0) {
            return Err(invalid("piecewise coefficient needs positive cells and values"));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(0.0, f64::max);
        let total_length = cell * values.len() as f64;
        Ok(Self {
            kind: CoefficientKind::Piecewise { values },
            epsilon: cell,
            seed: None,
            lower_bound: lo,
            upper_bound: hi,
            total_length,
            periodic: false,
        })
    }

    /// Field constant on each element of `bm`, equal to the element mean of
    /// `self`.
    pub fn element_means(&self, bm: &BoundaryMesh) -> Result<Self> {
        let values = (0..bm.num_elements())
            .map(|e| {
                let (a, b) = bm.element_bounds(e);
                self.integral(a, b) / (b - a)
            })
            .collect();
        let mut c = Self::piecewise(bm.h(), values)?;
        c.periodic = bm.topology == Topology::ClosedLoop;
        Ok(c)
    }

    pub fn alpha(&self) -> f64 {
        self.lower_bound
    }

    fn cell_index(&self, s: f64, ncells: usize) -> Result<usize> {
        let mut x = s;
        if self.periodic {
            x = x.rem_euclid(self.total_length);
        } else if s < 0.0 || s > self.total_length {
            return Err(Error::OutOfDomain { s, length: self.total_length });
        }
        Ok(((x / self.epsilon).floor() as usize).min(ncells - 1))
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        Ok(match &self.kind {
            CoefficientKind::Constant(v) => *v,
            CoefficientKind::Smooth => {
                let x = s / self.epsilon;
                1.0 / (2.0 + (2.0 * std::f64::consts::PI * (x - x.floor())).cos())
            }
            CoefficientKind::Piecewise { values } => values[self.cell_index(s, values.len())?],
        })
    }

    fn piecewise_integral(&self, values: &[f64], a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let eps = self.epsilon;
        let n = values.len();
        let lookup = |k: i64| values[(k.rem_euclid(n as i64)) as usize];
        let k0 = (a / eps).floor() as i64;
        let k1 = ((b / eps).ceil() as i64).max(k0 + 1);
        let mut sum = 0.0;
        for k in k0..k1 {
            let lo = a.max(k as f64 * eps);
            let hi = b.min((k + 1) as f64 * eps);
            if hi > lo {
                let kk = if self.periodic { k } else { k.clamp(0, n as i64 - 1) };
                sum += f(lookup(kk)) * (hi - lo);
            }
        }
        sum
    }

    fn gauss_integral(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let panels = ((b - a) * PANELS_PER_PERIOD / self.epsilon).ceil().max(1.0) as usize;
        let panels = panels.next_power_of_two();
        let w = (b - a) / panels as f64;
        let mut sum = 0.0;
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * w;
            for q in 0..3 {
                let s = mid + 0.5 * w * GAUSS3_X[q];
                sum += GAUSS3_W[q] * f(s);
            }
        }
        0.5 * w * sum
    }

    /// `∫_a^b a_ε ds`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match &self.kind {
            CoefficientKind::Constant(v) => v * (b - a),
            CoefficientKind::Smooth => self.gauss_integral(a, b, |s| self.eval(s).unwrap()),
            CoefficientKind::Piecewise { values } => self.piecewise_integral(values, a, b, |v| v),
        }
    }

    /// `∫_a^b a_ε⁻¹ ds`.
    pub fn reciprocal_integral(&self, a: f64, b: f64) -> f64 {
        match &self.kind {
            CoefficientKind::Constant(v) => (b - a) / v,
            CoefficientKind::Smooth => self.gauss_integral(a, b, |s| 1.0 / self.eval(s).unwrap()),
            CoefficientKind::Piecewise { values } => self.piecewise_integral(values, a, b, |v| 1.0 / v),
        }
    }
}

/// Per element `(|T|⁻¹ ∫_T a_ε⁻¹)⁻¹`.
pub fn harmonic_element_averages(c: &Coefficient, bm: &BoundaryMesh) -> Vec<f64> {
    (0..bm.num_elements())
        .map(|e| {
            let (a, b) = bm.element_bounds(e);
            (b - a) / c.reciprocal_integral(a, b)
        })
        .collect()
}

/// Per element `|T|⁻¹ ∫_T a_ε`.
pub fn arithmetic_element_averages(c: &Coefficient, bm: &BoundaryMesh) -> Vec<f64> {
    (0..bm.num_elements())
        .map(|e| {
            let (a, b) = bm.element_bounds(e);
            c.integral(a, b) / (b - a)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    // Reference splitmix64, written out independently of the crate.
    fn splitmix(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    // Antiderivative of 1/(2+cos(2πs/ε)), continuous across branches.
    fn smooth_antiderivative(s: f64, eps: f64) -> f64 {
        let x = 2.0 * PI * s / eps;
        let k = ((x + PI) / (2.0 * PI)).floor();
        let y = x - 2.0 * PI * k;
        let r3 = 3f64.sqrt();
        let base = if (y.abs() - PI).abs() < 1e-15 { PI.copysign(y) / r3 } else { 2.0 / r3 * ((y / 2.0).tan() / r3).atan() };
        eps / (2.0 * PI) * (base + k * 2.0 * PI / r3)
    }

    #[test]
    fn smooth_values() {
        let c = make_smooth_coefficient(0.125).unwrap();
        assert_eq!(c.eval(0.0).unwrap(), 1.0 / 3.0);
        assert!((c.eval(0.0625).unwrap() - 1.0).abs() < 1e-15);
        assert!((c.eval(0.125 / 4.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!((c.lower_bound, c.upper_bound), (1.0 / 3.0, 1.0));
        assert!(make_smooth_coefficient(0.0).is_err());
        assert!(make_smooth_coefficient(-1.0).is_err());
    }

    #[test]
    fn random_is_reproducible_splitmix() {
        let a = make_random_coefficient(0.25, 42, 1.0).unwrap();
        let b = make_random_coefficient(0.25, 42, 1.0).unwrap();
        assert_eq!(a, b);
        let CoefficientKind::Piecewise { values } = &a.kind else { panic!() };
        assert_eq!(values.len(), 4);
        let mut st = 42u64;
        for &v in values {
            let u = (splitmix(&mut st) >> 11) as f64 / 9_007_199_254_740_992.0;
            assert_eq!(v, 0.1 + 0.9 * u);
        }
        let mut st = 0u64;
        assert_eq!(splitmix(&mut st), 0xe220_a839_7b1d_cdaf);
        assert!(values.iter().all(|&v| (0.1..=1.0).contains(&v)));
        assert_eq!(a.alpha(), values.iter().copied().fold(f64::INFINITY, f64::min));
        assert!(make_random_coefficient(0.3, 1, 1.0).is_err());
    }

    #[test]
    fn random_lookup_is_right_continuous() {
        let c = Coefficient::piecewise(0.25, vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        assert_eq!(c.eval(0.25).unwrap(), 0.4);
        assert_eq!(c.eval(0.3).unwrap(), 0.4);
        assert_eq!(c.eval(1.0).unwrap(), 0.8);
        assert!(c.eval(1.01).is_err());
        let mut p = c.clone();
        p.periodic = true;
        assert_eq!(p.eval(1.1).unwrap(), 0.2);
    }

    #[test]
    fn constant_field() {
        let c = Coefficient::constant(0.1).unwrap();
        assert_eq!(c.eval(3.7).unwrap(), 0.1);
        let bm = BoundaryMesh::closed_loop(3).unwrap();
        assert!(harmonic_element_averages(&c, &bm).iter().all(|&v| (v - 0.1).abs() < 1e-16));
    }

    #[test]
    fn smooth_quadrature_against_antiderivative() {
        let eps = 1.0 / 64.0;
        let c = make_smooth_coefficient(eps).unwrap();
        for &(a, b) in &[(0.0, 0.25), (0.1, 0.1 + 1.0 / 512.0), (0.3, 0.73), (1.5, 1.625)] {
            let exact = smooth_antiderivative(b, eps) - smooth_antiderivative(a, eps);
            assert!((c.integral(a, b) - exact).abs() <= 1e-12 * exact, "{a} {b} {}", (c.integral(a, b) - exact) / exact);
            let recip = 2.0 * (b - a) + eps / (2.0 * PI) * ((2.0 * PI * b / eps).sin() - (2.0 * PI * a / eps).sin());
            assert!((c.reciprocal_integral(a, b) - recip).abs() <= 1e-12 * recip);
        }
    }

    #[test]
    fn full_period_harmonic_average_is_half() {
        // ∫ (2 + cos) over whole periods is 2·length, so the harmonic mean is 1/2.
        let eps = 1.0 / 16.0;
        let c = make_smooth_coefficient(eps).unwrap();
        let bm = BoundaryMesh::bottom_edge(4, [true, true]).unwrap();
        for v in harmonic_element_averages(&c, &bm) {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn two_piece_harmonic_mean() {
        let (a, b) = (0.3, 0.9);
        let c = Coefficient::piecewise(0.5, vec![a, b]).unwrap();
        let h = harmonic_element_averages(&c, &BoundaryMesh::bottom_edge(1, [true, true]).unwrap());
        assert!((h[0] - 2.0 * a * b / (a + b)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn bounds_hold(seed in any::<u64>(), s in 0.0f64..1.0) {
            let c = make_random_coefficient(1.0 / 64.0, seed, 1.0).unwrap();
            let v = c.eval(s).unwrap();
            prop_assert!(c.lower_bound <= v && v <= c.upper_bound);
            prop_assert!(c.lower_bound >= 0.1 && c.upper_bound <= 1.0);
            let sm = make_smooth_coefficient(1.0 / 64.0).unwrap();
            let w = sm.eval(4.0 * s).unwrap();
            prop_assert!(1.0 / 3.0 - 1e-15 <= w && w <= 1.0 + 1e-15);
        }

        #[test]
        fn smooth_is_periodic(j in 0u32..(1 << 22), k in 1u32..8) {
            // dyadic arguments so that s + ε is itself exact
            let s = f64::from(j) / f64::from(1u32 << 20);
            let eps = 1.0 / f64::from(1u32 << k);
            let c = make_smooth_coefficient(eps).unwrap();
            prop_assert!((c.eval(s).unwrap() - c.eval(s + eps).unwrap()).abs() <= 1e-14);
        }

        #[test]
        fn harmonic_below_arithmetic(seed in any::<u64>(), n in 1usize..8) {
            let c = make_random_coefficient(1.0 / 64.0, seed, 1.0).unwrap();
            let bm = BoundaryMesh::bottom_edge(n, [true, true]).unwrap();
            let h = harmonic_element_averages(&c, &bm);
            let a = arithmetic_element_averages(&c, &bm);
            for (x, y) in h.iter().zip(&a) {
                prop_assert!(*x <= *y * (1.0 + 1e-14));
                prop_assert!(*x < *y);
            }
        }
    }

    #[test]
    fn million_sample_bounds() {
        let c = make_random_coefficient(1.0 / 512.0, 7, 4.0).unwrap();
        let sm = make_smooth_coefficient(1.0 / 512.0).unwrap();
        let mut rng = SplitMix64::seed_from_u64(99);
        for _ in 0..1_000_000 {
            let s = 4.0 * unit_draw(&mut rng);
            let v = c.eval(s).unwrap();
            assert!(c.lower_bound <= v && v <= c.upper_bound);
            let w = sm.eval(s).unwrap();
            assert!(1.0 / 3.0 - 1e-15 <= w && w <= 1.0 + 1e-15);
        }
    }
}
