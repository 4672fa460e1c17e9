//! Scalar speed profiles `Φ`, numerical checks of their structural
//! conditions, and selection of the applicable convergence cases.

use serde::{Deserialize, Serialize, Serializer};

use crate::curvature::{ConcavityClass, FConditionReport};
use crate::error::{Error, Result};

/// A profile `Φ: [0, ∞) → ℝ` composed with the speed function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiProfile {
    /// `Σ cᵢ s^{kᵢ}` with `cᵢ, kᵢ > 0`.
    PowerSum { terms: Vec<(f64, f64)> },
    /// `ln(1 + s)`.
    Log1p,
    /// `eˢ − 1`.
    Expm1,
    /// Sum of other profiles.
    SumOf { parts: Vec<PhiProfile> },
}

/// `(Φ, Φ′, Φ″)` at one argument.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhiValues {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

fn power_term(c: f64, k: f64, s: f64) -> [f64; 3] {
    let value = c * s.powf(k);
    let d1 = if k == 1.0 { c } else { c * k * s.powf(k - 1.0) };
    let d2 = if k == 1.0 {
        0.0
    } else if k == 2.0 {
        2.0 * c
    } else {
        c * k * (k - 1.0) * s.powf(k - 2.0)
    };
    [value, d1, d2]
}

impl PhiProfile {
    pub fn power_sum(terms: Vec<(f64, f64)>) -> Result<Self> {
        let p = PhiProfile::PowerSum { terms };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PhiProfile::PowerSum { terms } => {
                if terms.is_empty() {
                    return Err(Error::InvalidProfile("power sum has no terms".into()));
                }
                for &(c, k) in terms {
                    if !(c > 0.0 && c.is_finite() && k > 0.0 && k.is_finite()) {
                        return Err(Error::InvalidProfile(format!(
                            "power sum term ({c}, {k}) needs positive finite coefficient and exponent"
                        )));
                    }
                }
                Ok(())
            }
            PhiProfile::Log1p | PhiProfile::Expm1 => Ok(()),
            PhiProfile::SumOf { parts } => {
                if parts.is_empty() {
                    return Err(Error::InvalidProfile("sum has no parts".into()));
                }
                parts.iter().try_for_each(PhiProfile::validate)
            }
        }
    }

    /// `[Φ, Φ′, Φ″]` without argument checks.
    pub fn derivatives(&self, s: f64) -> [f64; 3] {
        match self {
            PhiProfile::PowerSum { terms } => terms.iter().fold([0.0; 3], |acc, &(c, k)| {
                let t = power_term(c, k, s);
                [acc[0] + t[0], acc[1] + t[1], acc[2] + t[2]]
            }),
            PhiProfile::Log1p => {
                let q = 1.0 / (1.0 + s);
                [s.ln_1p(), q, -q * q]
            }
            PhiProfile::Expm1 => {
                let e = s.exp();
                [s.exp_m1(), e, e]
            }
            PhiProfile::SumOf { parts } => parts.iter().fold([0.0; 3], |acc, p| {
                let t = p.derivatives(s);
                [acc[0] + t[0], acc[1] + t[1], acc[2] + t[2]]
            }),
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        self.derivatives(s)[0]
    }

    pub fn eval_phi(&self, s: f64) -> Result<PhiValues> {
        if s < 0.0 || s.is_nan() {
            return Err(Error::NegativeArgument(s));
        }
        let [value, d1, d2] = self.derivatives(s);
        Ok(PhiValues { value, d1, d2 })
    }

    /// Rough natural logarithm of the magnitude of `Φ` at `s > 0`, used to
    /// pick a common scale before overflow.
    fn log_magnitude(&self, s: f64) -> f64 {
        match self {
            PhiProfile::PowerSum { terms } => {
                terms.iter().map(|&(c, k)| c.ln() + k * s.ln()).fold(f64::NEG_INFINITY, f64::max)
            }
            PhiProfile::Log1p => s.ln_1p().ln(),
            PhiProfile::Expm1 => s,
            PhiProfile::SumOf { parts } => {
                parts.iter().map(|p| p.log_magnitude(s)).fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// `[Φ, Φ′, Φ″]·e^{−scale}` evaluated without intermediate overflow.
    fn scaled(&self, s: f64, scale: f64) -> [f64; 3] {
        if scale == 0.0 {
            return self.derivatives(s);
        }
        match self {
            PhiProfile::PowerSum { terms } => terms.iter().fold([0.0; 3], |acc, &(c, k)| {
                let ls = s.ln();
                let base = c.ln() - scale;
                let v = (base + k * ls).exp();
                let d1 = k * (base + (k - 1.0) * ls).exp();
                let d2 = if k == 1.0 { 0.0 } else { k * (k - 1.0) * (base + (k - 2.0) * ls).exp() };
                [acc[0] + v, acc[1] + d1, acc[2] + d2]
            }),
            PhiProfile::Log1p => {
                let w = (-scale).exp();
                let q = 1.0 / (1.0 + s);
                [s.ln_1p() * w, q * w, -q * q * w]
            }
            PhiProfile::Expm1 => {
                let e = (s - scale).exp();
                [e - (-scale).exp(), e, e]
            }
            PhiProfile::SumOf { parts } => parts.iter().fold([0.0; 3], |acc, p| {
                let t = p.scaled(s, scale);
                [acc[0] + t[0], acc[1] + t[1], acc[2] + t[2]]
            }),
        }
    }

    /// Scale and scaled `[Φ, Φ′, Φ″]` such that the true values are `v·e^{scale}`.
    pub fn scaled_derivatives(&self, s: f64) -> (f64, [f64; 3]) {
        let scale = self.log_magnitude(s).max(0.0);
        (scale, self.scaled(s, scale))
    }

    /// Closed-form verdicts for the small/large `s` limits of `Φ′s²/Φ`.
    pub fn analytic_limits(&self) -> (bool, bool) {
        match self {
            PhiProfile::PowerSum { .. } | PhiProfile::Log1p | PhiProfile::Expm1 => (true, true),
            PhiProfile::SumOf { parts } => parts
                .iter()
                .map(PhiProfile::analytic_limits)
                .fold((true, true), |(e, f), (pe, pf)| (e && pe, f && pf)),
        }
    }
}

/// Evaluation grid for the condition checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiGrid {
    pub s_min: f64,
    pub s_max: f64,
    pub points: usize,
    pub log_spacing: bool,
}

impl Default for PhiGrid {
    fn default() -> Self {
        Self { s_min: 1e-6, s_max: 1e6, points: 1201, log_spacing: true }
    }
}

impl PhiGrid {
    /// Grid with `2·points − 1` points containing every point of `self`.
    pub fn refined(&self) -> Self {
        Self { points: 2 * self.points - 1, ..*self }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let denom = (self.points - 1) as f64;
        if self.log_spacing {
            let (lo, hi) = (self.s_min.log10(), self.s_max.log10());
            (0..self.points)
                .map(|k| 10f64.powf(lo + (hi - lo) * (k as f64) / denom))
                .collect()
        } else {
            (0..self.points)
                .map(|k| self.s_min + (self.s_max - self.s_min) * (k as f64) / denom)
                .collect()
        }
    }
}

/// Supremum of `s|Φ″|/Φ′`, or unbounded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HConstant {
    Finite(f64),
    Unbounded,
}

impl Serialize for HConstant {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            HConstant::Finite(c) => serializer.serialize_f64(*c),
            HConstant::Unbounded => serializer.serialize_str("unbounded"),
        }
    }
}

/// Comparison of the empirical `h` constant with the two closed-form bounds
/// available for power sums.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerSumHBounds {
    /// `maxᵢ cᵢ|kᵢ − 1|`.
    pub with_coefficients: f64,
    /// `maxᵢ |kᵢ − 1|`.
    pub coefficient_free: f64,
    pub within_with_coefficients: bool,
    pub within_coefficient_free: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhiConditionReport {
    pub profile: PhiProfile,
    pub a: bool,
    pub b: bool,
    pub c: bool,
    pub d_i: bool,
    pub d_ii: bool,
    pub d_ii_epsilon: f64,
    pub d_iii: bool,
    pub e: bool,
    pub f: bool,
    pub g: bool,
    pub h: bool,
    pub empirical_c_for_h: HConstant,
    pub h_tail_growth: bool,
    pub h_bounds: Option<PowerSumHBounds>,
    pub i: bool,
    pub analytic_e: bool,
    pub analytic_f: bool,
    pub grid: PhiGrid,
}

/// `Φ′s²/Φ`.
fn speed_ratio(phi: &PhiProfile, s: f64) -> f64 {
    let (_, [p0, p1, _]) = phi.scaled_derivatives(s);
    p1 * s * s / p0
}

/// `(Φ′s − Φ)/(Φ′s)`.
fn excess_ratio(phi: &PhiProfile, s: f64) -> f64 {
    let (_, [p0, p1, _]) = phi.scaled_derivatives(s);
    (p1 * s - p0) / (p1 * s)
}

/// Evaluates Conditions a–i on the grid.
pub fn condition_report_phi(phi: &PhiProfile, grid: &PhiGrid) -> PhiConditionReport {
    let nodes = grid.nodes();
    let evals: Vec<(f64, f64, [f64; 3])> = nodes
        .iter()
        .map(|&s| {
            let (scale, v) = phi.scaled_derivatives(s);
            (s, scale, v)
        })
        .collect();

    let a = phi.value(0.0) == 0.0;

    let log_phi = |&(_, scale, v): &(f64, f64, [f64; 3])| scale + v[0].ln();
    let top: Vec<&(f64, f64, [f64; 3])> =
        evals.iter().filter(|e| e.0 >= grid.s_max / 1e3 * (1.0 - 1e-12)).collect();
    let increasing_top = top.windows(2).all(|w| log_phi(w[1]) > log_phi(w[0]));
    let (one_scale, one) = phi.scaled_derivatives(1.0);
    let b = increasing_top
        && evals.last().map(log_phi).unwrap_or(f64::NEG_INFINITY)
            >= one_scale + one[0].ln() + 10f64.ln();

    let c = evals.iter().all(|&(_, _, v)| v[1] > 0.0);

    let mut d_i = true;
    let mut d_iii = true;
    let mut epsilon = f64::INFINITY;
    let mut g = true;
    let mut i = true;
    let mut h_sup: f64 = 0.0;
    let mut h_finite = true;
    for &(s, _, [p0, p1, p2]) in &evals {
        let excess = p1 * s - p0;
        let tol = 1e-12 * (p1 * s).abs().max(p0.abs());
        d_i &= excess >= -tol;
        d_iii &= excess <= tol;
        epsilon = epsilon.min(excess / (p1 * s));
        g &= p2 * s >= -1e-12 * p1;
        let q = s * p2.abs() / p1;
        if q.is_finite() {
            h_sup = h_sup.max(q);
        } else {
            h_finite = false;
        }
        // Φ² − Φ′²s² = −(Φ′s − Φ)(Φ′s + Φ)
        let expr = p2 * p0 * p0 * s - 2.0 * p1 * excess * (p1 * s + p0);
        i &= expr > 0.0;
    }
    let epsilon = if epsilon.is_finite() { epsilon.max(0.0) } else { 0.0 };
    let decays = |near: f64, far: f64| {
        let (rn, rf) = (excess_ratio(phi, near), excess_ratio(phi, far));
        rf < 1e-2 * rn
    };
    let d_ii = epsilon > 0.0 && !decays(1e-2, grid.s_min) && !decays(1e2, grid.s_max);

    let small: Vec<f64> = [1e-2, 1e-4, 1e-6].iter().map(|&s| speed_ratio(phi, s)).collect();
    let e = small.windows(2).all(|w| w[1] < w[0]) && small[2] <= 1e-3 * small[0];
    let large: Vec<f64> = [1e2, 1e4, 1e6].iter().map(|&s| speed_ratio(phi, s)).collect();
    let f = large.windows(2).all(|w| w[1] > w[0]) && large[2] >= 1e3 * large[0];

    let tail: Vec<f64> = top.iter().map(|&&(s, _, [_, p1, p2])| s * p2.abs() / p1).collect();
    let h_tail_growth = tail.windows(2).all(|w| w[1] > w[0]);
    let unbounded = !h_finite || (h_tail_growth && tail.last().is_some_and(|&q| q > 1e3));
    let empirical_c_for_h = if unbounded { HConstant::Unbounded } else { HConstant::Finite(h_sup) };

    let h_bounds = match phi {
        PhiProfile::PowerSum { terms } if !unbounded => {
            let with_coefficients =
                terms.iter().map(|&(c, k)| c * (k - 1.0).abs()).fold(0.0, f64::max);
            let coefficient_free = terms.iter().map(|&(_, k)| (k - 1.0).abs()).fold(0.0, f64::max);
            let slack = 1.0 + 1e-9;
            Some(PowerSumHBounds {
                with_coefficients,
                coefficient_free,
                within_with_coefficients: h_sup <= with_coefficients * slack,
                within_coefficient_free: h_sup <= coefficient_free * slack,
            })
        }
        _ => None,
    };
    let (analytic_e, analytic_f) = phi.analytic_limits();

    PhiConditionReport {
        profile: phi.clone(),
        a,
        b,
        c,
        d_i,
        d_ii,
        d_ii_epsilon: epsilon,
        d_iii,
        e,
        f,
        g,
        h: !unbounded,
        empirical_c_for_h,
        h_tail_growth,
        h_bounds,
        i,
        analytic_e,
        analytic_f,
        grid: *grid,
    }
}

/// `κ_max/κ_min` bound of the two-dimensional and axisymmetric cases:
/// `1 + 2Φ′(f)/(Φ″(f)f)`, infinite when `Φ″(f) ≤ 0`.
pub fn pinch_threshold(phi: &PhiProfile, f_value: f64) -> f64 {
    let [_, d1, d2] = phi.derivatives(f_value);
    if d2 <= 0.0 {
        f64::INFINITY
    } else {
        1.0 + 2.0 * d1 / (d2 * f_value)
    }
}

/// Cases of the convergence result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceCase {
    EI,
    EIi,
    EIiiA,
    EIiiB,
    EIvA,
    EIvB,
    EVA,
    EVB,
}

impl ConvergenceCase {
    pub const ALL: [ConvergenceCase; 8] = [
        ConvergenceCase::EI,
        ConvergenceCase::EIi,
        ConvergenceCase::EIiiA,
        ConvergenceCase::EIiiB,
        ConvergenceCase::EIvA,
        ConvergenceCase::EIvB,
        ConvergenceCase::EVA,
        ConvergenceCase::EVB,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub condition: String,
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseVerdict {
    pub case: ConvergenceCase,
    pub f_side: String,
    pub f_side_ok: bool,
    pub phi_conditions: Vec<ConditionCheck>,
    pub applicable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseClassification {
    pub applicable_cases: Vec<ConvergenceCase>,
    pub verdicts: Vec<CaseVerdict>,
    pub empty: bool,
}

/// Selects the cases whose `f`-side hypothesis matches the sampled report
/// and whose `Φ` conditions all hold. The two liminf comparisons are never
/// certified.
pub fn classify_case(
    fr: &FConditionReport,
    pr: &PhiConditionReport,
    n: usize,
    axially_symmetric: bool,
) -> CaseClassification {
    let check = |name: &str, ok: bool| ConditionCheck { condition: name.into(), satisfied: ok };
    let base = vec![
        check("a", pr.a),
        check("b", pr.b),
        check("c", pr.c),
        check("e", pr.e),
        check("f", pr.f),
    ];
    let f_base = fr.normalization_ok && fr.monotone_ok;
    let with = |extra: Vec<ConditionCheck>| {
        let mut v = base.clone();
        v.extend(extra);
        v
    };
    let verdicts: Vec<CaseVerdict> = ConvergenceCase::ALL
        .iter()
        .map(|&case| {
            let (f_side, f_ok, phi_conditions) = match case {
                ConvergenceCase::EI => ("n = 2", n == 2, with(vec![check("g", pr.g)])),
                ConvergenceCase::EIi => (
                    "f strictly convex in nonradial directions",
                    fr.concavity_class == ConcavityClass::Convex,
                    with(vec![check("d_i", pr.d_i), check("h", pr.h)]),
                ),
                ConvergenceCase::EIiiA => (
                    "f strictly concave and vanishing on the cone boundary",
                    fr.concavity_class == ConcavityClass::Concave && fr.vanishes_on_boundary_ok,
                    with(vec![check("d_i", pr.d_i), check("h", pr.h)]),
                ),
                ConvergenceCase::EIiiB => (
                    "f strictly concave with boundary liminf comparison (not certified)",
                    false,
                    with(vec![check("d_i", pr.d_i), check("h", pr.h)]),
                ),
                ConvergenceCase::EIvA => (
                    "f inverse concave with dual vanishing on the cone boundary",
                    fr.inverse_concave_ok && fr.dual_vanishes_on_boundary_ok,
                    with(vec![check("d_iii", pr.d_iii), check("i", pr.i)]),
                ),
                ConvergenceCase::EIvB => (
                    "f inverse concave with boundary liminf comparison (not certified)",
                    false,
                    with(vec![check("d_iii", pr.d_iii), check("i", pr.i)]),
                ),
                ConvergenceCase::EVA => {
                    ("axially symmetric initial data", axially_symmetric, with(vec![check("g", pr.g)]))
                }
                ConvergenceCase::EVB => (
                    "initial pinching |A0|^2 <= sigma H^2",
                    true,
                    with(vec![check("d_ii", pr.d_ii), check("h", pr.h)]),
                ),
            };
            let f_side_ok = f_base && f_ok;
            let applicable = f_side_ok && phi_conditions.iter().all(|c| c.satisfied);
            CaseVerdict { case, f_side: f_side.into(), f_side_ok, phi_conditions, applicable }
        })
        .collect();
    let applicable_cases: Vec<ConvergenceCase> =
        verdicts.iter().filter(|v| v.applicable).map(|v| v.case).collect();
    let empty = applicable_cases.is_empty();
    CaseClassification { applicable_cases, verdicts, empty }
}
