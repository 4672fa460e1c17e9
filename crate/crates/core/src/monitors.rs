//! Pinching monitors along a run, the monotonicity harness, the shrinking
//! sphere radius `Θ(t)` and rescaling against it.

use serde::Serialize;

use crate::curvature::SpeedFunction;
use crate::error::{Error, Result};
use crate::geometry::{radius_bounds, CurvatureField, SupportProfile};
use crate::quadrature;
use crate::speed::{PhiProfile, ConvergenceCase};

/// Parameters of the monitored quantities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonitorSettings {
    /// Pinching constant in `Z_σ = |A⁰|² − σH²`.
    pub sigma: f64,
    /// Inner ball radius in `Z = Φ/(u − δ)`.
    pub delta: f64,
    /// Exponent of the optional `Z_λ = |A⁰|² − σ·h̄^λ·H^{2−λ}`.
    pub lambda: Option<f64>,
    /// Maximum of `H` over the initial hypersurface, used by `Z_λ`.
    pub h_bar: f64,
    /// Axial offset subtracted from `u` before the `Z` monitor.
    pub center: f64,
}

impl MonitorSettings {
    /// Defaults from the initial state: `σ` just above the initial maximum
    /// of `|A⁰|²/H²` (capped at `1/(2n(n−1))`), `δ` half the minimal
    /// recentered support.
    pub fn from_initial(
        profile: &SupportProfile,
        field: &CurvatureField,
        center: f64,
        sigma: Option<f64>,
        delta: Option<f64>,
        lambda: Option<f64>,
    ) -> Result<Self> {
        let n = profile.n();
        let nf = n as f64;
        let mut max_ratio: f64 = 0.0;
        let mut h_bar: f64 = 0.0;
        for j in 0..field.len() {
            let (ka, kr) = (field.kappa_axial(j), field.kappa_rot(j));
            let h = ka + (nf - 1.0) * kr;
            let a02 = (nf - 1.0) * (ka - kr).powi(2) / nf;
            max_ratio = max_ratio.max(a02 / (h * h));
            h_bar = h_bar.max(h);
        }
        let cap = 0.5 / (nf * (nf - 1.0));
        let sigma = match sigma {
            Some(s) if s > 0.0 && s.is_finite() => s,
            Some(s) => return Err(Error::config("/sigma", format!("must be positive, got {s}"))),
            None => (max_ratio / 0.9).max(1e-2 * cap).min(cap),
        };
        let recentered_min = {
            let mut c = profile.coeffs().to_vec();
            c[1] -= center;
            radius_bounds(&profile.with_coeffs(c)).0
        };
        let delta = match delta {
            Some(d) if d > 0.0 && d < recentered_min => d,
            Some(d) => {
                return Err(Error::config(
                    "/delta",
                    format!("must lie in (0, {recentered_min}), got {d}"),
                ))
            }
            None => 0.5 * recentered_min,
        };
        Ok(Self { sigma, delta, lambda, h_bar, center })
    }
}

/// One time sample of every monitored scalar; extremes are over the nodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonitorRecord {
    pub t: f64,
    pub tau: Option<f64>,
    pub theta: Option<f64>,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub pinch_ratio: f64,
    /// `max n|A⁰|²/H²`.
    pub g_max: f64,
    /// `max H/F̂` with `F̂ = n·f`.
    pub h_over_f_max: f64,
    /// `min nⁿK/F̂ⁿ = K/fⁿ`.
    pub k_over_fn_min: f64,
    pub zsigma_max: f64,
    pub zlambda_max: Option<f64>,
    /// `max r_max·Φ(f)`.
    pub rphi_max: f64,
    /// `max Φ/(u − δ)` for the recentered support.
    pub ztso_max: f64,
    /// Whether `u − δ ≥ δ/2` at every node.
    pub ztso_valid: bool,
    pub speed_min: f64,
    pub speed_max: f64,
    pub sup_dev_unit: Option<f64>,
    pub min_support: f64,
    pub mean_support: f64,
}

/// Samples every monitor at the current state. `rescale` supplies
/// `(Θ(t), p)` once the extinction time is known.
pub fn monitor_sample(
    t: f64,
    profile: &SupportProfile,
    field: &CurvatureField,
    f: &SpeedFunction,
    phi: &PhiProfile,
    settings: &MonitorSettings,
    rescale: Option<(f64, f64)>,
) -> MonitorRecord {
    let n = profile.n();
    let nf = n as f64;
    let u = profile.values();
    let mut r = MonitorRecord {
        t,
        tau: None,
        theta: None,
        kappa_min: f64::INFINITY,
        kappa_max: 0.0,
        pinch_ratio: 1.0,
        g_max: 0.0,
        h_over_f_max: 0.0,
        k_over_fn_min: f64::INFINITY,
        zsigma_max: f64::NEG_INFINITY,
        zlambda_max: settings.lambda.map(|_| f64::NEG_INFINITY),
        rphi_max: 0.0,
        ztso_max: f64::NEG_INFINITY,
        ztso_valid: true,
        speed_min: f64::INFINITY,
        speed_max: 0.0,
        sup_dev_unit: None,
        min_support: f64::INFINITY,
        mean_support: profile.mean_support(),
    };
    for j in 0..field.len() {
        let (ka, kr) = (field.kappa_axial(j), field.kappa_rot(j));
        let (fv, _, _) = f.axisymmetric(ka, kr);
        let speed = phi.value(fv);
        let h = ka + (nf - 1.0) * kr;
        let a02 = (nf - 1.0) * (ka - kr).powi(2) / nf;
        let (lo, hi) = (ka.min(kr), ka.max(kr));
        r.kappa_min = r.kappa_min.min(lo);
        r.kappa_max = r.kappa_max.max(hi);
        r.pinch_ratio = r.pinch_ratio.max(hi / lo);
        r.g_max = r.g_max.max(nf * a02 / (h * h));
        r.h_over_f_max = r.h_over_f_max.max(h / (nf * fv));
        let log_ratio = ka.ln() + (nf - 1.0) * kr.ln() - nf * fv.ln();
        r.k_over_fn_min = r.k_over_fn_min.min(log_ratio.exp());
        r.zsigma_max = r.zsigma_max.max(a02 - settings.sigma * h * h);
        if let (Some(lambda), Some(z)) = (settings.lambda, r.zlambda_max.as_mut()) {
            *z = z.max(a02 - settings.sigma * settings.h_bar.powf(lambda) * h.powf(2.0 - lambda));
        }
        r.rphi_max = r.rphi_max.max(field.r1[j].max(field.r2[j]) * speed);
        let uc = u[j] - settings.center * field.theta[j].cos();
        r.min_support = r.min_support.min(uc);
        r.ztso_valid &= uc - settings.delta >= 0.5 * settings.delta;
        r.ztso_max = r.ztso_max.max(speed / (uc - settings.delta));
        r.speed_min = r.speed_min.min(speed);
        r.speed_max = r.speed_max.max(speed);
    }
    if let Some((theta, p)) = rescale {
        r.theta = Some(theta);
        r.tau = Some(-theta.ln());
        r.sup_dev_unit = Some(rescale_state(profile, theta, p).1);
    }
    r
}

/// Quantities that can be checked for monotonicity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    PinchRatio,
    GMax,
    HOverFMax,
    KOverFnMin,
    ZSigmaMax,
    ZLambdaMax,
    RPhiMax,
    ZTsoMax,
    SpeedMax,
    SupDevUnit,
}

impl Quantity {
    pub fn name(&self) -> &'static str {
        match self {
            Quantity::PinchRatio => "pinch_ratio",
            Quantity::GMax => "G_max",
            Quantity::HOverFMax => "HoverF_max",
            Quantity::KOverFnMin => "KoverFn_min",
            Quantity::ZSigmaMax => "Zsigma_max",
            Quantity::ZLambdaMax => "Zlambda_max",
            Quantity::RPhiMax => "rPhi_max",
            Quantity::ZTsoMax => "Ztso_max",
            Quantity::SpeedMax => "speed_max",
            Quantity::SupDevUnit => "sup_dev_unit",
        }
    }

    /// Value of the quantity, if defined for this record. `Z` is only
    /// defined inside its validity window.
    pub fn value(&self, r: &MonitorRecord) -> Option<f64> {
        match self {
            Quantity::PinchRatio => Some(r.pinch_ratio),
            Quantity::GMax => Some(r.g_max),
            Quantity::HOverFMax => Some(r.h_over_f_max),
            Quantity::KOverFnMin => Some(r.k_over_fn_min),
            Quantity::ZSigmaMax => Some(r.zsigma_max),
            Quantity::ZLambdaMax => r.zlambda_max,
            Quantity::RPhiMax => Some(r.rphi_max),
            Quantity::ZTsoMax => r.ztso_valid.then_some(r.ztso_max),
            Quantity::SpeedMax => Some(r.speed_max),
            Quantity::SupDevUnit => r.sup_dev_unit,
        }
    }

    /// Smallest magnitude used as the reference for relative changes. `G`
    /// vanishes on spheres up to roundoff; the rescaled deviation is compared
    /// against the unit radius.
    pub fn floor(&self) -> f64 {
        match self {
            Quantity::GMax => 1e-12,
            Quantity::SupDevUnit => 1.0,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Nonincreasing,
    Nondecreasing,
    /// Supremum over the series against the first sample.
    Bounded,
    /// Every sample at most zero.
    Nonpositive,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub quantity: String,
    pub direction: Direction,
    /// Largest signed relative change against the direction; `≤ 0` means no violation at all.
    pub worst_violation: f64,
    pub first_violation_time: Option<f64>,
    pub tolerance: f64,
    pub samples: usize,
    /// Whether a convergence case applicable to the run claims this direction.
    pub asserted: bool,
    pub pass: bool,
}

/// Checks a `(t, q)` series against a direction. Changes are measured
/// relative to `max(|q|, floor)` at the earlier sample (the first sample for
/// `Bounded` and `Nonpositive`).
pub fn assert_monotone_values(
    name: &str,
    samples: &[(f64, f64)],
    direction: Direction,
    tolerance: f64,
    floor: f64,
) -> MonotonicityReport {
    let scale = |q: f64| q.abs().max(floor).max(f64::MIN_POSITIVE);
    let mut worst = f64::NEG_INFINITY;
    let mut first = None;
    let mut record = |t: f64, change: f64| {
        if change > tolerance && first.is_none() {
            first = Some(t);
        }
        worst = worst.max(change);
    };
    match direction {
        Direction::Nonincreasing | Direction::Nondecreasing => {
            let sign = if direction == Direction::Nonincreasing { 1.0 } else { -1.0 };
            for w in samples.windows(2) {
                let (q0, q1) = (w[0].1, w[1].1);
                record(w[1].0, sign * (q1 - q0) / scale(q0));
            }
        }
        Direction::Bounded => {
            if let Some(&(_, q0)) = samples.first() {
                for &(t, q) in samples {
                    record(t, (q - q0) / scale(q0));
                }
            }
        }
        Direction::Nonpositive => {
            if let Some(&(_, q0)) = samples.first() {
                for &(t, q) in samples {
                    record(t, q / scale(q0));
                }
            }
        }
    }
    if samples.len() < 2 && direction != Direction::Nonpositive {
        worst = 0.0;
    }
    if samples.is_empty() {
        worst = 0.0;
    }
    MonotonicityReport {
        quantity: name.to_string(),
        direction,
        worst_violation: worst,
        first_violation_time: first,
        tolerance,
        samples: samples.len(),
        asserted: false,
        pass: worst <= tolerance,
    }
}

/// Monotonicity of one monitored quantity over the records where it is defined.
pub fn assert_monotone(
    series: &[MonitorRecord],
    quantity: Quantity,
    direction: Direction,
    tolerance: f64,
) -> MonotonicityReport {
    let samples: Vec<(f64, f64)> =
        series.iter().filter_map(|r| quantity.value(r).map(|q| (r.t, q))).collect();
    assert_monotone_values(quantity.name(), &samples, direction, tolerance, quantity.floor())
}

/// Quantity and direction claimed by a convergence case.
pub fn case_claim(case: ConvergenceCase) -> (Quantity, Direction) {
    match case {
        ConvergenceCase::EI => (Quantity::GMax, Direction::Nonincreasing),
        ConvergenceCase::EIi => (Quantity::KOverFnMin, Direction::Nondecreasing),
        ConvergenceCase::EIiiA | ConvergenceCase::EIiiB => (Quantity::HOverFMax, Direction::Nonincreasing),
        ConvergenceCase::EIvA | ConvergenceCase::EIvB => (Quantity::RPhiMax, Direction::Nonincreasing),
        ConvergenceCase::EVA | ConvergenceCase::EVB => (Quantity::ZSigmaMax, Direction::Nonpositive),
    }
}

/// Every monitored quantity checked in its natural direction. Reports claimed
/// by one of `cases`, the speed bound on its validity window and the
/// trailing-half decrease of the rescaled deviation are marked `asserted`.
pub fn standard_reports(
    series: &[MonitorRecord],
    cases: &[ConvergenceCase],
    tolerance: f64,
) -> Vec<MonotonicityReport> {
    use Direction::*;
    let checks = [
        (Quantity::PinchRatio, Nonincreasing),
        (Quantity::GMax, Nonincreasing),
        (Quantity::HOverFMax, Nonincreasing),
        (Quantity::KOverFnMin, Nondecreasing),
        (Quantity::ZSigmaMax, Nonpositive),
        (Quantity::RPhiMax, Nonincreasing),
    ];
    let claims: Vec<_> = cases.iter().map(|&c| case_claim(c)).collect();
    let mut reports: Vec<MonotonicityReport> = checks
        .iter()
        .map(|&(q, d)| {
            let mut r = assert_monotone(series, q, d, tolerance);
            r.asserted = claims.contains(&(q, d));
            r
        })
        .collect();
    if series.iter().any(|r| r.zlambda_max.is_some()) {
        reports.push(assert_monotone(series, Quantity::ZLambdaMax, Nonincreasing, tolerance));
    }
    let mut tso = assert_monotone(series, Quantity::ZTsoMax, Bounded, tolerance);
    tso.asserted = true;
    reports.push(tso);
    let half = &series[series.len() / 2..];
    if half.iter().any(|r| r.sup_dev_unit.is_some()) {
        let mut r = assert_monotone(half, Quantity::SupDevUnit, Nonincreasing, tolerance);
        r.quantity = "sup_dev_unit_trailing_half".into();
        r.asserted = true;
        reports.push(r);
    }
    reports
}

/// `∫₀^Θ dρ/Φ(1/ρ)`: the time a sphere of radius `Θ` takes to shrink to a point.
pub fn shrink_time(phi: &PhiProfile, theta: f64) -> Result<f64> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::Quadrature(format!("radius {theta} is not a nonnegative number")));
    }
    if theta == 0.0 {
        return Ok(0.0);
    }
    // ρ = e^{−x}
    let x0 = -theta.ln();
    let integrand = |x: f64| {
        let p = phi.value(x.exp());
        if p.is_infinite() {
            0.0
        } else {
            (-x).exp() / p
        }
    };
    quadrature::integrate(integrand, x0, x0 + 60.0, 1e-14)
}

/// Radius `Θ(t)` of the sphere evolving by `Θ′ = −Φ(1/Θ)` that reaches the
/// origin at the extinction time.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereTheta {
    phi: PhiProfile,
    extinction_time: f64,
    theta0: Option<f64>,
}

/// Sphere of initial radius `Θ₀`.
pub fn sphere_theta(phi: &PhiProfile, theta0: f64) -> Result<SphereTheta> {
    if !(theta0 > 0.0) {
        return Err(Error::InvalidShape(format!("initial radius must be positive, got {theta0}")));
    }
    Ok(SphereTheta { phi: phi.clone(), extinction_time: shrink_time(phi, theta0)?, theta0: Some(theta0) })
}

impl SphereTheta {
    /// Sphere that reaches the origin at time `extinction_time`.
    pub fn with_extinction_time(phi: &PhiProfile, extinction_time: f64) -> Self {
        Self { phi: phi.clone(), extinction_time, theta0: None }
    }

    pub fn extinction_time(&self) -> f64 {
        self.extinction_time
    }

    /// `Θ(t)` for `t ≤ T`, solving `T − t = ∫₀^Θ dρ/Φ(1/ρ)` by safeguarded Newton iteration.
    pub fn theta(&self, t: f64) -> Result<f64> {
        let remaining = self.extinction_time - t;
        if remaining < 0.0 {
            return Err(Error::Quadrature(format!(
                "time {t} lies beyond the extinction time {}",
                self.extinction_time
            )));
        }
        if remaining == 0.0 {
            return Ok(0.0);
        }
        if let Some(theta0) = self.theta0 {
            if t == 0.0 {
                return Ok(theta0);
            }
        }
        let mut hi = self.theta0.unwrap_or(1.0);
        while shrink_time(&self.phi, hi)? < remaining {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = shrink_time(&self.phi, x)? - remaining;
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let newton = x - g * self.phi.value(1.0 / x);
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            let done = (next - x).abs() <= 1e-14 * x || hi - lo <= 1e-15 * hi;
            x = next;
            if done {
                break;
            }
        }
        Ok(x)
    }

    /// Rescaled time `τ = −ln Θ(t)`.
    pub fn tau(&self, t: f64) -> Result<f64> {
        Ok(-self.theta(t)?.ln())
    }
}

/// `ũ = (u − p·cosθ)/Θ` and `sup_j |ũ(θ_j) − 1|`.
pub fn rescale_state(profile: &SupportProfile, theta: f64, p_axial: f64) -> (SupportProfile, f64) {
    let mut c = profile.coeffs().to_vec();
    c[1] -= p_axial;
    for a in &mut c {
        *a /= theta;
    }
    let rescaled = profile.with_coeffs(c);
    let dev = rescaled.values().iter().map(|u| (u - 1.0).abs()).fold(0.0, f64::max);
    (rescaled, dev)
}

/// Exponential decay fit of a deviation series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    /// `−slope` of `ln(dev)` against `τ`; infinite when every deviation is zero.
    pub rate: f64,
    /// Root-mean-square residual of the log-linear fit.
    pub residual: f64,
    pub samples_used: usize,
}

/// Least-squares slope of `ln(dev)` against `τ` over the trailing half.
pub fn fit_decay_rate(taus: &[f64], devs: &[f64]) -> Result<DecayFit> {
    if taus.len() != devs.len() {
        return Err(Error::Length { expected: taus.len(), got: devs.len() });
    }
    let start = taus.len() / 2;
    let trailing: Vec<(f64, f64)> = taus[start..]
        .iter()
        .zip(&devs[start..])
        .filter(|(_, &d)| d > 0.0)
        .map(|(&t, &d)| (t, d.ln()))
        .collect();
    if trailing.is_empty() && devs[start..].iter().all(|&d| d == 0.0) && !devs.is_empty() {
        return Ok(DecayFit { rate: f64::INFINITY, residual: 0.0, samples_used: 0 });
    }
    if trailing.len() < 4 || devs.iter().filter(|&&d| d > 0.0).count() < 8 {
        return Err(Error::Quadrature(format!(
            "decay fit needs at least 8 positive deviations, got {}",
            devs.iter().filter(|&&d| d > 0.0).count()
        )));
    }
    let m = trailing.len() as f64;
    let tm = trailing.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = trailing.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = trailing.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let sxx: f64 = trailing.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let residual =
        (trailing.iter().map(|p| (p.1 - ym - slope * (p.0 - tm)).powi(2)).sum::<f64>() / m).sqrt();
    Ok(DecayFit { rate: -slope, residual, samples_used: trailing.len() })
}
