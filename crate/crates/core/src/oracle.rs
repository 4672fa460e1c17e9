//! Independent oracles: finite differences, eigenvalue perturbation, sampled
//! curvature identities and inequalities, and an explicit ODE solver for the
//! shrinking sphere.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::curvature::{PrincipalCurvatures, SpeedFunction, SpeedKind};
use crate::error::{Error, Result};
use crate::flow::FlowState;
use crate::geometry::radii;
use crate::monitors::sphere_theta;
use crate::speed::PhiProfile;

/// Speeds exercised by the finite-difference checks.
pub fn builtin_speeds() -> Vec<SpeedKind> {
    vec![
        SpeedKind::ArithmeticMean,
        SpeedKind::GeometricMean,
        SpeedKind::Rms,
        SpeedKind::HarmonicMean,
        SpeedKind::PowerMean { p: -2.0 },
        SpeedKind::PowerMean { p: 0.5 },
        SpeedKind::PowerMean { p: 3.0 },
    ]
}

/// Profiles exercised by the `Θ` cross-check.
pub fn builtin_profiles() -> Vec<PhiProfile> {
    vec![
        PhiProfile::PowerSum { terms: vec![(1.0, 1.0)] },
        PhiProfile::PowerSum { terms: vec![(1.0, 3.0)] },
        PhiProfile::PowerSum { terms: vec![(1.0, 1.0), (1.0, 3.0)] },
        PhiProfile::PowerSum { terms: vec![(1.0, 2.0), (1.0, 3.0)] },
        PhiProfile::Log1p,
        PhiProfile::Expm1,
        PhiProfile::SumOf {
            parts: vec![PhiProfile::Log1p, PhiProfile::PowerSum { terms: vec![(1.0, 2.0)] }],
        },
    ]
}

/// Log-uniform curvatures with `κ_max/κ_min ≤ ratio_bound` and random overall scale.
pub fn sample_cone(rng: &mut impl Rng, n: usize, ratio_bound: f64) -> PrincipalCurvatures {
    let scale = rng.gen_range(-2.0f64..2.0).exp();
    let span = ratio_bound.ln();
    let values = (0..n).map(|_| scale * (span * rng.gen::<f64>()).exp()).collect();
    PrincipalCurvatures::new(values).expect("positive by construction")
}

/// Central-difference gradient against the analytic one, with step
/// `h_rel·κ_min`. Errors are relative to `max(|∇f|_∞, f/κ_max)`.
pub fn fd_check_gradient(f: &SpeedFunction, k: &PrincipalCurvatures, h_rel: f64) -> Result<f64> {
    let ks = k.as_slice();
    let h = h_rel * k.min();
    let analytic = f.gradient(k)?;
    let value = f.eval(k)?;
    let shifted = |i: usize, d: f64| -> Result<f64> {
        let mut v = ks.to_vec();
        v[i] += d;
        f.eval(&PrincipalCurvatures::new(v)?)
    };
    let scale = analytic.iter().fold(value / k.max(), |m, g| m.max(g.abs()));
    let mut worst: f64 = 0.0;
    for (i, g) in analytic.iter().enumerate() {
        let fd = (shifted(i, h)? - shifted(i, -h)?) / (2.0 * h);
        worst = worst.max((fd - g).abs() / scale);
    }
    Ok(worst)
}

/// Second-order central-difference Hessian against the analytic one, with
/// step `h_rel·κ_min`. Errors are relative to `max(|f̈|_max, f/κ_max²)`.
pub fn fd_check_hessian(f: &SpeedFunction, k: &PrincipalCurvatures, h_rel: f64) -> Result<f64> {
    let ks = k.as_slice();
    let n = ks.len();
    let h = h_rel * k.min();
    let analytic = f.hessian(k)?;
    let value = f.eval(k)?;
    let at = |steps: &[(usize, f64)]| -> Result<f64> {
        let mut v = ks.to_vec();
        for &(i, d) in steps {
            v[i] += d;
        }
        f.eval(&PrincipalCurvatures::new(v)?)
    };
    let scale = analytic.iter().fold(value / (k.max() * k.max()), |m, x| m.max(x.abs()));
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            let fd = if i == j {
                (at(&[(i, h)])? - 2.0 * value + at(&[(i, -h)])?) / (h * h)
            } else {
                (at(&[(i, h), (j, h)])? - at(&[(i, h), (j, -h)])? - at(&[(i, -h), (j, h)])?
                    + at(&[(i, -h), (j, -h)])?)
                    / (4.0 * h * h)
            };
            worst = worst.max((fd - analytic[(i, j)]).abs() / scale);
        }
    }
    Ok(worst)
}

/// Five-point second difference of `s ↦ f(eig(diag κ + sB))` against the closed-form
/// second derivative, relative to `max(|form|, f|B|²/κ_max²)`.
pub fn eigen_perturbation_check(f: &SpeedFunction, k: &PrincipalCurvatures, b: &DMatrix<f64>) -> Result<f64> {
    let sym = 0.5 * (b + b.transpose());
    let norm = sym.norm();
    let s = 1e-3 * k.min() / norm;
    let along = |t: f64| -> Result<f64> {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(k.as_slice())) + &sym * t;
        let eig = SymmetricEigen::new(m).eigenvalues;
        f.eval(&PrincipalCurvatures::new(eig.iter().copied().collect())?)
    };
    let f0 = f.eval(k)?;
    let fd = (16.0 * (along(s)? + along(-s)?) - along(2.0 * s)? - along(-2.0 * s)? - 30.0 * f0) / (12.0 * s * s);
    let form = f.second_derivative_form(k, &sym)?.value;
    let scale = form.abs().max(f0 * norm * norm / (k.max() * k.max()));
    Ok((fd - form).abs() / scale)
}

/// A totally symmetric 3-tensor, standing in for `∇A`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricTensor3 {
    n: usize,
    entries: Vec<f64>,
}

impl SymmetricTensor3 {
    /// Independent standard normal-ish entries on `i ≤ j ≤ k`, then symmetrized.
    pub fn random(rng: &mut impl Rng, n: usize) -> Self {
        let mut entries = vec![0.0; n * n * n];
        for i in 0..n {
            for j in i..n {
                for k in j..n {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
                        entries[(a * n + b) * n + c] = v;
                    }
                }
            }
        }
        Self { n, entries }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut entries = vec![0.0; n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    entries[(i * n + j) * n + k] = f(i, j, k);
                }
            }
        }
        Self { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.entries[(i * self.n + j) * self.n + k]
    }

    /// `(tr T)_i = Σ_k T_ikk`.
    pub fn trace(&self) -> Vec<f64> {
        (0..self.n).map(|i| (0..self.n).map(|k| self.get(i, k, k)).sum()).collect()
    }

    pub fn norm2(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n;
        (0..n).all(|i| {
            (0..n).all(|j| (0..n).all(|k| self.get(i, j, k) == self.get(j, i, k) && self.get(i, j, k) == self.get(i, k, j)))
        })
    }
}

/// Outcome of one sampled check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Reported checks do not affect the verdict.
    pub asserted: bool,
    pub violations: usize,
    /// Largest normalized error (identities) or deficit (inequalities; `≤ 0` is satisfied).
    pub worst: f64,
    /// Curvatures of the first violating sample.
    pub first_violation: Option<Vec<f64>>,
    pub pass: bool,
}

impl CheckResult {
    fn new(name: &str, asserted: bool) -> Self {
        Self {
            name: name.into(),
            asserted,
            violations: 0,
            worst: f64::NEG_INFINITY,
            first_violation: None,
            pass: true,
        }
    }

    fn record(&mut self, value: f64, tolerance: f64, sample: &[f64]) {
        self.worst = self.worst.max(value);
        if value > tolerance || value.is_nan() {
            self.violations += 1;
            self.first_violation.get_or_insert_with(|| sample.to_vec());
            self.pass = false;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

impl SuiteReport {
    fn finish(name: &str, n: usize, samples: usize, seed: u64, checks: Vec<CheckResult>) -> Self {
        let pass = checks.iter().all(|c| c.pass || !c.asserted);
        Self { name: name.into(), n, samples, seed, checks, pass }
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Relative tolerance of the sampled identities and inequalities.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Curvatures with `Σκ = H` and `κ_min ≥ εH`.
fn sample_pinched(rng: &mut impl Rng, n: usize, eps: f64) -> Vec<f64> {
    let h = rng.gen_range(-2.0f64..2.0).exp();
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| h * (eps + (1.0 - n as f64 * eps) * x / total)).collect()
}

/// The pinched-cone curvature identities and lower bounds, and the gradient
/// estimate against random symmetric tensors.
pub fn pinched_identity_suite(samples: usize, n: usize, eps: f64, seed: u64) -> Result<SuiteReport> {
    if !(eps > 0.0 && eps * n as f64 <= 1.0) {
        return Err(Error::InvalidShape(format!("pinching ε = {eps} outside (0, 1/n]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = n as f64;
    let mut quartic = CheckResult::new("quartic_identity", true);
    let mut quartic_bound = CheckResult::new("quartic_lower_bound", true);
    let mut cubic = CheckResult::new("cubic_identity", true);
    let mut cubic_bound = CheckResult::new("cubic_lower_bound", true);
    let mut gradient = CheckResult::new("gradient_lower_bound", true);
    for _ in 0..samples {
        let k = sample_pinched(&mut rng, n, eps);
        let h: f64 = k.iter().sum();
        let a2: f64 = k.iter().map(|x| x * x).sum();
        let c: f64 = k.iter().map(|x| x * x * x).sum();
        let mut pair_sum = 0.0;
        let mut quartic_rhs = 0.0;
        let mut cubic_rhs = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d2 = (k[i] - k[j]).powi(2);
                if i < j {
                    pair_sum += d2;
                    quartic_rhs += k[i] * k[j] * d2;
                }
                if i != j {
                    cubic_rhs += 0.5 * (k[i] + k[j]) * d2;
                }
            }
        }
        let a02 = pair_sum / nf;
        let quartic_lhs = h * c - a2 * a2;
        let cubic_lhs = nf * c - h * a2;
        quartic.record((quartic_lhs - quartic_rhs).abs() / (h * c), IDENTITY_TOLERANCE, &k);
        cubic.record((cubic_lhs - cubic_rhs).abs() / (nf * c), IDENTITY_TOLERANCE, &k);
        quartic_bound.record((nf * eps * eps * h * h * a02 - quartic_lhs) / (h * c), IDENTITY_TOLERANCE, &k);
        cubic_bound.record((2.0 * nf * eps * h * a02 - cubic_lhs) / (nf * c), IDENTITY_TOLERANCE, &k);

        let t = SymmetricTensor3::random(&mut rng, n);
        let tr = t.trace();
        let mut lhs = 0.0;
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let hjl = if j == l { k[j] } else { 0.0 };
                    lhs += (h * t.get(i, j, l) - hjl * tr[i]).powi(2);
                }
            }
        }
        let rhs = 0.5 * (nf - 1.0) * eps * eps * h * h * t.norm2();
        let scale = h * h * t.norm2() + a2 * tr.iter().map(|v| v * v).sum::<f64>();
        gradient.record((rhs - lhs) / scale, IDENTITY_TOLERANCE, &k);
    }
    Ok(SuiteReport::finish(
        "pinched_identities",
        n,
        samples,
        seed,
        vec![quartic, quartic_bound, cubic, cubic_bound, gradient],
    ))
}

/// `|T|² ≥ 3/(n+2)|tr T|²` for random totally symmetric `T`, plus the
/// trace-free companion in two readings: the plain trace-free part (asserted)
/// and its symmetrization (reported only).
pub fn gradient_inequality_suite(samples: usize, n: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = n as f64;
    let mut first = CheckResult::new("trace_bound", true);
    let mut plain = CheckResult::new("trace_free_bound", true);
    let mut symmetrized = CheckResult::new("trace_free_bound_symmetrized", false);
    let ratio = 2.0 * (nf - 1.0) / (3.0 * nf);
    for _ in 0..samples {
        let t = SymmetricTensor3::random(&mut rng, n);
        let tr = t.trace();
        let t2 = t.norm2();
        let tr2: f64 = tr.iter().map(|v| v * v).sum();
        let sample = [t2, tr2];
        first.record((3.0 / (nf + 2.0) * tr2 - t2) / t2, IDENTITY_TOLERANCE, &sample);
        let free = |i: usize, j: usize, k: usize| t.get(i, j, k) - if j == k { tr[i] / nf } else { 0.0 };
        let plain_norm: f64 = (0..n)
            .flat_map(|i| (0..n).flat_map(move |j| (0..n).map(move |k| (i, j, k))))
            .map(|(i, j, k)| free(i, j, k).powi(2))
            .sum();
        plain.record((ratio * t2 - plain_norm) / t2, IDENTITY_TOLERANCE, &sample);
        let sym = SymmetricTensor3::from_fn(n, |i, j, k| {
            (free(i, j, k) + free(i, k, j) + free(j, i, k) + free(j, k, i) + free(k, i, j) + free(k, j, i)) / 6.0
        });
        symmetrized.record((ratio * t2 - sym.norm2()) / t2, IDENTITY_TOLERANCE, &sample);
    }
    SuiteReport::finish("gradient_inequalities", n, samples, seed, vec![first, plain, symmetrized])
}

/// Curvatures `H/n + √ε·H·d` with `d` a random unit trace-free direction and
/// `0 ≤ ε < 1/(n(n−1))`, so that `|A⁰|² = εH²` exactly.
fn sample_tight(rng: &mut impl Rng, n: usize) -> (Vec<f64>, f64, f64) {
    let nf = n as f64;
    let h = rng.gen_range(-2.0f64..2.0).exp();
    let eps = rng.gen::<f64>() / (nf * (nf - 1.0));
    let mut d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mean = d.iter().sum::<f64>() / nf;
    d.iter_mut().for_each(|x| *x -= mean);
    let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    let k = d.iter().map(|x| h / nf + eps.sqrt() * h * x / norm).collect();
    (k, h, eps)
}

/// Curvature bounds in the tight pinching regime `|A⁰|² = εH²`.
pub fn tight_pinch_suite(samples: usize, n: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = n as f64;
    let mut range = CheckResult::new("curvature_range", true);
    let mut cubic = CheckResult::new("cubic_lower_bound", true);
    let mut cone = CheckResult::new("cone_membership", true);
    for _ in 0..samples {
        let (k, h, eps) = sample_tight(&mut rng, n);
        let root = (nf * (nf - 1.0) * eps).sqrt();
        let (lo, hi) = ((1.0 - root) * h / nf, (1.0 + root) * h / nf);
        let deficit = k.iter().map(|&x| (lo - x).max(x - hi)).fold(f64::NEG_INFINITY, f64::max);
        range.record(deficit / h, IDENTITY_TOLERANCE, &k);
        let a2: f64 = k.iter().map(|x| x * x).sum();
        let c: f64 = k.iter().map(|x| x * x * x).sum();
        let lhs = nf * c - (1.0 + nf * eps) * h * a2;
        let rhs = eps * (1.0 + nf * eps) * (1.0 - root) * h.powi(3);
        cubic.record((rhs - lhs) / (nf * c), IDENTITY_TOLERANCE, &k);
        let floor = (1.0 - root) / nf * h;
        let kmin = k.iter().copied().fold(f64::INFINITY, f64::min);
        cone.record((floor - kmin) / h, IDENTITY_TOLERANCE, &k);
    }
    SuiteReport::finish("tight_pinching", n, samples, seed, vec![range, cubic, cone])
}

/// Smallest constants in the three near-umbilic bounds for `F̂ = n·f`,
/// sampled in `{|A⁰|² ≤ σ₀H²}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MuEstimate {
    pub sigma0: f64,
    pub samples_used: usize,
    /// From `|F̂̈(P, Q)| ≤ (μ/H)|P||Q|`.
    pub hessian: f64,
    /// From `(1 − μ|A⁰|/H) ≤ F̂̇ ≤ (1 + μ|A⁰|/H)`.
    pub gradient: f64,
    /// From `|F̂ − H| ≤ (μ/2)|A⁰|²/H`.
    pub value: f64,
    pub mu: f64,
}

/// Samples are drawn over the whole pinched cone `{|A⁰|² < H²/(n(n−1))}` and
/// filtered by `σ₀`, so the estimate is nondecreasing in `σ₀` for a fixed seed.
pub fn estimate_mu(f: &SpeedFunction, sigma0: f64, samples: usize, seed: u64) -> Result<MuEstimate> {
    let n = f.n();
    let nf = n as f64;
    let cap = 1.0 / (nf * (nf - 1.0));
    if !(sigma0 > 0.0 && sigma0 < cap) {
        return Err(Error::InvalidShape(format!("σ₀ = {sigma0} outside (0, {cap})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut est = MuEstimate { sigma0, samples_used: 0, hessian: 0.0, gradient: 0.0, value: 0.0, mu: 0.0 };
    for _ in 0..samples {
        let (k, h, eps) = sample_tight(&mut rng, n);
        if eps > sigma0 {
            continue;
        }
        est.samples_used += 1;
        let kk = PrincipalCurvatures::new(k.clone())?;
        let fv = nf * f.eval(&kk)?;
        let grad: Vec<f64> = f.gradient(&kk)?.iter().map(|g| nf * g).collect();
        let hess = f.hessian(&kk)? * nf;
        let a0 = (eps * h * h).sqrt();
        let mut op = SymmetricEigen::new(hess.clone()).eigenvalues.amax();
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = k[i] - k[j];
                let q = if gap.abs() < crate::curvature::TIE_TOLERANCE * h {
                    hess[(i, i)] - hess[(i, j)]
                } else {
                    (grad[i] - grad[j]) / gap
                };
                op = op.max(q.abs());
            }
        }
        est.hessian = est.hessian.max(op * h);
        if a0 > 0.0 {
            let dev = grad.iter().map(|g| (g - 1.0).abs()).fold(0.0, f64::max);
            est.gradient = est.gradient.max(dev * h / a0);
            est.value = est.value.max(2.0 * (fv - h).abs() * h / (a0 * a0));
        }
    }
    est.mu = est.hessian.max(est.gradient).max(est.value);
    Ok(est)
}

/// Time difference of `r₁` between two states against `w″ + w` for
/// `w = −Φ(f)` at the earlier state, with `w″` from a full cosine
/// interpolation of the nodal values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChainRuleReport {
    pub dt: f64,
    pub max_deviation: f64,
    /// `max |w″ + w|`, the size of the compared quantity.
    pub scale: f64,
}

pub fn chainrule_consistency(
    before: &FlowState,
    after: &FlowState,
    f: &SpeedFunction,
    phi: &PhiProfile,
) -> Result<ChainRuleReport> {
    let dt = after.t - before.t;
    if dt <= 0.0 {
        return Err(Error::InvalidShape(format!("snapshots are not ordered in time (dt = {dt})")));
    }
    let r_before = radii(&before.profile)?;
    let r_after = radii(&after.profile)?;
    let nodes = r_before.len();
    let big_n = nodes - 1;
    let w: Vec<f64> = (0..nodes)
        .map(|j| -phi.value(f.axisymmetric(r_before.kappa_axial(j), r_before.kappa_rot(j)).0))
        .collect();
    let theta: Vec<f64> = (0..nodes).map(|j| j as f64 * std::f64::consts::PI / big_n as f64).collect();
    let end_weight = |j: usize| if j == 0 || j == big_n { 0.5 } else { 1.0 };
    let coeffs: Vec<f64> = (0..=big_n)
        .map(|m| {
            let s: f64 = (0..nodes).map(|j| end_weight(j) * w[j] * (m as f64 * theta[j]).cos()).sum();
            2.0 / big_n as f64 * s * end_weight(m)
        })
        .collect();
    let mut max_dev: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for j in 0..nodes {
        let target: f64 = coeffs
            .iter()
            .enumerate()
            .map(|(m, b)| (1.0 - (m * m) as f64) * b * (m as f64 * theta[j]).cos())
            .sum();
        let fd = (r_after.r1[j] - r_before.r1[j]) / dt;
        max_dev = max_dev.max((fd - target).abs());
        scale = scale.max(target.abs());
    }
    Ok(ChainRuleReport { dt, max_deviation: max_dev, scale })
}

/// Dormand–Prince 5(4) integration of `Θ′ = −Φ(1/Θ)` from `Θ(0) = Θ₀`,
/// returning `Θ` at each requested time (ascending).
pub fn theta_ode(phi: &PhiProfile, theta0: f64, times: &[f64], rtol: f64) -> Result<Vec<f64>> {
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let rhs = |y: f64| -> f64 { if y > 0.0 { -phi.value(1.0 / y) } else { f64::NAN } };
    let mut t = 0.0;
    let mut y = theta0;
    let mut h = 1e-3 * theta0 / rhs(theta0).abs();
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        while t < target {
            let step = h.min(target - t);
            let mut k = [0.0; 7];
            k[0] = rhs(y);
            for s in 1..7 {
                let ys = y + step * (0..s).map(|j| A[s][j] * k[j]).sum::<f64>();
                k[s] = rhs(ys);
            }
            let y_new = y + step * (0..6).map(|j| A[6][j] * k[j]).sum::<f64>();
            let err = step * (0..7).map(|j| E[j] * k[j]).sum::<f64>();
            let err_norm = (err / (rtol * y.abs().max(y_new.abs()))).abs();
            if err_norm.is_finite() && err_norm <= 1.0 && y_new > 0.0 {
                t += step;
                y = y_new;
                let grow = if err_norm == 0.0 { 5.0 } else { (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0) };
                if step == h {
                    h *= grow;
                } else {
                    h = h.max(step * grow);
                }
            } else {
                let shrink = if err_norm.is_finite() { (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.5) } else { 0.1 };
                h = step * shrink;
                if h < 1e-300 {
                    return Err(Error::Quadrature(format!("ODE step underflow at t = {t}")));
                }
            }
        }
        out.push(y);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThetaCrossCheck {
    pub phi: PhiProfile,
    pub theta0: f64,
    pub extinction_time: f64,
    /// Radius at the end of the compared window.
    pub theta_end: f64,
    /// Largest relative difference between the quadrature evaluator and the ODE solution.
    pub max_rel_diff: f64,
    pub pass: bool,
}

/// Tolerance of the `Θ` cross-check.
pub const THETA_TOLERANCE: f64 = 1e-8;

/// Quadrature evaluator against DOPRI5 on `[0, t_end]`, where `Θ(t_end)` is
/// `Θ₀/20` or the smallest radius at which the problem is still well
/// conditioned, whichever is larger. Perturbations of `Θ` grow by
/// `Φ(1/Θ)/Φ(1/Θ₀)` along the solution, and `Θ(t)` is sensitive to `t`
/// through `Φ(1/Θ)·T/Θ`; both are kept moderate.
pub fn theta_cross_check(phi: &PhiProfile, theta0: f64) -> Result<ThetaCrossCheck> {
    let st = sphere_theta(phi, theta0)?;
    let big_t = st.extinction_time();
    let phi0 = phi.value(1.0 / theta0);
    let conditioned = |th: f64| {
        let speed = phi.value(1.0 / th);
        speed <= 1e4 * phi0 && speed * big_t * f64::EPSILON / th <= 1e-10
    };
    let mut theta_end = theta0 / 20.0;
    if !conditioned(theta_end) {
        let (mut lo, mut hi) = (theta_end, theta0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if conditioned(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        theta_end = hi;
    }
    let t_end = big_t - crate::monitors::shrink_time(phi, theta_end)?;
    let times: Vec<f64> = (1..=40).map(|i| t_end * i as f64 / 40.0).collect();
    let ode = theta_ode(phi, theta0, &times, 1e-14)?;
    let mut worst: f64 = 0.0;
    for (t, y) in times.iter().zip(&ode) {
        let q = st.theta(*t)?;
        worst = worst.max((q - y).abs() / y);
    }
    Ok(ThetaCrossCheck {
        phi: phi.clone(),
        theta0,
        extinction_time: st.extinction_time(),
        theta_end,
        max_rel_diff: worst,
        pass: worst <= THETA_TOLERANCE,
    })
}

/// Largest finite-difference errors per speed and dimension.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdSummary {
    pub kind: SpeedKind,
    pub n: usize,
    pub samples: usize,
    pub gradient_error: f64,
    pub hessian_error: f64,
    pub eigen_error: f64,
    pub pass: bool,
}

pub const FD_GRADIENT_TOLERANCE: f64 = 1e-6;
pub const FD_HESSIAN_TOLERANCE: f64 = 1e-5;

pub fn fd_suite(kind: SpeedKind, n: usize, samples: usize, seed: u64) -> Result<FdSummary> {
    let f = SpeedFunction::new(kind, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut g, mut h, mut e) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let k = sample_cone(&mut rng, n, 10.0);
        g = g.max(fd_check_gradient(&f, &k, 1e-5)?);
        h = h.max(fd_check_hessian(&f, &k, 1e-4)?);
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        e = e.max(eigen_perturbation_check(&f, &k, &b)?);
    }
    Ok(FdSummary {
        kind,
        n,
        samples,
        gradient_error: g,
        hessian_error: h,
        eigen_error: e,
        pass: g <= FD_GRADIENT_TOLERANCE && h <= FD_HESSIAN_TOLERANCE && e <= FD_HESSIAN_TOLERANCE,
    })
}

/// Sample counts of [`verify_all`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VerifySettings {
    pub fd_samples: usize,
    pub suite_samples: usize,
    /// Pinching of the identity suite.
    pub eps_pinch: f64,
    pub seed: u64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self { fd_samples: 1000, suite_samples: 10_000, eps_pinch: 0.1, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub settings: VerifySettings,
    pub finite_differences: Vec<FdSummary>,
    pub suites: Vec<SuiteReport>,
    pub theta: Vec<ThetaCrossCheck>,
    pub mu: Vec<MuEstimate>,
    pub pass: bool,
}

/// Every oracle suite for `n ∈ {2, 3, 4}`.
pub fn verify_all(settings: VerifySettings) -> Result<VerifyReport> {
    let mut finite_differences = Vec::new();
    let mut suites = Vec::new();
    let mut mu = Vec::new();
    for n in 2..=4 {
        let seed = settings.seed.wrapping_add(n as u64);
        for kind in builtin_speeds() {
            finite_differences.push(fd_suite(kind, n, settings.fd_samples, seed)?);
        }
        suites.push(pinched_identity_suite(settings.suite_samples, n, settings.eps_pinch, seed)?);
        suites.push(gradient_inequality_suite(settings.suite_samples, n, seed));
        suites.push(tight_pinch_suite(settings.suite_samples, n, seed));
        let gm = SpeedFunction::new(SpeedKind::GeometricMean, n)?;
        let cap = 1.0 / (n * (n - 1)) as f64;
        mu.push(estimate_mu(&gm, 0.1 * cap, settings.suite_samples, seed)?);
    }
    let mut theta = Vec::new();
    for phi in builtin_profiles() {
        for theta0 in [0.5, 1.0, 2.0] {
            theta.push(theta_cross_check(&phi, theta0)?);
        }
    }
    let pass = finite_differences.iter().all(|s| s.pass)
        && suites.iter().all(|s| s.pass)
        && theta.iter().all(|t| t.pass);
    Ok(VerifyReport { settings, finite_differences, suites, theta, mu, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowProblem;
    use crate::geometry::{make_profile, ShapeSpec};

    fn pc(v: &[f64]) -> PrincipalCurvatures {
        PrincipalCurvatures::new(v.to_vec()).unwrap()
    }

    #[test]
    fn fd_examples() {
        let am = SpeedFunction::new(SpeedKind::ArithmeticMean, 3).unwrap();
        assert!(fd_check_gradient(&am, &pc(&[1.0, 2.0, 3.0]), 1e-5).unwrap() < 1e-10);
        assert!(fd_check_hessian(&am, &pc(&[1.0, 2.0, 3.0]), 1e-4).unwrap() < 1e-6);
        assert!(am.hessian(&pc(&[1.0, 2.0, 3.0])).unwrap().iter().all(|&x| x == 0.0));
        let gm = SpeedFunction::new(SpeedKind::GeometricMean, 2).unwrap();
        assert!(fd_check_gradient(&gm, &pc(&[1.0, 2.0]), 1e-5).unwrap() < 1e-6);
        assert!(fd_check_hessian(&gm, &pc(&[1.0, 2.0]), 1e-4).unwrap() < 1e-5);
        let rms = SpeedFunction::new(SpeedKind::Rms, 2).unwrap();
        assert!(fd_check_gradient(&rms, &pc(&[3.0, 4.0]), 1e-5).unwrap() < 1e-6);
        let p3 = SpeedFunction::new(SpeedKind::PowerMean { p: 3.0 }, 3).unwrap();
        assert!(fd_check_hessian(&p3, &pc(&[1.0, 2.0, 3.0]), 1e-4).unwrap() < 1e-5);
    }

    #[test]
    fn eigen_perturbation_matches_form() {
        let rms = SpeedFunction::new(SpeedKind::Rms, 2).unwrap();
        let b = DMatrix::from_row_slice(2, 2, &[0.3, -0.7, -0.7, 1.1]);
        assert!(eigen_perturbation_check(&rms, &pc(&[1.0, 2.0]), &b).unwrap() < 1e-5);
        let gm = SpeedFunction::new(SpeedKind::GeometricMean, 3).unwrap();
        let b = DMatrix::from_row_slice(3, 3, &[0.1, 0.5, -0.2, 0.5, -0.3, 0.9, -0.2, 0.9, 0.4]);
        assert!(eigen_perturbation_check(&gm, &pc(&[1.0, 1.7, 2.9]), &b).unwrap() < 1e-5);
    }

    #[test]
    fn tensor_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = SymmetricTensor3::random(&mut rng, 3);
        assert!(t.is_symmetric());
        let single = SymmetricTensor3::from_fn(2, |i, j, k| if i + j + k == 0 { 2.0 } else { 0.0 });
        assert_eq!(single.norm2(), 4.0);
        assert_eq!(single.trace(), vec![2.0, 0.0]);
    }

    #[test]
    fn suites_pass_on_small_samples() {
        for n in 2..=4 {
            let r = pinched_identity_suite(500, n, 0.1, 1).unwrap();
            assert!(r.pass, "{r:?}");
            assert!(r.check("quartic_identity").unwrap().worst < 1e-12);
            assert!(gradient_inequality_suite(500, n, 1).pass);
            let r = tight_pinch_suite(500, n, 1);
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn mu_examples() {
        let am = SpeedFunction::new(SpeedKind::ArithmeticMean, 2).unwrap();
        let e = estimate_mu(&am, 0.05, 500, 0).unwrap();
        assert!(e.mu < 1e-12, "{e:?}");
        let gm = SpeedFunction::new(SpeedKind::GeometricMean, 2).unwrap();
        let small = estimate_mu(&gm, 0.05, 2000, 0).unwrap();
        let large = estimate_mu(&gm, 0.2, 2000, 0).unwrap();
        assert!(small.mu.is_finite() && small.mu > 0.0);
        assert!(large.mu >= small.mu);
        let doubled = estimate_mu(&gm, 0.05, 4000, 0).unwrap();
        assert!((doubled.mu / small.mu - 1.0).abs() < 0.1);
    }

    #[test]
    fn chainrule_on_sphere_and_perturbation() {
        let phi = PhiProfile::power_sum(vec![(1.0, 1.0), (1.0, 3.0)]).unwrap();
        let f = SpeedFunction::new(SpeedKind::GeometricMean, 2).unwrap();
        let problem = FlowProblem::new(f, phi.clone()).unwrap();
        let s0 = FlowState::new(make_profile(&ShapeSpec::Sphere { radius: 1.0 }, 2, 16).unwrap()).unwrap();
        let s1 = problem.step(&s0, 1e-5).unwrap();
        let r = chainrule_consistency(&s0, &s1, &f, &phi).unwrap();
        assert!(r.max_deviation < 1e-3 * r.scale, "{r:?}");

        let p = make_profile(&ShapeSpec::PerturbedSphere { radius: 1.0, epsilon: 0.05, mode: 2 }, 2, 16).unwrap();
        let s0 = FlowState::new(p).unwrap();
        let dev = |dt: f64| {
            let s1 = problem.step(&s0, dt).unwrap();
            chainrule_consistency(&s0, &s1, &f, &phi).unwrap().max_deviation
        };
        let ratio = dev(2e-5) / dev(1e-5);
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn theta_ode_closed_form() {
        let linear = PhiProfile::power_sum(vec![(1.0, 1.0)]).unwrap();
        let y = theta_ode(&linear, 1.0, &[0.1, 0.4], 1e-12).unwrap();
        assert!((y[0] - 0.8f64.sqrt()).abs() < 1e-11);
        assert!((y[1] - 0.2f64.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn theta_cross_checks() {
        for phi in builtin_profiles() {
            for theta0 in [0.5, 1.0, 2.0] {
                let c = theta_cross_check(&phi, theta0).unwrap();
                assert!(c.pass, "{c:?}");
            }
        }
    }
}
