//! Symmetric degree-one speed functions of the principal curvatures.
//!
//! Every speed is normalized so that `f(1, …, 1) = 1`. Quantities that are
//! naturally compared against the mean curvature `H` use `F̂ = n·f`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative gap below which two curvatures are treated as tied in the
/// second-derivative form.
pub const TIE_TOLERANCE: f64 = 1e-7;

/// Quadratic form values within this multiple of `|B|²·f` count as zero.
pub const FORM_ZERO_TOLERANCE: f64 = 1e-10;

/// A point of the positive cone: `n ≥ 2` strictly positive curvatures.
#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalCurvatures {
    values: Vec<f64>,
}

impl PrincipalCurvatures {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Dimension(values.len()));
        }
        for (index, &value) in values.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Domain { index, value });
            }
        }
        Ok(Self { values })
    }

    pub fn umbilic(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Componentwise reciprocal, mapping curvatures to radii and back.
    pub fn reciprocal(&self) -> Self {
        Self { values: self.values.iter().map(|k| 1.0 / k).collect() }
    }
}

/// The builtin speed families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeedKind {
    ArithmeticMean,
    /// `K^{1/n}`.
    GeometricMean,
    /// `|A|/√n`.
    Rms,
    HarmonicMean,
    /// `(Σκᵢᵖ/n)^{1/p}`; `p = 0` is the geometric mean.
    PowerMean { p: f64 },
}

impl SpeedKind {
    pub fn name(&self) -> &'static str {
        match self {
            SpeedKind::ArithmeticMean => "arithmetic_mean",
            SpeedKind::GeometricMean => "geometric_mean",
            SpeedKind::Rms => "rms",
            SpeedKind::HarmonicMean => "harmonic_mean",
            SpeedKind::PowerMean { .. } => "power_mean",
        }
    }

    fn canonical(self) -> Self {
        match self {
            SpeedKind::PowerMean { p } if p == 0.0 => SpeedKind::GeometricMean,
            other => other,
        }
    }
}

/// Concavity class of a speed in nonradial directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcavityClass {
    Linear,
    Convex,
    Concave,
    Neither,
}

/// A speed function `f` on the positive cone of `ℝⁿ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedFunction {
    kind: SpeedKind,
    n: usize,
}

impl SpeedFunction {
    pub fn new(kind: SpeedKind, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Dimension(n));
        }
        if let SpeedKind::PowerMean { p } = kind {
            if !p.is_finite() {
                return Err(Error::InvalidSpeed(format!("power mean exponent {p} is not finite")));
            }
        }
        Ok(Self { kind, n })
    }

    pub fn kind(&self) -> SpeedKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn check(&self, k: &PrincipalCurvatures) -> Result<()> {
        if k.n() != self.n {
            return Err(Error::Length { expected: self.n, got: k.n() });
        }
        Ok(())
    }

    /// `f` on a weighted list of `(κ, multiplicity)` pairs whose multiplicities sum to `n`.
    fn weighted(&self, pairs: &[(f64, f64)]) -> f64 {
        let n = self.n as f64;
        match self.kind.canonical() {
            SpeedKind::ArithmeticMean => pairs.iter().map(|&(k, w)| w * k).sum::<f64>() / n,
            SpeedKind::GeometricMean => {
                (pairs.iter().map(|&(k, w)| w * k.ln()).sum::<f64>() / n).exp()
            }
            SpeedKind::Rms => (pairs.iter().map(|&(k, w)| w * k * k).sum::<f64>() / n).sqrt(),
            SpeedKind::HarmonicMean => n / pairs.iter().map(|&(k, w)| w / k).sum::<f64>(),
            SpeedKind::PowerMean { p } => {
                (pairs.iter().map(|&(k, w)| w * k.powf(p)).sum::<f64>() / n).powf(1.0 / p)
            }
        }
    }

    /// `∂f/∂κᵢ` given `f` and `κᵢ`.
    fn partial(&self, f: f64, ki: f64) -> f64 {
        let n = self.n as f64;
        match self.kind.canonical() {
            SpeedKind::ArithmeticMean => 1.0 / n,
            SpeedKind::GeometricMean => f / (n * ki),
            SpeedKind::Rms => ki / (n * f),
            SpeedKind::HarmonicMean => f * f / (n * ki * ki),
            SpeedKind::PowerMean { p } => f.powf(1.0 - p) * ki.powf(p - 1.0) / n,
        }
    }

    /// `∂²f/∂κᵢ∂κⱼ` given `f`, `κᵢ`, `κⱼ` and whether `i = j`.
    fn second_partial(&self, f: f64, ki: f64, kj: f64, diagonal: bool) -> f64 {
        let n = self.n as f64;
        let d = if diagonal { 1.0 } else { 0.0 };
        match self.kind.canonical() {
            SpeedKind::ArithmeticMean => 0.0,
            SpeedKind::GeometricMean => f / (n * n * ki * kj) - d * f / (n * ki * ki),
            SpeedKind::Rms => d / (n * f) - ki * kj / (n * n * f * f * f),
            SpeedKind::HarmonicMean => {
                let s = n / f;
                2.0 * n / (s * s * s * ki * ki * kj * kj) - d * 2.0 * n / (s * s * ki * ki * ki)
            }
            SpeedKind::PowerMean { p } => {
                (1.0 - p) * f.powf(1.0 - 2.0 * p) * ki.powf(p - 1.0) * kj.powf(p - 1.0) / (n * n)
                    + d * (p - 1.0) * f.powf(1.0 - p) * ki.powf(p - 2.0) / n
            }
        }
    }

    fn value_raw(&self, k: &[f64]) -> f64 {
        let pairs: Vec<(f64, f64)> = k.iter().map(|&v| (v, 1.0)).collect();
        self.weighted(&pairs)
    }

    /// `f(κ)`.
    pub fn eval(&self, k: &PrincipalCurvatures) -> Result<f64> {
        self.check(k)?;
        Ok(self.value_raw(k.as_slice()))
    }

    /// Gradient `(ḟ¹, …, ḟⁿ)`.
    pub fn gradient(&self, k: &PrincipalCurvatures) -> Result<Vec<f64>> {
        self.check(k)?;
        let f = self.value_raw(k.as_slice());
        Ok(k.as_slice().iter().map(|&ki| self.partial(f, ki)).collect())
    }

    /// Hessian `(f̈ⁱʲ)`.
    pub fn hessian(&self, k: &PrincipalCurvatures) -> Result<DMatrix<f64>> {
        self.check(k)?;
        let ks = k.as_slice();
        let f = self.value_raw(ks);
        Ok(DMatrix::from_fn(self.n, self.n, |i, j| self.second_partial(f, ks[i], ks[j], i == j)))
    }

    /// Value and the two distinct partials at an axisymmetric point
    /// `(κ_ax, κ_rot, …, κ_rot)`: returns `(f, ∂f/∂κ_ax, ∂f/∂κ_rot)`.
    pub fn axisymmetric(&self, k_axial: f64, k_rot: f64) -> (f64, f64, f64) {
        let f = self.weighted(&[(k_axial, 1.0), (k_rot, (self.n - 1) as f64)]);
        (f, self.partial(f, k_axial), self.partial(f, k_rot))
    }

    /// Dual speed `f_*(r) = 1/f(1/r)` on principal radii.
    pub fn dual(&self, r: &PrincipalCurvatures) -> Result<f64> {
        self.check(r)?;
        Ok(1.0 / self.value_raw(r.reciprocal().as_slice()))
    }

    /// Gradient of the dual speed with respect to the radii.
    pub fn dual_gradient(&self, r: &PrincipalCurvatures) -> Result<Vec<f64>> {
        let k = r.reciprocal();
        let f = self.eval(&k)?;
        let g = self.gradient(&k)?;
        Ok(g.iter().zip(k.as_slice()).map(|(gi, ki)| gi * ki * ki / (f * f)).collect())
    }

    /// Hessian of the dual speed with respect to the radii.
    pub fn dual_hessian(&self, r: &PrincipalCurvatures) -> Result<DMatrix<f64>> {
        let k = r.reciprocal();
        let ks = k.as_slice();
        let f = self.eval(&k)?;
        let fd = self.gradient(&k)?;
        let fdd = self.hessian(&k)?;
        // g(r) = f(1/r); f_* = 1/g
        let gd: Vec<f64> = (0..self.n).map(|i| -fd[i] * ks[i] * ks[i]).collect();
        Ok(DMatrix::from_fn(self.n, self.n, |i, j| {
            let mut gij = fdd[(i, j)] * ks[i] * ks[i] * ks[j] * ks[j];
            if i == j {
                gij += 2.0 * fd[i] * ks[i] * ks[i] * ks[i];
            }
            2.0 * gd[i] * gd[j] / (f * f * f) - gij / (f * f)
        }))
    }

    /// Second derivative of the matrix function `F` at `diag(κ)` in direction `B`.
    pub fn second_derivative_form(
        &self,
        k: &PrincipalCurvatures,
        b: &DMatrix<f64>,
    ) -> Result<SecondDerivativeForm> {
        let grad = self.gradient(k)?;
        let hess = self.hessian(k)?;
        matrix_second_derivative(k.as_slice(), &grad, &hess, b)
    }

    /// Second derivative of the dual matrix function at `diag(r)` in direction `B`.
    pub fn dual_second_derivative_form(
        &self,
        r: &PrincipalCurvatures,
        b: &DMatrix<f64>,
    ) -> Result<SecondDerivativeForm> {
        let grad = self.dual_gradient(r)?;
        let hess = self.dual_hessian(r)?;
        matrix_second_derivative(r.as_slice(), &grad, &hess, b)
    }
}

/// Value of a second-derivative form with the number of near-tied pairs
/// that used the limiting difference quotient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondDerivativeForm {
    pub value: f64,
    pub near_ties: usize,
}

/// `Σ f̈ᵏˡ B_kk B_ll + 2 Σ_{k<l} (ḟ_k − ḟ_l)/(κ_k − κ_l) B_kl²`.
pub fn matrix_second_derivative(
    k: &[f64],
    grad: &[f64],
    hess: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<SecondDerivativeForm> {
    let n = k.len();
    if b.nrows() != n || b.ncols() != n {
        return Err(Error::Length { expected: n, got: b.nrows() });
    }
    let kmax = k.iter().copied().fold(0.0, f64::max);
    let mut value = 0.0;
    for i in 0..n {
        for j in 0..n {
            value += hess[(i, j)] * b[(i, i)] * b[(j, j)];
        }
    }
    let mut near_ties = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = k[i] - k[j];
            let quotient = if gap.abs() < TIE_TOLERANCE * kmax {
                near_ties += 1;
                hess[(i, i)] - hess[(i, j)]
            } else {
                (grad[i] - grad[j]) / gap
            };
            let bij = 0.5 * (b[(i, j)] + b[(j, i)]);
            value += 2.0 * quotient * bij * bij;
        }
    }
    Ok(SecondDerivativeForm { value, near_ties })
}

/// Scalar invariants of a diagonal second fundamental form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShapeInvariants {
    /// Mean curvature `Σκᵢ`.
    pub h: f64,
    /// `|A|² = Σκᵢ²`.
    pub norm_a2: f64,
    /// `|A⁰|² = |A|² − H²/n`, evaluated as `(1/n)Σ_{i<j}(κᵢ−κⱼ)²` so that it is exactly zero at umbilic points.
    pub norm_a02: f64,
    /// `Σκᵢ³`.
    pub c: f64,
    /// Gauss curvature `Πκᵢ`.
    pub k: f64,
    pub pinch_ratio: f64,
}

impl ShapeInvariants {
    pub fn new(k: &PrincipalCurvatures) -> Self {
        let ks = k.as_slice();
        let n = ks.len();
        let mut pair_sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = ks[i] - ks[j];
                pair_sum += d * d;
            }
        }
        Self {
            h: ks.iter().sum(),
            norm_a2: ks.iter().map(|v| v * v).sum(),
            norm_a02: pair_sum / n as f64,
            c: ks.iter().map(|v| v * v * v).sum(),
            k: ks.iter().product(),
            pinch_ratio: k.max() / k.min(),
        }
    }
}

/// One point of the boundary approach `κ = (t, 1, …, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundarySample {
    pub t: f64,
    pub f: f64,
    pub f_dual: f64,
}

/// Sampled verification of the structural conditions on `f`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FConditionReport {
    pub kind: String,
    pub n: usize,
    pub normalization_ok: bool,
    pub homogeneity_residual: f64,
    pub monotone_ok: bool,
    pub concavity_class: ConcavityClass,
    pub inverse_concave_ok: bool,
    pub vanishes_on_boundary_ok: bool,
    pub dual_vanishes_on_boundary_ok: bool,
    pub boundary_profile: Vec<BoundarySample>,
    pub sample_count: usize,
    pub cone_ratio_bound: f64,
    pub seed: u64,
}

fn random_curvatures(rng: &mut ChaCha8Rng, n: usize, ratio_bound: f64) -> Vec<f64> {
    let span = ratio_bound.ln();
    (0..n).map(|_| (rng.gen::<f64>() * span).exp()).collect()
}

/// Random symmetric direction with diagonal orthogonal to `radial` and unit Frobenius norm.
fn random_nonradial_direction(rng: &mut ChaCha8Rng, radial: &[f64]) -> DMatrix<f64> {
    let n = radial.len();
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.gen_range(-1.0..1.0);
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }
    let rr: f64 = radial.iter().map(|v| v * v).sum();
    let proj: f64 = (0..n).map(|i| b[(i, i)] * radial[i]).sum::<f64>() / rr;
    for i in 0..n {
        b[(i, i)] -= proj * radial[i];
    }
    let norm = b.norm();
    if norm > 0.0 {
        b /= norm;
    }
    b
}

fn vanishes(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0]) && values.last().is_some_and(|&v| v < 1e-3)
}

/// Samples the cone `{κ : κ_max/κ_min ≤ ratio_bound}` log-uniformly and
/// checks normalization, homogeneity, monotonicity, concavity and the
/// boundary behaviour of `f` and of its dual.
pub fn condition_report_f(
    f: &SpeedFunction,
    samples: usize,
    ratio_bound: f64,
    seed: u64,
) -> FConditionReport {
    let n = f.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ones = PrincipalCurvatures::umbilic(n, 1.0).expect("umbilic point");
    let normalization_ok = (f.eval(&ones).expect("dimension") - 1.0).abs() <= 1e-14;

    let mut homogeneity_residual: f64 = 0.0;
    let mut monotone_ok = true;
    let (mut positive, mut negative) = (false, false);
    let mut inverse_concave_ok = true;
    for _ in 0..samples.max(1) {
        let k = PrincipalCurvatures::new(random_curvatures(&mut rng, n, ratio_bound.max(1.0)))
            .expect("positive sample");
        let value = f.eval(&k).expect("dimension");
        let grad = f.gradient(&k).expect("dimension");
        let euler: f64 = grad.iter().zip(k.as_slice()).map(|(g, v)| g * v).sum();
        homogeneity_residual = homogeneity_residual.max((euler - value).abs());
        monotone_ok &= grad.iter().all(|&g| g > 0.0);

        let b = random_nonradial_direction(&mut rng, k.as_slice());
        let q = f.second_derivative_form(&k, &b).expect("dimension").value;
        let tol = FORM_ZERO_TOLERANCE * value;
        positive |= q > tol;
        negative |= q < -tol;

        let r = k.reciprocal();
        let dual_value = f.dual(&r).expect("dimension");
        let b = random_nonradial_direction(&mut rng, r.as_slice());
        let q = f.dual_second_derivative_form(&r, &b).expect("dimension").value;
        inverse_concave_ok &= q <= FORM_ZERO_TOLERANCE * dual_value;
    }
    let concavity_class = match (positive, negative) {
        (false, false) => ConcavityClass::Linear,
        (true, false) => ConcavityClass::Convex,
        (false, true) => ConcavityClass::Concave,
        (true, true) => ConcavityClass::Neither,
    };

    let boundary_profile: Vec<BoundarySample> = (1..=24)
        .map(|e| {
            let t = 10f64.powi(-e);
            let mut v = vec![1.0; n];
            v[0] = t;
            let p = PrincipalCurvatures::new(v).expect("positive");
            BoundarySample { t, f: f.eval(&p).expect("dim"), f_dual: f.dual(&p).expect("dim") }
        })
        .collect();
    let fs: Vec<f64> = boundary_profile.iter().map(|b| b.f).collect();
    let fds: Vec<f64> = boundary_profile.iter().map(|b| b.f_dual).collect();

    FConditionReport {
        kind: f.kind().name().to_string(),
        n,
        normalization_ok,
        homogeneity_residual,
        monotone_ok,
        concavity_class,
        inverse_concave_ok,
        vanishes_on_boundary_ok: vanishes(&fs),
        dual_vanishes_on_boundary_ok: vanishes(&fds),
        boundary_profile,
        sample_count: samples.max(1),
        cone_ratio_bound: ratio_bound.max(1.0),
        seed,
    }
}
