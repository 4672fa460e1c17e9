//! Axisymmetric convex hypersurfaces represented by their support function
//! `u(θ) = Σ a_m cos(mθ)` over the normal angle `θ ∈ [0, π]`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(points: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; points];
    let mut w = vec![0.0; points];
    let nf = points as f64;
    for i in 0..points.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=points {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[points - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[points - 1 - i] = wi;
    }
    (x, w)
}

/// `(cos, sin)` of `kπ/N` with exact values at multiples of `π/2`.
fn trig(k: usize, n: usize) -> (f64, f64) {
    let k = k % (2 * n);
    if k == 0 {
        (1.0, 0.0)
    } else if k == n {
        (-1.0, 0.0)
    } else if 2 * k == n {
        (0.0, 1.0)
    } else if 2 * k == 3 * n {
        (0.0, -1.0)
    } else {
        let a = k as f64 * PI / n as f64;
        (a.cos(), a.sin())
    }
}

/// Collocation tables for `M` cosine modes on `N + 1` nodes `θ_j = jπ/N`,
/// plus a Gauss–Legendre rule in `θ` for surface integrals.
#[derive(Debug)]
pub struct CosineBasis {
    modes: usize,
    nodes: usize,
    theta: Vec<f64>,
    value: Vec<f64>,
    slope: Vec<f64>,
    radius1: Vec<f64>,
    radius2: Vec<f64>,
    projection: Vec<f64>,
    quad_cos: Vec<f64>,
    quad_sin: Vec<f64>,
    quad_weight: Vec<f64>,
    quad_value: Vec<f64>,
}

impl CosineBasis {
    /// Basis with `N = 2M` nodes.
    pub fn new(modes: usize) -> Result<Arc<Self>> {
        Self::with_nodes(modes, 2 * modes)
    }

    pub fn with_nodes(modes: usize, nodes: usize) -> Result<Arc<Self>> {
        if modes < 2 {
            return Err(Error::InvalidShape(format!("need at least 2 modes, got {modes}")));
        }
        if nodes < 2 * modes {
            return Err(Error::InvalidShape(format!("need at least {} nodes, got {nodes}", 2 * modes)));
        }
        let cols = modes + 1;
        let rows = nodes + 1;
        let theta: Vec<f64> = (0..rows).map(|j| j as f64 * PI / nodes as f64).collect();
        let mut value = vec![0.0; rows * cols];
        let mut slope = vec![0.0; rows * cols];
        let mut radius1 = vec![0.0; rows * cols];
        let mut radius2 = vec![0.0; rows * cols];
        for j in 0..rows {
            let (c1, s1) = trig(j, nodes);
            let pole = j == 0 || j == nodes;
            for m in 0..cols {
                let (c, s) = trig(m * j, nodes);
                let mf = m as f64;
                let idx = j * cols + m;
                value[idx] = c;
                slope[idx] = -mf * s;
                radius1[idx] = (1.0 - mf * mf) * c;
                radius2[idx] = if pole { radius1[idx] } else { c - mf * s * c1 / s1 };
            }
        }
        // trapezoid (DCT-I) projection truncated to the first M+1 modes
        let mut projection = vec![0.0; cols * rows];
        for m in 0..cols {
            let scale = if m == 0 || m == nodes { 1.0 } else { 2.0 } / nodes as f64;
            for j in 0..rows {
                let w = if j == 0 || j == nodes { 0.5 } else { 1.0 };
                projection[m * rows + j] = scale * w * value[j * cols + m];
            }
        }
        // lower half of a 2N-point rule; the upper half is its mirror image
        let (x, w) = gauss_legendre(2 * nodes);
        let mut quad_cos = Vec::with_capacity(nodes);
        let mut quad_sin = Vec::with_capacity(nodes);
        let mut quad_weight = Vec::with_capacity(nodes);
        let mut quad_value = Vec::with_capacity(nodes * cols);
        for (&xi, &wi) in x.iter().zip(&w).take(nodes) {
            let t = 0.5 * PI * (xi + 1.0);
            quad_cos.push(t.cos());
            quad_sin.push(t.sin());
            quad_weight.push(0.5 * PI * wi);
            quad_value.extend((0..cols).map(|m| (m as f64 * t).cos()));
        }
        Ok(Arc::new(Self {
            modes,
            nodes,
            theta,
            value,
            slope,
            radius1,
            radius2,
            projection,
            quad_cos,
            quad_sin,
            quad_weight,
            quad_value,
        }))
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// `N`; there are `N + 1` nodes including both poles.
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn apply(table: &[f64], coeffs: &[f64], out: &mut [f64]) {
        let cols = coeffs.len();
        for (j, o) in out.iter_mut().enumerate() {
            let row = &table[j * cols..(j + 1) * cols];
            *o = row.iter().zip(coeffs).map(|(t, a)| t * a).sum();
        }
    }

    pub(crate) fn values_into(&self, coeffs: &[f64], out: &mut [f64]) {
        Self::apply(&self.value, coeffs, out)
    }

    pub(crate) fn radii_into(&self, coeffs: &[f64], r1: &mut [f64], r2: &mut [f64]) {
        Self::apply(&self.radius1, coeffs, r1);
        Self::apply(&self.radius2, coeffs, r2);
    }

    /// Coefficients of the degree-`M` truncation of the interpolant of `samples`.
    pub fn project(&self, samples: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.modes + 1];
        self.project_into(samples, &mut out);
        out
    }

    pub(crate) fn project_into(&self, samples: &[f64], out: &mut [f64]) {
        Self::apply(&self.projection, samples, out)
    }

    /// `∫₀^π u(θ)·extra(cosθ)·sin^{n−1}θ dθ` for `u` given by cosine coefficients.
    /// Mirrored nodes are summed in pairs so odd integrands cancel exactly.
    fn integrate(&self, coeffs: &[f64], n: usize, extra: impl Fn(f64) -> f64) -> f64 {
        let cols = self.modes + 1;
        let mut total = 0.0;
        for q in 0..self.quad_cos.len() {
            let row = &self.quad_value[q * cols..(q + 1) * cols];
            let (mut even, mut odd) = (0.0, 0.0);
            for (m, (c, a)) in row.iter().zip(coeffs).enumerate() {
                if m % 2 == 0 {
                    even += c * a;
                } else {
                    odd += c * a;
                }
            }
            let c = self.quad_cos[q];
            let w = self.quad_weight[q] * self.quad_sin[q].powi(n as i32 - 1);
            total += w * ((even + odd) * extra(c) + (even - odd) * extra(-c));
        }
        total
    }
}

/// Principal radii and curvatures at the collocation nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureField {
    pub theta: Vec<f64>,
    /// Meridional radius `u″ + u`.
    pub r1: Vec<f64>,
    /// Rotational radius `u + u′cotθ` (equal to `r1` at the poles), multiplicity `n − 1`.
    pub r2: Vec<f64>,
}

impl CurvatureField {
    pub fn len(&self) -> usize {
        self.r1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r1.is_empty()
    }

    pub fn kappa_axial(&self, j: usize) -> f64 {
        1.0 / self.r1[j]
    }

    pub fn kappa_rot(&self, j: usize) -> f64 {
        1.0 / self.r2[j]
    }

    /// `(κ_ax, κ_rot, …, κ_rot)` at node `j`.
    pub fn kappa_vector(&self, j: usize, n: usize) -> Vec<f64> {
        let mut k = vec![self.kappa_rot(j); n];
        k[0] = self.kappa_axial(j);
        k
    }
}

/// Support function of a convex axisymmetric hypersurface in `ℝⁿ⁺¹`.
#[derive(Clone, Debug)]
pub struct SupportProfile {
    n: usize,
    coeffs: Vec<f64>,
    basis: Arc<CosineBasis>,
}

impl PartialEq for SupportProfile {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.coeffs == other.coeffs
            && self.basis.modes == other.basis.modes
            && self.basis.nodes == other.basis.nodes
    }
}

impl SupportProfile {
    /// Validated profile: positive support and strictly positive radii at every node.
    pub fn new(n: usize, coeffs: Vec<f64>, basis: Arc<CosineBasis>) -> Result<Self> {
        let p = Self::from_parts(n, coeffs, basis)?;
        let values = p.values();
        if let Some((j, &u)) = values.iter().enumerate().find(|(_, &u)| !(u > 0.0)) {
            return Err(Error::InvalidShape(format!(
                "support {u} is not positive at node {j} (theta = {})",
                p.basis.theta[j]
            )));
        }
        radii(&p)?;
        Ok(p)
    }

    /// Profile without convexity validation.
    pub fn from_parts(n: usize, coeffs: Vec<f64>, basis: Arc<CosineBasis>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Dimension(n));
        }
        if coeffs.len() != basis.modes + 1 {
            return Err(Error::Length { expected: basis.modes + 1, got: coeffs.len() });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidShape("non-finite coefficient".into()));
        }
        Ok(Self { n, coeffs, basis })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn basis(&self) -> &Arc<CosineBasis> {
        &self.basis
    }

    pub fn theta(&self) -> &[f64] {
        &self.basis.theta
    }

    pub(crate) fn with_coeffs(&self, coeffs: Vec<f64>) -> Self {
        Self { n: self.n, coeffs, basis: Arc::clone(&self.basis) }
    }

    /// `u(θ_j)` at every node.
    pub fn values(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.basis.nodes + 1];
        self.basis.values_into(&self.coeffs, &mut out);
        out
    }

    /// `u′(θ_j)` at every node.
    pub fn slopes(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.basis.nodes + 1];
        CosineBasis::apply(&self.basis.slope, &self.coeffs, &mut out);
        out
    }

    /// `(u(θ), u′(θ))` at an arbitrary angle.
    pub fn eval(&self, theta: f64) -> (f64, f64) {
        self.coeffs.iter().enumerate().fold((0.0, 0.0), |(u, du), (m, &a)| {
            let mt = m as f64 * theta;
            (u + a * mt.cos(), du - a * m as f64 * mt.sin())
        })
    }

    /// Profile of the body dilated by `lambda` about the origin.
    pub fn dilate(&self, lambda: f64) -> Self {
        self.with_coeffs(self.coeffs.iter().map(|a| a * lambda).collect())
    }

    /// Mean of `u` over the unit sphere.
    pub fn mean_support(&self) -> f64 {
        let b = &self.basis;
        b.integrate(&self.coeffs, self.n, |_| 1.0) / b.integrate(&unit(b.modes), self.n, |_| 1.0)
    }
}

fn unit(modes: usize) -> Vec<f64> {
    let mut c = vec![0.0; modes + 1];
    c[0] = 1.0;
    c
}

/// Initial shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    Sphere { radius: f64 },
    /// Ellipsoid of revolution with semi-axis `axial` along the axis and `equatorial` across it.
    Spheroid { axial: f64, equatorial: f64 },
    /// `u = R(1 + ε cos mθ)` with `m` even.
    PerturbedSphere { radius: f64, epsilon: f64, mode: usize },
    Coefficients { coeffs: Vec<f64> },
}

/// Builds and validates the initial support function.
pub fn make_profile(spec: &ShapeSpec, n: usize, modes: usize) -> Result<SupportProfile> {
    let basis = CosineBasis::new(modes)?;
    make_profile_in(spec, n, basis)
}

pub fn make_profile_in(spec: &ShapeSpec, n: usize, basis: Arc<CosineBasis>) -> Result<SupportProfile> {
    let modes = basis.modes;
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidShape(format!("{name} must be positive, got {v}")))
        }
    };
    let coeffs = match spec {
        ShapeSpec::Sphere { radius } => {
            positive("radius", *radius)?;
            let mut c = vec![0.0; modes + 1];
            c[0] = *radius;
            c
        }
        ShapeSpec::Spheroid { axial, equatorial } => {
            positive("axial semi-axis", *axial)?;
            positive("equatorial semi-axis", *equatorial)?;
            let samples: Vec<f64> = basis
                .theta
                .iter()
                .map(|&t| (axial * axial * t.cos().powi(2) + equatorial * equatorial * t.sin().powi(2)).sqrt())
                .collect();
            basis.project(&samples)
        }
        ShapeSpec::PerturbedSphere { radius, epsilon, mode } => {
            positive("radius", *radius)?;
            if *mode % 2 != 0 || *mode == 0 || *mode > modes {
                return Err(Error::InvalidShape(format!(
                    "perturbation mode must be even and in 2..={modes}, got {mode}"
                )));
            }
            let mut c = vec![0.0; modes + 1];
            c[0] = *radius;
            c[*mode] = radius * epsilon;
            c
        }
        ShapeSpec::Coefficients { coeffs } => {
            if coeffs.is_empty() || coeffs.len() > modes + 1 {
                return Err(Error::InvalidShape(format!(
                    "expected between 1 and {} coefficients, got {}",
                    modes + 1,
                    coeffs.len()
                )));
            }
            let mut c = coeffs.clone();
            c.resize(modes + 1, 0.0);
            c
        }
    };
    SupportProfile::new(n, coeffs, basis)
}

/// Principal radii at every node; fails at the first node where either radius is not positive.
pub fn radii(profile: &SupportProfile) -> Result<CurvatureField> {
    let rows = profile.basis.nodes + 1;
    let mut r1 = vec![0.0; rows];
    let mut r2 = vec![0.0; rows];
    profile.basis.radii_into(&profile.coeffs, &mut r1, &mut r2);
    for j in 0..rows {
        if !(r1[j] > 0.0 && r2[j] > 0.0) {
            return Err(Error::NotConvex { node: j, theta: profile.basis.theta[j], r1: r1[j], r2: r2[j] });
        }
    }
    Ok(CurvatureField { theta: profile.basis.theta.clone(), r1, r2 })
}

/// Axial component of the Steiner point.
pub fn steiner_offset(profile: &SupportProfile) -> f64 {
    let b = &profile.basis;
    let num = b.integrate(&profile.coeffs, profile.n, |c| c);
    let den = b.integrate(&unit(b.modes), profile.n, |c| c * c);
    num / den
}

/// Translates the body so that its Steiner point lies at the origin.
pub fn steiner_recenter(profile: &SupportProfile) -> (SupportProfile, f64) {
    let z = steiner_offset(profile);
    let mut c = profile.coeffs.clone();
    c[1] -= z;
    (profile.with_coeffs(c), z)
}

/// `(min u, max u)` over the nodes: support-function proxies for the inner and outer radius.
pub fn radius_bounds(profile: &SupportProfile) -> (f64, f64) {
    profile
        .values()
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| (lo.min(u), hi.max(u)))
}

/// Generating curve `(z, ρ)` at every node.
pub fn embed_profile(profile: &SupportProfile) -> Vec<(f64, f64)> {
    let u = profile.values();
    let du = profile.slopes();
    profile
        .theta()
        .iter()
        .zip(u.iter().zip(&du))
        .map(|(&t, (&u, &du))| {
            let (c, s) = (t.cos(), t.sin());
            (u * c - du * s, u * s + du * c)
        })
        .collect()
}
