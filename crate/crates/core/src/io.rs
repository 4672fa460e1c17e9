//! Run configuration parsing and output writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::curvature::SpeedKind;
use crate::error::{Error, Result};
use crate::flow::{apply_rescaling, estimate_extinction, prepare, Extinction, FlowState, RunConfig, RunResult};
use crate::geometry::{embed_profile, radii, steiner_offset, ShapeSpec, SupportProfile};
use crate::monitors::{monitor_sample, MonitorRecord, MonitorSettings};
use crate::speed::PhiProfile;

const TOP_KEYS: &[&str] = &[
    "n",
    "f",
    "phi",
    "shape",
    "modes",
    "c_safe",
    "r_stop",
    "sigma",
    "delta",
    "lambda",
    "monitor_stride",
    "max_steps",
    "seed",
    "override_classification",
];

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| Error::config(path, "expected an object"))
}

fn only_keys(map: &Map<String, Value>, allowed: &[&str], path: &str) -> Result<()> {
    match map.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(Error::config(format!("{path}/{k}"), "unknown key")),
        None => Ok(()),
    }
}

fn required<'a>(map: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    map.get(key).ok_or_else(|| Error::config(format!("{path}/{key}"), "missing required key"))
}

fn number(v: &Value, path: &str) -> Result<f64> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| Error::config(path, "expected a finite number"))
}

fn positive(v: &Value, path: &str) -> Result<f64> {
    let x = number(v, path)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(Error::config(path, format!("must be positive, got {x}")))
    }
}

fn integer(v: &Value, path: &str, min: u64) -> Result<u64> {
    let x = v.as_u64().ok_or_else(|| Error::config(path, "expected a nonnegative integer"))?;
    if x < min {
        return Err(Error::config(path, format!("must be at least {min}, got {x}")));
    }
    Ok(x)
}

fn kind<'a>(map: &'a Map<String, Value>, path: &str) -> Result<&'a str> {
    required(map, "kind", path)?.as_str().ok_or_else(|| Error::config(format!("{path}/kind"), "expected a string"))
}

fn parse_speed(v: &Value, path: &str) -> Result<SpeedKind> {
    let map = object(v, path)?;
    let k = kind(map, path)?;
    let plain = |kind: SpeedKind| {
        only_keys(map, &["kind"], path)?;
        Ok(kind)
    };
    match k {
        "arithmetic_mean" => plain(SpeedKind::ArithmeticMean),
        "geometric_mean" => plain(SpeedKind::GeometricMean),
        "rms" => plain(SpeedKind::Rms),
        "harmonic_mean" => plain(SpeedKind::HarmonicMean),
        "power_mean" => {
            only_keys(map, &["kind", "p"], path)?;
            let p = number(required(map, "p", path)?, &format!("{path}/p"))?;
            Ok(SpeedKind::PowerMean { p })
        }
        other => Err(Error::config(format!("{path}/kind"), format!("unknown speed function {other:?}"))),
    }
}

fn parse_phi(v: &Value, path: &str) -> Result<PhiProfile> {
    let map = object(v, path)?;
    let phi = match kind(map, path)? {
        "power_sum" => {
            only_keys(map, &["kind", "terms"], path)?;
            let tpath = format!("{path}/terms");
            let terms = required(map, "terms", path)?
                .as_array()
                .ok_or_else(|| Error::config(&tpath, "expected an array of [coefficient, exponent] pairs"))?;
            let mut out = Vec::with_capacity(terms.len());
            for (i, t) in terms.iter().enumerate() {
                let ipath = format!("{tpath}/{i}");
                match t.as_array().map(|a| a.as_slice()) {
                    Some([c, k]) => out.push((number(c, &format!("{ipath}/0"))?, number(k, &format!("{ipath}/1"))?)),
                    _ => return Err(Error::config(ipath, "expected a [coefficient, exponent] pair")),
                }
            }
            PhiProfile::PowerSum { terms: out }
        }
        "log1p" => {
            only_keys(map, &["kind"], path)?;
            PhiProfile::Log1p
        }
        "expm1" => {
            only_keys(map, &["kind"], path)?;
            PhiProfile::Expm1
        }
        "sum_of" => {
            only_keys(map, &["kind", "parts"], path)?;
            let ppath = format!("{path}/parts");
            let parts = required(map, "parts", path)?
                .as_array()
                .ok_or_else(|| Error::config(&ppath, "expected an array of profiles"))?;
            let parts = parts
                .iter()
                .enumerate()
                .map(|(i, p)| parse_phi(p, &format!("{ppath}/{i}")))
                .collect::<Result<Vec<_>>>()?;
            PhiProfile::SumOf { parts }
        }
        other => return Err(Error::config(format!("{path}/kind"), format!("unknown profile {other:?}"))),
    };
    phi.validate().map_err(|e| Error::config(path, e.to_string()))?;
    Ok(phi)
}

fn parse_shape(v: &Value, path: &str) -> Result<ShapeSpec> {
    let map = object(v, path)?;
    let field = |key: &str| -> Result<f64> { positive(required(map, key, path)?, &format!("{path}/{key}")) };
    match kind(map, path)? {
        "sphere" => {
            only_keys(map, &["kind", "radius"], path)?;
            Ok(ShapeSpec::Sphere { radius: field("radius")? })
        }
        "spheroid" => {
            only_keys(map, &["kind", "axial", "equatorial"], path)?;
            Ok(ShapeSpec::Spheroid { axial: field("axial")?, equatorial: field("equatorial")? })
        }
        "perturbed_sphere" => {
            only_keys(map, &["kind", "radius", "epsilon", "mode"], path)?;
            let epsilon = number(required(map, "epsilon", path)?, &format!("{path}/epsilon"))?;
            let mode = integer(required(map, "mode", path)?, &format!("{path}/mode"), 2)? as usize;
            Ok(ShapeSpec::PerturbedSphere { radius: field("radius")?, epsilon, mode })
        }
        "coefficients" => {
            only_keys(map, &["kind", "coeffs"], path)?;
            let cpath = format!("{path}/coeffs");
            let coeffs = required(map, "coeffs", path)?
                .as_array()
                .ok_or_else(|| Error::config(&cpath, "expected an array of numbers"))?
                .iter()
                .enumerate()
                .map(|(i, c)| number(c, &format!("{cpath}/{i}")))
                .collect::<Result<Vec<_>>>()?;
            Ok(ShapeSpec::Coefficients { coeffs })
        }
        other => Err(Error::config(format!("{path}/kind"), format!("unknown shape {other:?}"))),
    }
}

/// Applies `dotted.key=value`; the value is read as JSON when possible and
/// as a string otherwise.
pub fn apply_override(config: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Error::config("/", format!("override {spec:?} is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = config;
    let mut path = String::new();
    for part in &parts[..parts.len() - 1] {
        path.push('/');
        path.push_str(part);
        node = node
            .as_object_mut()
            .ok_or_else(|| Error::config(&path, "cannot override inside a non-object"))?
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    let map = node
        .as_object_mut()
        .ok_or_else(|| Error::config(&path, "cannot override inside a non-object"))?;
    map.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Validates a JSON configuration after applying `overrides`. Errors name the
/// offending JSON pointer.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| Error::config("", format!("malformed JSON: {e}")))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    config_from_value(&value)
}

pub fn config_from_value(value: &Value) -> Result<RunConfig> {
    let map = object(value, "")?;
    only_keys(map, TOP_KEYS, "")?;
    let n = integer(required(map, "n", "")?, "/n", 2)? as usize;
    let f = parse_speed(required(map, "f", "")?, "/f")?;
    let phi = parse_phi(required(map, "phi", "")?, "/phi")?;
    let shape = parse_shape(required(map, "shape", "")?, "/shape")?;
    let mut config = RunConfig::new(n, f, phi, shape);
    if let Some(v) = map.get("modes") {
        config.modes = integer(v, "/modes", 4)? as usize;
    }
    if let Some(v) = map.get("c_safe") {
        config.c_safe = number(v, "/c_safe")?;
        if !(config.c_safe > 0.0 && config.c_safe <= 1.0) {
            return Err(Error::config("/c_safe", format!("must lie in (0, 1], got {}", config.c_safe)));
        }
    }
    let optional = |key: &str| -> Result<Option<f64>> {
        map.get(key).map(|v| positive(v, &format!("/{key}"))).transpose()
    };
    config.r_stop = optional("r_stop")?;
    config.sigma = optional("sigma")?;
    config.delta = optional("delta")?;
    config.lambda = optional("lambda")?;
    if let Some(v) = map.get("monitor_stride") {
        config.monitor_stride = integer(v, "/monitor_stride", 1)? as usize;
    }
    if let Some(v) = map.get("max_steps") {
        config.max_steps = integer(v, "/max_steps", 1)?;
    }
    if let Some(v) = map.get("seed") {
        config.seed = integer(v, "/seed", 0)?;
    }
    if let Some(v) = map.get("override_classification") {
        config.override_classification =
            v.as_bool().ok_or_else(|| Error::config("/override_classification", "expected a boolean"))?;
    }
    Ok(config)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?, overrides)
}

/// Header of `series.csv`.
pub const SERIES_HEADER: &str = "t,tau,theta,kappa_min,kappa_max,pinch_ratio,G_max,HoverF_max,KoverFn_min,Zsigma_max,rPhi_max,Ztso_max,Ztso_valid,speed_min,speed_max,sup_dev_unit";

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn series_csv(series: &[MonitorRecord]) -> String {
    let mut out = String::from(SERIES_HEADER);
    out.push('\n');
    for r in series {
        let fields = [
            num(r.t),
            opt(r.tau),
            opt(r.theta),
            num(r.kappa_min),
            num(r.kappa_max),
            num(r.pinch_ratio),
            num(r.g_max),
            num(r.h_over_f_max),
            num(r.k_over_fn_min),
            num(r.zsigma_max),
            num(r.rphi_max),
            num(r.ztso_max),
            if r.ztso_valid { "1".into() } else { "0".into() },
            num(r.speed_min),
            num(r.speed_max),
            opt(r.sup_dev_unit),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn coeffs_csv(series: &[MonitorRecord], coefficients: &[Vec<f64>]) -> String {
    let modes = coefficients.first().map_or(0, |c| c.len());
    let mut out = String::from("t");
    for m in 0..modes {
        let _ = write!(out, ",a{m}");
    }
    out.push('\n');
    for (r, c) in series.iter().zip(coefficients) {
        out.push_str(&num(r.t));
        for a in c {
            out.push(',');
            out.push_str(&num(*a));
        }
        out.push('\n');
    }
    out
}

fn profile_csv(profile: &SupportProfile) -> Result<String> {
    let field = radii(profile)?;
    let u = profile.values();
    let mut out = String::from("theta,u,r1,r2\n");
    for j in 0..field.len() {
        let _ = writeln!(out, "{},{},{},{}", num(field.theta[j]), num(u[j]), num(field.r1[j]), num(field.r2[j]));
    }
    Ok(out)
}

/// Closed generating curve `(±ρ, z)` fitted into a 100×100 view box.
pub fn profile_svg(profile: &SupportProfile) -> String {
    let half = embed_profile(profile);
    let mut pts: Vec<(f64, f64)> = half.iter().map(|&(z, rho)| (rho, z)).collect();
    pts.extend(half.iter().rev().skip(1).map(|&(z, rho)| (-rho, z)));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let scale = 90.0 / (x1 - x0).max(y1 - y0);
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let mut d = String::new();
    for (i, &(x, y)) in pts.iter().enumerate() {
        let _ = write!(
            d,
            "{}{:.2},{:.2} ",
            if i == 0 { "M" } else { "L" },
            50.0 + scale * (x - cx),
            50.0 - scale * (y - cy)
        );
    }
    d.push('Z');
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 100 100\">\n<path d=\"{d}\" fill=\"none\" stroke=\"black\" stroke-width=\"0.5\"/>\n</svg>\n"
    )
}

/// Summary written to `run.json`.
pub fn run_json(result: &RunResult) -> Value {
    json!({
        "config": result.config,
        "resolved": {
            "r_stop": result.r_stop,
            "sigma": result.settings.sigma,
            "delta": result.settings.delta,
            "lambda": result.settings.lambda,
            "h_bar": result.settings.h_bar,
            "center": result.settings.center,
        },
        "t_est": result.extinction.t_est,
        "p_est": result.extinction.p_est,
        "theta_bar": result.extinction.theta_bar,
        "low_confidence": result.extinction.low_confidence,
        "termination": result.termination,
        "steps": result.steps,
        "classification": result.classification,
        "data_cases": result.data_cases,
        "initial_pinch": result.initial_pinch,
        "f_report": result.f_report,
        "phi_report": result.phi_report,
        "monotonicity": result.monotonicity,
    })
}

/// Writes `run.json`, `series.csv`, `coeffs.csv` and `snapshots/profile_<i>.{csv,svg}`.
pub fn write_outputs(result: &RunResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("snapshots"))?;
    let mut text = serde_json::to_string_pretty(&run_json(result))?;
    text.push('\n');
    fs::write(dir.join("run.json"), text)?;
    fs::write(dir.join("series.csv"), series_csv(&result.series))?;
    fs::write(dir.join("coeffs.csv"), coeffs_csv(&result.series, &result.coefficients))?;
    for s in &result.snapshots {
        let stem = dir.join("snapshots").join(format!("profile_{}", s.index));
        fs::write(stem.with_extension("csv"), profile_csv(&s.profile)?)?;
        fs::write(stem.with_extension("svg"), profile_svg(&s.profile))?;
    }
    Ok(())
}

fn read_coeffs(path: &Path) -> Result<Vec<(f64, Vec<f64>)>> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize, msg: &str| Error::config(format!("{}:{line}", path.display()), msg.to_string());
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, line)| {
            let vals = line
                .split(',')
                .map(|x| x.parse::<f64>().map_err(|_| bad(i + 1, "not a number")))
                .collect::<Result<Vec<f64>>>()?;
            match vals.split_first() {
                Some((t, c)) if !c.is_empty() => Ok((*t, c.to_vec())),
                _ => Err(bad(i + 1, "expected t and coefficients")),
            }
        })
        .collect()
}

/// Recomputes the monitor series of a saved run from `coeffs.csv`, rescales
/// it against the extinction estimate (or `t_est` when given) and writes
/// `series.csv` to `out`.
pub fn rescale_run(dir: &Path, out: &Path, t_est: Option<f64>) -> Result<Extinction> {
    let run: Value = serde_json::from_str(&fs::read_to_string(dir.join("run.json"))?)?;
    let config = config_from_value(run.get("config").ok_or_else(|| Error::config("/config", "missing in run.json"))?)?;
    let (problem, initial) = prepare(&config)?;
    let rows = read_coeffs(&dir.join("coeffs.csv"))?;
    let field = radii(&initial)?;
    let center = steiner_offset(&initial);
    let settings = MonitorSettings::from_initial(&initial, &field, center, config.sigma, config.delta, config.lambda)?;
    let mut series = Vec::with_capacity(rows.len());
    let mut coefficients = Vec::with_capacity(rows.len());
    let mut last = None;
    for (t, c) in rows {
        if c.len() != initial.coeffs().len() {
            return Err(Error::Length { expected: initial.coeffs().len(), got: c.len() });
        }
        let profile = initial.with_coeffs(c.clone());
        let field = radii(&profile)?;
        series.push(monitor_sample(t, &profile, &field, &problem.f, &problem.phi, &settings, None));
        coefficients.push(c);
        last = Some(FlowState { t, profile, field, step_count: 0 });
    }
    let last = last.ok_or_else(|| Error::config("coeffs.csv", "no records"))?;
    let mut extinction = estimate_extinction(&last, &problem.phi)?;
    if let Some(t) = t_est {
        if t <= last.t {
            return Err(Error::config("--t-est", format!("must exceed the final time {}", last.t)));
        }
        extinction.t_est = t;
    }
    apply_rescaling(&mut series, &coefficients, &initial, &problem.phi, &extinction)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("series.csv"), series_csv(&series))?;
    Ok(extinction)
}
