//! Acceptance criteria. Prints one `criterion N: PASS|FAIL` line per
//! criterion (run 3 and 4 also per sub-run) and exits nonzero if any fail.

use std::process::ExitCode;
use std::time::Instant;

use curvflow::curvature::SpeedKind;
use curvflow::flow::{prepare, run_flow, FlowState, RunConfig, RunResult};
use curvflow::geometry::{radius_bounds, ShapeSpec};
use curvflow::io::write_outputs;
use curvflow::monitors::{fit_decay_rate, sphere_theta, Quantity};
use curvflow::oracle::{builtin_profiles, theta_cross_check, verify_all, VerifySettings};
use curvflow::speed::{condition_report_phi, HConstant, PhiGrid, PhiProfile, ConvergenceCase};

struct Outcome {
    lines: Vec<String>,
    failed: usize,
}

impl Outcome {
    fn new() -> Self {
        Self { lines: Vec::new(), failed: 0 }
    }

    fn record(&mut self, label: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        let line = format!("{label}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push(line);
    }
}

fn s_plus_s3() -> PhiProfile {
    PhiProfile::PowerSum { terms: vec![(1.0, 1.0), (1.0, 3.0)] }
}

fn sphere_exactness(out: &mut Outcome) {
    let phi = s_plus_s3();
    for n in [2, 3] {
        let start = Instant::now();
        let mut config = RunConfig::new(n, SpeedKind::GeometricMean, phi.clone(), ShapeSpec::Sphere { radius: 1.0 });
        config.modes = 64;
        let (problem, profile) = prepare(&config).unwrap();
        let exact = sphere_theta(&phi, 1.0).unwrap();
        let mut state = FlowState::new(profile).unwrap();
        let mut worst: f64 = 0.0;
        let mut steps = 0;
        let mut solver = std::time::Duration::ZERO;
        let outcome = loop {
            let (lo, hi) = radius_bounds(&state.profile);
            let theta = match exact.theta(state.t) {
                Ok(theta) => theta,
                Err(e) => break Err(e.to_string()),
            };
            worst = worst.max((lo - theta).abs() / theta).max((hi - theta).abs() / theta);
            if theta <= 0.05 || lo <= 0.05 {
                break Ok(theta);
            }
            let step_start = Instant::now();
            let dt = problem.stable_dt(&state, config.c_safe);
            match problem.step_guarded(&state, dt) {
                Ok((next, _)) => state = next,
                Err(e) => break Err(e.to_string()),
            }
            solver += step_start.elapsed();
            steps += 1;
        };
        let elapsed = start.elapsed().as_secs_f64();
        let solver = solver.as_secs_f64();
        match outcome {
            Ok(theta) => out.record(
                &format!("criterion 1 (n={n})"),
                worst < 1e-6 && solver < 30.0,
                format!(
                    "max rel deviation {worst:.3e} over {steps} steps to theta={theta:.4}, \
                     solver {solver:.1}s ({elapsed:.1}s with per-step oracle)"
                ),
            ),
            Err(e) => out.record(&format!("criterion 1 (n={n})"), false, e),
        }
    }
}

struct PowerSumClaim {
    terms: Vec<(f64, f64)>,
}

impl PowerSumClaim {
    fn expected(&self) -> Vec<(&'static str, bool)> {
        let kmin = self.terms.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        let kmax = self.terms.iter().map(|t| t.1).fold(0.0, f64::max);
        vec![
            ("d_i", kmin >= 1.0),
            ("d_ii", kmin > 1.0),
            ("d_iii", kmax <= 1.0),
            ("e", true),
            ("f", true),
            ("g", kmin >= 1.0),
            ("h", true),
            ("i", kmin > 1.0),
        ]
    }
}

fn condition_table(out: &mut Outcome) {
    let grid = PhiGrid::default();
    let mut mismatches = Vec::new();
    let flags = |r: &curvflow::speed::PhiConditionReport| {
        vec![
            ("a", r.a),
            ("b", r.b),
            ("c", r.c),
            ("d_i", r.d_i),
            ("d_ii", r.d_ii),
            ("d_iii", r.d_iii),
            ("e", r.e),
            ("f", r.f),
            ("g", r.g),
            ("h", r.h),
            ("i", r.i),
        ]
    };
    let pick = |all: Vec<(&'static str, bool)>, names: &[&str]| -> Vec<(&'static str, bool)> {
        names.iter().map(|n| *all.iter().find(|f| f.0 == *n).unwrap()).collect()
    };

    let sums = [
        vec![(1.0, 1.0), (1.0, 3.0)],
        vec![(1.0, 2.0), (1.0, 3.0)],
        vec![(0.5, 1.5), (2.0, 4.0)],
        vec![(1.0, 0.5), (1.0, 0.8)],
        vec![(1.0, 0.3), (1.0, 1.0)],
        vec![(1.0, 0.5), (1.0, 2.0)],
    ];
    for terms in sums {
        let label = format!("{terms:?}");
        let phi = PhiProfile::power_sum(terms.clone()).unwrap();
        let r = condition_report_phi(&phi, &grid);
        let claim = PowerSumClaim { terms: terms.clone() };
        let want = claim.expected();
        let names: Vec<&str> = want.iter().map(|w| w.0).collect();
        compare(&mut mismatches, &label, &pick(flags(&r), &names), &want);
        compare(&mut mismatches, &label, &pick(flags(&r), &["a", "b", "c"]), &[("a", true), ("b", true), ("c", true)]);
        let bound = terms.iter().map(|&(c, k)| c * (k - 1.0).abs()).fold(0.0, f64::max);
        match r.empirical_c_for_h {
            HConstant::Finite(c) if c <= bound * (1.0 + 1e-9) => {}
            other => mismatches.push(format!("{label}.h_constant={other:?} > {bound}")),
        }
        if kmin_of(&terms) > 1.0 {
            let eps = 1.0 - 1.0 / kmin_of(&terms);
            if (r.d_ii_epsilon - eps).abs() > 1e-4 {
                mismatches.push(format!("{label}.d_ii_epsilon={}", r.d_ii_epsilon));
            }
        }
    }

    let log1p = condition_report_phi(&PhiProfile::Log1p, &grid);
    compare(
        &mut mismatches,
        "log1p",
        &pick(flags(&log1p), &["d_iii", "e", "f", "h", "i"]),
        &[("d_iii", true), ("e", true), ("f", true), ("h", true), ("i", true)],
    );
    match log1p.empirical_c_for_h {
        HConstant::Finite(c) if c <= 1.05 => {}
        other => mismatches.push(format!("log1p.h_constant={other:?}")),
    }
    let expm1 = condition_report_phi(&PhiProfile::Expm1, &grid);
    compare(
        &mut mismatches,
        "expm1",
        &pick(flags(&expm1), &["d_i", "g", "h", "i"]),
        &[("d_i", true), ("g", true), ("h", false), ("i", false)],
    );
    let mixed = PhiProfile::SumOf {
        parts: vec![PhiProfile::Log1p, PhiProfile::PowerSum { terms: vec![(1.0, 2.0)] }],
    };
    let mixed = condition_report_phi(&mixed, &grid);
    let names = ["a", "b", "c", "d_i", "e", "f", "g", "h"];
    let all_true: Vec<(&str, bool)> = names.iter().map(|&n| (n, true)).collect();
    compare(&mut mismatches, "log1p+s^2", &pick(flags(&mixed), &names), &all_true);

    let detail = if mismatches.is_empty() {
        "0 mismatches".to_string()
    } else {
        format!("{} mismatches: {}", mismatches.len(), mismatches.join(", "))
    };
    out.record("criterion 2", mismatches.is_empty(), detail);
}

fn compare(mismatches: &mut Vec<String>, label: &str, got: &[(&str, bool)], want: &[(&str, bool)]) {
    for (&(name, g), &(_, w)) in got.iter().zip(want) {
        if g != w {
            mismatches.push(format!("{label}.{name}={g}"));
        }
    }
}

fn kmin_of(terms: &[(f64, f64)]) -> f64 {
    terms.iter().map(|t| t.1).fold(f64::INFINITY, f64::min)
}

struct PinchRun {
    label: &'static str,
    config: RunConfig,
    case: ConvergenceCase,
    quantity: Quantity,
}

fn pinch_runs() -> Vec<PinchRun> {
    let shape = ShapeSpec::Spheroid { axial: 1.0, equatorial: 1.15 };
    let make = |n, f, phi| {
        let mut c = RunConfig::new(n, f, phi, shape.clone());
        c.modes = 96;
        c
    };
    let mut a = make(2, SpeedKind::Rms, PhiProfile::Expm1);
    a.r_stop = Some(0.1);
    vec![
        PinchRun { label: "3a", config: a, case: ConvergenceCase::EI, quantity: Quantity::GMax },
        PinchRun {
            label: "3b",
            config: make(3, SpeedKind::Rms, s_plus_s3()),
            case: ConvergenceCase::EIi,
            quantity: Quantity::KOverFnMin,
        },
        PinchRun {
            label: "3c",
            config: make(3, SpeedKind::GeometricMean, s_plus_s3()),
            case: ConvergenceCase::EIiiA,
            quantity: Quantity::HOverFMax,
        },
        PinchRun {
            label: "3d",
            config: make(3, SpeedKind::GeometricMean, PhiProfile::Log1p),
            case: ConvergenceCase::EIvA,
            quantity: Quantity::RPhiMax,
        },
        PinchRun {
            label: "3e",
            config: make(
                3,
                SpeedKind::PowerMean { p: 3.0 },
                PhiProfile::PowerSum { terms: vec![(1.0, 2.0), (1.0, 3.0)] },
            ),
            case: ConvergenceCase::EVB,
            quantity: Quantity::ZSigmaMax,
        },
    ]
}

fn monotone_check(out: &mut Outcome, run: &PinchRun, result: &Result<RunResult, String>) {
    let label = format!("criterion 3{}", &run.label[1..]);
    let result = match result {
        Ok(r) => r,
        Err(e) => return out.record(&label, false, e.clone()),
    };
    let report = result.monotonicity.iter().find(|r| r.quantity == run.quantity.name());
    let in_cases = result.data_cases.contains(&run.case);
    match report {
        Some(r) => out.record(
            &label,
            in_cases && r.asserted && r.pass,
            format!(
                "{} {:?} case {:?} applies={} worst {:.3e} over {} samples, initial pinch {:.4}, steps {}",
                r.quantity,
                r.direction,
                run.case,
                in_cases,
                r.worst_violation,
                r.samples,
                result.initial_pinch.ratio,
                result.steps
            ),
        ),
        None => out.record(&label, false, format!("no report for {}", run.quantity.name())),
    }
}

fn speed_bound_check(out: &mut Outcome, run: &PinchRun, result: &Result<RunResult, String>) {
    let label = format!("criterion 4 ({})", run.label);
    let Ok(result) = result else {
        return out.record(&label, false, "run failed".into());
    };
    let window: Vec<f64> = result.series.iter().filter_map(|r| Quantity::ZTsoMax.value(r)).collect();
    let Some(&first) = window.first() else {
        return out.record(&label, false, "empty validity window".into());
    };
    let sup = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ratio = sup / first;
    out.record(
        &label,
        ratio <= 1.05,
        format!("sup/start = {ratio:.4} over {} samples (start {first:.4e}, sup {sup:.4e})", window.len()),
    );
}

fn roundness_check(out: &mut Outcome, run: &PinchRun, result: &Result<RunResult, String>) {
    let label = format!("criterion 5 ({})", run.label);
    let Ok(result) = result else {
        return out.record(&label, false, "run failed".into());
    };
    let (taus, devs): (Vec<f64>, Vec<f64>) =
        result.series.iter().filter_map(|r| Some((r.tau?, r.sup_dev_unit?))).unzip();
    let fit = fit_decay_rate(&taus, &devs);
    let trailing = result.monotonicity.iter().find(|r| r.quantity == "sup_dev_unit_trailing_half");
    match (fit, trailing) {
        (Ok(fit), Some(t)) => out.record(
            &label,
            fit.rate >= 0.5 && t.pass,
            format!(
                "decay rate {:.3} (residual {:.2e}, {} samples), trailing-half worst increase {:.3e}",
                fit.rate, fit.residual, fit.samples_used, t.worst_violation
            ),
        ),
        (Err(e), _) => out.record(&label, false, e.to_string()),
        (_, None) => out.record(&label, false, "no rescaled series".into()),
    }
}

fn oracle_suites(out: &mut Outcome) {
    let start = Instant::now();
    let report = verify_all(VerifySettings::default());
    let elapsed = start.elapsed().as_secs_f64();
    match report {
        Ok(r) => {
            let worst_grad = r.finite_differences.iter().map(|s| s.gradient_error).fold(0.0, f64::max);
            let worst_hess = r.finite_differences.iter().map(|s| s.hessian_error).fold(0.0, f64::max);
            let failing: Vec<String> = r
                .suites
                .iter()
                .filter(|s| !s.pass)
                .map(|s| format!("{}(n={})", s.name, s.n))
                .collect();
            out.record(
                "criterion 6",
                r.pass && elapsed < 60.0,
                format!(
                    "fd gradient {worst_grad:.2e}, hessian {worst_hess:.2e}, {} suites, failing [{}], {elapsed:.1}s",
                    r.suites.len(),
                    failing.join(", ")
                ),
            );
        }
        Err(e) => out.record("criterion 6", false, e.to_string()),
    }
}

fn theta_checks(out: &mut Outcome) {
    let mut worst: f64 = 0.0;
    let mut errors = Vec::new();
    let mut count = 0;
    for phi in builtin_profiles() {
        for theta0 in [0.5, 1.0, 2.0] {
            match theta_cross_check(&phi, theta0) {
                Ok(c) => {
                    worst = worst.max(c.max_rel_diff);
                    count += 1;
                    if !c.pass {
                        errors.push(format!("{phi:?} at {theta0}: {:.2e}", c.max_rel_diff));
                    }
                }
                Err(e) => errors.push(format!("{phi:?} at {theta0}: {e}")),
            }
        }
    }
    out.record(
        "criterion 7",
        errors.is_empty(),
        format!("{count} profile/radius pairs, worst rel diff {worst:.2e} {}", errors.join("; ")),
    );
}

fn read_tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn determinism(out: &mut Outcome) {
    let configs = [
        {
            let mut c = RunConfig::new(3, SpeedKind::GeometricMean, s_plus_s3(), ShapeSpec::Spheroid {
                axial: 1.0,
                equatorial: 1.15,
            });
            c.modes = 24;
            c.r_stop = Some(0.3);
            c
        },
        {
            let mut c = RunConfig::new(2, SpeedKind::Rms, PhiProfile::Expm1, ShapeSpec::PerturbedSphere {
                radius: 1.0,
                epsilon: 0.05,
                mode: 2,
            });
            c.modes = 16;
            c.r_stop = Some(0.5);
            c
        },
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    let mut files = 0;
    for (i, config) in configs.iter().enumerate() {
        let trees: Vec<_> = (0..2)
            .map(|k| {
                let dir = tmp.path().join(format!("c{i}_{k}"));
                write_outputs(&run_flow(config).unwrap(), &dir).unwrap();
                read_tree(&dir)
            })
            .collect();
        files += trees[0].len();
        if trees[0] != trees[1] {
            differing.push(format!("config {i}"));
        }
    }
    out.record(
        "criterion 8",
        differing.is_empty(),
        format!("{files} output files compared across repeated runs, differing [{}]", differing.join(", ")),
    );
}

fn main() -> ExitCode {
    let mut out = Outcome::new();
    sphere_exactness(&mut out);
    condition_table(&mut out);

    let runs = pinch_runs();
    let results: Vec<Result<RunResult, String>> = std::thread::scope(|s| {
        let handles: Vec<_> =
            runs.iter().map(|r| s.spawn(|| run_flow(&r.config).map_err(|e| e.to_string()))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (run, result) in runs.iter().zip(&results) {
        monotone_check(&mut out, run, result);
    }
    for (run, result) in runs.iter().zip(&results) {
        speed_bound_check(&mut out, run, result);
    }
    for (run, result) in runs.iter().zip(&results).filter(|(r, _)| r.label == "3b" || r.label == "3c") {
        roundness_check(&mut out, run, result);
    }

    oracle_suites(&mut out);
    theta_checks(&mut out);
    determinism(&mut out);

    println!("acceptance: {} of {} checks passed", out.lines.len() - out.failed, out.lines.len());
    if out.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
