//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any fails. Each flow is computed once and shared.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use atwflow::checks::{
    certified_delta, check_delta_persistence, check_distance_growth, check_holder_volume, check_inclusion,
    check_lipschitz, check_perimeter_monotone, check_superharmonic, hausdorff, oracle_raster, CheckReport,
};
use atwflow::flow::{arrival_time, bv_energy_checked, run_flow_with, FlowTrace};
use atwflow::oracles::{
    calibration_check, disk_bv_energy, sample_cross, shrinking_ball, CrossFlow, DiskFamily, OracleSolution,
};
use atwflow::solver::{Scheme, SolverConfig};
use atwflow::{Anisotropy, GridDomain, Shape};

struct Run {
    name: String,
    scheme: Scheme,
    trace: FlowTrace,
    elapsed: Duration,
}

fn run(name: &str, dom: GridDomain, shape: Shape, phi: &Anisotropy, h: f64, t_max: f64) -> Run {
    let cfg = SolverConfig::default();
    let scheme = Scheme::new(&dom, phi, phi, h, cfg).expect("scheme");
    let e0 = shape.rasterize(&dom).expect("initial set fits");
    let start = Instant::now();
    let trace = run_flow_with(&scheme, &e0, t_max, |_| {}).expect("flow");
    let elapsed = start.elapsed();
    eprintln!(
        "  [{name}] {} cells, {} steps, {:?}, {:.1}s",
        dom.len(),
        trace.steps.len(),
        trace.stop,
        elapsed.as_secs_f64()
    );
    Run { name: name.into(), scheme, trace, elapsed }
}

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn report_line(r: &CheckReport) -> String {
    format!("{} {}/{} ok, worst margin {:.2e}", r.property, r.samples - r.failures, r.samples, r.worst_margin)
}

fn cells(d: f64, dom: &GridDomain) -> f64 {
    d / dom.h_max()
}

fn main() -> ExitCode {
    let l1 = Anisotropy::l1(2).unwrap();
    let eu = Anisotropy::euclidean(2).unwrap();
    let t0 = Instant::now();

    eprintln!("computing flows");
    let cross = run("cross", GridDomain::centered(2, 2.25, 512).unwrap(), Shape::Cross { l: 2.0 }, &l1, 1.0 / 64.0, 2.0);
    let disk_levels: Vec<Run> = [(16.0, 64), (32.0, 128), (64.0, 256)]
        .iter()
        .map(|&(k, n)| {
            let dom = GridDomain::centered(2, 1.25, n).unwrap();
            run(&format!("disk h=1/{k}"), dom, Shape::Ball { center: None, radius: 1.0 }, &eu, 1.0 / k, 1.0)
        })
        .collect();
    let disk_fine = run(
        "disk h=1/96",
        GridDomain::centered(2, 1.25, 384).unwrap(),
        Shape::Ball { center: None, radius: 1.0 },
        &eu,
        1.0 / 96.0,
        1.0,
    );
    let square = run(
        "square",
        GridDomain::centered(2, 2.0, 320).unwrap(),
        Shape::Rectangle { min: vec![-1.8, -1.8], max: vec![1.8, 1.8] },
        &l1,
        1.0 / 64.0,
        2.0,
    );
    let family = DiskFamily::new(
        vec![[-0.75, -0.75], [0.75, -0.75], [-0.75, 0.75], [0.75, 0.75], [0.0, 0.0]],
        vec![0.5, 0.45, 0.4, 0.35, 0.25],
    )
    .expect("disjoint disks");
    let family_run = run(
        "disk family",
        GridDomain::centered(2, 1.5, 256).unwrap(),
        Shape::DiskUnion {
            centers: family.centers.iter().map(|c| c.to_vec()).collect(),
            radii: family.radii.clone(),
        },
        &eu,
        1.0 / 64.0,
        1.0,
    );
    let disk_mid = &disk_levels[1];

    let mut verdicts: Vec<(u32, &str, Verdict)> = Vec::new();

    // 1. cross evolution
    {
        let dom = cross.trace.domain();
        let oracle = OracleSolution::Cross { l: 2.0 };
        let mut worst: f64 = 0.0;
        let mut parts = Vec::new();
        for t in [0.5, 1.0, 1.25] {
            let e = cross.trace.set_at(t).expect("time within trace");
            let d = cells(hausdorff(&e, &oracle_raster(&oracle, dom, t)), dom);
            worst = worst.max(d);
            parts.push(format!("t={t}: {d:.2} cells"));
        }
        let ext = cross.trace.extinction_time();
        let ext_ok = ext.is_some_and(|t| (t - 1.5).abs() <= 0.1);
        let fast = cross.elapsed <= Duration::from_secs(600);
        verdicts.push((
            1,
            "cross evolution",
            verdict(
                worst <= 5.0 && ext_ok && fast,
                format!(
                    "Hausdorff {}; extinction {:?} (3/2 +- 0.1); flow {:.0}s",
                    parts.join(", "),
                    ext,
                    cross.elapsed.as_secs_f64()
                ),
            ),
        ));
    }

    // 2. crystalline square phase
    {
        let dom = cross.trace.domain();
        let flow = CrossFlow::default();
        let (mut worst, mut at) = (0.0f64, 0.0);
        let mut nonempty_worst = 0.0f64;
        let mut samples = 0;
        for s in cross.trace.steps.iter().filter(|s| s.t > 1.0 && s.t < 1.5) {
            // the set is centred, so its half-side is the largest |x|_inf of a member
            let half = (0..dom.len())
                .filter(|x| s.set.contains(*x))
                .map(|x| {
                    let c = dom.center_of(x);
                    c[0].abs().max(c[1].abs()) + 0.5 * dom.h_max()
                })
                .fold(0.0, f64::max);
            let err = cells((half - flow.half_side(s.t)).abs(), dom);
            if !s.set.is_empty() {
                nonempty_worst = nonempty_worst.max(err);
            }
            if err > worst {
                worst = err;
                at = s.t;
            }
            samples += 1;
        }
        verdicts.push((
            2,
            "crystalline square phase",
            verdict(
                samples > 0 && worst <= 3.0,
                format!(
                    "{samples} steps in (1, 3/2): worst {worst:.2} cells at t={at}; {nonempty_worst:.2} cells while the square exists"
                ),
            ),
        ));
    }

    // 3. isotropic disk radius law
    {
        let tr = &disk_fine.trace;
        let (mut worst, mut at) = (0.0f64, 0.0);
        for s in tr.steps.iter().filter(|s| s.t <= 0.4 + 1e-12) {
            let r = (s.volume / PI).sqrt();
            let err = (r / shrinking_ball(1.0, s.t, 2) - 1.0).abs();
            if err > worst {
                worst = err;
                at = s.t;
            }
        }
        let ext = tr.extinction_time();
        let ok = worst <= 0.02 && ext.is_some_and(|t| (t - 0.5).abs() <= 0.05);
        verdicts.push((
            3,
            "isotropic disk",
            verdict(ok, format!("h=1/96: worst radius error {:.2}% at t={at:.4}; extinction {ext:?}", 100.0 * worst)),
        ));
    }

    // 4. BV energy convergence
    {
        let exact = disk_bv_energy(1.0);
        let mut errs = Vec::new();
        let mut coarea_ok = true;
        let mut parts = Vec::new();
        for lv in &disk_levels {
            let u = arrival_time(&lv.trace).expect("extinct");
            match bv_energy_checked(&u, &lv.trace, &eu, 1e-6) {
                Ok((bv, levels)) => {
                    let e = ((bv - exact) / exact).abs();
                    errs.push(e);
                    parts.push(format!("{}: {:.4} ({:.2}%, coarea {:.1e})", lv.name, bv, 100.0 * e, (bv - levels).abs() / bv));
                }
                Err(err) => {
                    coarea_ok = false;
                    errs.push(f64::INFINITY);
                    parts.push(format!("{}: {err}", lv.name));
                }
            }
        }
        let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
        let ok = coarea_ok && decreasing && errs.last().is_some_and(|e| *e <= 0.05);
        verdicts.push((4, "BV-energy convergence", verdict(ok, format!("exact {exact:.4}; {}", parts.join("; ")))));
    }

    // 5. quantitative inclusion
    {
        let mut ok = true;
        let mut parts = Vec::new();
        for r in [disk_mid, &disk_levels[2], &disk_fine, &cross] {
            let inc = check_inclusion(&r.scheme, &r.trace).expect("distance");
            let every = (r.trace.steps.len() / 16).max(1);
            let grow = check_distance_growth(&r.scheme, &r.trace, every).expect("distance");
            ok &= inc.passed && grow.passed;
            parts.push(format!("{}: {}, {}", r.name, report_line(&inc), report_line(&grow)));
        }
        verdicts.push((5, "quantitative inclusion", verdict(ok, parts.join("; "))));
    }

    // 6. (MC_delta) preservation
    {
        let mut ok = true;
        let mut parts = Vec::new();
        for r in [&disk_fine, &square, &cross] {
            let rep = check_delta_persistence(&r.trace, 1e-3);
            ok &= rep.passed;
            parts.push(format!(
                "{} ({} steps, delta_0 {:.3}): {}",
                r.name,
                r.trace.steps.len(),
                rep.values["delta_0"],
                report_line(&rep)
            ));
        }
        verdicts.push((6, "(MC_delta) preservation", verdict(ok, parts.join("; "))));
    }

    // 7. perimeter monotonicity
    {
        let all: Vec<&Run> = disk_levels.iter().chain([&disk_fine, &square, &cross, &family_run]).collect();
        let reps: Vec<CheckReport> = all.iter().map(|r| check_perimeter_monotone(&r.trace, 1e-6)).collect();
        let ok = reps.iter().all(|r| r.passed);
        let steps: usize = reps.iter().map(|r| r.samples).sum();
        let failures: usize = reps.iter().map(|r| r.failures).sum();
        verdicts.push((
            7,
            "perimeter monotonicity",
            verdict(ok, format!("{} traces, {steps} steps, {failures} increases beyond 1e-6", reps.len())),
        ));
    }

    // 8. 1-superharmonicity
    {
        let mut ok = true;
        let mut parts = Vec::new();
        for r in [disk_mid, &square] {
            let u = arrival_time(&r.trace).expect("extinct");
            let delta = certified_delta(&r.trace);
            let (plain, strong) = check_superharmonic(&u, &r.scheme.phi().clone(), delta, 100, 11, 1e-6);
            ok &= plain.passed && strong.passed && plain.samples == 100;
            parts.push(format!("{} (delta {delta:.3}): {}, {}", r.name, report_line(&plain), report_line(&strong)));
        }
        verdicts.push((8, "1-superharmonicity", verdict(ok, parts.join("; "))));
    }

    // 9. calibration identities
    {
        let flow = CrossFlow::default();
        let rep = calibration_check(&sample_cross(&flow, 1000, 5), &flow).expect("calibration");
        let ok = rep.samples == 1000 && rep.divergence_exact && rep.max_dual_norm <= 1.0 + 1e-12;
        verdicts.push((
            9,
            "calibration identities",
            verdict(
                ok,
                format!(
                    "{} points, max dual norm {:.15}, max divergence error {:.1e}",
                    rep.samples, rep.max_dual_norm, rep.max_div_error
                ),
            ),
        ));
    }

    // 10. Lipschitz arrival bound and volume Holder trend
    {
        let mut ok = true;
        let mut parts = Vec::new();
        for r in [disk_mid, &square, &family_run, &cross] {
            let delta = certified_delta(&r.trace);
            if !(delta > 0.0 && delta.is_finite()) {
                parts.push(format!("{}: no positive certificate, bound not applicable", r.name));
                continue;
            }
            let u = arrival_time(&r.trace).expect("extinct");
            let rep = check_lipschitz(&u, r.scheme.psi(), delta, 2000, 13);
            ok &= rep.passed;
            parts.push(format!("{} (delta {delta:.3}): {}", r.name, report_line(&rep)));
        }
        let holder = check_holder_volume(&cross.trace, Some((0.75, 1.25)), 0.45);
        ok &= holder.passed;
        parts.push(format!("cross Holder exponent {:.3} near t=1", holder.values["exponent"]));
        verdicts.push((10, "Lipschitz bound and Holder trend", verdict(ok, parts.join("; "))));
    }

    // 11. disk-family arrival time
    {
        let dom = family_run.trace.domain();
        let u = arrival_time(&family_run.trace).expect("extinct");
        let (mut worst, mut at) = (0.0f64, [0.0; 2]);
        for x in 0..dom.len() {
            let c = dom.center_of(x);
            let err = (u.field.values[x] - family.arrival([c[0], c[1]])).abs();
            if err > worst {
                worst = err;
                at = [c[0], c[1]];
            }
        }
        let bound = family_run.trace.h + 3.0 * dom.h_max();
        verdicts.push((
            11,
            "disk-family arrival time",
            verdict(worst <= bound, format!("max |u_h - u| = {worst:.4} at {at:.3?}; bound h + 3 spacing = {bound:.4}")),
        ));
    }

    println!();
    for (id, name, v) in &verdicts {
        println!("criterion {id:>2} {} {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed = verdicts.iter().filter(|v| !v.2.passed).count();
    println!("{} of {} criteria passed in {:.0}s", verdicts.len() - failed, verdicts.len(), t0.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
