//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sweep_core::certify::{extract_nonregular, extract_regular, verify_nonregular, verify_regular};
use sweep_core::linalg::SparseMatrix;
use sweep_core::model::regularity_margin;
use sweep_core::routes::{solve_complementarity_route, solve_penalty_route, DEFAULT_EPSILON_SCHEDULE};
use sweep_core::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn reference_control(entry: &CatalogEntry, n: usize) -> ControlSignal {
    let r = entry.reference.as_ref().expect("catalog entry has a reference");
    ControlSignal::from_fn(Grid::new(n).unwrap(), |t| (r.control)(t)).unwrap()
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.1e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn sup_err(traj: &StateTrajectory, exact: &dyn Fn(f64) -> Vec<f64>) -> f64 {
    traj.states
        .iter()
        .enumerate()
        .map(|(j, x)| {
            let e = exact(traj.grid.t(j));
            x.iter().zip(&e).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn c1_derivatives() -> Outcome {
    let mut worst: f64 = 0.0;
    for name in list_catalog() {
        let p = get_problem(name).unwrap().spec;
        let rep = gradient_check(&p, 100, 11).unwrap();
        worst = worst.max(rep.max_error());
    }
    outcome(worst <= 1e-6, format!("max relative error {worst:.2e} <= 1e-6"))
}

/// Closest point on the ellipse `x^2/a^2 + y^2/b^2 = 1` by bisection on the
/// secular equation `sum a_i^2 q_i^2 / (a_i^2 + t)^2 = 1`, `t >= 0`.
fn ellipse_oracle(a: f64, b: f64, q: [f64; 2]) -> [f64; 2] {
    let s = |t: f64| (a * q[0] / (a * a + t)).powi(2) + (b * q[1] / (b * b + t)).powi(2) - 1.0;
    if s(0.0) <= 0.0 {
        return q;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while s(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if s(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    [a * a * q[0] / (a * a + t), b * b * q[1] / (b * b + t)]
}

fn c2_projection() -> Outcome {
    let disk = get_problem("disk-push").unwrap().spec;
    let ellipse = get_problem("ellipse-steer").unwrap().spec;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let q: [f64; 2] = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
        let (got, want) = if k % 2 == 0 {
            let r = (q[0] * q[0] + q[1] * q[1]).sqrt();
            let want = if r <= 1.0 { q } else { [q[0] / r, q[1] / r] };
            (project_onto_c(&disk, &q, 1e-12).unwrap(), want)
        } else {
            // every fourth point sits on an axis
            let q = if k % 4 == 1 { [q[0], 0.0] } else { q };
            (project_onto_c(&ellipse, &q, 1e-12).unwrap(), ellipse_oracle(2.0, 1.0, q))
        };
        worst = worst.max((got[0] - want[0]).abs().max((got[1] - want[1]).abs()));
    }
    outcome(worst <= 1e-9, format!("max error {worst:.2e} <= 1e-9 over 1000 points"))
}

fn c3_sliding() -> Outcome {
    let entry = get_problem("disk-push").unwrap();
    let p = &entry.spec;
    let exact = |t: f64| vec![(2.0 * t).min(1.0), 0.0];
    let grids = [50usize, 100, 200, 400];
    let errs: Vec<f64> = grids
        .iter()
        .map(|&n| {
            let ctrl = reference_control(&entry, n);
            sup_err(&simulate_catchup(p, &ctrl).unwrap(), &exact)
        })
        .collect();
    // at roundoff level there is nothing left to shrink
    let floor = 1e-12;
    let shrinks = errs.windows(2).all(|w| w[1] <= floor || w[0] / w[1] >= 1.3);

    // non-exact case: ellipse against a fine-grid solution
    let el = get_problem("ellipse-steer").unwrap().spec;
    let u = [3.0, 2.0];
    let fine = simulate_catchup(&el, &ControlSignal::constant(Grid::new(12800).unwrap(), &u)).unwrap();
    let fine_at = |t: f64| fine.states[(t * 12800.0).round() as usize].clone();
    let el_errs: Vec<f64> = grids
        .iter()
        .map(|&n| sup_err(&simulate_catchup(&el, &ControlSignal::constant(Grid::new(n).unwrap(), &u)).unwrap(), &fine_at))
        .collect();
    let el_shrinks = el_errs.windows(2).all(|w| w[0] / w[1] >= 1.3);
    outcome(
        errs[3] <= 0.01 && shrinks && el_shrinks,
        format!("disk errors {} (N=400 <= 0.01, shrink >= 1.3 or <= 1e-12); ellipse refinement {}", sci(&errs), sci(&el_errs)),
    )
}

fn c4_penalty() -> Outcome {
    let entry = get_problem("disk-push").unwrap();
    let ctrl = reference_control(&entry, 400);
    let tab = convergence_study(&entry.spec, &ctrl, &[25.0, 50.0, 100.0, 200.0], &[400], 10).unwrap();
    let gaps: Vec<f64> = tab.gaps.iter().map(|r| r[0]).collect();
    let strict = gaps.windows(2).all(|w| w[1] < w[0]);
    let last = *gaps.last().unwrap();
    outcome(strict && last <= 0.05, format!("gaps {gaps:.4?} strictly decreasing, final <= 0.05"))
}

fn dense_rows(rows: Vec<Vec<f64>>) -> SparseMatrix {
    sweep_core::nlp::sparse_from_rows(&rows, rows.first().map_or(0, |r| r.len()))
}

fn c5_solver() -> Outcome {
    let eq = NlpProblem::new(
        2,
        |z: &[f64]| (z[0] - 1.0).powi(2) + z[1] * z[1],
        |z: &[f64]| vec![2.0 * (z[0] - 1.0), 2.0 * z[1]],
    )
    .with_eq(1, |z: &[f64]| vec![z[0] + z[1] - 1.0], |_: &[f64]| dense_rows(vec![vec![1.0, 1.0]]));
    let ineq = NlpProblem::new(1, |z: &[f64]| z[0] * z[0], |z: &[f64]| vec![2.0 * z[0]])
        .with_ineq(1, |z: &[f64]| vec![1.0 - z[0]], |_: &[f64]| dense_rows(vec![vec![-1.0]]));
    let rosen = NlpProblem::new(
        2,
        |z: &[f64]| (1.0 - z[0]).powi(2) + 100.0 * (z[1] - z[0] * z[0]).powi(2),
        |z: &[f64]| {
            vec![
                -2.0 * (1.0 - z[0]) - 400.0 * z[0] * (z[1] - z[0] * z[0]),
                200.0 * (z[1] - z[0] * z[0]),
            ]
        },
    );
    let r1 = solve(&eq, &[0.0, 0.0], 1e-8, 50).unwrap();
    let r2 = solve(&ineq, &[3.0], 1e-8, 50).unwrap();
    let r3 = solve(&rosen, &[-1.2, 1.0], 1e-8, 50).unwrap();
    let kkt = r1.kkt.max().max(r2.kkt.max()).max(r3.kkt.max());
    let mult = r1.mu_eq[0].abs().max((r2.mu_ineq[0] - 2.0).abs());
    let z = (r1.z_star[0] - 1.0)
        .abs()
        .max(r1.z_star[1].abs())
        .max((r2.z_star[0] - 1.0).abs())
        .max((r3.z_star[0] - 1.0).abs())
        .max((r3.z_star[1] - 1.0).abs());
    let ok = r1.converged() && r2.converged() && r3.converged();
    outcome(
        ok && kkt <= 1e-8 && mult <= 1e-6 && z <= 1e-6,
        format!("kkt {kkt:.1e} <= 1e-8, multiplier error {mult:.1e} <= 1e-6, minimizer error {z:.1e}"),
    )
}

fn c6_routes() -> Outcome {
    let p = get_problem("interval-1d").unwrap().spec;
    let opts = SolverOptions::default();
    let pen = solve_penalty_route(&p, &TranscriptionConfig::penalty(200, 200.0, 0.0), None, &opts).unwrap();
    let comp = solve_complementarity_route(
        &p,
        &TranscriptionConfig::complementarity(200, 0.0),
        &DEFAULT_EPSILON_SCHEDULE,
        None,
        &opts,
    )
    .unwrap();
    let (a, b) = (pen.route_objective, comp.route_objective);
    let ok = pen.converged() && comp.converged() && (a + 1.0).abs() <= 1e-3 && (b + 1.0).abs() <= 1e-3 && (a - b).abs() <= 1e-3;
    outcome(
        ok,
        format!(
            "penalty {a:.6} (nlp {:.6}), complementarity {b:.6} (nlp {:.6}), target -1 +- 1e-3",
            pen.nlp_objective, comp.nlp_objective
        ),
    )
}

fn c7_regular() -> Outcome {
    let opts = SolverOptions::default();
    let tol = Tolerances::default();

    // interior-classical: pipeline against the hand certificate
    let p = get_problem("interior-classical").unwrap().spec;
    let cfg = TranscriptionConfig::penalty(100, 50.0, 0.0);
    let sol = solve_penalty_route(&p, &cfg, None, &opts).unwrap();
    let cert = extract_regular(&p, &cfg, &sol.nlp, &sol.result).unwrap();
    let rep = verify_regular(&p, &sol.trajectory, &cert, &tol, 7).unwrap();
    let s = cert.scale;
    let mut hand_err = (cert.lambda0 * s - 1.0).abs();
    for pj in &cert.p {
        hand_err = hand_err.max((pj[0] * s - 1.0).abs()).max((pj[1] * s).abs());
    }
    for nj in &cert.nu {
        hand_err = hand_err.max((nj[0] * s - 0.5).abs());
    }
    let six = ["2-adjoint", "3-boundary", "4-maximum", "5-control-gradient"];
    let res_max = six.iter().map(|id| rep.get(id).unwrap().residual).fold(0.0, f64::max);
    let interior_ok = rep.passed() && hand_err <= 1e-6 && res_max <= 1e-6;

    // interval-1d at defaults; the discrete penalty program only sees x_N,
    // so it is seeded with the analytic control to select u = 1 among its
    // equally optimal controls
    let entry = get_problem("interval-1d").unwrap();
    let q = entry.spec.clone();
    let cfg = TranscriptionConfig::penalty(200, 200.0, 0.0);
    let sol = solve_penalty_route(&q, &cfg, Some(&reference_control(&entry, 200)), &opts).unwrap();
    let cert = extract_regular(&q, &cfg, &sol.nlp, &sol.result).unwrap();
    let rep2 = verify_regular(&q, &sol.trajectory, &cert, &tol, 7).unwrap();
    let adj = rep2.get("2-adjoint").unwrap().residual;

    // corruption at a middle node
    let mut bad = cert.clone();
    bad.p[100][0] += 0.1;
    let rep3 = verify_regular(&q, &sol.trajectory, &bad, &tol, 7).unwrap();
    let failing = rep3.failing();
    let flips = failing.contains(&"2-adjoint")
        && failing.iter().all(|c| *c == "2-adjoint" || *c == "5-control-gradient")
        && rep3.get("2-adjoint").unwrap().residual >= 0.05;

    outcome(
        interior_ok && rep2.passed() && flips,
        format!(
            "interior: hand error {hand_err:.1e}, residuals {res_max:.1e} <= 1e-6; interval: all pass = {}, adjoint {adj:.1e}; corrupted fails {failing:?}",
            rep2.passed()
        ),
    )
}

fn c8_nonregular() -> Outcome {
    let p = get_problem("interval-1d").unwrap().spec;
    let sol = solve_complementarity_route(
        &p,
        &TranscriptionConfig::complementarity(200, 0.0),
        &DEFAULT_EPSILON_SCHEDULE,
        None,
        &SolverOptions::default(),
    )
    .unwrap();
    let cert = extract_nonregular(&p, &sol.config, &sol.nlp, &sol.result).unwrap();
    let rep = verify_nonregular(&p, &sol.trajectory, &cert, &Tolerances::default()).unwrap();
    let stat = ["d-s1", "d-s2", "d-s3", "d-s4", "c-costate"]
        .iter()
        .map(|id| rep.get(id).unwrap().residual)
        .fold(0.0, f64::max);
    let trans = rep.get("c-transversality").unwrap().residual;
    let z1 = rep.get("z1-identity").unwrap().residual;
    let atoms_on_band = cert
        .zeta2
        .iter()
        .enumerate()
        .filter(|(_, z)| **z > 1e-4)
        .all(|(j, _)| p.psi.eval(&sol.trajectory.states[j]).abs() <= 1e-6);
    let n_atoms = cert.zeta2.iter().filter(|z| **z > 1e-4).count();
    outcome(
        rep.passed() && stat <= 1e-3 && trans <= 1e-8 && z1 <= 1e-6 && atoms_on_band,
        format!(
            "a-d pass = {}, stationarity {stat:.1e} <= 1e-3, |lambda(1)| {trans:.1e}, z1 identity {z1:.1e}, {n_atoms} zeta2 atom(s) on band = {atoms_on_band}",
            rep.passed()
        ),
    )
}

fn c9_regularity() -> Outcome {
    let entry = get_problem("interval-1d").unwrap();
    let ctrl = reference_control(&entry, 200);
    let traj = simulate_catchup(&entry.spec, &ctrl).unwrap();
    let r = regularity_margin(&entry.spec, &traj, None).unwrap();
    let margin = r.margin.unwrap_or(f64::NAN);

    let aux = lookup_problem("nonregular-1d").unwrap();
    let ctrl = ControlSignal::constant(Grid::new(200).unwrap(), &[0.0]);
    let traj = simulate_catchup(&aux.spec, &ctrl).unwrap();
    let r2 = regularity_margin(&aux.spec, &traj, None).unwrap();
    let m2 = r2.margin.unwrap_or(f64::NAN);
    outcome(
        (margin - 2.0).abs() <= 1e-9 && r.is_regular() && !r2.is_regular() && m2 < 1e-6,
        format!("interval-1d margin {margin:.6}, u^2 constraint margin {m2:.1e} flagged = {}", !r2.is_regular()),
    )
}

fn c10_determinism() -> Outcome {
    let run = || {
        let entry = get_problem("disk-push").unwrap();
        let ctrl = reference_control(&entry, 100);
        let mut out = simulate_catchup(&entry.spec, &ctrl).unwrap().to_csv_string();
        out += &simulate_penalty(&entry.spec, &ctrl, 100.0, 10).unwrap().to_csv_string();
        out += &convergence_study(&entry.spec, &ctrl, &[25.0, 50.0], &[50, 100], 4).unwrap().to_csv_string();
        let q = get_problem("interval-1d").unwrap().spec;
        let cfg = TranscriptionConfig::penalty(50, 200.0, 0.0);
        let sol = solve_penalty_route(&q, &cfg, None, &SolverOptions::default()).unwrap();
        out += &sol.trajectory.to_csv_string();
        let cert = extract_regular(&q, &cfg, &sol.nlp, &sol.result).unwrap();
        out += &serde_json::to_string(&cert).unwrap();
        out += &serde_json::to_string(&verify_regular(&q, &sol.trajectory, &cert, &Tolerances::default(), 3).unwrap())
            .unwrap();
        out += &serde_json::to_string(&check_assumptions(&q, 500, 9).unwrap().m_est).unwrap();
        out
    };
    let (a, b) = (run(), run());
    outcome(a == b, format!("{} bytes, identical = {}", a.len(), a == b))
}

fn main() {
    let criteria: [(usize, &str, f64, fn() -> Outcome); 10] = [
        (1, "derivative integrity", 5.0, c1_derivatives),
        (2, "projection oracle", 5.0, c2_projection),
        (3, "sweeping simulation vs analytic sliding", 10.0, c3_sliding),
        (4, "penalty convergence", 60.0, c4_penalty),
        (5, "solver correctness", 5.0, c5_solver),
        (6, "optimal-value recovery", 120.0, c6_routes),
        (7, "regular certificate", 120.0, c7_regular),
        (8, "non-regular certificate", 120.0, c8_nonregular),
        (9, "regularity detection", 5.0, c9_regularity),
        (10, "determinism", f64::INFINITY, c10_determinism),
    ];
    let mut failed = 0;
    for (k, name, budget, run) in criteria {
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        let pass = o.pass && secs < budget;
        if !pass {
            failed += 1;
        }
        let budget_s = if budget.is_finite() { format!("< {budget:.0} s") } else { "no limit".into() };
        println!(
            "criterion {k:>2} {:<4} {name}: {} [{secs:.2} s, {budget_s}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
