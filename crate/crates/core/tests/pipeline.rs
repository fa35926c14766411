use sweep_core::certify::{extract_regular, verify_regular, RegularCertificate};
use sweep_core::routes::solve_penalty_route;
use sweep_core::*;

fn reference_control(name: &str, n: usize) -> ControlSignal {
    let entry = get_problem(name).unwrap();
    let r = entry.reference.unwrap();
    ControlSignal::from_fn(Grid::new(n).unwrap(), |t| (r.control)(t)).unwrap()
}

#[test]
fn disk_push_regular_certificate() {
    let p = get_problem("disk-push").unwrap().spec;
    let cfg = TranscriptionConfig::penalty(80, 200.0, 0.0);
    let guess = reference_control("disk-push", 80);
    let sol = solve_penalty_route(&p, &cfg, Some(&guess), &SolverOptions::default()).unwrap();
    assert!(sol.converged());
    let cert = extract_regular(&p, &cfg, &sol.nlp, &sol.result).unwrap();
    assert!(cert.eta.iter().sum::<f64>() > 0.0);
    // atoms sit at the penalty equilibrium, ln(gamma)/gamma inside the disk
    for (j, e) in cert.eta.iter().enumerate() {
        if *e > 1e-4 {
            let x = &sol.trajectory.states[j];
            assert!((x[0] * x[0] + x[1] * x[1]).sqrt() >= 0.96, "node {j}");
        }
    }
    let rep = verify_regular(&p, &sol.trajectory, &cert, &Tolerances::default(), 0).unwrap();
    assert!(rep.get("2-adjoint").unwrap().pass, "{}", rep.table());
    assert!(rep.get("support-eta").unwrap().pass);
}

#[test]
fn certificate_json_round_trip() {
    let p = get_problem("interval-1d").unwrap().spec;
    let cfg = TranscriptionConfig::penalty(30, 100.0, 0.0);
    let sol = solve_penalty_route(&p, &cfg, None, &SolverOptions::default()).unwrap();
    let cert = extract_regular(&p, &cfg, &sol.nlp, &sol.result).unwrap();
    let s = serde_json::to_string(&cert).unwrap();
    let back: RegularCertificate = serde_json::from_str(&s).unwrap();
    assert_eq!(back, cert);
}

#[test]
fn trajectory_csv_file_round_trip() {
    let p = get_problem("ellipse-steer").unwrap().spec;
    let ctrl = ControlSignal::constant(Grid::new(25).unwrap(), &[1.0, 1.0]);
    let traj = simulate_catchup(&p, &ctrl).unwrap();
    let dir = std::env::temp_dir().join(format!("sweep-core-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("traj.csv");
    traj.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let back = StateTrajectory::read_csv(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back, traj);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn catalog_is_assumption_clean() {
    for name in list_catalog() {
        let p = get_problem(name).unwrap().spec;
        let rep = check_assumptions(&p, 1000, 4).unwrap();
        assert!(rep.is_clean(), "{name}: {:?}", rep.violations);
    }
}

#[test]
fn nlp_objective_matches_trajectory_objective() {
    let p = get_problem("interior-classical").unwrap().spec;
    let cfg = TranscriptionConfig::penalty(40, 50.0, 0.0);
    let sol = solve_penalty_route(&p, &cfg, None, &SolverOptions::default()).unwrap();
    assert!((sol.nlp_objective - sol.trajectory.objective(&p)).abs() < 1e-12);
    assert!((sol.route_objective + 1.0).abs() < 1e-6);
}
