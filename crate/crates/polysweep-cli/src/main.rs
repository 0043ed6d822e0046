//! Command-line front end: problem ingestion, the bundled showcase run,
//! convergence studies, and machine-readable JSON/CSV artifacts.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use polysweep::certify::{check_certificate, find_certificate, ConditionMode};
use polysweep::coderiv::{coderiv_f_membership, coderiv_g_membership, coderiv_orthant};
use polysweep::example8;
use polysweep::jsonio::{format_f64, to_canonical_json};
use polysweep::polyhedra::Polyhedron;
use polysweep::solve::{
    convergence_study, solve_pk, solve_reduced_halfspace, study_csv, SolveOptions,
};
use polysweep::sweeping::{
    simulate, uniform_mesh, ControlInput, DiscreteQuadruple, SampledTrajectory, StepMode,
    SweepingProblem,
};
use polysweep::transcription::{cost_jk, feasibility_residuals, DiscreteProblem};

#[derive(Parser)]
#[command(name = "polysweep", version, about = "Controlled polyhedral sweeping processes: simulation, discrete optimal control, and dual optimality certificates")]
struct Cli {
    /// Numerical tolerance for pass/fail checks.
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol: f64,
    /// Seed for the deterministic multistart scrambling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for output artifacts.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the bundled halfspace showcase end to end.
    Example8(Example8Args),
    /// Simulate the catching-up scheme for given controls.
    Simulate(SimulateArgs),
    /// Solve the discrete control problem by multistart single shooting.
    Solve(SolveArgs),
    /// Search a dual optimality certificate for a candidate solution.
    Certify(CertifyArgs),
    /// Mesh-refinement study of the discrete optima around a reference.
    Study(StudyArgs),
    /// Coderivative descriptors and membership residuals.
    Coderiv(CoderivArgs),
}

#[derive(Args)]
struct Example8Args {
    /// Report only one analysis branch (1 = tangential, 2 = boundary-riding).
    #[arg(long)]
    case: Option<u8>,
    /// Number of mesh intervals (even).
    #[arg(long, default_value_t = 2)]
    nu: usize,
    /// Multistart count for the shooting solver.
    #[arg(long, default_value_t = 16)]
    starts: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    problem: PathBuf,
    /// Controls JSON: {"u": [[...]], "a": optional, "b": optional}.
    #[arg(long)]
    controls: PathBuf,
    #[arg(long, default_value_t = 2)]
    nu: usize,
    #[arg(long, default_value = "explicit")]
    mode: String,
    /// Output CSV path (relative to --out-dir unless absolute).
    #[arg(long, default_value = "trajectory.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: PathBuf,
    /// Sampled reference trajectory JSON.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = 2)]
    nu: usize,
    #[arg(long, default_value_t = 16)]
    starts: usize,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Confine the search near the reference controls (local tracking).
    #[arg(long)]
    trust_radius: Option<f64>,
    /// Output path; .json writes the quadruple, .csv the trajectory table.
    #[arg(long, default_value = "solution.json")]
    out: PathBuf,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    problem: PathBuf,
    /// Candidate solution: a quadruple JSON or a trajectory CSV.
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value = "th72")]
    mode: String,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Comma-separated mesh sizes.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    nu_list: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 16)]
    starts: usize,
    /// Radius of the local tracking region around the reference controls
    /// (capped at 0.08 T / nu per mesh).
    #[arg(long, default_value_t = 0.05)]
    trust_radius: f64,
    #[arg(long, default_value = "study.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct CoderivArgs {
    /// Input JSON: {"kind": "orthant"|"g"|"f", ...}.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "coderiv.json")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let report = json!({"error": e.to_string()});
            eprintln!("{report}");
            ExitCode::from(1)
        }
    }
}

fn resolve(out_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    fs::create_dir_all(&cli.out_dir)?;
    match &cli.command {
        Command::Example8(args) => cmd_example8(&cli, args),
        Command::Simulate(args) => cmd_simulate(&cli, args),
        Command::Solve(args) => cmd_solve(&cli, args),
        Command::Certify(args) => cmd_certify(&cli, args),
        Command::Study(args) => cmd_study(&cli, args),
        Command::Coderiv(args) => cmd_coderiv(&cli, args),
    }
}

fn trajectory_csv(q: &DiscreteQuadruple) -> String {
    let n = q.x[0].len();
    let m = q.eta.first().map_or(0, |e| e.len());
    let d = q.u.first().map_or(0, |u| u.len());
    let mut head = vec!["t".to_string()];
    head.extend((1..=n).map(|c| format!("x{c}")));
    head.extend((1..=m).map(|c| format!("eta{c}")));
    head.extend((1..=d).map(|c| format!("u{c}")));
    let mut out = head.join(",");
    out.push('\n');
    for j in 0..q.mesh.len() {
        let mut row = vec![format_f64(q.mesh[j])];
        row.extend(q.x[j].iter().map(|v| format_f64(*v)));
        if j < q.eta.len() {
            row.extend(q.eta[j].iter().map(|v| format_f64(*v)));
            row.extend(q.u[j].iter().map(|v| format_f64(*v)));
        } else {
            row.extend(std::iter::repeat(String::new()).take(m + d));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn parse_trajectory_csv(text: &str, prob: &SweepingProblem) -> Result<DiscreteQuadruple, String> {
    let mut lines = text.lines();
    let _header = lines.next().ok_or("empty csv")?;
    let n = prob.n;
    let m = prob.m;
    let d = prob.d;
    let mut mesh = Vec::new();
    let mut x = Vec::new();
    let mut eta = Vec::new();
    let mut u = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 1 + n {
            return Err(format!("short row: {line}"));
        }
        let t: f64 = cells[0].parse().map_err(|e| format!("bad t: {e}"))?;
        mesh.push(t);
        let xs: Result<Vec<f64>, _> = cells[1..1 + n].iter().map(|c| c.parse()).collect();
        x.push(xs.map_err(|e| format!("bad state: {e}"))?);
        if cells.len() >= 1 + n + m + d && !cells[1 + n].is_empty() {
            let es: Result<Vec<f64>, _> =
                cells[1 + n..1 + n + m].iter().map(|c| c.parse()).collect();
            eta.push(es.map_err(|e| format!("bad eta: {e}"))?);
            let us: Result<Vec<f64>, _> =
                cells[1 + n + m..1 + n + m + d].iter().map(|c| c.parse()).collect();
            u.push(us.map_err(|e| format!("bad control: {e}"))?);
        }
    }
    let nu = mesh.len().saturating_sub(1);
    if eta.len() != nu || u.len() != nu {
        return Err("csv must carry eta and u on every non-final row".into());
    }
    let mut a = Vec::with_capacity(nu + 1);
    let mut b = Vec::with_capacity(nu + 1);
    for &t in &mesh {
        let poly = prob.polyhedron_at(t).map_err(|e| e.to_string())?;
        a.push(poly.rows);
        b.push(poly.offsets);
    }
    Ok(DiscreteQuadruple { mesh, x, a, b, u, eta })
}

fn cmd_example8(cli: &Cli, args: &Example8Args) -> Result<ExitCode, Box<dyn std::error::Error>> {
    if args.nu < 2 || args.nu % 2 != 0 {
        eprintln!("--nu must be even and at least 2");
        return Ok(ExitCode::from(2));
    }
    let prob = example8::problem();
    let reference = example8::reference(64);
    let mesh = uniform_mesh(prob.horizon, args.nu);
    let dp = DiscreteProblem::new(prob.clone(), mesh.clone(), reference, 1.0, 0.0)?;

    let reduced = solve_reduced_halfspace(&dp)?;
    let init = simulate(
        &prob,
        &ControlInput { u: example8::optimal_controls(args.nu), a: None, b: None },
        &mesh,
        StepMode::Explicit,
    )?
    .quadruple;
    // Two-interval meshes have no competing basin; finer meshes track the
    // local optimum near the reference within a mesh-scaled neighborhood.
    let trust = if args.nu == 2 { None } else { Some(0.08 / args.nu as f64) };
    let opts = SolveOptions {
        starts: args.starts,
        seed: cli.seed,
        trust_radius: trust,
        ..Default::default()
    };
    let (best, _history) = solve_pk(&dp, &init, &opts)?;
    let best_cost = cost_jk(&dp, &best)?;
    // The exact optimum (closed-form controls) carries the trajectory and
    // certificate artifacts; the shooting result is compared against it.
    let sim = simulate(
        &prob,
        &ControlInput { u: reduced.controls.clone(), a: None, b: None },
        &mesh,
        StepMode::Explicit,
    )?;
    let search = find_certificate(&dp, &sim.quadruple, ConditionMode::Th72)?;
    let report = check_certificate(&dp, &sim.quadruple, &search.certificate, ConditionMode::Th72)?;

    // Artifacts.
    fs::write(
        resolve(&cli.out_dir, Path::new("example8_problem.json")),
        to_canonical_json(&prob)?,
    )?;
    fs::write(
        resolve(&cli.out_dir, Path::new("example8_reference.json")),
        to_canonical_json(&dp.reference)?,
    )?;
    fs::write(
        resolve(&cli.out_dir, Path::new("example8_trajectory.csv")),
        trajectory_csv(&sim.quadruple),
    )?;
    let mut table = String::from("label,u1,u2,eta,cost,admissible\n");
    for c in &reduced.cases {
        if let Some(case) = args.case {
            let keep = match case {
                1 => c.label == "tangential",
                2 => c.label == "interior_stationary",
                _ => true,
            };
            if !keep {
                continue;
            }
        }
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.label,
            format_f64(c.second_segment[0]),
            format_f64(c.second_segment[1]),
            format_f64(c.eta),
            format_f64(c.cost),
            c.admissible
        ));
    }
    fs::write(resolve(&cli.out_dir, Path::new("example8_cost_table.csv")), &table)?;
    let cert_json = json!({
        "residual": search.residual,
        "lambda": search.certificate.lambda,
        "families": report.families,
        "ntc1_sum": report.ntc1_sum,
        "certificate": search.certificate,
    });
    fs::write(
        resolve(&cli.out_dir, Path::new("example8_certificate.json")),
        to_canonical_json(&cert_json)?,
    )?;

    // Pass/fail checks.
    let tol = cli.tol;
    let last = best.u.len() - 1;
    let du = (best.u[last][0] - reduced.controls[args.nu - 1][0])
        .abs()
        .max((best.u[last][1] - reduced.controls[args.nu - 1][1]).abs());
    let mut checks = vec![
        ("reduced_cost", (reduced.cost - 2.205).abs() <= 1e-9),
        ("shooting_matches_reduced_controls", du <= 1e-6),
        ("shooting_cost", (best_cost - reduced.cost).abs() <= tol.max(1e-9)),
        ("hit_time", sim.first_hit == Some(args.nu / 2)),
        (
            "endpoint",
            (sim.quadruple.x[args.nu][0] - 0.82).abs() <= 1e-10
                && (sim.quadruple.x[args.nu][1] - 0.59).abs() <= 1e-10,
        ),
        ("certificate_residual", search.residual <= tol.max(1e-8)),
        ("certificate_lambda_positive", search.certificate.lambda > 0.0),
    ];
    if args.case == Some(1) {
        checks.push((
            "tangential_cost",
            reduced
                .cases
                .iter()
                .find(|c| c.label == "tangential")
                .map(|c| (c.cost - 53.0 / 24.0).abs() <= 1e-9)
                .unwrap_or(false),
        ));
    }
    let mut ok = true;
    for (name, pass) in &checks {
        println!("{}: {}", name, if *pass { "pass" } else { "FAIL" });
        ok &= *pass;
    }
    println!(
        "cost {} | eta {} | certificate residual {:.3e} lambda {:.6}",
        format_f64(best_cost),
        format_f64(best.eta[args.nu - 1][0]),
        search.residual,
        search.certificate.lambda
    );
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn load_problem(path: &Path) -> Result<SweepingProblem, Box<dyn std::error::Error>> {
    let text = fs::read_to_string(path)?;
    let prob: SweepingProblem = serde_json::from_str(&text)?;
    prob.validate()?;
    Ok(prob)
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let prob = load_problem(&args.problem)?;
    let controls: ControlInput = serde_json::from_str(&fs::read_to_string(&args.controls)?)?;
    let nu = controls.u.len().max(args.nu);
    let mesh = uniform_mesh(prob.horizon, nu);
    let mode = match args.mode.as_str() {
        "projective" => StepMode::Projective,
        "explicit" => StepMode::Explicit,
        other => {
            eprintln!("unknown mode {other}");
            return Ok(ExitCode::from(2));
        }
    };
    let sim = simulate(&prob, &controls, &mesh, mode)?;
    fs::write(resolve(&cli.out_dir, &args.out), trajectory_csv(&sim.quadruple))?;
    println!(
        "simulated {} steps; first boundary contact: {:?}",
        nu, sim.first_hit
    );
    Ok(ExitCode::SUCCESS)
}

fn load_reference(path: &Path) -> Result<SampledTrajectory, Box<dyn std::error::Error>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn cmd_solve(cli: &Cli, args: &SolveArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let prob = load_problem(&args.problem)?;
    let reference = load_reference(&args.reference)?;
    let mesh = uniform_mesh(prob.horizon, args.nu);
    let dp = DiscreteProblem::new(prob.clone(), mesh.clone(), reference, args.epsilon, 0.0)?;
    let ref_controls: Vec<Vec<f64>> = (0..args.nu)
        .map(|j| prob.control_set.project(&dp.reference.u_at(mesh[j])))
        .collect();
    let init = simulate(
        &prob,
        &ControlInput { u: ref_controls, a: None, b: None },
        &mesh,
        StepMode::Explicit,
    )?
    .quadruple;
    let opts = SolveOptions {
        starts: args.starts,
        seed: cli.seed,
        trust_radius: args.trust_radius,
        ..Default::default()
    };
    let (best, history) = solve_pk(&dp, &init, &opts)?;
    let cost = cost_jk(&dp, &best)?;
    let rep = feasibility_residuals(&dp, &best, cli.tol.max(1e-8))?;
    let out = resolve(&cli.out_dir, &args.out);
    if out.extension().map(|e| e == "csv").unwrap_or(false) {
        fs::write(&out, trajectory_csv(&best))?;
    } else {
        let payload = json!({
            "cost": cost,
            "feasible": rep.feasible,
            "budget_exceeded": history.budget_exceeded,
            "quadruple": best,
        });
        fs::write(&out, to_canonical_json(&payload)?)?;
    }
    println!("cost {}", format_f64(cost));
    Ok(if rep.feasible { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_certify(cli: &Cli, args: &CertifyArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let prob = load_problem(&args.problem)?;
    let reference = load_reference(&args.reference)?;
    let text = fs::read_to_string(&args.solution)?;
    let q: DiscreteQuadruple = if args
        .solution
        .extension()
        .map(|e| e == "csv")
        .unwrap_or(false)
    {
        parse_trajectory_csv(&text, &prob).map_err(polysweep::Error::BadProblem)?
    } else {
        serde_json::from_str(&text)?
    };
    let mode = match args.mode.as_str() {
        "th71" => ConditionMode::Th71,
        "th72" => ConditionMode::Th72,
        other => {
            eprintln!("unknown mode {other}");
            return Ok(ExitCode::from(2));
        }
    };
    let dp = DiscreteProblem::new(prob, q.mesh.clone(), reference, args.epsilon, 0.0)?;
    let search = find_certificate(&dp, &q, mode)?;
    let report = check_certificate(&dp, &q, &search.certificate, mode)?;
    let payload = json!({
        "mode": args.mode,
        "residual": search.residual,
        "passes": search.residual <= cli.tol.max(1e-8),
        "lambda": search.certificate.lambda,
        "patterns_tried": search.patterns_tried,
        "pattern_budget_exceeded": search.pattern_budget_exceeded,
        "families": report.families,
        "ntc_sum": report.ntc_sum,
        "ntc1_sum": report.ntc1_sum,
        "certificate": search.certificate,
    });
    fs::write(resolve(&cli.out_dir, &args.out), to_canonical_json(&payload)?)?;
    println!(
        "residual {:.3e} ({}) lambda {:.6}",
        search.residual,
        if search.residual <= cli.tol.max(1e-8) { "pass" } else { "reject" },
        search.certificate.lambda
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_study(cli: &Cli, args: &StudyArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let prob = load_problem(&args.problem)?;
    let reference = load_reference(&args.reference)?;
    let opts = SolveOptions {
        starts: args.starts,
        seed: cli.seed,
        trust_radius: Some(args.trust_radius),
        ..Default::default()
    };
    let rows = convergence_study(&prob, &reference, &args.nu_list, args.epsilon, &opts);
    fs::write(resolve(&cli.out_dir, &args.out), study_csv(&rows))?;
    for r in &rows {
        println!(
            "nu={} cost={} state_gap={:.3e} u_gap={:.3e}{}",
            r.nu,
            format_f64(r.cost),
            r.state_gap,
            r.u_gap,
            if r.failed { " FAILED" } else { "" }
        );
    }
    Ok(if rows.iter().any(|r| r.failed) { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_coderiv(cli: &Cli, args: &CoderivArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let input: serde_json::Value = serde_json::from_str(&fs::read_to_string(&args.input)?)?;
    let kind = input["kind"].as_str().unwrap_or("");
    fn vecf(v: &serde_json::Value) -> Vec<f64> {
        v.as_array()
            .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
            .unwrap_or_default()
    }
    fn matf(v: &serde_json::Value) -> Vec<Vec<f64>> {
        v.as_array().map(|a| a.iter().map(vecf).collect()).unwrap_or_default()
    }
    let tol = input["tol"].as_f64().unwrap_or(1e-9);
    let payload = match kind {
        "orthant" => {
            let desc =
                coderiv_orthant(&vecf(&input["x"]), &vecf(&input["v"]), &vecf(&input["w"]), tol)?;
            json!({"kind": "orthant", "descriptor": desc})
        }
        "g" => {
            let poly: Polyhedron = serde_json::from_value(input["polyhedron"].clone())?;
            let rep = coderiv_g_membership(
                &poly,
                &vecf(&input["x"]),
                &vecf(&input["v"]),
                &vecf(&input["w"]),
                &vecf(&input["candidate"]),
                tol,
            )?;
            json!({"kind": "g", "residual": rep.residual, "witness_p": rep.witness_p, "witness_q": rep.witness_q})
        }
        "f" => {
            let poly: Polyhedron = serde_json::from_value(input["polyhedron"].clone())?;
            let rep = coderiv_f_membership(
                &poly,
                &matf(&input["grad_x"]),
                &matf(&input["grad_u"]),
                &vecf(&input["g_value"]),
                &vecf(&input["x"]),
                &vecf(&input["w"]),
                &vecf(&input["y"]),
                &vecf(&input["candidate"]),
                tol,
            )?;
            json!({"kind": "f", "residual": rep.residual, "witness_p": rep.witness_p, "witness_q": rep.witness_q})
        }
        other => {
            eprintln!("unknown coderivative kind {other:?}");
            return Ok(ExitCode::from(2));
        }
    };
    fs::write(resolve(&cli.out_dir, &args.out), to_canonical_json(&payload)?)?;
    println!("{payload}");
    Ok(ExitCode::SUCCESS)
}
