mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use seir_mpc_core::certify::{self, StagedReachOptions};
use seir_mpc_core::mpc::{self, LIFETIME_THRESHOLDS};
use seir_mpc_core::ocp::{self, OcpSpec, SolveStatus, SolverOptions};
use seir_mpc_core::{ControlInput, ControlSignal, Error, Method, Trajectory};

use config::ScenarioConfig;

#[derive(Parser)]
#[command(name = "seir-mpc", version, about = "Receding-horizon control of a constrained SEIR epidemic model")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario configuration file (flat key = value)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Stage-cost weight on the infected compartments, in (0,1]
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Prediction horizon, days
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Control horizon (time between solves), days
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Transcription / integration step, days
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Initial state as S,E,I
    #[arg(long, global = true, value_name = "S,E,I")]
    x0: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an open-loop policy and write the trajectory
    Simulate {
        /// nominal | maximal | holding-staged | constant:<beta>,<gamma>
        #[arg(long, default_value = "nominal")]
        policy: String,
        #[arg(long, default_value_t = 300.0)]
        days: f64,
    },
    /// Run the closed loop and print the lifetime table row
    Mpc,
    /// Closed-loop runs over a list of stage-cost weights
    SweepLambda {
        #[arg(long, default_value = "0.01,0.2,0.5,0.7,0.99", value_name = "L1,L2,...")]
        lambdas: String,
    },
    /// One open-loop optimal control solve
    Ocp,
    /// Run certification checks
    Certify {
        /// xm-invariance | a3 | cost-controllability | reach | lyapunov
        #[arg(long = "check")]
        checks: Vec<String>,
        /// Closed-loop log for the lyapunov check
        #[arg(long)]
        from_log: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DOMAIN: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli.common) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let out = PathBuf::from(&cfg.out_dir);
    if let Err(e) = output::write_file(&out.join("effective_config.txt"), &cfg.render()) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_DOMAIN);
    }
    let result = match &cli.command {
        Command::Simulate { policy, days } => cmd_simulate(&cfg, &out, policy, *days),
        Command::Mpc => cmd_mpc(&cfg, &out).map(|_| 0),
        Command::SweepLambda { lambdas } => cmd_sweep(&cfg, &out, lambdas),
        Command::Ocp => cmd_ocp(&cfg, &out),
        Command::Certify {
            checks,
            from_log,
            samples,
        } => cmd_certify(&cfg, &out, checks, from_log.as_deref(), *samples),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

enum CmdError {
    Config(String),
    Core(Error),
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Config(s) => write!(f, "{s}"),
            CmdError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        CmdError::Core(e)
    }
}

impl From<String> for CmdError {
    fn from(s: String) -> Self {
        CmdError::Config(s)
    }
}

fn exit_code_for(e: &CmdError) -> u8 {
    match e {
        CmdError::Config(_) => EXIT_CONFIG,
        CmdError::Core(e) => match e {
            Error::Infeasible(_) | Error::MpcInfeasibleAt { .. } => EXIT_INFEASIBLE,
            _ => EXIT_DOMAIN,
        },
    }
}

fn build_config(args: &CommonArgs) -> Result<ScenarioConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(lambda) = args.lambda {
        cfg.lambda = lambda;
    }
    if let Some(horizon) = args.horizon {
        cfg.horizon = horizon;
    }
    if let Some(delta) = args.delta {
        cfg.delta = delta;
    }
    if let Some(h) = args.h {
        cfg.h = h;
    }
    if let Some(x0) = &args.x0 {
        cfg.x0 = config::parse_x0(x0)?;
    }
    Ok(cfg)
}

fn cmd_simulate(cfg: &ScenarioConfig, out: &Path, policy: &str, days: f64) -> Result<u8, CmdError> {
    let p = cfg.params();
    p.validate()?;
    let x0 = cfg.state0()?;
    let days = (days / cfg.h).round().max(1.0) * cfg.h;

    let traj: Trajectory = match policy {
        "holding-staged" => {
            let (mut traj, t_reach) =
                certify::staged_reach_xm(&x0, &p, &StagedReachOptions::default())?;
            println!("X_M reached at t = {t_reach}");
            if t_reach < days {
                let rest = ((days - t_reach) / cfg.h).ceil() * cfg.h;
                let tail = seir_mpc_core::integrate::simulate(
                    &traj.final_state(),
                    &ControlSignal::Constant(p.u_nom()),
                    rest,
                    cfg.h,
                    Method::Rk4,
                    &p,
                )?;
                let shifted = Trajectory {
                    times: tail.times.iter().map(|t| t + t_reach).collect(),
                    ..tail
                };
                traj.extend_with(&shifted);
            }
            traj
        }
        name => {
            let u = match name {
                "nominal" => p.u_nom(),
                "maximal" => p.u_max_intervention(),
                _ => {
                    let pair = name.strip_prefix("constant:").ok_or_else(|| {
                        format!("unknown policy '{name}' (expected nominal, maximal, holding-staged, or constant:<beta>,<gamma>)")
                    })?;
                    let (b, g) = pair
                        .split_once(',')
                        .ok_or_else(|| format!("constant policy needs '<beta>,<gamma>', got '{pair}'"))?;
                    ControlInput {
                        beta: b.trim().parse().map_err(|_| format!("bad beta '{b}'"))?,
                        gamma: g.trim().parse().map_err(|_| format!("bad gamma '{g}'"))?,
                    }
                }
            };
            seir_mpc_core::integrate::simulate(
                &x0,
                &ControlSignal::Constant(u),
                days,
                cfg.h,
                Method::Rk4,
                &p,
            )?
        }
    };

    output::write_file(
        &out.join("trajectory.csv"),
        &output::trajectory_csv(&traj, &p, None),
    )?;
    let (xa, xm, violation) = output::membership_times(&traj, &p);
    println!("policy: {policy}");
    println!("X_A entry: {}", output::fmt_opt(xa));
    println!("X_M entry: {}", output::fmt_opt(xm));
    println!("constraint violation: {}", output::fmt_opt(violation));
    let xf = traj.final_state();
    println!(
        "final state at t = {}: ({}, {}, {})",
        traj.final_time(),
        xf.s,
        xf.e,
        xf.i
    );
    Ok(0)
}

struct MpcOutcome {
    lifetimes: Vec<Option<f64>>,
}

fn cmd_mpc(cfg: &ScenarioConfig, out: &Path) -> Result<MpcOutcome, CmdError> {
    let mpc_cfg = cfg.mpc_config()?;
    let x0 = cfg.state0()?;
    let (traj, log) = mpc::run_mpc(&x0, &mpc_cfg)?;
    output::write_file(
        &out.join("closed_loop.csv"),
        &output::trajectory_csv(&traj, &cfg.params(), Some(&log)),
    )?;
    output::write_file(&out.join("mpc_log.txt"), &output::mpc_log_text(&log))?;

    let lifetimes: Vec<Option<f64>> = LIFETIME_THRESHOLDS
        .iter()
        .map(|&thr| {
            mpc::epidemic_lifetime(&traj, &[thr])
                .ok()
                .map(|v| v[0])
        })
        .collect();
    println!(
        "lambda = {}: lifetimes (1e-5, 1e-6, 1e-7, 1e-8) = ({})",
        cfg.lambda,
        lifetimes
            .iter()
            .map(|v| output::fmt_opt(*v))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if log.terminated {
        println!(
            "terminated at t = {} after {} iterations",
            output::fmt_opt(log.termination_time),
            log.records.len()
        );
    }
    Ok(MpcOutcome { lifetimes })
}

fn cmd_sweep(cfg: &ScenarioConfig, out: &Path, lambdas: &str) -> Result<u8, CmdError> {
    let lambdas: Vec<f64> = lambdas
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad lambda '{s}'"))
        })
        .collect::<Result<_, _>>()?;
    for &l in &lambdas {
        if !(l > 0.0 && l <= 1.0) {
            return Err(CmdError::Config(format!("lambda {l} outside (0,1]")));
        }
    }

    let threads = std::env::var("SEIR_MPC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .min(lambdas.len());

    let results: Mutex<Vec<Option<Result<MpcOutcome, String>>>> =
        Mutex::new((0..lambdas.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= lambdas.len() {
                    break;
                }
                let mut run_cfg = cfg.clone();
                run_cfg.lambda = lambdas[i];
                run_cfg.out_dir = format!("{}/lambda-{}", cfg.out_dir, lambdas[i]);
                let run_out = PathBuf::from(&run_cfg.out_dir);
                let outcome = output::write_file(
                    &run_out.join("effective_config.txt"),
                    &run_cfg.render(),
                )
                .map_err(CmdError::Config)
                .and_then(|()| cmd_mpc(&run_cfg, &run_out))
                .map_err(|e| e.to_string());
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let mut csv = String::from(output::SCHEMA_LINE);
    csv.push('\n');
    csv.push_str("lambda,lifetime_1e-5,lifetime_1e-6,lifetime_1e-7,lifetime_1e-8,status\n");
    let mut failures = 0usize;
    for (lambda, slot) in lambdas.iter().zip(results.into_inner().unwrap()) {
        match slot.expect("worker did not run") {
            Ok(outcome) => {
                let cells: Vec<String> =
                    outcome.lifetimes.iter().map(|v| output::fmt_opt(*v)).collect();
                csv.push_str(&format!("{lambda},{},ok\n", cells.join(",")));
            }
            Err(e) => {
                eprintln!("lambda = {lambda} failed: {e}");
                csv.push_str(&format!("{lambda},-,-,-,-,failed\n"));
                failures += 1;
            }
        }
    }
    output::write_file(&out.join("lifetimes.csv"), &csv)?;
    println!("sweep complete: {} runs, {} failed", lambdas.len(), failures);
    Ok(if failures > 0 { EXIT_CHECK_FAILED } else { 0 })
}

fn cmd_ocp(cfg: &ScenarioConfig, out: &Path) -> Result<u8, CmdError> {
    let p = cfg.params();
    let x0 = cfg.state0()?;
    let spec = OcpSpec::new(x0, cfg.horizon, cfg.h, p)?;
    let sol = ocp::solve(&spec, None, &SolverOptions::default())?;

    let mut csv = String::from(output::SCHEMA_LINE);
    csv.push('\n');
    csv.push_str("k,t,S,E,I,beta,gamma\n");
    for (k, x) in sol.traj.states.iter().enumerate() {
        let t = k as f64 * cfg.h;
        match sol.u_star.get(k) {
            Some(u) => csv.push_str(&format!(
                "{k},{t},{},{},{},{},{}\n",
                x.s, x.e, x.i, u.beta, u.gamma
            )),
            None => csv.push_str(&format!("{k},{t},{},{},{},,\n", x.s, x.e, x.i)),
        }
    }
    output::write_file(&out.join("ocp_solution.csv"), &csv)?;
    println!(
        "status = {}, cost = {}, kkt = {:e}, violation = {:e}",
        output::status_str(sol.status),
        sol.cost,
        sol.kkt_residual,
        sol.constraint_violation
    );
    if sol.status == SolveStatus::Infeasible {
        return Err(CmdError::Core(Error::Infeasible(format!(
            "no feasible solution over {} days from ({}, {}, {})",
            cfg.horizon, x0.s, x0.e, x0.i
        ))));
    }
    Ok(0)
}

fn cmd_certify(
    cfg: &ScenarioConfig,
    out: &Path,
    checks: &[String],
    from_log: Option<&Path>,
    samples: usize,
) -> Result<u8, CmdError> {
    let p = cfg.params();
    p.validate()?;
    let default_checks = ["xm-invariance", "a3", "cost-controllability", "reach"];
    let selected: Vec<String> = if checks.is_empty() {
        default_checks.iter().map(|s| s.to_string()).collect()
    } else {
        checks.to_vec()
    };

    let mut reports = Vec::new();
    for check in &selected {
        match check.as_str() {
            "xm-invariance" => {
                let mut report = certify::check_xm_invariance(&p, samples.max(1), 300.0, cfg.seed)?;
                let mesh = certify::lie_boundary_mesh_max(&p, 40);
                report.pass = report.pass && mesh <= 1e-12;
                println!(
                    "xm-invariance: {} (trajectory margin {:e}, boundary mesh max {:e})",
                    pass_str(report.pass),
                    report.worst_margin,
                    mesh
                );
                reports.push(report);
            }
            "a3" => {
                let a3 = certify::check_a3(
                    &p,
                    cfg.horizon,
                    samples,
                    &[0.25, 1.0, 5.0, cfg.horizon],
                    cfg.h,
                    cfg.seed,
                    &SolverOptions::default(),
                )?;
                println!(
                    "a3: {} (C = {:e}, worst margin {:e}, excluded {})",
                    pass_str(a3.report.pass),
                    a3.c_bar,
                    a3.report.worst_margin,
                    a3.excluded
                );
                reports.push(a3.report);
            }
            "cost-controllability" => {
                let cc = certify::cost_controllability(&p, samples, cfg.seed)?;
                println!(
                    "cost-controllability: {} (rho_emp = {:e}, envelope bound {:e}, rate {:e})",
                    pass_str(cc.report.pass),
                    cc.rho_emp,
                    cc.rho_bound,
                    cc.fit.rate
                );
                reports.push(cc.report);
            }
            "reach" => {
                let x0 = cfg.state0()?;
                let result = certify::staged_reach_xm(&x0, &p, &StagedReachOptions::default());
                let report = match result {
                    Ok((traj, t_reach)) => {
                        let margin = p.i_max - traj.max_infectious();
                        println!(
                            "reach: {} (X_M entered at t = {t_reach}, infection margin {:e})",
                            pass_str(margin >= -1e-9),
                            margin
                        );
                        certify::CertReport {
                            name: "reach".into(),
                            samples: 1,
                            worst_margin: margin,
                            pass: margin >= -1e-9,
                            details: vec![format!("t_reach = {t_reach}")],
                        }
                    }
                    Err(e) => {
                        println!("reach: fail ({e})");
                        certify::CertReport {
                            name: "reach".into(),
                            samples: 1,
                            worst_margin: f64::NEG_INFINITY,
                            pass: false,
                            details: vec![format!("{e}")],
                        }
                    }
                };
                reports.push(report);
            }
            "lyapunov" => {
                let path = from_log.ok_or_else(|| {
                    "the lyapunov check needs --from-log <closed-loop log>".to_string()
                })?;
                let text = std::fs::read_to_string(path)
                    .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                let log = output::mpc_log_from_text(&text)?;
                let alpha_max = certify::lyapunov_monitor(&log)?;
                let pass = alpha_max < 1.0;
                println!("lyapunov: {} (alpha_max = {alpha_max})", pass_str(pass));
                reports.push(certify::CertReport {
                    name: "lyapunov".into(),
                    samples: log.records.len(),
                    worst_margin: 1.0 - alpha_max,
                    pass,
                    details: Vec::new(),
                });
            }
            other => {
                return Err(CmdError::Config(format!(
                    "unknown check '{other}' (expected one of xm-invariance, a3, cost-controllability, reach, lyapunov)"
                )));
            }
        }
    }

    let mut csv = String::from(output::SCHEMA_LINE);
    csv.push('\n');
    csv.push_str("check,samples,worst_margin,pass\n");
    for r in &reports {
        csv.push_str(&format!("{},{},{},{}\n", r.name, r.samples, r.worst_margin, r.pass));
    }
    output::write_file(&out.join("reports.csv"), &csv)?;

    let mut text = String::new();
    for r in &reports {
        text.push_str(&format!(
            "{}: {} (samples {}, worst margin {:e})\n",
            r.name,
            pass_str(r.pass),
            r.samples,
            r.worst_margin
        ));
        for d in &r.details {
            text.push_str(&format!("  {d}\n"));
        }
    }
    output::write_file(&out.join("reports.txt"), &text)?;

    Ok(if reports.iter().all(|r| r.pass) {
        0
    } else {
        EXIT_CHECK_FAILED
    })
}

fn pass_str(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "fail"
    }
}
