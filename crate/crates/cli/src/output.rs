//! CSV and log emission. All CSV files carry a `# schema=1` comment line
//! followed by a header row; floats use the shortest round-trip decimal
//! form so identical runs are byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use seir_mpc_core::model;
use seir_mpc_core::mpc::{MpcIterationRecord, MpcLog};
use seir_mpc_core::ocp::SolveStatus;
use seir_mpc_core::{ModelParams, Trajectory};

pub const SCHEMA_LINE: &str = "# schema=1";

pub fn write_file(path: &Path, content: &str) -> Result<(), String> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    }
    std::fs::write(path, content).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// Trajectory CSV. When `log` is given, the value and decrease margin of
/// each closed-loop iteration are attached to the row at its start time.
pub fn trajectory_csv(traj: &Trajectory, p: &ModelParams, log: Option<&MpcLog>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{SCHEMA_LINE}");
    let _ = writeln!(s, "t,S,E,I,R,beta,gamma,stage_cost,V_T,decrease_margin");
    let mut iters = log.map(|l| l.records.iter().peekable());
    for (k, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        let u = traj.inputs.get(k).or(traj.inputs.last());
        let (beta, gamma, cost) = match u {
            Some(u) => (
                u.beta,
                u.gamma,
                *traj
                    .cost_samples
                    .get(k)
                    .unwrap_or(&model::stage_cost(x, u, p)),
            ),
            None => (f64::NAN, f64::NAN, model::stage_cost_min(x, p)),
        };
        let r = (1.0 - x.s - x.e - x.i).max(0.0);
        let _ = write!(s, "{t},{},{},{},{r},{beta},{gamma},{cost}", x.s, x.e, x.i);
        let mut attached = false;
        if let Some(it) = iters.as_mut() {
            if let Some(rec) = it.peek() {
                if (rec.t - t).abs() < 1e-9 {
                    let _ = write!(s, ",{}", rec.value);
                    match rec.decrease_margin {
                        Some(m) => {
                            let _ = write!(s, ",{m}");
                        }
                        None => s.push(','),
                    }
                    attached = true;
                    it.next();
                }
            }
        }
        if !attached {
            s.push_str(",,");
        }
        s.push('\n');
    }
    s
}

pub fn status_str(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Converged => "converged",
        SolveStatus::MaxIter => "max-iter",
        SolveStatus::Infeasible => "infeasible",
    }
}

/// Plain-text iteration log, parseable by `mpc_log_from_text`.
pub fn mpc_log_text(log: &MpcLog) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# mpc-log v1");
    let _ = writeln!(
        s,
        "# index t value stage_integral decrease_margin status kkt_residual constraint_violation wall_time_s"
    );
    for r in &log.records {
        let margin = match r.decrease_margin {
            Some(m) => format!("{m}"),
            None => "-".to_string(),
        };
        let _ = writeln!(
            s,
            "{} {} {} {} {margin} {} {} {} {}",
            r.index,
            r.t,
            r.value,
            r.stage_integral,
            status_str(r.solver_status),
            r.kkt_residual,
            r.constraint_violation,
            r.wall_time_s
        );
    }
    let _ = writeln!(s, "# terminated {}", log.terminated);
    if let Some(t) = log.termination_time {
        let _ = writeln!(s, "# termination_time {t}");
    }
    s
}

pub fn mpc_log_from_text(text: &str) -> Result<MpcLog, String> {
    let mut log = MpcLog::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("terminated ") {
                log.terminated = v.trim() == "true";
            } else if let Some(v) = rest.strip_prefix("termination_time ") {
                log.termination_time = v.trim().parse().ok();
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(format!("line {}: expected 9 fields", lineno + 1));
        }
        let num = |i: usize| -> Result<f64, String> {
            fields[i]
                .parse()
                .map_err(|_| format!("line {}: bad number '{}'", lineno + 1, fields[i]))
        };
        let status = match fields[5] {
            "converged" => SolveStatus::Converged,
            "max-iter" => SolveStatus::MaxIter,
            "infeasible" => SolveStatus::Infeasible,
            other => return Err(format!("line {}: unknown status '{other}'", lineno + 1)),
        };
        log.records.push(MpcIterationRecord {
            index: fields[0]
                .parse()
                .map_err(|_| format!("line {}: bad index", lineno + 1))?,
            t: num(1)?,
            value: num(2)?,
            stage_integral: num(3)?,
            decrease_margin: if fields[4] == "-" { None } else { Some(num(4)?) },
            solver_status: status,
            kkt_residual: num(6)?,
            constraint_violation: num(7)?,
            wall_time_s: num(8)?,
            applied: Vec::new(),
        });
    }
    Ok(log)
}

/// First entry times into X_A and X_M and the first infection-cap
/// violation, scanned over the trajectory nodes.
pub fn membership_times(traj: &Trajectory, p: &ModelParams) -> (Option<f64>, Option<f64>, Option<f64>) {
    let mut xa = None;
    let mut xm = None;
    let mut violation = None;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        if xa.is_none() && p.in_xa(x) {
            xa = Some(*t);
        }
        if xm.is_none() && p.in_xm(x) {
            xm = Some(*t);
        }
        if violation.is_none() && x.i > p.i_max + 1e-9 {
            violation = Some(*t);
        }
    }
    (xa, xm, violation)
}

pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => "-".to_string(),
    }
}
