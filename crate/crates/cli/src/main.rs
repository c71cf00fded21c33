//! `signaling` — solve, simulate, check, and sweep strategic signaling
//! problems described by JSON configs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
//! 4 simulation z-score failure under `--assert`.

mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use signaling_core::{comm, control, measurement, posterior, robust, sim};
use signaling_core::{Error as CoreError, QuadraticObjective};

use config::{Mode, ProblemConfig};
use report::{
    human, plan_section, to_machine_json, write_trace_csv, CheckRow, ProjectionSection, Report,
    RobustSection, RuleSection, SimSectionOut, SolveSection, SweepRow, TypeRow,
};

#[derive(Parser)]
#[command(name = "signaling", version, about = "Strategic signaling solver front end")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Problem configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json / trace.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Override simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (grid points are solved in a deterministic order
    /// regardless, so results do not depend on this).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the configured problem and write a full report.
    Solve(Common),
    /// Solve, then Monte-Carlo verify the optimal rule.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Fail (exit 4) if any cost z-score exceeds 3.
        #[arg(long)]
        assert: bool,
    },
    /// Run round-trip and reduction self-tests on the configured model.
    Check(Common),
    /// Vary one scalar config knob over a grid and record optimal values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted config path, e.g. `meas.sigma_v` or `solver.tol`.
        #[arg(long)]
        path: String,
        /// Inclusive grid `start:step:end`.
        #[arg(long)]
        grid: String,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn config(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let code = match e {
            CoreError::NonConvergence { .. } | CoreError::Infeasible(_) | CoreError::Numeric(_) => 3,
            _ => 2,
        };
        Self { code, msg: e.to_string() }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("SIGNALING_LOG", "error"),
    )
    .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg.replace('\n', " | "));
            ExitCode::from(f.code)
        }
    }
}

fn load(common: &Common) -> Result<ProblemConfig, Failure> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", common.config.display())))?;
    let mut cfg = ProblemConfig::parse(&text).map_err(|e| Failure::config(e.to_string()))?;
    if let Some(tol) = common.tol {
        cfg.solver.tol = tol;
    }
    if let Some(seed) = common.seed {
        cfg.sim.seed = seed;
    }
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(Failure::config("--threads must be at least 1"));
        }
        info!("requested {t} threads; execution order is deterministic");
    }
    Ok(cfg)
}

fn emit(common: &Common, rep: &Report) -> Result<(), Failure> {
    std::fs::create_dir_all(&common.out)
        .map_err(|e| Failure::config(format!("cannot create {}: {e}", common.out.display())))?;
    let json = to_machine_json(rep).map_err(|e| Failure::config(e.to_string()))?;
    let path = common.out.join("report.json");
    std::fs::write(&path, json)
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Solve(common) => {
            let cfg = load(&common)?;
            let section = solve_section(&cfg)?;
            println!(
                "mode {}: objective {} constant {} total {} ({} Newton steps, gap {})",
                cfg.mode.name(),
                human(section.objective),
                human(section.constant),
                human(section.total),
                section.newton_steps,
                human(section.gap),
            );
            let mut rep = Report::new("solve", cfg);
            rep.solve = Some(section);
            emit(&common, &rep)
        }
        Cmd::Simulate { common, assert } => {
            let cfg = load(&common)?;
            let section = solve_section(&cfg)?;
            let sim_rep = simulate(&cfg)?;
            println!(
                "mode {}: predicted sender {} empirical {} (z {}); receiver z {}",
                cfg.mode.name(),
                human(sim_rep.sender.predicted),
                human(sim_rep.sender.empirical),
                human(sim_rep.sender.z),
                human(sim_rep.receiver.z),
            );
            let worst = sim_rep.sender.z.abs().max(sim_rep.receiver.z.abs());
            let mut rep = Report::new("simulate", cfg);
            rep.solve = Some(section);
            rep.simulation = Some(SimSectionOut::from_report(&sim_rep));
            emit(&common, &rep)?;
            if assert && !(worst <= 3.0) {
                return Err(Failure {
                    code: 4,
                    msg: format!("simulation z-score {} exceeds 3", human(worst)),
                });
            }
            Ok(())
        }
        Cmd::Check(common) => {
            let cfg = load(&common)?;
            let checks = run_checks(&cfg);
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
            }
            let mut rep = Report::new("check", cfg);
            rep.checks = Some(checks);
            emit(&common, &rep)?;
            if failed > 0 {
                return Err(Failure { code: 3, msg: format!("{failed} self-test(s) failed") });
            }
            Ok(())
        }
        Cmd::Sweep { common, path, grid } => {
            let cfg = load(&common)?;
            let values = config::parse_grid(&grid).map_err(|e| Failure::config(e.to_string()))?;
            let mut rows = Vec::with_capacity(values.len());
            for &v in &values {
                let point =
                    config::set_scalar_path(&cfg, &path, v).map_err(|e| Failure::config(e.to_string()))?;
                let row = match solve_section(&point) {
                    Ok(s) => SweepRow {
                        param: path.clone(),
                        value: v,
                        objective: s.total,
                        iterations: s.newton_steps,
                        converged: true,
                    },
                    Err(f) if f.code == 3 => SweepRow {
                        param: path.clone(),
                        value: v,
                        objective: f64::NAN,
                        iterations: 0,
                        converged: false,
                    },
                    Err(f) => return Err(f),
                };
                println!(
                    "{} = {} -> objective {} (converged: {})",
                    path,
                    human(row.value),
                    human(row.objective),
                    row.converged
                );
                rows.push(row);
            }
            let all_failed = rows.iter().all(|r| !r.converged);
            std::fs::create_dir_all(&common.out)
                .map_err(|e| Failure::config(format!("cannot create {}: {e}", common.out.display())))?;
            let csv_path = common.out.join("trace.csv");
            std::fs::write(&csv_path, write_trace_csv(&rows))
                .map_err(|e| Failure::config(format!("cannot write {}: {e}", csv_path.display())))?;
            let mut rep = Report::new("sweep", cfg);
            rep.sweep = Some(rows);
            emit(&common, &rep)?;
            if all_failed {
                return Err(Failure { code: 3, msg: "no sweep point converged".into() });
            }
            Ok(())
        }
    }
}

fn solve_section(cfg: &ProblemConfig) -> Result<SolveSection, Failure> {
    let tol = cfg.solver.tol;
    match cfg.mode {
        Mode::Comm => {
            let model = cfg.gauss_markov()?;
            let obj_s = cfg.sender_objective()?;
            let obj_r = cfg.receiver_objective()?;
            let rep = comm::solve_multi_stage(&obj_s, &obj_r, &model, tol)?;
            Ok(SolveSection {
                objective: rep.objective,
                constant: rep.constant,
                total: rep.total,
                newton_steps: rep.newton_steps,
                gap: rep.gap,
                plan: plan_section(&rep.plan),
                rule: RuleSection::from_rule(&rep.rule),
                robust: None,
                projection: None,
            })
        }
        Mode::Control => {
            let ctrl = cfg.controlled()?;
            let obj_s = cfg.sender_objective()?;
            let obj_r = cfg.receiver_objective()?;
            let rep = control::solve_control(&obj_s, &obj_r, &ctrl, tol)?;
            Ok(SolveSection {
                objective: rep.comm.objective,
                constant: rep.comm.constant,
                total: rep.comm.total,
                newton_steps: rep.comm.newton_steps,
                gap: rep.comm.gap,
                plan: plan_section(&rep.comm.plan),
                rule: RuleSection::from_rule(&rep.comm.rule),
                robust: None,
                projection: None,
            })
        }
        Mode::Robust => {
            let model = cfg.gauss_markov()?;
            let chain = model.chain();
            let obj_s = cfg.sender_objective()?;
            let mut types = Vec::new();
            let mut v_o = 0.0;
            for (label, obj_r) in cfg.receiver_type_objectives()? {
                let red = comm::reduce(&obj_s, &obj_r, &chain.sigmas)?;
                v_o = red.constant; // depends on the sender only
                types.push(robust::TypeCosts { label, costs: red.costs });
            }
            let problem = robust::RobustProblem::new(chain, types, v_o)?;
            let sol = robust::solve_robust(&problem, tol)?;
            let weights = robust::worst_case_distribution(&sol.plan, &problem);
            let per_type = sol
                .per_type
                .iter()
                .zip(&weights)
                .map(|(t, &w)| TypeRow {
                    label: t.label.clone(),
                    theta: t.theta,
                    error: t.error.clone(),
                    weight: w,
                })
                .collect();
            Ok(SolveSection {
                objective: sol.theta - v_o,
                constant: v_o,
                total: sol.theta,
                newton_steps: 0,
                gap: 0.0,
                plan: plan_section(&sol.plan),
                rule: RuleSection::from_rule(&sol.rule),
                robust: Some(RobustSection {
                    theta: sol.theta,
                    winner: sol.per_type[sol.winner].label.clone(),
                    per_type,
                }),
                projection: None,
            })
        }
        Mode::Noisy => {
            let model = cfg.gauss_markov()?;
            let chain = model.chain();
            let obj_s = cfg.sender_objective()?;
            let obj_r = cfg.receiver_objective()?;
            let red = comm::reduce(&obj_s, &obj_r, &chain.sigmas)?;
            let c = cfg.model.c.as_ref().expect("validated").to_matrix()?;
            let sv = cfg.model.sigma_v.as_ref().expect("validated").to_matrix()?;
            let meas = measurement::MeasurementModel::new(c, sv)?;
            let lifted = measurement::lift(&model, &meas, &red.costs)?;
            let sol = measurement::solve_lifted(&lifted, tol)?;
            let proj = measurement::project_rule(&sol.rule, &lifted)?;
            let state_post = measurement::state_posterior(&sol.plan, &lifted);
            Ok(SolveSection {
                objective: sol.objective,
                constant: red.constant,
                total: sol.objective + red.constant,
                newton_steps: sol.newton_steps,
                gap: sol.gap,
                plan: plan_section(&sol.plan),
                rule: RuleSection::from_rule(&sol.rule),
                robust: None,
                projection: Some(ProjectionSection {
                    lifted_rule: RuleSection::from_rule(&proj.lifted),
                    combine: proj.combine.iter().map(config::MatrixData::from_matrix).collect(),
                    state_posterior: state_post
                        .iter()
                        .map(config::MatrixData::from_matrix)
                        .collect(),
                }),
            })
        }
    }
}

fn simulate(cfg: &ProblemConfig) -> Result<sim::SimReport, Failure> {
    let sim_cfg = sim::SimConfig::new(cfg.sim.trajectories, cfg.sim.seed)?;
    match cfg.mode {
        Mode::Comm => {
            let model = cfg.gauss_markov()?;
            let obj_s = cfg.sender_objective()?;
            let obj_r = cfg.receiver_objective()?;
            let rep = comm::solve_multi_stage(&obj_s, &obj_r, &model, cfg.solver.tol)?;
            Ok(sim::simulate_comm(&model, &rep.rule, &obj_s, &obj_r, &sim_cfg)?)
        }
        Mode::Control => {
            let ctrl = cfg.controlled()?;
            let obj_s = cfg.sender_objective()?;
            let obj_r = cfg.receiver_objective()?;
            let rep = control::solve_control(&obj_s, &obj_r, &ctrl, cfg.solver.tol)?;
            Ok(sim::simulate_control(&ctrl, &rep.comm.rule, &obj_s, &obj_r, &sim_cfg)?)
        }
        _ => Err(Failure::config(format!(
            "simulate supports comm and control modes, not {}",
            cfg.mode.name()
        ))),
    }
}

fn run_checks(cfg: &ProblemConfig) -> Vec<CheckRow> {
    let mut rows = Vec::new();
    let mut push = |name: &str, res: Result<String, String>| match res {
        Ok(detail) => rows.push(CheckRow { name: name.into(), passed: true, detail }),
        Err(detail) => rows.push(CheckRow { name: name.into(), passed: false, detail }),
    };

    push("model", check_model(cfg));
    push("round_trip", check_round_trip(cfg));
    push("reduction", check_reduction(cfg));
    push("solve_smoke", check_solve_smoke(cfg));
    rows
}

fn check_model(cfg: &ProblemConfig) -> Result<String, String> {
    cfg.gauss_markov().map_err(|e| e.to_string())?;
    if cfg.mode == Mode::Control {
        cfg.controlled().map_err(|e| e.to_string())?;
    }
    Ok("model constructs and validates".into())
}

fn check_round_trip(cfg: &ProblemConfig) -> Result<String, String> {
    let chain = cfg.gauss_markov().map_err(|e| e.to_string())?.chain();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let plan = posterior::random_feasible_plan(&chain, &mut rng);
        let violations =
            signaling_core::model::validate_plan(&plan, &chain).map_err(|e| e.to_string())?;
        if !violations.is_empty() {
            return Err(format!("random plan violates chain constraints: {violations:?}"));
        }
        let rule = posterior::synthesize(&plan, &chain).map_err(|e| e.to_string())?;
        let back = posterior::posterior_covariance(&rule, &chain).map_err(|e| e.to_string())?;
        for (h, g) in plan.stages.iter().zip(&back.stages) {
            let rel = (h - g).norm() / (1.0 + h.norm());
            worst = worst.max(rel);
        }
    }
    if worst <= 1e-8 {
        Ok(format!("20 plans round-trip, worst relative error {:.2e}", worst))
    } else {
        Err(format!("round-trip error {:.2e} exceeds 1e-8", worst))
    }
}

fn check_reduction(cfg: &ProblemConfig) -> Result<String, String> {
    let receivers: Vec<QuadraticObjective> = match cfg.mode {
        Mode::Robust => cfg
            .receiver_type_objectives()
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|(_, o)| o)
            .collect(),
        _ => vec![cfg.receiver_objective().map_err(|e| e.to_string())?],
    };
    if cfg.mode == Mode::Control {
        let ctrl = cfg.controlled().map_err(|e| e.to_string())?;
        let obj_s = cfg.sender_objective().map_err(|e| e.to_string())?;
        let red = control::control_to_comm(&obj_s, &receivers[0], &ctrl)
            .map_err(|e| e.to_string())?;
        for v in &red.costs {
            let asym = (v - v.transpose()).norm();
            if asym > 1e-10 * (1.0 + v.norm()) {
                return Err(format!("reduced stage cost not symmetric ({asym:.2e})"));
            }
        }
        return Ok("control reduction yields symmetric stage costs".into());
    }
    for obj_r in &receivers {
        let f = comm::receiver_best_response(obj_r).map_err(|e| e.to_string())?;
        let resid =
            (obj_r.r.transpose() * &obj_r.r * &f - obj_r.r.transpose() * &obj_r.q).norm();
        let scale = 1.0 + obj_r.q.norm() * obj_r.r.norm();
        if resid > 1e-8 * scale {
            return Err(format!("best-response normal equations residual {resid:.2e}"));
        }
    }
    Ok("receiver best response solves its normal equations".into())
}

fn check_solve_smoke(cfg: &ProblemConfig) -> Result<String, String> {
    let mut loose = cfg.clone();
    loose.solver.tol = cfg.solver.tol.max(1e-6);
    let s = solve_section(&loose).map_err(|f| f.msg)?;
    let chain = cfg.gauss_markov().map_err(|e| e.to_string())?.chain();
    if cfg.mode != Mode::Noisy {
        let plan = signaling_core::PosteriorPlan {
            stages: s
                .plan
                .iter()
                .map(|m| m.to_matrix().map_err(|e| e.to_string()))
                .collect::<Result<_, String>>()?,
        };
        let violations =
            signaling_core::model::validate_plan(&plan, &chain).map_err(|e| e.to_string())?;
        if !violations.is_empty() {
            return Err(format!("solver returned an infeasible plan: {violations:?}"));
        }
    }
    Ok(format!("loose-tolerance solve converged (total {})", human(s.total)))
}
