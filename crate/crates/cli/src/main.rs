//! Command-line driver: exact verification suite, Monte Carlo battery,
//! trajectory simulation, fusion checks, and weight tensor dumps.
//!
//! Exit codes: 0 all checks passed, 1 a check failed, 2 usage or
//! configuration error. Failures also emit a machine-readable error record
//! on stderr. Reports embed the configuration and seed for replay.

use clap::{Args, Parser, Subcommand};
use s6v_core::dynamics::{shifted_step, FieldDraws};
use s6v_core::exact::{
    column_fusion_check, default_verification_suite, fusion_identity_check,
    qexchangeability_check, reflection_check, ResidualReport,
};
use s6v_core::lattice::FrameState;
use s6v_core::mc::{
    blocking_convergence_mc, coupled_assertions_mc, current_law_mc, fused_unfused_compare_mc,
    phi_decay_mc, second_class_tail_mc, stationarity_mc, DynamicsKind, EstimatorReport,
    ReplicaPlan,
};
use s6v_core::measures::{boundary_current_law, inhomogeneous_boundary_law, sample_window};
use s6v_core::qseries::{b_field, build_l_tensor, ModelParams, SixVertexParams};
use s6v_core::rng::RandomField;
use s6v_core::MeasureSpec;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "s6v", about = "Stochastic six-vertex and higher-spin vertex model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the exact verification suite (enumeration, no sampling).
    Verify(CommonOpts),
    /// Emit a trajectory log as JSON lines.
    Simulate(CommonOpts),
    /// Run the statistical Monte Carlo battery.
    Mc(CommonOpts),
    /// Exact fusion identities plus the fused-vs-unfused comparison.
    Fusion(CommonOpts),
    /// Print the weight tensor as JSON (nonzero entries only).
    DumpWeights(CommonOpts),
}

#[derive(Args, Clone, Default)]
struct CommonOpts {
    /// Asymmetry parameter of the higher-spin weights.
    #[arg(long)]
    q: Option<f64>,
    /// Spectral parameter.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// Vertical line capacity.
    #[arg(long = "I")]
    cap_i: Option<u32>,
    /// Horizontal line capacity.
    #[arg(long = "J")]
    cap_j: Option<u32>,
    /// Stay probability of the spin-1/2 dynamics.
    #[arg(long)]
    b1: Option<f64>,
    /// Continue probability of a travelling line.
    #[arg(long)]
    b2: Option<f64>,
    /// Window length in sites.
    #[arg(long)]
    length: Option<u32>,
    /// Lattice coordinate of the leftmost window site.
    #[arg(long, allow_hyphen_values = true)]
    offset: Option<i64>,
    /// Monte Carlo replica count.
    #[arg(long)]
    replicas: Option<u64>,
    /// Number of update steps.
    #[arg(long)]
    steps: Option<u32>,
    /// Burn-in steps before measuring.
    #[arg(long = "burn-in")]
    burn_in: Option<u32>,
    /// Master seed (64-bit).
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key=value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Initial measure as inline JSON, e.g. '{"kind":"bernoulli_product","rho":0.5}'.
    #[arg(long)]
    measure: Option<String>,
    /// Dynamics for `simulate`: plain, shifted, unfused or fused.
    #[arg(long)]
    dynamics: Option<String>,
}

/// Usage/config problems exit with 2; failed checks exit with 1.
enum CliError {
    Usage(String),
    ChecksFailed(String),
}

impl CliError {
    fn emit(&self) -> ExitCode {
        let (kind, message, code) = match self {
            CliError::Usage(m) => ("config", m, 2),
            CliError::ChecksFailed(m) => ("check", m, 1),
        };
        eprintln!(
            "{}",
            serde_json::json!({ "error": { "kind": kind, "message": message } })
        );
        ExitCode::from(code)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

/// Resolved run configuration after merging flags over config-file values.
struct RunConfig {
    q: f64,
    alpha: f64,
    cap_i: u32,
    cap_j: u32,
    b1: Option<f64>,
    b2: Option<f64>,
    length: u32,
    offset: i64,
    replicas: u64,
    steps: u32,
    burn_in: u32,
    seed: u64,
    out: Option<PathBuf>,
    measure: Option<String>,
    dynamics: String,
}

fn parse_config_file(path: &PathBuf) -> CliResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {} is not key=value", lineno + 1)))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn merge(opts: &CommonOpts) -> CliResult<RunConfig> {
    let file = match &opts.config {
        Some(path) => parse_config_file(path)?,
        None => BTreeMap::new(),
    };
    fn pick<T: std::str::FromStr>(
        flag: Option<T>,
        file: &BTreeMap<String, String>,
        key: &str,
        default: T,
    ) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match file.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|e| usage(format!("config key {key}: {e}"))),
            None => Ok(default),
        }
    }
    Ok(RunConfig {
        q: pick(opts.q, &file, "q", 2.0)?,
        alpha: pick(opts.alpha, &file, "alpha", -0.25)?,
        cap_i: pick(opts.cap_i, &file, "I", 1)?,
        cap_j: pick(opts.cap_j, &file, "J", 1)?,
        b1: match opts.b1 {
            Some(v) => Some(v),
            None => file.get("b1").map(|s| s.parse()).transpose().map_err(usage)?,
        },
        b2: match opts.b2 {
            Some(v) => Some(v),
            None => file.get("b2").map(|s| s.parse()).transpose().map_err(usage)?,
        },
        length: pick(opts.length, &file, "length", 32)?,
        offset: pick(opts.offset, &file, "offset", -16)?,
        replicas: pick(opts.replicas, &file, "replicas", 20_000)?,
        steps: pick(opts.steps, &file, "steps", 10)?,
        burn_in: pick(opts.burn_in, &file, "burn_in", 100)?,
        seed: pick(opts.seed, &file, "seed", 0x5e6e_d001)?,
        out: opts.out.clone().or_else(|| file.get("out").map(PathBuf::from)),
        measure: opts.measure.clone().or_else(|| file.get("measure").cloned()),
        dynamics: opts
            .dynamics
            .clone()
            .or_else(|| file.get("dynamics").cloned())
            .unwrap_or_else(|| "plain".into()),
    })
}

impl RunConfig {
    /// Spin-1/2 parameters: explicit `b1`/`b2` win, otherwise the closed
    /// forms at `(q, alpha)`.
    fn spin_half(&self) -> CliResult<SixVertexParams> {
        match (self.b1, self.b2) {
            (Some(b1), Some(b2)) => SixVertexParams::new(b1, b2).map_err(usage),
            (None, None) => {
                let params = self.model_params()?;
                Ok(b_field(0, 0, &params))
            }
            _ => Err(usage("provide both --b1 and --b2, or neither")),
        }
    }

    fn model_params(&self) -> CliResult<ModelParams> {
        ModelParams::new(self.q, self.alpha, self.cap_i, self.cap_j).map_err(usage)
    }

    fn measure_spec(&self) -> CliResult<MeasureSpec> {
        let spec = match &self.measure {
            Some(raw) => serde_json::from_str::<MeasureSpec>(raw)
                .map_err(|e| usage(format!("measure JSON: {e}")))?,
            None => MeasureSpec::BernoulliProduct { rho: 0.5 },
        };
        spec.validate().map_err(usage)?;
        Ok(spec)
    }

    fn write_output(&self, body: &str) -> CliResult<()> {
        match &self.out {
            Some(path) => std::fs::write(path, body)
                .map_err(|e| usage(format!("cannot write {}: {e}", path.display()))),
            None => {
                println!("{body}");
                Ok(())
            }
        }
    }

    fn as_json(&self) -> serde_json::Value {
        serde_json::json!({
            "q": self.q, "alpha": self.alpha, "I": self.cap_i, "J": self.cap_j,
            "b1": self.b1, "b2": self.b2, "length": self.length, "offset": self.offset,
            "replicas": self.replicas, "steps": self.steps, "burn_in": self.burn_in,
            "seed": self.seed,
        })
    }
}

fn residual_table(reports: &[ResidualReport]) -> String {
    let mut table = format!(
        "{:<52} {:>14} {:>10} {:>6}\n",
        "check", "residual", "tol", "pass"
    );
    for r in reports {
        table.push_str(&format!(
            "{:<52} {:>14.3e} {:>10.0e} {:>6}\n",
            r.name,
            r.max_abs_residual,
            r.tolerance,
            if r.pass { "yes" } else { "NO" }
        ));
    }
    table
}

fn estimator_table(reports: &[EstimatorReport]) -> String {
    let mut table = format!(
        "{:<64} {:>11} {:>10} {:>8} {:>8}\n",
        "estimate", "value", "stderr", "z", "pass"
    );
    for r in reports {
        table.push_str(&format!(
            "{:<64} {:>11.5} {:>10.2e} {:>8.2} {:>8}\n",
            r.name,
            r.estimate,
            r.stderr,
            r.z_score,
            if r.passed() { "yes" } else { "NO" }
        ));
    }
    table
}

fn run_verify(cfg: &RunConfig) -> CliResult<()> {
    let reports = default_verification_suite().map_err(usage)?;
    let pass = reports.iter().all(|r| r.pass);
    let body = serde_json::json!({
        "config": cfg.as_json(),
        "reports": reports,
        "pass": pass,
    });
    cfg.write_output(&serde_json::to_string_pretty(&body).unwrap())?;
    eprint!("{}", residual_table(&reports));
    if pass {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(format!(
            "{} of {} exact checks failed",
            reports.iter().filter(|r| !r.pass).count(),
            reports.len()
        )))
    }
}

fn run_dump_weights(cfg: &RunConfig) -> CliResult<()> {
    let params = cfg.model_params()?;
    let tensor = build_l_tensor(&params).map_err(usage)?;
    let body = tensor.dump_json(params.q, params.alpha);
    cfg.write_output(&serde_json::to_string_pretty(&body).unwrap())
}

fn run_simulate(cfg: &RunConfig) -> CliResult<()> {
    let spec = cfg.measure_spec()?;
    let field = RandomField::new(cfg.seed, 0);
    let mut init = field.substream(u32::MAX, 0, 7);
    let mut window =
        sample_window(&spec, cfg.offset, cfg.length as usize, &mut init).map_err(usage)?;
    let mut frame = FrameState::shifted_start();
    let mut lines = Vec::with_capacity(cfg.steps as usize);

    for t in 0..cfg.steps {
        let record = match cfg.dynamics.as_str() {
            "plain" | "shifted" => {
                let p = cfg.spin_half()?;
                let zeta = match spec {
                    MeasureSpec::BernoulliProduct { .. } | MeasureSpec::Blocking { .. } => {
                        boundary_current_law(&spec, &p, window.offset, i64::from(t))
                            .map_err(usage)?
                    }
                    _ => 0.0,
                };
                let mut draws = FieldDraws::class1(&field, t);
                let rec = s6v_core::dynamics::s6v_step_window(&window, &p, zeta, &mut draws)
                    .map_err(usage)?;
                if cfg.dynamics == "shifted" {
                    shifted_step(rec, &mut frame)
                } else {
                    rec
                }
            }
            "unfused" => {
                let params = cfg.model_params()?;
                let zeta = match spec {
                    MeasureSpec::Inhomogeneous { rho, .. } => {
                        inhomogeneous_boundary_law(&params, rho, t)
                    }
                    _ => 0.0,
                };
                let mut draws = FieldDraws::class1(&field, t);
                s6v_core::dynamics::unfused_step(&window, t, &params, zeta, &mut draws)
                    .map_err(usage)?
            }
            "fused" => {
                let params = cfg.model_params()?;
                let tensor = build_l_tensor(&params).map_err(usage)?;
                s6v_core::dynamics::shs6v_step(&window, t, &tensor, 0, &field).map_err(usage)?
            }
            other => return Err(usage(format!("unknown dynamics `{other}`"))),
        };
        window = record.next.clone();
        lines.push(record.to_json_line(t + 1, &field.seed_path(t)).to_string());
    }

    let body = lines.join("\n");
    cfg.write_output(&body)
}

fn run_fusion(cfg: &RunConfig) -> CliResult<()> {
    let params = cfg.model_params()?;
    let mut reports = Vec::new();
    reports.push(fusion_identity_check(&params).map_err(usage)?);
    reports.push(column_fusion_check(&params).map_err(usage)?);
    reports.push(reflection_check(&params).map_err(usage)?);
    reports.push(qexchangeability_check(&params).map_err(usage)?);
    let exact_pass = reports.iter().all(|r| r.pass);

    let plan = ReplicaPlan {
        replicas: cfg.replicas,
        steps: 1,
        burn_in: 0,
        master_seed: cfg.seed,
        offset: 0,
        length: 1,
    };
    let mc_report =
        fused_unfused_compare_mc(&params, &[2u8.min(cfg.cap_i as u8), 1], 1, &plan)
            .map_err(usage)?;
    let pass = exact_pass && mc_report.passed();

    let body = serde_json::json!({
        "config": cfg.as_json(),
        "exact": reports,
        "monte_carlo": mc_report,
        "pass": pass,
    });
    cfg.write_output(&serde_json::to_string_pretty(&body).unwrap())?;
    eprint!("{}", residual_table(&reports));
    eprint!("{}", estimator_table(std::slice::from_ref(&mc_report)));
    if pass {
        Ok(())
    } else {
        Err(CliError::ChecksFailed("a fusion check failed".into()))
    }
}

fn run_mc(cfg: &RunConfig) -> CliResult<()> {
    let p = cfg.spin_half()?;
    let q = p.q();
    let mut all: Vec<EstimatorReport> = Vec::new();
    let mut sections: Vec<(String, usize)> = Vec::new();

    let base_plan = ReplicaPlan {
        replicas: cfg.replicas,
        steps: cfg.steps,
        burn_in: cfg.burn_in,
        master_seed: cfg.seed,
        offset: cfg.offset,
        length: cfg.length,
    };

    // product stationarity
    let spec = MeasureSpec::BernoulliProduct { rho: 0.5 };
    let reports = stationarity_mc(&spec, &DynamicsKind::Plain(p), &base_plan).map_err(usage)?;
    sections.push(("product stationarity".into(), reports.len()));
    all.extend(reports);

    if (q - 1.0).abs() > 1e-9 {
        // moving-frame blocking stationarity
        let spec = MeasureSpec::Blocking { q, t: 0 };
        let reports =
            stationarity_mc(&spec, &DynamicsKind::Shifted(p), &base_plan).map_err(usage)?;
        sections.push(("moving-frame blocking stationarity".into(), reports.len()));
        all.extend(reports);

        // crossing law under the blocking profile
        let lo = cfg.offset.min(-20);
        let plan = ReplicaPlan { offset: lo, length: (-lo as u32) + 16, ..base_plan };
        let reports = current_law_mc(q, 0, &p, &[-2, -1, 0, 1, 2], &plan).map_err(usage)?;
        sections.push(("crossing law".into(), reports.len()));
        all.extend(reports);
    }

    // discrepancy density decay
    let plan = ReplicaPlan {
        replicas: cfg.replicas.min(20_000),
        offset: -220,
        length: 261,
        ..base_plan
    };
    let reports = phi_decay_mc(0.5, &p, 50, &plan).map_err(usage)?;
    sections.push(("discrepancy density decay".into(), reports.len()));
    all.extend(reports);

    // second-class displacement tail
    let plan = ReplicaPlan { offset: -40, length: 70, ..base_plan };
    let reports = second_class_tail_mc(&p, 0.4, 8, &plan).map_err(usage)?;
    sections.push(("second-class displacement tail".into(), reports.len()));
    all.extend(reports);

    if q > 1.0 {
        // step-profile convergence to the projected blocking profile
        let plan = ReplicaPlan { replicas: cfg.replicas.min(20_000), ..base_plan };
        let reports = blocking_convergence_mc(q, &p, 0, 10, &plan).map_err(usage)?;
        sections.push(("profile convergence".into(), reports.len()));
        all.extend(reports);
    }

    // hard-assertion coupled run
    let plan = ReplicaPlan {
        replicas: 300,
        steps: 40,
        offset: -30,
        length: 61,
        ..base_plan
    };
    let summary = coupled_assertions_mc(&p, 0.5, &plan).map_err(usage)?;

    let pass = all.iter().all(|r| r.passed());
    let body = serde_json::json!({
        "config": cfg.as_json(),
        "sections": sections.iter().map(|(n, c)| serde_json::json!({"name": n, "reports": c})).collect::<Vec<_>>(),
        "reports": all,
        "coupled_hard_assertions": summary,
        "pass": pass,
    });
    cfg.write_output(&serde_json::to_string_pretty(&body).unwrap())?;
    eprint!("{}", estimator_table(&all));

    // CSV of per-site estimates for plotting
    if let Some(out) = &cfg.out {
        let csv_path = out.with_extension("csv");
        let mut csv = String::from("name,estimate,stderr,z\n");
        for r in &all {
            csv.push_str(&format!(
                "\"{}\",{},{},{}\n",
                r.name, r.estimate, r.stderr, r.z_score
            ));
        }
        std::fs::write(&csv_path, csv)
            .map_err(|e| usage(format!("cannot write {}: {e}", csv_path.display())))?;
    }

    if pass {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(format!(
            "{} of {} statistical checks failed",
            all.iter().filter(|r| !r.passed()).count(),
            all.len()
        )))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (opts, runner): (&CommonOpts, fn(&RunConfig) -> CliResult<()>) = match &cli.command {
        Command::Verify(o) => (o, run_verify),
        Command::Simulate(o) => (o, run_simulate),
        Command::Mc(o) => (o, run_mc),
        Command::Fusion(o) => (o, run_fusion),
        Command::DumpWeights(o) => (o, run_dump_weights),
    };
    let cfg = match merge(opts) {
        Ok(cfg) => cfg,
        Err(e) => return e.emit(),
    };
    match runner(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.emit(),
    }
}
