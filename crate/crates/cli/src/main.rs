use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use coop2::certify::{self, CertificationReport, InvariantSetCert, InvariantSetOptions};
use coop2::mat3::Vec3;
use coop2::models::{ModelKind, ModelSpec, SystemModel};
use coop2::sim::{self, OrbitOptions, PeriodEstimate, Sampling, SolverOptions};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "coop2", version, about = "Certify and simulate 3D strongly 2-cooperative systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the hypotheses and build the invariant set; exit 0 certified,
    /// 2 refuted, 3 inconclusive.
    Certify(CertifyArgs),
    /// Integrate one trajectory and write it as CSV.
    Simulate(SimulateArgs),
    /// Certify (and detect the orbit) over a range of one parameter.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// `goodwin`, `field-noyes`, or a path to a JSON model file.
    #[arg(long)]
    model: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    f: Option<f64>,
    #[arg(long)]
    w: Option<f64>,
    /// Extra `name=value` parameter overrides (repeatable).
    #[arg(long = "set", value_name = "NAME=VALUE")]
    params: Vec<String>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Grid points per axis for the hypothesis checks.
    #[arg(long, default_value_t = 15)]
    grid_n: usize,
    /// Grid points per axis for the invariant-set constants.
    #[arg(long, default_value_t = 20)]
    invariant_grid_n: usize,
    /// `eta` as a fraction of `eta*`.
    #[arg(long, default_value_t = 0.5)]
    eta_fraction: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Initial state `x1,x2,x3`; defaults to the built-in example start.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 500.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-10)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-12)]
    atol: f64,
    /// Resample to this many equally spaced rows instead of one row per step.
    #[arg(long)]
    resample: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also estimate the orbit period over `[0, t_end]`.
    #[arg(long)]
    detect_orbit: bool,
    /// Destination of the period estimate JSON; defaults to
    /// `<output>.orbit.json`, or stderr when the CSV goes to stdout.
    #[arg(long)]
    orbit_output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Parameter to vary.
    #[arg(long)]
    param: String,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    /// Number of values, endpoints included.
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 9)]
    grid_n: usize,
    /// Horizon for orbit detection; 0 skips it.
    #[arg(long, default_value_t = 2000.0)]
    horizon: f64,
    /// Start for orbit detection; drawn from the box with `--seed` when absent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn example_params(name: &str) -> BTreeMap<String, f64> {
    let pairs: &[(&str, f64)] = match name {
        "goodwin" => &[("alpha", 0.5), ("beta", 0.4), ("gamma", 0.6), ("m", 10.0)],
        _ => &[("s", 0.3), ("q", 8.375e-6), ("f", 1.0), ("w", 0.2934)],
    };
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn example_start(kind: &ModelKind) -> Option<Vec3> {
    match kind {
        ModelKind::Goodwin(_) => Some(Vec3::repeat(0.1)),
        ModelKind::FieldNoyes(_) => Some(Vec3::new(732.2670, 9.9795, 732.2670)),
        ModelKind::Generic => None,
    }
}

impl ModelArgs {
    fn spec(&self) -> Result<ModelSpec> {
        let mut spec = match self.model.as_str() {
            "goodwin" | "field-noyes" => ModelSpec {
                name: self.model.clone(),
                builtin: Some(self.model.clone()),
                equations: None,
                params: example_params(&self.model),
                bounds: None,
                sign_certificate: None,
                signature: None,
            },
            path => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("cannot read model file '{path}'"))?;
                ModelSpec::from_json(&text).with_context(|| format!("invalid model file '{path}'"))?
            }
        };
        let named = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("m", self.m),
            ("s", self.s),
            ("q", self.q),
            ("f", self.f),
            ("w", self.w),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                spec.params.insert(k.to_string(), v);
            }
        }
        for p in &self.params {
            let (k, v) = p
                .split_once('=')
                .with_context(|| format!("--set expects NAME=VALUE, got '{p}'"))?;
            let v: f64 = v.trim().parse().with_context(|| format!("bad value in '{p}'"))?;
            spec.params.insert(k.trim().to_string(), v);
        }
        Ok(spec)
    }
}

fn kind_name(kind: &ModelKind) -> &'static str {
    match kind {
        ModelKind::Goodwin(_) => "goodwin",
        ModelKind::FieldNoyes(_) => "field-noyes",
        ModelKind::Generic => "custom",
    }
}

fn model_json(model: &SystemModel) -> serde_json::Value {
    json!({
        "name": model.name,
        "kind": kind_name(&model.kind),
        "box": model.bounds,
        "signature": model.signature,
        "sign_certificate": model.sign_certificate,
        "warnings": model.warnings,
    })
}

fn parse_x0(v: &Option<Vec<f64>>) -> Result<Option<Vec3>> {
    match v.as_deref() {
        None => Ok(None),
        Some(&[a, b, c]) => Ok(Some(Vec3::new(a, b, c))),
        Some(v) => bail!("--x0 needs three comma-separated values, got {}", v.len()),
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write '{}'", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Timing {
    check_theorem_ms: f64,
    invariant_set_ms: f64,
    total_ms: f64,
    threads: usize,
}

fn certify_model(
    model: &SystemModel,
    grid_n: usize,
    inv: &InvariantSetOptions,
) -> Result<(CertificationReport, std::result::Result<InvariantSetCert, String>, Timing)> {
    let t0 = Instant::now();
    let report = certify::check_theorem(model, grid_n)?;
    let t1 = Instant::now();
    let cert = if report.conclusion.is_certified() {
        certify::construct_invariant_set(model, &report, inv).map_err(|e| e.to_string())
    } else {
        Err("not certified".to_string())
    };
    let t2 = Instant::now();
    let timing = Timing {
        check_theorem_ms: (t1 - t0).as_secs_f64() * 1e3,
        invariant_set_ms: (t2 - t1).as_secs_f64() * 1e3,
        total_ms: (t2 - t0).as_secs_f64() * 1e3,
        threads: coop2::parallel::num_threads(),
    };
    Ok((report, cert, timing))
}

fn cmd_certify(a: &CertifyArgs) -> Result<i32> {
    let spec = a.model.spec()?;
    let model = spec.build()?;
    let inv = InvariantSetOptions {
        grid_n: a.invariant_grid_n,
        eta_fraction: a.eta_fraction,
    };
    let (report, cert, timing) = certify_model(&model, a.grid_n, &inv)?;
    let (invariant_set, invariant_error) = match cert {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e)),
    };
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "model": model_json(&model),
        "params": model.params,
        "certification": report,
        "invariant_set": invariant_set,
        "invariant_set_error": invariant_error,
        "timing": timing,
    });
    write_out(a.output.as_deref(), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    let code = report.conclusion.exit_code();
    eprintln!("{}: {}", model.name, conclusion_text(&report));
    Ok(code)
}

fn conclusion_text(r: &CertificationReport) -> String {
    match &r.conclusion {
        certify::Conclusion::Certified => "certified".into(),
        certify::Conclusion::Refuted(why) => format!("refuted ({why})"),
        certify::Conclusion::Inconclusive(why) => format!("inconclusive ({why})"),
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let model = a.model.spec()?.build()?;
    let x0 = parse_x0(&a.x0)?
        .or_else(|| example_start(&model.kind))
        .context("--x0 is required for custom models")?;
    let opts = SolverOptions::new(a.rtol, a.atol)?;
    let sampling = match a.resample {
        Some(n) => Sampling::Uniform(n),
        None => Sampling::Steps,
    };
    let tr = sim::integrate_with(&model, x0, a.t_end, &opts, sampling)?;
    if let Some(exit) = &tr.box_exit {
        eprintln!(
            "warning: trajectory left the box at t = {} (excursion {:.3e}); output truncated",
            exit.t, exit.excursion
        );
    }
    write_out(a.output.as_deref(), &tr.to_csv_string())?;
    if a.detect_orbit {
        let est = if a.t_end > 0.0 {
            let o = OrbitOptions {
                horizon: a.t_end,
                solver: opts,
                ..Default::default()
            };
            Some(sim::detect_orbit(&model, x0, &o)?)
        } else {
            None
        };
        let text = serde_json::to_string_pretty(&json!({
            "schema_version": SCHEMA_VERSION,
            "period_estimate": est,
        }))? + "\n";
        let dest = a.orbit_output.clone().or_else(|| {
            a.output.as_ref().map(|p| {
                let mut s = p.clone().into_os_string();
                s.push(".orbit.json");
                PathBuf::from(s)
            })
        });
        match dest {
            Some(p) => fs::write(&p, text).with_context(|| format!("cannot write '{}'", p.display()))?,
            None => eprint!("{text}"),
        }
    }
    Ok(0)
}

fn period_cell(est: &Option<PeriodEstimate>) -> String {
    match est {
        Some(e) if e.converged => format!("{}", e.period),
        _ => String::new(),
    }
}

fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    if a.steps == 0 {
        bail!("empty sweep: --steps must be at least 1");
    }
    if !(a.from.is_finite() && a.to.is_finite()) {
        bail!("sweep bounds must be finite");
    }
    let base = a.model.spec()?;
    if !base.params.contains_key(&a.param) {
        bail!("model has no parameter '{}'", a.param);
    }
    let values: Vec<f64> = (0..a.steps)
        .map(|i| {
            if a.steps == 1 {
                a.from
            } else {
                a.from + (a.to - a.from) * i as f64 / (a.steps - 1) as f64
            }
        })
        .collect();
    let mut csv = String::from("value,certified,conclusion,period\n");
    for v in values {
        let mut spec = base.clone();
        spec.params.insert(a.param.clone(), v);
        let model = spec.build()?;
        let report = certify::check_theorem(&model, a.grid_n)?;
        let status = match report.conclusion {
            certify::Conclusion::Certified => "certified",
            certify::Conclusion::Refuted(_) => "refuted",
            certify::Conclusion::Inconclusive(_) => "inconclusive",
        };
        let est = if report.conclusion.is_certified() && a.horizon > 0.0 {
            let x0 = match parse_x0(&a.x0)? {
                Some(x) => x,
                None => model.bounds.seeded_points(1, a.seed)[0],
            };
            let o = OrbitOptions {
                horizon: a.horizon,
                ..Default::default()
            };
            Some(sim::detect_orbit(&model, x0, &o)?)
        } else {
            None
        };
        csv.push_str(&format!(
            "{},{},{},{}\n",
            v,
            report.conclusion.is_certified(),
            status,
            period_cell(&est)
        ));
    }
    write_out(a.output.as_deref(), &csv)?;
    Ok(0)
}

fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Certify(a) => cmd_certify(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn example_params_build() {
        for name in ["goodwin", "field-noyes"] {
            assert!(coop2::models::builtin(name, &example_params(name)).is_ok());
        }
    }
}
