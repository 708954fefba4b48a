//! Subcommand dispatch and file output for configuration-driven
//! experiments.
//!
//! Every output file embeds the resolved configuration and the tool version
//! in comment lines (CSV) or a `config` object (JSON), and numeric CSV
//! fields use 17 significant digits so files round-trip 64-bit floats
//! exactly: identical `(subcommand, config, seed)` produce byte-identical
//! files regardless of worker count.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::bbm;
use crate::config::{parse_config, Measure, RunConfig};
use crate::error::{Error, Result};
use crate::mc::{self, Model};
use crate::multitype;
use crate::outype;
use crate::trees::Label;

#[derive(Parser)]
#[command(
    name = "spinelab",
    version,
    about = "Additive martingales of branching diffusions: spectra, classification, simulation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the experiment configuration file.
    config: PathBuf,
    /// Override the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the replicate count from the configuration.
    #[arg(long)]
    reps: Option<u64>,
    /// Override the output path from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Spectral table (E_lambda, eigenvector or psi-pair, speed) over a
    /// lambda grid.
    Eigen(RunArgs),
    /// Classify the convergence regime at one (lambda, p).
    Classify(RunArgs),
    /// Verdict grid over (lambda, p) for phase-diagram plotting.
    Region(RunArgs),
    /// One simulation; snapshot CSV, plus a spine CSV under measure q.
    Simulate(RunArgs),
    /// Martingale mean or p-moment growth curve over a time grid.
    Martingale(RunArgs),
    /// Spine statistics, change-of-measure consistency and the
    /// spine-decomposition check, as one JSON report.
    SpineCheck(RunArgs),
    /// Left-most particle speed estimate.
    Lmp(RunArgs),
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    let (name, args) = match &cli.cmd {
        Cmd::Eigen(a) => ("eigen", a),
        Cmd::Classify(a) => ("classify", a),
        Cmd::Region(a) => ("region", a),
        Cmd::Simulate(a) => ("simulate", a),
        Cmd::Martingale(a) => ("martingale", a),
        Cmd::SpineCheck(a) => ("spine-check", a),
        Cmd::Lmp(a) => ("lmp", a),
    };
    match run(name, args) {
        Ok(path) => {
            println!("{name}: wrote {}", path.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(name: &str, args: &RunArgs) -> Result<PathBuf> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        upsert(&mut cfg.resolved, "seed", &seed.to_string());
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
        upsert(&mut cfg.resolved, "reps", &reps.to_string());
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
        upsert(&mut cfg.resolved, "out", &out.display().to_string());
    }
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output path: set 'out' or pass --out".into()))?;

    // SPINELAB_WORKERS caps replicate parallelism; results are identical
    // for any worker count, only wall time changes.
    let dispatch = || -> Result<()> {
        match name {
            "eigen" => eigen(&cfg, &out),
            "classify" => classify(&cfg, &out),
            "region" => region(&cfg, &out),
            "simulate" => simulate(&cfg, &out),
            "martingale" => martingale(&cfg, &out),
            "spine-check" => spine_check(&cfg, &out),
            "lmp" => lmp(&cfg, &out),
            _ => unreachable!(),
        }
    };
    match std::env::var("SPINELAB_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(workers) if workers >= 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(dispatch)?,
        _ => dispatch()?,
    }
    Ok(out)
}

fn upsert(resolved: &mut Vec<(String, String)>, key: &str, value: &str) {
    if let Some(slot) = resolved.iter_mut().find(|(k, _)| k == key) {
        slot.1 = value.to_string();
    } else {
        resolved.push((key.to_string(), value.to_string()));
        resolved.sort();
    }
}

/// 17 significant digits: exact round-trip for 64-bit floats.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn header_lines(cfg: &RunConfig, subcommand: &str) -> Vec<String> {
    let mut lines = vec![
        format!("# spinelab {}", env!("CARGO_PKG_VERSION")),
        format!("# subcommand = {subcommand}"),
    ];
    for (k, v) in &cfg.resolved {
        lines.push(format!("# {k} = {v}"));
    }
    lines
}

fn write_csv(
    path: &Path,
    header: &[String],
    columns: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut buf = String::new();
    for line in header {
        buf.push_str(line);
        buf.push('\n');
    }
    buf.push_str(&columns.join(","));
    buf.push('\n');
    for row in rows {
        buf.push_str(&row.join(","));
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: serde_json::Value) -> Result<()> {
    let mut file = fs::File::create(path)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    let text = serde_json::to_string_pretty(&value)
        .map_err(|e| Error::Config(format!("serialization: {e}")))?;
    file.write_all(text.as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn config_json(cfg: &RunConfig, subcommand: &str) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    for (k, v) in &cfg.resolved {
        map.insert(k.clone(), json!(v));
    }
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": subcommand,
        "config": serde_json::Value::Object(map),
    })
}

fn need_lambda(cfg: &RunConfig) -> Result<f64> {
    cfg.lambda
        .ok_or_else(|| Error::Config("this subcommand needs 'lambda'".into()))
}

fn need_t(cfg: &RunConfig) -> Result<f64> {
    cfg.t
        .ok_or_else(|| Error::Config("this subcommand needs 't'".into()))
}

fn settings(cfg: &RunConfig) -> mc::McSettings {
    mc::McSettings {
        cap: cfg.cap,
        step: cfg.step,
    }
}

fn eigen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let grid = cfg
        .lambda_grid
        .clone()
        .ok_or_else(|| Error::Config("eigen needs 'lambda_grid'".into()))?;
    let mut header = header_lines(cfg, "eigen");
    match &cfg.model {
        Model::Bbm(p) => {
            let tilde = bbm::bbm_spectral(p, -1.0)?.lambda_tilde;
            header.push(format!("# lambda_tilde = {}", fmt(tilde)));
            let mut rows = Vec::new();
            for &l in &grid {
                let s = bbm::bbm_spectral(p, l)?;
                rows.push(vec![
                    fmt(l),
                    fmt(s.e_lambda),
                    s.c_lambda.map(fmt).unwrap_or_default(),
                ]);
            }
            write_csv(out, &header, &["lambda", "e_lambda", "c_lambda"], &rows)
        }
        Model::Typed(p) => {
            let tilde = multitype::lambda_tilde_typed(p)?;
            header.push(format!("# lambda_tilde = {}", fmt(tilde)));
            let mut columns = vec!["lambda", "e_lambda", "e_prime", "c_lambda"];
            let names: Vec<String> = (1..=p.n()).map(|k| format!("v_{k}")).collect();
            columns.extend(names.iter().map(String::as_str));
            let mut rows = Vec::new();
            for &l in &grid {
                let s = multitype::typed_spectral(p, l)?;
                let mut row = vec![
                    fmt(l),
                    fmt(s.e_lambda),
                    fmt(s.e_prime),
                    s.c_lambda.map(fmt).unwrap_or_default(),
                ];
                row.extend(s.v_lambda.iter().map(|&v| fmt(v)));
                rows.push(row);
            }
            write_csv(out, &header, &columns, &rows)
        }
        Model::Ou(p) => {
            let tilde = outype::lambda_tilde_ou(p)?;
            header.push(format!("# lambda_tilde = {}", fmt(tilde)));
            let mut rows = Vec::new();
            for &l in &grid {
                let s = outype::ou_spectral(p, l)?;
                rows.push(vec![
                    fmt(l),
                    fmt(s.mu),
                    fmt(s.psi_minus),
                    fmt(s.psi_plus),
                    fmt(s.e_lambda),
                    fmt(s.c_lambda),
                ]);
            }
            write_csv(
                out,
                &header,
                &["lambda", "mu", "psi_minus", "psi_plus", "e_lambda", "c_lambda"],
                &rows,
            )
        }
    }
}

fn classify_model(model: &Model, lambda: f64, p: Option<f64>) -> Result<bbm::ConvergenceVerdict> {
    match model {
        Model::Bbm(m) => bbm::classify_bbm(m, lambda, p),
        Model::Typed(m) => multitype::classify_typed(m, lambda, p),
        Model::Ou(m) => outype::classify_ou(m, lambda, p),
    }
}

fn classify(cfg: &RunConfig, out: &Path) -> Result<()> {
    let lambda = need_lambda(cfg)?;
    let verdict = classify_model(&cfg.model, lambda, cfg.p)?;
    let mut doc = config_json(cfg, "classify");
    doc["model"] = json!(cfg.model.name());
    doc["lambda"] = json!(lambda);
    doc["p"] = json!(cfg.p);
    doc["verdict"] = json!(verdict.tag.to_string());
    doc["code"] = json!(verdict.code);
    doc["reason"] = json!(verdict.reason);
    write_json(out, doc)
}

fn region(cfg: &RunConfig, out: &Path) -> Result<()> {
    let lambdas = cfg
        .lambda_grid
        .clone()
        .ok_or_else(|| Error::Config("region needs 'lambda_grid'".into()))?;
    let ps = cfg
        .p_grid
        .clone()
        .ok_or_else(|| Error::Config("region needs 'p_grid'".into()))?;
    let header = header_lines(cfg, "region");
    let mut rows = Vec::new();
    for &l in &lambdas {
        for &p in &ps {
            let v = classify_model(&cfg.model, l, Some(p))?;
            rows.push(vec![fmt(l), fmt(p), v.tag.to_string(), v.code.to_string()]);
        }
    }
    write_csv(out, &header, &["lambda", "p", "verdict", "code"], &rows)
}

fn label_str(label: &Label) -> String {
    label.to_string()
}

fn snapshot_header<T>(mut header: Vec<String>, snap: &crate::trees::Snapshot<T>) -> Vec<String> {
    header.push(format!("# particles = {}", snap.len()));
    header.push(format!("# extinct = {}", snap.extinct()));
    header
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let t = need_t(cfg)?;
    let header = header_lines(cfg, "simulate");
    match (&cfg.model, cfg.measure) {
        (Model::Bbm(p), Measure::P) => {
            let snap = bbm::simulate_p_bbm(p, t, cfg.seed, cfg.cap)?;
            let rows: Vec<Vec<String>> = snap
                .particles
                .iter()
                .map(|q| vec![label_str(&q.label), fmt(q.position), fmt(q.birth_time)])
                .collect();
            let header = snapshot_header(header, &snap);
            write_csv(out, &header, &["label", "position", "birth_time"], &rows)
        }
        (Model::Bbm(p), Measure::Q) => {
            let lambda = need_lambda(cfg)?;
            let (snap, rec) = bbm::simulate_q_bbm(p, lambda, t, cfg.seed, cfg.cap)?;
            let rows: Vec<Vec<String>> = snap
                .particles
                .iter()
                .map(|q| vec![label_str(&q.label), fmt(q.position), fmt(q.birth_time)])
                .collect();
            let header = snapshot_header(header, &snap);
            write_csv(out, &header, &["label", "position", "birth_time"], &rows)?;
            let spine_rows: Vec<Vec<String>> = rec
                .fissions
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    vec![
                        (k + 1).to_string(),
                        fmt(f.time),
                        fmt(f.position),
                        f.extra_offspring.to_string(),
                    ]
                })
                .chain(std::iter::once(vec![
                    "terminal".to_string(),
                    fmt(rec.horizon),
                    fmt(rec.terminal_position),
                    label_str(&rec.terminal_label),
                ]))
                .collect();
            write_csv(
                &spine_path(out),
                &header,
                &["fission", "time", "position", "extra_offspring"],
                &spine_rows,
            )
        }
        (Model::Typed(p), Measure::P) => {
            let snap = multitype::simulate_p_typed(p, t, cfg.seed, cfg.cap)?;
            let rows: Vec<Vec<String>> = snap
                .particles
                .iter()
                .map(|q| {
                    vec![
                        label_str(&q.label),
                        fmt(q.position),
                        (q.type_value + 1).to_string(),
                        fmt(q.birth_time),
                    ]
                })
                .collect();
            let header = snapshot_header(header, &snap);
            write_csv(out, &header, &["label", "position", "type", "birth_time"], &rows)
        }
        (Model::Typed(p), Measure::Q) => {
            let lambda = need_lambda(cfg)?;
            let (snap, rec) = multitype::simulate_q_typed(p, lambda, t, cfg.seed, cfg.cap)?;
            let rows: Vec<Vec<String>> = snap
                .particles
                .iter()
                .map(|q| {
                    vec![
                        label_str(&q.label),
                        fmt(q.position),
                        (q.type_value + 1).to_string(),
                        fmt(q.birth_time),
                    ]
                })
                .collect();
            let header = snapshot_header(header, &snap);
            write_csv(out, &header, &["label", "position", "type", "birth_time"], &rows)?;
            let spine_rows: Vec<Vec<String>> = rec
                .fissions
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    vec![
                        (k + 1).to_string(),
                        fmt(f.time),
                        fmt(f.position),
                        (f.type_value + 1).to_string(),
                        f.extra_offspring.to_string(),
                    ]
                })
                .chain(std::iter::once(vec![
                    "terminal".to_string(),
                    fmt(rec.horizon),
                    fmt(rec.terminal_position),
                    (rec.terminal_type + 1).to_string(),
                    label_str(&rec.terminal_label),
                ]))
                .collect();
            write_csv(
                &spine_path(out),
                &header,
                &["fission", "time", "position", "type", "extra_offspring"],
                &spine_rows,
            )
        }
        (Model::Ou(p), Measure::P) => {
            let snap = outype::simulate_p_ou(p, t, cfg.step, cfg.seed, cfg.cap)?;
            let rows: Vec<Vec<String>> = snap
                .particles
                .iter()
                .map(|q| {
                    vec![
                        label_str(&q.label),
                        fmt(q.position),
                        fmt(q.type_value),
                        fmt(q.birth_time),
                    ]
                })
                .collect();
            let header = snapshot_header(header, &snap);
            write_csv(out, &header, &["label", "position", "type", "birth_time"], &rows)
        }
        (Model::Ou(p), Measure::Q) => {
            let lambda = need_lambda(cfg)?;
            let (snap, rec) = outype::simulate_q_ou(p, lambda, t, cfg.step, cfg.seed, cfg.cap)?;
            let rows: Vec<Vec<String>> = snap
                .particles
                .iter()
                .map(|q| {
                    vec![
                        label_str(&q.label),
                        fmt(q.position),
                        fmt(q.type_value),
                        fmt(q.birth_time),
                    ]
                })
                .collect();
            let header = snapshot_header(header, &snap);
            write_csv(out, &header, &["label", "position", "type", "birth_time"], &rows)?;
            let spine_rows: Vec<Vec<String>> = rec
                .fissions
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    vec![
                        (k + 1).to_string(),
                        fmt(f.time),
                        fmt(f.position),
                        fmt(f.type_value),
                        f.extra_offspring.to_string(),
                    ]
                })
                .chain(std::iter::once(vec![
                    "terminal".to_string(),
                    fmt(rec.horizon),
                    fmt(rec.terminal_position),
                    fmt(rec.terminal_type),
                    label_str(&rec.terminal_label),
                ]))
                .collect();
            write_csv(
                &spine_path(out),
                &header,
                &["fission", "time", "position", "type", "extra_offspring"],
                &spine_rows,
            )
        }
    }
}

fn spine_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".spine.csv");
    PathBuf::from(name)
}

fn martingale(cfg: &RunConfig, out: &Path) -> Result<()> {
    let lambda = need_lambda(cfg)?;
    let times = cfg
        .time_grid
        .clone()
        .ok_or_else(|| Error::Config("martingale needs 'time_grid'".into()))?;
    let mut header = header_lines(cfg, "martingale");
    let s = settings(cfg);
    let mut rows = Vec::new();
    match cfg.p {
        Some(p) => {
            let curve =
                mc::estimate_p_moment_curve(&cfg.model, lambda, p, &times, cfg.reps, cfg.seed, &s)?;
            header.push(format!("# log_slope = {}", fmt(curve.log_slope)));
            header.push(format!(
                "# log_slope_halfwidth = {}",
                fmt(curve.log_slope_halfwidth)
            ));
            for (i, est) in curve.values.iter().enumerate() {
                rows.push(vec![
                    fmt(curve.times[i]),
                    fmt(est.mean),
                    fmt(est.se),
                    est.n.to_string(),
                    if curve.unreliable[i] {
                        "UNRELIABLE".to_string()
                    } else {
                        String::new()
                    },
                ]);
            }
        }
        None => {
            for &t in &times {
                let est =
                    mc::estimate_martingale_mean(&cfg.model, lambda, t, cfg.reps, cfg.seed, &s)?;
                rows.push(vec![
                    fmt(t),
                    fmt(est.mean),
                    fmt(est.se),
                    est.n.to_string(),
                    if mc::high_relative_se(&est) {
                        "HIGH_SE".to_string()
                    } else {
                        String::new()
                    },
                ]);
            }
        }
    }
    write_csv(out, &header, &["time", "mean", "se", "n", "flag"], &rows)
}

fn spine_check(cfg: &RunConfig, out: &Path) -> Result<()> {
    let lambda = need_lambda(cfg)?;
    let t = need_t(cfg)?;
    let s = settings(cfg);
    let stats = mc::spine_statistics(&cfg.model, lambda, t, cfg.reps, cfg.seed, &s)?;
    let rn = mc::rn_consistency(&cfg.model, lambda, t, cfg.reps, cfg.seed, &s)?;
    let decomp = mc::spine_decomp_check(&cfg.model, lambda, t, cfg.subtree_reps, cfg.seed, &s)?;
    let mut doc = config_json(cfg, "spine-check");
    doc["spine_statistics"] = serde_json::to_value(&stats).unwrap();
    doc["rn_consistency"] = serde_json::to_value(&rn).unwrap();
    doc["spine_decomposition"] = serde_json::to_value(&decomp).unwrap();
    doc["all_within_three_se"] = json!(
        stats.all_within_three_se() && rn.z.abs() <= 3.0 && decomp.z.abs() <= 3.0
    );
    write_json(out, doc)
}

fn lmp(cfg: &RunConfig, out: &Path) -> Result<()> {
    let t = need_t(cfg)?;
    let s = settings(cfg);
    let est = mc::lmp_estimate(&cfg.model, t, cfg.reps, cfg.seed, &s)?;
    let mut doc = config_json(cfg, "lmp");
    doc["estimate"] = serde_json::to_value(est).unwrap();
    write_json(out, doc)
}
