//! `hmflow`: runs flows, verifies the inequality certificates and extracts bubbles.
//!
//! Exit status: 0 when every certificate passed or was degenerate, not applicable or
//! record-only; 1 when at least one failed; 2 on errors (bad input, I/O, solver failure).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hmflow::artifacts::{load_run, simulate};
use hmflow::config::{override_key, Config};
use hmflow::corpus::{generate_corpus, Corpus};
use hmflow::flow::{FlowRun, State};
use hmflow::inequality::{
    barrier_window, check_flow_barriers, check_monotonicity_residuals, check_poincare_rdu, check_poincare_t,
    check_psi_integral_bound, fit_k, loj_certificate, Certificate, LojParams,
};
use hmflow::presets::{run_preset, PresetOptions, DEFAULT_SEED, LOJ_BETA, POINCARE_TAUS, PRESETS};
use hmflow::singularity::{bubbles_csv, check_oscillation_bound, energy_identity_check, oscillation_profile};
use hmflow::weighted::dyadic_annuli;
use hmflow::Grid;
use rayon::prelude::*;
use serde_json::json;

#[derive(Parser)]
#[command(name = "hmflow", version, about = "Harmonic map flow into S^2: simulation and verification")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Corpus seed.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Grid size override.
    #[arg(long = "grid-n", global = true)]
    grid_n: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the flow described by a TOML config and write a run directory.
    Simulate { config: PathBuf },
    /// Check one family of inequalities on the corpus or on a run directory.
    Verify {
        #[arg(value_enum)]
        kind: VerifyKind,
        /// `corpus`, a directory written by `hmflow corpus`, or a run directory.
        target: String,
    },
    /// Detect and extract bubbles from a run directory; prints bubbles.csv.
    Bubbles { run_dir: PathBuf },
    /// Rerun a config for each value of one key, e.g. --param init.lambda=0.05,0.1.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
    },
    /// Write the seeded corpus and its digests.
    Corpus,
    /// Run a named experiment; `list` prints the registry.
    Preset { name: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyKind {
    Poincare,
    Lojasiewicz,
    Monotonicity,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Simulate { config } => {
            let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = configure(&text, cli.grid_n)?;
            let out = out_dir(cli, "hmflow-run");
            let run = simulate(&cfg, base_dir(config), &out)?;
            println!(
                "t_final {} steps {} records {} stop {:?} -> {}",
                run.t_final,
                run.steps,
                run.records.len(),
                run.stop,
                out.display()
            );
            Ok(true)
        }
        Command::Verify { kind, target } => verify(cli, *kind, target),
        Command::Bubbles { run_dir } => bubbles(cli, run_dir),
        Command::Sweep { config, param } => sweep(cli, config, param),
        Command::Corpus => {
            let out = out_dir(cli, "hmflow-corpus");
            fs::create_dir_all(&out)?;
            let corpus = generate_corpus(cli.seed);
            let n = cli.grid_n.unwrap_or(512);
            let grid = Grid::new(8.0, n)?;
            let digests = corpus.digests(grid)?;
            let mut csv = format!("# grid L=8 N={n}\nname,provenance,digest\n");
            for (m, d) in corpus.members.iter().zip(&digests) {
                csv.push_str(&format!("{},{},{d}\n", m.name, m.provenance));
            }
            fs::write(out.join("corpus.json"), serde_json::to_string_pretty(&corpus)?)?;
            fs::write(out.join("digests.csv"), csv)?;
            println!("{} maps, seed {} -> {}", corpus.members.len(), cli.seed, out.display());
            Ok(true)
        }
        Command::Preset { name } => {
            if name == "list" {
                for p in PRESETS {
                    println!("{:<20} {}", p.name, p.doc);
                }
                return Ok(true);
            }
            let out = out_dir(cli, &format!("hmflow-{name}"));
            let opts = PresetOptions { grid_n: cli.grid_n, seed: cli.seed };
            let outcome = run_preset(name, &out, &opts)?;
            for c in &outcome.checks {
                println!("{} {:<26} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            for f in outcome.failures() {
                eprintln!("failed: {f}");
            }
            println!("artifacts in {}", out.display());
            Ok(outcome.ok())
        }
    }
}

fn base_dir(config: &Path) -> &Path {
    config.parent().unwrap_or(Path::new("."))
}

fn configure(text: &str, grid_n: Option<usize>) -> Result<Config> {
    let text = match grid_n {
        Some(n) => override_key(text, "grid.N", &n.to_string())?,
        None => text.to_string(),
    };
    Ok(Config::from_toml(&text)?)
}

enum Target {
    Corpus(Corpus),
    Run(Box<FlowRun>),
}

fn resolve_target(cli: &Cli, target: &str) -> Result<Target> {
    if target == "corpus" {
        return Ok(Target::Corpus(generate_corpus(cli.seed)));
    }
    let path = Path::new(target);
    if path.join("corpus.json").is_file() {
        let corpus: Corpus = serde_json::from_str(&fs::read_to_string(path.join("corpus.json"))?)?;
        return Ok(Target::Corpus(corpus));
    }
    if path.join("run.json").is_file() {
        return Ok(Target::Run(Box::new(load_run(path)?)));
    }
    bail!("{target} is neither `corpus`, a corpus directory nor a run directory")
}

fn report(certs: &[Certificate]) -> bool {
    let mut ok = true;
    for c in certs {
        let member = c.metadata.get("member").and_then(|v| v.as_str()).unwrap_or("");
        let tau = c.metadata.get("tau").map(|v| format!(" tau={v}")).unwrap_or_default();
        if !c.acceptable() {
            ok = false;
            println!("FAIL {} {member}{tau} ratio {:.4} ({:?})", c.inequality_id, c.ratio, c.status);
        }
    }
    let failed = certs.iter().filter(|c| !c.acceptable()).count();
    println!("{} certificates, {failed} failed", certs.len());
    ok
}

fn poincare_certs<M>(u: &M) -> Result<Vec<Certificate>>
where
    M: hmflow::weighted::Diagnosable + hmflow::digest::InputDigest + ?Sized,
{
    let mut out = Vec::new();
    for tau in POINCARE_TAUS {
        out.push(check_poincare_rdu(u, tau)?);
        out.push(check_poincare_t(u, tau)?);
    }
    Ok(out)
}

fn verify(cli: &Cli, kind: VerifyKind, target: &str) -> Result<bool> {
    let out = out_dir(cli, "hmflow-verify");
    fs::create_dir_all(&out)?;
    let target = resolve_target(cli, target)?;
    let grid = Grid::new(8.0, cli.grid_n.unwrap_or(512))?;
    let (certs, ok_extra): (Vec<Certificate>, bool) = match (kind, target) {
        (VerifyKind::Poincare, Target::Corpus(c)) => {
            let certs: Vec<Vec<Certificate>> = c
                .members
                .par_iter()
                .map(|m| {
                    let u = m.spec.build(grid)?;
                    Ok(poincare_certs(&u)?.into_iter().map(|c| c.meta("member", json!(m.name))).collect())
                })
                .collect::<Result<_>>()?;
            (certs.into_iter().flatten().collect(), true)
        }
        (VerifyKind::Poincare, Target::Run(run)) => {
            let certs = match &run.final_state {
                State::Field(u) => poincare_certs(u)?,
                State::Profile(p) => poincare_certs(p)?,
            };
            (certs, true)
        }
        (VerifyKind::Lojasiewicz, Target::Corpus(c)) => {
            let params = LojParams::new(3, LOJ_BETA)?;
            let certs = c
                .members
                .par_iter()
                .map(|m| Ok(loj_certificate(&m.spec.build(grid)?, &params)?.meta("member", json!(m.name))))
                .collect::<Result<Vec<_>>>()?;
            let large = certs
                .iter()
                .filter(|c| c.metadata.get("large_norm_regime").and_then(|v| v.as_bool()).unwrap_or(false))
                .count();
            println!("{large} maps outside the small-norm regime");
            (certs, true)
        }
        (VerifyKind::Lojasiewicz, Target::Run(run)) => {
            let k = ((run.config.e0.max(run.records.first().map(|r| r.energy).unwrap_or(0.0)))
                / (4.0 * std::f64::consts::PI))
                .ceil()
                .max(1.0) as u32;
            let mut params = LojParams::new(k, 0.0)?;
            params.e0 = run.config.e0;
            if let Some(w) = barrier_window(&run, &params) {
                params.big_k = fit_k(&w.records, params.alpha);
            }
            let barrier = check_flow_barriers(&run, &params)?;
            fs::write(out.join("barrier.json"), serde_json::to_string_pretty(&barrier)?)?;
            println!(
                "barrier {} (eps {:.4}, S {:.3}, K {:.3})",
                barrier.status, barrier.eps, barrier.big_s, barrier.big_k
            );
            let psi = check_psi_integral_bound(&run, &params, 0.5)?;
            (psi.certificates().into_iter().cloned().collect(), barrier.acceptable())
        }
        (VerifyKind::Monotonicity, Target::Run(run)) => {
            let m = check_monotonicity_residuals(&run);
            fs::write(out.join("monotonicity.json"), serde_json::to_string_pretty(&m)?)?;
            println!(
                "max |dPhi/dt + |T^|^2| {:.4e}, max |dPsi/dt + |rT^|^2| {:.4e}, Phi non-increasing {}",
                m.max_phi_residual, m.max_psi_residual, m.phi_non_increasing
            );
            (Vec::new(), m.phi_non_increasing)
        }
        (VerifyKind::Monotonicity, Target::Corpus(_)) => {
            bail!("monotonicity needs a run directory (the identities are along the flow)")
        }
    };
    fs::write(out.join("certificates.json"), serde_json::to_string_pretty(&certs)?)?;
    let ok = report(&certs) && ok_extra;
    Ok(ok)
}

fn bubbles(cli: &Cli, run_dir: &Path) -> Result<bool> {
    let run = load_run(run_dir).with_context(|| format!("loading run from {}", run_dir.display()))?;
    let out = cli.out.clone().unwrap_or_else(|| run_dir.to_path_buf());
    fs::create_dir_all(&out)?;
    let center = run.config.center;
    let mut ok = true;
    let bubbles = match energy_identity_check(&run, center, &[]) {
        Ok(ei) => {
            fs::write(out.join("energy_identity.csv"), ei.to_csv())?;
            eprintln!("energy identity gap {:.3e} (inconclusive: {})", ei.gap, ei.inconclusive);
            ei.bubbles
        }
        Err(hmflow::Error::InvalidParameter(msg)) => {
            eprintln!("no bubbles: {msg}");
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };
    let csv = bubbles_csv(&bubbles);
    fs::write(out.join("bubbles.csv"), &csv)?;
    print!("{csv}");

    let view = run.final_state.map_view();
    // dyadic annuli from the domain scale down to twice the resolution
    let annuli = dyadic_annuli(view.extent(), view.resolution(), 32);
    let profile = oscillation_profile(view, center, &annuli, run.t_final)?;
    let fit = if run.concentrated() {
        let mut params = LojParams::new(1, 0.0)?;
        params.e0 = run.config.e0;
        if let Some(w) = barrier_window(&run, &params) {
            params.big_k = fit_k(&w.records, params.alpha);
        }
        let fit = check_oscillation_bound(&run, &params)?;
        ok &= fit.pass;
        Some(fit)
    } else {
        None
    };
    let max_osc = profile.osc_values.iter().copied().fold(0.0, f64::max);
    eprintln!("oscillation over {} annuli, max {max_osc:.4e}", annuli.len());
    fs::write(out.join("oscillation.json"), serde_json::to_string_pretty(&json!({ "profile": profile, "fit": fit }))?)?;
    Ok(ok)
}

fn sweep(cli: &Cli, config: &Path, param: &str) -> Result<bool> {
    let (key, values) = param.split_once('=').context("--param expects key=v1,v2,...")?;
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        bail!("--param {key} has no values");
    }
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let out = out_dir(cli, "hmflow-sweep");
    fs::create_dir_all(&out)?;
    let rows: Vec<serde_json::Value> = values
        .par_iter()
        .map(|v| {
            let cfg = configure(&override_key(&text, key, v)?, cli.grid_n)?;
            let dir = out.join(format!("{key}={v}"));
            let run = simulate(&cfg, base_dir(config), &dir)?;
            let last = run.records.last();
            Ok(json!({
                "param": key,
                "value": v,
                "dir": dir,
                "t_final": run.t_final,
                "stop": run.stop,
                "energy": last.map(|r| r.energy),
            }))
        })
        .collect::<Result<_>>()?;
    let mut lines = String::new();
    for r in &rows {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    fs::write(out.join("sweep.jsonl"), &lines)?;
    print!("{lines}");
    Ok(true)
}
