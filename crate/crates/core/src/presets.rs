//! Named experiments. Each preset runs end to end, writes its artifacts into one directory
//! and reports a list of checks; `hmflow preset <name>` exits 0 iff every check passes and
//! every certificate is acceptable.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{simulate, write_run};
use crate::config::Config;
use crate::corpus::{generate_corpus, MapSpec};
use crate::error::{Error, Result};
use crate::field::make_bubble;
use crate::flow::{run, FlowConfig, FlowRun, State};
use crate::grid::Grid;
use crate::inequality::{
    barrier_window, check_flow_barriers, check_monotonicity_residuals, check_poincare_rdu, check_poincare_t,
    check_psi_integral_bound, fit_k, fitted_order, lambda_scale, loglog_slope, loj_certificate, Certificate, LojParams,
};
use crate::radial::{geometric_nodes, RadialProfile};
use crate::singularity::{body_map, bubbles_csv, check_oscillation_bound, check_rdu_bound, energy_identity_check};
use crate::vec3;
use crate::Rotation;

pub const DEFAULT_SEED: u64 = 2024;
pub const POINCARE_TAUS: [f64; 3] = [0.25, 1.0, 4.0];
pub const LOJ_LAMBDAS: [f64; 5] = [0.05, 0.0707, 0.1, 0.141, 0.2];
pub const LOJ_BETA: f64 = 0.1;
/// Radial grid ratio of the coarse Łojasiewicz sweep; the fine sweep uses its square root,
/// which doubles the node count.
pub const LOJ_RADIAL_RATIO: f64 = 1.02;
/// Allowed relative change of the Łojasiewicz constant under refinement.
pub const LOJ_CONSTANT_DRIFT: f64 = 0.2;
pub const LOJ_SLOPE_TOL: f64 = 0.2;
pub const MONOTONICITY_GRIDS: [usize; 3] = [65, 129, 257];
pub const MIN_ORDER: f64 = 0.9;
/// Energy identity gap and no-neck angle accepted by the blowup preset.
pub const ENERGY_GAP_TOL: f64 = 0.05;
pub const NO_NECK_ANGLE: f64 = 0.1;

pub struct ExperimentPreset {
    pub name: &'static str,
    /// The statement the preset exercises.
    pub doc: &'static str,
    pub checks: &'static [&'static str],
    pub artifacts: &'static [&'static str],
}

pub const PRESETS: &[ExperimentPreset] = &[
    ExperimentPreset {
        name: "poincare-corpus",
        doc: "Weighted Poincaré inequalities ‖r du‖_τ ≤ 2τ‖T̂‖_τ·(…) and ‖𝒯‖_τ ≤ 3‖T̂‖_τ on every corpus \
              map at τ ∈ {0.25, 1, 4}.",
        checks: &["poincare-rdu", "poincare-T"],
        artifacts: &["corpus.json", "poincare.csv", "certificates.json", "summary.json"],
    },
    ExperimentPreset {
        name: "loj-sweep",
        doc: "Łojasiewicz inequality |Φ₁ − 4πn| ≤ C‖T̂₁‖₁^{2−β}, β = 0.1, over degree-one bubbles of \
              shrinking scale, at two resolutions; also λ-scale against ‖T̂₁‖₁.",
        checks: &["loj-constant-stable", "lambda-scale-slope"],
        artifacts: &["loj.csv", "certificates.json", "summary.json"],
    },
    ExperimentPreset {
        name: "blowup-equivariant",
        doc: "Equivariant degree-one flow just above 4π: concentration, bubble extraction and the energy \
              identity, the flow barriers and ψ bounds, the oscillation decay on necks and the body map.",
        checks: &[
            "concentration-stop",
            "energy-identity",
            "single-degree-one-bubble",
            "psi-pointwise",
            "gronwall-barrier",
            "no-neck",
            "oscillation-fit",
        ],
        artifacts: &[
            "run/run.jsonl",
            "run/run.json",
            "run/config.echo",
            "run/final.sfld",
            "bubbles.csv",
            "energy_identity.csv",
            "energy_identity.json",
            "barrier.json",
            "oscillation.json",
            "body_map.json",
            "rdu.json",
            "certificates.json",
            "summary.json",
        ],
    },
    ExperimentPreset {
        name: "monotonicity",
        doc: "Monotonicity identities dΦ/dt = −‖T̂‖² and dΨ/dt = −‖rT̂‖² along a smooth sub-critical \
              flow, at three resolutions with h and dt refined together.",
        checks: &["phi-residual-order", "psi-residual-order", "phi-non-increasing"],
        artifacts: &["monotonicity.csv", "n<N>/run.jsonl", "summary.json"],
    },
];

pub fn find_preset(name: &str) -> Result<&'static ExperimentPreset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::InvalidParameter(format!("unknown preset {name:?}; available: {}", names.join(", ")))
    })
}

#[derive(Debug, Clone)]
pub struct PresetOptions {
    /// Overrides the preset's grid size where it has one.
    pub grid_n: Option<usize>,
    pub seed: u64,
}

impl Default for PresetOptions {
    fn default() -> Self {
        PresetOptions { grid_n: None, seed: DEFAULT_SEED }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckLine {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        CheckLine { name: name.into(), pass, detail }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PresetOutcome {
    pub preset: String,
    pub checks: Vec<CheckLine>,
    pub certificates: Vec<Certificate>,
}

impl PresetOutcome {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.pass) && self.certificates.iter().all(Certificate::acceptable)
    }

    /// Failed checks and unacceptable certificates, one per line.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> =
            self.checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {}", c.name, c.detail)).collect();
        out.extend(
            self.certificates
                .iter()
                .filter(|c| !c.acceptable())
                .map(|c| format!("{}: ratio {} ({:?})", c.inequality_id, c.ratio, c.status)),
        );
        out
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Runs a preset into `out` and writes `summary.json` there.
pub fn run_preset(name: &str, out: &Path, opts: &PresetOptions) -> Result<PresetOutcome> {
    let preset = find_preset(name)?;
    fs::create_dir_all(out)?;
    let (checks, certificates) = match preset.name {
        "poincare-corpus" => poincare_corpus(out, opts)?,
        "loj-sweep" => loj_sweep(out, opts)?,
        "blowup-equivariant" => blowup_equivariant(out)?,
        "monotonicity" => monotonicity(out, opts)?,
        _ => unreachable!("registry and dispatch disagree"),
    };
    write_json(&out.join("certificates.json"), &certificates)?;
    let outcome = PresetOutcome { preset: preset.name.into(), checks, certificates };
    write_json(
        &out.join("summary.json"),
        &json!({ "preset": preset.name, "doc": preset.doc, "ok": outcome.ok(), "checks": outcome.checks }),
    )?;
    Ok(outcome)
}

type Checked = (Vec<CheckLine>, Vec<Certificate>);

fn all_acceptable(certs: &[Certificate], id: &str) -> CheckLine {
    let mine: Vec<&Certificate> = certs.iter().filter(|c| c.inequality_id == id).collect();
    let bad = mine.iter().filter(|c| !c.acceptable()).count();
    let worst = mine.iter().map(|c| c.ratio).fold(0.0, f64::max);
    CheckLine::new(
        id,
        bad == 0 && !mine.is_empty(),
        format!("{} certificates, {bad} failed, worst ratio {worst:.4}", mine.len()),
    )
}

/// Poincaré certificates over the seeded corpus, on Grid(8, N), N = 512 unless overridden.
pub fn poincare_corpus_certificates(seed: u64, n: usize) -> Result<Vec<(String, Certificate)>> {
    let corpus = generate_corpus(seed);
    let grid = Grid::new(8.0, n)?;
    let per_member: Vec<Vec<(String, Certificate)>> = corpus
        .members
        .par_iter()
        .map(|m| {
            let u = m.spec.build(grid)?;
            let mut certs = Vec::new();
            for tau in POINCARE_TAUS {
                certs.push((m.name.clone(), check_poincare_rdu(&u, tau)?));
                certs.push((m.name.clone(), check_poincare_t(&u, tau)?));
            }
            Ok(certs)
        })
        .collect::<Result<_>>()?;
    Ok(per_member.into_iter().flatten().collect())
}

fn poincare_corpus(out: &Path, opts: &PresetOptions) -> Result<Checked> {
    let n = opts.grid_n.unwrap_or(512);
    write_json(&out.join("corpus.json"), &generate_corpus(opts.seed))?;
    let named = poincare_corpus_certificates(opts.seed, n)?;
    let mut csv = String::from("member,tau,inequality,lhs,rhs,ratio,status\n");
    for (name, c) in &named {
        let tau = c.metadata.get("tau").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
        csv.push_str(&format!("{name},{tau},{},{},{},{},{:?}\n", c.inequality_id, c.lhs, c.rhs, c.ratio, c.status));
    }
    fs::write(out.join("poincare.csv"), csv)?;
    let certs: Vec<Certificate> = named.into_iter().map(|(name, c)| c.meta("member", json!(name))).collect();
    let checks = vec![all_acceptable(&certs, "poincare-rdu"), all_acceptable(&certs, "poincare-T")];
    Ok((checks, certs))
}

#[derive(Debug, Clone, Serialize)]
pub struct LojRow {
    /// "radial:<ratio>" or "grid:<N>"
    pub representation: String,
    pub lambda: f64,
    pub phi1: f64,
    pub norm_that1: f64,
    pub ratio: f64,
    pub lambda_scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LojSweep {
    pub rows: Vec<LojRow>,
    /// Largest ratio at the coarse and the fine resolution.
    pub c_coarse: f64,
    pub c_fine: f64,
    pub relative_change: f64,
    /// log-log slope of λ-scale against ‖T̂₁‖₁ at the fine resolution.
    pub slope: f64,
    pub certificates: Vec<Certificate>,
}

/// Degree-one bubbles h = 2 atan(r/λ) on the radial grid (default), or on Grid(8, N) and
/// Grid(8, 2N) when `grid_n` is given. The 2-D grid needs λ/h well above 10 before the
/// discrete tension of an exact bubble drops below the continuum ‖T̂₁‖₁, so the radial
/// representation is the default for λ down to 0.05.
pub fn loj_sweep_table(grid_n: Option<usize>) -> Result<LojSweep> {
    let mut params = LojParams::new(3, LOJ_BETA)?;
    let levels: Vec<String> = match grid_n {
        None => vec![format!("radial:{LOJ_RADIAL_RATIO}"), format!("radial:{}", LOJ_RADIAL_RATIO.sqrt())],
        Some(n) => vec![format!("grid:{n}"), format!("grid:{}", 2 * n)],
    };
    let build = |level: &str, lambda: f64| -> Result<State> {
        let (kind, v) = level.split_once(':').expect("level label");
        if kind == "radial" {
            let nodes = geometric_nodes(8.0, 1e-5, v.parse().expect("ratio"))?;
            Ok(State::Profile(RadialProfile::from_fn(nodes, 1, |r| 2.0 * (r / lambda).atan())?))
        } else {
            let g = Grid::new(8.0, v.parse().expect("grid size"))?;
            Ok(State::Field(make_bubble(g, 1, lambda, [0.0, 0.0], &Rotation::identity())?))
        }
    };
    let certify = |u: &State, params: &LojParams| match u {
        State::Field(f) => loj_certificate(f, params),
        State::Profile(p) => loj_certificate(p, params),
    };
    let mut rows = Vec::new();
    let mut raw = Vec::new();
    for level in &levels {
        for lambda in LOJ_LAMBDAS {
            let u = build(level, lambda)?;
            let cert = certify(&u, &params)?;
            let that = cert.metadata["norm_That1"].as_f64().unwrap_or(f64::NAN);
            rows.push(LojRow {
                representation: level.clone(),
                lambda,
                phi1: cert.metadata["Phi1"].as_f64().unwrap_or(f64::NAN),
                norm_that1: that,
                ratio: cert.ratio,
                lambda_scale: lambda_scale(u.diagnosable(), params.eps0),
            });
            raw.push(u);
        }
    }
    let level_max = |lv: &str| rows.iter().filter(|r| r.representation == lv).map(|r| r.ratio).fold(0.0, f64::max);
    let c_coarse = level_max(&levels[0]);
    let c_fine = level_max(&levels[1]);
    let fine: Vec<&LojRow> = rows.iter().filter(|r| r.representation == levels[1]).collect();
    let slope = loglog_slope(
        &fine.iter().map(|r| r.norm_that1).collect::<Vec<_>>(),
        &fine.iter().map(|r| r.lambda_scale).collect::<Vec<_>>(),
    );
    // judge every map against the coarse constant with the allowed drift
    params.c_budget = Some(c_coarse * (1.0 + LOJ_CONSTANT_DRIFT));
    let mut certificates = Vec::new();
    for (u, row) in raw.iter().zip(&rows) {
        let c = certify(u, &params)?;
        certificates.push(c.meta("representation", json!(row.representation)).meta("lambda", json!(row.lambda)));
    }
    Ok(LojSweep { c_coarse, c_fine, relative_change: (c_fine - c_coarse).abs() / c_coarse, slope, rows, certificates })
}

fn loj_sweep(out: &Path, opts: &PresetOptions) -> Result<Checked> {
    let sweep = loj_sweep_table(opts.grid_n)?;
    let mut csv = String::from("representation,lambda,Phi1,norm_That1,ratio,lambda_scale\n");
    for r in &sweep.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.representation, r.lambda, r.phi1, r.norm_that1, r.ratio, r.lambda_scale
        ));
    }
    fs::write(out.join("loj.csv"), csv)?;
    let checks = vec![
        CheckLine::new(
            "loj-constant-stable",
            sweep.relative_change < LOJ_CONSTANT_DRIFT,
            format!("C {:.5} -> {:.5}, change {:.4}", sweep.c_coarse, sweep.c_fine, sweep.relative_change),
        ),
        CheckLine::new(
            "lambda-scale-slope",
            (sweep.slope - 1.0).abs() <= LOJ_SLOPE_TOL,
            format!("slope {:.4}", sweep.slope),
        ),
    ];
    Ok((checks, sweep.certificates))
}

/// Degree-one equivariant profile 1.1·2·atan(r/0.05), energy just above 4π, run to the
/// concentration stop and rerun centred on it.
pub fn blowup_config() -> Config {
    let text = format!(
        "[grid]\nL = 8.0\nN = 16\n\
         [flow]\nt_end = 2.0\ndiagnostic_stride = 50000\ntwo_pass = true\n\
         [diag]\nT1 = 2.0\nR = 1.0\nE0 = {}\nlog_spacing = 0.02\nsnapshot_every_record = true\n\
         [init]\nkind = \"equivariant\"\nm = 1\namplitude = 1.1\nlambda = 0.05\nrepresentation = \"radial\"\n\
         [radial]\nr_min = 8e-4\nratio = 1.02\n",
        4.0 * PI
    );
    Config::from_toml(&text).expect("static preset config")
}

fn angle_between(a: vec3::Vec3, b: vec3::Vec3) -> f64 {
    vec3::dot(a, b).clamp(-1.0, 1.0).acos()
}

fn blowup_equivariant(out: &Path) -> Result<Checked> {
    let cfg = blowup_config();
    let run_dir = out.join("run");
    let run = simulate(&cfg, &run_dir, &run_dir)?;
    analyze_blowup(&run, out)
}

/// The blowup checks on a finished run; artifacts go to `out`.
pub fn analyze_blowup(run: &FlowRun, out: &Path) -> Result<Checked> {
    fs::create_dir_all(out)?;
    let mut checks = Vec::new();
    let mut certs = Vec::new();
    let center = run.config.center;
    checks.push(CheckLine::new(
        "concentration-stop",
        run.concentrated(),
        format!("stop {:?} at t = {}", run.stop, run.t_final),
    ));

    let ei = energy_identity_check(run, center, &[])?;
    fs::write(out.join("energy_identity.csv"), ei.to_csv())?;
    fs::write(out.join("bubbles.csv"), bubbles_csv(&ei.bubbles))?;
    write_json(&out.join("energy_identity.json"), &ei)?;
    checks.push(CheckLine::new(
        "energy-identity",
        !ei.inconclusive && ei.gap < ENERGY_GAP_TOL,
        format!("gap {:.3e}, plateau radius {:?}, t {}", ei.gap, ei.plateau_radius, ei.t_last),
    ));
    let degrees: Vec<i64> = ei.bubbles.iter().map(|b| b.degree_estimate).collect();
    checks.push(CheckLine::new("single-degree-one-bubble", degrees == [1], format!("degrees {degrees:?}")));

    let mut params = LojParams::new(1, 0.0)?;
    params.e0 = run.config.e0;
    if let Some(w) = barrier_window(run, &params) {
        params.big_k = fit_k(&w.records, params.alpha);
    }
    let barrier = check_flow_barriers(run, &params)?;
    write_json(&out.join("barrier.json"), &barrier)?;
    checks.push(CheckLine::new(
        "gronwall-barrier",
        barrier.status == "pass",
        format!("status {}, eps {:.4}, S {:.3}, K {:.3}", barrier.status, barrier.eps, barrier.big_s, barrier.big_k),
    ));
    let psi = check_psi_integral_bound(run, &params, 0.5)?;
    checks.push(CheckLine::new(
        "psi-pointwise",
        psi.pointwise.acceptable(),
        format!("max psi/(4 delta) = {:.4}", psi.pointwise.lhs),
    ));
    certs.extend(psi.certificates().into_iter().cloned());

    let bm = body_map(run, center)?;
    write_json(
        &out.join("body_map.json"),
        &json!({
            "t": bm.t,
            "punctured_radius": bm.punctured_radius,
            "limit_value": bm.limit_value,
            "modulus": bm.modulus,
        }),
    )?;
    let angle = ei.bubbles.first().map(|b| angle_between(b.limit_value, bm.limit_value));
    checks.push(CheckLine::new(
        "no-neck",
        angle.is_some_and(|a| a <= NO_NECK_ANGLE),
        format!("angle between body-map and bubble limit values {angle:?}"),
    ));

    let fit = check_oscillation_bound(run, &params)?;
    write_json(&out.join("oscillation.json"), &fit)?;
    checks.push(CheckLine::new(
        "oscillation-fit",
        fit.branch == "holder" && fit.rows.len() >= 4 && fit.fitted_exponent.is_some_and(|e| e > 0.0) && fit.pass,
        format!("branch {}, exponent {:?}, {} annuli", fit.branch, fit.fitted_exponent, fit.rows.len()),
    ));
    write_json(&out.join("rdu.json"), &check_rdu_bound(run, 1.0, &[])?)?;
    Ok((checks, certs))
}

/// Smooth sub-critical field (energy about 0.75·4π) used for the monotonicity identities.
pub fn monotonicity_map() -> MapSpec {
    MapSpec::RandomSmooth {
        base: [0.0, 0.0, 1.0],
        modes: vec![
            ([1.0, 0.5], 0.6, 0.3, [1.0, 0.0, 0.0]),
            ([-0.7, 1.2], 0.5, 1.1, [0.0, 1.0, 0.0]),
            ([0.4, -0.9], 0.4, 2.0, [0.6, 0.0, 0.8]),
        ],
    }
}

/// Flow to t = 0.25 with T₁ = 1, R = 1, a record every 2 steps: dt ∝ h², so the record
/// spacing refines with the grid.
pub fn monotonicity_run(n: usize) -> Result<FlowRun> {
    let g = Grid::new(8.0, n)?;
    let mut c = FlowConfig::new(g, 0.25, 1.0, 1.0);
    c.diagnostic_stride = 2;
    run(&c, State::Field(monotonicity_map().build(g)?))
}

fn monotonicity(out: &Path, opts: &PresetOptions) -> Result<Checked> {
    let ns: Vec<usize> = match opts.grid_n {
        Some(n) => (0..3).map(|k| (n - 1) * (1 << k) + 1).collect(),
        None => MONOTONICITY_GRIDS.to_vec(),
    };
    let mut csv = String::from(
        "N,h,dt,max_phi_residual,max_psi_residual,max_phi_increase,increase_tolerance,phi_non_increasing\n",
    );
    let (mut hs, mut ep, mut es) = (Vec::new(), Vec::new(), Vec::new());
    let mut monotone = Vec::new();
    for n in ns {
        let run = monotonicity_run(n)?;
        write_run(&run, &out.join(format!("n{n}")))?;
        let m = check_monotonicity_residuals(&run);
        let h = run.final_state.diagnosable().resolution();
        csv.push_str(&format!(
            "{n},{h},{},{},{},{},{},{}\n",
            run.dt,
            m.max_phi_residual,
            m.max_psi_residual,
            m.max_phi_increase,
            m.increase_tolerance,
            m.phi_non_increasing
        ));
        hs.push(h);
        ep.push(m.max_phi_residual);
        es.push(m.max_psi_residual);
        monotone.push((n, m.phi_non_increasing));
    }
    fs::write(out.join("monotonicity.csv"), csv)?;
    let (po, so) = (fitted_order(&hs, &ep), fitted_order(&hs, &es));
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ");
    let checks = vec![
        CheckLine::new("phi-residual-order", po >= MIN_ORDER, format!("order {po:.3}, residuals [{}]", list(&ep))),
        CheckLine::new("psi-residual-order", so >= MIN_ORDER, format!("order {so:.3}, residuals [{}]", list(&es))),
        CheckLine::new("phi-non-increasing", monotone.iter().all(|(_, ok)| *ok), format!("{monotone:?}")),
    ];
    Ok((checks, Vec::new()))
}
