//! Acceptance checks, one line per criterion. Runs without the test harness so the lines
//! always print; exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hmflow::artifacts::load_run;
use hmflow::calculus::{dirichlet_energy, energy_first_variation};
use hmflow::config::Config;
use hmflow::corpus::generate_corpus;
use hmflow::field::{smooth_cutoff, BOUNDARY_RINGS};
use hmflow::flow::State;
use hmflow::inequality::{barrier_window, check_monotonicity_residuals, fit_k, fitted_order, LojParams, Status};
use hmflow::presets::{loj_sweep_table, monotonicity_run, poincare_corpus_certificates, MIN_ORDER, MONOTONICITY_GRIDS};
use hmflow::singularity::check_oscillation_bound;
use hmflow::snapshot;
use hmflow::vec3::{self, Vec3};
use hmflow::{make_bubble, Grid, Rotation, SphereField, VectorField3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_hmflow");

struct Outcome {
    pass: bool,
    detail: String,
}

fn line(id: usize, title: &str, elapsed: Duration, limit: Duration, outcome: Outcome) -> bool {
    let pass = outcome.pass && elapsed <= limit;
    println!(
        "[{}] criterion {id} {title}: {} ({:.1} s, limit {} s)",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let t0 = Instant::now();
    let o = f();
    (o, t0.elapsed())
}

fn energy_quantization() -> Outcome {
    let g = Grid::new(8.0, 1024).unwrap();
    let mut rel = Vec::new();
    for n in [1u32, 2] {
        let u = make_bubble(g, n, 0.1, [0.0, 0.0], &Rotation::identity()).unwrap();
        rel.push(dirichlet_energy(&u) / (4.0 * PI * n as f64) - 1.0);
    }
    Outcome {
        pass: rel.iter().all(|r| r.abs() < 0.01),
        detail: format!("E/(4 pi n) - 1 = {:.3e} (n=1), {:.3e} (n=2)", rel[0], rel[1]),
    }
}

/// Smooth random tangent field, zero on the pinned rings.
fn random_tangent(u: &SphereField, rng: &mut ChaCha8Rng) -> VectorField3 {
    let g = *u.grid();
    let l = g.half_width();
    let modes: Vec<([f64; 2], f64, Vec3)> = (0..3)
        .map(|_| {
            let k = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let d = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            (k, rng.gen_range(0.0..2.0 * PI), d)
        })
        .collect();
    let values = (0..g.len())
        .map(|idx| {
            let (i, j) = (idx % g.n(), idx / g.n());
            if g.ring(i, j) < BOUNDARY_RINGS {
                return [0.0; 3];
            }
            let x = g.position(i, j);
            let chi = smooth_cutoff(x[0].hypot(x[1]), 0.5 * l, 0.8 * l);
            let mut raw = [0.0; 3];
            for (k, ph, d) in &modes {
                raw = vec3::axpy(chi * (k[0] * x[0] + k[1] * x[1] + ph).cos(), *d, raw);
            }
            let p = u.at(i, j);
            vec3::axpy(-vec3::dot(raw, p), p, raw)
        })
        .collect();
    VectorField3 { grid: g, values }
}

fn gradient_check() -> Outcome {
    let g = Grid::new(8.0, 512).unwrap();
    let u = make_bubble(g, 1, 0.5, [0.3, -0.2], &Rotation::from_axis_angle([1.0, 1.0, 0.0], 0.4).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let eps = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let xi = random_tangent(&u, &mut rng);
        let energy_at = |e: f64| {
            let vals = u
                .values()
                .iter()
                .zip(&xi.values)
                .map(|(a, b)| vec3::normalize(vec3::axpy(e, *b, *a)).unwrap())
                .collect();
            dirichlet_energy(&SphereField::from_values(g, vals, u.boundary_value()).unwrap())
        };
        let fd = (energy_at(eps) - energy_at(-eps)) / (2.0 * eps);
        let exact = energy_first_variation(&u, &xi);
        worst = worst.max((fd - exact).abs() / exact.abs());
    }
    Outcome { pass: worst < 1e-4, detail: format!("worst relative error {worst:.3e} over 5 perturbations") }
}

fn poincare() -> Outcome {
    let certs = poincare_corpus_certificates(2024, 512).unwrap();
    let members = generate_corpus(2024).members.len();
    let bad: Vec<String> = certs
        .iter()
        .filter(|(_, c)| !(matches!(c.status, Status::Pass | Status::Degenerate) && c.ratio <= 1.05))
        .map(|(m, c)| format!("{m}/{}", c.inequality_id))
        .collect();
    let worst = certs.iter().map(|(_, c)| c.ratio).fold(0.0, f64::max);
    Outcome {
        pass: bad.is_empty() && members >= 30 && certs.len() == 6 * members,
        detail: format!("{} certificates on {members} maps, worst ratio {worst:.4}, failures {bad:?}", certs.len()),
    }
}

fn monotonicity() -> (Outcome, Duration) {
    let mut hs = Vec::new();
    let (mut ep, mut es) = (Vec::new(), Vec::new());
    let mut monotone = true;
    let mut slowest = Duration::ZERO;
    for n in MONOTONICITY_GRIDS {
        let t0 = Instant::now();
        let run = monotonicity_run(n).unwrap();
        let m = check_monotonicity_residuals(&run);
        slowest = slowest.max(t0.elapsed());
        hs.push(16.0 / (n - 1) as f64);
        ep.push(m.max_phi_residual);
        es.push(m.max_psi_residual);
        monotone &= m.phi_non_increasing;
    }
    let (po, so) = (fitted_order(&hs, &ep), fitted_order(&hs, &es));
    let decreasing = ep.windows(2).all(|w| w[1] < w[0]) && es.windows(2).all(|w| w[1] < w[0]);
    (
        Outcome {
            pass: po >= MIN_ORDER && so >= MIN_ORDER && decreasing && monotone,
            detail: format!("orders Phi {po:.3}, Psi {so:.3}; Phi non-increasing {monotone}"),
        },
        slowest,
    )
}

fn lojasiewicz() -> Outcome {
    let s = loj_sweep_table(None).unwrap();
    Outcome {
        pass: s.relative_change < 0.2 && (s.slope - 1.0).abs() <= 0.2,
        detail: format!(
            "C {:.4} -> {:.4} (change {:.2e}), lambda-scale slope {:.3}",
            s.c_coarse, s.c_fine, s.relative_change, s.slope
        ),
    }
}

fn checks_of(summary: &Value) -> Vec<(String, bool, String)> {
    summary["checks"]
        .as_array()
        .map(|a| {
            a.iter()
                .map(|c| {
                    (
                        c["name"].as_str().unwrap_or("").to_string(),
                        c["pass"].as_bool().unwrap_or(false),
                        c["detail"].as_str().unwrap_or("").to_string(),
                    )
                })
                .collect()
        })
        .unwrap_or_default()
}

fn blowup(dir: &Path) -> Outcome {
    let status =
        Command::new(BIN).args(["preset", "blowup-equivariant", "--out"]).arg(dir).output().expect("run hmflow");
    let summary: Value = match fs::read_to_string(dir.join("summary.json")) {
        Ok(s) => serde_json::from_str(&s).unwrap(),
        Err(e) => return Outcome { pass: false, detail: format!("no summary: {e}") },
    };
    let wanted = [
        "concentration-stop",
        "energy-identity",
        "single-degree-one-bubble",
        "psi-pointwise",
        "gronwall-barrier",
        "no-neck",
    ];
    let checks = checks_of(&summary);
    let failed: Vec<&String> =
        checks.iter().filter(|(n, p, _)| wanted.contains(&n.as_str()) && !p).map(|(n, _, _)| n).collect();
    let found = checks.iter().filter(|(n, _, _)| wanted.contains(&n.as_str())).count();
    let detail = |name: &str| checks.iter().find(|(n, _, _)| n == name).map(|c| c.2.clone()).unwrap_or_default();
    Outcome {
        pass: status.status.success() && failed.is_empty() && found == wanted.len(),
        detail: format!(
            "exit {:?}; energy identity: {}; barrier: {}; failed {failed:?}",
            status.status.code(),
            detail("energy-identity"),
            detail("gronwall-barrier")
        ),
    }
}

fn oscillation(blowup_dir: &Path, scratch: &Path) -> Outcome {
    // fit on the stored blowup run
    let run = match load_run(&blowup_dir.join("run")) {
        Ok(r) => r,
        Err(e) => return Outcome { pass: false, detail: format!("cannot load blowup run: {e}") },
    };
    let mut params = LojParams::new(1, 0.0).unwrap();
    params.e0 = run.config.e0;
    if let Some(w) = barrier_window(&run, &params) {
        params.big_k = fit_k(&w.records, params.alpha);
    }
    let fit = check_oscillation_bound(&run, &params).unwrap();
    let fit_ok = fit.branch == "holder" && fit.rows.len() >= 4 && fit.fitted_exponent.is_some_and(|e| e > 0.0);

    // constant map through the command line
    let cfg = scratch.join("constant.toml");
    fs::write(
        &cfg,
        "[grid]\nN = 65\n[flow]\nt_end = 0.1\n[init]\nkind = \"equivariant\"\namplitude = 0.0\nlambda = 1.0\nrepresentation = \"grid\"\n",
    )
    .unwrap();
    let run_dir = scratch.join("constant-run");
    let sim = Command::new(BIN).arg("simulate").arg(&cfg).arg("--out").arg(&run_dir).output().unwrap();
    let bub = Command::new(BIN).arg("bubbles").arg(&run_dir).output().unwrap();
    let osc: Value = fs::read_to_string(run_dir.join("oscillation.json"))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or(Value::Null);
    let values: Vec<f64> = osc["profile"]["osc_values"]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default();
    let constant_ok =
        sim.status.success() && bub.status.success() && !values.is_empty() && values.iter().all(|v| *v == 0.0);
    Outcome {
        pass: fit_ok && constant_ok,
        detail: format!(
            "branch {}, exponent {:?} on {} annuli; constant map: {} zero oscillations, exit {:?}",
            fit.branch,
            fit.fitted_exponent,
            fit.rows.len(),
            values.len(),
            bub.status.code()
        ),
    }
}

fn infrastructure(scratch: &Path) -> Outcome {
    let cfg = Config::from_toml(
        "[grid]\nN = 129\n[flow]\nt_end = 0.3\n[diag]\nT1 = 0.7\nE0 = 12.566370614359172\n[init]\nkind = \"bubble\"\nlambda = 0.1\nangle = 0.3\n",
    )
    .unwrap();
    let config_ok = Config::from_toml(&cfg.echo().unwrap()).unwrap() == cfg;

    let field = make_bubble(
        Grid::new(8.0, 257).unwrap(),
        2,
        0.3,
        [0.5, 0.1],
        &Rotation::from_axis_angle([0.2, 1.0, 0.3], 1.1).unwrap(),
    )
    .unwrap();
    let path = scratch.join(snapshot::file_name(0.1 + 0.2));
    snapshot::write(&path, &State::Field(field.clone()), Some(0.1 + 0.2)).unwrap();
    let back = snapshot::read(&path).unwrap();
    let bits = |u: &SphereField| u.values().iter().flat_map(|v| v.map(f64::to_bits)).collect::<Vec<u64>>();
    let snapshot_ok = matches!(&back.state, State::Field(u) if bits(u) == bits(&field)) && back.t == Some(0.1 + 0.2);

    let g = Grid::new(8.0, 257).unwrap();
    let digests_ok = generate_corpus(99).digests(g).unwrap() == generate_corpus(99).digests(g).unwrap();
    let mut files = Vec::new();
    for k in 0..2 {
        let out = scratch.join(format!("corpus-{k}"));
        let st =
            Command::new(BIN).args(["corpus", "--seed", "99", "--grid-n", "129", "--out"]).arg(&out).output().unwrap();
        files.push(st.status.success().then(|| fs::read_to_string(out.join("digests.csv")).unwrap_or_default()));
    }
    let cli_ok = files[0].is_some() && files[0] == files[1];
    Outcome {
        pass: config_ok && snapshot_ok && digests_ok && cli_ok,
        detail: format!(
            "config echo {config_ok}, snapshot bit-exact {snapshot_ok}, digests in-process {digests_ok}, digests via CLI {cli_ok}"
        ),
    }
}

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let blowup_dir = scratch.path().join("blowup");
    let mut all = true;
    let secs = Duration::from_secs;

    let (o, t) = timed(energy_quantization);
    all &= line(1, "energy quantization", t, secs(10), o);
    let (o, t) = timed(gradient_check);
    all &= line(2, "gradient check", t, secs(30), o);
    let (o, t) = timed(poincare);
    all &= line(3, "weighted Poincare on the corpus", t, secs(300), o);
    let (o, t) = monotonicity();
    all &= line(4, "monotonicity identities", t, secs(300), o);
    let (o, t) = timed(lojasiewicz);
    all &= line(5, "Lojasiewicz sweep", t, secs(300), o);
    let (o, t) = timed(|| blowup(&blowup_dir));
    all &= line(6, "blowup pipeline", t, secs(600), o);
    let (o, t) = timed(|| oscillation(&blowup_dir, scratch.path()));
    all &= line(7, "oscillation fits", t, secs(120), o);
    let (o, t) = timed(|| infrastructure(scratch.path()));
    all &= line(8, "infrastructure round-trips", t, secs(60), o);

    println!("acceptance: {}", if all { "all criteria pass" } else { "FAILURES" });
    if !all {
        std::process::exit(1);
    }
}
