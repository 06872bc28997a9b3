//! Empirical certificates for the weighted Poincaré, Łojasiewicz and barrier inequalities.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::digest::{digest_numbers, InputDigest};
use crate::error::{Error, Result};
use crate::flow::FlowRun;
use crate::weighted::{Diagnosable, DiagnosticRecord, WeightedScale};

/// Base relative slack of the Poincaré certificates.
pub const POINCARE_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LojParams {
    /// Energy cap E ≤ 4πk.
    pub k: u32,
    pub beta: f64,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub big_k: f64,
    pub eps0: f64,
    pub e0: f64,
    /// Acceptance bound on the Łojasiewicz ratio, when one has been fitted.
    pub c_budget: Option<f64>,
}

impl LojParams {
    /// α = 2 − β, K = 1, ε₀ = 1, E₀ = 0.
    pub fn new(k: u32, beta: f64) -> Result<Self> {
        let p = LojParams { k, beta, alpha: 2.0 - beta, big_k: 1.0, eps0: 1.0, e0: 0.0, c_budget: None };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidParameter(format!("beta must lie in [0,1), got {}", self.beta)));
        }
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (1,2], got {}", self.alpha)));
        }
        if !(self.big_k >= 1.0) {
            return Err(Error::InvalidParameter(format!("K must be at least 1, got {}", self.big_k)));
        }
        if !(self.eps0 > 0.0) {
            return Err(Error::InvalidParameter("eps0 must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    /// Both sides vanish (e.g. constant maps).
    Degenerate,
    /// Preconditions of the inequality are not met; no judgment.
    NotApplicable,
    /// Outside the regime where the inequality is asserted; values recorded only.
    Recorded,
    /// Too few samples to evaluate.
    UnderSampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub inequality_id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub inputs_digest: String,
    pub pass: bool,
    pub status: Status,
    pub metadata: BTreeMap<String, Value>,
}

impl Certificate {
    /// Judged certificate: pass iff ratio ≤ 1 + tolerance.
    fn judged(id: &str, lhs: f64, rhs: f64, tolerance: f64, digest: String) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("tolerance".into(), json!(tolerance));
        if lhs == 0.0 && rhs == 0.0 {
            return Certificate {
                inequality_id: id.into(),
                lhs,
                rhs,
                ratio: 0.0,
                inputs_digest: digest,
                pass: true,
                status: Status::Degenerate,
                metadata,
            };
        }
        let ratio = if rhs > 0.0 { lhs / rhs } else { f64::INFINITY };
        let pass = ratio <= 1.0 + tolerance;
        Certificate {
            inequality_id: id.into(),
            lhs,
            rhs,
            ratio,
            inputs_digest: digest,
            pass,
            status: if pass { Status::Pass } else { Status::Fail },
            metadata,
        }
    }

    fn with_status(mut self, status: Status) -> Self {
        self.status = status;
        self.pass = false;
        self
    }

    pub fn meta(mut self, key: &str, value: Value) -> Self {
        self.metadata.insert(key.into(), value);
        self
    }

    /// Counts as success for exit codes: passed, degenerate, not applicable or record-only.
    pub fn acceptable(&self) -> bool {
        matches!(self.status, Status::Pass | Status::Degenerate | Status::NotApplicable | Status::Recorded)
    }

    pub fn tolerance(&self) -> f64 {
        self.metadata.get("tolerance").and_then(Value::as_f64).unwrap_or(0.0)
    }
}

fn poincare_common<M: Diagnosable + InputDigest + ?Sized>(
    u: &M,
    tau: f64,
    id: &str,
    pick: impl Fn(&crate::weighted::WeightedMoments) -> (f64, f64),
) -> Result<Certificate> {
    let scale = WeightedScale::new(tau)?;
    let mo = u.moments(&scale)?;
    let (lhs, rhs) = pick(&mo);
    let truncation = if lhs > 0.0 { mo.tail_bound.sqrt() / lhs } else { 0.0 };
    let tolerance = POINCARE_TOL + truncation;
    let mut digest_input = u.digest_hex();
    digest_input.push_str(&format!(":{tau:e}"));
    let mut cert = Certificate::judged(id, lhs, rhs, tolerance, digest_numbers(&digest_input, &[tau]));
    if rhs == 0.0 && lhs > 0.0 {
        cert = cert.meta("reason", json!("poincare-violation"));
    }
    let h = u.resolution();
    Ok(cert
        .meta("tau", json!(tau))
        .meta("resolution", json!(h))
        .meta("stencil_bound", json!(10.0 * h * h * u.max_gradient().powi(2)))
        .meta("tail_bound", json!(mo.tail_bound))
        .meta("full_accuracy", json!(mo.full_accuracy)))
}

/// ‖r du‖_τ ≤ 4τ ‖T̂_τ‖_τ.
pub fn check_poincare_rdu<M: Diagnosable + InputDigest + ?Sized>(u: &M, tau: f64) -> Result<Certificate> {
    poincare_common(u, tau, "poincare-rdu", |m| (m.norm_rdu, 4.0 * tau * m.norm_that))
}

/// ‖𝒯‖_τ ≤ 3 ‖T̂_τ‖_τ.
pub fn check_poincare_t<M: Diagnosable + InputDigest + ?Sized>(u: &M, tau: f64) -> Result<Certificate> {
    poincare_common(u, tau, "poincare-T", |m| (m.norm_t, 3.0 * m.norm_that))
}

/// Smallest node radius λ ∈ [0, 1] with ∫_{B₂∖B_λ} |du|² ≤ ε₀ (balls about the origin).
pub fn lambda_scale<M: Diagnosable + ?Sized>(u: &M, eps0: f64) -> f64 {
    let c = [0.0, 0.0];
    let outer = u.ball_energy(c, 2.0);
    let annulus = |lam: f64| 2.0 * (outer - u.ball_energy(c, lam));
    if annulus(0.0) <= eps0 {
        return 0.0;
    }
    let radii = u.node_radii(c, 1.0);
    // annulus energy is non-increasing in λ, so the admissible set is a suffix
    let idx = radii.partition_point(|&r| annulus(r) > eps0);
    radii.get(idx).copied().unwrap_or(1.0)
}

/// Quantization defect of Φ₁ against ‖T̂₁‖₁^{2−β}.
pub fn loj_certificate<M: Diagnosable + InputDigest + ?Sized>(u: &M, params: &LojParams) -> Result<Certificate> {
    params.validate()?;
    let energy = u.total_energy();
    let cap = 4.0 * PI * params.k as f64;
    if energy > cap * (1.0 + 1e-9) {
        return Err(Error::InvalidParameter(format!("total energy {energy} exceeds the cap 4*pi*k = {cap}")));
    }
    let mo = u.moments(&WeightedScale::new(1.0)?)?;
    let phi1 = mo.phi;
    let mut best = 0u32;
    let mut tie = false;
    for n in 1..=params.k {
        let d = (phi1 - 4.0 * PI * n as f64).abs();
        let b = (phi1 - 4.0 * PI * best as f64).abs();
        if d < b {
            best = n;
            tie = false;
        } else if d == b {
            tie = true;
        }
    }
    let lhs = (phi1 - 4.0 * PI * best as f64).abs();
    let that = mo.norm_that;
    let rhs = that.powf(2.0 - params.beta);
    let threshold = params.c_budget.unwrap_or(f64::INFINITY);
    let digest = digest_numbers(&u.digest_hex(), &[params.beta, params.k as f64]);
    let mut cert = Certificate::judged("lojasiewicz", lhs, rhs, threshold - 1.0, digest);
    let large = that * that > params.eps0;
    if cert.status != Status::Degenerate && (large || params.c_budget.is_none()) {
        cert = cert.with_status(Status::Recorded);
    }
    Ok(cert
        .meta("n", json!(best))
        .meta("Phi1", json!(phi1))
        .meta("norm_That1", json!(that))
        .meta("beta", json!(params.beta))
        .meta("tie", json!(tie))
        .meta("large_norm_regime", json!(large))
        .meta("tail_bound", json!(mo.tail_bound)))
}

/// ϕ(s) = (ε^{−(2−α)/α} + 2(2−α)s/(K²α))^{−α/(2−α)}, with the limit ε e^{−2s/K²} at α = 2.
pub fn gronwall_barrier(eps: f64, params: &LojParams, s: f64) -> Result<f64> {
    let a = params.alpha;
    if !(a > 1.0 && a <= 2.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (1,2], got {a}")));
    }
    if !(eps > 0.0) || s < 0.0 {
        return Err(Error::InvalidParameter(format!("need eps > 0 and s >= 0, got eps={eps}, s={s}")));
    }
    if s == 0.0 {
        return Ok(eps);
    }
    let k2 = params.big_k * params.big_k;
    if 2.0 - a < 1e-9 {
        return Ok(eps * (-2.0 * s / k2).exp());
    }
    let p = (2.0 - a) / a;
    Ok((eps.powf(-p) + 2.0 * (2.0 - a) * s / (k2 * a)).powf(-1.0 / p))
}

/// Records and scales (ε, S = log(R/λ)) on which the flow barriers are checked.
#[derive(Debug, Clone)]
pub struct BarrierWindow<'a> {
    pub records: Vec<&'a DiagnosticRecord>,
    pub eps: f64,
    pub big_s: f64,
    pub lambda: f64,
    /// S was cut short of the last usable record to keep ε ≤ ε₀.
    pub truncated: bool,
}

/// Chooses λ for the entry conditions φ(0) ≤ ε, φ(log R/λ) ≥ −ε with ε ≤ ε₀.
///
/// The whole usable run is taken when ε = max(φ(0), −φ(S_last)) is admissible. Otherwise
/// ε = ε₀ and S stops at the last record before φ first drops below −ε₀; any λ meeting the
/// entry conditions is allowed, and this is the smallest one the data supports. Returns None
/// when φ(0) > ε₀ or fewer than two records have s ≥ 0.
pub fn barrier_window<'a>(run: &'a FlowRun, params: &LojParams) -> Option<BarrierWindow<'a>> {
    let all: Vec<&DiagnosticRecord> = run.usable_records().filter(|r| r.s >= -1e-12).collect();
    if all.len() < 2 {
        return None;
    }
    let phi0 = interp_phi_at(&all, 0.0);
    if phi0 > params.eps0 {
        return None;
    }
    let last = all.last().unwrap();
    let eps_full = phi0.max(-last.phi).max(1e-12);
    let (records, eps, truncated) = if eps_full <= params.eps0 {
        (all, eps_full, false)
    } else {
        let cut = all.iter().position(|r| r.phi < -params.eps0).unwrap_or(all.len());
        (all[..cut].to_vec(), params.eps0, true)
    };
    if records.len() < 2 {
        return None;
    }
    let big_s = records.last().unwrap().s;
    Some(BarrierWindow { lambda: run.config.r * (-big_s).exp(), records, eps, big_s, truncated })
}

/// Smallest K ≥ 1 with |φ| ≤ (K δ)^α on the given records.
pub fn fit_k(records: &[&DiagnosticRecord], alpha: f64) -> f64 {
    records
        .iter()
        .map(|r| {
            let a = r.phi.abs().powf(1.0 / alpha);
            if a == 0.0 {
                0.0
            } else if r.delta > 0.0 {
                a / r.delta
            } else {
                f64::INFINITY
            }
        })
        .fold(1.0, f64::max)
}

fn interp_phi_at(records: &[&DiagnosticRecord], s: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    if s <= records[0].s {
        return records[0].phi;
    }
    for w in records.windows(2) {
        if s <= w[1].s {
            let t = (s - w[0].s) / (w[1].s - w[0].s);
            return w[0].phi + t * (w[1].phi - w[0].phi);
        }
    }
    records.last().unwrap().phi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierReport {
    /// "pass", "violation", "not-applicable" or "under-sampled".
    pub status: String,
    pub eps: f64,
    #[serde(rename = "S")]
    pub big_s: f64,
    pub lambda_run: f64,
    pub tol: f64,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub big_k: f64,
    /// min over records of ϕ(s) + tol − φ(s)
    pub worst_upper_margin: f64,
    /// min over records of φ(s) + ϕ(S − s) + tol
    pub worst_lower_margin: f64,
    pub records_checked: usize,
    pub truncated: bool,
    pub reason: String,
}

impl BarrierReport {
    pub fn acceptable(&self) -> bool {
        self.status == "pass" || self.status == "not-applicable"
    }
}

/// Geometric relative spacing of the graded radial grid, or h/λ_run on a uniform grid.
fn relative_resolution(run: &FlowRun, lambda_run: f64) -> f64 {
    match &run.final_state {
        crate::flow::State::Profile(p) => {
            let r = p.nodes();
            let k = r.len() / 2;
            (r[k + 1] - r[k]) / r[k]
        }
        crate::flow::State::Field(u) => u.grid().spacing() / lambda_run,
    }
}

/// Two-sided barrier −ϕ(S − s) − tol ≤ φ(s) ≤ ϕ(s) + tol along the run.
///
/// ε and S come from [`barrier_window`]; the check is not applicable when φ(0) > ε₀.
/// K comes from `params` (callers typically fit it with
/// [`fit_k`] on the same window).
pub fn check_flow_barriers(run: &FlowRun, params: &LojParams) -> Result<BarrierReport> {
    params.validate()?;
    let mut report = BarrierReport {
        status: "not-applicable".into(),
        eps: 0.0,
        big_s: 0.0,
        lambda_run: 0.0,
        tol: 0.0,
        alpha: params.alpha,
        big_k: params.big_k,
        worst_upper_margin: f64::INFINITY,
        worst_lower_margin: f64::INFINITY,
        records_checked: 0,
        truncated: false,
        reason: String::new(),
    };
    let usable = run.usable_records().filter(|r| r.s >= -1e-12).count();
    if usable < 2 {
        report.status = "under-sampled".into();
        report.reason = "fewer than two usable records with s >= 0".into();
        return Ok(report);
    }
    let Some(win) = barrier_window(run, params) else {
        report.reason = format!("entry condition unmet: phi(0) exceeds eps0 = {}", params.eps0);
        return Ok(report);
    };
    let recs = &win.records;
    let (eps, big_s, lambda_run) = (win.eps, win.big_s, win.lambda);
    let h_rel = relative_resolution(run, lambda_run);
    let scale = params.e0.max(1.0);
    let tol = 10.0 * h_rel * h_rel * scale + recs.iter().map(|r| r.tail_bound).fold(0.0, f64::max);
    report.eps = eps;
    report.big_s = big_s;
    report.lambda_run = lambda_run;
    report.tol = tol;
    report.truncated = win.truncated;
    if 2.0 * lambda_run > run.config.r {
        report.reason = "run too short: need 2 lambda <= R".into();
        return Ok(report);
    }
    let mut violation = String::new();
    for r in recs {
        let up = gronwall_barrier(eps, params, r.s.max(0.0))?;
        let down = gronwall_barrier(eps, params, (big_s - r.s).max(0.0))?;
        let mu = up + tol - r.phi;
        let ml = r.phi + down + tol;
        if mu < report.worst_upper_margin {
            report.worst_upper_margin = mu;
            if mu < 0.0 {
                violation =
                    format!("upper barrier violated at s = {} (phi = {}, barrier = {up}, tol = {tol})", r.s, r.phi);
            }
        }
        if ml < report.worst_lower_margin {
            report.worst_lower_margin = ml;
            if ml < 0.0 && violation.is_empty() {
                violation =
                    format!("lower barrier violated at s = {} (phi = {}, barrier = {down}, tol = {tol})", r.s, r.phi);
            }
        }
    }
    report.records_checked = recs.len();
    if report.worst_upper_margin >= 0.0 && report.worst_lower_margin >= 0.0 {
        report.status = "pass".into();
    } else {
        report.status = "violation".into();
        report.reason = violation;
    }
    Ok(report)
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiIntegralReport {
    /// ∫ψ ≤ 4∫δ over [s, S − s]
    pub psi_vs_delta: Certificate,
    /// 4∫δ ≤ 4Kα/(α−1) ϕ(s)^{(α−1)/α}
    pub delta_vs_barrier: Certificate,
    /// max over records of ψ/(4δ) ≤ 1 + 0.05
    pub pointwise: Certificate,
}

impl PsiIntegralReport {
    pub fn certificates(&self) -> [&Certificate; 3] {
        [&self.psi_vs_delta, &self.delta_vs_barrier, &self.pointwise]
    }
}

/// Integral bounds on ψ and δ over [s, S − s], using the barrier from [`check_flow_barriers`].
pub fn check_psi_integral_bound(run: &FlowRun, params: &LojParams, s: f64) -> Result<PsiIntegralReport> {
    let barrier = check_flow_barriers(run, params)?;
    let recs = barrier_window(run, params).map(|w| w.records).unwrap_or_default();
    let digest =
        digest_numbers("psi-integral", &recs.iter().flat_map(|r| [r.s, r.psi, r.delta, r.phi]).collect::<Vec<_>>());
    // pointwise ψ ≤ 4δ on every usable record (not restricted to the barrier window)
    let usable: Vec<&DiagnosticRecord> = run.usable_records().collect();
    let (mut worst, mut worst_t) = (0.0f64, f64::NAN);
    let mut degenerate = true;
    for r in &usable {
        if r.psi == 0.0 && r.delta == 0.0 {
            continue;
        }
        degenerate = false;
        let q = if r.delta > 0.0 { r.psi / (4.0 * r.delta) } else { f64::INFINITY };
        if q > worst {
            worst = q;
            worst_t = r.t;
        }
    }
    let pointwise = if degenerate {
        Certificate::judged("psi-pointwise", 0.0, 0.0, 0.05, digest.clone())
    } else {
        Certificate::judged("psi-pointwise", worst, 1.0, 0.05, digest.clone())
            .meta("worst_t", json!(worst_t))
            .meta("records", json!(usable.len()))
    };

    let big_s = barrier.big_s;
    let window: Vec<&&DiagnosticRecord> = recs.iter().filter(|r| r.s >= s && r.s <= big_s - s).collect();
    let xs: Vec<f64> = window.iter().map(|r| r.s).collect();
    let int_psi = trapezoid(&xs, &window.iter().map(|r| r.psi).collect::<Vec<_>>());
    let int_delta = trapezoid(&xs, &window.iter().map(|r| r.delta).collect::<Vec<_>>());
    let mut a = Certificate::judged("psi-integral-vs-delta", int_psi, 4.0 * int_delta, 0.05, digest.clone())
        .meta("s", json!(s))
        .meta("S", json!(big_s))
        .meta("samples", json!(window.len()));
    let alpha = params.alpha;
    let mut b = if barrier.status == "pass" || barrier.status == "violation" {
        let vphi = gronwall_barrier(barrier.eps, params, s)?;
        let pw = vphi.powf((alpha - 1.0) / alpha);
        let rhs = 4.0 * params.big_k * alpha / (alpha - 1.0) * pw;
        let printed = 8.0 * alpha / (alpha - 1.0) * pw;
        Certificate::judged("delta-integral-vs-barrier", 4.0 * int_delta, rhs, barrier.tol.max(0.05), digest)
            .meta("printed_rhs", json!(printed))
            .meta("printed_pass", json!(4.0 * int_delta <= printed))
            .meta("K", json!(params.big_k))
            .meta("eps", json!(barrier.eps))
    } else {
        Certificate::judged("delta-integral-vs-barrier", 4.0 * int_delta, 0.0, 0.0, digest)
            .with_status(Status::NotApplicable)
            .meta("reason", json!(barrier.reason.clone()))
    };
    if s > 0.5 * big_s {
        a = a.with_status(Status::NotApplicable).meta("reason", json!("s exceeds S/2"));
        b = b.with_status(Status::NotApplicable).meta("reason", json!("s exceeds S/2"));
    } else if window.len() < 8 {
        a = a.with_status(Status::UnderSampled);
        b = b.with_status(Status::UnderSampled);
    }
    Ok(PsiIntegralReport { psi_vs_delta: a, delta_vs_barrier: b, pointwise })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// |ΔΦ/Δt + ½(‖T̂‖²_k + ‖T̂‖²_{k+1})| per consecutive record pair
    pub phi_residuals: Vec<f64>,
    /// |ΔΨ/Δt + ½(‖rT̂‖²_k + ‖rT̂‖²_{k+1})|
    pub psi_residuals: Vec<f64>,
    pub times: Vec<f64>,
    pub max_phi_residual: f64,
    pub max_psi_residual: f64,
    pub mean_phi_residual: f64,
    pub mean_psi_residual: f64,
    /// Largest ΔΦ between consecutive records.
    pub max_phi_increase: f64,
    /// Allowed ΔΦ per record pair.
    pub increase_tolerance: f64,
    pub phi_non_increasing: bool,
}

/// Discrete form of dΦ/dt + ‖T̂‖² = 0 and dΨ/dt + ‖rT̂‖² = 0 along τ = T₁ − t.
pub fn check_monotonicity_residuals(run: &FlowRun) -> MonotonicityReport {
    let recs: Vec<&DiagnosticRecord> = run.usable_records().collect();
    let h = run.final_state.diagnosable().resolution();
    let energy_scale = recs.first().map(|r| r.energy).unwrap_or(0.0).max(1.0);
    let mut phi_res = Vec::new();
    let mut psi_res = Vec::new();
    let mut times = Vec::new();
    let mut max_inc = f64::NEG_INFINITY;
    let mut ok = true;
    let mut tol_used = 0.0f64;
    for w in recs.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dt = b.t - a.t;
        let dphi = b.phi_tau - a.phi_tau;
        let dpsi = b.psi_tau - a.psi_tau;
        let that2 = 0.5 * (a.norm_That.powi(2) + b.norm_That.powi(2));
        let rthat2 = 0.5 * (a.norm_rThat.powi(2) + b.norm_rThat.powi(2));
        phi_res.push((dphi / dt + that2).abs());
        psi_res.push((dpsi / dt + rthat2).abs());
        times.push(0.5 * (a.t + b.t));
        let tol = 10.0 * h * h * dt * energy_scale;
        tol_used = tol_used.max(tol);
        max_inc = max_inc.max(dphi);
        if dphi > tol {
            ok = false;
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    MonotonicityReport {
        max_phi_residual: phi_res.iter().copied().fold(0.0, f64::max),
        max_psi_residual: psi_res.iter().copied().fold(0.0, f64::max),
        mean_phi_residual: mean(&phi_res),
        mean_psi_residual: mean(&psi_res),
        phi_residuals: phi_res,
        psi_residuals: psi_res,
        times,
        max_phi_increase: if max_inc.is_finite() { max_inc } else { 0.0 },
        increase_tolerance: tol_used,
        phi_non_increasing: ok,
    }
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Observed convergence order of `errors` measured at spacings `hs`.
pub fn fitted_order(hs: &[f64], errors: &[f64]) -> f64 {
    loglog_slope(hs, errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barrier_closed_form() {
        let p = LojParams { alpha: 1.5, ..LojParams::new(1, 0.5).unwrap() };
        let v = gronwall_barrier(0.1, &p, 10.0).unwrap();
        let expected = (0.1f64.powf(-1.0 / 3.0) + 2.0 / 3.0 * 10.0).powf(-3.0);
        assert!((v - expected).abs() < 1e-15);
        assert!((v / 1.4568e-3 - 1.0).abs() < 1e-4);
        assert_eq!(gronwall_barrier(0.1, &p, 0.0).unwrap(), 0.1);
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let x = gronwall_barrier(0.3, &p, k as f64 * 0.7).unwrap();
            assert!(x < prev);
            prev = x;
        }
    }

    #[test]
    fn barrier_alpha_two_limit() {
        let mut p = LojParams::new(1, 0.1).unwrap();
        p.alpha = 2.0;
        p.big_k = 1.5;
        let e = gronwall_barrier(0.2, &p, 3.0).unwrap();
        assert!((e - 0.2 * (-2.0 * 3.0 / 2.25f64).exp()).abs() < 1e-15);
        p.alpha = 2.0 - 1e-7;
        let near = gronwall_barrier(0.2, &p, 3.0).unwrap();
        assert!((near / e - 1.0).abs() < 1e-5);
        p.alpha = 2.5;
        assert!(gronwall_barrier(0.2, &p, 3.0).is_err());
        p.alpha = 1.0;
        assert!(gronwall_barrier(0.2, &p, 3.0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(LojParams::new(1, -0.1).is_err());
        assert!(LojParams::new(1, 1.0).is_err());
        assert_eq!(LojParams::new(1, 0.0).unwrap().alpha, 2.0);
        let p = LojParams::new(2, 0.1).unwrap();
        assert!((p.alpha - 1.9).abs() < 1e-15);
        let bad = LojParams { big_k: 0.5, ..p };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn judged_certificate_semantics() {
        let c = Certificate::judged("x", 1.04, 1.0, 0.05, String::new());
        assert!(c.pass && c.acceptable());
        let c = Certificate::judged("x", 1.06, 1.0, 0.05, String::new());
        assert!(!c.pass && !c.acceptable());
        let c = Certificate::judged("x", 0.0, 0.0, 0.05, String::new());
        assert_eq!(c.status, Status::Degenerate);
        let c = Certificate::judged("x", 1.0, 0.0, 0.05, String::new());
        assert!(!c.pass);
        assert_eq!(c.ratio, f64::INFINITY);
    }

    #[test]
    fn slope_fit() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        assert!((loglog_slope(&xs, &ys) - 1.7).abs() < 1e-12);
    }
}
