//! Concentration detection, bubble extraction, the energy identity, oscillation and
//! body-map estimates over completed runs.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{central_density_at, dirichlet_energy, tension};
use crate::error::{Error, Result};
use crate::field::{SphereField, BOUNDARY_RINGS};
use crate::flow::{step_2d, FlowRun, Snapshot, State};
use crate::grid::Grid;
use crate::inequality::{barrier_window, loglog_slope, LojParams};
use crate::radial::RadialProfile;
use crate::vec3::{self, Vec3};
use crate::weighted::{Diagnosable, DiagnosticRecord};

/// ε₀ used for detection when the caller does not choose one.
pub const DETECTION_EPS0: f64 = 1.0;
/// Half-width of the rescaled frame a bubble is sampled into.
pub const EXTRACTION_HALF_WIDTH: f64 = 64.0;
pub const EXTRACTION_N: usize = 257;
pub const POLISH_STEPS: usize = 200;
/// Relative tension ‖T‖/‖Δu‖ below which a polished bubble counts as harmonic.
pub const HARMONIC_TENSION_RATIO: f64 = 0.1;
/// Allowed relative variation of E(B_r) over a dyadic range for a plateau.
pub const PLATEAU_VARIATION: f64 = 0.2;

/// Map-level queries shared by planar fields and equivariant profiles.
pub trait MapView: Diagnosable + Sync {
    fn sample(&self, x: [f64; 2]) -> Vec3;
    /// 2-approximation of the geodesic diameter of u over r_in ≤ |x − c| ≤ r_out.
    fn oscillation(&self, center: [f64; 2], r_in: f64, r_out: f64) -> Result<f64>;
    /// max over |x − c| = r of r|du|.
    fn ring_rdu(&self, center: [f64; 2], r: f64) -> f64;
    /// Node spacing relevant to features of size `r` near `center`.
    fn local_resolution(&self, center: [f64; 2], r: f64) -> f64;
    fn concentrations(&self, eps0: f64) -> Vec<Concentration>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Concentration {
    pub center: [f64; 2],
    pub scale: f64,
    /// E(B_{2·scale}(center)), used to rank overlapping candidates.
    pub energy: f64,
}

/// Smallest r ≤ r_max with E(B_r) ≥ eps0, to relative precision 1e-6.
fn enclosing_radius(energy: impl Fn(f64) -> f64, eps0: f64, r_max: f64) -> Option<f64> {
    if energy(r_max) < eps0 {
        return None;
    }
    let (mut lo, mut hi) = (0.0, r_max);
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if energy(mid) >= eps0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

fn mean_direction<'a>(vals: impl Iterator<Item = &'a Vec3>) -> Option<Vec3> {
    let mut acc = [0.0; 3];
    for v in vals {
        acc = vec3::add(acc, *v);
    }
    vec3::normalize(acc)
}

fn spread_oscillation(vals: &[Vec3]) -> f64 {
    let Some(m) = mean_direction(vals.iter()) else {
        return PI;
    };
    let spread = vals.iter().map(|v| vec3::angle_between(m, *v)).fold(0.0, f64::max);
    (2.0 * spread).min(PI)
}

impl MapView for SphereField {
    fn sample(&self, x: [f64; 2]) -> Vec3 {
        SphereField::sample(self, x)
    }

    fn oscillation(&self, center: [f64; 2], r_in: f64, r_out: f64) -> Result<f64> {
        if !(r_in >= 0.0 && r_out > r_in) {
            return Err(Error::InvalidParameter(format!("bad annulus [{r_in}, {r_out}]")));
        }
        let g = self.grid();
        let vals: Vec<Vec3> = (0..g.len())
            .filter(|&k| {
                let x = g.position(k % g.n(), k / g.n());
                let d = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt();
                d >= r_in && d <= r_out
            })
            .map(|k| self.values()[k])
            .collect();
        if vals.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "annulus [{r_in}, {r_out}] contains no grid nodes (h = {})",
                g.spacing()
            )));
        }
        Ok(spread_oscillation(&vals))
    }

    fn ring_rdu(&self, center: [f64; 2], r: f64) -> f64 {
        let g = *self.grid();
        let h = g.spacing();
        let v = self.values();
        let mut best: f64 = 0.0;
        for j in BOUNDARY_RINGS..g.n() - BOUNDARY_RINGS {
            for i in BOUNDARY_RINGS..g.n() - BOUNDARY_RINGS {
                let x = g.position(i, j);
                let d = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt();
                if (d - r).abs() <= 0.5 * h {
                    best = best.max(r * central_density_at(v, &g, i, j).sqrt());
                }
            }
        }
        best
    }

    fn local_resolution(&self, _center: [f64; 2], _r: f64) -> f64 {
        self.grid().spacing()
    }

    fn concentrations(&self, eps0: f64) -> Vec<Concentration> {
        detect_on_field(self, eps0)
    }
}

impl MapView for RadialProfile {
    fn sample(&self, x: [f64; 2]) -> Vec3 {
        RadialProfile::sample(self, x)
    }

    fn oscillation(&self, center: [f64; 2], r_in: f64, r_out: f64) -> Result<f64> {
        if center != [0.0, 0.0] {
            return Err(Error::InvalidParameter("equivariant oscillation is only defined about the origin".into()));
        }
        RadialProfile::oscillation(self, r_in, r_out)
    }

    fn ring_rdu(&self, _center: [f64; 2], r: f64) -> f64 {
        let nodes = self.nodes();
        let k = nodes.partition_point(|&x| x <= r).clamp(1, nodes.len() - 1);
        let (a, b) = (nodes[k - 1], nodes[k]);
        let w = ((r - a) / (b - a)).clamp(0.0, 1.0);
        let rho = (1.0 - w) * self.density(k - 1) + w * self.density(k);
        r * rho.max(0.0).sqrt()
    }

    fn local_resolution(&self, _center: [f64; 2], r: f64) -> f64 {
        let nodes = self.nodes();
        let k = nodes.partition_point(|&x| x <= r).clamp(1, nodes.len() - 1);
        nodes[k] - nodes[k - 1]
    }

    fn concentrations(&self, eps0: f64) -> Vec<Concentration> {
        let r_max = 0.25 * self.extent();
        match enclosing_radius(|r| Diagnosable::ball_energy(self, [0.0, 0.0], r), eps0, r_max) {
            Some(scale) => vec![Concentration {
                center: [0.0, 0.0],
                scale,
                energy: Diagnosable::ball_energy(self, [0.0, 0.0], 2.0 * scale),
            }],
            None => Vec::new(),
        }
    }
}

impl State {
    pub fn map_view(&self) -> &dyn MapView {
        match self {
            State::Field(u) => u,
            State::Profile(p) => p,
        }
    }
}

/// Candidate maxima kept before the (more expensive) enclosing-radius search.
const MAX_CANDIDATES: usize = 64;

fn detect_on_field(u: &SphereField, eps0: f64) -> Vec<Concentration> {
    let g = *u.grid();
    let v = u.values();
    let n = g.n();
    let rho: Vec<f64> = (0..g.len()).into_par_iter().map(|k| central_density_at(v, &g, k % n, k / n)).collect();
    let lo = BOUNDARY_RINGS;
    let hi = n - BOUNDARY_RINGS;
    let mut maxima: Vec<(usize, usize, f64)> = Vec::new();
    for j in lo..hi {
        for i in lo..hi {
            let k = g.index(i, j);
            let here = rho[k];
            if here <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nb: for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let kk = g.index((i as i64 + di) as usize, (j as i64 + dj) as usize);
                    // ties go to the lower index
                    if rho[kk] > here || (rho[kk] == here && kk < k) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                maxima.push((i, j, here));
            }
        }
    }
    maxima.sort_by(|a, b| b.2.total_cmp(&a.2));
    maxima.truncate(MAX_CANDIDATES);
    let r_max = 0.25 * g.half_width();
    let mut found: Vec<Concentration> = maxima
        .par_iter()
        .filter_map(|&(i, j, _)| {
            let c = g.position(i, j);
            let scale = enclosing_radius(|r| u.ball_energy(c, r), eps0, r_max)?;
            Some(Concentration { center: c, scale, energy: u.ball_energy(c, 2.0 * scale) })
        })
        .collect();
    found.sort_by(|a, b| b.energy.total_cmp(&a.energy));
    let mut kept: Vec<Concentration> = Vec::new();
    for c in found {
        let clash = kept.iter().any(|k| {
            let d = ((k.center[0] - c.center[0]).powi(2) + (k.center[1] - c.center[1]).powi(2)).sqrt();
            d < 4.0 * k.scale.max(c.scale)
        });
        if !clash {
            kept.push(c);
        }
    }
    kept
}

/// Local maxima of |du|² whose ε₀-enclosing radius is at most L/4, merged within 4× scale.
pub fn detect_concentration(u: &dyn MapView, eps0: f64) -> Result<Vec<Concentration>> {
    if !(eps0 > 0.0) {
        return Err(Error::InvalidParameter(format!("eps0 must be positive, got {eps0}")));
    }
    Ok(u.concentrations(eps0))
}

#[derive(Debug, Clone, Serialize)]
pub struct BubbleReport {
    pub center: [f64; 2],
    pub scale: f64,
    pub degree_estimate: i64,
    pub energy: f64,
    pub limit_value: Vec3,
    /// Energy of the sampled frame before polishing.
    pub sampled_energy: f64,
    /// ‖T‖/‖Δu‖ of the polished field.
    pub tension_ratio: f64,
    pub harmonic_like: bool,
    #[serde(skip)]
    pub extraction_snapshot: SphereField,
}

/// One line per bubble, with a header.
pub fn bubbles_csv(bubbles: &[BubbleReport]) -> String {
    let mut s =
        String::from("center_x,center_y,scale,degree,energy,limit_x,limit_y,limit_z,tension_ratio,harmonic_like\n");
    for b in bubbles {
        let v = b.limit_value;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            b.center[0],
            b.center[1],
            b.scale,
            b.degree_estimate,
            b.energy,
            v[0],
            v[1],
            v[2],
            b.tension_ratio,
            b.harmonic_like
        ));
    }
    s
}

pub fn default_target_grid() -> Grid {
    Grid::new(EXTRACTION_HALF_WIDTH, EXTRACTION_N).expect("static extraction grid")
}

/// Samples u(center + scale·y) onto `target`, pins the outer rings to the mean direction of
/// the outermost ring, polishes by a short flow and rounds E/4π.
pub fn extract_bubble(u: &dyn MapView, center: [f64; 2], scale: f64, target: Grid) -> Result<BubbleReport> {
    let h = u.local_resolution(center, scale);
    if !(scale >= 2.0 * h) {
        return Err(Error::InvalidParameter(format!(
            "bubble scale {scale} is under-resolved (needs at least 2h = {})",
            2.0 * h
        )));
    }
    let n = target.n();
    let raw: Vec<Vec3> = (0..target.len())
        .into_par_iter()
        .map(|k| {
            let y = target.position(k % n, k / n);
            u.sample([center[0] + scale * y[0], center[1] + scale * y[1]])
        })
        .collect();
    let outer: Vec<Vec3> = (0..target.len()).filter(|&k| target.ring(k % n, k / n) == 0).map(|k| raw[k]).collect();
    let limit = mean_direction(outer.iter()).unwrap_or(crate::field::NORTH);
    // Scale the angle to the limit value by 1 − |y|²/R_c². For a bubble tail θ ~ 2λ/r this
    // costs O(λ²/R_c²) energy, far less than a blend over a thin band.
    let rc = 0.9 * target.half_width();
    let values: Vec<Vec3> = (0..target.len())
        .map(|k| {
            let y = target.position(k % n, k / n);
            let chi = (1.0 - (y[0] * y[0] + y[1] * y[1]) / (rc * rc)).max(0.0);
            if target.ring(k % n, k / n) < BOUNDARY_RINGS || chi <= 0.0 {
                limit
            } else {
                vec3::slerp(limit, raw[k], chi)
            }
        })
        .collect();
    let mut field = SphereField::from_values(target, values, limit)?;
    let sampled_energy = dirichlet_energy(&field);
    let dt = 0.2 * target.spacing() * target.spacing();
    for _ in 0..POLISH_STEPS {
        field = step_2d(&field, dt)?;
    }
    let energy = dirichlet_energy(&field);
    let degree = (energy / (4.0 * PI)).round() as i64;
    let ratio = tension_ratio(&field);
    let harmonic_like =
        degree >= 1 && ratio <= HARMONIC_TENSION_RATIO && (energy / (4.0 * PI * degree as f64) - 1.0).abs() <= 0.05;
    let field = field
        .with_metadata("kind", "extracted-bubble")
        .with_metadata("center", format!("{},{}", center[0], center[1]))
        .with_metadata("scale", format!("{scale}"));
    Ok(BubbleReport {
        center,
        scale,
        degree_estimate: degree,
        energy,
        limit_value: limit,
        sampled_energy,
        tension_ratio: ratio,
        harmonic_like,
        extraction_snapshot: field,
    })
}

/// Extracts every concentration, shrinking each frame to half the distance to the nearest
/// other one so that a frame never contains a second bubble.
pub fn extract_bubbles(u: &dyn MapView, concs: &[Concentration]) -> Result<Vec<BubbleReport>> {
    concs
        .par_iter()
        .enumerate()
        .map(|(a, c)| {
            let nearest = concs
                .iter()
                .enumerate()
                .filter(|(b, _)| *b != a)
                .map(|(_, o)| (o.center[0] - c.center[0]).hypot(o.center[1] - c.center[1]))
                .fold(f64::INFINITY, f64::min);
            let half_width = EXTRACTION_HALF_WIDTH.min(0.5 * nearest / c.scale);
            extract_bubble(u, c.center, c.scale, Grid::new(half_width, EXTRACTION_N)?)
        })
        .collect()
}

/// ‖T‖/‖Δu‖ over interior nodes: 0 for harmonic maps, order one otherwise.
fn tension_ratio(u: &SphereField) -> f64 {
    let g = *u.grid();
    let v = u.values();
    let t = tension(u);
    let n = g.n();
    let (mut num, mut den) = (0.0, 0.0);
    let inv_h2 = 1.0 / g.cell_area();
    for j in BOUNDARY_RINGS..n - BOUNDARY_RINGS {
        for i in BOUNDARY_RINGS..n - BOUNDARY_RINGS {
            let k = g.index(i, j);
            let mut lap = vec3::scale(-4.0, v[k]);
            for kk in [k - 1, k + 1, k - n, k + n] {
                lap = vec3::add(lap, v[kk]);
            }
            num += vec3::norm2(t.values[k]);
            den += vec3::norm2(lap) * inv_h2 * inv_h2;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// States available for analysis: snapshots, then the final state.
fn timeline(run: &FlowRun) -> Vec<(f64, &State)> {
    let mut out: Vec<(f64, &State)> = run.snapshots.iter().map(|s: &Snapshot| (s.t, &s.state)).collect();
    if out.last().is_none_or(|(t, _)| *t < run.t_final) {
        out.push((run.t_final, &run.final_state));
    }
    out
}

/// Time of the last record not flagged near the stop.
fn last_usable(run: &FlowRun) -> Option<&DiagnosticRecord> {
    run.usable_records().next_back()
}

/// Latest state whose concentrations near `p` (within `reach`) are all resolvable, with them.
fn extraction_state(run: &FlowRun, p: [f64; 2], reach: f64, eps0: f64) -> Option<(f64, &State, Vec<Concentration>)> {
    for (t, state) in timeline(run).into_iter().rev() {
        let view = state.map_view();
        let near: Vec<Concentration> = view
            .concentrations(eps0)
            .into_iter()
            .filter(|c| ((c.center[0] - p[0]).powi(2) + (c.center[1] - p[1]).powi(2)).sqrt() <= reach)
            .collect();
        if near.iter().all(|c| c.scale >= 2.0 * view.local_resolution(c.center, c.scale)) {
            return Some((t, state, near));
        }
    }
    None
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyIdentityRow {
    pub r: f64,
    pub e_inner: f64,
    pub sum_bubbles: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyIdentityReport {
    pub point: [f64; 2],
    /// Time of the analysed state: the latest one whose concentrations are resolvable.
    pub t_last: f64,
    pub rows: Vec<EnergyIdentityRow>,
    pub bubbles: Vec<BubbleReport>,
    pub sum_bubbles: f64,
    /// E(B_r) at the upper end of the flattest dyadic range.
    pub inner_limit: f64,
    pub plateau_radius: Option<f64>,
    /// Relative gap |inner_limit − Σ|/Σ, or the absolute inner limit if there are no bubbles.
    pub gap: f64,
    pub inconclusive: bool,
}

impl EnergyIdentityReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,E_inner,sum_bubbles,gap\n");
        for row in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", row.r, row.e_inner, row.sum_bubbles, row.gap));
        }
        s
    }
}

/// Radii r_max·2^{-k/4} down to twice the resolution.
pub fn default_radii(view: &dyn MapView, r_max: f64) -> Vec<f64> {
    let floor = 2.0 * view.resolution();
    let mut out = Vec::new();
    let mut r = r_max;
    while r >= floor && out.len() < 200 {
        out.push(r);
        r *= 0.5f64.powf(0.25);
    }
    out.reverse();
    out
}

/// Compares lim_r lim_t E(u(t), B_r(p)) against Σ 4π·degree over bubbles extracted near p.
/// An empty `radii` selects quarter-dyadic radii up to R.
pub fn energy_identity_check(run: &FlowRun, p: [f64; 2], radii: &[f64]) -> Result<EnergyIdentityReport> {
    let reach = run.config.r;
    let (t_last, state, concs) = extraction_state(run, p, reach, DETECTION_EPS0)
        .ok_or_else(|| Error::InvalidParameter("no state along the run has a resolvable concentration".into()))?;
    let view = state.map_view();
    let mut radii: Vec<f64> = if radii.is_empty() { default_radii(view, reach) } else { radii.to_vec() };
    radii.sort_by(|a, b| a.total_cmp(b));
    let bubbles = extract_bubbles(view, &concs)?;
    let sum: f64 = bubbles.iter().filter(|b| b.degree_estimate >= 1).map(|b| 4.0 * PI * b.degree_estimate as f64).sum();
    let energies: Vec<f64> = radii.par_iter().map(|&r| view.ball_energy(p, r)).collect();
    let rel_gap = |e: f64| if sum > 0.0 { (e - sum).abs() / sum } else { e };
    let rows = radii
        .iter()
        .zip(&energies)
        .map(|(&r, &e)| EnergyIdentityRow { r, e_inner: e, sum_bubbles: sum, gap: rel_gap(e) })
        .collect();
    // flattest dyadic range [r_i, r_j], r_j the first radius ≥ 2r_i
    let mut best: Option<(f64, usize)> = None;
    for i in 0..radii.len() {
        let Some(j) = (i + 1..radii.len()).find(|&j| radii[j] >= 2.0 * radii[i] * (1.0 - 1e-9)) else {
            break;
        };
        if energies[j] <= 0.0 {
            continue;
        }
        let var = (energies[j] - energies[i]).abs() / energies[j];
        if best.is_none_or(|(b, _)| var < b) {
            best = Some((var, j));
        }
    }
    let (inner_limit, plateau_radius, inconclusive) = match best {
        Some((var, j)) if var <= PLATEAU_VARIATION => (energies[j], Some(radii[j]), false),
        _ => (energies.first().copied().unwrap_or(0.0), None, true),
    };
    Ok(EnergyIdentityReport {
        point: p,
        t_last,
        rows,
        sum_bubbles: sum,
        gap: rel_gap(inner_limit),
        inner_limit,
        plateau_radius,
        inconclusive,
        bubbles,
    })
}

/// λ = R e^{−S} of the barrier window: the smallest scale meeting the entry conditions.
pub fn barrier_lambda(run: &FlowRun, eps0: f64) -> Option<f64> {
    let params = LojParams { eps0, ..LojParams::new(1, 0.0).expect("static parameters") };
    barrier_window(run, &params).map(|w| w.lambda)
}

/// Oscillations over a list of annuli at one time.
#[derive(Debug, Clone, Serialize)]
pub struct OscillationProfile {
    pub annuli: Vec<(f64, f64)>,
    pub osc_values: Vec<f64>,
    pub time: f64,
}

pub fn oscillation(u: &dyn MapView, center: [f64; 2], r_in: f64, r_out: f64) -> Result<f64> {
    u.oscillation(center, r_in, r_out)
}

pub fn oscillation_profile(
    u: &dyn MapView,
    center: [f64; 2],
    annuli: &[(f64, f64)],
    time: f64,
) -> Result<OscillationProfile> {
    let osc_values = annuli.iter().map(|&(a, b)| u.oscillation(center, a, b)).collect::<Result<_>>()?;
    Ok(OscillationProfile { annuli: annuli.to_vec(), osc_values, time })
}

/// Earliest stored state at or after t that is not past the last usable record.
fn state_from(run: &FlowRun, t: f64) -> Option<(f64, &State)> {
    let limit = last_usable(run).map(|r| r.t).unwrap_or(run.t_final);
    timeline(run).into_iter().find(|(ts, _)| *ts >= t - 1e-12 && *ts <= limit + 1e-12)
}

#[derive(Debug, Clone, Serialize)]
pub struct RduRow {
    pub r: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// The recorded ψ series does not reach s = log(R/r).
    pub truncated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RduReport {
    pub kappa: f64,
    /// "ok" or "not-applicable".
    pub status: String,
    /// Smallest scale meeting the window condition.
    pub lambda: f64,
    pub sup_psi2: f64,
    pub rows: Vec<RduRow>,
    /// max lhs/rhs
    pub c_kappa: f64,
    /// Largest max/min − 1 of the per-radius ratio over radii within a factor 2.
    pub dyadic_variation: f64,
}

/// ∫₀^{S} ψ(σ) e^{κ(σ−S)} dσ by the trapezoid rule over the records, ψ linear in between.
fn psi_integral(records: &[&DiagnosticRecord], kappa: f64, s_max: f64) -> (f64, bool) {
    let pts: Vec<(f64, f64)> = records.iter().filter(|r| r.s >= 0.0).map(|r| (r.s, r.psi)).collect();
    if pts.is_empty() {
        return (0.0, true);
    }
    let mut acc = 0.0;
    let f = |s: f64, psi: f64| psi * (kappa * (s - s_max)).exp();
    for w in pts.windows(2) {
        let ((s0, p0), (s1, p1)) = (w[0], w[1]);
        if s0 >= s_max {
            break;
        }
        let (b, pb) = if s1 > s_max { (s_max, p0 + (p1 - p0) * (s_max - s0) / (s1 - s0)) } else { (s1, p1) };
        acc += 0.5 * (b - s0) * (f(s0, p0) + f(b, pb));
    }
    (acc, pts.last().unwrap().0 < s_max)
}

/// Records from T₁ − R² on, cut before the first one with ψ² > ε₀.
fn lemma_window(run: &FlowRun, eps0: f64) -> Vec<&DiagnosticRecord> {
    let t0 = run.config.t1 - run.config.r * run.config.r;
    run.usable_records().filter(|r| r.t >= t0 - 1e-12).take_while(|r| r.psi * r.psi <= eps0).collect()
}

/// Empirical constant in r|du| ≤ C(∫ψ e^{κ(σ−log R/r)} + η(r/R)^κ).
///
/// λ is the smallest scale with sup ψ² ≤ ε₀ over T₁ − R² ≤ t ≤ T₁ − λ². An empty `r_range`
/// selects R/2^k, k ≥ 1, down to λ.
pub fn check_rdu_bound(run: &FlowRun, kappa: f64, r_range: &[f64]) -> Result<RduReport> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    let recs = lemma_window(run, DETECTION_EPS0);
    let big_r = run.config.r;
    let mut report = RduReport {
        kappa,
        status: "ok".into(),
        lambda: 0.0,
        sup_psi2: recs.iter().map(|r| r.psi * r.psi).fold(0.0, f64::max),
        rows: Vec::new(),
        c_kappa: 0.0,
        dyadic_variation: 0.0,
    };
    if recs.len() < 2 || recs[0].s > 1e-9 {
        report.status = "not-applicable".into();
        return Ok(report);
    }
    let lambda = big_r * (-recs.last().unwrap().s).exp();
    report.lambda = lambda;
    let radii: Vec<f64> = if r_range.is_empty() {
        std::iter::successors(Some(0.5 * big_r), |r| Some(0.5 * r)).take_while(|&r| r >= lambda).collect()
    } else {
        r_range.iter().copied().filter(|&r| r >= lambda && r <= big_r).collect()
    };
    let eta = recs[0].eta.unwrap_or(0.0);
    let limit = last_usable(run).map(|r| r.t).unwrap_or(run.t_final);
    let center = run.config.center;
    let states = timeline(run);
    for r in radii {
        let s_max = (big_r / r).ln();
        let (integral, truncated) = psi_integral(&recs, kappa, s_max);
        let rhs = integral + eta * (r / big_r).powf(kappa);
        let t_from = run.config.t1 - 0.25 * r * r;
        let (mut lhs, mut t_at) = (0.0, f64::NAN);
        for (t, st) in states.iter().filter(|(t, _)| *t >= t_from - 1e-12 && *t <= limit + 1e-12) {
            let v = st.map_view().ring_rdu(center, r);
            if v >= lhs {
                lhs = v;
                t_at = *t;
            }
        }
        if t_at.is_nan() {
            continue;
        }
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        report.rows.push(RduRow { r, t: t_at, lhs, rhs, ratio, truncated });
    }
    report.c_kappa = report.rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    for a in &report.rows {
        for b in &report.rows {
            let (lo, hi) = if a.r <= b.r { (a, b) } else { (b, a) };
            if hi.r <= 2.0 * lo.r * (1.0 + 1e-9) && a.ratio > 0.0 && b.ratio > 0.0 {
                let v = a.ratio.max(b.ratio) / a.ratio.min(b.ratio) - 1.0;
                report.dyadic_variation = report.dyadic_variation.max(v);
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct OscillationRow {
    pub r: f64,
    pub r_in: f64,
    pub t: f64,
    pub osc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OscillationFit {
    /// "holder" (α = 2) or "log" (α < 2).
    pub branch: String,
    pub lambda: f64,
    pub rows: Vec<OscillationRow>,
    pub fitted_exponent: Option<f64>,
    /// 1/K for the Hölder branch, (α−1)/(α−2) for the logarithmic one.
    pub predicted_exponent: f64,
    pub under_sampled: bool,
    /// All oscillations vanish; nothing to fit.
    pub skipped: bool,
    pub pass: bool,
}

/// Oscillation on [λR/r, r] at the earliest admissible time T₁ − r²/4 for dyadic r, fitted
/// against r (α = 2) or against log(R/r) (α < 2).
pub fn check_oscillation_bound(run: &FlowRun, params: &LojParams) -> Result<OscillationFit> {
    params.validate()?;
    let big_r = run.config.r;
    let lambda = barrier_lambda(run, params.eps0)
        .ok_or_else(|| Error::InvalidParameter("run does not meet the entry conditions phi(0) <= eps0".into()))?;
    let center = run.config.center;
    let r_floor = (big_r * lambda).sqrt();
    let mut rows = Vec::new();
    let mut r = big_r;
    while r > r_floor * (1.0 + 1e-9) {
        let r_in = lambda * big_r / r;
        if let Some((t, st)) = state_from(run, run.config.t1 - 0.25 * r * r) {
            let view = st.map_view();
            if r_in < r && r >= 2.0 * view.resolution() {
                if let Ok(osc) = view.oscillation(center, r_in, r) {
                    rows.push(OscillationRow { r, r_in, t, osc });
                }
            }
        }
        r *= 0.5;
    }
    let holder = params.alpha >= 2.0 - 1e-12;
    let predicted = if holder { 1.0 / params.big_k } else { (params.alpha - 1.0) / (params.alpha - 2.0) };
    let skipped = rows.iter().all(|row| row.osc < 1e-12);
    let under_sampled = rows.len() < 4;
    let fitted = if skipped {
        None
    } else {
        let pts: Vec<&OscillationRow> = rows.iter().filter(|row| row.osc > 0.0).collect();
        let ys: Vec<f64> = pts.iter().map(|row| row.osc).collect();
        let xs: Vec<f64> = if holder {
            pts.iter().map(|row| row.r).collect()
        } else {
            pts.iter().map(|row| 1.0 + (big_r / row.r).ln()).collect()
        };
        (pts.len() >= 2).then(|| loglog_slope(&xs, &ys))
    };
    let pass = match fitted {
        None => skipped,
        Some(e) if holder => e > 0.0 && e >= predicted.min(1.0) - 0.3,
        Some(e) => (e - predicted).abs() <= 0.5 * predicted.abs(),
    };
    Ok(OscillationFit {
        branch: if holder { "holder" } else { "log" }.into(),
        lambda,
        rows,
        fitted_exponent: fitted,
        predicted_exponent: predicted,
        under_sampled,
        skipped,
        pass: pass && !under_sampled,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModulusRow {
    pub r: f64,
    pub r_in: f64,
    pub t: f64,
    pub osc: f64,
}

#[derive(Debug, Clone)]
pub struct BodyMap {
    pub t: f64,
    /// Last usable state; meaningful outside B_{punctured_radius}(p).
    pub state: State,
    pub punctured_radius: f64,
    pub modulus: Vec<ModulusRow>,
    /// Normalized mean over [ρ, 2ρ], ρ the smallest modulus radius.
    pub limit_value: Vec3,
}

/// Body map near p and its empirical modulus of continuity.
pub fn body_map(run: &FlowRun, p: [f64; 2]) -> Result<BodyMap> {
    let last = last_usable(run).ok_or_else(|| Error::InvalidParameter("run has no usable records".into()))?;
    let (t_body, body) = if run.concentrated() {
        timeline(run)
            .into_iter()
            .rfind(|(t, _)| *t <= last.t + 1e-12)
            .ok_or_else(|| Error::InvalidParameter("no stored state before the stop".into()))?
    } else {
        (run.t_final, &run.final_state)
    };
    let big_r = run.config.r;
    let lambda = if run.concentrated() { barrier_lambda(run, DETECTION_EPS0).unwrap_or(last.tau.sqrt()) } else { 0.0 };
    let r_floor = (big_r * lambda).sqrt().max(2.0 * body.map_view().resolution());
    let mut modulus = Vec::new();
    let mut r = big_r;
    while r > r_floor * (1.0 + 1e-9) {
        let (t, st) = if run.concentrated() {
            match state_from(run, run.config.t1 - 0.25 * r * r) {
                Some(x) => x,
                None => break,
            }
        } else {
            (t_body, body)
        };
        let r_in = lambda * big_r / r;
        if let Ok(osc) = st.map_view().oscillation(p, r_in, r) {
            modulus.push(ModulusRow { r, r_in, t, osc });
        }
        r *= 0.5;
    }
    let rho = modulus.last().map(|m| m.r).unwrap_or(r_floor);
    let view = body.map_view();
    let pts: Vec<Vec3> = (0..64)
        .flat_map(|a| {
            let th = 2.0 * PI * a as f64 / 64.0;
            (0..8).map(move |b| {
                let rr = rho * (1.0 + b as f64 / 7.0);
                [p[0] + rr * th.cos(), p[1] + rr * th.sin()]
            })
        })
        .map(|x| view.sample(x))
        .collect();
    let limit_value = mean_direction(pts.iter()).unwrap_or(crate::field::NORTH);
    Ok(BodyMap { t: t_body, state: body.clone(), punctured_radius: rho, modulus, limit_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_bubble, stereographic, Rotation, NORTH};

    fn bubble(n: usize, lambda: f64) -> SphereField {
        make_bubble(Grid::new(8.0, n).unwrap(), 1, lambda, [0.0, 0.0], &Rotation::identity()).unwrap()
    }

    #[test]
    fn constant_map_has_no_concentration() {
        let u = SphereField::constant(Grid::new(8.0, 65).unwrap(), NORTH).unwrap();
        assert!(detect_concentration(&u, 1.0).unwrap().is_empty());
        assert_eq!(oscillation(&u, [0.0, 0.0], 0.5, 4.0).unwrap(), 0.0);
        assert!(detect_concentration(&u, 0.0).is_err());
    }

    #[test]
    fn single_bubble_detection() {
        let u = make_bubble(Grid::new(4.0, 513).unwrap(), 1, 0.05, [0.0, 0.0], &Rotation::identity()).unwrap();
        let h = u.grid().spacing();
        let found = detect_concentration(&u, 1.0).unwrap();
        assert_eq!(found.len(), 1);
        let c = found[0];
        assert!(c.center[0].hypot(c.center[1]) <= 2.0 * h);
        // 4π r²/(λ² + r²) = 1
        let closed = 0.05 / (4.0 * PI - 1.0).sqrt();
        assert!(c.scale > 0.5 * closed && c.scale < 2.0 * closed, "{} vs {closed}", c.scale);
    }

    fn two_bubbles(n: usize) -> SphereField {
        // w = (z − 2)(z + 2)/2: degree-one bubbles of scale 1/2 at ±2, energy 8π
        let l2 = 2.0;
        SphereField::from_fn(Grid::new(8.0, n).unwrap(), NORTH, |x| {
            let (re, im) = ((x[0] - 2.0) * (x[0] + 2.0) - x[1] * x[1], 2.0 * x[0] * x[1]);
            let chi = crate::field::smooth_cutoff(x[0].hypot(x[1]), 6.4, 7.2);
            vec3::slerp(NORTH, stereographic(re / l2, im / l2), chi)
        })
        .unwrap()
    }

    #[test]
    fn two_bubbles_are_separated() {
        let u = two_bubbles(513);
        let mut found = detect_concentration(&u, 1.0).unwrap();
        assert_eq!(found.len(), 2);
        found.sort_by(|a, b| a.center[0].total_cmp(&b.center[0]));
        assert!((found[0].center[0] + 2.0).abs() < 0.1 && (found[1].center[0] - 2.0).abs() < 0.1);
        let total: f64 = extract_bubbles(&u, &found).unwrap().iter().map(|b| 4.0 * PI * b.degree_estimate as f64).sum();
        assert!((total / (8.0 * PI) - 1.0).abs() < 0.02);
    }

    #[test]
    fn exact_bubble_extraction() {
        // the sampled frame must stay inside the unblended part of the source
        let u = make_bubble(Grid::new(4.0, 1025).unwrap(), 1, 0.1, [0.0, 0.0], &Rotation::identity()).unwrap();
        let c = detect_concentration(&u, 1.0).unwrap()[0];
        let rep = extract_bubble(&u, c.center, c.scale, default_target_grid()).unwrap();
        assert_eq!(rep.degree_estimate, 1);
        assert!(rep.harmonic_like);
        assert!((rep.energy / (4.0 * PI) - 1.0).abs() < 0.01, "{}", rep.energy / (4.0 * PI));
        assert!((rep.energy / rep.sampled_energy - 1.0).abs() < 1e-3, "{} {}", rep.energy, rep.sampled_energy);
        assert!(vec3::angle_between(rep.limit_value, NORTH) < 1e-6);
        // under-resolved scale
        assert!(extract_bubble(&u, c.center, u.grid().spacing(), default_target_grid()).is_err());
    }

    #[test]
    fn perturbed_bubble_recovers_degree() {
        let base = bubble(513, 0.5);
        let u = SphereField::from_fn(*base.grid(), NORTH, |x| {
            let v = base.sample(x);
            let bump = 0.2 * (-(x[0] * x[0] + x[1] * x[1])).exp() * (3.0 * x[0]).sin();
            vec3::add(v, [bump, 0.5 * bump, 0.0])
        })
        .unwrap();
        let c = detect_concentration(&u, 1.0).unwrap()[0];
        let rep = extract_bubble(&u, c.center, c.scale, default_target_grid()).unwrap();
        assert_eq!(rep.degree_estimate, 1);
    }

    #[test]
    fn constant_extraction_is_not_a_bubble() {
        let u = SphereField::constant(Grid::new(8.0, 65).unwrap(), NORTH).unwrap();
        let rep = extract_bubble(&u, [0.0, 0.0], 1.0, default_target_grid()).unwrap();
        assert_eq!(rep.degree_estimate, 0);
        assert!(!rep.harmonic_like);
    }

    #[test]
    fn bubble_oscillation() {
        let lambda = 0.1;
        let u = bubble(513, lambda);
        assert!((oscillation(&u, [0.0, 0.0], 0.0, 6.0).unwrap() - PI).abs() < 1e-12);
        // closed form: on [10λ, 20λ] the polar angle spans 2 atan(λ/r) about the north pole
        let h_in = 2.0 * (1.0f64 / 10.0).atan();
        let h_out = 2.0 * (1.0f64 / 20.0).atan();
        let osc = oscillation(&u, [0.0, 0.0], 10.0 * lambda, 20.0 * lambda).unwrap();
        // the mean sits between the rims, so the doubled spread lies in [h_in, 2 h_in]
        assert!(osc >= h_in * 0.95 && osc <= 2.0 * h_in * 1.05, "{osc} {h_in} {h_out}");
        assert!(oscillation(&u, [0.0, 0.0], 0.001, 0.002).is_err());
    }
}
