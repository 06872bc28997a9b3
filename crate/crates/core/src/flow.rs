//! Time integration of u_t = 𝒯(u) on the grid and in the equivariant reduction.

use serde::{Deserialize, Serialize};

use crate::calculus::{map_nodes, tension_at};
use crate::error::{Error, Result};
use crate::field::{SphereField, BOUNDARY_RINGS};
use crate::grid::Grid;
use crate::radial::{RadialProfile, RadialStepper};
use crate::vec3::{self, Vec3};
use crate::weighted::{eta_value, record_diagnostics, Diagnosable, DiagnosticRecord, DiagnosticSetup};

/// Number of trailing records flagged `near_stop` after a resolvability stop.
pub const NEAR_STOP_RECORDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub grid: Grid,
    pub dt_safety: f64,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    pub diagnostic_stride: usize,
    pub t1: f64,
    pub r: f64,
    pub e0: f64,
    /// Center of the Gaussian weights.
    pub center: [f64; 2],
    /// Also record whenever s = log(R/√τ) advanced by this much since the last record.
    pub diag_log_spacing: Option<f64>,
    /// Keep the state at every record (intended for equivariant runs).
    pub snapshot_every_record: bool,
}

impl FlowConfig {
    pub fn new(grid: Grid, t_end: f64, t1: f64, r: f64) -> Self {
        FlowConfig {
            grid,
            dt_safety: 0.2,
            t_end,
            snapshot_times: Vec::new(),
            diagnostic_stride: 10,
            t1,
            r,
            e0: 0.0,
            center: [0.0, 0.0],
            diag_log_spacing: None,
            snapshot_every_record: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_safety > 0.0 && self.dt_safety <= 0.25) {
            return Err(Error::InvalidParameter(format!(
                "dt_safety must lie in (0, 0.25] for the explicit scheme, got {}",
                self.dt_safety
            )));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.diagnostic_stride == 0 {
            return Err(Error::InvalidParameter("diagnostic_stride must be at least 1".into()));
        }
        if !(self.t1 >= self.t_end) {
            return Err(Error::InvalidParameter(format!(
                "T1 = {} is smaller than t_end = {}: diagnostics need tau = T1 - t > 0 along the run",
                self.t1, self.t_end
            )));
        }
        if !(self.r > 0.0 && self.r <= self.t1.sqrt()) {
            return Err(Error::InvalidParameter(format!(
                "R must satisfy 0 < R <= sqrt(T1), got R = {}, T1 = {}",
                self.r, self.t1
            )));
        }
        if let Some(ds) = self.diag_log_spacing {
            if !(ds > 0.0) {
                return Err(Error::InvalidParameter("diag_log_spacing must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn setup(&self) -> DiagnosticSetup {
        DiagnosticSetup { t1: self.t1, r: self.r, e0: self.e0, center: self.center }
    }
}

/// One forward-Euler step of the tension followed by renormalization; boundary rings frozen.
pub fn step_2d(u: &SphereField, dt: f64) -> Result<SphereField> {
    let g = *u.grid();
    let h = g.spacing();
    if !(dt > 0.0 && dt <= 0.25 * h * h) {
        return Err(Error::InvalidParameter(format!(
            "dt={dt} violates the explicit bound 0.25 h^2 = {}",
            0.25 * h * h
        )));
    }
    let v = u.values();
    let b = u.boundary_value();
    let out: Vec<Option<Vec3>> = map_nodes(&g, |i, j| {
        if g.ring(i, j) < BOUNDARY_RINGS {
            return Some(b);
        }
        let k = g.index(i, j);
        vec3::normalize(vec3::axpy(dt, tension_at(v, &g, i, j), v[k]))
    });
    let mut values = Vec::with_capacity(out.len());
    for (k, x) in out.into_iter().enumerate() {
        match x {
            Some(x) => values.push(x),
            None => {
                return Err(Error::SolverFailure {
                    t: f64::NAN,
                    detail: format!(
                        "zero or non-finite predictor at node ({}, {}), value {:?}",
                        k % g.n(),
                        k / g.n(),
                        v[k]
                    ),
                })
            }
        }
    }
    let mut next = SphereField::from_parts_unchecked(g, values, b);
    *next.metadata_mut() = u.metadata().clone();
    Ok(next)
}

/// Either representation of a map along a flow.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Field(SphereField),
    Profile(RadialProfile),
}

impl State {
    pub fn diagnosable(&self) -> &dyn Diagnosable {
        match self {
            State::Field(u) => u,
            State::Profile(p) => p,
        }
    }

    pub fn as_field(&self) -> Option<&SphereField> {
        match self {
            State::Field(u) => Some(u),
            State::Profile(_) => None,
        }
    }

    pub fn as_profile(&self) -> Option<&RadialProfile> {
        match self {
            State::Profile(p) => Some(p),
            State::Field(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub state: State,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StopReason {
    EndTime,
    /// max |du| exceeded 2/h.
    Resolvability {
        max_grad: f64,
        bound: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRun {
    pub config: FlowConfig,
    pub dt: f64,
    pub steps: u64,
    pub t_final: f64,
    pub stop: StopReason,
    pub records: Vec<DiagnosticRecord>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: State,
}

impl FlowRun {
    pub fn concentrated(&self) -> bool {
        matches!(self.stop, StopReason::Resolvability { .. })
    }

    /// Records usable for statistics: not flagged near the stop.
    pub fn usable_records(&self) -> impl DoubleEndedIterator<Item = &DiagnosticRecord> {
        self.records.iter().filter(|r| !r.near_stop)
    }

    /// Last kept state at or before time t.
    pub fn snapshot_before(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().rfind(|s| s.t <= t)
    }
}

trait Stepper {
    fn advance(&mut self, t: f64) -> Result<()>;
    fn state(&self) -> State;
    fn view(&self) -> &dyn Diagnosable;
}

struct GridStepper {
    u: SphereField,
    dt: f64,
}

impl Stepper for GridStepper {
    fn advance(&mut self, t: f64) -> Result<()> {
        self.u = step_2d(&self.u, self.dt).map_err(|e| match e {
            Error::SolverFailure { detail, .. } => Error::SolverFailure { t, detail },
            other => other,
        })?;
        Ok(())
    }
    fn state(&self) -> State {
        State::Field(self.u.clone())
    }
    fn view(&self) -> &dyn Diagnosable {
        &self.u
    }
}

struct ProfileStepper {
    p: RadialProfile,
    inner: RadialStepper,
}

impl Stepper for ProfileStepper {
    fn advance(&mut self, t: f64) -> Result<()> {
        self.inner.step(&mut self.p, t)
    }
    fn state(&self) -> State {
        State::Profile(self.p.clone())
    }
    fn view(&self) -> &dyn Diagnosable {
        &self.p
    }
}

/// Integrates from `initial` until t_end or the resolvability stop, streaming diagnostics.
pub fn run(config: &FlowConfig, initial: State) -> Result<FlowRun> {
    run_with_observer(config, initial, |_| {})
}

/// As [`run`], calling `observer` with every record as soon as it is computed.
pub fn run_with_observer(
    config: &FlowConfig,
    initial: State,
    mut observer: impl FnMut(&DiagnosticRecord),
) -> Result<FlowRun> {
    config.validate()?;
    let (mut stepper, dt, resolution): (Box<dyn Stepper>, f64, f64) = match initial {
        State::Field(u) => {
            if u.grid() != &config.grid {
                return Err(Error::InvalidParameter("initial field grid differs from the config grid".into()));
            }
            let h = u.grid().spacing();
            let dt = config.dt_safety * h * h;
            (Box::new(GridStepper { u, dt }), dt, h)
        }
        State::Profile(p) => {
            let d = p.min_spacing();
            let dt = config.dt_safety * d * d;
            let inner = RadialStepper::new(&p, dt)?;
            (Box::new(ProfileStepper { p, inner }), dt, d)
        }
    };
    let setup = config.setup();
    let bound = 2.0 / resolution;
    let mut records: Vec<DiagnosticRecord> = Vec::new();
    let mut snapshots = Vec::new();
    let mut pending_snaps: Vec<f64> = config.snapshot_times.clone();
    pending_snaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pending_snaps.dedup();
    let mut snap_idx = 0;
    let eta_time = (config.t1 - config.r * config.r).max(0.0);
    let mut eta: Option<f64> = None;

    let mut take_record = |stepper: &dyn Stepper,
                           t: f64,
                           records: &mut Vec<DiagnosticRecord>,
                           snapshots: &mut Vec<Snapshot>|
     -> Result<()> {
        if config.t1 - t <= 0.0 {
            return Ok(());
        }
        let rec = record_diagnostics(stepper.view(), t, &setup)?;
        observer(&rec);
        records.push(rec);
        if config.snapshot_every_record {
            snapshots.push(Snapshot { t, state: stepper.state() });
        }
        Ok(())
    };

    take_record(stepper.as_ref(), 0.0, &mut records, &mut snapshots)?;
    if eta_time <= 0.0 {
        eta = Some(eta_value(stepper.view(), config.r, config.center)?);
    }
    while snap_idx < pending_snaps.len() && pending_snaps[snap_idx] <= 0.0 {
        snapshots.push(Snapshot { t: 0.0, state: stepper.state() });
        snap_idx += 1;
    }
    let mut last_s = records.last().map(|r| r.s).unwrap_or(f64::NEG_INFINITY);
    let mut energy_prev = stepper.view().total_energy();
    let mut step: u64 = 0;
    let mut t = 0.0;
    let stop;
    loop {
        if t >= config.t_end - 0.5 * dt {
            stop = StopReason::EndTime;
            break;
        }
        stepper.advance(t)?;
        step += 1;
        t = step as f64 * dt;
        if eta.is_none() && t >= eta_time {
            eta = Some(eta_value(stepper.view(), config.r, config.center)?);
        }
        while snap_idx < pending_snaps.len() && pending_snaps[snap_idx] <= t + 0.5 * dt {
            snapshots.push(Snapshot { t, state: stepper.state() });
            snap_idx += 1;
        }
        let max_grad = stepper.view().max_gradient();
        if !max_grad.is_finite() {
            return Err(Error::SolverFailure { t, detail: "non-finite gradient".into() });
        }
        if max_grad > bound {
            take_record(stepper.as_ref(), t, &mut records, &mut snapshots)?;
            stop = StopReason::Resolvability { max_grad, bound };
            break;
        }
        let stride_hit = step.is_multiple_of(config.diagnostic_stride as u64);
        let log_hit = config.diag_log_spacing.is_some_and(|ds| {
            let tau = config.t1 - t;
            tau > 0.0 && (config.r / tau.sqrt()).ln() - last_s >= ds
        });
        if stride_hit || log_hit {
            take_record(stepper.as_ref(), t, &mut records, &mut snapshots)?;
            if let Some(r) = records.last() {
                last_s = r.s;
            }
        }
        if stride_hit {
            let e = stepper.view().total_energy();
            if e > energy_prev * 1.01 + 1e-12 {
                return Err(Error::Unstable {
                    t,
                    detail: format!(
                        "energy rose from {energy_prev} to {e} within one stride (dt_safety = {})",
                        config.dt_safety
                    ),
                });
            }
            energy_prev = e;
        }
    }
    if matches!(stop, StopReason::Resolvability { .. }) {
        let n = records.len();
        for r in records.iter_mut().skip(n.saturating_sub(NEAR_STOP_RECORDS)) {
            r.near_stop = true;
        }
    }
    for r in records.iter_mut() {
        r.eta = eta;
    }
    Ok(FlowRun {
        config: config.clone(),
        dt,
        steps: step,
        t_final: t,
        stop,
        records,
        snapshots,
        final_state: stepper.state(),
    })
}

/// Runs once to find the resolvability stop t*, then reruns with T₁ = t* + dt so that the
/// weighted diagnostics are centered on the observed singular time. R is clamped to √T₁.
pub fn run_two_pass(config: &FlowConfig, initial: State) -> Result<FlowRun> {
    run_two_pass_with_observer(config, initial, |_| {})
}

/// As [`run_two_pass`]; `observer` sees only the records of the final pass.
pub fn run_two_pass_with_observer(
    config: &FlowConfig,
    initial: State,
    observer: impl FnMut(&DiagnosticRecord),
) -> Result<FlowRun> {
    let mut probe = config.clone();
    probe.diagnostic_stride = usize::MAX;
    probe.diag_log_spacing = None;
    probe.snapshot_every_record = false;
    probe.snapshot_times.clear();
    let first = run(&probe, initial.clone())?;
    if !first.concentrated() {
        return run_with_observer(config, initial, observer);
    }
    let mut second = config.clone();
    second.t1 = first.t_final + first.dt;
    second.t_end = second.t1;
    second.r = second.r.min(second.t1.sqrt());
    run_with_observer(&second, initial, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::dirichlet_energy;
    use crate::field::{make_bubble, Rotation};
    use crate::radial::geometric_nodes;

    #[test]
    fn config_validation() {
        let g = Grid::new(8.0, 33).unwrap();
        let mut c = FlowConfig::new(g, 1.0, 2.0, 1.0);
        assert!(c.validate().is_ok());
        c.dt_safety = 0.3;
        assert!(c.validate().is_err());
        c.dt_safety = 0.2;
        c.t1 = 0.5;
        c.r = 0.5;
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("tau"), "{e}");
        c.t1 = 2.0;
        c.r = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn constant_run_is_trivial() {
        let g = Grid::new(8.0, 33).unwrap();
        let u = SphereField::constant(g, [0.0, 0.0, 1.0]).unwrap();
        let c = FlowConfig::new(g, 0.5, 1.0, 1.0);
        let run = run(&c, State::Field(u.clone())).unwrap();
        assert_eq!(run.stop, StopReason::EndTime);
        assert_eq!(run.final_state, State::Field(u));
        for r in &run.records {
            assert_eq!(r.phi_tau + r.psi_tau + r.norm_That + r.delta, 0.0);
        }
        assert!((run.t_final - 0.5).abs() <= run.dt);
    }

    #[test]
    fn grid_step_dissipates_and_keeps_bubble() {
        let g = Grid::new(4.0, 129).unwrap();
        let u = make_bubble(g, 1, 0.4, [0.0, 0.0], &Rotation::identity()).unwrap();
        let dt = 0.2 * g.spacing().powi(2);
        let mut v = u.clone();
        let mut e = dirichlet_energy(&v);
        for _ in 0..50 {
            v = step_2d(&v, dt).unwrap();
            let e2 = dirichlet_energy(&v);
            assert!(e2 <= e + 1e-12);
            e = e2;
            assert!(v.max_norm_defect() < 1e-12);
        }
        assert!(step_2d(&v, g.spacing().powi(2)).is_err());
    }

    #[test]
    fn radial_run_is_deterministic_and_flags_tail() {
        let r = geometric_nodes(8.0, 8e-4, 1.02).unwrap();
        let p = RadialProfile::from_fn(r, 1, |x| 2.0 * (x / 0.3).atan()).unwrap();
        let mut c = FlowConfig::new(Grid::new(8.0, 16).unwrap(), 0.01, 1.0, 1.0);
        c.diagnostic_stride = 5000;
        let a = run(&c, State::Profile(p.clone())).unwrap();
        let b = run(&c, State::Profile(p)).unwrap();
        assert_eq!(a.records, b.records);
        assert!(a.records.iter().all(|r| r.eta == a.records[0].eta));
        assert!(!a.concentrated());
    }
}
