//! Equivariant reduction u(r, θ) = (cos mθ sin h(r), sin mθ sin h(r), cos h(r)).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{smooth_cutoff, SphereField, NORTH, SOUTH};
use crate::grid::Grid;
use crate::vec3::{self, Vec3};

/// Geometric radial nodes 0 = r_0 < r_1 < ... < r_M = extent with r_1 = r_min and spacing
/// ratio `ratio` (the last spacing is absorbed by a uniform rescale).
pub fn geometric_nodes(extent: f64, r_min: f64, ratio: f64) -> Result<Vec<f64>> {
    if !(extent > 0.0 && r_min > 0.0 && r_min < extent && ratio >= 1.0) {
        return Err(Error::InvalidParameter(format!("bad radial grid: extent={extent}, r_min={r_min}, ratio={ratio}")));
    }
    let mut r = vec![0.0];
    let mut d = r_min;
    while *r.last().unwrap() < extent {
        r.push(r.last().unwrap() + d);
        d *= ratio;
    }
    let s = extent / r.last().unwrap();
    for x in r.iter_mut() {
        *x *= s;
    }
    *r.last_mut().unwrap() = extent;
    Ok(r)
}

/// Inserts midpoints, halving every spacing.
pub fn refine_nodes(r: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * r.len() - 1);
    for w in r.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(*r.last().unwrap());
    out
}

/// Derivative at `x` of the quadratic through three points.
#[inline]
fn quad_deriv(xs: [f64; 3], fs: [f64; 3], x: f64) -> f64 {
    let [x0, x1, x2] = xs;
    fs[0] * ((x - x1) + (x - x2)) / ((x0 - x1) * (x0 - x2))
        + fs[1] * ((x - x0) + (x - x2)) / ((x1 - x0) * (x1 - x2))
        + fs[2] * ((x - x0) + (x - x1)) / ((x2 - x0) * (x2 - x1))
}

#[inline]
fn quad_second(xs: [f64; 3], fs: [f64; 3]) -> f64 {
    let [x0, x1, x2] = xs;
    2.0 * (fs[0] / ((x0 - x1) * (x0 - x2)) + fs[1] / ((x1 - x0) * (x1 - x2)) + fs[2] / ((x2 - x0) * (x2 - x1)))
}

/// Angle profile h on graded nodes with corotation index m.
///
/// `h[0]` is the value at the origin and must be a multiple of π (0: north pole at the
/// origin, π: south pole), which makes the ansatz continuous at r = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    r: Vec<f64>,
    h: Vec<f64>,
    m: u32,
}

impl RadialProfile {
    pub fn new(r: Vec<f64>, h: Vec<f64>, m: u32) -> Result<Self> {
        if r.len() != h.len() || r.len() < 5 {
            return Err(Error::InvalidProfile("need matching r, h arrays with at least 5 nodes".into()));
        }
        if r[0] != 0.0 {
            return Err(Error::InvalidProfile("first radial node must be 0".into()));
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidProfile("radial nodes must increase strictly".into()));
        }
        if m == 0 {
            return Err(Error::InvalidProfile("corotation index must be positive".into()));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidProfile("non-finite angle value".into()));
        }
        let k = (h[0] / PI).round();
        if (h[0] - k * PI).abs() > 1e-9 {
            return Err(Error::InvalidProfile(format!(
                "origin value {} is not a multiple of pi (the ansatz would be discontinuous)",
                h[0]
            )));
        }
        let mut h = h;
        h[0] = k * PI;
        Ok(RadialProfile { r, h, m })
    }

    /// Samples `f` on the nodes; f(0) must be a multiple of π.
    pub fn from_fn(r: Vec<f64>, m: u32, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = r.iter().map(|&x| f(x)).collect();
        Self::new(r, h, m)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.r
    }

    pub fn values(&self) -> &[f64] {
        &self.h
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn origin_value(&self) -> f64 {
        self.h[0]
    }

    pub fn extent(&self) -> f64 {
        *self.r.last().unwrap()
    }

    pub fn last(&self) -> usize {
        self.r.len() - 1
    }

    /// Smallest node spacing.
    pub fn min_spacing(&self) -> f64 {
        self.r.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn with_values(&self, h: Vec<f64>) -> RadialProfile {
        RadialProfile { r: self.r.clone(), h, m: self.m }
    }

    /// Same profile interpolated onto refined nodes.
    pub fn refined(&self) -> RadialProfile {
        let r = refine_nodes(&self.r);
        let h = r.iter().map(|&x| self.interpolate(x)).collect::<Vec<_>>();
        let mut p = self.with_values(h);
        p.r = r;
        p.h[0] = self.h[0];
        p
    }

    fn stencil(&self, k: usize) -> usize {
        // start index of the 3-point stencil used at node k
        if k == 0 {
            0
        } else if k == self.last() {
            k - 2
        } else {
            k - 1
        }
    }

    /// dh/dr at node k (three-point, one-sided at the ends).
    pub fn h_r(&self, k: usize) -> f64 {
        let s = self.stencil(k);
        quad_deriv([self.r[s], self.r[s + 1], self.r[s + 2]], [self.h[s], self.h[s + 1], self.h[s + 2]], self.r[k])
    }

    pub fn h_rr(&self, k: usize) -> f64 {
        let s = self.stencil(k);
        quad_second([self.r[s], self.r[s + 1], self.r[s + 2]], [self.h[s], self.h[s + 1], self.h[s + 2]])
    }

    /// |du|² = h_r² + m² sin²h / r² at node k (the r → 0 limit at k = 0).
    pub fn density(&self, k: usize) -> f64 {
        let hr = self.h_r(k);
        if k == 0 {
            return if self.m == 1 { 2.0 * hr * hr } else { 0.0 };
        }
        let s = self.h[k].sin();
        let m = self.m as f64;
        hr * hr + m * m * s * s / (self.r[k] * self.r[k])
    }

    /// Tension scalar h_rr + h_r/r − m² sin h cos h / r²; the tension vector is this times e_h.
    /// Zero at the origin and at the frozen outer node.
    pub fn tension_scalar(&self, k: usize) -> f64 {
        if k == 0 || k == self.last() {
            return 0.0;
        }
        let r = self.r[k];
        let m = self.m as f64;
        self.h_rr(k) + self.h_r(k) / r - m * m * self.h[k].sin() * self.h[k].cos() / (r * r)
    }

    /// 2π ∫ f r dr by the trapezoid rule on the nodes.
    pub fn integrate(&self, f: impl Fn(usize) -> f64) -> f64 {
        let mut s = 0.0;
        let mut prev = f(0) * self.r[0];
        for k in 1..self.r.len() {
            let cur = f(k) * self.r[k];
            s += 0.5 * (self.r[k] - self.r[k - 1]) * (prev + cur);
            prev = cur;
        }
        2.0 * PI * s
    }

    /// Energy of the finite-volume discretization advanced by [`RadialStepper`]:
    /// π Σ r_{k+½} (Δh)²/Δr + π Σ V_k m² sin²h_k / r_k².
    pub fn dirichlet_energy(&self) -> f64 {
        let m2 = (self.m * self.m) as f64;
        let last = self.last();
        let mut grad = 0.0;
        for k in 0..last {
            let dr = self.r[k + 1] - self.r[k];
            let dh = self.h[k + 1] - self.h[k];
            grad += 0.5 * (self.r[k] + self.r[k + 1]) * dh * dh / dr;
        }
        let mut pot = 0.0;
        for k in 1..=last {
            let lo = 0.5 * (self.r[k - 1] + self.r[k]);
            let hi = if k < last { 0.5 * (self.r[k] + self.r[k + 1]) } else { self.r[k] };
            let v = 0.5 * (hi * hi - lo * lo);
            let s = self.h[k].sin();
            pot += v * m2 * s * s / (self.r[k] * self.r[k]);
        }
        PI * (grad + pot)
    }

    /// E(u, B_radius) = π ∫_0^radius |du|² r dr, trapezoid with a linearly interpolated end.
    pub fn ball_energy(&self, radius: f64) -> f64 {
        if radius <= 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        let mut prev = 0.0;
        for k in 1..self.r.len() {
            let cur = self.density(k) * self.r[k];
            let (a, b) = (self.r[k - 1], self.r[k]);
            if radius >= b {
                s += 0.5 * (b - a) * (prev + cur);
            } else {
                let t = (radius - a) / (b - a);
                let end = prev + t * (cur - prev);
                s += 0.5 * (radius - a) * (prev + end);
                break;
            }
            prev = cur;
        }
        PI * s
    }

    /// max over cell faces of |du|, with the face values of the finite-volume energy:
    /// ((h_{k+1} − h_k)/Δr)² + m² sin²(h_{k+½})/r_{k+½}².
    pub fn max_gradient(&self) -> f64 {
        let m2 = (self.m * self.m) as f64;
        let mut worst: f64 = 0.0;
        for k in 0..self.last() {
            let dr = self.r[k + 1] - self.r[k];
            let g = (self.h[k + 1] - self.h[k]) / dr;
            let rm = 0.5 * (self.r[k] + self.r[k + 1]);
            let s = (0.5 * (self.h[k] + self.h[k + 1])).sin();
            worst = worst.max(g * g + m2 * s * s / (rm * rm));
        }
        worst.sqrt()
    }

    /// Index of the last node with r_k <= x.
    fn locate(&self, x: f64) -> usize {
        match self.r.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(k) => k,
            Err(k) => k.saturating_sub(1),
        }
    }

    /// Cubic Lagrange interpolation of h; the outer value beyond the last node.
    pub fn interpolate(&self, x: f64) -> f64 {
        if x >= self.extent() {
            return *self.h.last().unwrap();
        }
        let x = x.max(0.0);
        let k = self.locate(x);
        let start = k.saturating_sub(1).min(self.r.len() - 4);
        let xs = &self.r[start..start + 4];
        let fs = &self.h[start..start + 4];
        let mut acc = 0.0;
        for a in 0..4 {
            let mut w = 1.0;
            for b in 0..4 {
                if a != b {
                    w *= (x - xs[b]) / (xs[a] - xs[b]);
                }
            }
            acc += w * fs[a];
        }
        acc
    }

    /// Ansatz value at a planar point.
    pub fn sample(&self, x: [f64; 2]) -> Vec3 {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        ansatz(self.m, x[1].atan2(x[0]), self.interpolate(r))
    }

    /// Pole closest to the outer value: the constant the lifted field is pinned to.
    pub fn far_pole(&self) -> Vec3 {
        if self.h.last().unwrap().cos() >= 0.0 {
            NORTH
        } else {
            SOUTH
        }
    }

    /// Geodesic-diameter proxy on the annulus r_in <= r <= r_out: the mean direction of the
    /// equivariant map over an annulus is a pole, and the spread is the largest angle to it.
    pub fn oscillation(&self, r_in: f64, r_out: f64) -> Result<f64> {
        if !(r_in >= 0.0 && r_out > r_in) {
            return Err(Error::InvalidParameter(format!("bad annulus [{r_in}, {r_out}]")));
        }
        let mut rs: Vec<f64> = self.r.iter().copied().filter(|&x| x > r_in && x < r_out).collect();
        rs.push(r_in);
        rs.push(r_out.min(self.extent()));
        rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let hs: Vec<f64> = rs.iter().map(|&x| self.interpolate(x)).collect();
        // area-weighted mean of cos h (the horizontal components average to zero)
        let mut num = 0.0;
        let mut den = 0.0;
        for w in 0..rs.len() - 1 {
            let (a, b) = (rs[w], rs[w + 1]);
            num += 0.5 * (b - a) * (hs[w].cos() * a + hs[w + 1].cos() * b);
            den += 0.5 * (b - a) * (a + b);
        }
        let pole_north = den <= 0.0 || num >= 0.0;
        let spread = hs
            .iter()
            .map(|&h| {
                let c = h.cos().clamp(-1.0, 1.0);
                if pole_north {
                    c.acos()
                } else {
                    PI - c.acos()
                }
            })
            .fold(0.0, f64::max);
        Ok((2.0 * spread).min(PI))
    }
}

#[inline]
pub fn ansatz(m: u32, theta: f64, h: f64) -> Vec3 {
    let (s, c) = h.sin_cos();
    let mt = m as f64 * theta;
    [mt.cos() * s, mt.sin() * s, c]
}

/// Evaluates the ansatz on a grid with cubic interpolation of h, blended geodesically to the
/// nearest pole on 0.8L <= |x| <= 0.9L (the same blend used for bubbles) and pinned on the
/// outer rings. The blend only costs little energy when h is already near a multiple of π there.
pub fn lift(p: &RadialProfile, grid: Grid) -> Result<SphereField> {
    let far = p.far_pole();
    let l = grid.half_width();
    let mut u = SphereField::from_fn(grid, far, |x| {
        let v = p.sample(x);
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let chi = smooth_cutoff(r, 0.8 * l, 0.9 * l);
        if chi >= 1.0 {
            v
        } else {
            vec3::slerp(far, v, chi)
        }
    })?;
    u.metadata_mut().insert("kind".into(), "lifted-equivariant".into());
    u.metadata_mut().insert("m".into(), p.m().to_string());
    Ok(u)
}

/// Least-squares angle profile of a grid field along the positive x¹ axis, assuming the field
/// is m-equivariant about the origin.
pub fn project_to_profile(u: &SphereField, nodes: &[f64], m: u32, origin_value: f64) -> Result<RadialProfile> {
    let h = nodes
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            if k == 0 {
                origin_value
            } else {
                let v = u.sample([r, 0.0]);
                // θ = 0: v = (sin h, 0, cos h), h continued from the origin value
                let base = v[0].atan2(v[2]);
                let turns = ((origin_value - base) / (2.0 * PI)).round();
                base + 2.0 * PI * turns
            }
        })
        .collect();
    RadialProfile::new(nodes.to_vec(), h, m)
}

/// Implicit-explicit integrator for h_t = h_rr + h_r/r − m² sin h cos h / r².
///
/// Flux form with cell faces at midpoints; the linear part −m²(h − h_0)/r² is implicit, the
/// remainder −m² (sin h cos h − (h − h_0))/r² explicit. The outer node is frozen.
#[derive(Debug, Clone)]
pub struct RadialStepper {
    dt: f64,
    lower: Vec<f64>,
    origin_coupling: f64,
    outer_coupling: f64,
    inv_r2: Vec<f64>,
    // Thomas factorization
    cprime: Vec<f64>,
    inv_denom: Vec<f64>,
    scratch: Vec<f64>,
}

impl RadialStepper {
    pub fn new(p: &RadialProfile, dt: f64) -> Result<Self> {
        let dmin = p.min_spacing();
        if !(dt > 0.0 && dt <= 0.25 * dmin * dmin) {
            return Err(Error::InvalidParameter(format!(
                "radial dt={dt} outside (0, 0.25 dr_min^2 = {}]",
                0.25 * dmin * dmin
            )));
        }
        let r = &p.r;
        let last = p.last();
        let n = last - 1; // unknowns at nodes 1..=last-1
        let m2 = (p.m * p.m) as f64;
        let mut a = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut inv_r2 = vec![0.0; n];
        let mut diag = vec![0.0; n];
        for idx in 0..n {
            let k = idx + 1;
            let lo = 0.5 * (r[k - 1] + r[k]);
            let hi = 0.5 * (r[k] + r[k + 1]);
            let vol = 0.5 * (hi * hi - lo * lo);
            a[idx] = lo / (r[k] - r[k - 1]) / vol;
            c[idx] = hi / (r[k + 1] - r[k]) / vol;
            inv_r2[idx] = 1.0 / (r[k] * r[k]);
            diag[idx] = 1.0 + dt * (a[idx] + c[idx] + m2 * inv_r2[idx]);
        }
        let mut cprime = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        for idx in 0..n {
            let sub = if idx > 0 { -dt * a[idx] } else { 0.0 };
            let prev_c = if idx > 0 { cprime[idx - 1] } else { 0.0 };
            let denom = diag[idx] - sub * prev_c;
            inv_denom[idx] = 1.0 / denom;
            cprime[idx] = -dt * c[idx] * inv_denom[idx];
        }
        Ok(RadialStepper {
            dt,
            origin_coupling: a[0],
            outer_coupling: c[n - 1],
            lower: a,
            inv_r2,
            cprime,
            inv_denom,
            scratch: vec![0.0; n],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `p` by one step in place.
    pub fn step(&mut self, p: &mut RadialProfile, t: f64) -> Result<()> {
        let dt = self.dt;
        let n = self.lower.len();
        let h0 = p.h[0];
        let m2 = (p.m * p.m) as f64;
        let hl = p.h[n + 1];
        let mut d = std::mem::take(&mut self.scratch);
        for (idx, dk) in d.iter_mut().enumerate().take(n) {
            let hk = p.h[idx + 1];
            let (s, c) = hk.sin_cos();
            let g = s * c - (hk - h0);
            *dk = hk - dt * m2 * g * self.inv_r2[idx] + dt * m2 * h0 * self.inv_r2[idx];
        }
        d[0] += dt * self.origin_coupling * h0;
        d[n - 1] += dt * self.outer_coupling * hl;
        // forward sweep with the cached factorization
        for idx in 0..n {
            let prev = if idx > 0 { d[idx - 1] } else { 0.0 };
            let sub = if idx > 0 { -dt * self.lower[idx] } else { 0.0 };
            d[idx] = (d[idx] - sub * prev) * self.inv_denom[idx];
        }
        for idx in (0..n - 1).rev() {
            d[idx] -= self.cprime[idx] * d[idx + 1];
        }
        if let Some(bad) = d.iter().position(|x| !x.is_finite()) {
            return Err(Error::SolverFailure {
                t,
                detail: format!(
                    "non-finite angle at r={} after tridiagonal solve; state: {}",
                    p.r[bad + 1],
                    serde_json::to_string(p).unwrap_or_default()
                ),
            });
        }
        p.h[1..=n].copy_from_slice(&d);
        self.scratch = d;
        Ok(())
    }
}

/// One semi-implicit step of the reduced flow.
pub fn step_equivariant(p: &RadialProfile, dt: f64) -> Result<RadialProfile> {
    let mut stepper = RadialStepper::new(p, dt)?;
    let mut out = p.clone();
    stepper.step(&mut out, 0.0)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes() -> Vec<f64> {
        geometric_nodes(8.0, 8e-4, 1.02).unwrap()
    }

    #[test]
    fn geometric_grid_shape() {
        let r = nodes();
        assert_eq!(r[0], 0.0);
        assert_eq!(*r.last().unwrap(), 8.0);
        assert!((r[1] - 8e-4).abs() < 1e-4);
        assert!(r.len() > 200 && r.len() < 300);
        let f = refine_nodes(&r);
        assert_eq!(f.len(), 2 * r.len() - 1);
        assert_eq!(f[2], r[1]);
    }

    #[test]
    fn origin_value_must_be_pole() {
        let r = nodes();
        assert!(RadialProfile::from_fn(r.clone(), 1, |x| 0.3 + x).is_err());
        assert!(RadialProfile::from_fn(r.clone(), 1, |x| PI + x).is_ok());
        assert!(RadialProfile::from_fn(r, 0, |x| x).is_err());
    }

    #[test]
    fn zero_profile_is_fixed() {
        let p = RadialProfile::from_fn(nodes(), 1, |_| 0.0).unwrap();
        let q = step_equivariant(&p, 0.2 * p.min_spacing().powi(2)).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.dirichlet_energy(), 0.0);
    }

    #[test]
    fn bubble_profile_energy_and_stationarity() {
        let lambda = 0.1;
        let p = RadialProfile::from_fn(nodes(), 1, |r| 2.0 * (r / lambda).atan()).unwrap();
        // 4π(1 − cos h(L)) minus nothing: the truncated bubble energy in closed form
        let exact = 2.0 * PI * (1.0 - p.values().last().unwrap().cos());
        assert!((p.dirichlet_energy() / exact - 1.0).abs() < 1e-3, "{}", p.dirichlet_energy());
        assert!((p.ball_energy(8.0) / exact - 1.0).abs() < 1e-3);
        let dt = 0.2 * p.min_spacing().powi(2);
        let mut stepper = RadialStepper::new(&p, dt).unwrap();
        let mut q = p.clone();
        for _ in 0..1000 {
            stepper.step(&mut q, 0.0).unwrap();
        }
        let drift = q.values().iter().zip(p.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-3, "{drift}");
    }

    #[test]
    fn interpolation_is_cubic() {
        let p = RadialProfile::from_fn(nodes(), 1, |r| r * r * r - 2.0 * r).unwrap();
        for x in [1e-5, 0.0123, 0.77, 3.3, 7.99] {
            assert!((p.interpolate(x) - (x * x * x - 2.0 * x)).abs() < 1e-11);
        }
    }

    #[test]
    fn oscillation_of_bubble_covers_sphere() {
        let p = RadialProfile::from_fn(nodes(), 1, |r| 2.0 * (r / 0.1).atan()).unwrap();
        assert!((p.oscillation(0.0, 8.0).unwrap() - PI).abs() < 1e-12);
        let small = p.oscillation(0.0, 0.01).unwrap();
        assert!((small - 2.0 * 2.0 * (0.1f64).atan()).abs() < 1e-6);
    }
}
