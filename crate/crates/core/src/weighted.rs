//! Gaussian-weighted functionals and the per-time diagnostic record of a flow.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::calculus::{
    central_density_at, d1_at, d2_at, dirichlet_energy, local_energy, map_nodes, sum_nodes, sum_nodes_array, tension_at,
};
use crate::error::{Error, Result};
use crate::field::{ScalarField, SphereField, VectorField3};
use crate::radial::RadialProfile;
use crate::vec3::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedScale {
    pub tau: f64,
    pub center: [f64; 2],
}

impl WeightedScale {
    pub fn new(tau: f64) -> Result<Self> {
        Self::centered(tau, [0.0, 0.0])
    }

    pub fn centered(tau: f64, center: [f64; 2]) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        Ok(WeightedScale { tau, center })
    }

    /// e^{−|x − center|²/4τ}
    #[inline]
    pub fn weight(&self, x: [f64; 2]) -> f64 {
        let (a, b) = (x[0] - self.center[0], x[1] - self.center[1]);
        (-(a * a + b * b) / (4.0 * self.tau)).exp()
    }

    /// Distance from the center to the nearest edge of [−L, L]².
    pub fn reach(&self, half_width: f64) -> f64 {
        half_width - self.center[0].abs().max(self.center[1].abs())
    }

    /// 4√τ fits inside the domain around the center.
    pub fn full_accuracy(&self, half_width: f64) -> bool {
        4.0 * self.tau.sqrt() <= self.reach(half_width)
    }

    /// Bound on the weighted energy outside the domain: e^{−reach²/4τ} · E.
    pub fn tail_bound(&self, half_width: f64, total_energy: f64) -> f64 {
        let d = self.reach(half_width).max(0.0);
        (-(d * d) / (4.0 * self.tau)).exp() * total_energy
    }
}

/// Nodal fields with a pointwise squared magnitude.
pub trait NodalSquared {
    fn grid(&self) -> &crate::grid::Grid;
    fn squared(&self, k: usize) -> f64;
}

impl NodalSquared for VectorField3 {
    fn grid(&self) -> &crate::grid::Grid {
        &self.grid
    }
    fn squared(&self, k: usize) -> f64 {
        vec3::norm2(self.values[k])
    }
}

impl NodalSquared for ScalarField {
    fn grid(&self) -> &crate::grid::Grid {
        &self.grid
    }
    fn squared(&self, k: usize) -> f64 {
        self.values[k] * self.values[k]
    }
}

/// ‖f‖_τ = (Σ |f|² e^{−r²/4τ} h²)^{1/2}.
pub fn weighted_norm<F: NodalSquared + Sync>(f: &F, scale: &WeightedScale) -> f64 {
    let g = *f.grid();
    (g.cell_area() * sum_nodes(&g, |i, j| f.squared(g.index(i, j)) * scale.weight(g.position(i, j)))).sqrt()
}

/// T̂_τ(u) = 𝒯(u) − (1/2τ)(x¹ ∂_1 u + x² ∂_2 u), coordinates relative to the scale center.
pub fn twisted_tension(u: &SphereField, scale: &WeightedScale) -> VectorField3 {
    let g = *u.grid();
    let v = u.values();
    let values = map_nodes(&g, |i, j| {
        let x = g.position(i, j);
        let (a, b) = (x[0] - scale.center[0], x[1] - scale.center[1]);
        let xdu = vec3::add(vec3::scale(a, d1_at(v, &g, i, j)), vec3::scale(b, d2_at(v, &g, i, j)));
        vec3::axpy(-0.5 / scale.tau, xdu, tension_at(v, &g, i, j))
    });
    VectorField3 { grid: g, values }
}

/// Φ_τ(u) = ½ ∫ |du|² e^{−r²/4τ}.
pub fn phi(u: &SphereField, scale: &WeightedScale) -> f64 {
    let g = *u.grid();
    let v = u.values();
    0.5 * g.cell_area() * sum_nodes(&g, |i, j| central_density_at(v, &g, i, j) * scale.weight(g.position(i, j)))
}

/// Ψ_τ(u) = ½ ∫ r² |du|² e^{−r²/4τ}.
pub fn psi_quantity(u: &SphereField, scale: &WeightedScale) -> f64 {
    let g = *u.grid();
    let v = u.values();
    0.5 * g.cell_area()
        * sum_nodes(&g, |i, j| {
            let x = g.position(i, j);
            let (a, b) = (x[0] - scale.center[0], x[1] - scale.center[1]);
            (a * a + b * b) * central_density_at(v, &g, i, j) * scale.weight(x)
        })
}

/// All weighted quantities at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct WeightedMoments {
    pub phi: f64,
    pub psi: f64,
    /// ‖T̂_τ‖_τ
    pub norm_that: f64,
    /// ‖𝒯‖_τ
    pub norm_t: f64,
    /// ‖r du‖_τ
    pub norm_rdu: f64,
    /// ‖x⌟du‖_τ
    pub norm_xdu: f64,
    /// ‖r T̂_τ‖_τ
    pub norm_rthat: f64,
    pub full_accuracy: bool,
    pub tail_bound: f64,
}

/// A map representation that supports the weighted diagnostics and energy queries.
pub trait Diagnosable {
    fn moments(&self, scale: &WeightedScale) -> Result<WeightedMoments>;
    fn total_energy(&self) -> f64;
    fn ball_energy(&self, center: [f64; 2], radius: f64) -> f64;
    /// Half-width of the computational domain.
    fn extent(&self) -> f64;
    /// Smallest resolved length.
    fn resolution(&self) -> f64;
    fn max_gradient(&self) -> f64;
    /// Sorted distinct distances from `center` to nodes, up to `max_r`.
    fn node_radii(&self, center: [f64; 2], max_r: f64) -> Vec<f64>;
}

impl Diagnosable for SphereField {
    fn moments(&self, scale: &WeightedScale) -> Result<WeightedMoments> {
        let g = *self.grid();
        let v = self.values();
        let inv2tau = 0.5 / scale.tau;
        let per_node = |i: usize, j: usize| -> [f64; 7] {
            let x = g.position(i, j);
            let (a, b) = (x[0] - scale.center[0], x[1] - scale.center[1]);
            let r2 = a * a + b * b;
            let w = scale.weight(x);
            let d1 = d1_at(v, &g, i, j);
            let d2 = d2_at(v, &g, i, j);
            let rho = vec3::norm2(d1) + vec3::norm2(d2);
            let xdu: Vec3 = vec3::add(vec3::scale(a, d1), vec3::scale(b, d2));
            let t = tension_at(v, &g, i, j);
            let that = vec3::axpy(-inv2tau, xdu, t);
            let that2 = vec3::norm2(that);
            [
                0.5 * rho * w,
                0.5 * r2 * rho * w,
                that2 * w,
                vec3::norm2(t) * w,
                r2 * rho * w,
                vec3::norm2(xdu) * w,
                r2 * that2 * w,
            ]
        };
        let acc = sum_nodes_array(&g, per_node);
        let h2 = g.cell_area();
        let total = dirichlet_energy(self);
        Ok(WeightedMoments {
            phi: acc[0] * h2,
            psi: acc[1] * h2,
            norm_that: (acc[2] * h2).sqrt(),
            norm_t: (acc[3] * h2).sqrt(),
            norm_rdu: (acc[4] * h2).sqrt(),
            norm_xdu: (acc[5] * h2).sqrt(),
            norm_rthat: (acc[6] * h2).sqrt(),
            full_accuracy: scale.full_accuracy(g.half_width()),
            tail_bound: scale.tail_bound(g.half_width(), total),
        })
    }

    fn total_energy(&self) -> f64 {
        dirichlet_energy(self)
    }

    fn ball_energy(&self, center: [f64; 2], radius: f64) -> f64 {
        local_energy(self, center, radius).energy
    }

    fn extent(&self) -> f64 {
        self.grid().half_width()
    }

    fn resolution(&self) -> f64 {
        self.grid().spacing()
    }

    fn max_gradient(&self) -> f64 {
        let g = *self.grid();
        let v = self.values();
        map_nodes(&g, |i, j| central_density_at(v, &g, i, j)).into_iter().fold(0.0, f64::max).sqrt()
    }

    fn node_radii(&self, center: [f64; 2], max_r: f64) -> Vec<f64> {
        let g = self.grid();
        let mut out: Vec<f64> = (0..g.len())
            .map(|k| {
                let x = g.position(k % g.n(), k / g.n());
                ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt()
            })
            .filter(|&r| r <= max_r)
            .collect();
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup();
        out
    }
}

impl Diagnosable for RadialProfile {
    fn moments(&self, scale: &WeightedScale) -> Result<WeightedMoments> {
        if scale.center != [0.0, 0.0] {
            return Err(Error::InvalidParameter(
                "equivariant profiles only support weights centered at the origin".into(),
            ));
        }
        let tau = scale.tau;
        let r = self.nodes();
        let n = r.len();
        let w: Vec<f64> = r.iter().map(|&x| (-(x * x) / (4.0 * tau)).exp()).collect();
        let rho: Vec<f64> = (0..n).map(|k| self.density(k)).collect();
        let hr: Vec<f64> = (0..n).map(|k| self.h_r(k)).collect();
        let ts: Vec<f64> = (0..n).map(|k| self.tension_scalar(k)).collect();
        let that: Vec<f64> = (0..n).map(|k| ts[k] - r[k] * hr[k] / (2.0 * tau)).collect();
        let i = |f: &dyn Fn(usize) -> f64| self.integrate(f);
        let phi = 0.5 * i(&|k| rho[k] * w[k]);
        let psi = 0.5 * i(&|k| r[k] * r[k] * rho[k] * w[k]);
        let that2 = i(&|k| that[k] * that[k] * w[k]);
        let t2 = i(&|k| ts[k] * ts[k] * w[k]);
        let rdu2 = i(&|k| r[k] * r[k] * rho[k] * w[k]);
        let xdu2 = i(&|k| r[k] * r[k] * hr[k] * hr[k] * w[k]);
        let rthat2 = i(&|k| r[k] * r[k] * that[k] * that[k] * w[k]);
        let l = self.extent();
        Ok(WeightedMoments {
            phi,
            psi,
            norm_that: that2.sqrt(),
            norm_t: t2.sqrt(),
            norm_rdu: rdu2.sqrt(),
            norm_xdu: xdu2.sqrt(),
            norm_rthat: rthat2.sqrt(),
            full_accuracy: 4.0 * tau.sqrt() <= l,
            tail_bound: (-(l * l) / (4.0 * tau)).exp() * self.dirichlet_energy(),
        })
    }

    fn total_energy(&self) -> f64 {
        self.dirichlet_energy()
    }

    fn ball_energy(&self, center: [f64; 2], radius: f64) -> f64 {
        debug_assert!(center == [0.0, 0.0]);
        RadialProfile::ball_energy(self, radius)
    }

    fn extent(&self) -> f64 {
        RadialProfile::extent(self)
    }

    fn resolution(&self) -> f64 {
        self.min_spacing()
    }

    fn max_gradient(&self) -> f64 {
        RadialProfile::max_gradient(self)
    }

    fn node_radii(&self, _center: [f64; 2], max_r: f64) -> Vec<f64> {
        self.nodes().iter().copied().filter(|&r| r <= max_r).collect()
    }
}

/// Diagnostics at one time along a flow, with τ = T₁ − t.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub t: f64,
    pub tau: f64,
    #[serde(rename = "Phi")]
    pub phi_tau: f64,
    #[serde(rename = "Psi")]
    pub psi_tau: f64,
    pub norm_That: f64,
    pub norm_T: f64,
    pub norm_rdu: f64,
    pub norm_rThat: f64,
    pub norm_xdu: f64,
    /// Φ_τ − E₀
    pub phi: f64,
    /// √(Ψ_τ/τ)
    pub psi: f64,
    /// √τ ‖T̂_τ‖_τ
    pub delta: f64,
    /// √(Ψ_{4R²}(u(T₁ − R²))/R²), filled in once the run passes T₁ − R²
    pub eta: Option<f64>,
    /// log(R/√τ)
    pub s: f64,
    pub annulus_energies: Vec<(f64, f64, f64)>,
    pub energy: f64,
    pub max_grad: f64,
    /// τ exceeds the full-accuracy bound 4√τ ≤ L
    pub tau_flag: bool,
    pub tail_bound: f64,
    pub near_stop: bool,
}

/// Parameters shared by every record of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSetup {
    pub t1: f64,
    pub r: f64,
    pub e0: f64,
    pub center: [f64; 2],
}

/// Dyadic annuli [R/2^{k+1}, R/2^k] down to twice the resolution.
pub fn dyadic_annuli(r: f64, resolution: f64, max_count: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut hi = r;
    while out.len() < max_count && hi / 2.0 >= 2.0 * resolution {
        out.push((hi / 2.0, hi));
        hi /= 2.0;
    }
    out
}

pub fn record_diagnostics<M: Diagnosable + ?Sized>(u: &M, t: f64, setup: &DiagnosticSetup) -> Result<DiagnosticRecord> {
    let tau = setup.t1 - t;
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("diagnostics need t < T1 (tau > 0), got t={t}, T1={}", setup.t1)));
    }
    let scale = WeightedScale::centered(tau, setup.center)?;
    let mo = u.moments(&scale)?;
    let annulus_energies = dyadic_annuli(setup.r, u.resolution(), 24)
        .into_iter()
        .map(|(a, b)| (a, b, u.ball_energy(setup.center, b) - u.ball_energy(setup.center, a)))
        .collect();
    Ok(DiagnosticRecord {
        t,
        tau,
        phi_tau: mo.phi,
        psi_tau: mo.psi,
        norm_That: mo.norm_that,
        norm_T: mo.norm_t,
        norm_rdu: mo.norm_rdu,
        norm_rThat: mo.norm_rthat,
        norm_xdu: mo.norm_xdu,
        phi: mo.phi - setup.e0,
        psi: (mo.psi / tau).sqrt(),
        delta: tau.sqrt() * mo.norm_that,
        eta: None,
        s: (setup.r / tau.sqrt()).ln(),
        annulus_energies,
        energy: u.total_energy(),
        max_grad: u.max_gradient(),
        tau_flag: !mo.full_accuracy,
        tail_bound: mo.tail_bound,
        near_stop: false,
    })
}

/// η = √(Ψ_{4R²}(u)/R²) for the map at time T₁ − R².
pub fn eta_value<M: Diagnosable + ?Sized>(u: &M, r: f64, center: [f64; 2]) -> Result<f64> {
    let scale = WeightedScale::centered(4.0 * r * r, center)?;
    Ok((u.moments(&scale)?.psi / (r * r)).sqrt())
}

/// ∫ e^{−r²/4τ} dV over the plane.
pub fn gaussian_mass(tau: f64) -> f64 {
    4.0 * PI * tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_bubble, Rotation};
    use crate::grid::Grid;
    use crate::radial::{geometric_nodes, lift};

    #[test]
    fn gaussian_closed_forms() {
        let g = Grid::new(8.0, 257).unwrap();
        let one = ScalarField { grid: g, values: vec![1.0; g.len()] };
        let scale = WeightedScale::new(1.0).unwrap();
        assert!((weighted_norm(&one, &scale) - (4.0 * PI).sqrt()).abs() < 1e-6);
        let r = ScalarField {
            grid: g,
            values: (0..g.len())
                .map(|k| {
                    let x = g.position(k % g.n(), k / g.n());
                    (x[0] * x[0] + x[1] * x[1]).sqrt()
                })
                .collect(),
        };
        assert!((weighted_norm(&r, &scale) - (16.0 * PI).sqrt()).abs() < 1e-5);
        assert!((gaussian_mass(1.0) - 4.0 * PI).abs() < 1e-15);
    }

    #[test]
    fn constant_map_moments_vanish() {
        let u = SphereField::constant(Grid::new(8.0, 33).unwrap(), [0.0, 1.0, 0.0]).unwrap();
        let m = u.moments(&WeightedScale::new(1.0).unwrap()).unwrap();
        assert_eq!(m.phi + m.psi + m.norm_that + m.norm_t + m.norm_rdu + m.norm_rthat, 0.0);
        let setup = DiagnosticSetup { t1: 2.0, r: 1.0, e0: 0.0, center: [0.0, 0.0] };
        let rec = record_diagnostics(&u, 1.0, &setup).unwrap();
        assert_eq!(rec.phi, 0.0);
        assert_eq!(rec.psi, 0.0);
        assert_eq!(rec.delta, 0.0);
        assert_eq!(rec.s, 0.0);
        assert!(record_diagnostics(&u, 2.0, &setup).is_err());
    }

    #[test]
    fn parabolic_scaling_of_phi_and_psi() {
        // equivariant map with rapidly decaying profile; u(λ·) has profile f(λr)
        let g = Grid::new(8.0, 1025).unwrap();
        let make = |lam: f64| {
            SphereField::from_fn(g, [0.0, 0.0, 1.0], |x| {
                let r = lam * (x[0] * x[0] + x[1] * x[1]).sqrt();
                let h = 2.0 * r * (-r * r).exp();
                crate::radial::ansatz(1, x[1].atan2(x[0]), h)
            })
            .unwrap()
        };
        let u = make(1.0);
        for lam in [0.5f64, 2.0] {
            let ul = make(lam);
            let a = phi(&ul, &WeightedScale::new(1.0).unwrap());
            let b = phi(&u, &WeightedScale::new(lam * lam).unwrap());
            assert!((a / b - 1.0).abs() < 5e-3, "{lam}: {a} {b}");
            // Ψ_τ(u∘λ) = λ^{-2} Ψ_{λ²τ}(u)
            let a = psi_quantity(&ul, &WeightedScale::new(1.0).unwrap());
            let b = psi_quantity(&u, &WeightedScale::new(lam * lam).unwrap()) / (lam * lam);
            assert!((a / b - 1.0).abs() < 5e-3, "{lam}: {a} {b}");
        }
    }

    #[test]
    fn twisted_tension_of_bubble_is_radial_term() {
        let g = Grid::new(8.0, 513).unwrap();
        let u = make_bubble(g, 1, 0.5, [0.0, 0.0], &Rotation::identity()).unwrap();
        let scale = WeightedScale::new(1.0).unwrap();
        let th = twisted_tension(&u, &scale);
        let m = u.moments(&scale).unwrap();
        assert!((weighted_norm(&th, &scale) - m.norm_that).abs() < 1e-12 * m.norm_that);
        // 𝒯 ≈ 0 so ‖T̂‖ ≈ ‖x⌟du‖/2τ, exactly up to ‖𝒯‖ by the triangle inequality
        assert!((m.norm_that - 0.5 * m.norm_xdu).abs() <= m.norm_t * (1.0 + 1e-12));
        assert!(m.norm_t < 0.05 * m.norm_that, "{m:?}");
        assert!(m.norm_xdu <= m.norm_rdu);
    }

    #[test]
    fn radial_moments_match_lifted_field() {
        let r = geometric_nodes(8.0, 8e-4, 1.02).unwrap();
        // non-harmonic, pole at the origin and at the outer edge
        let p = RadialProfile::from_fn(r, 1, |x| 2.5 * x * (-x * x).exp() * (2.0 - x.min(2.0))).unwrap();
        let u = lift(&p, Grid::new(8.0, 513).unwrap()).unwrap();
        let scale = WeightedScale::new(1.0).unwrap();
        let a = p.moments(&scale).unwrap();
        let b = u.moments(&scale).unwrap();
        for (x, y) in [
            (a.phi, b.phi),
            (a.psi, b.psi),
            (a.norm_that, b.norm_that),
            (a.norm_t, b.norm_t),
            (a.norm_rdu, b.norm_rdu),
            (a.norm_xdu, b.norm_xdu),
            (a.norm_rthat, b.norm_rthat),
        ] {
            assert!((x / y - 1.0).abs() < 5e-3, "{a:?} {b:?}");
        }
    }

    #[test]
    fn phi_grows_with_tau() {
        let g = Grid::new(8.0, 129).unwrap();
        let u = make_bubble(g, 2, 0.5, [0.3, -0.4], &Rotation::identity()).unwrap();
        let mut prev = 0.0;
        for tau in [0.1, 0.5, 1.0, 2.0, 4.0] {
            let v = phi(&u, &WeightedScale::new(tau).unwrap());
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn full_accuracy_guard() {
        let s = WeightedScale::new(4.0).unwrap();
        assert!(s.full_accuracy(8.0));
        assert!(!WeightedScale::new(4.1).unwrap().full_accuracy(8.0));
        assert!(!WeightedScale::centered(4.0, [1.0, 0.0]).unwrap().full_accuracy(8.0));
        assert!(s.tail_bound(8.0, 1.0) < 2e-2);
        assert!(WeightedScale::new(0.0).is_err());
    }
}
