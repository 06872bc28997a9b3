//! Deterministic test maps for the inequality checks.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::dirichlet_energy;
use crate::digest::InputDigest;
use crate::error::Result;
use crate::field::{make_bubble, smooth_cutoff, Rotation, SphereField, NORTH};
use crate::grid::Grid;
use crate::radial::{geometric_nodes, lift, RadialProfile};
use crate::vec3::{self, Vec3};

/// Energy cap 4π·3 shared by every member.
pub const ENERGY_CAP: f64 = 12.0 * PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MapSpec {
    Bubble {
        degree: u32,
        lambda: f64,
        center: [f64; 2],
        axis: Vec3,
        angle: f64,
    },
    /// Bubble plus amplitude·e^{−|x−c|²/w²}·cos(k·x + phase)·dir before renormalization.
    PerturbedBubble {
        degree: u32,
        lambda: f64,
        center: [f64; 2],
        amplitude: f64,
        mode: [f64; 2],
        phase: f64,
        dir: Vec3,
    },
    /// Lifted m-equivariant map with the given angle profile.
    Equivariant {
        m: u32,
        amplitude: f64,
        lambda: f64,
        profile: ProfileShape,
    },
    /// normalize(base + χ(|x|)·Σ a_j cos(k_j·x + φ_j) v_j), χ a cutoff on [2, 5].
    RandomSmooth {
        base: Vec3,
        modes: Vec<([f64; 2], f64, f64, Vec3)>,
    },
    Constant {
        value: Vec3,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileShape {
    /// amplitude·2·atan(r/λ); amplitude should be an integer so the far field is a pole.
    Arctan,
    /// amplitude·ρ^m·e^{m(1−ρ²)/2}, ρ = r/λ: peaks at r = λ and returns to the north pole.
    Bump,
}

impl ProfileShape {
    pub fn eval(self, m: u32, amplitude: f64, lambda: f64, r: f64) -> f64 {
        let rho = r / lambda;
        match self {
            ProfileShape::Arctan => amplitude * 2.0 * rho.atan(),
            ProfileShape::Bump => amplitude * rho.powi(m as i32) * (0.5 * m as f64 * (1.0 - rho * rho)).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMember {
    pub name: String,
    /// How the member was made, e.g. "closed-form bubble" or "seeded band-limited field".
    pub provenance: String,
    pub spec: MapSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub seed: u64,
    pub members: Vec<CorpusMember>,
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n2 = vec3::norm2(v);
        if n2 > 1e-4 && n2 <= 1.0 {
            return vec3::scale(1.0 / n2.sqrt(), v);
        }
    }
}

impl MapSpec {
    /// Evaluates the member on a grid. Random fields whose energy would exceed the cap are
    /// damped by halving their amplitudes, deterministically.
    pub fn build(&self, grid: Grid) -> Result<SphereField> {
        match self {
            MapSpec::Bubble { degree, lambda, center, axis, angle } => {
                let q = Rotation::from_axis_angle(*axis, *angle)?;
                make_bubble(grid, *degree, *lambda, *center, &q)
            }
            MapSpec::PerturbedBubble { degree, lambda, center, amplitude, mode, phase, dir } => {
                let base = make_bubble(grid, *degree, *lambda, *center, &Rotation::identity())?;
                let l = grid.half_width();
                let width = 0.25 * l;
                SphereField::from_fn(grid, base.boundary_value(), |x| {
                    let (a, b) = (x[0] - center[0], x[1] - center[1]);
                    let env =
                        (-(a * a + b * b) / (width * width)).exp() * smooth_cutoff(x[0].hypot(x[1]), 0.6 * l, 0.8 * l);
                    let w = amplitude * env * (mode[0] * x[0] + mode[1] * x[1] + phase).cos();
                    vec3::add(base.sample(x), vec3::scale(w, *dir))
                })
            }
            MapSpec::Equivariant { m, amplitude, lambda, profile } => {
                let nodes = geometric_nodes(grid.half_width(), 1e-4 * grid.half_width(), 1.02)?;
                let p = RadialProfile::from_fn(nodes, *m, |r| profile.eval(*m, *amplitude, *lambda, r))?;
                lift(&p, grid)
            }
            MapSpec::RandomSmooth { base, modes } => {
                let mut damp = 1.0;
                loop {
                    let u = SphereField::from_fn(grid, *base, |x| {
                        let chi = smooth_cutoff(x[0].hypot(x[1]), 2.0, 5.0);
                        let mut v = *base;
                        for (k, a, ph, dir) in modes {
                            let w = damp * a * chi * (k[0] * x[0] + k[1] * x[1] + ph).cos();
                            v = vec3::axpy(w, *dir, v);
                        }
                        v
                    })?;
                    if dirichlet_energy(&u) <= ENERGY_CAP || damp < 1e-3 {
                        return Ok(u);
                    }
                    damp *= 0.5;
                }
            }
            MapSpec::Constant { value } => SphereField::constant(grid, *value),
        }
    }
}

/// At least 30 maps: bubbles of degree 1–2, offset and rotated bubbles, perturbed bubbles,
/// equivariant profiles, band-limited random fields and a constant map.
pub fn generate_corpus(seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members = Vec::new();
    let mut push = |name: String, provenance: &str, spec: MapSpec| {
        members.push(CorpusMember { name, provenance: provenance.into(), spec });
    };
    for (deg, lambda) in [(1, 0.25), (1, 0.5), (1, 1.0), (2, 0.5), (2, 1.0)] {
        push(
            format!("bubble-d{deg}-l{lambda}"),
            "closed-form bubble",
            MapSpec::Bubble { degree: deg, lambda, center: [0.0, 0.0], axis: [0.0, 0.0, 1.0], angle: 0.0 },
        );
    }
    for i in 0..5 {
        let degree = 1 + (i % 2) as u32;
        let lambda = rng.gen_range(0.25..1.0);
        let center = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
        let axis = random_unit(&mut rng);
        let angle = rng.gen_range(0.0..PI);
        push(
            format!("bubble-moved-{i}"),
            "offset and rotated bubble",
            MapSpec::Bubble { degree, lambda, center, axis, angle },
        );
    }
    for i in 0..8 {
        let degree = 1 + (i % 2) as u32;
        let lambda = rng.gen_range(0.3..1.0);
        let center = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let amplitude = rng.gen_range(0.05..0.4);
        let mode = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let phase = rng.gen_range(0.0..2.0 * PI);
        let dir = random_unit(&mut rng);
        push(
            format!("perturbed-{i}"),
            "bubble with seeded smooth perturbation",
            MapSpec::PerturbedBubble { degree, lambda, center, amplitude, mode, phase, dir },
        );
    }
    use ProfileShape::{Arctan, Bump};
    let shapes = [
        (1, 1.0, 0.7, Arctan),
        (2, 1.0, 0.8, Arctan),
        (1, 1.5, 0.8, Bump),
        (1, 2.5, 1.0, Bump),
        (2, 1.0, 0.7, Bump),
        (1, 0.5, 0.5, Bump),
    ];
    for (i, (m, amplitude, lambda, profile)) in shapes.into_iter().enumerate() {
        push(
            format!("equivariant-{i}"),
            "lifted equivariant profile",
            MapSpec::Equivariant { m, amplitude, lambda, profile },
        );
    }
    for i in 0..8 {
        let base = random_unit(&mut rng);
        let count = rng.gen_range(2..5);
        let modes = (0..count)
            .map(|_| {
                let k = [rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)];
                (k, rng.gen_range(0.2..0.8), rng.gen_range(0.0..2.0 * PI), random_unit(&mut rng))
            })
            .collect();
        push(format!("random-{i}"), "seeded band-limited field", MapSpec::RandomSmooth { base, modes });
    }
    push("constant".into(), "constant map", MapSpec::Constant { value: NORTH });
    Corpus { seed, members }
}

impl Corpus {
    /// Per-member content digests of the maps built on `grid`.
    pub fn digests(&self, grid: Grid) -> Result<Vec<String>> {
        use rayon::prelude::*;
        self.members.par_iter().map(|m| Ok(m.spec.build(grid)?.digest_hex())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(7);
        assert_eq!(a, generate_corpus(7));
        assert_ne!(a, generate_corpus(8));
        assert!(a.members.len() >= 30);
        let g = Grid::new(8.0, 65).unwrap();
        assert_eq!(a.digests(g).unwrap(), generate_corpus(7).digests(g).unwrap());
    }

    #[test]
    fn members_respect_the_energy_cap() {
        use crate::weighted::{Diagnosable, WeightedScale};
        let g = Grid::new(8.0, 129).unwrap();
        let w = WeightedScale::new(1.0).unwrap();
        let mut strong = 0;
        for m in generate_corpus(2024).members {
            let u = m.spec.build(g).unwrap();
            let e = dirichlet_energy(&u);
            assert!(e <= ENERGY_CAP, "{} has energy {e}", m.name);
            if u.moments(&w).unwrap().norm_that.powi(2) > 1.0 {
                strong += 1;
            }
        }
        assert!(strong >= 5, "only {strong} members with large tension moment");
    }
}
