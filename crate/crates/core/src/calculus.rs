//! Finite-difference operators on sphere-valued grid fields.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{ScalarField, SphereField, SymTensorField, VectorField3};
use crate::grid::Grid;
use crate::vec3::{self, sym_sum3, Vec3};

/// Row-parallel nodal map producing one output per node.
pub(crate) fn map_nodes<T: Send + Clone + Default>(grid: &Grid, f: impl Fn(usize, usize) -> T + Sync) -> Vec<T> {
    let n = grid.n();
    let mut out = vec![T::default(); grid.len()];
    out.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        for (i, slot) in row.iter_mut().enumerate() {
            *slot = f(i, j);
        }
    });
    out
}

/// Row-parallel sum with a fixed reduction order (per-row partial sums added sequentially),
/// so results do not depend on thread scheduling.
pub(crate) fn sum_nodes(grid: &Grid, f: impl Fn(usize, usize) -> f64 + Sync) -> f64 {
    let n = grid.n();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut s = 0.0;
            for i in 0..n {
                s += f(i, j);
            }
            s
        })
        .collect();
    rows.iter().sum()
}

/// Component-wise version of [`sum_nodes`] for several integrands at once.
pub(crate) fn sum_nodes_array<const K: usize>(grid: &Grid, f: impl Fn(usize, usize) -> [f64; K] + Sync) -> [f64; K] {
    let n = grid.n();
    let rows: Vec<[f64; K]> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut s = [0.0; K];
            for i in 0..n {
                let v = f(i, j);
                for c in 0..K {
                    s[c] += v[c];
                }
            }
            s
        })
        .collect();
    let mut acc = [0.0; K];
    for row in rows {
        for c in 0..K {
            acc[c] += row[c];
        }
    }
    acc
}

/// Second-order derivative of a line of values at position k (uniform spacing h).
#[inline]
fn line_derivative(get: impl Fn(usize) -> Vec3, k: usize, n: usize, h: f64) -> Vec3 {
    let inv = 1.0 / (2.0 * h);
    if k == 0 {
        let (a, b, c) = (get(0), get(1), get(2));
        std::array::from_fn(|d| (4.0 * (b[d] - a[d]) - (c[d] - a[d])) * inv)
    } else if k == n - 1 {
        let (a, b, c) = (get(n - 1), get(n - 2), get(n - 3));
        std::array::from_fn(|d| ((c[d] - a[d]) - 4.0 * (b[d] - a[d])) * inv)
    } else {
        let (p, m) = (get(k + 1), get(k - 1));
        std::array::from_fn(|d| (p[d] - m[d]) * inv)
    }
}

#[inline]
pub(crate) fn d1_at(values: &[Vec3], grid: &Grid, i: usize, j: usize) -> Vec3 {
    let n = grid.n();
    line_derivative(|k| values[j * n + k], i, n, grid.spacing())
}

#[inline]
pub(crate) fn d2_at(values: &[Vec3], grid: &Grid, i: usize, j: usize) -> Vec3 {
    let n = grid.n();
    line_derivative(|k| values[k * n + i], j, n, grid.spacing())
}

/// (∂_1 u, ∂_2 u): central differences inside, one-sided second order on the edges.
pub fn gradient(u: &SphereField) -> (VectorField3, VectorField3) {
    let g = *u.grid();
    let v = u.values();
    let d1 = map_nodes(&g, |i, j| d1_at(v, &g, i, j));
    let d2 = map_nodes(&g, |i, j| d2_at(v, &g, i, j));
    (VectorField3 { grid: g, values: d1 }, VectorField3 { grid: g, values: d2 })
}

#[inline]
pub(crate) fn central_density_at(values: &[Vec3], grid: &Grid, i: usize, j: usize) -> f64 {
    vec3::norm2(d1_at(values, grid, i, j)) + vec3::norm2(d2_at(values, grid, i, j))
}

/// |du|^2 = |∂_1 u|^2 + |∂_2 u|^2 per node from [`gradient`].
pub fn energy_density(u: &SphereField) -> ScalarField {
    let g = *u.grid();
    let v = u.values();
    ScalarField { grid: g, values: map_nodes(&g, |i, j| central_density_at(v, &g, i, j)) }
}

/// Edge form of |du|^2 at a node: ½ Σ over grid neighbours of |u_nb − u|² / h².
///
/// Equals −⟨Δ_h u, u⟩ for unit fields, and half its grid sum times h² is the edge energy
/// returned by [`dirichlet_energy`].
#[inline]
pub(crate) fn edge_density_at(values: &[Vec3], grid: &Grid, i: usize, j: usize) -> f64 {
    let n = grid.n();
    let c = values[j * n + i];
    let mut s = 0.0;
    let mut add = |w: Vec3| {
        let d = vec3::sub(w, c);
        s += sym_sum3(d[0] * d[0], d[1] * d[1], d[2] * d[2]);
    };
    if i > 0 {
        add(values[j * n + i - 1]);
    }
    if i + 1 < n {
        add(values[j * n + i + 1]);
    }
    if j > 0 {
        add(values[(j - 1) * n + i]);
    }
    if j + 1 < n {
        add(values[(j + 1) * n + i]);
    }
    0.5 * s / (grid.spacing() * grid.spacing())
}

/// Edge-based node density (see [`edge_density_at`]).
pub fn edge_energy_density(u: &SphereField) -> ScalarField {
    let g = *u.grid();
    let v = u.values();
    ScalarField { grid: g, values: map_nodes(&g, |i, j| edge_density_at(v, &g, i, j)) }
}

/// Discrete Dirichlet energy ½ Σ_edges |u_a − u_b|².
///
/// This is the energy whose exact gradient is −h² times the projected 5-point Laplacian,
/// i.e. the quantity that [`tension`] and the grid flow decrease.
pub fn dirichlet_energy(u: &SphereField) -> f64 {
    let g = *u.grid();
    let n = g.n();
    let v = u.values();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut s = 0.0;
            for i in 0..n {
                let c = v[j * n + i];
                if i + 1 < n {
                    s += vec3::norm2(vec3::sub(v[j * n + i + 1], c));
                }
                if j + 1 < n {
                    s += vec3::norm2(vec3::sub(v[(j + 1) * n + i], c));
                }
            }
            s
        })
        .collect();
    0.5 * rows.iter().sum::<f64>()
}

#[inline]
pub(crate) fn laplacian_at(values: &[Vec3], grid: &Grid, i: usize, j: usize) -> Vec3 {
    let n = grid.n();
    let inv = 1.0 / (grid.spacing() * grid.spacing());
    let c = values[j * n + i];
    let (w, e) = (values[j * n + i - 1], values[j * n + i + 1]);
    let (s, no) = (values[(j - 1) * n + i], values[(j + 1) * n + i]);
    std::array::from_fn(|d| ((w[d] + e[d]) + (s[d] + no[d]) - 4.0 * c[d]) * inv)
}

/// Tension at an interior node: Δ_h u + |du|²_h u with |du|²_h = −⟨Δ_h u, u⟩, i.e. the
/// tangential part of the 5-point Laplacian. Zero on the outermost ring.
#[inline]
pub(crate) fn tension_at(values: &[Vec3], grid: &Grid, i: usize, j: usize) -> Vec3 {
    if grid.ring(i, j) == 0 {
        return [0.0; 3];
    }
    let lap = laplacian_at(values, grid, i, j);
    let u = values[grid.index(i, j)];
    let du2 = -vec3::dot(lap, u);
    vec3::axpy(du2, u, lap)
}

pub fn tension(u: &SphereField) -> VectorField3 {
    let g = *u.grid();
    let v = u.values();
    VectorField3 { grid: g, values: map_nodes(&g, |i, j| tension_at(v, &g, i, j)) }
}

/// First variation of [`dirichlet_energy`] along a tangent field ξ vanishing on the pinned
/// rings: d/dε E(u + εξ)|₀ = −h² Σ ⟨𝒯(u), ξ⟩ (summation by parts; ξ ⟂ u removes the normal
/// part of the Laplacian).
pub fn energy_first_variation(u: &SphereField, xi: &VectorField3) -> f64 {
    let g = *u.grid();
    let v = u.values();
    let n = g.n();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| (0..n).map(|i| vec3::dot(tension_at(v, &g, i, j), xi.values[j * n + i])).sum())
        .collect();
    -g.cell_area() * rows.iter().sum::<f64>()
}

/// Trace-free stress-energy tensor S_ij = ⟨∂_i u, ∂_j u⟩ − ½ δ_ij |du|².
pub fn stress_energy(u: &SphereField) -> SymTensorField {
    let (d1, d2) = gradient(u);
    let g = *u.grid();
    let s11: Vec<f64> =
        d1.values.iter().zip(&d2.values).map(|(&a, &b)| 0.5 * (vec3::norm2(a) - vec3::norm2(b))).collect();
    let s12: Vec<f64> = d1.values.iter().zip(&d2.values).map(|(&a, &b)| vec3::dot(a, b)).collect();
    let s22: Vec<f64> = s11.iter().map(|&x| -x).collect();
    SymTensorField { grid: g, s11, s12, s22 }
}

/// max over nodes with ring >= 2 and j in {1,2} of |div(S)_j − ⟨tension, ∂_j u⟩|.
pub fn stress_divergence_residual(u: &SphereField) -> f64 {
    let g = *u.grid();
    let n = g.n();
    let h = g.spacing();
    let s = stress_energy(u);
    let (d1, d2) = gradient(u);
    let t = tension(u);
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut worst: f64 = 0.0;
            for i in 0..n {
                if g.ring(i, j) < 2 {
                    continue;
                }
                let at = |f: &[f64], di: isize, dj: isize| {
                    f[g.index((i as isize + di) as usize, (j as isize + dj) as usize)]
                };
                let dx = |f: &[f64]| (at(f, 1, 0) - at(f, -1, 0)) / (2.0 * h);
                let dy = |f: &[f64]| (at(f, 0, 1) - at(f, 0, -1)) / (2.0 * h);
                let div1 = dx(&s.s11) + dy(&s.s12);
                let div2 = dx(&s.s12) + dy(&s.s22);
                let k = g.index(i, j);
                let r1 = (div1 - vec3::dot(t.values[k], d1.values[k])).abs();
                let r2 = (div2 - vec3::dot(t.values[k], d2.values[k])).abs();
                worst = worst.max(r1).max(r2);
            }
            worst
        })
        .collect();
    rows.into_iter().fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalEnergy {
    pub energy: f64,
    /// The disk is not contained in the grid; the value covers the intersection only.
    pub clipped: bool,
}

/// Index range of nodes whose coordinate lies within [lo, hi].
fn node_span(grid: &Grid, lo: f64, hi: f64) -> Option<(usize, usize)> {
    let h = grid.spacing();
    let l = grid.half_width();
    let n = grid.n() as isize;
    let a = (((lo + l) / h).ceil() as isize).max(0);
    let b = (((hi + l) / h).floor() as isize).min(n - 1);
    if a > b {
        None
    } else {
        Some((a as usize, b as usize))
    }
}

/// ½ Σ_{|x−c| < radius} |du|²_h h² using the edge node density.
pub fn local_energy(u: &SphereField, center: [f64; 2], radius: f64) -> LocalEnergy {
    let g = *u.grid();
    let v = u.values();
    let r2 = radius * radius;
    let l = g.half_width();
    let clipped =
        center[0] - radius < -l || center[0] + radius > l || center[1] - radius < -l || center[1] + radius > l;
    let (Some((i0, i1)), Some((j0, j1))) =
        (node_span(&g, center[0] - radius, center[0] + radius), node_span(&g, center[1] - radius, center[1] + radius))
    else {
        return LocalEnergy { energy: 0.0, clipped };
    };
    let rows: Vec<f64> = (j0..=j1)
        .into_par_iter()
        .map(|j| {
            let mut s = 0.0;
            for i in i0..=i1 {
                let x = g.position(i, j);
                let (a, b) = (x[0] - center[0], x[1] - center[1]);
                if a * a + b * b < r2 {
                    s += edge_density_at(v, &g, i, j);
                }
            }
            s
        })
        .collect();
    LocalEnergy { energy: 0.5 * g.cell_area() * rows.iter().sum::<f64>(), clipped }
}
