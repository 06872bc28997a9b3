use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::vec3::{self, Vec3};

pub const NORTH: Vec3 = [0.0, 0.0, 1.0];
pub const SOUTH: Vec3 = [0.0, 0.0, -1.0];

/// Tolerance on |u| - 1 accepted by [`SphereField`] constructors.
pub const UNIT_TOL: f64 = 1e-12;

/// Number of outer node rings pinned to the boundary value.
pub const BOUNDARY_RINGS: usize = 2;

/// Element of SO(3) stored as a row-major matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub matrix: [[f64; 3]; 3],
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation { matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    /// Rodrigues rotation about `axis` (need not be normalized) by `angle` radians.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let k = vec3::normalize(axis).ok_or_else(|| Error::InvalidParameter("rotation axis must be nonzero".into()))?;
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let [x, y, z] = k;
        Ok(Rotation {
            matrix: [
                [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
                [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
                [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
            ],
        })
    }

    /// Exact rotation by `sign`·π/2 about coordinate axis `axis` (0, 1 or 2).
    pub fn quarter_turn(axis: usize, positive: bool) -> Self {
        let s = if positive { 1.0 } else { -1.0 };
        let matrix = match axis {
            0 => [[1.0, 0.0, 0.0], [0.0, 0.0, -s], [0.0, s, 0.0]],
            1 => [[0.0, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, 0.0]],
            _ => [[0.0, -s, 0.0], [s, 0.0, 0.0], [0.0, 0.0, 1.0]],
        };
        Rotation { matrix }
    }

    #[inline]
    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.matrix;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        let mut matrix = [[0.0; 3]; 3];
        for (i, row) in matrix.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = (0..3).map(|k| self.matrix[i][k] * other.matrix[k][j]).sum();
            }
        }
        Rotation { matrix }
    }
}

/// Map from the grid to the unit sphere, pinned to a constant on the outer rings.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereField {
    grid: Grid,
    values: Vec<Vec3>,
    boundary_value: Vec3,
    metadata: BTreeMap<String, String>,
}

impl SphereField {
    /// Validating constructor: unit norm within [`UNIT_TOL`] and boundary rings equal to
    /// `boundary_value`.
    pub fn from_values(grid: Grid, values: Vec<Vec3>, boundary_value: Vec3) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!("expected {} values, got {}", grid.len(), values.len())));
        }
        if (vec3::norm(boundary_value) - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidField("boundary value is not a unit vector".into()));
        }
        let n = grid.n();
        for j in 0..n {
            for i in 0..n {
                let v = values[grid.index(i, j)];
                if !v.iter().all(|c| c.is_finite()) || (vec3::norm(v) - 1.0).abs() > UNIT_TOL {
                    return Err(Error::InvalidField(format!("node ({i},{j}) is not a unit vector")));
                }
                if grid.ring(i, j) < BOUNDARY_RINGS && vec3::norm(vec3::sub(v, boundary_value)) > UNIT_TOL {
                    return Err(Error::InvalidField(format!(
                        "boundary node ({i},{j}) differs from the boundary value"
                    )));
                }
            }
        }
        Ok(SphereField { grid, values, boundary_value, metadata: BTreeMap::new() })
    }

    pub fn constant(grid: Grid, value: Vec3) -> Result<Self> {
        let v = vec3::normalize(value).ok_or_else(|| Error::InvalidField("constant value must be nonzero".into()))?;
        Ok(SphereField { grid, values: vec![v; grid.len()], boundary_value: v, metadata: BTreeMap::new() })
    }

    /// Evaluates `f` at every node, normalizes, and pins the boundary rings.
    pub fn from_fn(grid: Grid, boundary_value: Vec3, f: impl Fn([f64; 2]) -> Vec3) -> Result<Self> {
        let b = vec3::normalize(boundary_value)
            .ok_or_else(|| Error::InvalidField("boundary value must be nonzero".into()))?;
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..n {
            for i in 0..n {
                if grid.ring(i, j) < BOUNDARY_RINGS {
                    values.push(b);
                } else {
                    let v = vec3::normalize(f(grid.position(i, j)))
                        .ok_or_else(|| Error::InvalidField(format!("map is zero or non-finite at node ({i},{j})")))?;
                    values.push(v);
                }
            }
        }
        Ok(SphereField { grid, values, boundary_value: b, metadata: BTreeMap::new() })
    }

    /// Builds a field without re-validation; callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(grid: Grid, values: Vec<Vec3>, boundary_value: Vec3) -> Self {
        SphereField { grid, values, boundary_value, metadata: BTreeMap::new() }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    pub fn boundary_value(&self) -> Vec3 {
        self.boundary_value
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    pub fn with_metadata(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Vec3 {
        self.values[self.grid.index(i, j)]
    }

    /// Applies a target rotation to every value (including the boundary value). Exact for
    /// signed permutation matrices.
    pub fn rotated(&self, q: &Rotation) -> SphereField {
        let out = SphereField {
            grid: self.grid,
            values: self.values.iter().map(|&v| q.apply(v)).collect(),
            boundary_value: q.apply(self.boundary_value),
            metadata: self.metadata.clone(),
        };
        out
    }

    /// Bilinear interpolation renormalized to the sphere; the boundary value outside the grid.
    pub fn sample(&self, x: [f64; 2]) -> Vec3 {
        if !self.grid.contains(x) {
            return self.boundary_value;
        }
        let n = self.grid.n();
        let [fx, fy] = self.grid.locate(x);
        let i0 = (fx.floor() as usize).min(n - 2);
        let j0 = (fy.floor() as usize).min(n - 2);
        let ax = fx - i0 as f64;
        let ay = fy - j0 as f64;
        let v00 = self.at(i0, j0);
        let v10 = self.at(i0 + 1, j0);
        let v01 = self.at(i0, j0 + 1);
        let v11 = self.at(i0 + 1, j0 + 1);
        let mut acc = [0.0; 3];
        for c in 0..3 {
            acc[c] = (1.0 - ax) * (1.0 - ay) * v00[c]
                + ax * (1.0 - ay) * v10[c]
                + (1.0 - ax) * ay * v01[c]
                + ax * ay * v11[c];
        }
        vec3::normalize(acc).unwrap_or_else(|| {
            let i = if ax < 0.5 { i0 } else { i0 + 1 };
            let j = if ay < 0.5 { j0 } else { j0 + 1 };
            self.at(i, j)
        })
    }

    /// Largest deviation of |u| from 1 over all nodes.
    pub fn max_norm_defect(&self) -> f64 {
        self.values.iter().map(|&v| (vec3::norm(v) - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// R^3-valued nodal field (derivatives, tensions).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField3 {
    pub grid: Grid,
    pub values: Vec<Vec3>,
}

impl VectorField3 {
    pub fn zeros(grid: Grid) -> Self {
        VectorField3 { grid, values: vec![[0.0; 3]; grid.len()] }
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|&v| vec3::norm(v)).fold(0.0, f64::max)
    }
}

/// Scalar nodal field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Symmetric 2x2 tensor per node.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    pub grid: Grid,
    pub s11: Vec<f64>,
    pub s12: Vec<f64>,
    pub s22: Vec<f64>,
}

/// C-infinity cutoff: 1 for x <= a, 0 for x >= b.
pub fn smooth_cutoff(x: f64, a: f64, b: f64) -> f64 {
    fn f(t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            (-1.0 / t).exp()
        }
    }
    if x <= a {
        return 1.0;
    }
    if x >= b {
        return 0.0;
    }
    let s = (x - a) / (b - a);
    let p = f(1.0 - s);
    let q = f(s);
    p / (p + q)
}

/// Inverse stereographic image of w: w = 0 goes to the south pole, infinity to the north pole.
#[inline]
pub fn stereographic(w_re: f64, w_im: f64) -> Vec3 {
    let w2 = w_re * w_re + w_im * w_im;
    let d = 1.0 / (w2 + 1.0);
    [2.0 * w_re * d, 2.0 * w_im * d, (w2 - 1.0) * d]
}

/// Integer power of a complex number by repeated multiplication.
#[inline]
pub fn complex_powi(re: f64, im: f64, n: u32) -> (f64, f64) {
    let (mut a, mut b) = (1.0, 0.0);
    for _ in 0..n {
        let t = a * re - b * im;
        b = a * im + b * re;
        a = t;
    }
    (a, b)
}

/// Rational harmonic map x -> Q·S(((z - center)/λ)^degree) with S the inverse stereographic
/// projection, geodesically blended to the constant Q·north on |x| in [0.8L, 0.9L].
pub fn make_bubble(grid: Grid, degree: u32, lambda: f64, center: [f64; 2], rotation: &Rotation) -> Result<SphereField> {
    if degree == 0 {
        return Err(Error::InvalidParameter("bubble degree must be at least 1".into()));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("bubble scale must be positive, got {lambda}")));
    }
    let l = grid.half_width();
    let far = rotation.apply(NORTH);
    let mut u = SphereField::from_fn(grid, far, |x| {
        let (wr, wi) = complex_powi((x[0] - center[0]) / lambda, (x[1] - center[1]) / lambda, degree);
        let v = rotation.apply(stereographic(wr, wi));
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let chi = smooth_cutoff(r, 0.8 * l, 0.9 * l);
        if chi >= 1.0 {
            v
        } else {
            vec3::slerp(far, v, chi)
        }
    })?;
    let md = u.metadata_mut();
    md.insert("kind".into(), "bubble".into());
    md.insert("degree".into(), degree.to_string());
    md.insert("lambda".into(), lambda.to_string());
    md.insert("center".into(), format!("{} {}", center[0], center[1]));
    let mut warnings = Vec::new();
    if lambda > l / 10.0 {
        warnings.push("scale exceeds L/10: truncation error not negligible");
    }
    if lambda < 2.0 * grid.spacing() {
        warnings.push("scale below 2h: under-resolved");
    }
    if !warnings.is_empty() {
        md.insert("warning".into(), warnings.join("; "));
    }
    Ok(u)
}
