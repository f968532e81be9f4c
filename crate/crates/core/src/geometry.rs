//! Geometric primitives and UAV state summaries.
//!
//! All positions live in a local East-North-Up frame in meters. Covariances are
//! 3x3 symmetric positive definite matrices in square meters; the [`Cov3`]
//! newtype can only be built through validating constructors.
//!
//! JSON shapes: a [`Vec3`] is a 3-array, a [`Mat3`] / [`Cov3`] is a 9-array in
//! row-major order, and a missing position is `null`.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Absolute tolerance on `|C - C^T|` accepted (and then symmetrized away) by [`Cov3::new`].
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Opaque UAV identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UavId(pub u32);

impl fmt::Display for UavId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Outer product `self * o^T`.
    pub fn outer(self, o: Vec3) -> Mat3 {
        let a = self.to_array();
        let b = o.to_array();
        let mut m = [[0.0; 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = a[r] * b[c];
            }
        }
        Mat3(m)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

impl Serialize for Vec3 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vec3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        let v = Vec3::from_array(a);
        if !v.is_finite() {
            return Err(serde::de::Error::custom("non-finite position component"));
        }
        Ok(v)
    }
}

/// Plain 3x3 matrix, row-major. Used for information and normal matrices,
/// which may be only positive semi-definite.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn diag(a: f64, b: f64, c: f64) -> Mat3 {
        Mat3([[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]])
    }

    pub fn from_row_major(v: [f64; 9]) -> Mat3 {
        Mat3([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn transpose(&self) -> Mat3 {
        let mut t = [[0.0; 3]; 3];
        for (r, row) in self.0.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                t[c][r] = *v;
            }
        }
        Mat3(t)
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut m = self.0;
        for v in m.iter_mut().flatten() {
            *v *= s;
        }
        Mat3(m)
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[r][k] * o.0[k][c]).sum();
            }
        }
        Mat3(out)
    }

    /// Adds `eps` to every diagonal entry.
    pub fn add_diag(&self, eps: f64) -> Mat3 {
        let mut m = self.0;
        for (i, row) in m.iter_mut().enumerate() {
            row[i] += eps;
        }
        Mat3(m)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_asymmetry(&self) -> f64 {
        let m = &self.0;
        (m[0][1] - m[1][0])
            .abs()
            .max((m[0][2] - m[2][0]).abs())
            .max((m[1][2] - m[2][1]).abs())
    }

    pub fn symmetrized(&self) -> Mat3 {
        let t = self.transpose();
        let mut m = [[0.0; 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = 0.5 * (self.0[r][c] + t.0[r][c]);
            }
        }
        Mat3(m)
    }

    /// Cholesky factorization of the lower triangle. `None` unless the matrix
    /// is (numerically) positive definite.
    pub fn cholesky(&self) -> Option<Cholesky3> {
        let a = &self.0;
        let mut l = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..=i {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        Some(Cholesky3 { l })
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, o: Mat3) -> Mat3 {
        let mut m = self.0;
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v += o.0[r][c];
            }
        }
        Mat3(m)
    }
}

impl AddAssign for Mat3 {
    fn add_assign(&mut self, o: Mat3) {
        *self = *self + o;
    }
}

impl Index<(usize, usize)> for Mat3 {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.0[r][c]
    }
}

impl IndexMut<(usize, usize)> for Mat3 {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.0[r][c]
    }
}

impl Serialize for Mat3 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mat3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Mat3::from_row_major(<[f64; 9]>::deserialize(d)?))
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone, Copy)]
pub struct Cholesky3 {
    l: [[f64; 3]; 3],
}

impl Cholesky3 {
    pub fn solve(&self, b: Vec3) -> Vec3 {
        let l = &self.l;
        let b = b.to_array();
        let mut y = [0.0; 3];
        for i in 0..3 {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i][k] * y[k];
            }
            y[i] = s / l[i][i];
        }
        let mut x = [0.0; 3];
        for i in (0..3).rev() {
            let mut s = y[i];
            for k in i + 1..3 {
                s -= l[k][i] * x[k];
            }
            x[i] = s / l[i][i];
        }
        Vec3::from_array(x)
    }

    pub fn inverse(&self) -> Mat3 {
        let cols = [
            self.solve(Vec3::new(1.0, 0.0, 0.0)),
            self.solve(Vec3::new(0.0, 1.0, 0.0)),
            self.solve(Vec3::new(0.0, 0.0, 1.0)),
        ];
        let mut m = [[0.0; 3]; 3];
        for (c, col) in cols.iter().enumerate() {
            let col = col.to_array();
            for r in 0..3 {
                m[r][c] = col[r];
            }
        }
        // Inverse of an SPD matrix is symmetric; remove round-off drift.
        Mat3(m).symmetrized()
    }

    pub fn factor(&self) -> Mat3 {
        Mat3(self.l)
    }
}

/// Symmetric positive definite 3x3 covariance in m^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov3(Mat3);

impl Cov3 {
    /// Validates finiteness, symmetry (symmetrizing small asymmetry) and
    /// positive definiteness via Cholesky.
    pub fn new(m: Mat3) -> Result<Cov3> {
        if !m.is_finite() {
            return Err(Error::InvalidCovariance("non-finite entry"));
        }
        if m.max_asymmetry() > SYMMETRY_TOL {
            return Err(Error::InvalidCovariance("not symmetric"));
        }
        let m = m.symmetrized();
        if m.cholesky().is_none() {
            return Err(Error::InvalidCovariance("not positive definite"));
        }
        Ok(Cov3(m))
    }

    pub fn diag(sx2: f64, sy2: f64, sz2: f64) -> Result<Cov3> {
        for v in [sx2, sy2, sz2] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidCovariance("variance must be positive and finite"));
            }
        }
        Ok(Cov3(Mat3::diag(sx2, sy2, sz2)))
    }

    pub fn identity() -> Cov3 {
        Cov3(Mat3::IDENTITY)
    }

    /// Scales every entry by `gamma`.
    pub fn inflate(&self, gamma: f64) -> Result<Cov3> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::param("gamma", format!("must be positive and finite, got {gamma}")));
        }
        Cov3::new(self.0.scale(gamma))
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    /// Information matrix `C^-1`.
    pub fn inverse(&self) -> Mat3 {
        self.cholesky().inverse()
    }

    pub fn cholesky(&self) -> Cholesky3 {
        self.0
            .cholesky()
            .expect("Cov3 invariant: positive definite")
    }
}

impl Serialize for Cov3 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Cov3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = Mat3::deserialize(d)?;
        Cov3::new(m).map_err(serde::de::Error::custom)
    }
}

/// Diagonal covariance from three variances.
pub fn make_cov_diag(sx2: f64, sy2: f64, sz2: f64) -> Result<Cov3> {
    Cov3::diag(sx2, sy2, sz2)
}

pub fn inflate_cov(c: &Cov3, gamma: f64) -> Result<Cov3> {
    c.inflate(gamma)
}

pub fn cov_trace(c: &Cov3) -> f64 {
    c.trace()
}

/// A position estimate together with its covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub position: Vec3,
    pub covariance: Cov3,
}

impl Estimate {
    pub fn new(position: Vec3, covariance: Cov3) -> Self {
        Self {
            position,
            covariance,
        }
    }
}

/// What a UAV knows (or broadcasts) about its own position at one epoch.
/// A missing fix has neither position nor covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateSummaryRepr", into = "StateSummaryRepr")]
pub struct StateSummary {
    pub uav_id: UavId,
    pub epoch: u64,
    fix: Option<Estimate>,
}

impl StateSummary {
    pub fn present(uav_id: UavId, epoch: u64, position: Vec3, covariance: Cov3) -> Self {
        Self {
            uav_id,
            epoch,
            fix: Some(Estimate::new(position, covariance)),
        }
    }

    pub fn missing(uav_id: UavId, epoch: u64) -> Self {
        Self {
            uav_id,
            epoch,
            fix: None,
        }
    }

    pub fn fix(&self) -> Option<&Estimate> {
        self.fix.as_ref()
    }

    pub fn position(&self) -> Option<Vec3> {
        self.fix.map(|f| f.position)
    }

    pub fn covariance(&self) -> Option<Cov3> {
        self.fix.map(|f| f.covariance)
    }

    pub fn is_missing(&self) -> bool {
        self.fix.is_none()
    }
}

#[derive(Serialize, Deserialize)]
struct StateSummaryRepr {
    uav_id: UavId,
    epoch: u64,
    position: Option<Vec3>,
    covariance: Option<Cov3>,
}

impl From<StateSummary> for StateSummaryRepr {
    fn from(s: StateSummary) -> Self {
        Self {
            uav_id: s.uav_id,
            epoch: s.epoch,
            position: s.position(),
            covariance: s.covariance(),
        }
    }
}

impl TryFrom<StateSummaryRepr> for StateSummary {
    type Error = String;

    fn try_from(r: StateSummaryRepr) -> std::result::Result<Self, String> {
        match (r.position, r.covariance) {
            (Some(p), Some(c)) => Ok(StateSummary::present(r.uav_id, r.epoch, p, c)),
            (None, None) => Ok(StateSummary::missing(r.uav_id, r.epoch)),
            (Some(_), None) => Err("position present without covariance".into()),
            (None, Some(_)) => Err("covariance present without position".into()),
        }
    }
}

/// Output of the refinement for one UAV and epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedState {
    pub position: Vec3,
    pub covariance: Cov3,
    pub epoch: u64,
}

impl RefinedState {
    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.position, self.covariance)
    }
}
