//! Polarization calculus on the Poincaré sphere.
//!
//! Pure states of polarization are unit Stokes vectors `(s1, s2, s3)` and
//! lossless fiber or controller transformations are proper rotations of the
//! sphere. Two-photon states are the visibility-parameterized family
//! `V·|Φ+⟩⟨Φ+| + (1−V)·I/4`; their coincidence statistics are evaluated here
//! from the Stokes-space correlation tensor, and independently in [`jones`]
//! by explicit density-matrix projection.

pub mod jones;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum deviation of `|s|` from 1 accepted by [`StokesVector::new`].
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

pub type Mat3 = [[f64; 3]; 3];

/// Normalized Stokes vector of a fully polarized state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesVector {
    s1: f64,
    s2: f64,
    s3: f64,
}

impl StokesVector {
    pub const H: StokesVector = StokesVector { s1: 1.0, s2: 0.0, s3: 0.0 };
    pub const V: StokesVector = StokesVector { s1: -1.0, s2: 0.0, s3: 0.0 };
    pub const D: StokesVector = StokesVector { s1: 0.0, s2: 1.0, s3: 0.0 };
    pub const A: StokesVector = StokesVector { s1: 0.0, s2: -1.0, s3: 0.0 };
    pub const R: StokesVector = StokesVector { s1: 0.0, s2: 0.0, s3: 1.0 };
    pub const L: StokesVector = StokesVector { s1: 0.0, s2: 0.0, s3: -1.0 };

    /// Builds a Stokes vector from components that must already lie on the
    /// unit sphere (within [`NORM_TOLERANCE`]). The result is renormalized.
    pub fn new(s1: f64, s2: f64, s3: f64) -> Result<Self> {
        let norm = (s1 * s1 + s2 * s2 + s3 * s3).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::invalid(format!(
                "Stokes vector ({s1}, {s2}, {s3}) has norm {norm}, expected 1"
            )));
        }
        Ok(StokesVector {
            s1: s1 / norm,
            s2: s2 / norm,
            s3: s3 / norm,
        })
    }

    /// Projects any non-zero vector onto the sphere.
    pub fn normalize(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::invalid("cannot normalize a zero or non-finite vector"));
        }
        Ok(StokesVector {
            s1: v[0] / norm,
            s2: v[1] / norm,
            s3: v[2] / norm,
        })
    }

    /// Linear polarization at `angle_deg` from horizontal: `(cos 2θ, sin 2θ, 0)`.
    pub fn linear(angle_deg: f64) -> Self {
        let two_theta = 2.0 * angle_deg.to_radians();
        StokesVector {
            s1: two_theta.cos(),
            s2: two_theta.sin(),
            s3: 0.0,
        }
    }

    /// Uniformly distributed point on the sphere.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let v: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            if let Ok(s) = Self::normalize(v) {
                return s;
            }
        }
    }

    pub fn s1(&self) -> f64 {
        self.s1
    }

    pub fn s2(&self) -> f64 {
        self.s2
    }

    pub fn s3(&self) -> f64 {
        self.s3
    }

    pub fn components(&self) -> [f64; 3] {
        [self.s1, self.s2, self.s3]
    }

    pub fn dot(&self, other: &StokesVector) -> f64 {
        self.s1 * other.s1 + self.s2 * other.s2 + self.s3 * other.s3
    }

    /// Orthogonal state (antipode on the sphere).
    pub fn orthogonal(&self) -> Self {
        StokesVector {
            s1: -self.s1,
            s2: -self.s2,
            s3: -self.s3,
        }
    }

    /// Great-circle angle to `other` in radians.
    pub fn angle_to(&self, other: &StokesVector) -> f64 {
        self.dot(other).clamp(-1.0, 1.0).acos()
    }
}

/// Fidelity `|⟨ψa|ψb⟩|² = (1 + a·b)/2` between two pure states.
pub fn sop_fidelity(a: &StokesVector, b: &StokesVector) -> f64 {
    (0.5 * (1.0 + a.dot(b))).clamp(0.0, 1.0)
}

/// Stokes angle (radians) at which the fidelity equals `fidelity`.
pub fn angle_for_fidelity(fidelity: f64) -> f64 {
    (2.0 * fidelity - 1.0).clamp(-1.0, 1.0).acos()
}

/// Proper rotation of the Poincaré sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolTransform {
    m: Mat3,
}

impl Default for PolTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl PolTransform {
    pub fn identity() -> Self {
        PolTransform {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Accepts a matrix only if it is orthogonal with unit determinant.
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let t = PolTransform { m };
        if t.orthogonality_error() > ROTATION_TOLERANCE
            || (det(&m) - 1.0).abs() > ROTATION_TOLERANCE
        {
            return Err(Error::invalid("matrix is not a proper rotation"));
        }
        Ok(t)
    }

    /// Right-handed rotation by `angle` radians about `axis` (Rodrigues).
    pub fn rotation(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        PolTransform {
            m: [
                [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
                [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
                [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
            ],
        }
    }

    pub fn about_s1(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        PolTransform {
            m: [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        }
    }

    pub fn about_s2(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        PolTransform {
            m: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        }
    }

    pub fn about_s3(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        PolTransform {
            m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Linear retarder with fast axis at `fast_axis_deg`. Same sign
    /// convention as the usual Mueller retarder matrix, i.e. a rotation by
    /// `-retardance` about `(cos 2θ, sin 2θ, 0)`.
    pub fn retarder(fast_axis_deg: f64, retardance: f64) -> Self {
        Self::rotation(StokesVector::linear(fast_axis_deg).components(), -retardance)
    }

    pub fn half_wave_plate(fast_axis_deg: f64) -> Self {
        Self::retarder(fast_axis_deg, std::f64::consts::PI)
    }

    pub fn quarter_wave_plate(fast_axis_deg: f64) -> Self {
        Self::retarder(fast_axis_deg, std::f64::consts::FRAC_PI_2)
    }

    /// Haar-uniform rotation, drawn from a normalized Gaussian quaternion.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let q: [f64; 4] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-12 {
                return Self::from_quaternion([q[0] / n, q[1] / n, q[2] / n, q[3] / n]);
            }
        }
    }

    /// Rotation from a unit quaternion `(w, x, y, z)`.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let [w, x, y, z] = q;
        PolTransform {
            m: [
                [
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - w * z),
                    2.0 * (x * z + w * y),
                ],
                [
                    2.0 * (x * y + w * z),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - w * x),
                ],
                [
                    2.0 * (x * z - w * y),
                    2.0 * (y * z + w * x),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            ],
        }
    }

    /// Unit quaternion `(w, x, y, z)` with `w ≥ 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let m = &self.m;
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > 0.0 {
            let s = 2.0 * (trace + 1.0).sqrt();
            [
                0.25 * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            ]
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = 2.0 * (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt();
            [
                (m[2][1] - m[1][2]) / s,
                0.25 * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            ]
        } else if m[1][1] > m[2][2] {
            let s = 2.0 * (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt();
            [
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                0.25 * s,
                (m[1][2] + m[2][1]) / s,
            ]
        } else {
            let s = 2.0 * (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt();
            [
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                0.25 * s,
            ]
        };
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
        [sign * q[0] / n, sign * q[1] / n, sign * q[2] / n, sign * q[3] / n]
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn apply(&self, s: &StokesVector) -> StokesVector {
        let v = mat_vec(&self.m, &s.components());
        // Rotations preserve the norm up to rounding; renormalize anyway.
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        StokesVector {
            s1: v[0] / n,
            s2: v[1] / n,
            s3: v[2] / n,
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &PolTransform) -> PolTransform {
        PolTransform {
            m: mat_mul(&self.m, &other.m),
        }
    }

    pub fn inverse(&self) -> PolTransform {
        PolTransform {
            m: transpose(&self.m),
        }
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let tr = self.trace();
        ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    /// Largest entry of `|R·Rᵀ − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let p = mat_mul(&self.m, &transpose(&self.m));
        let mut err: f64 = 0.0;
        for (i, row) in p.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((v - target).abs());
            }
        }
        err
    }

    pub fn determinant(&self) -> f64 {
        det(&self.m)
    }

    pub fn is_valid(&self) -> bool {
        self.orthogonality_error() <= ROTATION_TOLERANCE
            && (self.determinant() - 1.0).abs() <= ROTATION_TOLERANCE
    }

    /// Gram-Schmidt on the rows; removes accumulated rounding drift after
    /// long products.
    pub fn orthonormalize(&mut self) {
        let [r0, r1, _] = self.m;
        let n0 = norm(&r0);
        let e0 = [r0[0] / n0, r0[1] / n0, r0[2] / n0];
        let d = dot3(&e0, &r1);
        let u1 = [r1[0] - d * e0[0], r1[1] - d * e0[1], r1[2] - d * e0[2]];
        let n1 = norm(&u1);
        let e1 = [u1[0] / n1, u1[1] / n1, u1[2] / n1];
        let e2 = cross(&e0, &e1);
        self.m = [e0, e1, e2];
    }
}

/// Linear polarization analyzer setting, reduced modulo 180°.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerSetting {
    angle_deg: f64,
}

impl AnalyzerSetting {
    pub const H: AnalyzerSetting = AnalyzerSetting { angle_deg: 0.0 };
    pub const D: AnalyzerSetting = AnalyzerSetting { angle_deg: 45.0 };
    pub const V: AnalyzerSetting = AnalyzerSetting { angle_deg: 90.0 };
    pub const A: AnalyzerSetting = AnalyzerSetting { angle_deg: 135.0 };

    pub fn new(angle_deg: f64) -> Self {
        let mut a = angle_deg.rem_euclid(180.0);
        if a >= 180.0 {
            a = 0.0;
        }
        AnalyzerSetting { angle_deg: a }
    }

    pub fn angle_deg(&self) -> f64 {
        self.angle_deg
    }

    /// Stokes vector of the transmitted (pass) port.
    pub fn stokes(&self) -> StokesVector {
        StokesVector::linear(self.angle_deg)
    }

    /// Setting whose pass port is this setting's reflected port.
    pub fn orthogonal(&self) -> Self {
        Self::new(self.angle_deg + 90.0)
    }
}

/// Which output of a polarizing beam splitter registered the photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Port {
    Pass,
    Fail,
}

impl Port {
    pub const BOTH: [Port; 2] = [Port::Pass, Port::Fail];

    fn sign(self) -> f64 {
        match self {
            Port::Pass => 1.0,
            Port::Fail => -1.0,
        }
    }
}

/// Werner-like mixture around |Φ+⟩ with visibility `V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoQubitPolState {
    visibility: f64,
}

/// Diagonal of the |Φ+⟩ correlation tensor in `(s1, s2, s3)` coordinates.
const PHI_PLUS_CORRELATIONS: [f64; 3] = [1.0, 1.0, -1.0];

impl TwoQubitPolState {
    pub fn new(visibility: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&visibility) {
            return Err(Error::invalid(format!(
                "visibility {visibility} outside [0, 1]"
            )));
        }
        Ok(TwoQubitPolState { visibility })
    }

    pub fn phi_plus() -> Self {
        TwoQubitPolState { visibility: 1.0 }
    }

    pub fn visibility(&self) -> f64 {
        self.visibility
    }

    /// Joint detection probability for analyzer states with Stokes vectors
    /// `signal` and `idler` (the latter already referred back through the
    /// channel).
    fn projector_prob(&self, signal: &[f64; 3], idler: &[f64; 3]) -> f64 {
        let corr: f64 = (0..3)
            .map(|k| PHI_PLUS_CORRELATIONS[k] * signal[k] * idler[k])
            .sum();
        0.25 * (1.0 + self.visibility * corr)
    }
}

/// Idler analyzer Stokes vector referred back to the fiber input: `Rᵀ·n`.
fn idler_at_source(b: &AnalyzerSetting, port: Port, idler_channel: &PolTransform) -> [f64; 3] {
    let n = b.stokes().components().map(|v| v * port.sign());
    mat_vec(&transpose(idler_channel.matrix()), &n)
}

/// Probability that the signal exits port `pa` of analyzer `a` and the idler,
/// after `idler_channel`, exits port `pb` of analyzer `b`.
pub fn outcome_prob(
    state: &TwoQubitPolState,
    a: &AnalyzerSetting,
    pa: Port,
    b: &AnalyzerSetting,
    pb: Port,
    idler_channel: &PolTransform,
) -> f64 {
    let m = a.stokes().components().map(|v| v * pa.sign());
    let n = idler_at_source(b, pb, idler_channel);
    state.projector_prob(&m, &n)
}

/// Probability that both photons pass their linear analyzers.
pub fn coincidence_prob(
    state: &TwoQubitPolState,
    a: &AnalyzerSetting,
    b: &AnalyzerSetting,
    idler_channel: &PolTransform,
) -> f64 {
    outcome_prob(state, a, Port::Pass, b, Port::Pass, idler_channel)
}

/// Correlation `E(a, b) = P++ + P−− − P+− − P−+`.
pub fn correlation(
    state: &TwoQubitPolState,
    a: &AnalyzerSetting,
    b: &AnalyzerSetting,
    idler_channel: &PolTransform,
) -> f64 {
    let mut e = 0.0;
    for pa in Port::BOTH {
        for pb in Port::BOTH {
            e += pa.sign() * pb.sign() * outcome_prob(state, a, pa, b, pb, idler_channel);
        }
    }
    e
}

/// The four analyzer settings of a CHSH test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshAngles {
    pub a: AnalyzerSetting,
    pub a_prime: AnalyzerSetting,
    pub b: AnalyzerSetting,
    pub b_prime: AnalyzerSetting,
}

impl ChshAngles {
    /// 0°, 45° on the signal side and 22.5°, 67.5° on the idler side.
    pub fn canonical() -> Self {
        ChshAngles {
            a: AnalyzerSetting::new(0.0),
            a_prime: AnalyzerSetting::new(45.0),
            b: AnalyzerSetting::new(22.5),
            b_prime: AnalyzerSetting::new(67.5),
        }
    }

    /// Setting pairs in the order they enter `S`, with their signs.
    pub fn terms(&self) -> [(AnalyzerSetting, AnalyzerSetting, f64); 4] {
        [
            (self.a, self.b, 1.0),
            (self.a, self.b_prime, -1.0),
            (self.a_prime, self.b, 1.0),
            (self.a_prime, self.b_prime, 1.0),
        ]
    }
}

/// `S = E(a,b) − E(a,b′) + E(a′,b) + E(a′,b′)`.
pub fn chsh_expected(
    state: &TwoQubitPolState,
    idler_channel: &PolTransform,
    angles: &ChshAngles,
) -> f64 {
    angles
        .terms()
        .iter()
        .map(|(a, b, sign)| sign * correlation(state, a, b, idler_channel))
        .sum()
}

pub(crate) fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub(crate) fn mat_vec(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub(crate) fn transpose(a: &Mat3) -> Mat3 {
    [
        [a[0][0], a[1][0], a[2][0]],
        [a[0][1], a[1][1], a[2][1]],
        [a[0][2], a[1][2], a[2][2]],
    ]
}

fn det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &[f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
