//! Jones-vector and two-photon density-matrix route.
//!
//! Used as the independent check on the Stokes-space formulas in the parent
//! module. Basis ordering is `|H⟩, |V⟩` per photon and `|HH⟩, |HV⟩, |VH⟩, |VV⟩`
//! for pairs. The Stokes components of a Jones vector `(Ex, Ey)` are
//! `s1 = |Ex|² − |Ey|²`, `s2 = 2 Re(Ex* Ey)`, `s3 = 2 Im(Ex* Ey)`.

use num_complex::Complex64;

use super::{AnalyzerSetting, PolTransform, Port, StokesVector, TwoQubitPolState};

pub type Jones = [Complex64; 2];
pub type Su2 = [[Complex64; 2]; 2];
pub type Density4 = [[Complex64; 4]; 4];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// SU(2) matrix whose conjugation action on Stokes vectors is `t`.
///
/// With Pauli operators ordered `(Z, X, Y)` to match `(s1, s2, s3)`, the
/// quaternion `(w, x, y, z)` maps to `U = w·I − i(x·Z + y·X + z·Y)`.
pub fn su2_from_transform(t: &PolTransform) -> Su2 {
    let [w, x, y, z] = t.to_quaternion();
    [[c(w, -x), c(-z, -y)], [c(z, -y), c(w, x)]]
}

pub fn linear_jones(angle_deg: f64) -> Jones {
    let th = angle_deg.to_radians();
    [c(th.cos(), 0.0), c(th.sin(), 0.0)]
}

pub fn stokes_of(j: &Jones) -> StokesVector {
    let x = j[0];
    let y = j[1];
    let cross = x.conj() * y;
    let s0 = x.norm_sqr() + y.norm_sqr();
    StokesVector::normalize([
        (x.norm_sqr() - y.norm_sqr()) / s0,
        2.0 * cross.re / s0,
        2.0 * cross.im / s0,
    ])
    .expect("non-zero Jones vector")
}

pub fn apply_su2(u: &Su2, j: &Jones) -> Jones {
    [
        u[0][0] * j[0] + u[0][1] * j[1],
        u[1][0] * j[0] + u[1][1] * j[1],
    ]
}

/// `V·|Φ+⟩⟨Φ+| + (1−V)·I/4`.
pub fn density_matrix(state: &TwoQubitPolState) -> Density4 {
    let v = state.visibility();
    let mut rho = [[ZERO; 4]; 4];
    for (i, row) in rho.iter_mut().enumerate() {
        row[i] = c((1.0 - v) / 4.0, 0.0);
    }
    // |Φ+⟩ = (|HH⟩ + |VV⟩)/√2 occupies indices 0 and 3.
    for &i in &[0, 3] {
        for &j in &[0, 3] {
            rho[i][j] += c(v / 2.0, 0.0);
        }
    }
    rho
}

/// `(I ⊗ U) ρ (I ⊗ U)†`.
pub fn apply_to_idler(rho: &Density4, u: &Su2) -> Density4 {
    let mut big = [[ZERO; 4]; 4];
    for a in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                big[2 * a + i][2 * a + j] = u[i][j];
            }
        }
    }
    let mut tmp = [[ZERO; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            tmp[i][j] = (0..4).map(|k| big[i][k] * rho[k][j]).sum();
        }
    }
    let mut out = [[ZERO; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| tmp[i][k] * big[j][k].conj()).sum();
        }
    }
    out
}

/// `⟨ψ|ρ|ψ⟩` for the product state `ψ = a ⊗ b`.
pub fn project(rho: &Density4, a: &Jones, b: &Jones) -> f64 {
    let psi = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]];
    let mut acc = ZERO;
    for i in 0..4 {
        for j in 0..4 {
            acc += psi[i].conj() * rho[i][j] * psi[j];
        }
    }
    acc.re
}

fn port_jones(setting: &AnalyzerSetting, port: Port) -> Jones {
    match port {
        Port::Pass => linear_jones(setting.angle_deg()),
        Port::Fail => linear_jones(setting.angle_deg() + 90.0),
    }
}

/// Outcome probability evaluated by explicit density-matrix projection.
pub fn outcome_prob_density(
    state: &TwoQubitPolState,
    a: &AnalyzerSetting,
    pa: Port,
    b: &AnalyzerSetting,
    pb: Port,
    idler_channel: &PolTransform,
) -> f64 {
    let rho = apply_to_idler(&density_matrix(state), &su2_from_transform(idler_channel));
    project(&rho, &port_jones(a, pa), &port_jones(b, pb))
}

pub fn coincidence_prob_density(
    state: &TwoQubitPolState,
    a: &AnalyzerSetting,
    b: &AnalyzerSetting,
    idler_channel: &PolTransform,
) -> f64 {
    outcome_prob_density(state, a, Port::Pass, b, Port::Pass, idler_channel)
}
