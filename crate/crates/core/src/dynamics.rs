//! Conditional-propagator engine: branch unitaries for decoupling sequences,
//! modulation factors for single spins, pseudo-spin pairs and the exact
//! two-nucleus reference, and the composed total signal.
//!
//! Hamiltonians here carry angular coefficients (rad/s) of spin-1/2 operators
//! S = sigma/2 plus a scalar offset; everything outside this module stays in
//! linear Hz.

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    larmor_frequency, CarbonPair, DDSequence, EnvironmentModel, FieldConfig, PhysicalConstants,
    SingleCarbon, Trace,
};

pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;

/// Rounding-drift control: propagators are renormalized after this many
/// accumulated matrix multiplications.
const RENORM_EVERY: u64 = 1024;

/// Coefficients (rad/s) of h . S plus a scalar offset, for S = sigma/2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hamiltonian2 {
    pub hx: f64,
    pub hy: f64,
    pub hz: f64,
    pub offset: f64,
}

impl Hamiltonian2 {
    pub fn new(hx: f64, hy: f64, hz: f64) -> Self {
        Hamiltonian2 { hx, hy, hz, offset: 0.0 }
    }

    pub fn norm(&self) -> f64 {
        (self.hx * self.hx + self.hy * self.hy + self.hz * self.hz).sqrt()
    }
}

/// A 2x2 unitary with its numerical unitarity defect available for checks.
#[derive(Clone, Debug, PartialEq)]
pub struct Unitary2(Mat2);

impl Unitary2 {
    pub fn matrix(&self) -> &Mat2 {
        &self.0
    }

    /// Max-entry deviation of U U^dagger from the identity.
    pub fn unitarity_defect(&self) -> f64 {
        unitarity_defect2(&self.0)
    }
}

/// A 4x4 unitary over the two-nucleus space.
#[derive(Clone, Debug, PartialEq)]
pub struct Unitary4(Mat4);

impl Unitary4 {
    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }

    pub fn unitarity_defect(&self) -> f64 {
        let d = self.0 * self.0.adjoint() - Mat4::identity();
        d.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

fn unitarity_defect2(m: &Mat2) -> f64 {
    let d = m * m.adjoint() - Mat2::identity();
    d.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Closed-form exp(-i (h.S + offset) t) for S = sigma/2:
/// cos(|h|t/2) I - i sin(|h|t/2) (h_hat . sigma), times the offset phase.
pub(crate) fn su2_mat(h: &Hamiltonian2, t: f64) -> Mat2 {
    let norm = h.norm();
    let half = 0.5 * norm * t;
    let c = half.cos();
    let s = half.sin();
    let (nx, ny, nz) = if norm > 0.0 {
        (h.hx / norm, h.hy / norm, h.hz / norm)
    } else {
        (0.0, 0.0, 0.0)
    };
    let mut u = Mat2::new(
        C64::new(c, -s * nz),
        C64::new(-s * ny, -s * nx),
        C64::new(s * ny, -s * nx),
        C64::new(c, s * nz),
    );
    if h.offset != 0.0 {
        u *= C64::from_polar(1.0, -h.offset * t);
    }
    u
}

/// exp(-i (h.S + offset) t) via the closed-form axis-angle expression.
pub fn su2_exponential(h: &Hamiltonian2, t: f64) ->Unitary2 {
    Unitary2(su2_mat(h, t))
}

/// One Newton step of the polar decomposition; pulls a near-unitary matrix
/// back onto the unitary manifold.
fn reunitarize2(m: Mat2) -> Mat2 {
    match m.adjoint().try_inverse() {
        Some(inv_adj) => (m + inv_adj) * C64::new(0.5, 0.0),
        None => m,
    }
}

fn reunitarize4(m: Mat4) -> Mat4 {
    match m.adjoint().try_inverse() {
        Some(inv_adj) => (m + inv_adj) * C64::new(0.5, 0.0),
        None => m,
    }
}

struct MultCounter {
    count: u64,
}

impl MultCounter {
    fn new() -> Self {
        MultCounter { count: 0 }
    }

    fn tick(&mut self) -> bool {
        self.count += 1;
        if self.count >= RENORM_EVERY {
            self.count = 0;
            true
        } else {
            false
        }
    }
}

fn pow2(base: Mat2, mut k: u64, counter: &mut MultCounter) -> Mat2 {
    let mut acc = Mat2::identity();
    let mut b = base;
    while k > 0 {
        if k & 1 == 1 {
            acc = b * acc;
            if counter.tick() {
                acc = reunitarize2(acc);
            }
        }
        k >>= 1;
        if k > 0 {
            b = b * b;
            if counter.tick() {
                b = reunitarize2(b);
            }
        }
    }
    acc
}

fn pow4(base: Mat4, mut k: u64, counter: &mut MultCounter) -> Mat4 {
    let mut acc = Mat4::identity();
    let mut b = base;
    while k > 0 {
        if k & 1 == 1 {
            acc = b * acc;
            if counter.tick() {
                acc = reunitarize4(acc);
            }
        }
        k >>= 1;
        if k > 0 {
            b = b * b;
            if counter.tick() {
                b = reunitarize4(b);
            }
        }
    }
    acc
}

/// Branch propagators for (tau - pi - tau)^N with ideal instantaneous pulses.
///
/// Per pulse unit, starting from branch label b: evolve tau under H_b, toggle
/// the label, evolve tau under the toggled Hamiltonian. U0 starts from b = 0,
/// U1 from b = 1. The N units are composed as powers of the symmetric
/// two-unit block, which is the same product in a different association order.
pub(crate) fn dd_branch_mats(
    h0: &Hamiltonian2,
    h1: &Hamiltonian2,
    n_pulses: u32,
    tau_s: f64,
) -> (Mat2, Mat2) {
    if n_pulses == 0 {
        return (Mat2::identity(), Mat2::identity());
    }
    let a = su2_mat(h0, tau_s);
    let b = su2_mat(h1, tau_s);
    let v0 = a * b * b * a;
    let v1 = b * a * a * b;
    let half = u64::from(n_pulses) / 2;
    let mut counter = MultCounter::new();
    let mut u0 = pow2(v0, half, &mut counter);
    let mut u1 = pow2(v1, half, &mut counter);
    if n_pulses % 2 == 1 {
        u0 = (b * a) * u0;
        u1 = (a * b) * u1;
    }
    (u0, u1)
}

/// Conditional evolution operators (U0, U1) of a two-level environment under
/// the decoupling sequence, for the electron starting in ms = 0 and ms = -1.
pub fn dd_branch_propagators(
    h0: &Hamiltonian2,
    h1: &Hamiltonian2,
    seq: &DDSequence,
) -> (Unitary2, Unitary2) {
    let (u0, u1) = dd_branch_mats(h0, h1, seq.n_pulses, seq.tau_s());
    (Unitary2(u0), Unitary2(u1))
}

/// Re Tr(U0 U1^dagger) / 2 in [-1, 1].
pub(crate) fn coherence_overlap2(u0: &Mat2, u1: &Mat2) -> f64 {
    0.5 * (u0 * u1.adjoint()).trace().re
}

/// Branch Hamiltonians of one nuclear spin: h0 = omega_0 I_z and
/// h1 = (omega_0 - A_par) I_z + A_perp I_x, all angular.
pub fn single_branch_hamiltonians(
    spin: &SingleCarbon,
    omega0_hz: f64,
) -> (Hamiltonian2, Hamiltonian2) {
    let tau = std::f64::consts::TAU;
    let h0 = Hamiltonian2::new(0.0, 0.0, tau * omega0_hz);
    let h1 = Hamiltonian2::new(tau * spin.a_perp, 0.0, tau * (omega0_hz - spin.a_par));
    (h0, h1)
}

pub(crate) fn single_spin_modulation_at(spin: &SingleCarbon, omega0_hz: f64, seq: &DDSequence) -> f64 {
    let (h0, h1) = single_branch_hamiltonians(spin, omega0_hz);
    let (u0, u1) = dd_branch_mats(&h0, &h1, seq.n_pulses, seq.tau_s());
    coherence_overlap2(&u0, &u1)
}

/// Electron-coherence modulation factor of one isolated nuclear spin,
/// Re Tr(U0 U1^dagger) / 2 in [-1, 1].
pub fn single_spin_modulation(
    spin: &SingleCarbon,
    field: &FieldConfig,
    constants: &PhysicalConstants,
    seq: &DDSequence,
) -> f64 {
    single_spin_modulation_at(spin, larmor_frequency(field, constants), seq)
}

/// Pseudo-spin branch Hamiltonians of a 13C-13C pair: h0 = X S_x,
/// h1 = X S_x + Z S_z (angular).
pub fn pair_branch_hamiltonians(pair: &CarbonPair) -> (Hamiltonian2, Hamiltonian2) {
    let tau = std::f64::consts::TAU;
    let h0 = Hamiltonian2::new(tau * pair.x, 0.0, 0.0);
    let h1 = Hamiltonian2::new(tau * pair.x, 0.0, tau * pair.z);
    (h0, h1)
}

/// Modulation factor of one pair, 1/2 + Re Tr(U0 U1^dagger) / 4 in [0, 1].
/// The additive 1/2 carries the non-decohering parallel-spin subspace.
pub fn pair_modulation(pair: &CarbonPair, seq: &DDSequence) -> f64 {
    let (h0, h1) = pair_branch_hamiltonians(pair);
    let (u0, u1) = dd_branch_mats(&h0, &h1, seq.n_pulses, seq.tau_s());
    0.5 + 0.25 * (u0 * u1.adjoint()).trace().re
}

fn pauli(axis: usize) -> Mat2 {
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    match axis {
        0 => Mat2::new(z, one, one, z),
        1 => Mat2::new(z, -i, i, z),
        _ => Mat2::new(one, z, z, -one),
    }
}

fn inf_norm4(m: &Mat4) -> f64 {
    (0..4)
        .map(|r| (0..4).map(|c| m[(r, c)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// exp(-i H t) by scaling and squaring with a Taylor series; H in rad/s.
pub(crate) fn expm4(h: &Mat4, t: f64) -> Mat4 {
    let m = h * C64::new(0.0, -t);
    let norm = inf_norm4(&m);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let x = m / C64::new(2f64.powi(s), 0.0);
    let mut acc = Mat4::identity();
    let mut term = Mat4::identity();
    for k in 1..=24 {
        term = (term * x) / C64::new(k as f64, 0.0);
        acc += term;
        if inf_norm4(&term) < 1e-18 {
            break;
        }
    }
    for _ in 0..s {
        acc = acc * acc;
    }
    acc
}

fn dd_branch_mats4(h0: &Mat4, h1: &Mat4, n_pulses: u32, tau_s: f64) -> (Mat4, Mat4) {
    if n_pulses == 0 {
        return (Mat4::identity(), Mat4::identity());
    }
    let a = expm4(h0, tau_s);
    let b = expm4(h1, tau_s);
    let v0 = a * b * b * a;
    let v1 = b * a * a * b;
    let half = u64::from(n_pulses) / 2;
    let mut counter = MultCounter::new();
    let mut u0 = pow4(v0, half, &mut counter);
    let mut u1 = pow4(v1, half, &mut counter);
    if n_pulses % 2 == 1 {
        u0 = (b * a) * u0;
        u1 = (a * b) * u1;
    }
    (u0, u1)
}

/// The exact two-nucleus branch Hamiltonians (angular, 4x4) for the electron
/// in ms = 0 and ms = -1, with the full untruncated inter-nuclear coupling
/// tensor (Hz).
pub(crate) fn two_nucleus_hamiltonians(
    spin1: &SingleCarbon,
    spin2: &SingleCarbon,
    coupling_tensor: &[[f64; 3]; 3],
    omega0_hz: f64,
) -> Result<(Mat4, Mat4)> {
    let max_abs = coupling_tensor
        .iter()
        .flatten()
        .map(|c| c.abs())
        .fold(0.0, f64::max);
    let asym = (0..3)
        .flat_map(|a| (0..3).map(move |b| (a, b)))
        .map(|(a, b)| (coupling_tensor[a][b] - coupling_tensor[b][a]).abs())
        .fold(0.0, f64::max);
    if asym > 1e-9 * max_abs.max(1.0) {
        return Err(Error::NonHermitianTensor(asym));
    }

    let id = Mat2::identity();
    let tau = std::f64::consts::TAU;
    let mut h_nn = Mat4::zeros();
    for a in 0..3 {
        for b in 0..3 {
            if coupling_tensor[a][b] != 0.0 {
                let coeff = C64::new(tau * coupling_tensor[a][b] * 0.25, 0.0);
                h_nn += pauli(a).kronecker(&pauli(b)) * coeff;
            }
        }
    }
    let iz1 = pauli(2).kronecker(&id) * C64::new(0.5, 0.0);
    let iz2 = id.kronecker(&pauli(2)) * C64::new(0.5, 0.0);
    let ix1 = pauli(0).kronecker(&id) * C64::new(0.5, 0.0);
    let ix2 = id.kronecker(&pauli(0)) * C64::new(0.5, 0.0);

    let w0 = tau * omega0_hz;
    let h0 = h_nn + (iz1 + iz2) * C64::new(w0, 0.0);
    let h1 = h_nn
        + iz1 * C64::new(w0 - tau * spin1.a_par, 0.0)
        + ix1 * C64::new(tau * spin1.a_perp, 0.0)
        + iz2 * C64::new(w0 - tau * spin2.a_par, 0.0)
        + ix2 * C64::new(tau * spin2.a_perp, 0.0);
    Ok((h0, h1))
}

/// Exact two-nucleus modulation factor: the infinite-temperature average over
/// the 4-dimensional nuclear space, 1/2 + Re Tr(U0 U1^dagger) / 8 in [0, 1].
///
/// This is the reference the pseudo-spin pair model is checked against; it
/// keeps the full inter-nuclear coupling tensor and both hyperfine vectors.
pub fn exact_pair_oracle(
    spin1: &SingleCarbon,
    spin2: &SingleCarbon,
    coupling_tensor: &[[f64; 3]; 3],
    field: &FieldConfig,
    constants: &PhysicalConstants,
    seq: &DDSequence,
) -> Result<f64> {
    let omega0 = larmor_frequency(field, constants);
    let (h0, h1) = two_nucleus_hamiltonians(spin1, spin2, coupling_tensor, omega0)?;
    let (u0, u1) = dd_branch_mats4(&h0, &h1, seq.n_pulses, seq.tau_s());
    Ok(0.5 + 0.125 * (u0 * u1.adjoint()).trace().re)
}

/// A microscopic (two spins + dipolar tensor) realization of a pseudo-spin
/// pair: hyperfine components consistent with the pair's gradient Z and a
/// point-dipole tensor along the pair's lattice geometry scaled to reproduce
/// |X|. Used to drive the exact oracle for a tabulated pair.
pub fn pair_microscopic_realization(
    pair: &CarbonPair,
    field: &FieldConfig,
) -> Result<(SingleCarbon, SingleCarbon, [[f64; 3]; 3])> {
    let geometry = pair.geometry.ok_or_else(|| {
        Error::InvalidInput(format!("pair {} carries no lattice geometry", pair.label))
    })?;
    let v = [geometry[0] as f64, geometry[1] as f64, geometry[2] as f64];
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let r_hat = [v[0] / norm, v[1] / norm, v[2] / norm];
    let b = {
        let d = field.b_direction;
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        [d[0] / n, d[1] / n, d[2] / n]
    };
    let cos = r_hat[0] * b[0] + r_hat[1] * b[1] + r_hat[2] * b[2];
    let angular_factor = 1.0 - 3.0 * cos * cos;
    if angular_factor.abs() < 1e-6 {
        return Err(Error::InvalidInput(format!(
            "pair {} lies at the magic angle; |X| cannot be matched",
            pair.label
        )));
    }
    // Full point-dipole tensor K (delta_ab - 3 r_a r_b); K chosen so the
    // embedded flip-flop strength equals |x|.
    let k = 2.0 * pair.x.abs() / angular_factor.abs();
    let mut tensor = [[0.0; 3]; 3];
    for (a, row) in tensor.iter_mut().enumerate() {
        for (bi, cell) in row.iter_mut().enumerate() {
            let delta = if a == bi { 1.0 } else { 0.0 };
            *cell = k * (delta - 3.0 * r_hat[a] * r_hat[bi]);
        }
    }
    // Equal perpendicular components put the whole gradient in the parallel
    // part: Z = A_par_1 - A_par_2.
    let a_perp = 3e3;
    let spin1 = SingleCarbon::new(format!("{}-a", pair.label), 0.5 * pair.z, a_perp);
    let spin2 = SingleCarbon::new(format!("{}-b", pair.label), -0.5 * pair.z, a_perp);
    Ok((spin1, spin2, tensor))
}

/// Which constituents and factors enter the total signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SignalOptions {
    pub apply_envelope: bool,
    pub include_bath: bool,
    pub include_singles: bool,
}

impl Default for SignalOptions {
    fn default() -> Self {
        SignalOptions { apply_envelope: true, include_bath: true, include_singles: true }
    }
}

impl SignalOptions {
    /// Pairs-plus-envelope mode: the single-spin and bath factors are dropped,
    /// as when the delay sits on the revival grid.
    pub fn pairs_only() -> Self {
        SignalOptions { apply_envelope: true, include_bath: false, include_singles: false }
    }
}

fn modulation_product_with_omega0(
    model: &EnvironmentModel,
    seq: &DDSequence,
    options: SignalOptions,
    carbon_omega0: &[f64],
) -> f64 {
    debug_assert_eq!(carbon_omega0.len(), model.carbons.len());
    let constants = PhysicalConstants::default();
    let bath_omega0 = larmor_frequency(&model.field, &constants);
    let mut m = 1.0;
    if options.include_singles {
        for (spin, &w0) in model.carbons.iter().zip(carbon_omega0) {
            m *= single_spin_modulation_at(spin, w0, seq);
        }
    }
    if options.include_bath {
        for spin in &model.bath {
            m *= single_spin_modulation_at(spin, bath_omega0, seq);
        }
    }
    for pair in &model.pairs {
        m *= pair_modulation(pair, seq);
    }
    m
}

/// Product of all constituent modulation factors, without amplitude or
/// envelope.
pub(crate) fn modulation_product(
    model: &EnvironmentModel,
    seq: &DDSequence,
    options: SignalOptions,
) -> f64 {
    let constants = PhysicalConstants::default();
    let w0 = larmor_frequency(&model.field, &constants);
    let omega0 = vec![w0; model.carbons.len()];
    modulation_product_with_omega0(model, seq, options, &omega0)
}

pub(crate) fn total_dd_signal_with_carbon_omega0(
    model: &EnvironmentModel,
    seq: &DDSequence,
    options: SignalOptions,
    carbon_omega0: &[f64],
) -> f64 {
    let m = modulation_product_with_omega0(model, seq, options, carbon_omega0);
    let envelope = if options.apply_envelope { model.envelope.decay(seq.total_time()) } else { 1.0 };
    0.5 + model.envelope.amplitude * m * envelope
}

/// Total decoupling signal F in [0, 1]:
/// F = 1/2 + A * M_bath * prod M_C * prod M_pair * exp(-(t/T)^n), t = 2 N tau.
pub fn total_dd_signal(model: &EnvironmentModel, seq: &DDSequence, options: SignalOptions) -> f64 {
    let constants = PhysicalConstants::default();
    let w0 = larmor_frequency(&model.field, &constants);
    let omega0 = vec![w0; model.carbons.len()];
    total_dd_signal_with_carbon_omega0(model, seq, options, &omega0)
}

/// Evaluates the total signal over a tau grid. Grid points are independent
/// and may be computed concurrently; the output order follows the input order
/// and is bitwise independent of the worker count.
pub fn dd_signal_sweep(
    model: &EnvironmentModel,
    n_pulses: u32,
    taus_ns: &[u64],
    options: SignalOptions,
) -> Vec<f64> {
    taus_ns
        .par_iter()
        .map(|&tau_ns| {
            let seq = DDSequence { n_pulses, tau_ns, phase_scheme: "XY8".into() };
            total_dd_signal(model, &seq, options)
        })
        .collect()
}

/// Electron state during Ramsey free evolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsState {
    Zero,
    MinusOne,
    PlusOne,
}

impl MsState {
    pub fn as_str(&self) -> &'static str {
        match self {
            MsState::Zero => "0",
            MsState::MinusOne => "-1",
            MsState::PlusOne => "+1",
        }
    }
}

/// Free-induction signal of one nuclear spin:
/// F(t) = 1/2 + 1/2 exp(-(t/T2*)^2) cos(2 pi (f_ms + detuning) t).
pub fn ramsey_trace(
    spin: &SingleCarbon,
    ms: MsState,
    detuning_hz: f64,
    t2_star: f64,
    times: &[f64],
    field: &FieldConfig,
    constants: &PhysicalConstants,
) -> Result<Trace> {
    let (w0, w1) = crate::model::single_spin_split_frequencies(spin, field, constants);
    let f_ms = match ms {
        MsState::Zero => w0,
        MsState::MinusOne => w1,
        MsState::PlusOne => crate::model::single_spin_plus_frequency(spin, field, constants),
    };
    let f_total = f_ms + detuning_hz;
    let values = times
        .iter()
        .map(|&t| {
            0.5 + 0.5
                * (-(t / t2_star).powi(2)).exp()
                * (std::f64::consts::TAU * f_total * t).cos()
        })
        .collect();
    Ok(Trace::new(times.to_vec(), values)?
        .with_meta("sequence", "ramsey")
        .with_meta("ms", ms.as_str())
        .with_meta("spin", &spin.label)
        .with_meta("frequency_hz", f_total))
}
