//! Resonance analysis, pair-spectroscopy protocol simulation, the
//! field-misalignment frequency model, and tailored-sequence synthesis.

use nalgebra::Vector2;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    dd_branch_mats, modulation_product, pair_branch_hamiltonians, su2_mat,
    total_dd_signal_with_carbon_omega0, Hamiltonian2, Mat2, Mat4, MsState, SignalOptions,
};
use crate::error::{Error, Result};
use crate::model::{
    larmor_frequency, single_spin_split_frequencies, CarbonPair, DDSequence, EnvironmentModel,
    FieldConfig, PhysicalConstants, Trace,
};

/// Coupling-ratio regimes of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    XDominant,
    ZDominant,
    Intermediate,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::XDominant => "X>>Z",
            Regime::ZDominant => "Z>>X",
            Regime::Intermediate => "intermediate",
        }
    }
}

/// Resonance data of one pair: pseudo-spin frequency, the tau_k ladder, and
/// the coupling regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResonances {
    /// sqrt(X^2 + (Z/2)^2) (Hz, linear).
    pub omega: f64,
    /// tau_k = (2k - 1) / (4 omega), k = 1..=k_max (s).
    pub taus: Vec<f64>,
    pub regime: Regime,
}

/// Electron coherence is lost at tau_k = (2k - 1) / (4 omega) with
/// omega = sqrt(X^2 + (Z/2)^2).
pub fn pair_resonance_taus(pair: &CarbonPair, k_max: usize) -> Result<PairResonances> {
    if pair.x == 0.0 && pair.z == 0.0 {
        return Err(Error::DegeneratePair);
    }
    let omega = (pair.x * pair.x + 0.25 * pair.z * pair.z).sqrt();
    let tau1 = 1.0 / (4.0 * omega);
    let taus = (1..=k_max).map(|k| (2 * k - 1) as f64 * tau1).collect();
    Ok(PairResonances { omega, taus, regime: regime_classify(pair, DEFAULT_REGIME_RATIO) })
}

pub const DEFAULT_REGIME_RATIO: f64 = 5.0;

/// X >> Z when |X| >= ratio * Z; Z >> X when Z >= ratio * |X|.
pub fn regime_classify(pair: &CarbonPair, ratio_threshold: f64) -> Regime {
    if pair.x.abs() >= ratio_threshold * pair.z {
        Regime::XDominant
    } else if pair.z >= ratio_threshold * pair.x.abs() {
        Regime::ZDominant
    } else {
        Regime::Intermediate
    }
}

/// Revival delay m / f_L rounded to the 1 ns grid.
pub fn revival_tau_ns(field: &FieldConfig, constants: &PhysicalConstants, m: u32) -> u64 {
    let f_l = larmor_frequency(field, constants);
    (1e9 * m as f64 / f_l).round() as u64
}

/// The revival grid tau = m / f_L for m = 1..=m_max, on the 1 ns grid.
pub fn revival_grid(
    field: &FieldConfig,
    constants: &PhysicalConstants,
    m_max: u32,
) -> Result<Vec<u64>> {
    if m_max < 1 {
        return Err(Error::InvalidInput("m_max must be at least 1".into()));
    }
    Ok((1..=m_max).map(|m| revival_tau_ns(field, constants, m)).collect())
}

/// Net rotation of one branch propagator in axis-angle form; the angle is
/// folded to [0, pi] with the axis carrying the orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle {
    pub axis: [f64; 3],
    pub angle: f64,
}

/// Axis-angle characters of both branch rotations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateCharacter {
    pub branch0: AxisAngle,
    pub branch1: AxisAngle,
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

fn axis_angle(u: &Mat2) -> AxisAngle {
    let det = u.determinant();
    let phase = det.sqrt();
    let su = if phase.norm() > 0.0 { u / phase } else { *u };
    let c = 0.5 * su.trace().re;
    let i = C64::new(0.0, 1.0);
    let v = [
        (i * (pauli(0) * su).trace() * C64::new(0.5, 0.0)).re,
        (i * (pauli(1) * su).trace() * C64::new(0.5, 0.0)).re,
        (i * (pauli(2) * su).trace() * C64::new(0.5, 0.0)).re,
    ];
    let s = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let mut angle = 2.0 * s.atan2(c);
    let mut axis = if s > 1e-14 { [v[0] / s, v[1] / s, v[2] / s] } else { [0.0, 0.0, 1.0] };
    if angle > std::f64::consts::PI {
        angle = 2.0 * std::f64::consts::PI - angle;
        axis = [-axis[0], -axis[1], -axis[2]];
    }
    AxisAngle { axis, angle }
}

/// Decomposes the two branch propagators of a pair under the sequence into
/// net rotations.
pub fn gate_character(pair: &CarbonPair, seq: &DDSequence) -> GateCharacter {
    let (h0, h1) = pair_branch_hamiltonians(pair);
    let (u0, u1) = dd_branch_mats(&h0, &h1, seq.n_pulses, seq.tau_s());
    GateCharacter { branch0: axis_angle(&u0), branch1: axis_angle(&u1) }
}

/// Density matrix over electron (x) pseudo-spin, basis |e, n> with the
/// electron index major.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState(Mat4);

impl JointState {
    pub fn new(rho: Mat4) -> Result<Self> {
        let asym = (rho - rho.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max);
        if asym > 1e-9 {
            return Err(Error::InvalidInput(format!("joint state not Hermitian ({asym:.2e})")));
        }
        if (rho.trace().re - 1.0).abs() > 1e-9 || rho.trace().im.abs() > 1e-9 {
            return Err(Error::InvalidInput("joint state trace differs from 1".into()));
        }
        let shifted = rho + Mat4::identity() * C64::new(1e-9, 0.0);
        if nalgebra::linalg::Cholesky::new(shifted).is_none() {
            return Err(Error::InvalidInput("joint state not positive semidefinite".into()));
        }
        Ok(JointState(rho))
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }
}

fn conditional_gate(u0: &Mat2, u1: &Mat2) -> Mat4 {
    let mut w = Mat4::zeros();
    for r in 0..2 {
        for c in 0..2 {
            w[(r, c)] = u0[(r, c)];
            w[(2 + r, 2 + c)] = u1[(r, c)];
        }
    }
    w
}

/// <e_bra (x) n | rho | e_bra (x) n'> as a 2x2 matrix over the pseudo-spin.
fn project_electron(rho: &Mat4, e_bra: &Vector2<C64>) -> Mat2 {
    let mut out = Mat2::zeros();
    for n in 0..2 {
        for np in 0..2 {
            let mut acc = C64::new(0.0, 0.0);
            for e in 0..2 {
                for ep in 0..2 {
                    acc += e_bra[e].conj() * rho[(2 * e + n, 2 * ep + np)] * e_bra[ep];
                }
            }
            out[(n, np)] = acc;
        }
    }
    out
}

fn x_plus() -> Vector2<C64> {
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    Vector2::new(s, s)
}

fn y_plus() -> Vector2<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Vector2::new(C64::new(s, 0.0), C64::new(0.0, s))
}

/// Correlate-and-project block: electron in |x>, conditional branch evolution,
/// projection on the + outcome of the rotated readout. Returns the
/// unnormalized post-selected pseudo-spin state; its trace is the outcome
/// probability.
fn entangling_block(u0: &Mat2, u1: &Mat2, rho_ps: &Mat2) -> Mat2 {
    let w = conditional_gate(u0, u1);
    let xp = x_plus();
    let mut electron = Mat2::zeros();
    for r in 0..2 {
        for c in 0..2 {
            electron[(r, c)] = xp[r] * xp[c].conj();
        }
    }
    let rho4 = electron.kronecker(rho_ps);
    let rho4 = w * rho4 * w.adjoint();
    project_electron(&rho4, &y_plus())
}

/// Simulated pair Ramsey spectroscopy: entangle-and-measure preparation,
/// free evolution with the electron in an eigenstate, mirrored readout.
///
/// The gate block follows the pair's coupling regime: for Z >> X and ms = 0
/// the initial +x pseudo-spin state is an eigenstate of H0, so an extra
/// segment of H1 evolution of duration 1 / (4 sqrt(X^2 + Z^2)) rotates it
/// into a superposition before the free evolution, and the readout mirrors
/// that segment. The artificial detuning acts as a z rotation at the given
/// rate during free evolution. Readout phase is fixed so that the t = 0
/// correlation is maximal.
pub fn simulate_pair_spectroscopy(
    pair: &CarbonPair,
    ms_during_evolution: MsState,
    gate: &DDSequence,
    detuning_hz: f64,
    times: &[f64],
) -> Result<Trace> {
    if pair.x == 0.0 && pair.z == 0.0 {
        return Err(Error::DegeneratePair);
    }
    let (h0, h1) = pair_branch_hamiltonians(pair);
    let (u0, u1) = dd_branch_mats(&h0, &h1, gate.n_pulses, gate.tau_s());

    let character = GateCharacter { branch0: axis_angle(&u0), branch1: axis_angle(&u1) };
    let quarter = std::f64::consts::FRAC_PI_2;
    let gate_ok = (character.branch0.angle - quarter).abs() <= 0.2 * quarter
        && (character.branch1.angle - quarter).abs() <= 0.2 * quarter;

    // Preparation: maximally mixed pseudo-spin, post-selected on the +
    // electron outcome.
    let rho_mixed = Mat2::identity() * C64::new(0.5, 0.0);
    let selected = entangling_block(&u0, &u1, &rho_mixed);
    let p_plus = selected.trace().re;
    if p_plus < 1e-12 {
        return Err(Error::ZeroNormBranch);
    }
    let mut rho = selected / C64::new(p_plus, 0.0);
    // Invariant check on the post-selected state, lifted to the joint space
    // with the electron in the measured eigenstate.
    JointState::new(conditional_gate(&rho, &Mat2::zeros()))?;

    let regime = regime_classify(pair, DEFAULT_REGIME_RATIO);
    let needs_rotation = regime == Regime::ZDominant && ms_during_evolution == MsState::Zero;
    let prep_extra = if needs_rotation {
        let t_prep = 1.0 / (4.0 * (pair.x * pair.x + pair.z * pair.z).sqrt());
        Some(su2_mat(&h1, t_prep))
    } else {
        None
    };
    if let Some(v) = &prep_extra {
        rho = v * rho * v.adjoint();
    }

    let h_free = match ms_during_evolution {
        MsState::Zero => h0,
        MsState::MinusOne => h1,
        MsState::PlusOne => {
            return Err(Error::InvalidInput("pair spectroscopy uses ms in {0, -1}".into()))
        }
    };
    let h_evol = Hamiltonian2 {
        hz: h_free.hz + std::f64::consts::TAU * detuning_hz,
        ..h_free
    };

    let values: Vec<f64> = times
        .iter()
        .map(|&t| {
            let e = su2_mat(&h_evol, t);
            let mut rho_t = e * rho * e.adjoint();
            if let Some(v) = &prep_extra {
                rho_t = v.adjoint() * rho_t * v;
            }
            let readout = entangling_block(&u0, &u1, &rho_t);
            (readout.trace().re / rho_t.trace().re).clamp(0.0, 1.0)
        })
        .collect();

    let mut trace = Trace::new(times.to_vec(), values)?
        .with_meta("sequence", "pair-spectroscopy")
        .with_meta("pair", &pair.label)
        .with_meta("ms", ms_during_evolution.as_str())
        .with_meta("detuning_hz", detuning_hz)
        .with_meta("postselect_probability", p_plus);
    if !gate_ok {
        trace = trace.with_meta(
            "gate_warning",
            format!(
                "conditional rotation off pi/2 by more than 20% (angles {:.4}, {:.4})",
                character.branch0.angle, character.branch1.angle
            ),
        );
    }
    Ok(trace)
}

/// Hyperfine gradient from the two measured pseudo-spin frequencies:
/// Z = sqrt(omega_1^2 - omega_0^2).
pub fn infer_z(omega0: f64, omega1: f64) -> Result<f64> {
    if omega0 < 0.0 || omega1 < omega0 {
        return Err(Error::FrequencyOrdering { omega0, omega1 });
    }
    Ok((omega1 * omega1 - omega0 * omega0).sqrt())
}

/// Bare nuclear precession frequency under a misaligned field, through the
/// hyperfine-dependent effective g-tensor:
/// omega_0 = gamma_c sqrt([Bx(1 + eta A_xx)]^2 + [eta Bx A_xy]^2
///                        + [Bz + eta Bx A_xz]^2),
/// eta = 2 gamma_e / (gamma_c Delta) acting on linear-Hz tensor entries.
pub fn misaligned_omega0(
    a_xx: f64,
    a_xy: f64,
    a_xz: f64,
    field: &FieldConfig,
    constants: &PhysicalConstants,
) -> f64 {
    let eta = 2.0 * constants.gamma_e / (constants.gamma_c * constants.zfs);
    let bx = field.b_x;
    let bz = field.b_z;
    let ex = bx * (1.0 + eta * a_xx);
    let ey = eta * bx * a_xy;
    let ez = bz + eta * bx * a_xz;
    constants.gamma_c * (ex * ex + ey * ey + ez * ez).sqrt()
}

/// Monte-Carlo average of the decoupling signal with per-spin frequency
/// offsets, plus the per-draw dip depths used to quantify smoothing.
#[derive(Clone, Debug)]
pub struct RobustnessStudy {
    pub mean: Trace,
    /// max(F) - min(F) of each individual draw over the sequence family.
    pub dip_depths: Vec<f64>,
}

/// Draws every single-carbon frequency from N(omega_L - delta_omega, sigma)
/// per repetition and averages the resulting decoupling traces. Seeded and
/// reproducible; the stream is ChaCha8.
pub fn revival_offset_robustness(
    model: &EnvironmentModel,
    delta_omega: f64,
    sigma: f64,
    repetitions: usize,
    seqs: &[DDSequence],
    options: SignalOptions,
    seed: u64,
) -> Result<RobustnessStudy> {
    if repetitions < 1 {
        return Err(Error::InvalidInput("repetitions must be at least 1".into()));
    }
    if seqs.is_empty() {
        return Err(Error::InvalidInput("sequence family must not be empty".into()));
    }
    let constants = PhysicalConstants::default();
    let w_l = larmor_frequency(&model.field, &constants);
    let normal = Normal::new(w_l - delta_omega, sigma)
        .map_err(|e| Error::InvalidInput(format!("offset distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut mean = vec![0.0; seqs.len()];
    let mut depths = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let omega0: Vec<f64> = (0..model.carbons.len()).map(|_| normal.sample(&mut rng)).collect();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (acc, seq) in mean.iter_mut().zip(seqs) {
            let f = total_dd_signal_with_carbon_omega0(model, seq, options, &omega0);
            lo = lo.min(f);
            hi = hi.max(f);
            *acc += f;
        }
        depths.push(hi - lo);
    }
    for v in &mut mean {
        *v /= repetitions as f64;
    }
    let times: Vec<f64> = seqs.iter().map(|s| s.total_time()).collect();
    let mean = Trace::new(times, mean)?
        .with_meta("rng", "chacha8")
        .with_meta("seed", seed)
        .with_meta("repetitions", repetitions)
        .with_meta("delta_omega_hz", delta_omega)
        .with_meta("sigma_hz", sigma);
    Ok(RobustnessStudy { mean, dip_depths: depths })
}

/// Scans the integer-nanosecond grid around a target delay and returns the
/// delay maximizing the modulation signal (envelope excluded, as it is
/// monotone in tau). Ties break toward the revival-grid value, then toward
/// smaller tau.
pub fn tau_window_scan(
    model: &EnvironmentModel,
    target_tau_ns: u64,
    window_ns: u64,
    step_ns: u64,
    n_pulses: u32,
) -> Result<u64> {
    if step_ns < 1 || window_ns < step_ns {
        return Err(Error::InvalidInput("window must be at least one step of at least 1 ns".into()));
    }
    let constants = PhysicalConstants::default();
    let f_l = larmor_frequency(&model.field, &constants);
    let m = ((target_tau_ns as f64 * 1e-9 * f_l).round() as u32).max(1);
    let tau_rev = revival_tau_ns(&model.field, &constants, m);

    let options = SignalOptions { apply_envelope: false, ..SignalOptions::default() };
    let start = target_tau_ns.saturating_sub(window_ns / 2).max(1);
    let end = target_tau_ns + window_ns / 2;
    let mut best: Option<(f64, u64)> = None;
    let mut tau = start;
    while tau <= end {
        let seq = DDSequence { n_pulses, tau_ns: tau, phase_scheme: "XY8".into() };
        let f = crate::dynamics::total_dd_signal(model, &seq, options);
        let better = match best {
            None => true,
            Some((bf, bt)) => {
                f > bf
                    || (f == bf
                        && (tau.abs_diff(tau_rev), tau) < (bt.abs_diff(tau_rev), bt))
            }
        };
        if better {
            best = Some((f, tau));
        }
        tau += step_ns;
    }
    Ok(best.expect("window contains at least one candidate").1)
}

/// A synthesized decoupling schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailoredSchedule {
    pub n_pulses: u32,
    pub tau_ns: u64,
    pub predicted_fidelity: f64,
    /// (constituent label, distance of tau to its nearest resonance, s).
    pub avoided: Vec<(String, f64)>,
}

/// Chooses the pulse number maximizing the predicted signal at a given total
/// evolution time: for each candidate N, tau = t_target / (2N) snapped to the
/// nearest revival point, refined by the 20 ns window scan, with the envelope
/// coherence time scaled as T(N) = T_ref (N/4)^eta (T_ref being the model
/// envelope's t_coh at N = 4).
pub fn tailor_sequence(
    model: &EnvironmentModel,
    t_target: f64,
    candidates: &[u32],
    eta: f64,
) -> Result<TailoredSchedule> {
    if !(t_target > 0.0) {
        return Err(Error::InvalidInput("t_target must be strictly positive".into()));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidInput("candidate list must not be empty".into()));
    }
    let constants = PhysicalConstants::default();
    let f_l = larmor_frequency(&model.field, &constants);

    let mut best: Option<(f64, u32, u64)> = None;
    for &n in candidates {
        if n == 0 {
            continue;
        }
        let tau_raw_s = t_target / (2.0 * n as f64);
        if (tau_raw_s * 1e9).round() < 1.0 {
            continue;
        }
        let m = ((tau_raw_s * f_l).round() as u32).max(1);
        let tau_snap = revival_tau_ns(&model.field, &constants, m);
        let tau_n = tau_window_scan(model, tau_snap, 20, 1, n)?;
        let seq = DDSequence { n_pulses: n, tau_ns: tau_n, phase_scheme: "XY8".into() };
        let t = seq.total_time();
        let t_n = model.envelope.t_coh * (n as f64 / 4.0).powf(eta);
        let modulation = modulation_product(model, &seq, SignalOptions::default());
        let envelope = (-(t / t_n).powf(model.envelope.exponent)).exp();
        let f = 0.5 + model.envelope.amplitude * modulation * envelope;
        if best.map_or(true, |(bf, _, _)| f > bf) {
            best = Some((f, n, tau_n));
        }
    }
    let (predicted_fidelity, n_pulses, tau_ns) = best.ok_or(Error::NoViableCandidate)?;

    let tau_s = tau_ns as f64 * 1e-9;
    let mut avoided = Vec::new();
    for pair in &model.pairs {
        if let Ok(res) = pair_resonance_taus(pair, 1) {
            let tau1 = res.taus[0];
            let k = ((tau_s / tau1 + 1.0) / 2.0).round().max(1.0);
            let nearest = (2.0 * k - 1.0) * tau1;
            let alt = (2.0 * (k + 1.0) - 3.0).max(1.0) * tau1;
            let dist = (tau_s - nearest).abs().min((tau_s - alt).abs());
            avoided.push((pair.label.clone(), dist));
        }
    }
    for spin in &model.carbons {
        let (f0, f1) = single_spin_split_frequencies(&spin.clone(), &model.field, &constants);
        let tau1 = 1.0 / (2.0 * (f0 + f1));
        let k = ((tau_s / tau1 + 1.0) / 2.0).round().max(1.0);
        let nearest = (2.0 * k - 1.0) * tau1;
        avoided.push((spin.label.clone(), (tau_s - nearest).abs()));
    }
    Ok(TailoredSchedule { n_pulses, tau_ns, predicted_fidelity, avoided })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Envelope, SingleCarbon};
    use approx::assert_abs_diff_eq;

    fn field() -> FieldConfig {
        FieldConfig::new(403.553)
    }

    fn constants() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    fn paper_pairs() -> Vec<CarbonPair> {
        let mut pairs = vec![
            CarbonPair::new("pair1", 244.0, 7890.0),
            CarbonPair::new("pair2", 247.0, 6582.0),
            CarbonPair::new("pair3", 83.0, 4420.0),
            CarbonPair::new("pair4", 2082.7, 230.0),
            CarbonPair::new("pair5", 186.8, 2801.0),
            CarbonPair::new("pair6", 133.8, 1826.0),
        ];
        let geoms = [[2, 2, 0], [2, 2, 0], [2, 2, 4], [1, 1, 1], [1, 1, 3], [1, -3, 1]];
        for (p, g) in pairs.iter_mut().zip(geoms) {
            p.geometry = Some(g);
        }
        pairs
    }

    #[test]
    fn resonance_taus_match_experimental_delays() {
        let pair1 = CarbonPair::new("pair1", 244.0, 7890.0);
        let res = pair_resonance_taus(&pair1, 3).unwrap();
        assert_abs_diff_eq!(res.taus[0], 63.25e-6, epsilon = 0.5e-6);
        assert!((res.taus[0] - 63e-6).abs() < 0.5e-6);

        let pair4 = CarbonPair::new("pair4", 2082.7, 230.0);
        let res = pair_resonance_taus(&pair4, 3).unwrap();
        assert_abs_diff_eq!(res.taus[0], 119.85e-6, epsilon = 0.05e-6);

        // Odd-multiple ladder.
        assert_abs_diff_eq!(res.taus[1], 3.0 * res.taus[0], epsilon = 1e-15);
        assert_abs_diff_eq!(res.taus[2] - res.taus[1], 2.0 * res.taus[0], epsilon = 1e-12);

        assert!(pair_resonance_taus(&CarbonPair::new("null", 0.0, 0.0), 1).is_err());
    }

    #[test]
    fn revival_grid_values() {
        let f = field();
        let c = constants();
        let grid = revival_grid(&f, &c, 100).unwrap();
        assert_eq!(grid[0], 2315);
        // m = 100: linear in m up to per-point rounding.
        assert_eq!(grid[99], 231_480);
        assert!((grid[99] as f64 - 231_470.0).abs() <= 10.0);
        assert!(revival_grid(&f, &c, 0).is_err());
    }

    #[test]
    fn regimes_of_the_six_pairs() {
        let pairs = paper_pairs();
        for p in &pairs {
            let r = regime_classify(p, DEFAULT_REGIME_RATIO);
            if p.label == "pair4" {
                assert_eq!(r, Regime::XDominant);
            } else {
                assert_eq!(r, Regime::ZDominant);
            }
        }
        let even = CarbonPair::new("even", 500.0, 500.0);
        assert_eq!(regime_classify(&even, DEFAULT_REGIME_RATIO), Regime::Intermediate);
    }

    fn angle_to(axis: [f64; 3], reference: [f64; 3]) -> f64 {
        let dot = axis[0] * reference[0] + axis[1] * reference[1] + axis[2] * reference[2];
        dot.abs().min(1.0).acos().to_degrees()
    }

    #[test]
    fn gate_axes_follow_the_regime() {
        // X >> Z: conditional rotations about +-z.
        let pair4 = CarbonPair::new("pair4", 2082.7, 230.0);
        let res = pair_resonance_taus(&pair4, 1).unwrap();
        let seq = DDSequence {
            n_pulses: 24,
            tau_ns: (res.taus[0] * 1e9).round() as u64,
            phase_scheme: "XY8".into(),
        };
        let g = gate_character(&pair4, &seq);
        assert!(angle_to(g.branch0.axis, [0.0, 0.0, 1.0]) < 15.0);
        assert!(angle_to(g.branch1.axis, [0.0, 0.0, 1.0]) < 15.0);
        let dot = g.branch0.axis[2] * g.branch1.axis[2];
        assert!(dot < 0.0, "senses must oppose");

        // Z >> X: conditional rotations about +-x.
        let pair1 = CarbonPair::new("pair1", 244.0, 7890.0);
        let res = pair_resonance_taus(&pair1, 1).unwrap();
        let seq = DDSequence {
            n_pulses: 14,
            tau_ns: (res.taus[0] * 1e9).round() as u64,
            phase_scheme: "XY8".into(),
        };
        let g = gate_character(&pair1, &seq);
        assert!(angle_to(g.branch0.axis, [1.0, 0.0, 0.0]) < 15.0);
        assert!(angle_to(g.branch1.axis, [1.0, 0.0, 0.0]) < 15.0);
        assert!(g.branch0.axis[0] * g.branch1.axis[0] < 0.0);
    }

    #[test]
    fn identical_branches_decompose_identically() {
        let pair = CarbonPair::new("p", 300.0, 0.0);
        let seq = DDSequence { n_pulses: 8, tau_ns: 50_000, phase_scheme: "XY8".into() };
        let g = gate_character(&pair, &seq);
        assert_abs_diff_eq!(g.branch0.angle, g.branch1.angle, epsilon = 1e-12);
        for i in 0..3 {
            assert_abs_diff_eq!(g.branch0.axis[i], g.branch1.axis[i], epsilon = 1e-9);
        }
    }

    fn dominant_frequency(trace: &Trace) -> f64 {
        crate::estimation::extract_frequency(trace).unwrap().refined
    }

    #[test]
    fn spectroscopy_reads_pair_couplings() {
        // Pair 6, ms = 0: dominant frequency X = 133.8 Hz.
        let pairs = paper_pairs();
        let pair6 = &pairs[5];
        let res = pair_resonance_taus(pair6, 1).unwrap();
        let gate = DDSequence {
            n_pulses: 8,
            tau_ns: (res.taus[0] * 1e9).round() as u64,
            phase_scheme: "XY8".into(),
        };
        let times: Vec<f64> = (0..2048).map(|i| i as f64 * 0.1 / 2048.0).collect();
        let trace = simulate_pair_spectroscopy(pair6, MsState::Zero, &gate, 0.0, &times).unwrap();
        assert_abs_diff_eq!(trace.values[0], trace.values.iter().cloned().fold(0.0, f64::max), epsilon = 1e-9);
        let f = dominant_frequency(&trace);
        assert!((f - 133.8).abs() < 1.0, "f = {f}");

        // Pair 3, ms = -1 with an artificial detuning; beat at
        // sqrt(X^2 + Z^2) after removing the detuning.
        let pair3 = &pairs[2];
        let res = pair_resonance_taus(pair3, 1).unwrap();
        let gate = DDSequence {
            n_pulses: 26,
            tau_ns: (res.taus[0] * 1e9).round() as u64,
            phase_scheme: "XY8".into(),
        };
        let detuning = 500.0;
        let times: Vec<f64> = (0..4096).map(|i| i as f64 * 0.05 / 4096.0).collect();
        let trace =
            simulate_pair_spectroscopy(pair3, MsState::MinusOne, &gate, detuning, &times).unwrap();
        let f = dominant_frequency(&trace) - detuning;
        let expected = (pair3.x * pair3.x + pair3.z * pair3.z).sqrt();
        assert!((f - expected).abs() < 20.0, "f = {f}, expected {expected}");
        assert!((f - 4420.0).abs() < 20.0, "f = {f}");
    }

    #[test]
    fn infer_z_round_trips() {
        assert_abs_diff_eq!(infer_z(244.0, 7894.0).unwrap(), 7890.2, epsilon = 0.5);
        assert_abs_diff_eq!(infer_z(186.8, 2807.0).unwrap(), 2800.8, epsilon = 0.5);
        assert_eq!(infer_z(500.0, 500.0).unwrap(), 0.0);
        assert!(infer_z(500.0, 400.0).is_err());

        // Identity on forward-synthesized frequencies.
        for (x, z) in [(244.0, 7890.0), (2082.7, 230.0), (83.0, 4420.0)] {
            let w0: f64 = x;
            let w1 = (x * x + z * z as f64).sqrt();
            let back = infer_z(w0, w1).unwrap();
            assert!((back - z).abs() / z < 1e-9);
        }
    }

    #[test]
    fn misalignment_limits_and_spread() {
        let c = constants();
        let mut f = field();
        // Aligned field: exactly the bare frequency.
        let w = misaligned_omega0(30e3, -10e3, 50e3, &f, &c);
        assert_eq!(w, larmor_frequency(&f, &c));

        f.b_x = 2.5;
        // No hyperfine: bare tilted-field value.
        let w = misaligned_omega0(0.0, 0.0, 0.0, &f, &c);
        let bare = c.gamma_c * (f.b_x * f.b_x + f.b_z * f.b_z).sqrt();
        assert_eq!(w, bare);

        // A_xz sweep of +-50 kHz spreads omega_0 by roughly 500 Hz.
        let hi = misaligned_omega0(0.0, 0.0, 50e3, &f, &c);
        let lo = misaligned_omega0(0.0, 0.0, -50e3, &f, &c);
        let spread = hi - lo;
        assert!(spread > 400.0 && spread < 600.0, "spread = {spread}");

        // Monotone in A_xz for positive b_x.
        let mut prev = f64::NEG_INFINITY;
        for k in -5..=5 {
            let w = misaligned_omega0(0.0, 0.0, k as f64 * 10e3, &f, &c);
            assert!(w > prev);
            prev = w;
        }
    }

    #[test]
    fn robustness_reduces_to_deterministic_without_noise() {
        let mut model = EnvironmentModel::empty(field());
        model.carbons.push(SingleCarbon::new("C1", -36_400.0, 25_000.0));
        model.carbons.push(SingleCarbon::new("C2", 20_600.0, 43_000.0));
        let seqs: Vec<DDSequence> = revival_grid(&model.field, &constants(), 20)
            .unwrap()
            .into_iter()
            .map(|tau_ns| DDSequence { n_pulses: 16, tau_ns, phase_scheme: "XY8".into() })
            .collect();
        let options = SignalOptions::default();
        let study =
            revival_offset_robustness(&model, 0.0, 0.0, 1, &seqs, options, 42).unwrap();
        for (i, seq) in seqs.iter().enumerate() {
            let f = crate::dynamics::total_dd_signal(&model, seq, options);
            assert_eq!(study.mean.values[i], f);
        }
        // Bit-exact reproducibility under a fixed seed.
        let study2 =
            revival_offset_robustness(&model, 130.0, 30.0, 3, &seqs, options, 42).unwrap();
        let study3 =
            revival_offset_robustness(&model, 130.0, 30.0, 3, &seqs, options, 42).unwrap();
        assert_eq!(study2.mean.values, study3.mean.values);
        assert_eq!(study2.dip_depths, study3.dip_depths);
    }

    #[test]
    fn window_scan_tie_breaks_toward_revival() {
        let model = EnvironmentModel::empty(field());
        let c = constants();
        let target = revival_tau_ns(&model.field, &c, 30);
        // Empty environment: flat modulation, tie broken toward the revival
        // point even when the window is offset.
        let best = tau_window_scan(&model, target + 3, 20, 1, 32).unwrap();
        assert_eq!(best, target);
        // Window of one step returns the target itself.
        let best = tau_window_scan(&model, target + 3, 1, 1, 32).unwrap();
        assert_eq!(best, target + 3);
        assert!(tau_window_scan(&model, target, 0, 1, 32).is_err());
    }

    #[test]
    fn window_scan_escapes_a_resonant_pair() {
        let mut model = EnvironmentModel::empty(field());
        let c = constants();
        let target = revival_tau_ns(&model.field, &c, 52); // ~120 us
        // A pair resonant exactly at the target delay.
        let omega = 1.0 / (4.0 * target as f64 * 1e-9);
        let z: f64 = 2000.0;
        let x = (omega * omega - 0.25 * z * z).sqrt();
        model.pairs.push(CarbonPair::new("resonant", x, z));
        let n = 24;
        let best = tau_window_scan(&model, target, 20, 1, n).unwrap();
        assert_ne!(best, target);
        let f_best = crate::dynamics::total_dd_signal(
            &model,
            &DDSequence { n_pulses: n, tau_ns: best, phase_scheme: "XY8".into() },
            SignalOptions { apply_envelope: false, ..Default::default() },
        );
        let f_target = crate::dynamics::total_dd_signal(
            &model,
            &DDSequence { n_pulses: n, tau_ns: target, phase_scheme: "XY8".into() },
            SignalOptions { apply_envelope: false, ..Default::default() },
        );
        assert!(f_best > f_target);
    }

    #[test]
    fn tailor_prefers_large_pulse_numbers_under_the_power_law() {
        let mut model = EnvironmentModel::empty(field());
        model.pairs = paper_pairs();
        model.envelope = Envelope { amplitude: 0.5, t_coh: 2.99e-3, exponent: 2.0 };
        let schedule =
            tailor_sequence(&model, 0.5, &[1024, 2048, 4096, 10240], 0.799).unwrap();
        assert_eq!(schedule.n_pulses, 10240);
        assert!(schedule.tau_ns >= 1);
        // Never lands within 1% of a pair resonance when avoidable.
        let tau_s = schedule.tau_ns as f64 * 1e-9;
        for pair in &model.pairs {
            let res = pair_resonance_taus(pair, 1).unwrap();
            let tau1 = res.taus[0];
            let k = ((tau_s / tau1 + 1.0) / 2.0).round().max(1.0);
            for kk in [k - 1.0, k, k + 1.0] {
                if kk >= 1.0 {
                    let tk = (2.0 * kk - 1.0) * tau1;
                    assert!(
                        (tau_s - tk).abs() > 0.01 * tk || (tau_s - tk).abs() > 10e-9,
                        "pair {} resonance {tk}",
                        pair.label
                    );
                }
            }
        }
    }

    #[test]
    fn tailor_trivial_and_error_cases() {
        let model = EnvironmentModel::empty(field());
        let c = constants();
        // Empty environment, one candidate: revival point nearest t/2.
        let t_target = 2.0 * revival_tau_ns(&model.field, &c, 50) as f64 * 1e-9;
        let schedule = tailor_sequence(&model, t_target, &[1], 0.799).unwrap();
        assert_eq!(schedule.tau_ns, revival_tau_ns(&model.field, &c, 50));

        match tailor_sequence(&model, 1e-9, &[10240], 0.799) {
            Err(Error::NoViableCandidate) => {}
            other => panic!("expected NoViableCandidate, got {other:?}"),
        }
    }

    #[test]
    fn joint_state_invariants() {
        let mut rho = Mat4::zeros();
        rho[(0, 0)] = C64::new(0.5, 0.0);
        rho[(1, 1)] = C64::new(0.5, 0.0);
        assert!(JointState::new(rho).is_ok());
        rho[(0, 1)] = C64::new(0.9, 0.0);
        rho[(1, 0)] = C64::new(0.9, 0.0);
        assert!(JointState::new(rho).is_err(), "non-PSD state must be rejected");
        let mut rho = Mat4::zeros();
        rho[(0, 0)] = C64::new(1.0, 0.0);
        rho[(0, 1)] = C64::new(0.1, 0.0);
        assert!(JointState::new(rho).is_err(), "non-Hermitian state must be rejected");
    }

    #[test]
    fn zero_norm_post_selection_is_reported() {
        // U0 = i U1 makes the + outcome impossible.
        let u1 = Mat2::identity();
        let u0 = u1 * C64::new(0.0, 1.0);
        let rho = Mat2::identity() * C64::new(0.5, 0.0);
        let selected = entangling_block(&u0, &u1, &rho);
        assert!(selected.trace().re < 1e-12);
    }
}
