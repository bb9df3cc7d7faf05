//! Domain types and unit conventions shared by every other module.
//!
//! All stored frequencies are linear (Hz); angular values (rad/s) exist only
//! transiently inside propagator computations. Magnetic fields are in gauss,
//! times in seconds, except the half interpulse delay which is kept on the
//! hardware timing grid as integer nanoseconds.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Timing resolution of the pulse hardware, in nanoseconds.
pub const TAU_GRID_NS: u64 = 1;

/// Physical constants used throughout. Linear-frequency convention:
/// gyromagnetic ratios are in Hz per gauss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// 13C gyromagnetic ratio (Hz/G).
    pub gamma_c: f64,
    /// Electron gyromagnetic ratio (Hz/G).
    pub gamma_e: f64,
    /// Diamond lattice constant (m).
    pub a0: f64,
    /// Zero-field splitting (Hz).
    pub zfs: f64,
    /// mu_0 / 4 pi (T^2 m^3 / J).
    pub mu0_over_4pi: f64,
    /// Planck constant (J s).
    pub planck: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            gamma_c: 1070.5,
            gamma_e: 2.8024e6,
            a0: 3.5668e-10,
            zfs: 2.877623e9,
            mu0_over_4pi: 1e-7,
            planck: 6.62607015e-34,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, value) in [
            ("gamma_c", self.gamma_c),
            ("gamma_e", self.gamma_e),
            ("a0", self.a0),
            ("zfs", self.zfs),
            ("mu0_over_4pi", self.mu0_over_4pi),
            ("planck", self.planck),
        ] {
            if !(value > 0.0) {
                v.push(format!("constant {name} must be strictly positive"));
            }
        }
        v
    }
}

fn default_b_direction() -> [f64; 3] {
    let s = 1.0 / 3f64.sqrt();
    [s, s, s]
}

/// Static magnetic field configuration in crystal coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Axial field component (G).
    pub b_z: f64,
    /// Transverse field component (G, >= 0).
    #[serde(default)]
    pub b_x: f64,
    /// Unit vector of the axial field, default [1,1,1]/sqrt(3).
    #[serde(default = "default_b_direction")]
    pub b_direction: [f64; 3],
}

impl FieldConfig {
    pub fn new(b_z: f64) -> Self {
        FieldConfig { b_z, b_x: 0.0, b_direction: default_b_direction() }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.b_z > 0.0) {
            v.push("field b_z must be strictly positive".into());
        }
        if !(self.b_x >= 0.0) {
            v.push("field b_x must be non-negative".into());
        }
        let norm = self
            .b_direction
            .iter()
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            v.push(format!("field b_direction norm deviates from 1 by {:.3e}", (norm - 1.0).abs()));
        }
        v
    }
}

/// One 13C nuclear spin characterized by its secular hyperfine components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleCarbon {
    pub label: String,
    /// Parallel hyperfine component (Hz, signed).
    pub a_par: f64,
    /// Perpendicular hyperfine component (Hz, >= 0).
    pub a_perp: f64,
    /// Optional full 3x3 hyperfine tensor, rows x/y/z (Hz).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor: Option<[[f64; 3]; 3]>,
    /// Optional dephasing time (s).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2_star: Option<f64>,
}

impl SingleCarbon {
    pub fn new(label: impl Into<String>, a_par: f64, a_perp: f64) -> Self {
        SingleCarbon { label: label.into(), a_par, a_perp, tensor: None, t2_star: None }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.a_perp >= 0.0) {
            v.push(format!("spin {}: a_perp must be non-negative", self.label));
        }
        if !self.a_par.is_finite() || !self.a_perp.is_finite() {
            v.push(format!("spin {}: hyperfine components must be finite", self.label));
        }
        if let Some(t) = &self.tensor {
            // Secular entries must reproduce (a_par, a_perp): A_par = A_zz,
            // A_perp = |(A_zx, A_zy)|.
            let a_par_t = t[2][2];
            let a_perp_t = (t[2][0] * t[2][0] + t[2][1] * t[2][1]).sqrt();
            if (a_par_t - self.a_par).abs() > 1.0 {
                v.push(format!(
                    "spin {}: tensor A_zz = {} Hz disagrees with a_par = {} Hz",
                    self.label, a_par_t, self.a_par
                ));
            }
            if (a_perp_t - self.a_perp).abs() > 1.0 {
                v.push(format!(
                    "spin {}: tensor |(A_zx, A_zy)| = {} Hz disagrees with a_perp = {} Hz",
                    self.label, a_perp_t, self.a_perp
                ));
            }
        }
        if let Some(t2) = self.t2_star {
            if !(t2 > 0.0) {
                v.push(format!("spin {}: t2_star must be strictly positive", self.label));
            }
        }
        v
    }
}

/// A coupled 13C-13C pair in the pseudo-spin description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarbonPair {
    pub label: String,
    /// Intra-pair dipolar coupling X (Hz, signed).
    pub x: f64,
    /// Hyperfine gradient Z (Hz, >= 0).
    pub z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_par: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_perp: Option<f64>,
    /// Optional lattice vector connecting the two nuclei, in units of a0/4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<[i32; 3]>,
}

impl CarbonPair {
    pub fn new(label: impl Into<String>, x: f64, z: f64) -> Self {
        CarbonPair { label: label.into(), x, z, z_par: None, z_perp: None, geometry: None }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.z >= 0.0) {
            v.push(format!("pair {}: z must be non-negative", self.label));
        }
        if !self.x.is_finite() || !self.z.is_finite() {
            v.push(format!("pair {}: couplings must be finite", self.label));
        }
        if let (Some(zp), Some(zq)) = (self.z_par, self.z_perp) {
            if (zp + zq - self.z).abs() > 1.0 {
                v.push(format!(
                    "pair {}: z_par + z_perp = {} Hz disagrees with z = {} Hz",
                    self.label,
                    zp + zq,
                    self.z
                ));
            }
        }
        v
    }
}

/// Phenomenological stretched-exponential envelope carrying unmodeled
/// environment dynamics and pulse errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// Signal amplitude (dimensionless, default 1/2).
    pub amplitude: f64,
    /// Coherence time T (s).
    pub t_coh: f64,
    /// Stretch exponent n.
    pub exponent: f64,
}

impl Default for Envelope {
    fn default() -> Self {
        Envelope { amplitude: 0.5, t_coh: 1.0, exponent: 2.0 }
    }
}

impl Envelope {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.amplitude > 0.0 && self.amplitude <= 0.5 + 1e-12) {
            v.push(format!("envelope amplitude {} outside (0, 1/2]", self.amplitude));
        }
        if !(self.t_coh > 0.0) {
            v.push("envelope t_coh must be strictly positive".into());
        }
        if !(self.exponent > 0.0) {
            v.push("envelope exponent must be strictly positive".into());
        }
        v
    }

    /// exp(-(t/T)^n)
    pub fn decay(&self, t: f64) -> f64 {
        (-(t / self.t_coh).powf(self.exponent)).exp()
    }
}

/// Complete microscopic description of the nuclear-spin environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentModel {
    pub field: FieldConfig,
    #[serde(default)]
    pub carbons: Vec<SingleCarbon>,
    #[serde(default)]
    pub pairs: Vec<CarbonPair>,
    #[serde(default)]
    pub bath: Vec<SingleCarbon>,
    #[serde(default)]
    pub envelope: Envelope,
}

impl EnvironmentModel {
    pub fn empty(field: FieldConfig) -> Self {
        EnvironmentModel {
            field,
            carbons: Vec::new(),
            pairs: Vec::new(),
            bath: Vec::new(),
            envelope: Envelope::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("model parse: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn carbon(&self, label: &str) -> Option<&SingleCarbon> {
        self.carbons.iter().chain(self.bath.iter()).find(|c| c.label == label)
    }

    pub fn pair(&self, label: &str) -> Option<&CarbonPair> {
        self.pairs.iter().find(|p| p.label == label)
    }
}

/// Decoupling sequence (tau - pi - tau)^N with ideal instantaneous pulses.
/// The half interpulse delay tau lives on the integer-nanosecond grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DDSequence {
    pub n_pulses: u32,
    /// Half interpulse delay in nanoseconds.
    pub tau_ns: u64,
    /// Pulse phase bookkeeping tag; metadata only.
    #[serde(default = "default_phase_scheme")]
    pub phase_scheme: String,
}

fn default_phase_scheme() -> String {
    "XY8".to_string()
}

impl DDSequence {
    pub fn new(n_pulses: u32, tau_ns: u64) -> Result<Self> {
        let seq = DDSequence { n_pulses, tau_ns, phase_scheme: default_phase_scheme() };
        let report = seq.validate();
        if report.is_empty() {
            Ok(seq)
        } else {
            Err(Error::InvalidInput(report.join("; ")))
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_pulses < 1 {
            v.push("sequence must contain at least one pulse".into());
        }
        if self.tau_ns < TAU_GRID_NS {
            v.push("tau must be at least 1 ns".into());
        }
        v
    }

    pub fn tau_s(&self) -> f64 {
        self.tau_ns as f64 * 1e-9
    }

    /// Total evolution time 2 N tau (s).
    pub fn total_time(&self) -> f64 {
        2.0 * self.n_pulses as f64 * self.tau_s()
    }
}

/// Sampled (time, value) series; the universal I/O record for simulated and
/// fitted signals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Trace {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "trace length mismatch: {} times vs {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("trace times must be strictly increasing".into()));
        }
        if times.iter().chain(values.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("trace entries must be finite".into()));
        }
        Ok(Trace { times, values, meta: BTreeMap::new() })
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Bare 13C Larmor frequency gamma_c * B_z (Hz, linear). The angular value is
/// 2 pi times this.
pub fn larmor_frequency(field: &FieldConfig, constants: &PhysicalConstants) -> f64 {
    constants.gamma_c * field.b_z
}

/// Nuclear precession frequencies (omega_0, omega_1) in Hz for the electron in
/// ms = 0 and ms = -1. omega_1 = sqrt((omega_0 - A_par)^2 + A_perp^2).
pub fn single_spin_split_frequencies(
    spin: &SingleCarbon,
    field: &FieldConfig,
    constants: &PhysicalConstants,
) -> (f64, f64) {
    let omega0 = larmor_frequency(field, constants);
    let omega1 = ((omega0 - spin.a_par).powi(2) + spin.a_perp.powi(2)).sqrt();
    (omega0, omega1)
}

/// Precession frequency for ms = +1: sqrt((omega_0 + A_par)^2 + A_perp^2).
pub fn single_spin_plus_frequency(
    spin: &SingleCarbon,
    field: &FieldConfig,
    constants: &PhysicalConstants,
) -> f64 {
    let omega0 = larmor_frequency(field, constants);
    ((omega0 + spin.a_par).powi(2) + spin.a_perp.powi(2)).sqrt()
}

/// Checks every model invariant and returns the list of violations; an empty
/// list means the model is valid. This reports instead of failing so that
/// callers can surface all problems at once.
pub fn validate_model(model: &EnvironmentModel) -> Vec<String> {
    let mut v = model.field.validate();
    let mut labels: BTreeSet<&str> = BTreeSet::new();
    for label in model
        .carbons
        .iter()
        .map(|c| c.label.as_str())
        .chain(model.bath.iter().map(|c| c.label.as_str()))
        .chain(model.pairs.iter().map(|p| p.label.as_str()))
    {
        if !labels.insert(label) {
            v.push(format!("duplicate label {label}"));
        }
    }
    for c in model.carbons.iter().chain(model.bath.iter()) {
        v.extend(c.validate());
    }
    for p in &model.pairs {
        v.extend(p.validate());
    }
    v.extend(model.envelope.validate());
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn field() -> FieldConfig {
        FieldConfig::new(403.553)
    }

    #[test]
    fn larmor_matches_measured_pulse_spacing_frequency() {
        let f = larmor_frequency(&field(), &PhysicalConstants::default());
        // 432.004 kHz measured; our constants give 432003.4865 Hz.
        assert_abs_diff_eq!(f, 432_004.0, epsilon = 1.0);
    }

    #[test]
    fn larmor_rejects_degenerate_field() {
        let mut f = field();
        f.b_z = 0.0;
        assert!(!f.validate().is_empty());
    }

    #[test]
    fn larmor_is_linear_in_field() {
        let c = PhysicalConstants::default();
        let f1 = larmor_frequency(&field(), &c);
        let mut doubled = field();
        doubled.b_z *= 2.0;
        let f2 = larmor_frequency(&doubled, &c);
        assert_eq!(f2, 2.0 * f1);
        assert_abs_diff_eq!(f2, 864_008.0, epsilon = 2.0);
    }

    #[test]
    fn split_frequencies_match_measured_spins() {
        let c = PhysicalConstants::default();
        // C1 from the reference environment.
        let c1 = SingleCarbon::new("C1", -36_400.0, 25_000.0);
        let (w0, w1) = single_spin_split_frequencies(&c1, &field(), &c);
        assert_abs_diff_eq!(w0, 432_003.4865, epsilon = 1e-3);
        // measured 469.320 kHz; table-level hyperfine precision
        assert!((w1 - 469_320.0).abs() < 500.0, "w1 = {w1}");

        // C5: direct evaluation of the formula, cross-checked against the
        // measured 408.303 kHz.
        let c5 = SingleCarbon::new("C5", 24_400.0, 26_000.0);
        let (_, w1) = single_spin_split_frequencies(&c5, &field(), &c);
        let expect = ((432_003.4865f64 - 24_400.0).powi(2) + 26_000.0f64.powi(2)).sqrt();
        assert_abs_diff_eq!(w1, expect, epsilon = 1e-6);
        assert!((w1 - 408_303.0).abs() < 1_000.0, "w1 = {w1}");
    }

    #[test]
    fn decoupled_spin_has_equal_split_frequencies() {
        let spin = SingleCarbon::new("free", 0.0, 0.0);
        let (w0, w1) = single_spin_split_frequencies(&spin, &field(), &PhysicalConstants::default());
        assert_eq!(w0, w1);
    }

    #[test]
    fn split_frequency_lower_bound() {
        let c = PhysicalConstants::default();
        for (a_par, a_perp) in [(-50e3, 0.0), (20e3, 0.0), (1e5, 3e4), (-3e3, 1e2)] {
            let spin = SingleCarbon::new("s", a_par, a_perp);
            let (w0, w1) = single_spin_split_frequencies(&spin, &field(), &c);
            assert!(w1 >= (w0 - a_par).abs() - 1e-9);
            if a_perp == 0.0 {
                assert_abs_diff_eq!(w1, (w0 - a_par).abs(), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn validate_flags_duplicate_labels() {
        let mut model = EnvironmentModel::empty(field());
        model.carbons.push(SingleCarbon::new("C1", 1.0, 1.0));
        model.carbons.push(SingleCarbon::new("C1", 2.0, 1.0));
        let report = validate_model(&model);
        assert_eq!(report.len(), 1, "{report:?}");
    }

    #[test]
    fn validate_flags_inconsistent_gradient_split() {
        let mut model = EnvironmentModel::empty(field());
        let mut pair = CarbonPair::new("p", 100.0, 2000.0);
        pair.z_par = Some(1500.0);
        pair.z_perp = Some(510.0); // off by 10 Hz
        model.pairs.push(pair);
        let report = validate_model(&model);
        assert_eq!(report.len(), 1, "{report:?}");
    }

    #[test]
    fn validate_checks_tensor_secular_consistency() {
        let mut spin = SingleCarbon::new("C1", -36_400.0, 25_000.0);
        spin.tensor = Some([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [25_000.0, 0.0, -36_400.0]]);
        assert!(spin.validate().is_empty());
        spin.tensor = Some([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [25_000.0, 0.0, -36_395.0]]);
        assert_eq!(spin.validate().len(), 1);
    }

    #[test]
    fn sequence_grid_and_total_time() {
        let seq = DDSequence::new(32, 2315).unwrap();
        assert_abs_diff_eq!(seq.total_time(), 2.0 * 32.0 * 2315e-9, epsilon = 0.0);
        assert!(DDSequence::new(0, 2315).is_err());
        assert!(DDSequence::new(8, 0).is_err());
    }

    #[test]
    fn trace_rejects_unordered_times() {
        assert!(Trace::new(vec![0.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]).is_err());
        assert!(Trace::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(Trace::new(vec![0.0, 1.0], vec![1.0, f64::NAN]).is_err());
    }
}
