//! Diamond-lattice geometry: enumeration of 13C-13C pair classes, intra-pair
//! dipolar couplings, and random bath configurations.
//!
//! Lattice vectors are integer triples in units of a0/4. A vector connects two
//! carbon sites iff all components are odd, or all are even with the component
//! sum divisible by four (the FCC sublattice condition).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FieldConfig, PhysicalConstants, SingleCarbon};

/// One symmetry class of 13C-13C displacements, keyed by separation and angle
/// to the field axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairClass {
    /// Representative lattice vector in units of a0/4.
    pub r_vec: [i32; 3],
    /// Separation in units of a0.
    pub r: f64,
    /// Angle to the field axis, folded to [0, 90] degrees.
    pub theta: f64,
    /// Coupling magnitude |X| (Hz, linear).
    pub x_over_2pi: f64,
}

/// Configuration for random background-bath generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathConfig {
    pub seed: u64,
    /// Number of spins to return.
    pub count: usize,
    /// Maximum hyperfine magnitude sqrt(A_par^2 + A_perp^2) (Hz).
    pub coupling_cutoff: f64,
    /// Sampling shell (r_min, r_max) in nanometers.
    pub shell: (f64, f64),
}

impl Default for BathConfig {
    fn default() -> Self {
        // Below 1.5 nm hyperfine couplings exceed the 10 kHz cutoff; beyond
        // 6 nm the contributions are negligible.
        BathConfig { seed: 0, count: 200, coupling_cutoff: 10e3, shell: (1.5, 6.0) }
    }
}

impl BathConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.count == 0 {
            v.push("bath count must be positive".into());
        }
        if !(self.coupling_cutoff > 0.0) {
            v.push("bath coupling cutoff must be positive".into());
        }
        if !(self.shell.0 < self.shell.1) {
            v.push("bath shell must satisfy r_min < r_max".into());
        }
        v
    }
}

/// Natural 13C abundance.
const C13_OCCUPANCY: f64 = 0.011;

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// True if `v` connects two sites of the diamond lattice.
fn is_lattice_displacement(v: [i32; 3]) -> bool {
    if v == [0, 0, 0] {
        return false;
    }
    let all_odd = v.iter().all(|c| c.rem_euclid(2) == 1);
    let all_even = v.iter().all(|c| c.rem_euclid(2) == 0);
    all_odd || (all_even && (v[0] + v[1] + v[2]).rem_euclid(4) == 0)
}

/// mu0/4pi * h * gamma_c^2 with gamma_c in Hz/T; divide by r^3 in meters to
/// get a coupling in Hz.
fn dipolar_prefactor(constants: &PhysicalConstants) -> f64 {
    let gamma_c_t = constants.gamma_c * 1e4;
    constants.mu0_over_4pi * constants.planck * gamma_c_t * gamma_c_t
}

fn cos_to_field(v: [i32; 3], field: &FieldConfig) -> f64 {
    let b = unit(field.b_direction);
    let dot = v[0] as f64 * b[0] + v[1] as f64 * b[1] + v[2] as f64 * b[2];
    let norm = ((v[0] as f64).powi(2) + (v[1] as f64).powi(2) + (v[2] as f64).powi(2)).sqrt();
    dot / norm
}

/// Signed intra-pair dipolar coupling X (Hz) for a lattice vector in units of
/// a0/4: X = mu0/4pi * h * gamma_c^2 / r^3 * (1 - 3 cos^2 theta) / 2.
pub fn dipolar_coupling(
    r_vec: [i32; 3],
    field: &FieldConfig,
    constants: &PhysicalConstants,
) -> Result<f64> {
    if r_vec == [0, 0, 0] {
        return Err(Error::ZeroVector);
    }
    let norm_quarters =
        ((r_vec[0] as f64).powi(2) + (r_vec[1] as f64).powi(2) + (r_vec[2] as f64).powi(2)).sqrt();
    let r_m = norm_quarters * (constants.a0 / 4.0);
    let cos = cos_to_field(r_vec, field);
    Ok(dipolar_prefactor(constants) / (r_m * r_m * r_m) * 0.5 * (1.0 - 3.0 * cos * cos))
}

/// Separation (units of a0) and angle to the field axis (degrees, folded to
/// [0, 90] since the coupling only depends on cos^2 theta).
pub fn pair_geometry(r_vec: [i32; 3], field: &FieldConfig) -> Result<(f64, f64)> {
    if r_vec == [0, 0, 0] {
        return Err(Error::ZeroVector);
    }
    let r =
        ((r_vec[0] as f64).powi(2) + (r_vec[1] as f64).powi(2) + (r_vec[2] as f64).powi(2)).sqrt()
            / 4.0;
    let cos = cos_to_field(r_vec, field).abs().min(1.0);
    Ok((r, cos.acos().to_degrees()))
}

/// Enumerates all distinct diamond-lattice displacement classes with
/// |X| >= x_min, grouped by (r, theta) rounded to 0.01 a0 / 0.1 degrees and
/// sorted by descending |X|.
pub fn enumerate_pair_classes(
    x_min: f64,
    field: &FieldConfig,
    constants: &PhysicalConstants,
) -> Result<Vec<PairClass>> {
    if !(x_min > 0.0) {
        return Err(Error::InvalidInput("x_min must be strictly positive".into()));
    }
    // |X| <= prefactor / r^3, so no class beyond this radius can reach x_min.
    let r_max_m = (dipolar_prefactor(constants) / x_min).cbrt();
    let vmax = (r_max_m / (constants.a0 / 4.0)).ceil() as i32;

    use std::collections::BTreeMap;
    let mut reps: BTreeMap<(i64, i64), [i32; 3]> = BTreeMap::new();
    for x in -vmax..=vmax {
        for y in -vmax..=vmax {
            for z in -vmax..=vmax {
                let v = [x, y, z];
                if !is_lattice_displacement(v) {
                    continue;
                }
                let (r, theta) = pair_geometry(v, field)?;
                if r * constants.a0 > r_max_m * (1.0 + 1e-12) {
                    continue;
                }
                let key = ((r * 100.0).round() as i64, (theta * 10.0).round() as i64);
                let entry = reps.entry(key).or_insert(v);
                // Deterministic representative: largest component sum, then
                // lexicographically greatest.
                let sum = |w: [i32; 3]| w[0] + w[1] + w[2];
                if (sum(v), v) > (sum(*entry), *entry) {
                    *entry = v;
                }
            }
        }
    }

    let mut classes = Vec::new();
    for (_, v) in reps {
        let (r, theta) = pair_geometry(v, field)?;
        let x = dipolar_coupling(v, field, constants)?.abs();
        if x >= x_min {
            classes.push(PairClass { r_vec: v, r, theta, x_over_2pi: x });
        }
    }
    classes.sort_by(|a, b| {
        b.x_over_2pi
            .partial_cmp(&a.x_over_2pi)
            .unwrap()
            .then(a.theta.partial_cmp(&b.theta).unwrap())
            .then(a.r.partial_cmp(&b.r).unwrap())
    });
    Ok(classes)
}

/// Candidate lattice classes for a measured coupling, best match first.
/// `x_min` is the enumeration floor (the detection threshold is a user
/// parameter, not fixed by the lattice).
pub fn assign_structure(
    x_measured: f64,
    tolerance: f64,
    x_min: f64,
    field: &FieldConfig,
    constants: &PhysicalConstants,
) -> Result<Vec<PairClass>> {
    if !(x_measured > 0.0) {
        return Err(Error::InvalidInput("x_measured must be strictly positive".into()));
    }
    let mut candidates: Vec<PairClass> = enumerate_pair_classes(x_min, field, constants)?
        .into_iter()
        .filter(|c| (c.x_over_2pi - x_measured).abs() <= tolerance * x_measured)
        .collect();
    candidates.sort_by(|a, b| {
        let da = (a.x_over_2pi - x_measured).abs();
        let db = (b.x_over_2pi - x_measured).abs();
        da.partial_cmp(&db).unwrap()
    });
    Ok(candidates)
}

/// All diamond sites with squared radius (in units of (a0/4)^2) inside
/// [lo2, hi2], sorted by (r^2, x, y, z) for reproducibility.
fn shell_sites(lo2: i64, hi2: i64) -> Vec<[i32; 3]> {
    // Conventional cubic cell, 8 atoms, coordinates in quarters of a0.
    const BASIS: [[i32; 3]; 8] = [
        [0, 0, 0],
        [0, 2, 2],
        [2, 0, 2],
        [2, 2, 0],
        [1, 1, 1],
        [1, 3, 3],
        [3, 1, 3],
        [3, 3, 1],
    ];
    let cmax = ((hi2 as f64).sqrt() / 4.0).ceil() as i32 + 1;
    let mut sites = Vec::new();
    for i in -cmax..=cmax {
        for j in -cmax..=cmax {
            for k in -cmax..=cmax {
                for b in BASIS {
                    let p = [4 * i + b[0], 4 * j + b[1], 4 * k + b[2]];
                    let r2 =
                        p[0] as i64 * p[0] as i64 + p[1] as i64 * p[1] as i64 + p[2] as i64 * p[2] as i64;
                    if r2 >= lo2.max(1) && r2 <= hi2 {
                        sites.push(p);
                    }
                }
            }
        }
    }
    sites.sort_by_key(|p| {
        let r2 = p[0] as i64 * p[0] as i64 + p[1] as i64 * p[1] as i64 + p[2] as i64 * p[2] as i64;
        (r2, p[0], p[1], p[2])
    });
    sites
}

/// Point-dipole electron-nucleus hyperfine components (A_par, A_perp) in Hz
/// for a nucleus at integer position `site` (units of a0/4), electron at the
/// origin.
fn point_dipole_hyperfine(
    site: [i32; 3],
    field: &FieldConfig,
    constants: &PhysicalConstants,
) -> (f64, f64) {
    let b = unit(field.b_direction);
    let pos = [site[0] as f64, site[1] as f64, site[2] as f64];
    let norm = (pos[0] * pos[0] + pos[1] * pos[1] + pos[2] * pos[2]).sqrt();
    let r_m = norm * constants.a0 / 4.0;
    let cos = (pos[0] * b[0] + pos[1] * b[1] + pos[2] * b[2]) / norm;
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    let gamma_e_t = constants.gamma_e * 1e4;
    let gamma_c_t = constants.gamma_c * 1e4;
    let pref = constants.mu0_over_4pi * constants.planck * gamma_e_t * gamma_c_t / (r_m * r_m * r_m);
    let a_par = pref * (3.0 * cos * cos - 1.0);
    let a_perp = (pref * 3.0 * cos * sin).abs();
    (a_par, a_perp)
}

/// Deterministically samples lattice sites at natural 13C occupancy inside the
/// configured shell, computes point-dipole hyperfine couplings, rejects spins
/// above the cutoff, and returns exactly `count` spins.
///
/// A pure function of (config, field, constants); the stream is ChaCha8 keyed
/// by the seed, one draw per candidate site in a fixed site order.
pub fn generate_bath(
    config: &BathConfig,
    field: &FieldConfig,
    constants: &PhysicalConstants,
) -> Result<Vec<SingleCarbon>> {
    let report = config.validate();
    if !report.is_empty() {
        return Err(Error::InvalidInput(report.join("; ")));
    }
    let quarter = constants.a0 / 4.0;
    let lo2 = (config.shell.0 * 1e-9 / quarter).powi(2).floor() as i64;
    let hi2 = (config.shell.1 * 1e-9 / quarter).powi(2).ceil() as i64;
    let sites = shell_sites(lo2, hi2);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut spins = Vec::with_capacity(config.count);
    for site in sites {
        let u: f64 = rng.random();
        if u >= C13_OCCUPANCY {
            continue;
        }
        let (a_par, a_perp) = point_dipole_hyperfine(site, field, constants);
        if (a_par * a_par + a_perp * a_perp).sqrt() > config.coupling_cutoff {
            continue;
        }
        spins.push(SingleCarbon::new(format!("bath-{:04}", spins.len()), a_par, a_perp));
        if spins.len() == config.count {
            return Ok(spins);
        }
    }
    Err(Error::ShellTooSmall { requested: config.count, got: spins.len() })
}
