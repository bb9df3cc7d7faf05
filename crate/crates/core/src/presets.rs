//! Bundled reference environment: the measured field, seven characterized
//! carbons, and six characterized pairs, with measured couplings and the
//! lattice assignments of the pairs. This model backs the built-in
//! reproduction drivers and the acceptance suite.

use crate::model::EnvironmentModel;

pub const REFERENCE_MODEL_JSON: &str = include_str!("../assets/reference_model.json");

/// The built-in reference environment (seven carbons, six pairs, 403.553 G
/// along [1,1,1]).
pub fn reference_model() -> EnvironmentModel {
    EnvironmentModel::from_json(REFERENCE_MODEL_JSON).expect("bundled model must parse")
}

/// Measured pair parameters from the reference experiment, one row per pair:
/// (label, gate tau in us, gate pulse number, omega_0 = X in Hz, closest
/// lattice coupling in Hz, omega_-1 in Hz, gradient Z in Hz).
pub const REFERENCE_PAIR_TABLE: [(&str, f64, u32, f64, f64, f64, f64); 6] = [
    ("pair1", 63.0, 14, 244.0, 236.7, 7894.0, 7890.0),
    ("pair2", 76.0, 10, 247.0, 236.7, 6587.0, 6582.0),
    ("pair3", 111.0, 26, 83.0, 75.9, 4420.0, 4420.0),
    ("pair4", 120.0, 24, 2082.7, 2061.0, 2084.3, 230.0),
    ("pair5", 172.0, 8, 186.8, 186.8, 2807.0, 2801.0),
    ("pair6", 277.0, 8, 133.8, 133.4, 1831.0, 1826.0),
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;

    #[test]
    fn bundled_model_is_valid() {
        let model = reference_model();
        let report = validate_model(&model);
        assert!(report.is_empty(), "{report:?}");
        assert_eq!(model.carbons.len(), 7);
        assert_eq!(model.pairs.len(), 6);
    }

    #[test]
    fn bundled_model_round_trips_bit_exactly() {
        let model = reference_model();
        let json = model.to_json();
        let back = EnvironmentModel::from_json(&json).unwrap();
        assert_eq!(model, back);
    }
}
