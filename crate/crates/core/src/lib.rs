//! Simulation and estimation toolkit for the coherence of a central electron
//! spin under dynamical decoupling in a structured nuclear-spin environment:
//! forward simulation of decoupling and Ramsey signals from microscopic spin
//! models, resonance analysis, model fitting, and synthesis of tailored
//! decoupling schedules.

pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod lattice;
pub mod model;
pub mod presets;
pub mod protocols;

pub use dynamics::{
    dd_branch_propagators, dd_signal_sweep, exact_pair_oracle, pair_branch_hamiltonians,
    pair_microscopic_realization, pair_modulation, ramsey_trace, single_branch_hamiltonians,
    single_spin_modulation, su2_exponential, total_dd_signal, Hamiltonian2, MsState,
    SignalOptions, Unitary2, Unitary4,
};
pub use error::{Error, Result};
pub use estimation::{
    extract_frequency, fit_envelope, fit_fidelity_crossing, fit_ramsey, fit_scaling, fit_t1,
    nlls_fit, FitResult, FrequencyEstimate, Parameter, ScalingLaw,
};
pub use lattice::{
    assign_structure, dipolar_coupling, enumerate_pair_classes, generate_bath, pair_geometry,
    BathConfig, PairClass,
};
pub use model::{
    larmor_frequency, single_spin_split_frequencies, validate_model, CarbonPair, DDSequence,
    EnvironmentModel, Envelope, FieldConfig, PhysicalConstants, SingleCarbon, Trace,
};
pub use presets::{reference_model, REFERENCE_MODEL_JSON, REFERENCE_PAIR_TABLE};
pub use protocols::{
    gate_character, infer_z, misaligned_omega0, pair_resonance_taus, regime_classify,
    revival_grid, revival_offset_robustness, revival_tau_ns, simulate_pair_spectroscopy,
    tailor_sequence, tau_window_scan, AxisAngle, GateCharacter, JointState, PairResonances,
    Regime, RobustnessStudy, TailoredSchedule,
};
