//! Finite-horizon low-rank MDPs with duple-perturbation robustness.
//!
//! The nominal model factorises as `P_h(s'|s,a) = ⟨φ_h(s,a), μ_h(s')⟩` and
//! `r_h(s,a) = ⟨φ_h(s,a), ν_h⟩`. Robustness is measured against joint
//! perturbations of the aggregated factor (`ξ_h`) and of the
//! occupancy-averaged feature (`η_h`), each confined to a Euclidean ball.

pub mod approx;
pub mod bilinear;
pub mod dp;
pub mod fmt;
pub mod gen;
pub mod harness;
pub mod mdp;
pub mod policy;
pub mod policy_opt;
pub mod rng;
pub mod robust;
pub mod scenarios;
pub mod vecops;

pub use dp::{nominal_dp, occupancy, policy_value_at_init, OccupancyMeasures, ValueTable};
pub use mdp::{validate_mdp, validate_mdp_with, LowRankMdp, MdpError, ValidationReport, Violation};
pub use policy::{Policy, PolicyError};
