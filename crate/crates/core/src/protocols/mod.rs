//! Privacy-preserving average-consensus protocols.

pub mod adqsp;
pub mod dp;
pub mod smpc;

pub use adqsp::{
    adqsp_mse_floor_prediction, default_delta0, replay_matches, run_adqsp, run_adqsp_from,
    AdqspConfig, AdqspRun, DiffReference,
};
pub use dp::{run_dp, run_dp_with_noise, DpConfig, DpMechanism, DpRun};
pub use smpc::{
    fixed_point_average, smpc_mask_and_average, smpc_share, Shares, SmpcConfig, SmpcRun,
};
