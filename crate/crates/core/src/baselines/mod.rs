//! Comparison rerankers: α-weighted query expansion and geometric
//! verification.

pub mod aqe;
pub mod gv;

pub use aqe::{aqe_search, aqe_weights, alpha_qe_expand, AqeConfig};
pub use gv::{
    gv_score, mutual_nn_matches, ransac_homography, ransac_with_schedule, GvConfig, Homography,
    Match, RansacOutcome,
};
