//! Affinity scoring, local data division, VAE-to-VAE KL estimation and greedy
//! max-min initialization.

mod affinity;
mod division;
mod init;
mod kl;

pub use affinity::{affinity, AffinityVector};
pub use division::{
    divide_local, mixture_estimate, route, smoothing_for_ratio_bound, DivisionRecord, DivisionState,
};
pub use init::{select_max_min, stable_initialize};
pub use kl::{kl_estimate, kl_matrix, KlMatrix};
