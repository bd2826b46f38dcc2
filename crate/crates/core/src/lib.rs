pub mod cli;
pub mod efficiency;
pub mod error;
pub mod inference;
pub mod nuisance;
pub mod numkit;
pub mod panel_est;
pub mod rc_est;
pub mod rng;
pub mod simulation;
