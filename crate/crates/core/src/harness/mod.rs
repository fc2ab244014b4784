//! Configuration, experiment orchestration and result emission.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{parse_precoder, parse_weight_grid, Experiment, RunConfig};
pub use experiments::{monte_carlo, music_trial, run, trial_seed, Design, MusicTrial, Outcome};
pub use output::{fmt_num, ResultRecord};
