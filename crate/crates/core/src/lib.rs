//! Delay-aware causal hierarchical reinforcement learning.
//!
//! The pipeline discovers which actions and items cause which effects at
//! which lags, learns how effect delays are distributed, and builds a
//! hierarchy of subgoal policies that waits for delayed effects.
//!
//! ```no_run
//! use causal_delay_hrl::orchestrator::{run, RunConfig};
//!
//! let outcome = run(RunConfig::default(), None).unwrap();
//! println!("success {:.2}, distance {:.2}", outcome.asr, outcome.adc);
//! ```

pub mod bench;
pub mod delaydist;
pub mod empowerment;
pub mod error;
pub mod hierarchy;
pub mod orchestrator;
pub mod rng;
pub mod scm;
pub mod world;

pub use error::{Error, Result};
