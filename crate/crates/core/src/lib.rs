pub mod cyber_lane;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod imitation;
pub mod metrics;
pub mod policy;
pub mod report;
pub mod rules;
pub mod seeds;
pub mod selection;
pub mod sim;

pub use error::{Error, Result};
pub use experiment::{Command, ExperimentConfig, Overrides};
pub use federation::{AggregationMode, FederationConfig};
pub use imitation::{Experience, TrainingConfig};
pub use metrics::IndicatorSet;
pub use policy::PolicyParams;
pub use rules::RuleConfig;
pub use sim::{Controller, SimConfig};
