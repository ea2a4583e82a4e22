//! Configuration parsing and experiment dispatch behind the `asymreg` binary.

mod config;
mod run;

pub use config::{
    apply_override, parse_config, parse_config_str, ExperimentKind, ExperimentSection, FlowSection, OperatorName,
    OperatorSection, PenaltyName, PenaltySection, RunConfig, StopSection,
};
pub use run::{exit_code, load_matrix, load_vector, run, RunReport};
