//! Federated-continual training: local client training, gated FedAvg,
//! temporal rollback, staged shift schedules and the baseline methods.

mod aggregate;
mod client;
mod scenario;
mod server;

pub use aggregate::{aggregate_mean, running_mean};
pub use client::{client_local_train, ClientBehavior, ClientState};
pub use scenario::{
    prepare_data, run_grid, run_scenario, run_with_data, PreparedData, Stage, StageSchedule,
};
pub use server::{
    apply_updates, fedadam_server_step, run_global_round, temporal_step, RoundReport, ServerState,
};
