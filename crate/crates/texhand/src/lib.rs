//! Operational surface of the textile guessing game: HTTP service, terminal
//! CLI, batch simulator with scripted participants, and session-log wiring.

pub mod cli;
pub mod config;
pub mod registry;
pub mod server;
pub mod setup;
pub mod simulate;

pub use cli::{run_cli, run_cli_with, Io};
pub use config::{AppConfig, ServiceConfig};
pub use registry::{Described, RegistryError, SessionRegistry};
pub use server::{router, serve};
pub use setup::{Setup, SetupError};
pub use simulate::{synthetic_rating, OracleKind, OracleStrategy, SimulateError, Simulation, SimulationRun, TaskFailure};
