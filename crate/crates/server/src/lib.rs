//! HTTP front end for the EHR platform: an API gateway that rate-limits and
//! routes to in-process service routers, plus the load-test runner and the
//! HTTP generator client used by the `ehr` binary.

pub mod app;
pub mod config;
pub mod error;
pub mod extract;
pub mod gateway;
pub mod generator;
pub mod loadtest;
pub mod services;

pub use app::{build, spawn, AppState, Deployment};
pub use config::{GeneratorConfig, ServerConfig};
