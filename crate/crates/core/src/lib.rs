//! Closed-loop propofol/remifentanil induction laboratory.
//!
//! Virtual patients follow a four-compartment PK model per drug and a
//! response-surface BIS model. Three controllers can drive them: a dual PID
//! with a fixed drug ratio, a nonlinear MPC fed by one extended Kalman
//! filter, and a multi-model MPC that runs a bank of filters over a grid of
//! PD parameters and picks the best-matching one.

pub mod bank;
pub mod config;
pub mod controllers;
pub mod error;
pub mod estimation;
pub mod expm;
pub mod optim;
pub mod pkpd;
pub mod population;
pub mod sim;

pub use config::SimConfig;
pub use controllers::ControllerKind;
pub use error::{Result, SimError};
