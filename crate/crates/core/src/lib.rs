//! Utility-based time sharing and power control for variable-rate wireless
//! links.
//!
//! Users share each frame in time. The objective is the time average of the
//! aggregate concave utility of *instantaneous* rates, which lets the
//! concavity of the utility trade average rate against rate oscillation.
//!
//! * [`channel`]: Rayleigh block fading, achievable rates, feedback quantizer.
//! * [`utility`]: the [`Utility`](utility::Utility) interface and the log family.
//! * [`ts`]: per-frame optimal time sharing at constant power.
//! * [`gs`]: gradient scheduling baseline.
//! * [`jtpc`]: joint time sharing and power control (Gauss-Seidel).
//! * [`qtsl`]: quantized time sharing with limited feedback.
//! * [`fairness`]: weighted allocation and weight adaptation toward equal
//!   time-average utilities.
//! * [`sim`]: Monte Carlo harness; [`config`] and [`cli`] drive it.

pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod fairness;
pub mod gs;
pub mod jtpc;
pub mod qtsl;
mod roots;
pub mod selfcheck;
pub mod sim;
pub mod ts;
pub mod utility;

pub use error::{Error, Result};
