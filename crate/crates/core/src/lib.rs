//! Simulation and analysis toolkit for an infrared sensor-pixel card.
//!
//! The card is a grid of black-painted copper plates, each carrying a
//! frequency-output thermal test die. Modules, bottom-up:
//!
//! - [`radiation`]: view factors and gray-body exchange between parallel patches.
//! - [`thermal`]: the card's lumped RC network, transient and steady solvers.
//! - [`sensor`]: die frequency model and the serial readout frame codec.
//! - [`calibration`]: black-body ramp fit and distance compensation.
//! - [`localization`]: forward rise maps and hotspot inversion.
//! - [`cli`]: file formats, canned experiments and the command-line front end.

pub mod calibration;
pub mod cli;
pub mod error;
pub mod localization;
pub mod radiation;
pub mod sensor;
pub mod thermal;

pub use error::{Error, Result};
