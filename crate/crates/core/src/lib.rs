//! Core of the laparoscopy-trainer digital twin.
//!
//! `no_std` (with `alloc`): kinematics of the six-joint arm, the spherical
//! remote-centre-of-motion parameterisation, operator input mapping, the
//! lookahead servo model, per-tick safety checks and the trajectory benchmark
//! metrics. File formats, networking and the CLI live in the `rcmtwin` crate.
#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` style guards are there to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bench;
pub mod error;
pub mod kinematics;
pub mod rcm;
pub mod safety;
pub mod servo_sim;
pub mod teleop;

pub use error::{Error, Result};

/// Which of the two instruments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Side> {
        match s {
            "left" => Some(Side::Left),
            "right" => Some(Side::Right),
            _ => None,
        }
    }
}

impl core::fmt::Display for Side {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}
