//! Simulator for power-domain non-orthogonal multiple access in indoor
//! visible light downlinks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel_geometry;
pub mod csv_fmt;
pub mod multicell;
pub mod noma_link;
pub mod pairing;
pub mod power_allocation;
pub mod rng;
pub mod sim;
