//! Independent oracles and the acceptance checks for `protomm`.

pub mod a6;
pub mod criteria;
pub mod oracles;
