//! Verification toolkit for local integrals of Whittaker functions on GSp(4).

pub mod archimedean;
pub mod cli;
pub mod cosets;
pub mod exactnum;
pub mod gsp4core;
pub mod laurent;
pub mod local_integrals;
pub mod satotate;
pub mod whittaker_p;
