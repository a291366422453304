//! Grouped network-coded content distribution: finite-field arithmetic,
//! generation coding with constrained vector selection, coupon-collector
//! analysis, overlay construction and a discrete-event simulator comparing
//! chunk exchange, flat random coding and grouped coding.

pub mod coding;
pub mod coupon;
pub mod experiment;
pub mod gf;
pub mod overlay;
pub mod par;
pub mod selftest;
pub mod sim;
