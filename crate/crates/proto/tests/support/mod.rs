#![allow(dead_code)]

pub mod arb;
pub mod golden;
