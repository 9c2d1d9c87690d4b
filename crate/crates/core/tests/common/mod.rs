#![allow(dead_code)]

pub mod kn;
pub mod oracle;
pub mod purity;
pub mod synth;
