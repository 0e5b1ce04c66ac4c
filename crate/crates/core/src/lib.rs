#![no_std]
extern crate alloc;

pub mod audio;
pub mod dataset;
pub mod dsp;
pub mod evaluator;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod rir;
pub mod synth;
pub mod tensor;
pub mod transfer;
