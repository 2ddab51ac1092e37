pub mod clustering;
pub mod container;
pub mod error;
pub mod reconstruction;
pub mod resample;
pub mod similarity;
pub mod tensor;
pub mod vit;
pub mod windowed;
pub mod bench;
pub mod baselines;
pub mod flops;
