pub mod oracles;
pub mod kernels;
