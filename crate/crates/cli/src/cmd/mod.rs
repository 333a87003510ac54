pub mod ber;
pub mod eval;
pub mod freq;
pub mod probe;
pub mod score;
pub mod setinfer;
pub mod synth;
pub mod wired;
