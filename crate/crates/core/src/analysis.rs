//! Evaluation mathematics: achievable rate, demapping oracles, Volterra
//! kernel extraction from trained networks, activation-pattern bounds and
//! multiplier counts.

pub mod complexity;
pub mod extract;
pub mod oracle;
pub mod patterns;
pub mod rate;

pub use complexity::{multiplier_count_mlp, multiplier_count_vnle, ComplexityReport, Formula};
pub use extract::{extract_kernels, ExtractedKernels};
pub use oracle::{binary_entropy, discrete_channel_oracle, exact_llrs_awgn, DiscreteOracle};
pub use patterns::{activation_patterns, activation_patterns_inclusive, count_patterns};
pub use rate::{achievable_rate, RateReport};
