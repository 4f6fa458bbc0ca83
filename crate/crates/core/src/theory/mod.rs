//! Brute-force checks of the divergence machinery behind the multi-source
//! target-error bound, plus a sampled proxy divergence for real features.

pub mod finite;
pub mod proxy;
pub mod suite;

pub use finite::{
    bound_report, check_mixture_inequality, error_linearity_check, expected_error, h_divergence, hdh_divergence,
    mixture_condition_report, symmetric_difference_class, BoundReport, FiniteInstance, Hypothesis, MixtureCheck,
};
pub use proxy::{proxy_a_distance, ProxyConfig};
pub use suite::{random_case, run_suite, Case, CheckStats, Counterexample, SuiteConfig, TheorySummary};
