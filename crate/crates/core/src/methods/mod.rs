//! Client and server pieces of the four training methods.

pub mod elias;
pub mod fedpm;
pub mod qsgd;
pub mod sgld;
pub mod signsgd;

pub use elias::elias_gamma_bits;
pub use fedpm::{bayes_agg, fedpm_local_train, FedPmState, LocalHyper, ResetSchedule};
pub use qsgd::{qsgd_client_distribution, qsgd_klms_global_distribution, qsgd_quantize, QsgdParams};
pub use sgld::{sgld_client_distributions, sgld_exact_message, sgld_server_step, SgldParams};
pub use signsgd::{signsgd_client_distribution, signsgd_global_distribution, signsgd_sample, SignParams};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
