//! Site-specific treatment effects in multisite trials.
//!
//! Site estimates `tau_hat_j` with sampling variances `se2_j` are modeled as
//! noisy draws of true effects `tau_j`, which come from a population
//! distribution `G`. Two priors for `G` are provided: a normal
//! ([`gaussian`]) and a Dirichlet-process mixture of normals ([`dp`]) whose
//! concentration hyperprior is set by [`calibration`]. Posterior draws are
//! turned into one estimate per site by [`summaries`] and scored against the
//! truth by [`losses`]. [`harness`] runs factorial simulation campaigns over
//! all of these, and [`metamodel`] regresses the resulting losses on the
//! design factors.
//!
//! ```
//! use multisite::data::{informativeness, SiteSummary, TrialDataset};
//!
//! let d = TrialDataset::new(vec![
//!     SiteSummary::new("a", 0.10, 0.025),
//!     SiteSummary::new("b", 0.30, 0.025),
//! ])?;
//! let i = informativeness(&d, 0.25 * 0.25)?;
//! assert!((i.value() - 0.714).abs() < 1e-3);
//! # Ok::<(), multisite::Error>(())
//! ```

pub mod calibration;
pub mod data;
pub mod datagen;
pub mod dp;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod io;
pub mod losses;
pub mod mcmc;
pub mod metamodel;
pub mod plotdata;
pub mod quadrature;
pub mod rng;
pub mod summaries;

pub use error::{Error, Result};

/// Caps the global worker pool used by the campaign runner and the
/// calibration search. Must be called before any parallel work starts.
pub fn set_global_threads(n: usize) -> std::result::Result<(), rayon::ThreadPoolBuildError> {
    rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()
}

// The guide's code listings run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/cluster_prior.md")]
    mod cluster_prior {}
    #[doc = include_str!("../../../book/src/summaries.md")]
    mod summaries {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/campaigns.md")]
    mod campaigns {}
    #[doc = include_str!("../../../book/src/metamodel.md")]
    mod metamodel {}
}
