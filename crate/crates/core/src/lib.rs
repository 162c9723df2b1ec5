//! Multinomial marking `a ∘ X` and multivariate re-marking `A ∘ X` of count
//! distributions, with three mutually checking computation paths: closed-form
//! closure rules, predicted moment and FMGF identities, and an exact
//! enumeration oracle backed by a Monte Carlo sampler.
//!
//! A marking assigns each of a random number X of items an independent colour
//! from c colours with probabilities `a_i` (items may be discarded with the
//! leftover probability); thinning is the single-colour case. A re-marking
//! gives already-coloured items new colours, one substochastic column per
//! original colour, and behaves like the linear map A on moments.
//!
//! ```
//! use remark_core::{laws::{ProbVector, UnivariateLaw}, marking};
//!
//! let x = UnivariateLaw::Poisson { lambda: 6.0 };
//! let a = ProbVector::new(vec![0.5, 1.0 / 3.0]).unwrap();
//! let marked = marking::mark(&x, &a).unwrap();
//! // Poisson inputs split into independent Poisson coordinates.
//! assert_eq!(marked.law.dim(), 2);
//! ```

pub mod analysis;
pub mod error;
pub mod laws;
pub mod marking;
mod num;
pub mod oracle;
pub mod parse;
pub mod sampler;
pub mod verify;

pub use error::{Error, Result};
pub use laws::{FinitePmf, JointPmf, MomentSummary, MultivariateLaw, ProbVector, UnivariateLaw};
pub use marking::{mark, remark, thin, ClosureRule, MarkResult, SubstochasticMatrix};
pub use num::format_sig;
