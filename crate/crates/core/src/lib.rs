//! Semi-supervised semantic parsing from program executability.
//!
//! The crate trains a small grammar-constrained neural parser on a mix of
//! labeled utterance/program pairs and unlabeled utterances. For unlabeled
//! utterances the only signal is whether a candidate program executes against
//! a knowledge base and returns something. Beam search splits the candidates
//! into seen-executable and seen-non-executable sets, and one of several
//! marginal-likelihood approximations turns that split into a soft label:
//!
//! | selector    | soft label                                             |
//! |-------------|--------------------------------------------------------|
//! | `st`        | most probable seen executable program                  |
//! | `topk`      | model probabilities renormalized over seen executables |
//! | `repulsion` | all mass except seen non-executables                   |
//! | `gentle`    | seen non-executable mass moved onto seen executables   |
//! | `sparse`    | sparsemax of seen executable log-probabilities         |
//! | `reinforce` | expected reward (baseline)                             |
//!
//! Module map:
//! - [`minilang`]: program AST, text form, grammar and action sequences
//! - [`executor`]: knowledge base, execution, reward
//! - [`model`]: encoder/attention-decoder scorer with analytic gradients
//! - [`search`]: beam search and the seen-set partition
//! - [`objectives`]: losses, soft labels, sparsemax
//! - [`training`]: the semi-supervised loop
//! - [`datagen`]: synthetic corpora
//! - [`metrics`]: accuracy, average ratio and coverage
//! - [`checks`]: numerical oracles used by tests and `xpr selfcheck`
//! - [`report`]: CSV/SVG output

pub mod checks;
pub mod datagen;
pub mod error;
pub mod executor;
pub mod metrics;
pub mod minilang;
pub mod model;
pub mod objectives;
pub mod report;
pub mod search;
pub mod training;

pub use error::{Error, Result};
pub use executor::{KnowledgeBase, Reward};
pub use minilang::{parse, Condition, Grammar, Literal, Op, Program};
pub use model::{Model, ModelConfig, ModelParams};
pub use objectives::Objective;
