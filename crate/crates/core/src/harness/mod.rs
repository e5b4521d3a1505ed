//! Synthetic task harness: problem generation, prompt rendering, execution
//! labels, dataset splits and the background corpus.

pub mod corpus;
pub mod expr;
pub mod problem;
pub mod split;
pub mod vocab;

pub use corpus::build_background_corpus;
pub use expr::{BinOp, Expr};
pub use problem::{
    buggy_solution, evaluate_generation, generate_problem, render_prompt, training_sequence,
    FailureKind, LabeledSample, ProblemSpec, PromptBundle, PromptSpans, Span, Style, TestCase,
};
pub use split::{split_dataset, Split, SplitAssignment};
pub use vocab::TokenId;
