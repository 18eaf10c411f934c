//! Span-based constituency parsing: span vectors, span scores, chart
//! decoding and margin training.

mod chart;
mod span;
mod tree;

pub use chart::{cky_decode, hamming_loss, hinge_loss, hinge_loss_value, tree_score, Augmentation, SpanChart};
pub use span::{pad_boundaries, span_matrix, span_vector, SpanIndex, SpanScorer, SpanVector};
pub use tree::{LabeledSpan, ParseTree, Tree, UNARY_JOIN};
