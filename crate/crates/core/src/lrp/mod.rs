//! Layer-wise relevance propagation.

pub mod canonize;
pub mod heatmap;
pub mod propagate;
pub mod rules;

pub use canonize::canonize;
pub use propagate::{attribute, pixel_relevance, point_relevance, RelevanceRecord};
pub use rules::{Composite, LrpRule, Purpose};
