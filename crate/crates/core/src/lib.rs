//! Graph-layout preference toolkit: eight canonical layouts per graph,
//! structural embeddings, preference labels with adaptive assignment,
//! annotator agreement analytics, a soft-target preference classifier and
//! an LLM labeler.

pub mod align;
pub mod embed;
pub mod graph;
pub mod labels;
pub mod layout;
pub mod linalg;
pub mod llm;
pub mod model;
pub mod rng;
