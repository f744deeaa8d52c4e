//! REST service and feedback log around the causality classifier.

pub mod api;
pub mod store;

pub use api::{router, AppState, Backend};
pub use store::{FeedbackRecord, FeedbackStore, ReviewError, StoreError, Verdict};
