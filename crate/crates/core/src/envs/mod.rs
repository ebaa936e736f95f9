//! Concrete environments and the rating-log pipeline.

pub mod mf;
pub mod offline;
pub mod ratings;
pub mod synthrec;
pub mod tracking;

pub use mf::{split_holdout, train_mf, IndexedRating, MfModel, MfParams, MfReport};
pub use offline::{make_offline_env, nearest_item, OfflineRecEnv, Recommendation, DEFAULT_RELEVANCE_THRESHOLD};
pub use ratings::{ingest_ratings, synthetic_movielens_100k, Delimiter, Rating, RatingsTable};
pub use synthrec::{ClickModel, SynthRecConfig, SynthRecEnv};
pub use tracking::TrackingEnv;
