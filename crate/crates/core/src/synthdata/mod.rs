//! Synthetic event families with exact likelihoods, bagging, contamination
//! and leakage-free splits.

mod bags;
mod events;
mod family;
pub mod io;

pub use bags::{
    background_count, bag_indices, contaminate, contamination_indices, make_bags, split, Bag,
    SplitSpec, Splits,
};
pub use events::{sample_background, sample_events, EventSet, EventSource};
pub use family::{EventFamily, FamilyKind};
