//! Feature maps, bilinear lookup, correlation maps, and the non-learned
//! flow providers (correlation tracker and ground-truth oracle).

mod corr;
mod feature_map;
mod features;
mod flow;

pub use corr::{correlation_map, CorrelationMap, DEFAULT_GRID_SIDE};
pub use feature_map::{FeatureMap, Lookup};
pub use features::{extract_features, FeatureConfig, FEATURE_CHANNELS, MIN_FEATURE_IMAGE_SIDE};
pub use flow::{
    argmax_flow, edge_seed, oracle_flow, FlowProvider, FlowQuery, FlowUpdate, GroundTruth,
    OracleProvider, TrackerProvider, ORACLE_HIDDEN_CONFIDENCE, ORACLE_OCCLUSION_TOLERANCE,
    TRACKER_CONFIDENCE_FLOOR,
};
