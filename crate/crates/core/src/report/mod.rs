//! Per-city aggregation, map data and feature reports.

mod aggregate;
mod features;
mod map;

pub use aggregate::{
    aggregate_cities, check_identities, city_design, global_counts, read_aggregates, write_aggregates, CityAggregate, GlobalCounts,
    SocialCovariate, SOCIAL_COLUMNS,
};
pub use features::{
    feature_stability, global_top_features, top_features, write_city_features, write_stability, CityFeatureRow,
    FeatureVocabulary, RankedFeature, StabilityRow,
};
pub use map::{emit_map_data, quartile_classes, QuartileClass};

use serde::{Deserialize, Serialize};

use crate::corpus::TextRecord;
use crate::delineate::Delineation;

/// A city-tagged record with classifier output and downstream annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedRecord {
    #[serde(flatten)]
    pub record: TextRecord,
    pub city_key: String,
    pub score: f64,
    pub discrimination: bool,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delineation: Option<Delineation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_bot: Option<bool>,
}
