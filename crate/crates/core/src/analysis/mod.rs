//! Baseline similarity metrics, ranking comparison, trace-network clustering
//! and directional statistics of probe walks.

mod components;
mod diff;
mod directions;
mod metrics;

pub use components::{assign_clusters, auto_threshold, threshold_components, ClusterLabeling, ComponentLabels, Threshold, DEFAULT_MASS_FRACTION};
pub use diff::{rank_diff_table, word_cloud, Delta, DiffRow, WordCloudEntry, WORD_CLOUD_SIZE};
pub use directions::{direction_stats, direction_stats_from, isotropy_null, null_p_value, random_rotation, DirectionStats, DEFAULT_BINS};
pub use metrics::{cosine_ranking, euclidean_ranking};
