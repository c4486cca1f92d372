//! Measurement machinery: receptive-field characterization, interaction
//! maps, orientation statistics, similarity metrics and robust tests.

pub mod gabor;
pub mod interaction;
pub mod regions;
pub mod ssim;
pub mod stats;

pub use gabor::{build_atlas, fit_dictionary, fit_gabor, GaborFit, OrientationAtlas};
pub use interaction::{
    accumulate_image, activity_ratio, adjusted_activity, interaction_map, select_centers,
    ActivityRatio, AdjustedActivity, InteractionMap, MapAccumulator,
};
pub use regions::{
    activity_ratio_by_region, axis_profile, cocircularity_deviation, colinearity_deviation,
    precision_ratio, region_mask, Region, RegionMask, RegionMedians,
};
pub use ssim::ssim;
pub use stats::{median, median_mad, wilcoxon, StatSummary};
