//! Feature engineering: the individual transforms and the pipeline that
//! chains them into a [`FeatureMatrix`].

mod matrix;
mod pipeline;
mod transforms;

pub use matrix::{dataset_grades, dataset_keys, FeatureMatrix, RowKey};
pub(crate) use matrix::query_ranges;
pub use pipeline::{FittedPipeline, FittedStep, Pipeline, Transform, PRESETS};

pub use transforms::{
    bucket, bucket_indices, composite, count_feature, ctr_cvr_fit, derived_features, impute_missing,
    listwise_rank, rank_values, BucketThresholds, CountKey, CountTable, CtrCvrTable, CtrKey, CtrKeyKind, Derived,
    Direction, QuartileImputer, DERIVED_NAMES,
};
