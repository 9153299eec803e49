//! Ingestion, daily resampling, smoothing and feature engineering for
//! long-format indicator panels.

pub mod features;
mod frame;
mod ingest;
mod preprocess;
mod transform;

pub use frame::{
    ArtifactSeries, FeatureGroup, FeatureMeta, FrameArtifact, Frequency, Metadata, Role,
    SeriesKey, TimeSeriesFrame,
};
pub use ingest::{load_csv, load_csv_reader, ColumnMapping};
pub use preprocess::{
    interpolate_gaps, preprocess, resample_and_interpolate, smooth_trailing_mean, trailing_mean,
    DroppedRegion, PreprocessConfig, PreprocessReport, Scaling,
};
pub use transform::{difference, integrate};
