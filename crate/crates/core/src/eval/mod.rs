//! Whole-volume segmentation, morphological cleanup and scoring.

mod boxstats;
mod metrics;
mod morph;
mod segment;

pub use boxstats::{report_boxstats, write_boxstats_csv, BoxStats};
pub use metrics::{confusion, evaluate, Confusion, Flags, Metric, Region, RegionScore, SegReport, write_reports_csv};
pub use morph::{close, dilate, erode, morph_cleanup, morph_cleanup_with, open, Element, Order};
pub use segment::{argmax, segment_volume, segment_volume_heads, SEGMENT_BATCH};
