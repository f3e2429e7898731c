//! Panel ingestion, transformation codes, real prices and lag designs.

mod date;
mod design;
pub mod io;
mod panel;
mod stats;
mod transform;

pub use date::YearMonth;
pub use design::{build_lag_design, regressor_from_tail, LagDesign};
pub use panel::TimeSeriesPanel;
pub use stats::rolling_skewness;
pub use transform::{apply_transform, deflate, splice_by_growth, TransformCode};
