//! Dataset schema, random three-way split and design-matrix construction.

pub mod design;
pub mod schema;
pub mod split;

pub use design::{
    build_design, ColumnSource, DesignMatrix, DropReason, DroppedColumn, EncodedColumn,
    EncodingPlan, PlanSource, RowKey, LOG_PRICE,
};
pub use schema::{load_dataset, Categorical, Dataset, Observation, Schema, CSV_HEADER};
pub use split::{make_split, SplitIndices, DEFAULT_FRACTIONS};
