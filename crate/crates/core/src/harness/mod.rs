//! Configuration, dataset ingestion, experiment orchestration and plot output.

mod config;
mod io;
mod plots;
mod record;
mod run;

pub use config::{
    parse_kv, AccountantSection, AttackSection, DatasetDescriptor, DatasetSource, DpsgdSection, ExperimentConfig,
    ExperimentKind, RademacherSection, SdeSection,
};
pub use io::{
    decode_png, decode_pnm, encode_idx_images, encode_idx_labels, encode_png, encode_pnm, load_dataset,
    parse_csv_dataset, parse_idx_images, parse_idx_labels, read_csv_dataset, read_idx_dataset, read_image,
    train_test_split, write_image,
};
pub use plots::{curve_csv, curve_svg, emit_plots, parse_curve_csv, AxisTransform, PlotOutput};
pub use record::{write_atomic, Curve, ResultRecord, Series, RECORD_FILE, RECORD_FORMAT, RECORD_VERSION, TIMINGS_FILE};
pub use run::{regression_slope, run_experiment};
