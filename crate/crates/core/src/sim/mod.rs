//! Sampled-data closed-loop simulation, scheme comparison and export.

pub mod config;
pub mod export;
pub mod run;

pub use config::{ManeuverConfig, PlantKind, SimConfig, ZInit};
pub use export::{export_comparison, export_csv, export_sweep, sidecar_path, COLUMNS};
pub use run::{compare_schemes, compute_metrics, metrics_table, run_closed_loop, sweep, Comparison, Metrics, Sample, SimRecord};
