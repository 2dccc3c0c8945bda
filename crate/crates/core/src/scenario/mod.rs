//! Scenario configuration, frame records and dataset files.

mod config;
mod dataset;
pub mod presets;

pub use config::{
    parse_config, AttackSpec, CommSpec, ConfigError, MapSpec, ScenarioConfig, SensorKind,
    SensorSpec, SyncMode, VehicleSpec,
};
pub use dataset::{
    cloud_path, decode_cloud, encode_cloud, export_frame, labels_path, list_ticks, load_dataset,
    load_frame, read_metadata, write_metadata, DatasetError, DatasetMetadata, FrameRecord,
    METADATA_FILE,
};
