//! On-disk dataset layout.
//!
//! Each tick `k` produces `<k:06>.bin` (little-endian f32 quadruples
//! `x y z intensity`, intensity always 0) and `<k:06>.json` (labels, states,
//! CAMs, LDMs, sensor pose). A dataset directory also carries `metadata.json`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::comm::{CamMessage, LocalDynamicMap};
use crate::detector::DetectorModel;
use crate::geometry::{BBox3D, PointCloud};
use crate::world::VehicleState;

use super::{AttackSpec, ScenarioConfig, SensorSpec, SyncMode};

const BYTES_PER_POINT: usize = 16;
pub const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("malformed {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            DatasetError::MissingFile(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

/// Everything recorded for one master tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub tick_index: u64,
    /// Always `tick_index * dt_s`, computed as a product.
    pub sim_time_s: f64,
    #[serde(skip)]
    pub point_cloud: PointCloud,
    pub gt_boxes: Vec<BBox3D>,
    pub vehicle_states: Vec<VehicleState>,
    pub cams_emitted: Vec<CamMessage>,
    #[serde(default)]
    pub ldms: Vec<LocalDynamicMap>,
    /// Row-major sensor-to-map transform of the ego (as reported by the ego).
    pub ego_to_world: [f64; 16],
}

pub fn cloud_path(dir: &Path, tick: u64) -> PathBuf {
    dir.join(format!("{tick:06}.bin"))
}

pub fn labels_path(dir: &Path, tick: u64) -> PathBuf {
    dir.join(format!("{tick:06}.json"))
}

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * BYTES_PER_POINT);
    for p in &cloud.points {
        for c in p {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        out.extend_from_slice(&0f32.to_le_bytes());
    }
    out
}

pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud, String> {
    if !bytes.len().is_multiple_of(BYTES_PER_POINT) {
        return Err(format!(
            "size {} is not a multiple of {BYTES_PER_POINT} bytes",
            bytes.len()
        ));
    }
    let points = bytes
        .chunks_exact(BYTES_PER_POINT)
        .map(|chunk| {
            let f = |i: usize| {
                f32::from_le_bytes(chunk[i * 4..i * 4 + 4].try_into().expect("4 bytes")) as f64
            };
            [f(0), f(1), f(2)]
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// Write the cloud and label files of one frame.
pub fn export_frame(record: &FrameRecord, dir: &Path) -> Result<(), DatasetError> {
    let bin = cloud_path(dir, record.tick_index);
    fs::write(&bin, encode_cloud(&record.point_cloud)).map_err(io_err(&bin))?;
    let json = labels_path(dir, record.tick_index);
    let mut text = serde_json::to_vec_pretty(record).expect("frame labels serialize");
    text.push(b'\n');
    fs::write(&json, text).map_err(io_err(&json))?;
    Ok(())
}

/// Inverse of [`export_frame`] up to f32 rounding of the point coordinates.
pub fn load_frame(dir: &Path, tick: u64) -> Result<FrameRecord, DatasetError> {
    let json = labels_path(dir, tick);
    let text = fs::read(&json).map_err(io_err(&json))?;
    let mut record: FrameRecord =
        serde_json::from_slice(&text).map_err(|e| DatasetError::Malformed {
            path: json.clone(),
            reason: e.to_string(),
        })?;
    let bin = cloud_path(dir, tick);
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    record.point_cloud =
        decode_cloud(&bytes).map_err(|reason| DatasetError::Malformed { path: bin, reason })?;
    Ok(record)
}

/// Sorted tick indices that have a labels file in `dir`.
pub fn list_ticks(dir: &Path) -> Result<Vec<u64>, DatasetError> {
    let mut ticks = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".json") {
            if stem.len() == 6 {
                if let Ok(t) = stem.parse::<u64>() {
                    ticks.push(t);
                }
            }
        }
    }
    ticks.sort_unstable();
    Ok(ticks)
}

/// Metadata and every frame of a dataset, in tick order.
pub fn load_dataset(dir: &Path) -> Result<(DatasetMetadata, Vec<FrameRecord>), DatasetError> {
    let meta = read_metadata(dir)?;
    let frames = list_ticks(dir)?
        .into_iter()
        .map(|t| load_frame(dir, t))
        .collect::<Result<_, _>>()?;
    Ok((meta, frames))
}

/// Session-level description stored next to the frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub tick_count: u64,
    pub dt_s: f64,
    pub seed: u64,
    pub mode: SyncMode,
    pub adversarial: bool,
    pub sensor: Option<SensorSpec>,
    pub detector: DetectorModel,
    pub attacks: Vec<AttackSpec>,
    /// Configuration accepted but not simulated (e.g. weather).
    #[serde(default)]
    pub ignored: serde_json::Map<String, serde_json::Value>,
}

impl DatasetMetadata {
    pub fn from_config(config: &ScenarioConfig, adversarial: bool) -> Self {
        let mut ignored = serde_json::Map::new();
        if let Some(w) = &config.map.weather {
            ignored.insert("map.weather".into(), w.clone());
        }
        Self {
            tick_count: config.tick_count(),
            dt_s: config.dt_s,
            seed: config.seed,
            mode: config.mode,
            adversarial,
            sensor: config.lidar().cloned(),
            detector: config.detector.clone(),
            attacks: if adversarial {
                config.attacks.clone()
            } else {
                Vec::new()
            },
            ignored,
        }
    }
}

pub fn write_metadata(dir: &Path, meta: &DatasetMetadata) -> Result<(), DatasetError> {
    let path = dir.join(METADATA_FILE);
    let mut text = serde_json::to_vec_pretty(meta).expect("metadata serializes");
    text.push(b'\n');
    fs::write(&path, text).map_err(io_err(&path))
}

pub fn read_metadata(dir: &Path) -> Result<DatasetMetadata, DatasetError> {
    let path = dir.join(METADATA_FILE);
    let text = fs::read(&path).map_err(io_err(&path))?;
    serde_json::from_slice(&text).map_err(|e| DatasetError::Malformed {
        path,
        reason: e.to_string(),
    })
}
