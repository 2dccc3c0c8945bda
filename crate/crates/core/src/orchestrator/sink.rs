use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::scenario::{export_frame, write_metadata, DatasetError, DatasetMetadata, FrameRecord, ScenarioConfig};

/// Subdirectory of a dataset holding the post-attack frames.
pub const ADVERSARIAL_DIR: &str = "adversarial";

#[derive(Debug, Error)]
pub enum SinkError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{0}")]
    Other(String),
}

/// One tick's output. `adversarial` is present when the scenario has attacks.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub clean: FrameRecord,
    pub adversarial: Option<FrameRecord>,
}

pub trait FrameSink {
    fn consume(&mut self, output: &TickOutput) -> Result<(), SinkError>;
}

/// Keeps every tick in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub outputs: Vec<TickOutput>,
}

impl FrameSink for MemorySink {
    fn consume(&mut self, output: &TickOutput) -> Result<(), SinkError> {
        self.outputs.push(output.clone());
        Ok(())
    }
}

/// Exports clean frames to `dir` and adversarial ones to `dir/adversarial`.
#[derive(Debug)]
pub struct DatasetSink {
    clean: PathBuf,
    adversarial: Option<PathBuf>,
}

fn create(dir: &Path) -> Result<(), SinkError> {
    fs::create_dir_all(dir).map_err(|source| {
        SinkError::Dataset(DatasetError::Io {
            path: dir.to_path_buf(),
            source,
        })
    })
}

impl DatasetSink {
    pub fn new(dir: &Path, config: &ScenarioConfig) -> Result<Self, SinkError> {
        create(dir)?;
        write_metadata(dir, &DatasetMetadata::from_config(config, false))?;
        let adversarial = if config.has_attacks() {
            let adv = dir.join(ADVERSARIAL_DIR);
            create(&adv)?;
            write_metadata(&adv, &DatasetMetadata::from_config(config, true))?;
            Some(adv)
        } else {
            None
        };
        Ok(DatasetSink {
            clean: dir.to_path_buf(),
            adversarial,
        })
    }
}

impl FrameSink for DatasetSink {
    fn consume(&mut self, output: &TickOutput) -> Result<(), SinkError> {
        export_frame(&output.clean, &self.clean)?;
        if let (Some(dir), Some(frame)) = (&self.adversarial, &output.adversarial) {
            export_frame(frame, dir)?;
        }
        Ok(())
    }
}
