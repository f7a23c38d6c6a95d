//! Files on disk: images, scene directories, run configurations,
//! checkpoints and metrics logs.

mod checkpoint;
mod config;
mod image;
mod metrics;
mod scene_dir;

use std::path::{Path, PathBuf};

pub use self::checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION, MAGIC,
};
pub use self::config::{RunConfig, CONFIG_KEYS};
pub use self::image::{decode_ppm, encode_ppm, quantize, read_image, write_image, ImageFormat};
pub use self::metrics::MetricsWriter;
pub use self::scene_dir::{frame_file_name, load_scene_dir, save_scene_dir};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {array}")]
    Truncated { array: String },
    #[error("checkpoint array {array}: {msg}")]
    BadArray { array: String, msg: String },
    #[error(transparent)]
    Synthetic(#[from] crate::synthetic::SyntheticError),
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
}

impl IoError {
    pub(crate) fn file(path: &Path, source: std::io::Error) -> Self {
        Self::File {
            path: path.to_path_buf(),
            source,
        }
    }
}
