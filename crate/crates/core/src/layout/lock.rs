use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::error::ToolboxError;

pub const LOCK_FILE: &str = ".bidstoolbox.lock";

/// Exclusive per-dataset lock held for the duration of a mutation. The lock
/// file is created with `create_new` and removed on drop; a second caller
/// fails immediately with `Busy`.
#[derive(Debug)]
pub struct DatasetLock {
    path: PathBuf,
}

impl DatasetLock {
    pub fn acquire(lock_path: &Path, dataset: &Path) -> Result<Self, ToolboxError> {
        let mut file = match OpenOptions::new().write(true).create_new(true).open(lock_path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(ToolboxError::Busy(dataset.to_path_buf()))
            }
            Err(e) => {
                return Err(ToolboxError::io(
                    format!("creating lock {}", lock_path.display()),
                    e,
                ))
            }
        };
        let _ = writeln!(file, "{}", std::process::id());
        Ok(Self {
            path: lock_path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for DatasetLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
