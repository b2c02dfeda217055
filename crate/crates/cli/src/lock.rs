use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

pub const LOCK_FILE: &str = ".rotq.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    /// Creates `dir` if needed and takes its lock file; fails if another
    /// command holds it.
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        let path = dir.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            let context = if e.kind() == std::io::ErrorKind::AlreadyExists {
                format!("{} is locked by another run (remove {} if stale)", dir.display(), path.display())
            } else {
                format!("locking {}", dir.display())
            };
            CliError::io(context, e)
        })?;
        // best effort: the pid only helps a human clean up a stale lock
        let _ = writeln!(f, "{}", std::process::id());
        Ok(OutputLock { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
