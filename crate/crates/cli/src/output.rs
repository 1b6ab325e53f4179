use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Output directory that only appears at its final path once everything
/// has been written. Dropping it unfinished removes the partial files.
pub struct Staging {
    tmp: PathBuf,
    target: PathBuf,
    done: bool,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self> {
        if target.exists() {
            bail!("output directory {} already exists", target.display());
        }
        let name = target
            .file_name()
            .with_context(|| format!("output path {} has no final component", target.display()))?;
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let tmp = parent.join(format!(
            ".{}.partial-{}",
            name.to_string_lossy(),
            std::process::id()
        ));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).with_context(|| format!("clearing {}", tmp.display()))?;
        }
        fs::create_dir(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        Ok(Self {
            tmp,
            target: target.to_path_buf(),
            done: false,
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.tmp.join(file)
    }

    pub fn write(&self, file: &str, contents: &str) -> Result<()> {
        let path = self.path(file);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        fs::rename(&self.tmp, &self.target).with_context(|| {
            format!("moving {} to {}", self.tmp.display(), self.target.display())
        })?;
        self.done = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}
