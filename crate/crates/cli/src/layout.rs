//! File layout of an output directory.

use std::path::{Path, PathBuf};

use crate::{validation, CliResult};

pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path relative to the root, with `/` separators.
    pub fn rel(&self, path: &Path) -> String {
        let p = path.strip_prefix(&self.root).unwrap_or(path);
        p.components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn scene(&self, name: &str) -> PathBuf {
        self.root.join("scenes").join(format!("{name}.json"))
    }

    pub fn prefs(&self) -> PathBuf {
        self.root.join("prefs.json")
    }

    pub fn tasks(&self, scene: &str) -> PathBuf {
        self.root.join("tasks").join(format!("{scene}.json"))
    }

    pub fn dataset(&self, scene: &str, name: &str) -> PathBuf {
        self.root
            .join("datasets")
            .join(scene)
            .join(format!("{name}.jsonl"))
    }

    pub fn params(&self, scene: &str, variant: &str) -> PathBuf {
        self.root
            .join("params")
            .join(scene)
            .join(format!("{variant}.json"))
    }

    pub fn report(&self, scene: &str, file: &str) -> PathBuf {
        self.root.join("reports").join(scene).join(file)
    }

    pub fn trace(
        &self,
        scene: &str,
        variant: &str,
        split: &str,
        task: &str,
        episode: usize,
    ) -> PathBuf {
        self.root
            .join("traces")
            .join(scene)
            .join(variant)
            .join(split)
            .join(format!("{task}-e{episode}.jsonl"))
    }

    /// `path` if it exists, otherwise an error naming the command that
    /// produces it.
    pub fn require(&self, path: &Path, producer: &str) -> CliResult<PathBuf> {
        if path.exists() {
            Ok(path.to_path_buf())
        } else {
            Err(validation(format!(
                "missing {}; run `hearth --out {} {producer}` first",
                self.rel(path),
                self.root.display()
            )))
        }
    }
}
