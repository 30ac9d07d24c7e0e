use std::path::{Path, PathBuf};

use rwf_core::Tensor;

use crate::error::{Result, RwfError};
use crate::image_io::{image_size, load_image};

/// Paired images under `root/input` and `root/target`, matched by file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    /// Sorted by file name.
    pub pairs: Vec<(PathBuf, PathBuf)>,
}

fn list(dir: &Path) -> Result<Vec<String>> {
    let rd = std::fs::read_dir(dir).map_err(|e| RwfError::Data(format!("{}: {e}", dir.display())))?;
    let mut names = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| RwfError::io(dir, e))?;
        if entry.file_type().map_err(|e| RwfError::io(entry.path(), e))?.is_file() {
            let name = entry
                .file_name()
                .into_string()
                .map_err(|n| RwfError::Data(format!("{}: non UTF-8 file name {n:?}", dir.display())))?;
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

pub fn index_dataset(root: &Path) -> Result<DatasetIndex> {
    let (idir, tdir) = (root.join("input"), root.join("target"));
    let inputs = list(&idir)?;
    let targets = list(&tdir)?;
    let mut problems = Vec::new();
    for n in &inputs {
        if targets.binary_search(n).is_err() {
            problems.push(format!("input/{n} has no target"));
        }
    }
    for n in &targets {
        if inputs.binary_search(n).is_err() {
            problems.push(format!("target/{n} has no input"));
        }
    }
    let mut pairs = Vec::new();
    for n in inputs.iter().filter(|n| targets.binary_search(n).is_ok()) {
        let (a, b) = (idir.join(n), tdir.join(n));
        let (sa, sb) = (image_size(&a)?, image_size(&b)?);
        if sa != sb {
            problems.push(format!("{n}: input is {}x{}, target is {}x{}", sa.0, sa.1, sb.0, sb.1));
        }
        pairs.push((a, b));
    }
    if !problems.is_empty() {
        return Err(RwfError::Data(format!("{}: {}", root.display(), problems.join("; "))));
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        pairs,
    })
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Decodes every pair as `(input, target)`.
    pub fn load(&self) -> Result<Vec<(Tensor, Tensor)>> {
        self.pairs
            .iter()
            .map(|(a, b)| Ok((load_image(a)?, load_image(b)?)))
            .collect()
    }
}
