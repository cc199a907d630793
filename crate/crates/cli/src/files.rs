//! Per-frame file naming: `<stem>_NNNN.<ext>`, frames numbered from zero.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use stembed_core::numerics::{read_dump, write_dump, Real};
use stembed_core::Tensor;

use crate::CliError;

pub fn frame_path(dir: &Path, stem: &str, ext: &str, t: usize) -> PathBuf {
    dir.join(format!("{stem}_{t:04}.{ext}"))
}

/// Files in `dir` named `<stem>_NNNN.<ext>`, in frame order. The numbers
/// must run 0, 1, 2, … without gaps.
pub fn list_frames(dir: &Path, stem: &str, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let prefix = format!("{stem}_");
    let suffix = format!(".{ext}");
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(CliError::input)?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(num) = name.strip_prefix(&prefix).and_then(|s| s.strip_suffix(&suffix)) else {
            continue;
        };
        if let Ok(n) = num.parse::<usize>() {
            found.push((n, entry.path()));
        }
    }
    found.sort();
    for (expected, (n, path)) in found.iter().enumerate() {
        if *n != expected {
            return Err(CliError::Input(format!(
                "{}: expected frame {expected}, found {}",
                dir.display(),
                path.display()
            )));
        }
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

pub fn save_tensor<T: Real>(path: &Path, tensor: &Tensor<T>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    write_dump(BufWriter::new(file), tensor).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_tensor(path: &Path) -> Result<Tensor<f32>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    read_dump(BufReader::new(file)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
