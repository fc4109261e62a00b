use std::path::{Path, PathBuf};

use super::codec::load_image;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Image list: one path per line, relative paths resolved against the
/// manifest's directory. Blank lines and `#` comments are skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<PathBuf>,
}

impl Manifest {
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Manifest {
        let root = root.into();
        let entries = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let p = Path::new(l);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    root.join(p)
                }
            })
            .collect();
        Manifest { root, entries }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Manifest::parse(&text, root);
        if m.entries.is_empty() {
            return Err(Error::Ingestion(format!("manifest {} lists no images", path.display())));
        }
        Ok(m)
    }

    /// Decodes every entry, labelled by its path.
    pub fn load_all<T: Scalar>(&self) -> Result<Vec<(String, Image<T>)>> {
        self.entries
            .iter()
            .map(|p| Ok((p.display().to_string(), load_image(p)?)))
            .collect()
    }
}
