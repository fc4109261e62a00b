//! Files on disk: images, manifests, run configs. Checkpoints live with the network in
//! [`crate::vectorfield`]; path helpers for them are here.

mod codec;
mod config;
mod manifest;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

pub use codec::{load_image, quantize, save_image};
pub use config::RunConfig;
pub use manifest::Manifest;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vectorfield::{read_checkpoint, write_checkpoint, VectorFieldParams};

pub fn save_checkpoint<T: Scalar>(params: &VectorFieldParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_checkpoint(params, BufWriter::new(f))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<VectorFieldParams<T>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_checkpoint(BufReader::new(f))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}
