//! `NSR1` checkpoints: one UTF-8 header line, then every layer's weight and
//! bias as little-endian `f32` in declaration order.

use std::io::{Read, Write};

use super::{ConvLayer, VectorFieldConfig, VectorFieldParams};
use crate::autodiff::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &str = "NSR1";

const MAX_HEADER: usize = 256;

pub fn write_checkpoint<T: Scalar>(params: &VectorFieldParams<T>, mut out: impl Write) -> Result<()> {
    let c = params.config();
    let header = format!(
        "{CHECKPOINT_MAGIC} depth={} hidden={} k={} channels={}\n",
        c.depth, c.hidden_channels, c.kernel_size, c.image_channels
    );
    let mut buf = Vec::with_capacity(header.len() + 4 * params.num_parameters());
    buf.extend_from_slice(header.as_bytes());
    for t in params.tensors() {
        for v in t.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)
        .map_err(|e| Error::io("writing checkpoint", e))
}

fn parse_header(line: &str) -> Result<VectorFieldConfig> {
    let mut parts = line.split(' ');
    if parts.next() != Some(CHECKPOINT_MAGIC) {
        return Err(Error::Checkpoint(format!("bad magic in header {line:?}")));
    }
    let mut field = |name: &str| -> Result<usize> {
        let part = parts
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("header missing {name}")))?;
        part.strip_prefix(name)
            .and_then(|rest| rest.strip_prefix('='))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("expected {name}=<int>, got {part:?}")))
    };
    let depth = field("depth")?;
    let hidden_channels = field("hidden")?;
    let kernel_size = field("k")?;
    let image_channels = field("channels")?;
    if parts.next().is_some() {
        return Err(Error::Checkpoint(format!("trailing fields in header {line:?}")));
    }
    let cfg = VectorFieldConfig {
        depth,
        hidden_channels,
        kernel_size,
        image_channels,
        init_seed: 0,
    };
    cfg.validate()
        .map_err(|e| Error::Checkpoint(format!("header describes an invalid network: {e}")))?;
    Ok(cfg)
}

pub fn read_checkpoint<T: Scalar>(mut input: impl Read) -> Result<VectorFieldParams<T>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("reading checkpoint", e))?;
    let nl = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("no header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let config = parse_header(header)?;
    let mut payload = bytes[nl + 1..].chunks_exact(4);

    let k = config.kernel_size;
    let mut next_tensor = |shape: Shape| -> Result<Tensor<T>> {
        let data = (0..shape.numel())
            .map(|_| {
                payload
                    .next()
                    .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
                    .ok_or_else(|| Error::Checkpoint("payload truncated".into()))
            })
            .collect::<Result<Vec<T>>>()?;
        Tensor::from_vec(shape, data)
    };
    let mut layers = Vec::with_capacity(config.depth);
    for (out, inp) in config.layer_channels() {
        let weight = next_tensor(Shape::new(out, inp, k, k))?;
        let bias = next_tensor(Shape::new(1, out, 1, 1))?;
        layers.push(ConvLayer { weight, bias });
    }
    if payload.next().is_some() || !payload.remainder().is_empty() {
        return Err(Error::Checkpoint("unexpected bytes after payload".into()));
    }
    VectorFieldParams::from_layers(config, layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> VectorFieldConfig {
        VectorFieldConfig {
            depth: 3,
            hidden_channels: 4,
            kernel_size: 3,
            image_channels: 3,
            init_seed: 9,
        }
    }

    #[test]
    fn header_and_payload_layout() {
        let p = VectorFieldParams::<f32>::init(cfg()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let header = b"NSR1 depth=3 hidden=4 k=3 channels=3\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(buf.len(), header.len() + 4 * p.num_parameters());
        let first = p.layers()[0].weight.data()[0];
        assert_eq!(&buf[header.len()..header.len() + 4], &first.to_le_bytes());
        let last_bias = *p.layers()[2].bias.data().last().unwrap();
        assert_eq!(&buf[buf.len() - 4..], &last_bias.to_le_bytes());
    }

    #[test]
    fn round_trip_f32_is_exact() {
        let p = VectorFieldParams::<f32>::init(cfg()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let q: VectorFieldParams<f32> = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(q.layers(), p.layers());
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let p = VectorFieldParams::<f32>::init(cfg()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[3] = b'2';
        assert!(read_checkpoint::<f32>(&bad_magic[..]).is_err());

        assert!(read_checkpoint::<f32>(&buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.extend_from_slice(&[0, 0, 0, 0]);
        assert!(read_checkpoint::<f32>(&long[..]).is_err());

        assert!(read_checkpoint::<f32>(&b"NSR1 depth=1 hidden=4 k=3 channels=3\n"[..]).is_err());
        assert!(read_checkpoint::<f32>(&b"NSR1 depth=3 hidden=4 k=3\n"[..]).is_err());
        assert!(read_checkpoint::<f32>(&b"garbage"[..]).is_err());
    }
}
