//! Named-tensor checkpoint files.
//!
//! Layout: a UTF-8 header of newline-terminated lines, then raw data.
//!
//! ```text
//! AISVRNN-CKPT
//! version=1
//! kind=<vrnn|cnn>
//! <key>=<value>              metadata, any number, in writer order
//! tensor=<name>:<d0>x<d1>..  one per tensor, in data order
//! end
//! <f32 little-endian values of every tensor, concatenated>
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const MAGIC: &str = "AISVRNN-CKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("checkpoint missing metadata field {key:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| Error::Format(format!("checkpoint field {key:?} has bad value {raw:?}")))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = format!("{MAGIC}\nversion={VERSION}\nkind={}\n", self.kind);
        for (k, v) in &self.meta {
            if k.contains('=') || k.contains('\n') || v.contains('\n') {
                return Err(Error::Format(format!("unencodable metadata {k:?}")));
            }
            header.push_str(&format!("{k}={v}\n"));
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            header.push_str(&format!("tensor={name}:{}\n", dims.join("x")));
        }
        header.push_str("end\n");
        w.write_all(header.as_bytes())?;
        let mut buf = Vec::new();
        for (_, t) in &self.tensors {
            for &v in t.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let marker = b"\nend\n";
        let end = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| Error::Format("checkpoint header not terminated".into()))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        match lines.next() {
            Some(v) if v == format!("version={VERSION}") => {}
            other => return Err(Error::Format(format!("unsupported checkpoint version line {other:?}"))),
        }
        let kind = lines
            .next()
            .and_then(|l| l.strip_prefix("kind="))
            .ok_or_else(|| Error::Format("checkpoint missing kind".into()))?
            .to_string();
        let mut meta = Vec::new();
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        for line in lines {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            if k == "tensor" {
                let (name, dims) = v.split_once(':').ok_or_else(|| Error::Format(format!("bad tensor line {line:?}")))?;
                let dims = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Format(format!("bad tensor dims {line:?}")))?;
                shapes.push((name.to_string(), dims));
            } else {
                meta.push((k.to_string(), v.to_string()));
            }
        }
        let data = &bytes[end + marker.len()..];
        let total: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if data.len() != total * 4 {
            return Err(Error::Format(format!("checkpoint data holds {} bytes, header declares {}", data.len(), total * 4)));
        }
        let mut values = data.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, shape) in shapes {
            let n = shape.iter().product();
            let vals: Vec<f64> = values.by_ref().take(n).collect();
            tensors.push((name, Tensor::new(shape, vals)?));
        }
        Ok(Checkpoint { kind, meta, tensors })
    }

    /// Tensors in order, checking names and shapes against expectations.
    pub fn take_tensors(self, names: &[&str], shapes: &[Vec<usize>]) -> Result<Vec<Tensor>> {
        if self.tensors.len() != names.len() {
            return Err(Error::Format(format!("checkpoint has {} tensors, expected {}", self.tensors.len(), names.len())));
        }
        self.tensors
            .into_iter()
            .zip(names.iter().zip(shapes))
            .map(|((name, t), (want, shape))| {
                if name != *want {
                    return Err(Error::Format(format!("tensor {name:?} where {want:?} expected")));
                }
                if t.shape() != shape.as_slice() {
                    return Err(Error::Format(format!("tensor {name:?} has shape {:?}, expected {:?}", t.shape(), shape)));
                }
                Ok(t)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            kind: "test".into(),
            meta: vec![("alpha".into(), "0.25".into())],
            tensors: vec![
                ("a".into(), Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.25, 0.1]).unwrap()),
                ("b".into(), Tensor::new(vec![3], vec![7.0, 8.0, 9.0]).unwrap()),
            ],
        }
    }

    #[test]
    fn round_trip_is_exact_at_f32() {
        let mut buf = Vec::new();
        sample().write(&mut buf).unwrap();
        let back = Checkpoint::read(buf.as_slice()).unwrap();
        assert_eq!(back.kind, "test");
        assert_eq!(back.get("alpha").unwrap(), "0.25");
        assert_eq!(back.tensors[0].1.data()[3], 0.1f32 as f64);
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn truncation_and_bad_magic() {
        let mut buf = Vec::new();
        sample().write(&mut buf).unwrap();
        assert!(matches!(Checkpoint::read(&buf[..buf.len() - 3]), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::read(&buf[..10]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read(bad.as_slice()), Err(Error::Format(_))));
    }
}
