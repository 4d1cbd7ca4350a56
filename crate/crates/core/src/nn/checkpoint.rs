//! AGLW weight files.
//!
//! ```text
//! "AGLW" | version u32
//! repeated until EOF, sorted by path:
//!   path_len u16 | path (UTF-8) | rank u8 | dims u32 * rank | f32 * prod(dims)
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AGLW";
pub const VERSION: u32 = 1;
/// Upper bound on tensor rank accepted by the decoder.
pub const MAX_RANK: usize = 8;

pub fn encode(ps: &ParamSet<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + ps.num_scalars() * 4 + ps.len() * 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (path, p) in ps.sorted() {
        let bytes = path.as_bytes();
        let len = u16::try_from(bytes.len()).expect("parameter path longer than 65535 bytes");
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(bytes);
        let shape = p.value.shape();
        out.push(u8::try_from(shape.len()).expect("rank fits in u8"));
        for &d in shape {
            out.extend_from_slice(&u32::try_from(d).expect("dimension fits in u32").to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::decode(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parse a weight file into `(path, tensor)` entries in file order.
pub fn decode_bytes(buf: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::decode(0, "bad magic, expected AGLW"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::decode(4, format!("unsupported version {version}")));
    }
    let mut out: Vec<(String, Tensor<f32>)> = Vec::new();
    while r.pos < buf.len() {
        let at = r.pos;
        let len = u16::from_le_bytes(r.take(2, "path length")?.try_into().expect("2 bytes")) as usize;
        let path = std::str::from_utf8(r.take(len, "path")?)
            .map_err(|_| Error::decode(at + 2, "path is not UTF-8"))?
            .to_string();
        if let Some((prev, _)) = out.last() {
            if prev.as_str() >= path.as_str() {
                return Err(Error::decode(at, format!("path {path:?} out of order or duplicated")));
            }
        }
        let rank_at = r.pos;
        let rank = r.take(1, "rank")?[0] as usize;
        if rank > MAX_RANK {
            return Err(Error::decode(rank_at, format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = r.u32("dimension")? as usize;
            count = count
                .checked_mul(d)
                .ok_or_else(|| Error::decode(r.pos - 4, "tensor size overflows"))?;
            shape.push(d);
        }
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::decode(r.pos, "tensor size overflows"))?;
        let payload = r.take(bytes, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        out.push((path, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

pub fn save(ps: &ParamSet<f32>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(ps))?;
    Ok(())
}

/// Load values into an already-constructed parameter set.
pub fn load_into(ps: &mut ParamSet<f32>, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    ps.load_values(&decode_bytes(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn sample_set() -> ParamSet<f32> {
        let mut ps = ParamSet::new();
        let mut rng = seed::rng_from(4);
        ps.add_uniform("z.weight", &[3, 5], 3, &mut rng);
        ps.add_uniform("a.bias", &[5], 3, &mut rng);
        ps.add_const("m.scalar", &[], -0.0);
        ps
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ps = sample_set();
        let bytes = encode(&ps);
        assert_eq!(&bytes[..4], MAGIC);
        let entries = decode_bytes(&bytes).unwrap();
        let names: Vec<&str> = entries.iter().map(|(p, _)| p.as_str()).collect();
        assert_eq!(names, ["a.bias", "m.scalar", "z.weight"]);
        let mut loaded = sample_set();
        for (_, p) in loaded.iter_mut() {
            p.value.fill(1.0);
        }
        loaded.load_values(&entries).unwrap();
        assert_eq!(encode(&loaded), bytes);
        assert_eq!(loaded.value(loaded.find("m.scalar").unwrap()).data()[0].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode(&sample_set());
        for cut in [0, 3, 7, 9, 20, bytes.len() - 1] {
            match decode_bytes(&bytes[..cut]) {
                Err(Error::Decode { offset, .. }) => assert!(offset <= cut),
                Ok(_) if cut == 8 => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_bad_headers() {
        let mut bytes = encode(&sample_set());
        bytes[0] = b'X';
        assert!(decode_bytes(&bytes).is_err());
        let mut bytes = encode(&sample_set());
        bytes[4] = 9;
        assert!(matches!(decode_bytes(&bytes), Err(Error::Decode { offset: 4, .. })));
    }

    #[test]
    fn huge_dimensions_do_not_allocate() {
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.push(b'w');
        bytes.push(3);
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(decode_bytes(&bytes).is_err());
    }
}
