//! Weight-file persistence.
//!
//! Layout: magic `FEV1`, length-prefixed architecture tag, then per-tensor
//! records (name length + bytes, rank, extents as u32 LE, values as f32 LE),
//! terminated by a 64-bit FNV-1a checksum of all preceding bytes. Training
//! metadata rides in a JSON sidecar next to the weight file.

use std::fs;
use std::path::Path;

use super::{Arch, ClassifierParams, GeneratorParams, ModelError, TrainMeta};
use crate::tensor::{fnv1a64, Tensor};

const MAGIC: &[u8; 4] = b"FEV1";
const GENERATOR_TAG: &str = "generator";

fn encode(tag: &str, tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    buf.extend_from_slice(tag.as_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a64(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.buf.len() {
            return Err(ModelError::WeightFile {
                path: self.path.into(),
                msg: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| ModelError::WeightFile {
            path: self.path.into(),
            msg: format!("invalid utf-8 string at byte {}", self.pos - len),
        })
    }
}

fn decode(bytes: &[u8], path: &str) -> Result<(String, Vec<(String, Tensor)>), ModelError> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(ModelError::WeightFile { path: path.into(), msg: "file too short".into() });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let actual = fnv1a64(body);
    if stored != actual {
        return Err(ModelError::WeightFile {
            path: path.into(),
            msg: format!("checksum mismatch: stored {stored:#018x}, computed {actual:#018x}"),
        });
    }
    let mut r = Reader { buf: body, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(ModelError::WeightFile { path: path.into(), msg: "bad magic".into() });
    }
    let tag = r.string()?;
    let mut tensors = Vec::new();
    while r.pos < body.len() {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((name, Tensor::new(shape, data)));
    }
    Ok((tag, tensors))
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.json");
    std::path::PathBuf::from(p)
}

pub fn save_classifier(path: &Path, params: &ClassifierParams) -> Result<(), ModelError> {
    fs::write(path, encode(params.arch.tag(), &params.tensors))?;
    fs::write(meta_path(path), serde_json::to_string_pretty(&params.meta).expect("meta json"))?;
    Ok(())
}

pub fn load_classifier(path: &Path) -> Result<ClassifierParams, ModelError> {
    let bytes = fs::read(path).map_err(|e| ModelError::WeightFile {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let (tag, tensors) = decode(&bytes, &path.display().to_string())?;
    let arch = Arch::from_tag(&tag).ok_or_else(|| ModelError::WeightFile {
        path: path.display().to_string(),
        msg: format!("unknown architecture tag {tag:?}"),
    })?;
    let meta = match fs::read_to_string(meta_path(path)) {
        Ok(s) => serde_json::from_str::<TrainMeta>(&s).unwrap_or_default(),
        Err(_) => TrainMeta::default(),
    };
    Ok(ClassifierParams { arch, tensors, meta })
}

pub fn save_generator(path: &Path, params: &GeneratorParams) -> Result<(), ModelError> {
    fs::write(path, encode(GENERATOR_TAG, &params.tensors))?;
    Ok(())
}

pub fn load_generator(path: &Path) -> Result<GeneratorParams, ModelError> {
    let bytes = fs::read(path).map_err(|e| ModelError::WeightFile {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let (tag, tensors) = decode(&bytes, &path.display().to_string())?;
    if tag != GENERATOR_TAG {
        return Err(ModelError::WeightFile {
            path: path.display().to_string(),
            msg: format!("expected generator weights, found tag {tag:?}"),
        });
    }
    Ok(GeneratorParams { tensors })
}

#[cfg(test)]
mod tests {
    use super::super::{classify, init_classifier, init_generator, Arch};
    use super::*;
    use crate::img::Image;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn classifier_roundtrip_reproduces_logits_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut params = init_classifier(Arch::PixelCnn, &mut rng);
        params.meta.epochs = 7;
        params.meta.dataset_hash = 0xdeadbeef;
        let mut probe = Image::zeros(64, 64);
        for v in probe.tensor_mut().data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let before = classify(&params, &probe).unwrap();

        let path = dir.path().join("clf.fev1");
        save_classifier(&path, &params).unwrap();
        let loaded = load_classifier(&path).unwrap();
        assert_eq!(loaded.meta, params.meta);
        assert!(loaded.same_weights(&params));
        let after = classify(&loaded, &probe).unwrap();
        assert_eq!(before.to_bits(), after.to_bits());
    }

    #[test]
    fn generator_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = init_generator(&mut rng);
        let path = dir.path().join("gen.fev1");
        save_generator(&path, &params).unwrap();
        let loaded = load_generator(&path).unwrap();
        for ((an, at), (bn, bt)) in params.tensors.iter().zip(&loaded.tensors) {
            assert_eq!(an, bn);
            assert_eq!(at.shape(), bt.shape());
            assert!(at.data().iter().zip(bt.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn corrupted_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = init_classifier(Arch::PixelCnnSmall, &mut rng);
        let path = dir.path().join("clf.fev1");
        save_classifier(&path, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_classifier(&path).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }
}
