//! Binary model persistence and the precomputed-embeddings exchange format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::featurize::FeaturizerConfig;
use super::{DenseMatrix, EncoderModel};
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"PKRM";
const MODEL_VERSION: u32 = 1;

/// Model file layout (little-endian): magic, version, d, num_buckets,
/// ngram_min, ngram_max, hash_seed, then d*num_buckets f32 weights in
/// row-major order. Weights are stored at f32; save(load(x)) is
/// byte-identical to x.
pub fn save_model(model: &EncoderModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(MODEL_MAGIC).map_err(io_err)?;
    w.write_all(&MODEL_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(model.dim() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(model.featurizer.num_buckets as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(model.featurizer.ngram_min as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(model.featurizer.ngram_max as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&model.featurizer.hash_seed.to_le_bytes()).map_err(io_err)?;
    for v in &model.projection.data {
        w.write_all(&(*v as f32).to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn load_model(path: &Path) -> Result<EncoderModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| Error::BadModelFile { path: path.display().to_string(), msg: msg.into() };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MODEL_MAGIC {
        return Err(bad("wrong magic"));
    }
    let version = read_u32(&mut r).map_err(|_| bad("truncated header"))?;
    if version != MODEL_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dim = read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
    let num_buckets = read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
    let ngram_min = read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
    let ngram_max = read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
    let hash_seed = read_u64(&mut r).map_err(|_| bad("truncated header"))?;

    let mut data = Vec::with_capacity(dim * num_buckets);
    let mut buf = [0u8; 4];
    for _ in 0..dim * num_buckets {
        r.read_exact(&mut buf).map_err(|_| bad("truncated weights"))?;
        data.push(f32::from_le_bytes(buf) as f64);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad("trailing bytes after weights"));
    }

    Ok(EncoderModel {
        featurizer: FeaturizerConfig { ngram_min, ngram_max, num_buckets, hash_seed },
        projection: DenseMatrix { rows: dim, cols: num_buckets, data },
        shared: true,
    })
}

/// Precomputed-embeddings file: u32 dim, then records of
/// (u32 id length, UTF-8 id, dim f32 values), little-endian throughout.
/// External encoders can produce this to bypass the built-in featurizer.
pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<(String, Vec<f32>)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: String| Error::BadEmbeddingsFile { path: path.display().to_string(), msg };

    let dim = read_u32(&mut r).map_err(|_| bad("missing dim header".into()))? as usize;
    if dim == 0 {
        return Err(bad("dim must be >= 1".into()));
    }
    let mut records = Vec::new();
    loop {
        let id_len = match read_u32(&mut r) {
            Ok(n) => n as usize,
            Err(_) => break,
        };
        let mut id_bytes = vec![0u8; id_len];
        r.read_exact(&mut id_bytes)
            .map_err(|_| bad(format!("truncated id in record {}", records.len())))?;
        let id = String::from_utf8(id_bytes)
            .map_err(|_| bad(format!("non-UTF-8 id in record {}", records.len())))?;
        let mut vec = Vec::with_capacity(dim);
        let mut buf = [0u8; 4];
        for _ in 0..dim {
            r.read_exact(&mut buf)
                .map_err(|_| bad(format!("truncated vector for id '{id}'")))?;
            vec.push(f32::from_le_bytes(buf));
        }
        records.push((id, vec));
    }
    Ok((dim, records))
}

pub fn write_embeddings(dim: usize, records: &[(String, Vec<f32>)], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(&(dim as u32).to_le_bytes()).map_err(io_err)?;
    for (id, vec) in records {
        if vec.len() != dim {
            return Err(Error::DimensionMismatch { left: vec.len(), right: dim });
        }
        w.write_all(&(id.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(id.as_bytes()).map_err(io_err)?;
        for v in vec {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_file_round_trips_bit_exactly() {
        let cfg = FeaturizerConfig { ngram_min: 2, ngram_max: 4, num_buckets: 512, hash_seed: 42 };
        let mut model = EncoderModel::new(cfg, 6).unwrap();
        for (i, w) in model.projection.data.iter_mut().enumerate() {
            *w = ((i as f64) * 0.37 - 20.0).sin();
        }
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.bin");
        let p2 = dir.path().join("m2.bin");
        save_model(&model, &p1).unwrap();
        let loaded = load_model(&p1).unwrap();
        assert_eq!(loaded.featurizer, model.featurizer);
        assert_eq!(loaded.dim(), model.dim());
        save_model(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn load_rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        std::fs::write(&p, b"nope").unwrap();
        assert!(matches!(load_model(&p), Err(Error::BadModelFile { .. })));
    }

    #[test]
    fn embeddings_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vecs.bin");
        let records = vec![
            ("en-1".to_string(), vec![0.25f32, -1.5, 3.0]),
            ("en-2".to_string(), vec![1.0f32, 2.0, -0.125]),
        ];
        write_embeddings(3, &records, &p).unwrap();
        let (dim, loaded) = read_embeddings(&p).unwrap();
        assert_eq!(dim, 3);
        assert_eq!(loaded, records);
    }
}
