use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::FairModel;
use crate::diff::Matrix;
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"MBFM";
pub const MODEL_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Layout, all little-endian: magic, `u32` version, `u32` input dim,
/// featurizer then classifier widths (each a `u32` count then `u32`
/// widths), sensitive then target grids (`u32` count then `f64`s), then
/// every parameter in [`FairModel::parameters`] order as row-major `f64`.
pub fn encode_model(model: &FairModel) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut buf, MODEL_VERSION as usize)?;
    put_u32(&mut buf, model.input_dim())?;
    for widths in [model.featurizer.widths(), model.classifier.widths()] {
        put_u32(&mut buf, widths.len())?;
        for w in widths {
            put_u32(&mut buf, w)?;
        }
    }
    for grid in [&model.sensitive_grid, &model.target_grid] {
        put_u32(&mut buf, grid.len())?;
        put_f64s(&mut buf, grid);
    }
    for p in model.parameters() {
        put_f64s(&mut buf, p.data());
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, k: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(k).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("model file is truncated".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Format("model file is corrupt".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn widths(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n == 0 || n > 64 {
            return Err(Error::Format(format!("implausible layer count {n}")));
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<FairModel> {
    if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format("not a model file".into()));
    }
    let mut r = Reader { bytes, at: 4 };
    let version = r.u32()?;
    if version != MODEL_VERSION as usize {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let input_dim = r.u32()?;
    let fw = r.widths()?;
    let cw = r.widths()?;
    if cw.len() < 2 || cw.last() != Some(&2) {
        return Err(Error::Format("classifier must end in two logits".into()));
    }
    let mut grids = Vec::with_capacity(2);
    for _ in 0..2 {
        let g = r.u32()?;
        grids.push(r.f64s(g)?);
    }
    let count = |input: usize, widths: &[usize]| -> u128 {
        std::iter::once(input)
            .chain(widths.iter().copied())
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| (w[0] as u128 + 1) * w[1] as u128)
            .sum()
    };
    let expected = count(input_dim, &fw) + count(fw[fw.len() - 1], &cw) + 1;
    if expected * 8 > (bytes.len() - r.at) as u128 {
        return Err(Error::Format("model file is truncated".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = FairModel::new(input_dim, &fw, cw[0], &mut rng)
        .map_err(|e| Error::Format(format!("bad model layout: {e}")))?;
    if model.classifier.widths() != cw {
        return Err(Error::Format("unsupported classifier layout".into()));
    }
    let values = model
        .parameter_shapes()
        .into_iter()
        .map(|(rows, cols)| Matrix::from_vec(rows, cols, r.f64s(rows * cols)?).map_err(Error::from))
        .collect::<Result<Vec<_>>>()?;
    if r.at != bytes.len() {
        return Err(Error::Format("trailing bytes after model parameters".into()));
    }
    for (dst, src) in model.parameters_mut().into_iter().zip(values) {
        *dst = src;
    }
    model.target_grid = grids.pop().expect("two grids");
    model.sensitive_grid = grids.pop().expect("two grids");
    Ok(model)
}

pub fn save_model(path: &Path, model: &FairModel) -> Result<()> {
    std::fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FairModel> {
    decode_model(&std::fs::read(path)?)
}
