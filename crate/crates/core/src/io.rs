//! Binary file formats.
//!
//! All integers and floats are little-endian.
//!
//! * `PGT1` dense tensor: magic, `u32` rank, `u32` dims, `f64` payload, row-major.
//! * `PGS1` sparse matrix: magic, `u32` rows, `u32` cols, `u64` nnz, then
//!   `(u32 row, u32 col, f64 value)` triplets in canonical order.
//! * `PGL1` label grid: magic, `u32` height, `u32` width, `u32` foreground
//!   class count, then one `u16` per node (`0xFFFF` = ignored).
//! * Binary PPM (`P6`, maxval 255) for images.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::GcnParams;
use crate::graph::{GridShape, PartialLabelGrid};
use crate::image::RgbImage;
use crate::numeric::{DenseMatrix, SparseMatrix};
use crate::refine::CompleteLabelGrid;

pub const TENSOR_MAGIC: &[u8; 4] = b"PGT1";
pub const SPARSE_MAGIC: &[u8; 4] = b"PGS1";
pub const LABEL_MAGIC: &[u8; 4] = b"PGL1";
pub const IGNORED_LABEL: u16 = 0xFFFF;

/// A dense tensor of any rank, as stored in `PGT1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::format("PGT1", format!("dims {dims:?} need {len} values, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: &DenseMatrix) -> Self {
        Self {
            dims: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }

    pub fn into_matrix(self) -> Result<DenseMatrix> {
        match self.dims[..] {
            [r, c] => DenseMatrix::from_vec(r, c, self.data),
            _ => Err(Error::format("PGT1", format!("expected rank 2, got dims {:?}", self.dims))),
        }
    }
}

struct Reader<'a> {
    kind: &'static str,
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(kind: &'static str, buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        let mut r = Self { kind, buf };
        if r.take(4)? != magic {
            return Err(Error::format(kind, "bad magic"));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::format(self.kind, "truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
            .map_err(|_| Error::format(self.kind, "count overflows usize"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::format(self.kind, format!("{} trailing bytes", self.buf.len())))
        }
    }
}

fn put_u32(out: &mut Vec<u8>, kind: &'static str, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format(kind, format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 4 * t.dims.len() + 8 * t.data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    put_u32(&mut out, "PGT1", t.dims.len())?;
    for &d in &t.dims {
        put_u32(&mut out, "PGT1", d)?;
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(buf: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new("PGT1", buf, TENSOR_MAGIC)?;
    let rank = r.u32()?;
    let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format("PGT1", "tensor size overflows"))?;
    if r.buf.len() != len * 8 {
        return Err(Error::format("PGT1", format!("payload has {} bytes, expected {}", r.buf.len(), len * 8)));
    }
    let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Tensor::new(dims, data)
}

pub fn encode_sparse(s: &SparseMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + 16 * s.nnz());
    out.extend_from_slice(SPARSE_MAGIC);
    put_u32(&mut out, "PGS1", s.rows())?;
    put_u32(&mut out, "PGS1", s.cols())?;
    out.extend_from_slice(&(s.nnz() as u64).to_le_bytes());
    for &(r, c, v) in s.entries() {
        put_u32(&mut out, "PGS1", r)?;
        put_u32(&mut out, "PGS1", c)?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_sparse(buf: &[u8]) -> Result<SparseMatrix> {
    let mut r = Reader::new("PGS1", buf, SPARSE_MAGIC)?;
    let (rows, cols, nnz) = (r.u32()?, r.u32()?, r.u64()?);
    if r.buf.len() != nnz.saturating_mul(16) {
        return Err(Error::format("PGS1", "payload length does not match nnz"));
    }
    let mut entries = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        entries.push((r.u32()?, r.u32()?, r.f64()?));
    }
    r.finish()?;
    let canonical = entries.windows(2).all(|w| (w[0].0, w[0].1) < (w[1].0, w[1].1));
    if !canonical || entries.iter().any(|e| e.2 == 0.0) {
        return Err(Error::format("PGS1", "triplets not in canonical order"));
    }
    SparseMatrix::from_triplets(rows, cols, entries)
}

fn encode_label_header(shape: GridShape, num_classes: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 2 * shape.len());
    out.extend_from_slice(LABEL_MAGIC);
    put_u32(&mut out, "PGL1", shape.height)?;
    put_u32(&mut out, "PGL1", shape.width)?;
    put_u32(&mut out, "PGL1", num_classes)?;
    Ok(out)
}

fn decode_label_body(buf: &[u8]) -> Result<(GridShape, usize, Vec<u16>)> {
    let mut r = Reader::new("PGL1", buf, LABEL_MAGIC)?;
    let shape = GridShape::new(r.u32()?, r.u32()?);
    let num_classes = r.u32()?;
    if r.buf.len() != shape.len() * 2 {
        return Err(Error::format("PGL1", "label count does not match dimensions"));
    }
    let labels = (0..shape.len()).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok((shape, num_classes, labels))
}

pub fn encode_partial_labels(p: &PartialLabelGrid) -> Result<Vec<u8>> {
    let mut out = encode_label_header(p.shape(), p.num_classes())?;
    for l in p.labels() {
        out.extend_from_slice(&l.unwrap_or(IGNORED_LABEL).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_partial_labels(buf: &[u8]) -> Result<PartialLabelGrid> {
    let (shape, k, raw) = decode_label_body(buf)?;
    let labels = raw.into_iter().map(|l| (l != IGNORED_LABEL).then_some(l)).collect();
    PartialLabelGrid::new(shape, k, labels).map_err(|e| Error::format("PGL1", e.to_string()))
}

pub fn encode_complete_labels(g: &CompleteLabelGrid) -> Result<Vec<u8>> {
    let mut out = encode_label_header(g.shape(), g.num_classes())?;
    for l in g.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_complete_labels(buf: &[u8]) -> Result<CompleteLabelGrid> {
    let (shape, k, labels) = decode_label_body(buf)?;
    if labels.contains(&IGNORED_LABEL) {
        return Err(Error::format("PGL1", "complete label grid contains ignored nodes"));
    }
    CompleteLabelGrid::new(shape, k, labels).map_err(|e| Error::format("PGL1", e.to_string()))
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().flat_map(|p| p.map(to_byte)));
    out
}

/// Parses binary PPM (`P6`, maxval <= 255) and scales channels to `[0, 1]`.
pub fn decode_ppm(buf: &[u8]) -> Result<RgbImage> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("PPM", "truncated header"));
        }
        Ok(String::from_utf8_lossy(&buf[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(Error::format("PPM", "only binary P6 is supported"));
    }
    let mut num = || -> Result<usize> {
        token()?
            .parse()
            .map_err(|_| Error::format("PPM", "bad header number"))
    };
    let (width, height, maxval) = (num()?, num()?, num()?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::format("PPM", format!("unsupported maxval {maxval}")));
    }
    // single whitespace byte separates header and raster
    let body = &buf[pos + 1..];
    if body.len() != width * height * 3 {
        return Err(Error::format("PPM", "raster size does not match header"));
    }
    let scale = maxval as f64;
    let pixels = body
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / scale, c[1] as f64 / scale, c[2] as f64 / scale])
        .collect();
    RgbImage::new(height, width, pixels)
}

/// Entry `i` of the standard 21-class segmentation colormap.
pub fn palette_color(i: u16) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut c = i;
    for bit in (0..8).rev() {
        for (ch, v) in rgb.iter_mut().enumerate() {
            *v |= (((c >> ch) & 1) as u8) << bit;
        }
        c >>= 3;
    }
    rgb
}

/// Indexed-color rendering of a label grid.
pub fn render_labels(labels: &CompleteLabelGrid) -> Vec<u8> {
    let shape = labels.shape();
    let mut out = format!("P6\n{} {}\n255\n", shape.width, shape.height).into_bytes();
    out.extend(labels.labels().iter().flat_map(|&l| palette_color(l % 21)));
    out
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_file(path)?).map_err(|e| Error::format("JSON", format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::format("JSON", e.to_string()))?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub hidden: usize,
    pub classes: usize,
    pub seed: u64,
}

/// Writes `w1.pgt1`, `w2.pgt1` and `checkpoint.json` into `dir`, creating it
/// if needed.
pub fn save_checkpoint(dir: &Path, params: &GcnParams, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("w1.pgt1"), &encode_tensor(&Tensor::from_matrix(&params.w1))?)?;
    write_file(&dir.join("w2.pgt1"), &encode_tensor(&Tensor::from_matrix(&params.w2))?)?;
    let meta = CheckpointMeta {
        hidden: params.hidden(),
        classes: params.classes(),
        seed,
    };
    write_json(&dir.join("checkpoint.json"), &meta)
}

pub fn load_checkpoint(dir: &Path) -> Result<(GcnParams, CheckpointMeta)> {
    let w1 = decode_tensor(&read_file(&dir.join("w1.pgt1"))?)?.into_matrix()?;
    let w2 = decode_tensor(&read_file(&dir.join("w2.pgt1"))?)?.into_matrix()?;
    let meta: CheckpointMeta = read_json(&dir.join("checkpoint.json"))?;
    let params = GcnParams::new(w1, w2)?;
    if params.hidden() != meta.hidden || params.classes() != meta.classes {
        return Err(Error::format("checkpoint", "sidecar does not match tensors"));
    }
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tensor_layout_is_exact() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let bytes = encode_tensor(&t).unwrap();
        let mut expected = b"PGT1".to_vec();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&(-2.5f64).to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(decode_tensor(&bytes).unwrap(), t);
        assert!(decode_tensor(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_tensor(b"PGX1").is_err());
    }

    #[test]
    fn sparse_layout_is_exact() {
        let s = SparseMatrix::from_triplets(3, 2, [(2, 1, 0.5), (0, 0, 1.0)]).unwrap();
        let bytes = encode_sparse(&s).unwrap();
        assert_eq!(&bytes[..4], b"PGS1");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 8 + 2 * 16);
        assert_eq!(&bytes[12..20], &2u64.to_le_bytes());
        assert_eq!(&bytes[20..24], &0u32.to_le_bytes());
        assert_eq!(decode_sparse(&bytes).unwrap(), s);
    }

    #[test]
    fn labels_layout() {
        let p = PartialLabelGrid::new(GridShape::new(1, 3), 2, vec![Some(0), None, Some(2)]).unwrap();
        let bytes = encode_partial_labels(&p).unwrap();
        assert_eq!(&bytes[16..], &[0, 0, 0xFF, 0xFF, 2, 0]);
        assert_eq!(decode_partial_labels(&bytes).unwrap(), p);
        assert!(decode_complete_labels(&bytes).is_err());

        let g = CompleteLabelGrid::new(GridShape::new(2, 1), 1, vec![1, 0]).unwrap();
        assert_eq!(decode_complete_labels(&encode_complete_labels(&g).unwrap()).unwrap(), g);
    }

    #[test]
    fn ppm_and_palette() {
        let img = RgbImage::new(1, 2, vec![[0.0, 1.0, 0.2], [1.0, 0.0, 0.0]]).unwrap();
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(back.pixel(0, 0), [0.0, 1.0, 51.0 / 255.0]);
        assert_eq!(palette_color(0), [0, 0, 0]);
        assert_eq!(palette_color(1), [128, 0, 0]);
        assert_eq!(palette_color(15), [192, 128, 128]);
        let solid = CompleteLabelGrid::new(GridShape::new(2, 2), 3, vec![0; 4]).unwrap();
        let rendered = decode_ppm(&render_labels(&solid)).unwrap();
        assert!(rendered.pixels().iter().all(|p| *p == [0.0; 3]));
    }

    proptest! {
        #[test]
        fn tensor_roundtrip(dims in proptest::collection::vec(0usize..5, 0..4), seed in any::<u64>()) {
            let len: usize = dims.iter().product();
            let data: Vec<f64> = (0..len).map(|i| (seed as f64 + i as f64).sin() * 1e3).collect();
            let t = Tensor::new(dims, data).unwrap();
            prop_assert_eq!(decode_tensor(&encode_tensor(&t).unwrap()).unwrap(), t);
        }
    }
}
