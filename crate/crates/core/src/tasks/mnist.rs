use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TaskBatch;
use crate::linalg::Matrix;
use crate::{Error, Result, Scalar};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Grayscale images stored as raw bytes, one row-major image after another.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistDataset {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl MnistDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn raw(&self, i: usize) -> &[u8] {
        let n = self.seq_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Image `i` flattened row-major, scaled to `[0, 1]`.
    pub fn sequence(&self, i: usize) -> Vec<f64> {
        self.raw(i).iter().map(|&p| f64::from(p) / 255.0).collect()
    }

    /// Pixel-by-pixel batch (`d_x = 1`) with one label per sequence.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> TaskBatch<T> {
        let n = self.seq_len();
        let inputs = (0..n)
            .map(|t| {
                Matrix::from_fn(1, indices.len(), |_, j| {
                    T::of(f64::from(self.pixels[indices[j] * n + t]) / 255.0)
                })
            })
            .collect();
        TaskBatch {
            inputs,
            targets: vec![indices
                .iter()
                .map(|&i| usize::from(self.labels[i]))
                .collect()],
            mask: vec![vec![true; indices.len()]],
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> Result<u32> {
        let bytes = self.take(4)?;
        Ok(u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.buf.len() as u64,
                message: format!("truncated: needed {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let m = self.u32()?;
        if m != expected {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic 0x{m:08x}, expected 0x{expected:08x}"),
            });
        }
        Ok(())
    }
}

/// Parses an IDX image file. Returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(buf: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(IDX_IMAGES_MAGIC)?;
    let n = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let pixels = r.take(n * rows * cols)?.to_vec();
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(buf: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(IDX_LABELS_MAGIC)?;
    let n = r.u32()? as usize;
    let labels = r.take(n)?.to_vec();
    if let Some(p) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Format {
            offset: 8 + p as u64,
            message: format!("label {} outside 0..=9", labels[p]),
        });
    }
    Ok(labels)
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<MnistDataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("{n} images but {} labels", labels.len()),
        });
    }
    Ok(MnistDataset {
        rows,
        cols,
        pixels,
        labels,
    })
}

/// Uniform random permutation of `0..n` drawn from `rng_seed`.
pub fn permutation_from_seed(n: usize, rng_seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    p
}

/// Reorders pixels of every image: new position `t` takes old pixel `perm[t]`.
pub fn apply_permutation(ds: &MnistDataset, perm: &[usize]) -> Result<MnistDataset> {
    let n = ds.seq_len();
    let mut seen = vec![false; n];
    if perm.len() != n
        || perm
            .iter()
            .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::contract(format!("not a permutation of 0..{n}")));
    }
    let mut pixels = Vec::with_capacity(ds.pixels.len());
    for i in 0..ds.len() {
        let img = ds.raw(i);
        pixels.extend(perm.iter().map(|&p| img[p]));
    }
    Ok(MnistDataset {
        pixels,
        ..ds.clone()
    })
}

/// One permutation drawn from `rng_seed`, applied to every image.
pub fn apply_fixed_permutation(ds: &MnistDataset, rng_seed: u64) -> (MnistDataset, Vec<usize>) {
    let perm = permutation_from_seed(ds.seq_len(), rng_seed);
    let out = apply_permutation(ds, &perm).expect("seeded permutation is valid");
    (out, perm)
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for w in [IDX_IMAGES_MAGIC, n, rows, cols] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    fn fixture() -> MnistDataset {
        let mut pixels = vec![0u8; 2 * 784];
        pixels[0] = 255;
        pixels[783] = 51;
        pixels[784 + 28] = 128;
        MnistDataset {
            rows: 28,
            cols: 28,
            pixels,
            labels: vec![3, 7],
        }
    }

    #[test]
    fn two_image_fixture_round_trips_from_disk() {
        let ds = fixture();
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lbl.idx");
        std::fs::File::create(&ip)
            .unwrap()
            .write_all(&idx_images(2, 28, 28, &ds.pixels))
            .unwrap();
        std::fs::File::create(&lp)
            .unwrap()
            .write_all(&idx_labels(&ds.labels))
            .unwrap();
        let back = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(back, ds);
        let s0 = back.sequence(0);
        assert_eq!(s0.len(), 784);
        assert_eq!(s0[0], 1.0);
        assert_eq!(s0[783], 0.2);
        assert_eq!(back.sequence(1)[28], 128.0 / 255.0);
    }

    #[test]
    fn magic_gate() {
        let mut buf = idx_images(1, 1, 1, &[0]);
        assert!(parse_idx_images(&buf).is_ok());
        buf[3] = 0x02;
        assert!(matches!(
            parse_idx_images(&buf),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(
            parse_idx_labels(&idx_images(1, 1, 1, &[0])),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn truncated_file_reports_offset() {
        let buf = idx_images(2, 2, 2, &[1, 2, 3]);
        match parse_idx_images(&buf) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 19),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_idx_labels(&[0, 0, 8]),
            Err(Error::Format { offset: 3, .. })
        ));
    }

    #[test]
    fn zero_image_is_zero_sequence() {
        let ds = fixture();
        let mut z = ds.clone();
        z.pixels.fill(0);
        assert!(z.sequence(1).iter().all(|&p| p == 0.0));
    }

    #[test]
    fn batch_is_pixel_sequence() {
        let b: TaskBatch<f64> = fixture().batch(&[1, 0]);
        assert_eq!(b.steps(), 784);
        assert_eq!(b.inputs[0].shape(), (1, 2));
        assert_eq!(b.inputs[0][(0, 1)], 1.0);
        assert_eq!(b.targets, vec![vec![7, 3]]);
    }

    #[test]
    fn permutation_properties() {
        let ds = fixture();
        let id: Vec<usize> = (0..784).collect();
        assert_eq!(apply_permutation(&ds, &id).unwrap(), ds);
        let (p1, perm1) = apply_fixed_permutation(&ds, 42);
        let (p2, perm2) = apply_fixed_permutation(&ds, 42);
        assert_eq!(perm1, perm2);
        assert_eq!(p1, p2);
        assert_ne!(perm1, id);
        let back = apply_permutation(&p1, &invert_permutation(&perm1)).unwrap();
        assert_eq!(back, ds);
        assert!(apply_permutation(&ds, &[0; 784]).is_err());
    }
}
