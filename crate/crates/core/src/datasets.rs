//! Image datasets (IDX, CIFAR binary) and synthetic Gaussian data.
//!
//! Images are stored one per row, flattened channel-planar: pixel `(y, x)` of
//! channel `ch` sits at column `ch·h·w + y·w + x`. For single-channel data this
//! is the plain row-major raster.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Matrix,
    pub labels: Vec<usize>,
    pub shape: ImageShape,
    pub num_classes: usize,
    /// Set for synthetic real-valued data that is not confined to `[0, 1]`.
    pub unclamped: bool,
}

impl Dataset {
    /// Pixel data in `[0, 1]`; `num_classes` is inferred from the labels.
    pub fn new(images: Matrix, labels: Vec<usize>, shape: ImageShape) -> Result<Self> {
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        Self::with_classes(images, labels, shape, num_classes, false)
    }

    pub fn with_classes(
        images: Matrix,
        labels: Vec<usize>,
        shape: ImageShape,
        num_classes: usize,
        unclamped: bool,
    ) -> Result<Self> {
        if images.cols() != shape.len() {
            return Err(Error::Consistency(format!(
                "image width {} does not match shape {}x{}x{}",
                images.cols(),
                shape.height,
                shape.width,
                shape.channels
            )));
        }
        if images.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Consistency(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        if !unclamped {
            if let Some(v) = images.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Consistency(format!("pixel value {v} outside [0, 1]")));
            }
        } else if !images.is_finite() {
            return Err(Error::Consistency("non-finite sample value".into()));
        }
        Ok(Self {
            images,
            labels,
            shape,
            num_classes,
            unclamped,
        })
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            shape: self.shape,
            num_classes: self.num_classes,
            unclamped: self.unclamped,
        }
    }

    /// The first `n` samples (all of them if `n` exceeds the length).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Concatenates `other` after `self`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.shape != other.shape {
            return Err(Error::Consistency("cannot concatenate datasets of different shapes".into()));
        }
        let mut data = self.images.as_slice().to_vec();
        data.extend_from_slice(other.images.as_slice());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Dataset {
            images: Matrix::from_vec(self.len() + other.len(), self.dim(), data)?,
            labels,
            shape: self.shape,
            num_classes: self.num_classes.max(other.num_classes),
            unclamped: self.unclamped || other.unclamped,
        })
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::file(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::file(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, context: &str) -> Result<u32> {
    let end = offset + 4;
    let b = bytes.get(offset..end).ok_or_else(|| Error::Length {
        context: context.to_string(),
        expected: end,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parsed IDX image payload: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "IDX image header")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"
        )));
    }
    let count = be_u32(bytes, 4, "IDX image header")? as usize;
    let rows = be_u32(bytes, 8, "IDX image header")? as usize;
    let cols = be_u32(bytes, 12, "IDX image header")? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::Length {
            context: "IDX image payload".into(),
            expected: need,
            found: bytes.len(),
        });
    }
    Ok((count, rows, cols, &bytes[16..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "IDX label header")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "IDX label magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}"
        )));
    }
    let count = be_u32(bytes, 4, "IDX label header")? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(Error::Length {
            context: "IDX label payload".into(),
            expected: need,
            found: bytes.len(),
        });
    }
    Ok(&bytes[8..need])
}

/// Loads an IDX image/label file pair (optionally gzip-compressed).
pub fn load_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Dataset> {
    let image_bytes = read_maybe_gz(image_path.as_ref())?;
    let label_bytes = read_maybe_gz(label_path.as_ref())?;
    let (count, rows, cols, pixels) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != count {
        return Err(Error::Consistency(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    let data = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let images = Matrix::from_vec(count, rows * cols, data)?;
    let labels = labels.iter().map(|&l| usize::from(l)).collect();
    Dataset::new(images, labels, ImageShape::new(rows, cols, 1))
}

/// Serializes a single-channel dataset as an (uncompressed) IDX pair.
///
/// Pixels are written as `round(v·255)`, so byte-derived data round-trips exactly.
pub fn write_idx(
    data: &Dataset,
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<()> {
    if data.shape.channels != 1 {
        return Err(Error::Input("IDX export needs single-channel images".into()));
    }
    let mut img = Vec::with_capacity(16 + data.images.as_slice().len());
    img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(data.len() as u32).to_be_bytes());
    img.extend_from_slice(&(data.shape.height as u32).to_be_bytes());
    img.extend_from_slice(&(data.shape.width as u32).to_be_bytes());
    img.extend(data.images.as_slice().iter().map(|&v| to_byte(v)));
    let mut lbl = Vec::with_capacity(8 + data.len());
    lbl.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(data.len() as u32).to_be_bytes());
    for &l in &data.labels {
        let byte = u8::try_from(l).map_err(|_| Error::Input(format!("label {l} exceeds a byte")))?;
        lbl.push(byte);
    }
    let (ip, lp) = (image_path.as_ref(), label_path.as_ref());
    fs::write(ip, img).map_err(|e| Error::file(ip, e))?;
    fs::write(lp, lbl).map_err(|e| Error::file(lp, e))?;
    Ok(())
}

pub(crate) fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// CIFAR binary record layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarFormat {
    /// 1 label byte + 3072 pixel bytes.
    Cifar10,
    /// coarse label byte + fine label byte + 3072 pixel bytes.
    Cifar100 { coarse_labels: bool },
}

impl CifarFormat {
    pub fn record_len(self) -> usize {
        match self {
            CifarFormat::Cifar10 => 3073,
            CifarFormat::Cifar100 { .. } => 3074,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarFormat::Cifar10 => 10,
            CifarFormat::Cifar100 { coarse_labels: true } => 20,
            CifarFormat::Cifar100 { coarse_labels: false } => 100,
        }
    }
}

pub const CIFAR_SHAPE: ImageShape = ImageShape::new(32, 32, 3);

/// Loads CIFAR batch files in the given order. Pixel bytes are already
/// channel-planar (R plane, G plane, B plane), which is the flat layout used here.
pub fn load_cifar<P: AsRef<Path>>(batch_paths: &[P], format: CifarFormat) -> Result<Dataset> {
    let record = format.record_len();
    let npix = CIFAR_SHAPE.len();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let path = path.as_ref();
        let bytes = read_maybe_gz(path)?;
        if bytes.len() % record != 0 {
            return Err(Error::Format(format!(
                "{}: length {} is not a multiple of the {record}-byte record",
                path.display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(record) {
            let (label, pixels) = match format {
                CifarFormat::Cifar10 => (rec[0], &rec[1..]),
                CifarFormat::Cifar100 { coarse_labels } => {
                    (if coarse_labels { rec[0] } else { rec[1] }, &rec[2..])
                }
            };
            labels.push(usize::from(label));
            data.extend(pixels[..npix].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    let images = Matrix::from_vec(labels.len(), npix, data)?;
    let classes = format
        .num_classes()
        .max(labels.iter().max().map_or(0, |&m| m + 1));
    Dataset::with_classes(images, labels, CIFAR_SHAPE, classes, false)
}

/// Zero-mean Gaussian with covariance `Φ diag(λ) Φᵀ`, shifted by `mean`.
#[derive(Clone, Debug)]
pub struct GaussianSpec {
    pub dim: usize,
    /// Descending, non-negative.
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
    pub rotation_seed: u64,
}

impl GaussianSpec {
    /// `λ_n = 1/n` for `n = 1..=dim`, zero mean.
    pub fn harmonic(dim: usize, rotation_seed: u64) -> Self {
        Self {
            dim,
            eigenvalues: (1..=dim).map(|n| 1.0 / n as f64).collect(),
            mean: vec![0.0; dim],
            rotation_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eigenvalues.len() != self.dim || self.mean.len() != self.dim {
            return Err(Error::Spec(format!(
                "dimension {} with {} eigenvalues and mean of length {}",
                self.dim,
                self.eigenvalues.len(),
                self.mean.len()
            )));
        }
        if let Some((i, v)) = self
            .eigenvalues
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0) || !v.is_finite())
        {
            return Err(Error::Spec(format!("eigenvalue #{} is {v}; must be >= 0", i + 1)));
        }
        if let Some(i) = self.eigenvalues.windows(2).position(|w| w[0] < w[1]) {
            return Err(Error::Spec(format!(
                "eigenvalues not descending: λ{} = {} < λ{} = {}",
                i + 1,
                self.eigenvalues[i],
                i + 2,
                self.eigenvalues[i + 1]
            )));
        }
        Ok(())
    }

    /// The seeded orthogonal basis `Φ` (columns).
    pub fn basis(&self) -> Matrix {
        random_orthogonal(self.dim, &mut Rng::new(self.rotation_seed))
    }

    /// Population covariance `Φ Λ Φᵀ`.
    pub fn covariance(&self) -> Matrix {
        let phi = self.basis();
        let scaled = Matrix::from_fn(self.dim, self.dim, |r, c| phi.get(r, c) * self.eigenvalues[c]);
        scaled.matmul_t(&phi).expect("square")
    }
}

/// Orthogonal matrix from Gram–Schmidt (twice, for stability) on a Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut Rng) -> Matrix {
    // Rows are built as the basis vectors, then transposed to columns.
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for b in &rows {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        rows.push(v);
    }
    Matrix::from_rows(&rows).expect("square").transpose()
}

/// Draws `count` samples `m + Φ Λ^{1/2} ε`. Labels are all zero and the
/// dataset is flagged unclamped.
pub fn synth_gaussian(spec: &GaussianSpec, count: usize, rng: &mut Rng) -> Result<Dataset> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::Input("synthetic dataset needs at least one sample".into()));
    }
    let n = spec.dim;
    let phi = spec.basis();
    // Row-sample form: x = ε Λ^{1/2} Φᵀ + m
    let factor_t = Matrix::from_fn(n, n, |k, j| spec.eigenvalues[k].sqrt() * phi.get(j, k));
    let eps = Matrix::from_fn(count, n, |_, _| rng.normal());
    let mut x = eps.matmul(&factor_t)?;
    x.add_row_vector(&spec.mean)?;
    Dataset::with_classes(x, vec![0; count], ImageShape::new(1, n, 1), 1, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;
    use std::io::Write;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn hand_built_idx() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "img", &idx_bytes(0x803, &[1, 2, 2], &[0, 128, 255, 0]));
        let lbl = write(dir.path(), "lbl", &idx_bytes(0x801, &[1], &[3]));
        let d = load_idx(&img, &lbl).unwrap();
        assert_eq!(d.shape, ImageShape::new(2, 2, 1));
        assert_eq!(d.images.as_slice(), &[0.0, 128.0 / 255.0, 1.0, 0.0]);
        assert!((d.images.get(0, 1) - 0.501_960_784).abs() < 1e-9);
        assert_eq!(d.labels, vec![3]);
        assert_eq!(d.num_classes, 4);
    }

    #[test]
    fn gzipped_idx() {
        let dir = tempfile::tempdir().unwrap();
        let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        gz.write_all(&idx_bytes(0x803, &[1, 1, 2], &[255, 51])).unwrap();
        let img = write(dir.path(), "img.gz", &gz.finish().unwrap());
        let lbl = write(dir.path(), "lbl", &idx_bytes(0x801, &[1], &[0]));
        let d = load_idx(&img, &lbl).unwrap();
        assert_eq!(d.images.as_slice(), &[1.0, 0.2]);
    }

    #[test]
    fn idx_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good_lbl = write(dir.path(), "l", &idx_bytes(0x801, &[1], &[0]));
        let bad_magic = write(dir.path(), "a", &idx_bytes(0x804, &[1, 1, 1], &[0]));
        match load_idx(&bad_magic, &good_lbl) {
            Err(Error::Format(msg)) => assert!(msg.contains("0x00000804"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let truncated = write(dir.path(), "b", &idx_bytes(0x803, &[2, 2, 2], &[0; 5]));
        assert!(matches!(load_idx(&truncated, &good_lbl), Err(Error::Length { expected: 24, found: 21, .. })));
        let two = write(dir.path(), "c", &idx_bytes(0x803, &[2, 1, 1], &[0, 0]));
        assert!(matches!(load_idx(&two, &good_lbl), Err(Error::Consistency(_))));
        assert!(matches!(load_idx(dir.path().join("missing"), &good_lbl), Err(Error::File { .. })));
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<f64> = (0..12).map(|i| f64::from(i as u8 * 20) / 255.0).collect();
        let d = Dataset::new(
            Matrix::from_vec(3, 4, pixels).unwrap(),
            vec![0, 2, 1],
            ImageShape::new(2, 2, 1),
        )
        .unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&d, &ip, &lp).unwrap();
        let back = load_idx(&ip, &lp).unwrap();
        assert_eq!(back.images, d.images);
        assert_eq!(back.labels, d.labels);
    }

    #[test]
    fn cifar_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![7u8];
        rec.extend((0..3072).map(|i| (i % 256) as u8));
        let p = write(dir.path(), "b1.bin", &rec);
        let zero = write(dir.path(), "b2.bin", &[vec![1u8], vec![0u8; 3072]].concat());
        let d = load_cifar(&[&p, &zero], CifarFormat::Cifar10).unwrap();
        assert_eq!(d.labels, vec![7, 1]);
        assert_eq!(d.dim(), 3072);
        assert_eq!(d.shape, CIFAR_SHAPE);
        assert_eq!(d.images.get(0, 255), 1.0);
        assert!(d.images.row(1).iter().all(|&v| v == 0.0));

        let bad = write(dir.path(), "b3.bin", &rec[..3000]);
        assert!(matches!(load_cifar(&[bad], CifarFormat::Cifar10), Err(Error::Format(_))));

        let mut rec100 = vec![4u8, 42];
        rec100.extend(vec![0u8; 3072]);
        let p100 = write(dir.path(), "c100.bin", &rec100);
        let fine = load_cifar(&[&p100], CifarFormat::Cifar100 { coarse_labels: false }).unwrap();
        let coarse = load_cifar(&[&p100], CifarFormat::Cifar100 { coarse_labels: true }).unwrap();
        assert_eq!(fine.labels, vec![42]);
        assert_eq!(coarse.labels, vec![4]);
        assert_eq!(coarse.num_classes, 20);
    }

    #[test]
    fn degenerate_spectrum_gives_the_mean() {
        let spec = GaussianSpec {
            dim: 3,
            eigenvalues: vec![0.0; 3],
            mean: vec![1.0, -2.0, 0.5],
            rotation_seed: 1,
        };
        let d = synth_gaussian(&spec, 10, &mut Rng::new(0)).unwrap();
        for r in 0..10 {
            assert_eq!(d.images.row(r), &[1.0, -2.0, 0.5]);
        }
        assert!(d.unclamped);
    }

    #[test]
    fn negative_or_unsorted_spectrum_rejected() {
        let mut spec = GaussianSpec::harmonic(3, 0);
        spec.eigenvalues[2] = -0.1;
        assert!(matches!(synth_gaussian(&spec, 1, &mut Rng::new(0)), Err(Error::Spec(_))));
        spec.eigenvalues = vec![1.0, 2.0, 0.5];
        assert!(matches!(spec.validate(), Err(Error::Spec(_))));
    }

    #[test]
    fn sample_covariance_matches_spectrum() {
        let spec = GaussianSpec {
            dim: 4,
            eigenvalues: vec![4.0, 3.0, 2.0, 1.0],
            mean: vec![0.0; 4],
            rotation_seed: 17,
        };
        let n = 200_000;
        let d = synth_gaussian(&spec, n, &mut Rng::new(5)).unwrap();
        let mean = d.images.col_means();
        let mut centered = d.images.clone();
        centered.add_row_vector(&mean.iter().map(|m| -m).collect::<Vec<_>>()).unwrap();
        let cov = centered.t_matmul(&centered).unwrap().scale(1.0 / n as f64);
        let e = sym_eigen(&cov).unwrap();
        for (got, want) in e.eigenvalues.iter().zip(&spec.eigenvalues) {
            assert!((got - want).abs() <= 0.02 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let spec = GaussianSpec {
            dim: 3,
            eigenvalues: vec![9.0, 1.0, 0.25],
            mean: vec![5.0, -1.0, 2.0],
            rotation_seed: 3,
        };
        let n = 20_000;
        let d = synth_gaussian(&spec, n, &mut Rng::new(8)).unwrap();
        let cov = spec.covariance();
        for (j, m) in d.images.col_means().iter().enumerate() {
            let sigma = cov.get(j, j).sqrt();
            assert!((m - spec.mean[j]).abs() <= 3.0 * sigma / (n as f64).sqrt());
        }
    }

    #[test]
    fn orthogonal_basis() {
        let q = random_orthogonal(6, &mut Rng::new(4));
        let g = q.t_matmul(&q).unwrap();
        assert!(g.sub(&Matrix::identity(6)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn pixel_invariant_enforced() {
        let m = Matrix::from_vec(1, 1, vec![1.5]).unwrap();
        assert!(Dataset::new(m, vec![0], ImageShape::new(1, 1, 1)).is_err());
    }
}
