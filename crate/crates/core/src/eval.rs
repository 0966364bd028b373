//! Rateless evaluation: latent truncation, sweeps over the survivor width `L`,
//! a linear probe on latents, and image/CSV exports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::datasets::{to_byte, Dataset, ImageShape};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::losses::{mean_ssim, mse_db, mse_value, SsimConfig};
use crate::model::{self, AeConfig, AeParams, Autoencoder};
use crate::pca::PcaModel;

pub const SWEEP_HEADER: &str = "model,dataset,loss,schedule,L,mse,mse_db,ssim,probe_acc";

/// Rows processed per forward pass during evaluation.
const CHUNK: usize = 1000;

/// A model with a latent code that can be truncated.
pub trait LatentCodec {
    fn input_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn encode(&self, x: &Matrix) -> Result<Matrix>;
    fn decode(&self, z: &Matrix) -> Result<Matrix>;
}

/// Borrowed auto-encoder parameters.
#[derive(Clone, Copy, Debug)]
pub struct AeView<'a> {
    pub params: &'a AeParams,
    pub config: &'a AeConfig,
}

impl LatentCodec for AeView<'_> {
    fn input_dim(&self) -> usize {
        self.config.input_dim
    }
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }
    fn encode(&self, x: &Matrix) -> Result<Matrix> {
        model::encode(self.params, self.config, x)
    }
    fn decode(&self, z: &Matrix) -> Result<Matrix> {
        model::decode(self.params, self.config, z)
    }
}

impl Autoencoder {
    pub fn view(&self) -> AeView<'_> {
        AeView {
            params: &self.params,
            config: &self.config,
        }
    }
}

impl LatentCodec for Autoencoder {
    fn input_dim(&self) -> usize {
        self.config.input_dim
    }
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }
    fn encode(&self, x: &Matrix) -> Result<Matrix> {
        model::encode(&self.params, &self.config, x)
    }
    fn decode(&self, z: &Matrix) -> Result<Matrix> {
        model::decode(&self.params, &self.config, z)
    }
}

impl LatentCodec for PcaModel {
    fn input_dim(&self) -> usize {
        PcaModel::input_dim(self)
    }
    fn latent_dim(&self) -> usize {
        PcaModel::latent_dim(self)
    }
    fn encode(&self, x: &Matrix) -> Result<Matrix> {
        PcaModel::encode(self, x)
    }
    fn decode(&self, z: &Matrix) -> Result<Matrix> {
        PcaModel::decode(self, z)
    }
}

impl PcaModel {
    /// The same model with its retained components in reverse order, so that
    /// truncation keeps the least principal ones.
    pub fn reversed(&self) -> PcaModel {
        let m = self.latent_dim();
        PcaModel {
            mean: self.mean.clone(),
            components: Matrix::from_fn(self.input_dim(), m, |r, c| self.components.get(r, m - 1 - c)),
            eigenvalues: self.eigenvalues.clone(),
        }
    }
}

/// Keeps the first `L` columns and zeroes the rest.
pub fn truncate_latent(z: &Matrix, l: usize) -> Result<Matrix> {
    let m = z.cols();
    if l == 0 || l > m {
        return Err(Error::Domain(format!("survivor width {l} outside 1..={m}")));
    }
    let mut out = z.clone();
    if l < m {
        for r in 0..out.rows() {
            out.row_mut(r)[l..].fill(0.0);
        }
    }
    Ok(out)
}

/// Latent codes of `x` truncated to `L` (chunked).
pub fn latents<C: LatentCodec + ?Sized>(codec: &C, x: &Matrix, l: usize) -> Result<Matrix> {
    map_chunks(x, codec.latent_dim(), |chunk| truncate_latent(&codec.encode(chunk)?, l))
}

/// Encode, truncate to `L`, decode (chunked).
pub fn reconstruct<C: LatentCodec + ?Sized>(codec: &C, x: &Matrix, l: usize) -> Result<Matrix> {
    map_chunks(x, codec.input_dim(), |chunk| {
        codec.decode(&truncate_latent(&codec.encode(chunk)?, l)?)
    })
}

fn map_chunks(x: &Matrix, out_cols: usize, f: impl Fn(&Matrix) -> Result<Matrix>) -> Result<Matrix> {
    let mut out = Vec::with_capacity(x.rows() * out_cols);
    for start in (0..x.rows()).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(x.rows())).collect();
        out.extend_from_slice(f(&x.select_rows(&idx))?.as_slice());
    }
    Matrix::from_vec(x.rows(), out_cols, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MetricSet {
    pub mse: bool,
    pub ssim: bool,
    pub probe: bool,
}

impl MetricSet {
    pub fn all() -> Self {
        Self {
            mse: true,
            ssim: true,
            probe: true,
        }
    }

    pub fn mse_only() -> Self {
        Self {
            mse: true,
            ssim: false,
            probe: false,
        }
    }
}

impl FromStr for MetricSet {
    type Err = Error;
    /// Comma-separated subset of `mse`, `ssim`, `probe`.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = MetricSet {
            mse: false,
            ssim: false,
            probe: false,
        };
        for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            match item {
                "mse" => set.mse = true,
                "ssim" => set.ssim = true,
                "probe" => set.probe = true,
                other => return Err(Error::Config(format!("unknown metric {other:?}"))),
            }
        }
        if set == (MetricSet { mse: false, ssim: false, probe: false }) {
            return Err(Error::Config("metric list is empty".into()));
        }
        Ok(set)
    }
}

impl std::fmt::Display for MetricSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = [(self.mse, "mse"), (self.ssim, "ssim"), (self.probe, "probe")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        f.write_str(&names.join(","))
    }
}

/// Labels for the CSV rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepMeta {
    pub model: String,
    pub dataset: String,
    pub loss: String,
    pub schedule: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub l: usize,
    pub mse: Option<f64>,
    pub mse_db: Option<f64>,
    pub ssim: Option<f64>,
    pub probe_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub meta: SweepMeta,
    /// Sorted by strictly increasing `L`.
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, l: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.l == l)
    }

    /// CSV body rows without the header.
    pub fn csv_rows(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let m = &self.meta;
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                csv_field(&m.model),
                csv_field(&m.dataset),
                csv_field(&m.loss),
                csv_field(&m.schedule),
                r.l,
                opt(r.mse),
                opt(r.mse_db),
                opt(r.ssim),
                opt(r.probe_acc)
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        format!("{SWEEP_HEADER}\n{}", self.csv_rows())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Evaluates `codec` on `test` at each survivor width in `ls`.
///
/// `probe_train` supplies the latents the probe is fitted on; it is required
/// when the probe metric is requested.
pub fn sweep<C: LatentCodec + ?Sized>(
    codec: &C,
    test: &Dataset,
    ls: &[usize],
    metrics: MetricSet,
    probe_train: Option<&Dataset>,
    ssim_cfg: &SsimConfig,
    meta: SweepMeta,
) -> Result<SweepResult> {
    if ls.is_empty() {
        return Err(Error::Input("survivor width list is empty".into()));
    }
    if test.is_empty() {
        return Err(Error::Input("test set is empty".into()));
    }
    if test.dim() != codec.input_dim() {
        return Err(Error::Consistency(format!(
            "data has {} features, model expects {}",
            test.dim(),
            codec.input_dim()
        )));
    }
    let m = codec.latent_dim();
    let grid: BTreeSet<usize> = ls.iter().copied().collect();
    if let Some(&bad) = grid.iter().find(|&&l| l == 0 || l > m) {
        return Err(Error::Domain(format!("survivor width {bad} outside 1..={m}")));
    }
    let probe_train = match (metrics.probe, probe_train) {
        (true, None) => {
            return Err(Error::Input("probe metric requested without training data".into()))
        }
        (true, Some(t)) => Some(t),
        (false, _) => None,
    };
    let ssim_cfg = ssim_cfg.fitted_to(test.shape);
    let z_test = latents(codec, &test.images, m)?;
    let z_train = probe_train.map(|t| latents(codec, &t.images, m)).transpose()?;
    let classes = probe_train.map_or(0, |t| t.num_classes.max(test.num_classes));

    let mut rows = Vec::with_capacity(grid.len());
    for &l in &grid {
        let mut row = SweepRow {
            l,
            mse: None,
            mse_db: None,
            ssim: None,
            probe_acc: None,
        };
        if metrics.mse || metrics.ssim {
            let z = truncate_latent(&z_test, l)?;
            let recon = map_chunks(&z, codec.input_dim(), |chunk| codec.decode(chunk))?;
            if metrics.mse {
                let v = mse_value(&test.images, &recon)?;
                row.mse = Some(v);
                row.mse_db = Some(mse_db(v)?);
            }
            if metrics.ssim {
                row.ssim = Some(mean_ssim(&test.images, &recon, test.shape, &ssim_cfg)?);
            }
        }
        if let (Some(train), Some(zt)) = (probe_train, &z_train) {
            let acc = linear_probe(
                &zt.leading_columns(l),
                &train.labels,
                &z_test.leading_columns(l),
                &test.labels,
                classes,
                &ProbeConfig::default(),
            )?;
            row.probe_acc = Some(acc);
        }
        rows.push(row);
    }
    Ok(SweepResult { meta, rows })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.01,
            lambda: 1e-4,
            seed: 0,
        }
    }
}

/// One-vs-rest linear hinge-loss classifiers trained by SGD with L2
/// regularization on standardized features. Returns test accuracy.
pub fn linear_probe(
    z_train: &Matrix,
    y_train: &[usize],
    z_test: &Matrix,
    y_test: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<f64> {
    if z_train.rows() != y_train.len() || z_test.rows() != y_test.len() {
        return Err(Error::Length {
            context: "probe labels".into(),
            expected: z_train.rows() + z_test.rows(),
            found: y_train.len() + y_test.len(),
        });
    }
    if z_train.cols() != z_test.cols() {
        return Err(Error::Dimension {
            op: "linear_probe",
            left: z_train.shape(),
            right: z_test.shape(),
        });
    }
    let distinct: BTreeSet<usize> = y_train.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::Degenerate(format!(
            "probe training labels span {} class(es)",
            distinct.len()
        )));
    }
    let k = num_classes.max(distinct.iter().max().map_or(0, |m| m + 1));
    let d = z_train.cols();

    let mean = z_train.col_means();
    let mut scale = vec![0.0; d];
    for r in 0..z_train.rows() {
        for (c, v) in z_train.row(r).iter().enumerate() {
            scale[c] += (v - mean[c]).powi(2);
        }
    }
    for s in scale.iter_mut() {
        let sd = (*s / z_train.rows() as f64).sqrt();
        *s = if sd > 1e-12 { 1.0 / sd } else { 0.0 };
    }
    let standardize = |row: &[f64]| -> Vec<f64> {
        row.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) * s).collect()
    };
    let xs: Vec<Vec<f64>> = (0..z_train.rows()).map(|r| standardize(z_train.row(r))).collect();

    let mut w = vec![vec![0.0; d]; k];
    let mut b = vec![0.0; k];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = Rng::new(cfg.seed);
    let (lr, lambda) = (cfg.learning_rate, cfg.lambda);
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            let x = &xs[i];
            for class in 0..k {
                let y = if y_train[i] == class { 1.0 } else { -1.0 };
                let score: f64 = w[class].iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b[class];
                let active = y * score < 1.0;
                for (wj, xj) in w[class].iter_mut().zip(x) {
                    *wj -= lr * lambda * *wj;
                    if active {
                        *wj += lr * y * xj;
                    }
                }
                if active {
                    b[class] += lr * y;
                }
            }
        }
    }

    let mut correct = 0usize;
    for (r, &label) in y_test.iter().enumerate() {
        let x = standardize(z_test.row(r));
        let mut best = (f64::NEG_INFINITY, 0);
        for class in 0..k {
            let score: f64 = w[class].iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() + b[class];
            if score > best.0 {
                best = (score, class);
            }
        }
        if best.1 == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / y_test.len().max(1) as f64)
}

/// Writes a tile grid: row 0 holds the originals of `indices`, row `k` their
/// reconstructions at `ls[k-1]`. Binary PGM for one channel, PPM for three.
pub fn export_reconstructions<C: LatentCodec + ?Sized>(
    codec: &C,
    data: &Dataset,
    ls: &[usize],
    indices: &[usize],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::Input(format!(
            "sample index {bad} out of range for {} samples",
            data.len()
        )));
    }
    let shape = data.shape;
    if shape.channels != 1 && shape.channels != 3 {
        return Err(Error::Config(format!(
            "cannot write a {}-channel image grid",
            shape.channels
        )));
    }
    let x = data.images.select_rows(indices);
    let mut tile_rows = vec![x.clone()];
    for &l in ls {
        tile_rows.push(reconstruct(codec, &x, l)?);
    }
    let bytes = render_grid(&tile_rows, shape);
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

fn render_grid(tile_rows: &[Matrix], shape: ImageShape) -> Vec<u8> {
    let cols = tile_rows.first().map_or(0, Matrix::rows);
    let (h, w, ch) = (shape.height, shape.width, shape.channels);
    let (gw, gh) = (cols * w, tile_rows.len() * h);
    let magic = if ch == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{gw} {gh}\n255\n").into_bytes();
    for row in tile_rows {
        for y in 0..h {
            for t in 0..cols {
                let img = row.row(t);
                for x in 0..w {
                    for c in 0..ch {
                        out.push(to_byte(img[c * h * w + y * w + x]));
                    }
                }
            }
        }
    }
    out
}

/// A decoded binary PGM/PPM.
#[derive(Clone, Debug, PartialEq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Pnm> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    parse_pnm(&bytes)
}

pub fn parse_pnm(bytes: &[u8]) -> Result<Pnm> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PNM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported PNM magic {other:?}"))),
    };
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PNM header field {s:?}")))
    };
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PNM maxval {maxval}")));
    }
    let want = width * height * channels;
    let pixels = bytes.get(pos..).unwrap_or_default().to_vec();
    if pixels.len() != want {
        return Err(Error::Length {
            context: "PNM pixels".into(),
            expected: want,
            found: pixels.len(),
        });
    }
    Ok(Pnm {
        width,
        height,
        channels,
        pixels,
    })
}

/// CSV `z1,z2,label` with one row per sample.
pub fn export_latent_scatter<C: LatentCodec + ?Sized>(
    codec: &C,
    data: &Dataset,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let csv = latent_scatter_csv(codec, data)?;
    fs::write(path, csv).map_err(|e| Error::file(path, e))
}

pub fn latent_scatter_csv<C: LatentCodec + ?Sized>(codec: &C, data: &Dataset) -> Result<String> {
    let m = codec.latent_dim();
    if m < 2 {
        return Err(Error::Dimension {
            op: "latent_scatter",
            left: (data.len(), m),
            right: (data.len(), 2),
        });
    }
    let z = latents(codec, &data.images, m)?;
    let mut s = String::from("z1,z2,label\n");
    for (r, label) in data.labels.iter().enumerate() {
        let _ = writeln!(s, "{},{},{}", z.get(r, 0), z.get(r, 1), label);
    }
    Ok(s)
}
