//! PCA baseline: covariance eigendecomposition, truncated projection, and the
//! analytic tail-sum distortion.

use std::path::Path;

use crate::checkpoint::Container;
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Matrix};

pub const PCA_KIND: &str = "pca";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComponentOrder {
    /// Keep the `L` leading components.
    Principal,
    /// Keep the `L` trailing components among the `M` retained ones.
    Reversed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `N × M`, columns are eigenvectors in descending eigenvalue order.
    pub components: Matrix,
    /// All `N` eigenvalues, descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
}

/// Fits on `data` with population (1/n) covariance.
pub fn fit_pca(data: &Dataset, latent_dim: usize) -> Result<PcaModel> {
    let x = &data.images;
    let (n, dim) = x.shape();
    if latent_dim > dim {
        return Err(Error::Dimension {
            op: "fit_pca",
            left: (n, dim),
            right: (dim, latent_dim),
        });
    }
    if latent_dim == 0 {
        return Err(Error::Config("PCA needs at least one component".into()));
    }
    if n < 2 {
        return Err(Error::Input(format!("PCA needs at least 2 samples, got {n}")));
    }
    let mean = x.col_means();
    let mut centered = x.clone();
    let neg: Vec<f64> = mean.iter().map(|m| -m).collect();
    centered.add_row_vector(&neg)?;
    let cov = centered.t_matmul(&centered)?.scale(1.0 / n as f64).symmetrized()?;
    from_covariance(mean, &cov, latent_dim)
}

/// Builds a model from a known covariance (and mean).
pub fn from_covariance(mean: Vec<f64>, cov: &Matrix, latent_dim: usize) -> Result<PcaModel> {
    let dim = cov.rows();
    if mean.len() != dim {
        return Err(Error::Length {
            context: "PCA mean".into(),
            expected: dim,
            found: mean.len(),
        });
    }
    if latent_dim == 0 || latent_dim > dim {
        return Err(Error::Dimension {
            op: "from_covariance",
            left: cov.shape(),
            right: (dim, latent_dim),
        });
    }
    let eig = sym_eigen(cov)?;
    let eigenvalues = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    Ok(PcaModel {
        mean,
        components: eig.eigenvectors.leading_columns(latent_dim),
        eigenvalues,
    })
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.components.cols()
    }

    /// `z = (x − m) Φ`, one row per sample.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        let mut centered = x.clone();
        let neg: Vec<f64> = self.mean.iter().map(|m| -m).collect();
        centered.add_row_vector(&neg)?;
        centered.matmul(&self.components)
    }

    /// `x' = m + z Φᵀ`.
    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        let mut out = z.matmul_t(&self.components)?;
        out.add_row_vector(&self.mean)?;
        Ok(out)
    }

    fn check_l(&self, l: usize) -> Result<()> {
        if l == 0 || l > self.latent_dim() {
            return Err(Error::Domain(format!(
                "survivor width {l} outside 1..={}",
                self.latent_dim()
            )));
        }
        Ok(())
    }

    /// Projects onto `L` components chosen by `order` and maps back.
    pub fn roundtrip(&self, x: &Matrix, l: usize, order: ComponentOrder) -> Result<Matrix> {
        self.check_l(l)?;
        let m = self.latent_dim();
        let keep: Vec<usize> = match order {
            ComponentOrder::Principal => (0..l).collect(),
            ComponentOrder::Reversed => (m - l..m).collect(),
        };
        let basis = Matrix::from_fn(self.input_dim(), l, |r, c| self.components.get(r, keep[c]));
        let sub = PcaModel {
            mean: self.mean.clone(),
            components: basis,
            eigenvalues: Vec::new(),
        };
        sub.decode(&sub.encode(x)?)
    }

    /// Expected squared error per sample of truncation to `L` leading components
    /// for data with covariance `cov`: `tr(C) − Σ_{i≤L} φᵢᵀ C φᵢ`.
    pub fn population_distortion(&self, cov: &Matrix, l: usize) -> Result<f64> {
        self.check_l(l)?;
        let cphi = cov.matmul(&self.components.leading_columns(l))?;
        let captured: f64 = (0..l)
            .map(|c| (0..cov.rows()).map(|r| self.components.get(r, c) * cphi.get(r, c)).sum::<f64>())
            .sum();
        Ok(cov.trace() - captured)
    }

    pub fn to_container(&self, extra: &[(String, String)]) -> Result<Container> {
        let mut c = Container::new(PCA_KIND);
        c.set_meta("input_dim", self.input_dim());
        c.set_meta("latent_dim", self.latent_dim());
        for (k, v) in extra {
            c.set_meta(k.clone(), v);
        }
        c.push_block("mean", Matrix::from_vec(1, self.mean.len(), self.mean.clone())?);
        c.push_block("components", self.components.clone());
        c.push_block(
            "eigenvalues",
            Matrix::from_vec(1, self.eigenvalues.len(), self.eigenvalues.clone())?,
        );
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != PCA_KIND {
            return Err(Error::Consistency(format!(
                "checkpoint holds a {:?} model, expected {PCA_KIND:?}",
                c.kind
            )));
        }
        let n: usize = c.parse_meta("input_dim")?;
        let m: usize = c.parse_meta("latent_dim")?;
        let mean = c.block("mean")?.as_slice().to_vec();
        let components = c.block("components")?.clone();
        let eigenvalues = c.block("eigenvalues")?.as_slice().to_vec();
        if mean.len() != n || components.shape() != (n, m) || eigenvalues.len() != n {
            return Err(Error::Consistency(format!(
                "PCA checkpoint blocks do not match N={n}, M={m}"
            )));
        }
        Ok(Self {
            mean,
            components,
            eigenvalues,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, extra: &[(String, String)]) -> Result<()> {
        self.to_container(extra)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Container)> {
        let c = Container::load(path)?;
        Ok((Self::from_container(&c)?, c))
    }
}

/// Sum of the eigenvalues beyond the first `L`.
pub fn theoretical_distortion(eigenvalues: &[f64], l: usize) -> Result<f64> {
    if l > eigenvalues.len() {
        return Err(Error::Domain(format!(
            "survivor width {l} exceeds the {} available eigenvalues",
            eigenvalues.len()
        )));
    }
    if let Some(i) = eigenvalues.windows(2).position(|w| w[0] < w[1]) {
        return Err(Error::Spec(format!(
            "eigenvalues not descending at position {}: {} < {}",
            i + 2,
            eigenvalues[i],
            eigenvalues[i + 1]
        )));
    }
    Ok(eigenvalues[l..].iter().sum())
}

/// Mean over samples of the total squared error `‖x − x'‖²`.
pub fn mean_total_squared_error(x: &Matrix, x_recon: &Matrix) -> Result<f64> {
    let diff = x.sub(x_recon)?;
    Ok(diff.as_slice().iter().map(|v| v * v).sum::<f64>() / x.rows() as f64)
}
