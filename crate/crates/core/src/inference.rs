//! Covariance estimates for CLSE rows and Wald tests of `β_{k1,k2} = 0`.

use crate::community::Membership;
use crate::error::{dim, param, Error, Result};
use crate::io::fmt_f64;
use crate::linalg::{asymmetry, spd_inverse};
use crate::regression::{DesignMatrix, FitResult, Structure};
use libm::erfc;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    Homoskedastic,
    Hc0,
    #[default]
    Hc1,
    Hc3,
}

impl CovarianceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceKind::Homoskedastic => "homoskedastic",
            CovarianceKind::Hc0 => "hc0",
            CovarianceKind::Hc1 => "hc1",
            CovarianceKind::Hc3 => "hc3",
        }
    }
}

impl std::str::FromStr for CovarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "homoskedastic" | "classical" => Ok(CovarianceKind::Homoskedastic),
            "hc0" => Ok(CovarianceKind::Hc0),
            "hc1" => Ok(CovarianceKind::Hc1),
            "hc3" => Ok(CovarianceKind::Hc3),
            other => Err(param(format!("unknown covariance kind `{other}`"))),
        }
    }
}

/// Covariance of `β̂_{k,·}`.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub community: usize,
    pub matrix: DMatrix<f64>,
    pub kind: CovarianceKind,
}

/// `H_k = M_kᵀ M_k`.
pub fn hessian(design: &DesignMatrix) -> DMatrix<f64> {
    design.gram()
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// `σ̂² H_k⁻¹` with `σ̂² = ‖r‖² / (n_k - K)` (or `/ n_k` without the
/// degrees-of-freedom adjustment). `residuals` holds community `k` only.
pub fn homoskedastic_covariance(
    community: usize,
    h: &DMatrix<f64>,
    residuals: &DVector<f64>,
    dof_adjust: bool,
) -> Result<CovarianceEstimate> {
    let n_k = residuals.len();
    let kk = h.nrows();
    let denom = if dof_adjust {
        n_k.checked_sub(kk).filter(|&d| d > 0)
    } else {
        Some(n_k).filter(|&d| d > 0)
    }
    .ok_or_else(|| {
        Error::DegreesOfFreedom(format!("community {community}: n_k = {n_k}, K = {kk}"))
    })?;
    let inv = spd_inverse(h, n_k)?;
    let sigma2 = residuals.norm_squared() / denom as f64;
    Ok(CovarianceEstimate {
        community,
        matrix: symmetrize(inv * sigma2),
        kind: CovarianceKind::Homoskedastic,
    })
}

/// Sandwich estimator `H⁻¹ (Σ_i w_i r_i² m_i m_iᵀ) H⁻¹` over the rows of
/// community `k`. `residuals` is indexed by node over the whole network.
///
/// Weights: HC0 `1`; HC1 `n_k / (n_k - K)` applied to the HC0 matrix; HC3
/// `1 / (1 - h_ii)²` with leverage `h_ii = m_iᵀ H⁻¹ m_i`.
pub fn hc_covariance(
    design: &DesignMatrix,
    residuals: &DVector<f64>,
    kind: CovarianceKind,
) -> Result<CovarianceEstimate> {
    if residuals.len() != design.matrix.nrows() {
        return Err(dim(format!(
            "{} residuals for a design with {} rows",
            residuals.len(),
            design.matrix.nrows()
        )));
    }
    let kk = design.matrix.ncols();
    let n_k = design.rows.len();
    let h = design.gram();
    let inv = spd_inverse(&h, n_k)?;
    let mut meat = DMatrix::zeros(kk, kk);
    for &i in &design.rows {
        let m = design.matrix.row(i).transpose();
        let r2 = residuals[i] * residuals[i];
        let w = match kind {
            CovarianceKind::Hc3 => {
                let lev = (m.transpose() * &inv * &m)[(0, 0)];
                let one_minus = 1.0 - lev;
                if one_minus <= 1e-12 {
                    return Err(Error::DegenerateLeverage { row: i });
                }
                1.0 / (one_minus * one_minus)
            }
            CovarianceKind::Hc0 | CovarianceKind::Hc1 => 1.0,
            CovarianceKind::Homoskedastic => {
                return Err(param(
                    "use homoskedastic_covariance for the classical estimate",
                ))
            }
        };
        meat.ger(w * r2, &m, &m, 1.0);
    }
    let mut cov = symmetrize(&inv * meat * &inv);
    if kind == CovarianceKind::Hc1 {
        if n_k <= kk {
            return Err(Error::DegreesOfFreedom(format!(
                "community {}: n_k = {n_k}, K = {kk}",
                design.community
            )));
        }
        cov *= n_k as f64 / (n_k - kk) as f64;
    }
    Ok(CovarianceEstimate {
        community: design.community,
        matrix: cov,
        kind,
    })
}

/// One covariance per community of a full CLSE fit.
pub fn fit_covariances(
    fit: &FitResult,
    z: &Membership,
    kind: CovarianceKind,
) -> Result<Vec<CovarianceEstimate>> {
    if fit.structure() != Structure::Full || fit.designs.len() != z.k() {
        return Err(param(
            "covariances need a full-structure fit with per-community designs",
        ));
    }
    fit.designs
        .iter()
        .map(|d| match kind {
            CovarianceKind::Homoskedastic => homoskedastic_covariance(
                d.community,
                &d.gram(),
                &fit.community_residuals(z, d.community),
                true,
            ),
            _ => hc_covariance(d, &fit.residuals, kind),
        })
        .collect()
}

/// Two-sided normal p-value `2 (1 - Φ(|z|)) = erfc(|z| / √2)`.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

pub fn significance_stars(p: f64) -> &'static str {
    if p <= 0.001 {
        "***"
    } else if p <= 0.01 {
        "**"
    } else if p <= 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TestRow {
    pub k1: usize,
    pub k2: usize,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub stars: &'static str,
    /// `zero_se` or `degenerate` when the standard error vanished.
    pub flag: Option<&'static str>,
}

impl TestRow {
    pub fn new(k1: usize, k2: usize, estimate: f64, se: f64) -> Self {
        let (z, p, flag) = if se > 0.0 {
            let z = estimate / se;
            (z, two_sided_p(z), None)
        } else if estimate != 0.0 {
            (estimate.signum() * f64::INFINITY, 0.0, Some("zero_se"))
        } else {
            (0.0, 1.0, Some("degenerate"))
        };
        Self {
            k1,
            k2,
            estimate,
            se,
            z,
            p,
            stars: significance_stars(p),
            flag,
        }
    }
}

/// Wald z-tests of every coefficient.
#[derive(Debug, Clone, Serialize)]
pub struct TestTable {
    pub k: usize,
    pub kind: CovarianceKind,
    pub rows: Vec<TestRow>,
}

pub fn wald_table(fit: &FitResult, covariances: &[CovarianceEstimate]) -> Result<TestTable> {
    let k = fit.beta_hat.k();
    let kind = covariances
        .first()
        .map(|c| c.kind)
        .ok_or_else(|| param("no covariance estimates supplied"))?;
    let mut rows = Vec::with_capacity(k * k);
    for k1 in 0..k {
        let cov = covariances
            .iter()
            .find(|c| c.community == k1)
            .ok_or_else(|| param(format!("no covariance for community {k1}")))?;
        if cov.matrix.nrows() != k || cov.matrix.ncols() != k {
            return Err(dim(format!("covariance for community {k1} is not {k}x{k}")));
        }
        if cov.kind != kind {
            return Err(param("covariance estimates mix different kinds"));
        }
        for k2 in 0..k {
            let se = cov.matrix[(k2, k2)].max(0.0).sqrt();
            rows.push(TestRow::new(k1, k2, fit.beta_hat.get(k1, k2), se));
        }
    }
    Ok(TestTable { k, kind, rows })
}

impl TestTable {
    pub fn row(&self, k1: usize, k2: usize) -> &TestRow {
        &self.rows[k1 * self.k + k2]
    }

    /// CSV with columns `k1,k2,estimate,se,z,p,stars,variant`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k1", "k2", "estimate", "se", "z", "p", "stars", "variant"])?;
        for r in &self.rows {
            out.write_record([
                r.k1.to_string(),
                r.k2.to_string(),
                fmt_f64(r.estimate),
                fmt_f64(r.se),
                fmt_f64(r.z),
                fmt_f64(r.p),
                r.stars.to_string(),
                self.kind.as_str().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Target community per row block, source community per column; each
    /// cell shows `estimate ± se` above `(stars) p`.
    pub fn render_text(&self) -> String {
        let width = 18;
        let mut s = String::new();
        let _ = write!(s, "{:>8}", "target");
        for k2 in 0..self.k {
            let _ = write!(s, "{:>width$}", format!("source {k2}"));
        }
        s.push('\n');
        for k1 in 0..self.k {
            let _ = write!(s, "{k1:>8}");
            for k2 in 0..self.k {
                let r = self.row(k1, k2);
                let _ = write!(s, "{:>width$}", format!("{:.3} ± {:.3}", r.estimate, r.se));
            }
            s.push('\n');
            let _ = write!(s, "{:>8}", "");
            for k2 in 0..self.k {
                let r = self.row(k1, k2);
                let cell = if r.stars.is_empty() {
                    format!("{:.4}", r.p)
                } else {
                    format!("({}) {:.4}", r.stars, r.p)
                };
                let _ = write!(s, "{cell:>width$}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "standard errors: {}", self.kind.as_str());
        s
    }
}

/// Symmetry and positive semi-definiteness checks used by tests and the CLI.
pub fn covariance_is_valid(cov: &DMatrix<f64>) -> bool {
    if asymmetry(cov) > 1e-12 * cov.amax().max(1.0) {
        return false;
    }
    match crate::linalg::symmetric_eigen(cov) {
        Ok(e) => {
            let trace = cov.trace().abs();
            e.values
                .iter()
                .all(|&v| v >= -1e-10 * trace.max(f64::MIN_POSITIVE))
        }
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(rows: &[[f64; 2]]) -> DesignMatrix {
        let n = rows.len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        DesignMatrix {
            community: 0,
            matrix: DMatrix::from_row_slice(n, 2, &flat),
            rows: (0..n).collect(),
        }
    }

    #[test]
    fn zero_design_hessian() {
        let d = design(&[[0.0, 0.0], [0.0, 0.0]]);
        assert_eq!(hessian(&d), DMatrix::zeros(2, 2));
    }

    #[test]
    fn orthonormal_rows_give_identity_hessian() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let d = design(&[[s, s], [s, -s]]);
        assert!((hessian(&d) - DMatrix::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn homoskedastic_examples() {
        let h = DMatrix::identity(2, 2) * 4.0;
        let zero = homoskedastic_covariance(0, &h, &DVector::zeros(6), true).unwrap();
        assert_eq!(zero.matrix, DMatrix::zeros(2, 2));
        // ‖r‖² = 8 over n_k - K = 4 gives σ̂² = 2
        let r = DVector::from_vec(vec![2.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        let cov = homoskedastic_covariance(0, &h, &r, true).unwrap();
        assert!((cov.matrix - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
        assert!(matches!(
            homoskedastic_covariance(0, &h, &DVector::zeros(2), true),
            Err(Error::DegreesOfFreedom(_))
        ));
        let singular = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(
            homoskedastic_covariance(0, &singular, &r, true),
            Err(Error::Rank(_))
        ));
    }

    #[test]
    fn constant_residuals_collapse_sandwich() {
        let d = design(&[[1.0, 0.5], [0.3, 2.0], [-1.0, 1.0], [0.2, -0.7]]);
        let r = DVector::from_vec(vec![1.5, -1.5, 1.5, -1.5]);
        let hc0 = hc_covariance(&d, &r, CovarianceKind::Hc0).unwrap();
        let expected = spd_inverse(&d.gram(), 4).unwrap() * 2.25;
        assert!((hc0.matrix - expected).amax() < 1e-13);
    }

    #[test]
    fn zero_residuals_zero_covariance() {
        let d = design(&[[1.0, 0.5], [0.3, 2.0], [-1.0, 1.0], [0.2, -0.7]]);
        for kind in [
            CovarianceKind::Hc0,
            CovarianceKind::Hc1,
            CovarianceKind::Hc3,
        ] {
            let c = hc_covariance(&d, &DVector::zeros(4), kind).unwrap();
            assert_eq!(c.matrix, DMatrix::zeros(2, 2));
        }
    }

    #[test]
    fn hc3_rejects_unit_leverage() {
        // row 2 is the only one with a second-column entry: leverage 1
        let d = design(&[[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]]);
        let r = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        assert!(matches!(
            hc_covariance(&d, &r, CovarianceKind::Hc3),
            Err(Error::DegenerateLeverage { row: 2 })
        ));
    }

    #[test]
    fn wald_examples() {
        let r = TestRow::new(0, 0, 0.0, 1.0);
        assert_eq!((r.z, r.p, r.stars), (0.0, 1.0, ""));
        let r = TestRow::new(0, 0, 1.96, 1.0);
        assert!((r.p - 0.05).abs() < 1e-3);
        assert_eq!(r.stars, "*");
        let r = TestRow::new(0, 0, 0.325, 0.070);
        assert!((r.z - 4.642857142857143).abs() < 1e-12);
        assert!(r.p < 0.001);
        assert_eq!(r.stars, "***");
        let r = TestRow::new(0, 0, 0.5, 0.0);
        assert_eq!((r.p, r.flag), (0.0, Some("zero_se")));
        let r = TestRow::new(0, 0, 0.0, 0.0);
        assert_eq!((r.p, r.flag), (1.0, Some("degenerate")));
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(significance_stars(0.001), "***");
        assert_eq!(significance_stars(0.0010001), "**");
        assert_eq!(significance_stars(0.01), "**");
        assert_eq!(significance_stars(0.05), "*");
        assert_eq!(significance_stars(0.0501), "");
    }

    #[test]
    fn normal_tail_values() {
        let p = two_sided_p(1.959963984540054);
        assert!((p - 0.05).abs() < 1e-14, "{p:e}");
        assert!((two_sided_p(2.5758293035489004) - 0.01).abs() < 1e-14);
        assert_eq!(two_sided_p(0.0), 1.0);
    }
}
