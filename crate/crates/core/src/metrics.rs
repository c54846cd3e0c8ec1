//! Estimation error, prediction error and the network-adjusted R².

use crate::community::PermutationMatrix;
use crate::error::{dim, Error, Result};
use crate::io::fmt_f64;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// `(1/K²) ‖Q̂ᵀ β̂ Q̂ - β*‖_F²`, with `Q̂` mapping estimated labels to true ones.
pub fn err_est(
    beta_hat: &DMatrix<f64>,
    beta_star: &DMatrix<f64>,
    q_hat: &PermutationMatrix,
) -> Result<f64> {
    let k = beta_star.nrows();
    if beta_star.ncols() != k || beta_hat.shape() != (k, k) || q_hat.k() != k {
        return Err(dim(format!(
            "err_est needs matching KxK inputs, got {:?}, {:?} and a permutation of size {}",
            beta_hat.shape(),
            beta_star.shape(),
            q_hat.k()
        )));
    }
    let aligned = q_hat.conjugate(beta_hat)?;
    Ok((aligned - beta_star).norm_squared() / (k * k) as f64)
}

/// `(1/n) ‖ŷ - y‖²`.
pub fn err_pred(y_hat: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    if y_hat.len() != y.len() || y.is_empty() {
        return Err(dim(format!(
            "prediction has {} entries, response has {}",
            y_hat.len(),
            y.len()
        )));
    }
    Ok((y_hat - y).norm_squared() / y.len() as f64)
}

/// `1 - (n-1)/(n-K²) · Σ_k ‖y⁽ᵏ⁾ - ŷ⁽ᵏ⁾‖² / ‖y - ŷ_ols‖²`.
///
/// Communities partition the nodes, so the community sum is the residual sum
/// of squares of `y_hat` over all nodes. Negative values are returned as is.
pub fn r2_adj_net(
    y: &DVector<f64>,
    y_hat: &DVector<f64>,
    y_hat_ols: &DVector<f64>,
    k: usize,
) -> Result<f64> {
    let n = y.len();
    if y_hat.len() != n || y_hat_ols.len() != n {
        return Err(dim("response and fitted vectors differ in length"));
    }
    if n <= k * k {
        return Err(Error::DegreesOfFreedom(format!(
            "n = {n} with K² = {}",
            k * k
        )));
    }
    let base = (y - y_hat_ols).norm_squared();
    if base == 0.0 {
        return Err(Error::Degenerate("OLS residual is zero".into()));
    }
    let rss = (y - y_hat).norm_squared();
    Ok(1.0 - (n - 1) as f64 / (n - k * k) as f64 * rss / base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub err_est: Option<f64>,
    pub err_pred: f64,
    pub r2_adj_net: Option<f64>,
    /// Image of each estimated label under the aligning permutation.
    pub permutation: Option<Vec<usize>>,
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 4] = ["err_est", "err_pred", "r2_adj_net", "permutation"];

    pub fn csv_record(&self) -> [String; 4] {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        [
            opt(self.err_est),
            fmt_f64(self.err_pred),
            opt(self.r2_adj_net),
            self.permutation
                .as_ref()
                .map(|p| {
                    p.iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(";")
                })
                .unwrap_or_default(),
        ]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::CSV_HEADER)?;
        out.write_record(self.csv_record())?;
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn err_est_examples() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let id = PermutationMatrix::identity(2);
        assert_eq!(err_est(&b, &b, &id).unwrap(), 0.0);
        let shifted = b.add_scalar(1.0);
        assert_eq!(err_est(&shifted, &b, &id).unwrap(), 1.0);
        assert!(err_est(&DMatrix::zeros(3, 3), &b, &id).is_err());
    }

    #[test]
    fn err_pred_examples() {
        let y = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        assert_eq!(err_pred(&y, &y).unwrap(), 0.0);
        assert_eq!(err_pred(&y.add_scalar(1.0), &y).unwrap(), 1.0);
        assert!(err_pred(&DVector::zeros(2), &y).is_err());
    }

    #[test]
    fn r2_examples() {
        let y = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5, 3.0]);
        let ols = DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0, 2.0]);
        assert_eq!(r2_adj_net(&y, &y, &ols, 2).unwrap(), 1.0);
        assert_eq!(r2_adj_net(&y, &ols, &ols, 1).unwrap(), 0.0);
        assert!(matches!(
            r2_adj_net(&y, &y, &ols, 3),
            Err(Error::DegreesOfFreedom(_))
        ));
        assert!(matches!(
            r2_adj_net(&y, &y, &y, 1),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn report_csv() {
        let r = EvalReport {
            err_est: None,
            err_pred: 0.25,
            r2_adj_net: Some(0.5),
            permutation: Some(vec![1, 0]),
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "err_est,err_pred,r2_adj_net,permutation\n,0.25,0.5,1;0\n"
        );
    }
}
