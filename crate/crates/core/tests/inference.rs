mod common;

use common::{community_system, instance};
use nalgebra::{DMatrix, DVector};
use netreg::inference::{
    covariance_is_valid, fit_covariances, hc_covariance, homoskedastic_covariance,
    significance_stars, two_sided_p, wald_table, CovarianceKind, TestRow,
};
use netreg::regression::fit_clse;
use proptest::prelude::*;

/// `H⁻¹ (Σ_i w_i r_i² m_i m_iᵀ) H⁻¹` with every product written out.
fn sandwich(m: &DMatrix<f64>, r: &DVector<f64>, weights: &[f64]) -> DMatrix<f64> {
    let (rows, p) = m.shape();
    let mut h = DMatrix::<f64>::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            for i in 0..rows {
                h[(a, b)] += m[(i, a)] * m[(i, b)];
            }
        }
    }
    let inv = h.clone().try_inverse().unwrap();
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            for i in 0..rows {
                meat[(a, b)] += weights[i] * r[i] * r[i] * m[(i, a)] * m[(i, b)];
            }
        }
    }
    let mut out = DMatrix::<f64>::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            for c in 0..p {
                for d in 0..p {
                    out[(a, b)] += inv[(a, c)] * meat[(c, d)] * inv[(d, b)];
                }
            }
        }
    }
    out
}

fn leverages(m: &DMatrix<f64>) -> Vec<f64> {
    let inv = (m.transpose() * m).try_inverse().unwrap();
    (0..m.nrows())
        .map(|i| {
            let row = m.row(i).transpose();
            (row.transpose() * &inv * &row)[(0, 0)]
        })
        .collect()
}

fn scaled_max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hc_variants_match_brute_force(n in 40usize..120, k in 1usize..4, seed in any::<u64>()) {
        let inst = instance(n, k, 0.7, seed);
        let fit = fit_clse(&inst.a, &inst.x, &inst.y, &inst.z).unwrap();
        prop_assume!(!fit.min_norm_used());
        for c in 0..k {
            let (m, _, rows) = community_system(&inst.a, &inst.x, &inst.y, &inst.z, c);
            let n_k = rows.len();
            prop_assume!(n_k > k);
            let r = DVector::from_fn(n_k, |i, _| fit.residuals[rows[i]]);
            let hc0 = sandwich(&m, &r, &vec![1.0; n_k]);
            let got0 = hc_covariance(&fit.designs[c], &fit.residuals, CovarianceKind::Hc0).unwrap();
            prop_assert!(scaled_max_diff(&got0.matrix, &hc0) <= 1e-10);

            let got1 = hc_covariance(&fit.designs[c], &fit.residuals, CovarianceKind::Hc1).unwrap();
            let factor = n_k as f64 / (n_k - k) as f64;
            prop_assert!(scaled_max_diff(&got1.matrix, &(hc0 * factor)) <= 1e-10);

            let lev = leverages(&m);
            prop_assume!(lev.iter().all(|h| 1.0 - h > 1e-6));
            let w: Vec<f64> = lev.iter().map(|h| 1.0 / (1.0 - h).powi(2)).collect();
            let got3 = hc_covariance(&fit.designs[c], &fit.residuals, CovarianceKind::Hc3).unwrap();
            prop_assert!(scaled_max_diff(&got3.matrix, &sandwich(&m, &r, &w)) <= 1e-9);
        }
    }

    #[test]
    fn covariances_are_symmetric_psd(n in 40usize..120, k in 1usize..4, seed in any::<u64>()) {
        let inst = instance(n, k, 0.7, seed);
        let fit = fit_clse(&inst.a, &inst.x, &inst.y, &inst.z).unwrap();
        prop_assume!(!fit.min_norm_used() && inst.z.sizes().iter().all(|&s| s > k));
        for kind in [CovarianceKind::Homoskedastic, CovarianceKind::Hc0, CovarianceKind::Hc1] {
            for cov in fit_covariances(&fit, &inst.z, kind).unwrap() {
                prop_assert!(covariance_is_valid(&cov.matrix));
                prop_assert_eq!(cov.matrix.clone(), cov.matrix.transpose());
                let eig = cov.matrix.clone().symmetric_eigen();
                prop_assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-12 * cov.matrix.amax()));
            }
        }
    }

    #[test]
    fn p_values_are_monotone_in_abs_z(z1 in 0.0f64..8.0, z2 in 0.0f64..8.0) {
        let (lo, hi) = if z1 <= z2 { (z1, z2) } else { (z2, z1) };
        prop_assert!(two_sided_p(lo) >= two_sided_p(hi));
        prop_assert_eq!(two_sided_p(-z1), two_sided_p(z1));
        prop_assert!((0.0..=1.0).contains(&two_sided_p(z1)));
    }
}

#[test]
fn homoskedastic_matches_sigma2_inverse_hessian() {
    let inst = instance(150, 2, 0.5, 3);
    let fit = fit_clse(&inst.a, &inst.x, &inst.y, &inst.z).unwrap();
    for c in 0..2 {
        let (m, _, rows) = community_system(&inst.a, &inst.x, &inst.y, &inst.z, c);
        let r = DVector::from_fn(rows.len(), |i, _| fit.residuals[rows[i]]);
        let h = m.transpose() * &m;
        let expected =
            h.clone().try_inverse().unwrap() * (r.norm_squared() / (rows.len() - 2) as f64);
        let got = homoskedastic_covariance(c, &h, &r, true).unwrap();
        assert!(scaled_max_diff(&got.matrix, &expected) < 1e-12);
        let raw = homoskedastic_covariance(c, &h, &r, false).unwrap();
        let ratio = got.matrix[(0, 0)] / raw.matrix[(0, 0)];
        assert!((ratio - rows.len() as f64 / (rows.len() - 2) as f64).abs() < 1e-12);
    }
}

#[test]
fn too_few_rows_is_a_degrees_of_freedom_error() {
    let h = DMatrix::identity(3, 3);
    let r = DVector::from_element(3, 0.1);
    assert!(homoskedastic_covariance(0, &h, &r, true).is_err());
}

#[test]
fn reference_quantiles_and_stars() {
    assert!((two_sided_p(1.959963984540054) - 0.05).abs() < 1e-14);
    assert!((two_sided_p(2.5758293035489) - 0.01).abs() < 1e-12);
    assert!((two_sided_p(0.0) - 1.0).abs() < 1e-15);
    assert_eq!(significance_stars(0.0005), "***");
    assert_eq!(significance_stars(0.001), "***");
    assert_eq!(significance_stars(0.005), "**");
    assert_eq!(significance_stars(0.05), "*");
    assert_eq!(significance_stars(0.0501), "");
}

#[test]
fn wald_table_uses_covariance_diagonals() {
    let inst = instance(300, 2, 0.5, 21);
    let fit = fit_clse(&inst.a, &inst.x, &inst.y, &inst.z).unwrap();
    let covs = fit_covariances(&fit, &inst.z, CovarianceKind::Hc1).unwrap();
    let table = wald_table(&fit, &covs).unwrap();
    for c in 0..2 {
        for c2 in 0..2 {
            let row = table.row(c, c2);
            let se = covs[c].matrix[(c2, c2)].sqrt();
            assert!((row.se - se).abs() <= 1e-15 * se.max(1.0));
            assert_eq!(row.estimate, fit.beta_hat.values()[(c, c2)]);
            assert!((row.z - row.estimate / se).abs() < 1e-12 * row.z.abs().max(1.0));
            let expected = TestRow::new(c, c2, row.estimate, row.se);
            assert_eq!(row.p, expected.p);
        }
    }
    let text = table.render_text();
    assert!(text.contains("source 0") && text.contains("source 1"));
    let mut csv = Vec::new();
    table.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
}

#[test]
fn empirical_covariance_matches_sigma2_inverse_hessian() {
    // fixed design, fresh noise each replicate
    let base = instance(200, 2, 0.0, 5);
    let fit0 = fit_clse(&base.a, &base.x, &base.y, &base.z).unwrap();
    let sigma = 0.5;
    let reps = 4000;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(77);
    let mut draws: Vec<Vec<DVector<f64>>> = vec![Vec::new(), Vec::new()];
    for _ in 0..reps {
        let noise = DVector::from_fn(200, |_, _| {
            sigma * rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)
        });
        let y = &base.y + noise;
        let fit = fit_clse(&base.a, &base.x, &y, &base.z).unwrap();
        for (c, d) in draws.iter_mut().enumerate() {
            d.push(fit.beta_hat.values().row(c).transpose());
        }
    }
    for c in 0..2 {
        let mean = draws[c]
            .iter()
            .fold(DVector::<f64>::zeros(2), |acc, d| acc + d)
            / reps as f64;
        let mut emp = DMatrix::<f64>::zeros(2, 2);
        for d in &draws[c] {
            let e = d - &mean;
            emp += &e * e.transpose();
        }
        emp /= (reps - 1) as f64;
        let theory = fit0.solves[c].hessian.clone().try_inverse().unwrap() * sigma * sigma;
        for a in 0..2 {
            for b in 0..2 {
                let scale = (theory[(a, a)] * theory[(b, b)]).sqrt();
                assert!(
                    (emp[(a, b)] - theory[(a, b)]).abs() < 0.1 * scale,
                    "community {c} entry ({a},{b})"
                );
            }
        }
    }
}
