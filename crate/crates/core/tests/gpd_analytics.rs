//! Distribution-level checks of the Pareto tail analytics: density mass,
//! sampling law, and direct likelihood fitting.

use peakcast::evt::{
    gpd_cdf, gpd_fit_mle, gpd_logpdf, gpd_quantile, gpd_sample, GpdParams,
};

/// Composite Simpson integral of the density. The integrand is zero
/// outside the support, so bounded-tail cases may integrate across their
/// upper endpoint.
fn pdf_mass(params: &GpdParams, hi: f64, intervals: usize) -> f64 {
    assert!(intervals % 2 == 0);
    let lo = 0.0;
    let h = (hi - lo) / intervals as f64;
    let pdf = |y: f64| gpd_logpdf(params, y).map(f64::exp).unwrap_or(0.0);
    let mut total = pdf(lo) + pdf(hi);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        total += w * pdf(lo + i as f64 * h);
    }
    total * h / 3.0
}

#[test]
fn density_integrates_to_one_across_tail_shapes() {
    for &xi in &[-0.4, 0.0, 0.4] {
        let params = GpdParams::new(0.0, 1.5, xi).unwrap();
        // Integrate to the upper support end (bounded tails) or to the
        // 1 - 1e-9 quantile, leaving at most 1e-9 of mass outside.
        let hi = if xi < 0.0 {
            params.support_max()
        } else {
            gpd_quantile(&params, 1.0 - 1e-9).unwrap()
        };
        let mass = pdf_mass(&params, hi, 1 << 21);
        assert!(
            (mass - 1.0).abs() < 1e-6,
            "xi={xi}: integral {mass} misses 1 by {}",
            (mass - 1.0).abs()
        );
    }
}

#[test]
fn sampling_matches_the_distribution_function() {
    for &(sigma, xi) in &[(2.0, 0.2), (1.5, -0.3)] {
        let params = GpdParams::new(0.0, sigma, xi).unwrap();
        let mut draws = gpd_sample(&params, 100_000, 99);
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = draws.len() as f64;
        let mut d = 0.0_f64;
        for (i, y) in draws.iter().enumerate() {
            let f = gpd_cdf(&params, *y).unwrap();
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            d = d.max((f - lo).abs()).max((hi - f).abs());
        }
        assert!(
            d < 0.01,
            "sigma={sigma} xi={xi}: KS statistic {d} too large"
        );
    }
}

#[test]
fn mle_recovers_known_parameters_at_ten_thousand_samples() {
    for &(sigma, xi) in &[(2.0, 0.2), (1.0, 0.0), (1.5, -0.3)] {
        let params = GpdParams::new(0.0, sigma, xi).unwrap();
        let draws = gpd_sample(&params, 10_000, 7);
        let fit = gpd_fit_mle(&draws, 0.0).unwrap();
        let (s_hat, x_hat) = (fit.params.sigma(), fit.params.xi());
        assert!(
            (s_hat - sigma).abs() < 0.1,
            "sigma {s_hat} vs {sigma} (xi={xi})"
        );
        assert!((x_hat - xi).abs() < 0.05, "xi {x_hat} vs {xi} (sigma={sigma})");
        assert_eq!(fit.n_exceedances, 10_000);
        // The fitted likelihood is no worse than the generating one.
        let truth: f64 = draws
            .iter()
            .map(|&y| -gpd_logpdf(&params, y).unwrap())
            .sum::<f64>()
            / draws.len() as f64;
        assert!(fit.mean_nll <= truth + 1e-9);
    }
}
