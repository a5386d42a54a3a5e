//! Evaluators for the analytical convergence results: the three-term
//! gradient-norm bound, the learning rate that collapses it to a
//! 1/sqrt(NH) rate, and the frequency threshold where the bound's trend in
//! tau flips sign. Diagnostics only; the runtime controller never calls
//! these.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BoundError {
    #[error("validity violated: (1-rho)^2 - 27 eta^2 L^2 = {0} must be > 0")]
    SpectralMargin(f64),
    #[error("validity violated: eta = {0} exceeds 1/(4 L tau) = {1}")]
    StepTooLarge(f64, f64),
    #[error("parameter {0} must be nonnegative and finite")]
    BadParam(&'static str),
    #[error("all learning-rate denominator terms are zero")]
    ZeroDenominator,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundParams {
    pub smoothness: f64,
    pub sigma: f64,
    pub zeta: f64,
    pub rho: f64,
    pub eta: f64,
    pub tau: f64,
    pub rounds: f64,
    pub workers: f64,
    pub f1: f64,
    pub f_star: f64,
}

fn check_nonneg(v: f64, name: &'static str) -> Result<(), BoundError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(BoundError::BadParam(name))
    }
}

/// Average squared gradient norm bound over the run:
///
/// 4 (f1 - f*) ((1-rho)^2 - 3 eta^2 L^2) / (eta tau H ((1-rho)^2 - 27 eta^2 L^2))
///   + 8 L^2 eta^2 (sigma^2 + 3 zeta^2) / ((1-rho)^2 - 27 eta^2 L^2)
///   + ((1-rho)^2 - 3 eta^2 L^2) / ((1-rho)^2 - 27 eta^2 L^2) * 4 L eta tau sigma^2 / N
pub fn remark2_bound(p: &BoundParams) -> Result<f64, BoundError> {
    for (v, name) in [
        (p.smoothness, "L"),
        (p.sigma, "sigma"),
        (p.zeta, "zeta"),
        (p.rho, "rho"),
        (p.eta, "eta"),
        (p.tau, "tau"),
        (p.rounds, "H"),
        (p.workers, "N"),
    ] {
        check_nonneg(v, name)?;
    }
    let gap_sq = (1.0 - p.rho) * (1.0 - p.rho);
    let etl = p.eta * p.eta * p.smoothness * p.smoothness;
    let margin = gap_sq - 27.0 * etl;
    if margin <= 0.0 {
        return Err(BoundError::SpectralMargin(margin));
    }
    let eta_cap = 1.0 / (4.0 * p.smoothness * p.tau);
    if p.eta > eta_cap {
        return Err(BoundError::StepTooLarge(p.eta, eta_cap));
    }
    let loose = gap_sq - 3.0 * etl;

    let term1 = 4.0 * (p.f1 - p.f_star) * loose / (p.eta * p.tau * p.rounds * margin);
    let term2 =
        8.0 * p.smoothness * p.smoothness * p.eta * p.eta * (p.sigma * p.sigma + 3.0 * p.zeta * p.zeta)
            / margin;
    let term3 =
        (loose / margin) * 4.0 * p.smoothness * p.eta * p.tau * p.sigma * p.sigma / p.workers;
    Ok(term1 + term2 + term3)
}

/// Learning rate of the corollary:
/// eta = (6L / sqrt((1-rho)^2) + sigma N^{-1/2} tau H^{1/2} + zeta^{2/3} H^{1/3})^{-1}.
pub fn corollary1_eta(p: &BoundParams) -> Result<f64, BoundError> {
    check_nonneg(p.smoothness, "L")?;
    check_nonneg(p.sigma, "sigma")?;
    check_nonneg(p.zeta, "zeta")?;
    let t1 = 6.0 * p.smoothness / ((1.0 - p.rho) * (1.0 - p.rho)).sqrt();
    let t2 = p.sigma * p.workers.powf(-0.5) * p.tau * p.rounds.sqrt();
    let t3 = p.zeta.powf(2.0 / 3.0) * p.rounds.powf(1.0 / 3.0);
    let denom = t1 + t2 + t3;
    if !denom.is_finite() || denom <= 0.0 {
        return Err(BoundError::ZeroDenominator);
    }
    Ok(1.0 / denom)
}

/// Crossover frequency sqrt(N (f1 - f*) / (L H eta^2 sigma^2)); below it the
/// bound falls as tau grows, above it the trend reverses. sigma = 0 yields
/// +inf.
pub fn tau_threshold(p: &BoundParams) -> Result<f64, BoundError> {
    check_nonneg(p.sigma, "sigma")?;
    let denom = p.smoothness * p.rounds * p.eta * p.eta * p.sigma * p.sigma;
    if denom == 0.0 {
        return Ok(f64::INFINITY);
    }
    if denom < 0.0 || !denom.is_finite() {
        return Err(BoundError::BadParam("denominator"));
    }
    Ok((p.workers * (p.f1 - p.f_star) / denom).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> BoundParams {
        BoundParams {
            smoothness: 1.0,
            sigma: 1.0,
            zeta: 1.0,
            rho: 0.5,
            eta: 0.01,
            tau: 4.0,
            rounds: 100.0,
            workers: 8.0,
            f1: 1.0,
            f_star: 0.0,
        }
    }

    #[test]
    fn frozen_reference_values() {
        // expected values computed with an independent arbitrary-precision
        // script before this module existed
        let p = reference();
        let b = remark2_bound(&p).unwrap();
        assert!((b - 1.042838657501011).abs() < 1e-12, "bound {b}");
        let eta = corollary1_eta(&p).unwrap();
        assert!((eta - 0.0324846982497416).abs() < 1e-12, "eta {eta}");
        let th = tau_threshold(&p).unwrap();
        assert!((th - 28.2842712474619).abs() < 1e-10, "threshold {th}");
    }

    #[test]
    fn tiny_eta_is_dominated_by_first_term() {
        let mut p = reference();
        p.eta = 1e-6;
        p.zeta = 0.0;
        p.rho = 0.0;
        let total = remark2_bound(&p).unwrap();
        let first = 4.0 * p.f1 / (p.eta * p.tau * p.rounds)
            * ((1.0 - 3e-12) / (1.0 - 2.7e-11));
        assert!((total - first).abs() / first < 1e-3);
        assert!(first / total > 0.99);
    }

    #[test]
    fn bound_grows_with_rho() {
        let mut prev = 0.0;
        for k in 0..10 {
            let mut p = reference();
            p.eta = 0.001;
            p.rho = 0.09 * k as f64;
            let b = remark2_bound(&p).unwrap();
            assert!(b > prev, "rho step {k}: {b} <= {prev}");
            prev = b;
        }
    }

    #[test]
    fn corollary_collapses_without_noise() {
        let mut p = reference();
        p.sigma = 0.0;
        p.zeta = 0.0;
        p.rho = 0.0;
        let eta = corollary1_eta(&p).unwrap();
        assert!((eta - 1.0 / 6.0).abs() < 1e-12);

        p.smoothness = 0.0;
        assert_eq!(corollary1_eta(&p), Err(BoundError::ZeroDenominator));
    }

    #[test]
    fn corollary_eta_decreases_with_horizon() {
        let mut prev = f64::INFINITY;
        for rounds in [10.0, 100.0, 1000.0, 10_000.0] {
            let mut p = reference();
            p.rounds = rounds;
            let eta = corollary1_eta(&p).unwrap();
            assert!(eta < prev);
            prev = eta;
        }
    }

    #[test]
    fn threshold_scales_inversely_with_eta() {
        let p1 = reference();
        let mut p2 = reference();
        p2.eta = p1.eta / 2.0;
        let t1 = tau_threshold(&p1).unwrap();
        let t2 = tau_threshold(&p2).unwrap();
        assert!((t2 / t1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_sigma_zero_is_infinite() {
        let mut p = reference();
        p.sigma = 0.0;
        assert_eq!(tau_threshold(&p).unwrap(), f64::INFINITY);
    }

    #[test]
    fn validity_errors_name_the_inequality() {
        let mut p = reference();
        p.rho = 0.999999;
        assert!(matches!(
            remark2_bound(&p),
            Err(BoundError::SpectralMargin(_))
        ));
        // eta inside the spectral margin but above 1/(4 L tau)
        let mut p = reference();
        p.eta = 0.08;
        assert!(matches!(
            remark2_bound(&p),
            Err(BoundError::StepTooLarge(_, _))
        ));
    }

    #[test]
    fn bound_trend_in_tau_flips_at_threshold() {
        // sigma = 4 pulls the threshold inside the validity region
        let mut p = reference();
        p.sigma = 4.0;
        p.eta = 0.005;
        let th = tau_threshold(&p).unwrap();
        assert!(th > 5.0 && th < 29.0, "threshold {th} should sit in the grid");
        let mut prev: Option<f64> = None;
        for tau in 4..=30 {
            p.tau = tau as f64;
            let b = remark2_bound(&p).unwrap();
            if let Some(prev) = prev {
                if (tau as f64) <= th.floor() {
                    assert!(b < prev, "tau {tau}: expected decrease below threshold");
                } else if tau as f64 > th.ceil() {
                    assert!(b > prev, "tau {tau}: expected increase above threshold");
                }
            }
            prev = Some(b);
        }
    }
}
