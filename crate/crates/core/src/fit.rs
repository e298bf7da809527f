//! Rate fits `E(ε) ≈ A ε^β` and `E(ε) ≈ C ε log(C + t/ε)`.

use std::fmt::Write as _;

use crate::error::{domain, Result};
use crate::hamiltonian::golden_section_min;

/// Least-squares line `y = a + b x`; returns `(a, b, rms residual)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let rms = (x
        .iter()
        .zip(y)
        .map(|(u, v)| (v - a - b * u).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (a, b, rms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// `(ε, sup error)`, ε strictly decreasing.
    pub errors: Vec<(f64, f64)>,
    pub beta: f64,
    pub prefactor: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    /// `C` in `C ε log(C + t/ε)`, with its log residual.
    pub log_constant: f64,
    pub log_residual: f64,
    /// `β` after dropping the largest ε, minus `β`.
    pub drop_largest_delta: Option<f64>,
    pub t: f64,
    /// Mesh-halving probe `|E_Δ - E_{Δ/2}|` at the smallest ε, if run.
    pub probe: Option<f64>,
}

impl RateReport {
    pub fn fit(errors: Vec<(f64, f64)>, t: f64) -> Result<Self> {
        if errors.len() < 2 {
            return domain("a rate fit needs at least two ε values");
        }
        if errors
            .iter()
            .any(|&(e, v)| !(e > 0.0) || !(v > 0.0) || !v.is_finite())
        {
            return domain("rate fit needs positive ε and positive finite errors");
        }
        if errors.windows(2).any(|w| w[1].0 >= w[0].0) {
            return domain("ε must be strictly decreasing");
        }
        let lx: Vec<f64> = errors.iter().map(|p| p.0.ln()).collect();
        let ly: Vec<f64> = errors.iter().map(|p| p.1.ln()).collect();
        let (a, beta, residual) = linear_fit(&lx, &ly);
        let drop_largest_delta =
            (errors.len() >= 3).then(|| linear_fit(&lx[1..], &ly[1..]).1 - beta);
        let log_misfit = |lc: f64| {
            let c = lc.exp();
            errors
                .iter()
                .map(|&(e, v)| (v.ln() - (c * e * (c + t / e).ln()).ln()).powi(2))
                .sum::<f64>()
        };
        let lc = golden_section_min(log_misfit, -20.0, 20.0, 1e-10);
        let log_residual = (log_misfit(lc) / errors.len() as f64).sqrt();
        Ok(RateReport {
            errors,
            beta,
            prefactor: a.exp(),
            residual,
            log_constant: lc.exp(),
            log_residual,
            drop_largest_delta,
            t,
            probe: None,
        })
    }

    /// Report for errors at round-off level: nothing to fit, `β` is NaN.
    pub fn vanishing(errors: Vec<(f64, f64)>, t: f64) -> Self {
        RateReport {
            errors,
            beta: f64::NAN,
            prefactor: 0.0,
            residual: 0.0,
            log_constant: 0.0,
            log_residual: 0.0,
            drop_largest_delta: None,
            t,
            probe: None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# schema=homog-rate-v1\neps,error\n");
        for (e, v) in &self.errors {
            let _ = writeln!(s, "{e:e},{v:e}");
        }
        s
    }

    pub fn fit_csv(&self) -> String {
        let mut s = String::from("# schema=homog-rate-fit-v1\nquantity,value\n");
        let _ = writeln!(s, "beta,{:e}", self.beta);
        let _ = writeln!(s, "prefactor,{:e}", self.prefactor);
        let _ = writeln!(s, "residual,{:e}", self.residual);
        let _ = writeln!(s, "log_constant,{:e}", self.log_constant);
        let _ = writeln!(s, "log_residual,{:e}", self.log_residual);
        if let Some(d) = self.drop_largest_delta {
            let _ = writeln!(s, "drop_largest_delta,{d:e}");
        }
        if let Some(p) = self.probe {
            let _ = writeln!(s, "probe,{p:e}");
        }
        s
    }

    /// Two-column plot data.
    pub fn plot_data(&self) -> String {
        let mut s = String::from("# eps error\n");
        for (e, v) in &self.errors {
            let _ = writeln!(s, "{e:e} {v:e}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn exact_power_law() {
        let errs: Vec<(f64, f64)> = (2..7)
            .map(|k| 0.5f64.powi(k))
            .map(|e| (e, 3.0 * e))
            .collect();
        let r = RateReport::fit(errs, 1.0).unwrap();
        assert_abs_diff_eq!(r.beta, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.prefactor, 3.0, epsilon = 1e-10);
        assert!(r.residual < 1e-12);
        assert_abs_diff_eq!(r.drop_largest_delta.unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn log_model_recovers_its_constant() {
        let c = 0.7;
        let errs: Vec<(f64, f64)> = (2..7)
            .map(|k| 0.5f64.powi(k))
            .map(|e| (e, c * e * (c + 2.0 / e).ln()))
            .collect();
        let r = RateReport::fit(errs, 2.0).unwrap();
        assert_abs_diff_eq!(r.log_constant, c, epsilon = 1e-6);
        assert!(r.beta < 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RateReport::fit(vec![(0.5, 1.0)], 1.0).is_err());
        assert!(RateReport::fit(vec![(0.25, 1.0), (0.5, 1.0)], 1.0).is_err());
        assert!(RateReport::fit(vec![(0.5, 0.0), (0.25, 1.0)], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn power_laws_are_recovered(beta in 0.2f64..3.0, a in 0.01f64..100.0) {
            let errs: Vec<(f64, f64)> = (1..6).map(|k| 0.5f64.powi(k)).map(|e| (e, a * e.powf(beta))).collect();
            let r = RateReport::fit(errs, 1.0).unwrap();
            prop_assert!((r.beta - beta).abs() < 1e-9);
            prop_assert!((r.prefactor / a - 1.0).abs() < 1e-8);
        }
    }
}
