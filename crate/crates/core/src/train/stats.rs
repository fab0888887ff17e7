use crate::error::{Error, Result};

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let sum = C[1..].iter().enumerate().fold(C[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_fraction(b, a, 1.0 - x) / b
    }
}

/// `P(T >= t)` for Student's t with `df` degrees of freedom.
pub fn student_t_upper_tail(t: f64, df: f64) -> f64 {
    let tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// One-sided p-value of the paired t-test with alternative "mean of `model`
/// exceeds mean of `baseline`". Zero-variance differences give 0 when the
/// mean difference is positive and 1 otherwise.
pub fn paired_ttest_pvalue(model: &[f64], baseline: &[f64]) -> Result<f64> {
    if model.len() != baseline.len() {
        return Err(Error::InvalidArgument(format!("{} model values vs {} baseline values", model.len(), baseline.len())));
    }
    if model.len() < 2 {
        return Err(Error::InvalidArgument("the paired t-test needs at least two pairs".into()));
    }
    let n = model.len() as f64;
    let diffs: Vec<f64> = model.iter().zip(baseline).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 || !var.is_finite() {
        return Ok(if mean > 0.0 { 0.0 } else { 1.0 });
    }
    let t = mean / (var / n).sqrt();
    Ok(student_t_upper_tail(t, n - 1.0))
}

/// True iff the one-sided p-value is at most `alpha`.
pub fn paired_ttest_improves(model: &[f64], baseline: &[f64], alpha: f64) -> Result<bool> {
    Ok(paired_ttest_pvalue(model, baseline)? <= alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn uniform_improvement_passes() {
        let base: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let model: Vec<f64> = base.iter().map(|x| x + 1.0).collect();
        assert!(paired_ttest_improves(&model, &base, 0.05).unwrap());
        assert!(!paired_ttest_improves(&base, &base, 0.05).unwrap());
        assert!(!paired_ttest_improves(&base, &model, 0.05).unwrap());
    }

    #[test]
    fn hand_example_matches_reference_cdf() {
        let d = [0.2, -0.1, 0.3, 0.1, 0.0, 0.2, -0.2, 0.4, 0.1, 0.0];
        let zeros = [0.0; 10];
        let p = paired_ttest_pvalue(&d, &zeros).unwrap();
        let mean = d.iter().sum::<f64>() / 10.0;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
        let t = mean / (sd / 10f64.sqrt());
        let oracle = 1.0 - StudentsT::new(0.0, 1.0, 9.0).unwrap().cdf(t);
        assert!((p - oracle).abs() < 1e-6, "{p} vs {oracle}");
        assert_eq!(p <= 0.05, oracle <= 0.05);
    }

    #[test]
    fn tails_are_symmetric() {
        for df in [1.0, 2.5, 9.0, 99.0] {
            for t in [0.0, 0.3, 1.7, 4.0] {
                let s = student_t_upper_tail(t, df) + student_t_upper_tail(-t, df);
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert!((student_t_upper_tail(0.0, 5.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs() {
        assert!(paired_ttest_pvalue(&[1.0, 2.0], &[1.0]).is_err());
        assert!(paired_ttest_pvalue(&[1.0], &[0.0]).is_err());
    }
}
