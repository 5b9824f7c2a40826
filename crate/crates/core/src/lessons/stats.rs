//! Paired t-test for pre/post comparisons.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("pre has {pre} scores but post has {post}")]
    LengthMismatch { pre: usize, post: usize },
    #[error("need at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("all differences are equal, so t is undefined")]
    DegenerateSample,
    #[error("scores must be finite numbers")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: u32,
    /// Two-tailed.
    pub p: f64,
}

impl PairedSample {
    pub fn new(pre: Vec<f64>, post: Vec<f64>) -> Result<Self, StatsError> {
        let s = PairedSample { pre, post };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<(), StatsError> {
        if self.pre.len() != self.post.len() {
            return Err(StatsError::LengthMismatch {
                pre: self.pre.len(),
                post: self.post.len(),
            });
        }
        if self.pre.len() < 2 {
            return Err(StatsError::TooFewPairs(self.pre.len()));
        }
        if self.pre.iter().chain(&self.post).any(|x| !x.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        Ok(())
    }
}

/// t = mean(d) / (sd(d) / √n) over d = post − pre, sd with n − 1.
pub fn paired_t_test(sample: &PairedSample) -> Result<TTest, StatsError> {
    sample.check()?;
    let d: Vec<f64> = sample.post.iter().zip(&sample.pre).map(|(b, a)| b - a).collect();
    if d.iter().all(|x| *x == d[0]) {
        return Err(StatsError::DegenerateSample);
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = mean / (var.sqrt() / n.sqrt());
    let df = d.len() as u32 - 1;
    Ok(TTest {
        t,
        df,
        p: two_tailed_p(t, df as f64),
    })
}

/// P(|T| ≥ |t|) for Student's t with `df` degrees of freedom.
pub fn two_tailed_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    reg_inc_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Natural log of Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
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
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The continued fraction converges fast for x < (a+1)/(a+b+2).
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta, modified Lentz method.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn oracle_p(t: f64, df: u32) -> f64 {
        let dist = StudentsT::new(0.0, 1.0, df as f64).unwrap();
        2.0 * dist.sf(t.abs())
    }

    #[test]
    fn small_example() {
        let s = PairedSample::new(vec![1., 2., 3., 4.], vec![2., 4., 3., 6.]).unwrap();
        let r = paired_t_test(&s).unwrap();
        // d = [1,2,0,2], mean 1.25, sd = sqrt(0.9166..), t = 1.25 / (sd / 2)
        let sd = (((0.25f64).powi(2) + 0.75f64.powi(2) + 1.25f64.powi(2) + 0.75f64.powi(2)) / 3.0).sqrt();
        assert!((r.t - 1.25 / (sd / 2.0)).abs() < 1e-12);
        assert!((r.t - 2.611).abs() < 5e-4, "{}", r.t);
        assert_eq!(r.df, 3);
        assert!((r.p - oracle_p(r.t, 3)).abs() < 1e-9);
    }

    #[test]
    fn zero_mean_gives_p_one() {
        let s = PairedSample::new(vec![1., 2., 3.], vec![2., 1., 3.]).unwrap();
        let r = paired_t_test(&s).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_bad_shapes() {
        let deg = PairedSample::new(vec![1., 1., 1.], vec![2., 2., 2.]).unwrap();
        assert_eq!(paired_t_test(&deg), Err(StatsError::DegenerateSample));
        let same = PairedSample::new(vec![3., 4.], vec![3., 4.]).unwrap();
        assert_eq!(paired_t_test(&same), Err(StatsError::DegenerateSample));
        assert_eq!(
            PairedSample::new(vec![1.], vec![1.]),
            Err(StatsError::TooFewPairs(1))
        );
        assert!(matches!(
            PairedSample::new(vec![1., 2.], vec![1.]),
            Err(StatsError::LengthMismatch { .. })
        ));
        assert_eq!(PairedSample::new(vec![1., f64::NAN], vec![1., 2.]), Err(StatsError::NonFinite));
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_oracle(
            pairs in proptest::collection::vec((0.0f64..100.0, -30.0f64..30.0), 2..50)
        ) {
            let pre: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let post: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
            let s = PairedSample::new(pre, post).unwrap();
            if let Ok(r) = paired_t_test(&s) {
                prop_assert!((r.p - oracle_p(r.t, r.df)).abs() < 1e-9, "t={} df={} p={}", r.t, r.df, r.p);
            }
        }

        #[test]
        fn shift_invariant(
            pairs in proptest::collection::vec((0.0f64..10.0, -3.0f64..3.0), 3..20),
            shift in -50.0f64..50.0
        ) {
            let pre: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let post: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
            let a = paired_t_test(&PairedSample::new(pre.clone(), post.clone()).unwrap());
            let b = paired_t_test(&PairedSample::new(
                pre.iter().map(|x| x + shift).collect(),
                post.iter().map(|x| x + shift).collect(),
            ).unwrap());
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert!((a.t - b.t).abs() <= 1e-6 * a.t.abs().max(1.0));
            }
        }
    }
}
