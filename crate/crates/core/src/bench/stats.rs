//! Summary statistics and the Mann-Whitney rank-sum test.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation (n - 1 denominator); undefined below two values.
pub fn sample_stddev(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSum {
    /// Mann-Whitney U of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p_two_sided: f64,
    /// One-sided p-value for "the first sample tends to be smaller".
    pub p_less: f64,
}

/// Normal approximation with tie and continuity corrections. Infinite values
/// are allowed and rank above every finite value.
pub fn rank_sum(a: &[f64], b: &[f64]) -> Option<RankSum> {
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 || n2 == 0 {
        return None;
    }
    let mut all: Vec<(f64, bool)> = a.iter().map(|&x| (x, true)).chain(b.iter().map(|&x| (x, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut r1 = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        r1 += all[i..=j].iter().filter(|e| e.1).count() as f64 * rank;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let (n1f, n2f, nf) = (n1 as f64, n2 as f64, n as f64);
    let u = r1 - n1f * (n1f + 1.0) / 2.0;
    let mu = n1f * n2f / 2.0;
    let var = n1f * n2f / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let normal = Normal::standard();
    if !(var > 0.0) {
        return Some(RankSum {
            u,
            p_two_sided: 1.0,
            p_less: 1.0,
        });
    }
    let sd = var.sqrt();
    let z_two = ((u - mu).abs() - 0.5).max(0.0) / sd;
    let z_less = (u - mu + 0.5) / sd;
    Some(RankSum {
        u,
        p_two_sided: (2.0 * normal.sf(z_two)).min(1.0),
        p_less: normal.cdf(z_less),
    })
}
