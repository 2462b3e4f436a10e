//! Two-sided Mann-Whitney U test.

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Pooled sizes up to this are tested by exact enumeration.
pub const EXACT_LIMIT: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MannWhitney {
    /// Pairs `(x, y)` with `x` from `a` above `y` from `b`, ties counting half.
    pub u_a: f64,
    pub u_b: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks (1-based) of the pooled values, plus `sum(t^3 - t)` over tie
/// groups.
fn midranks(pooled: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    (ranks, tie_term)
}

fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut pos = k;
        while pos > 0 && idx[pos - 1] == n - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            return;
        }
        idx[pos - 1] += 1;
        for j in pos..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput(
            "Mann-Whitney needs two non-empty samples".into(),
        ));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::InvalidInput(
            "Mann-Whitney sample contains NaN".into(),
        ));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, tie_term) = midranks(&pooled);
    let offset = (na * (na + 1)) as f64 / 2.0;
    let u_a = ranks[..na].iter().sum::<f64>() - offset;
    let u_b = (na * nb) as f64 - u_a;
    let mean = (na * nb) as f64 / 2.0;
    let observed = (u_a - mean).abs();

    if n <= EXACT_LIMIT {
        // Permutation distribution of U over every labeling of the pooled ranks.
        let mut extreme = 0u64;
        let mut total = 0u64;
        for_each_subset(n, na, |idx| {
            let u = idx.iter().map(|&i| ranks[i]).sum::<f64>() - offset;
            total += 1;
            if (u - mean).abs() >= observed - 1e-9 {
                extreme += 1;
            }
        });
        return Ok(MannWhitney {
            u_a,
            u_b,
            p_value: extreme as f64 / total as f64,
            exact: true,
        });
    }

    let nf = n as f64;
    let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = ((observed - 0.5).max(0.0)) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(MannWhitney {
        u_a,
        u_b,
        p_value,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_pair() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.u_a, 0.0);
        assert_eq!(r.u_b, 4.0);
        // 2 of the 6 labelings are as extreme.
        assert!((r.p_value - 2.0 / 6.0).abs() < 1e-12);
        assert!(r.exact);
    }

    #[test]
    fn identical_samples() {
        let a = [3.0, 1.0, 2.0, 5.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert!(r.p_value >= 0.99);
        let big: Vec<f64> = (0..30).map(|i| (i % 7) as f64).collect();
        let r = mann_whitney_u(&big, &big).unwrap();
        assert!(!r.exact && r.p_value >= 0.99);
    }

    #[test]
    fn all_tied() {
        let r = mann_whitney_u(&[1.0; 20], &[1.0; 20]).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn five_vs_five_complete_separation() {
        let r =
            mann_whitney_u(&[10.0, 11.0, 12.0, 13.0, 14.0], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(r.u_a, 25.0);
        assert!((r.p_value - 2.0 / 252.0).abs() < 1e-12);
    }

    #[test]
    fn empty_rejected() {
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
        assert!(mann_whitney_u(&[1.0], &[]).is_err());
        assert!(mann_whitney_u(&[f64::NAN], &[1.0]).is_err());
    }
}
