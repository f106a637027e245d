//! Deterministic reductions and Monte Carlo summary statistics.

use serde::Serialize;

/// Pairwise (cascade) summation over a fixed binary tree: the result depends
/// only on the order of `xs`, never on how work was scheduled.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean with its Monte Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
    pub n_paths: usize,
}

impl Estimate {
    pub fn exact(value: f64, n_paths: usize) -> Self {
        Estimate {
            estimate: value,
            se: 0.0,
            n_paths,
        }
    }

    /// Sample mean and `sd / sqrt(n)` of `xs`.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate {
                estimate: f64::NAN,
                se: f64::NAN,
                n_paths: 0,
            };
        }
        let mean = pairwise_sum(xs) / n as f64;
        let se = if n > 1 {
            let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
            (pairwise_sum(&dev) / (n as f64 - 1.0) / n as f64).sqrt()
        } else {
            0.0
        };
        Estimate {
            estimate: mean,
            se,
            n_paths: n,
        }
    }

    /// Difference of two independent estimates.
    pub fn minus(&self, other: &Estimate) -> Estimate {
        Estimate {
            estimate: self.estimate - other.estimate,
            se: self.se.hypot(other.se),
            n_paths: self.n_paths.min(other.n_paths),
        }
    }

    pub fn plus(&self, other: &Estimate) -> Estimate {
        Estimate {
            estimate: self.estimate + other.estimate,
            se: self.se.hypot(other.se),
            n_paths: self.n_paths.min(other.n_paths),
        }
    }

    pub fn scale(&self, c: f64) -> Estimate {
        Estimate {
            estimate: c * self.estimate,
            se: c.abs() * self.se,
            n_paths: self.n_paths,
        }
    }

    /// `|estimate| <= z * se`.
    pub fn within(&self, z: f64) -> bool {
        self.estimate.abs() <= z * self.se
    }

    /// Number of standard errors away from zero.
    pub fn z(&self) -> f64 {
        self.estimate / self.se
    }
}

/// Ratio `num / den` of two independent estimates by the delta method.
pub fn ratio(num: &Estimate, den: &Estimate) -> Estimate {
    let q = num.estimate / den.estimate;
    let rel = (num.se / num.estimate).hypot(den.se / den.estimate);
    let se = if num.estimate == 0.0 {
        num.se / den.estimate.abs()
    } else {
        (q * rel).abs()
    };
    Estimate {
        estimate: q,
        se,
        n_paths: num.n_paths.min(den.n_paths),
    }
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample Kolmogorov-Smirnov distance against a continuous CDF.
pub fn ks_distance_cdf(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }

    #[test]
    fn se_of_known_sample() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.estimate, 2.5);
        assert!((e.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ks_identical_is_zero() {
        let a = [0.3, 0.1, 0.2];
        assert_eq!(ks_distance(&a, &a), 0.0);
        assert_eq!(ks_distance(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
    }
}
