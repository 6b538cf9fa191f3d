//! Levene's test for equal variances across groups.
//!
//! Each observation is replaced by its absolute deviation from its group
//! centre, `Z_ij = |Y_ij - centre_i|`, and a one-way ANOVA F statistic is
//! computed on the `Z` values:
//!
//! ```text
//! W = (N - k) / (k - 1) * sum_i N_i (Z_i. - Z..)^2 / sum_ij (Z_ij - Z_i.)^2
//! ```
//!
//! Under the null `W` follows `F(k - 1, N - k)`. Centring on the median gives
//! the Brown–Forsythe variant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::special::{f_cdf, f_sf, regularized_incomplete_beta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Center {
    #[default]
    Mean,
    Median,
}

impl std::str::FromStr for Center {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Center::Mean),
            "median" => Ok(Center::Median),
            other => Err(Error::arg(format!("unknown centre {other:?}"))),
        }
    }
}

impl std::fmt::Display for Center {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Center::Mean => "mean",
            Center::Median => "median",
        })
    }
}

/// At least two groups of at least two finite observations each.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSamples {
    groups: Vec<Vec<f64>>,
}

impl GroupedSamples {
    pub fn new(groups: Vec<Vec<f64>>) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::arg(format!(
                "need at least 2 groups, got {}",
                groups.len()
            )));
        }
        for (i, g) in groups.iter().enumerate() {
            if g.len() < 2 {
                return Err(Error::arg(format!(
                    "group {i} has {} samples, need at least 2",
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::arg(format!("group {i} contains non-finite values")));
            }
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.groups
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeveneReport {
    #[serde(rename = "W")]
    pub w: f64,
    pub df1: usize,
    pub df2: usize,
    pub p_value: f64,
    pub center: Center,
    #[serde(skip)]
    pub group_z_means: Vec<f64>,
    #[serde(skip)]
    pub grand_z_mean: f64,
}

pub(crate) fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn group_center(values: &[f64], center: Center) -> f64 {
    match center {
        Center::Mean => mean(values),
        Center::Median => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            median_sorted(&sorted)
        }
    }
}

pub fn levene(samples: &GroupedSamples, center: Center) -> Result<LeveneReport> {
    let k = samples.groups.len();
    let n = samples.total();
    let z: Vec<Vec<f64>> = samples
        .groups
        .iter()
        .map(|g| {
            let c = group_center(g, center);
            g.iter().map(|y| (y - c).abs()).collect()
        })
        .collect();
    let group_z_means: Vec<f64> = z.iter().map(|g| mean(g)).collect();
    let grand_z_mean = z.iter().flatten().sum::<f64>() / n as f64;

    let between: f64 = z
        .iter()
        .zip(&group_z_means)
        .map(|(g, m)| g.len() as f64 * (m - grand_z_mean).powi(2))
        .sum();
    let within: f64 = z
        .iter()
        .zip(&group_z_means)
        .map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();

    let df1 = k - 1;
    let df2 = n - k;
    let (w, p_value) = if within > 0.0 {
        let w = (df2 as f64 / df1 as f64) * between / within;
        (w, f_sf(w, df1 as f64, df2 as f64)?)
    } else if between > 0.0 {
        // every group has constant spread but the spreads differ
        (f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    Ok(LeveneReport {
        w,
        df1,
        df2,
        p_value,
        center,
        group_z_means,
        grand_z_mean,
    })
}

/// Levene's test on two plain series.
pub fn levene_two(a: &[f64], b: &[f64], center: Center) -> Result<LeveneReport> {
    levene(&GroupedSamples::new(vec![a.to_vec(), b.to_vec()])?, center)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_worked_example() {
        // Z1 = {1,0,1}, Z2 = {2,0,2}: Z1. = 2/3, Z2. = 4/3, Z.. = 1
        // between = 3(1/9) + 3(1/9) = 2/3; within = 2/3 + 8/3 = 10/3
        // W = 4 * (2/3) / (10/3) = 0.8
        let r = levene_two(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], Center::Mean).unwrap();
        assert!((r.w - 0.8).abs() < 1e-12);
        assert_eq!((r.df1, r.df2), (1, 4));
        assert!((r.grand_z_mean - 1.0).abs() < 1e-12);
        assert!((r.group_z_means[0] - 2.0 / 3.0).abs() < 1e-12);
        // F(1,4) at 0.8 is the two-sided t(4) tail at sqrt(0.8)
        assert!(r.p_value > 0.4 && r.p_value < 0.5);
    }

    #[test]
    fn identical_groups() {
        let g = [3.0, 1.0, 4.0, 1.0, 5.0];
        let r = levene_two(&g, &g, Center::Mean).unwrap();
        assert_eq!(r.w, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = levene_two(&[2.0, 2.0], &[7.0, 7.0], Center::Median).unwrap();
        assert_eq!((r.w, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn median_centre() {
        // medians 2 and 4: Z1 = {1,0,7}, Z2 = {2,0,2}
        let r = levene_two(&[1.0, 2.0, 9.0], &[2.0, 4.0, 6.0], Center::Median).unwrap();
        let z1 = [1.0, 0.0, 7.0];
        let z2 = [2.0, 0.0, 2.0];
        let m1 = 8.0 / 3.0;
        let m2 = 4.0 / 3.0;
        let g = 2.0;
        let between = 3.0 * ((m1 - g) * (m1 - g) + (m2 - g) * (m2 - g));
        let within: f64 = z1.iter().map(|v| (v - m1) * (v - m1)).sum::<f64>()
            + z2.iter().map(|v| (v - m2) * (v - m2)).sum::<f64>();
        assert!((r.w - 4.0 * between / within).abs() < 1e-12);
    }

    #[test]
    fn constant_spreads_that_differ() {
        let r = levene_two(&[0.0, 2.0], &[0.0, 4.0], Center::Mean).unwrap();
        assert!(r.w.is_infinite());
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn group_validation() {
        assert!(GroupedSamples::new(vec![vec![1.0, 2.0]]).is_err());
        assert!(GroupedSamples::new(vec![vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(GroupedSamples::new(vec![vec![1.0, 2.0], vec![1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn report_json_shape() {
        let r = levene_two(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], Center::Mean).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 5);
        for k in ["W", "df1", "df2", "p_value", "center"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["center"], "mean");
    }

    #[test]
    fn centre_parsing() {
        assert_eq!("median".parse::<Center>().unwrap(), Center::Median);
        assert!("mode".parse::<Center>().is_err());
    }
}
