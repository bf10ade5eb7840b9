//! Small statistics helpers shared by the experiment code.

use serde::Serialize;
use statrs::statistics::{Data, Median, OrderStatistics};

/// Least-squares line `y = slope x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Ordinary least squares; `None` with fewer than two distinct `x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = xs[..n].iter().sum::<f64>() / nf;
    let my = ys[..n].iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (xs[i] - mx, ys[i] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LineFit { slope, intercept: my - slope * mx, r2, points: n })
}

/// Median and interquartile range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spread {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Spread {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

pub fn spread(xs: &[f64]) -> Spread {
    let mut d = Data::new(xs.to_vec());
    Spread { median: d.median(), q1: d.lower_quartile(), q3: d.upper_quartile() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 - 0.5 * x).collect();
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 2.5).abs() < 1e-14);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn spread_of_small_sample() {
        let s = spread(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(s.median, 3.0);
        assert!(s.q1 < s.median && s.median < s.q3);
    }
}
