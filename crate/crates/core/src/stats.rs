//! Paired one-sided significance test for seed sweeps.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{usage_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t_stat: f64,
    /// `P(T >= t)` under the null of zero mean difference.
    pub p_value: f64,
}

/// Paired t-test of `H1: mean(a - b) > 0`.
pub fn paired_one_sided(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(usage_err("paired samples differ in length"));
    }
    let n = a.len();
    if n < 2 {
        return Err(usage_err("paired test needs at least 2 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    let se = (var / nf).sqrt();
    let (t_stat, p_value) = if se == 0.0 {
        // All differences equal: certain sign, or no evidence.
        if mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (if mean < 0.0 { f64::NEG_INFINITY } else { 0.0 }, 1.0)
        }
    } else {
        let t = mean / se;
        let dist = StudentsT::new(0.0, 1.0, nf - 1.0).expect("n >= 2 gives positive dof");
        (t, 1.0 - dist.cdf(t))
    };
    Ok(PairedTest {
        n,
        mean_diff: mean,
        t_stat,
        p_value,
    })
}
