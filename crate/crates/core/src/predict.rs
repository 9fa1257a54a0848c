//! FER curves from a parameter table.

use serde::{Deserialize, Serialize};

use crate::decoder::WindowConfig;
use crate::error::{Error, Result};
use crate::laws::{fer_const_propagation, fer_randomized, fer_unlimited, NpdModel, RandomizedOptions, UnlimitedVariant};
use crate::params::ScalingParams;
use crate::race::{fer_sliding_window_limited, FpOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Law {
    Unlimited(UnlimitedVariant),
    /// Full BP with `I` iterations, constant wave speed.
    ConstPropagation(usize),
    /// Full BP with `I` iterations, random propagation distance.
    Randomized(usize, NpdModel),
    SlidingWindow(WindowConfig),
}

impl Law {
    pub fn name(&self) -> String {
        match self {
            Law::Unlimited(UnlimitedVariant::Terminated) => "unlimited".into(),
            Law::Unlimited(UnlimitedVariant::Unterminated { l_prime }) => format!("unlimited_unterminated_{l_prime}"),
            Law::Unlimited(UnlimitedVariant::SlidingWindow { w, .. }) => format!("unlimited_window_{w}"),
            Law::ConstPropagation(i) => format!("const_propagation_i{i}"),
            Law::Randomized(i, m) => format!("{}_i{i}", m.name()),
            Law::SlidingWindow(c) => format!("window_w{}_in{}_s{}", c.w, c.i_in, c.i_s),
        }
    }
}

/// One point of a predicted curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicted {
    pub epsilon: f64,
    pub model: String,
    pub fer: f64,
}

/// Evaluates `law` at `epsilon` for lifting factor `n` and a chain of `l`
/// positions.
pub fn predict(table: &ScalingParams, law: &Law, epsilon: f64, n: usize, l: usize, seed: u64) -> Result<f64> {
    let p = table.at(epsilon)?;
    match *law {
        Law::Unlimited(v) => Ok(fer_unlimited(&p, n, v)),
        Law::ConstPropagation(i) => Ok(fer_const_propagation(&p, n, i)),
        Law::Randomized(i, model) => fer_randomized(
            &p,
            n,
            i,
            model,
            RandomizedOptions {
                seed,
                ..Default::default()
            },
        ),
        Law::SlidingWindow(cfg) => Ok(fer_sliding_window_limited(&p, n, l, &cfg, &FpOptions::standard(cfg.w))?.fer),
    }
}

/// Curves of every law over `grid`. Points outside the table range are
/// skipped with a warning.
pub fn predict_curves(table: &ScalingParams, laws: &[Law], grid: &[f64], n: usize, l: usize, seed: u64) -> Result<Vec<Predicted>> {
    let mut out = Vec::new();
    for law in laws {
        for &eps in grid {
            match predict(table, law, eps, n, l, seed) {
                Ok(fer) => out.push(Predicted {
                    epsilon: eps,
                    model: law.name(),
                    fer,
                }),
                Err(Error::Range { eps, lo, hi }) => log::warn!("skipping ε = {eps} outside the table range [{lo}, {hi}]"),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Writes `epsilon,model,fer` rows.
pub fn write_predicted_csv<W: std::io::Write>(points: &[Predicted], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epsilon,model,fer")?;
    for p in points {
        writeln!(out, "{},{},{}", p.epsilon, p.model, p.fer)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::tests::sample_table;

    #[test]
    fn out_of_range_points_are_skipped() {
        let t = sample_table();
        let laws = [Law::Unlimited(UnlimitedVariant::Terminated), Law::ConstPropagation(175)];
        let pts = predict_curves(&t, &laws, &[0.44, 0.45, 0.46, 0.48], 1000, 50, 0).unwrap();
        assert_eq!(pts.len(), 4);
        assert!(pts.iter().all(|p| (0.0..=1.0).contains(&p.fer)));
        let mut csv = Vec::new();
        write_predicted_csv(&pts, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
    }

    #[test]
    fn large_budget_reaches_unlimited_law() {
        let t = sample_table();
        for eps in [0.45, 0.46, 0.47] {
            let u = predict(&t, &Law::Unlimited(UnlimitedVariant::Terminated), eps, 1000, 50, 0).unwrap();
            for law in [
                Law::ConstPropagation(100_000),
                Law::Randomized(100_000, NpdModel::Gaussian),
                Law::Randomized(100_000, NpdModel::ShiftedGaussian),
            ] {
                let f = predict(&t, &law, eps, 1000, 50, 0).unwrap();
                assert!((f - u).abs() < 1e-3, "{} at {eps}: {f} vs {u}", law.name());
            }
        }
    }
}
