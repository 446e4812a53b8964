use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{finish, par_trials, trial_rng, Deadline, TrialOutcome};
use crate::error::{Error, Result};
use crate::score::exp_tail_bounds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationConfig {
    pub n_values: Vec<usize>,
    pub taus: Vec<f64>,
    pub trials: u64,
    pub seed: u64,
}

/// Tail frequencies of a sum of `n` Exp(1) draws, against the bounds
/// `(4/5)^√τ` above `n + √(τn)` and `e^(-τ/2)` below `n - √(τn)`.
pub fn run_concentration(cfg: &ConcentrationConfig) -> Result<TrialOutcome> {
    if cfg.trials < 1000 {
        return Err(Error::Config(format!("trials = {} is below 1000", cfg.trials)));
    }
    if cfg.n_values.is_empty() || cfg.taus.is_empty() {
        return Err(Error::Config("n_values and taus must be non-empty".into()));
    }
    let deadline = Deadline::new(None);
    let mut out = TrialOutcome::new("concentration", 0, 0);
    let cells = (cfg.n_values.len() * cfg.taus.len()) as u64;
    let mut held = 0;
    for (ni, &n) in cfg.n_values.iter().enumerate() {
        let bounds: Vec<_> = cfg.taus.iter().map(|&t| exp_tail_bounds(n, t)).collect::<Result<_>>()?;
        // One set of sums per n serves every τ.
        let sums = par_trials(cfg.trials, &deadline, |t| {
            let mut rng = trial_rng(cfg.seed, ((ni as u64) << 40) | t);
            Ok((0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).sum::<f64>())
        })?;
        let nf = n as f64;
        let trials = cfg.trials as f64;
        for (&tau, b) in cfg.taus.iter().zip(&bounds) {
            let gap = (tau * nf).sqrt();
            let upper = sums.iter().filter(|&&s| s >= nf + gap).count() as f64 / trials;
            let lower = sums.iter().filter(|&&s| s <= nf - gap).count() as f64 / trials;
            let slack = |p: f64| 4.0 * (p * (1.0 - p) / trials).sqrt();
            let ok = upper <= b.upper + slack(b.upper) && lower <= b.lower + slack(b.lower);
            held += u64::from(ok);
            let key = format!("n{n}_tau{tau}");
            out.metric(&format!("{key}_upper"), upper);
            out.metric(&format!("{key}_lower"), lower);
            out.check(
                &format!("tails_{key}"),
                ok,
                format!("upper {upper:.3e} vs bound {:.4}, lower {lower:.3e} vs bound {:.3e}", b.upper, b.lower),
            );
        }
    }
    out.successes = held;
    out.trials = cells;
    out.rate = held as f64 / cells as f64;
    out.wilson_interval = crate::stats::wilson_interval(held, cells, crate::stats::Z_99);
    finish(&mut out, &deadline, cfg.trials, cfg.trials);
    Ok(out)
}
