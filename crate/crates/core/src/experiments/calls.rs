use serde::{Deserialize, Serialize};

use super::{finish, par_trials, trial_rng, Deadline, TrialOutcome};
use crate::error::{Error, Result};
use crate::model::{make_synthetic_model, SyntheticModelSpec};
use crate::prf::{setup, SchemeId};
use crate::scheme::simple::wat_simple;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimpleCallsConfig {
    pub lambda: u32,
    pub b: u32,
    /// Defaults to `uniform(8λ)`, whose responses always clear the `6λ` cutoff.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<SyntheticModelSpec>,
    pub runs: u64,
    pub seed: u64,
    /// Allowed relative deviation of the mean from `1 + 2^b`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.3
}

/// Mean number of model calls `wat_simple` makes, against `1 + 2^b`.
pub fn run_simple_calls(cfg: &SimpleCallsConfig) -> Result<TrialOutcome> {
    if cfg.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let spec = cfg.model.clone().unwrap_or_else(|| SyntheticModelSpec::uniform(8 * cfg.lambda as usize));
    let model = make_synthetic_model(&spec)?;
    let deadline = Deadline::new(None);
    let stats = par_trials(cfg.runs, &deadline, |t| {
        let mut rng = trial_rng(cfg.seed, t);
        let sk = setup(cfg.lambda, SchemeId::Simple, Some(cfg.b), &mut rng)?;
        Ok(wat_simple(&sk, &model, b"", &mut rng)?.1)
    })?;
    let branch = stats.iter().filter(|s| s.watermark_branch_taken).count() as u64;
    let mut out = TrialOutcome::new("simple_calls", branch, cfg.runs);
    let mean = stats.iter().map(|s| s.model_calls as f64).sum::<f64>() / cfg.runs as f64;
    let expected = 1.0 + f64::from(cfg.b).exp2();
    out.metric("mean_model_calls", mean);
    out.metric("expected_model_calls", expected);
    out.metric("relative_error", (mean - expected) / expected);
    out.check(
        "mean_calls_within_tolerance",
        (mean - expected).abs() <= cfg.tolerance * expected,
        format!("mean {mean:.3} calls over {} runs vs 1 + 2^{} = {expected}", cfg.runs, cfg.b),
    );
    finish(&mut out, &deadline, cfg.runs, cfg.runs);
    Ok(out)
}
