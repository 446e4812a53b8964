use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{default_one, finish, par_trials, trial_rng, Deadline, ModelSetup, TrialOutcome};
use crate::error::{Error, Result};
use crate::model::{sample_response, TokenId, BIT_DONE};
use crate::prf::{setup, SchemeId};
use crate::scheme::{detect_bits, detect_tokens, DetectionReport};
use crate::stats::{binomial_band, wilson_interval, Z_99_UPPER};

/// Where the key-independent texts come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextSource {
    /// `text_len` fair bits (for the simple scheme: bit tokens plus `done`).
    #[default]
    RandomBits,
    /// Plain samples from a model.
    Model(ModelSetup),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoundnessConfig {
    pub scheme: SchemeId,
    pub lambda: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<u32>,
    pub trials: u64,
    pub seed: u64,
    pub text_len: usize,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default)]
    pub source: TextSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget_secs: Option<f64>,
}

/// Detection rate on texts drawn independently of a fresh key per trial.
pub fn run_soundness(cfg: &SoundnessConfig) -> Result<TrialOutcome> {
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let built = match &cfg.source {
        TextSource::RandomBits => None,
        TextSource::Model(s) => Some(s.build(b"")?),
    };
    let deadline = Deadline::new(cfg.time_budget_secs);
    let results = par_trials(cfg.trials, &deadline, |t| {
        let mut rng = trial_rng(cfg.seed, t);
        let sk = setup(cfg.lambda, cfg.scheme, cfg.b, &mut rng)?;
        let tokens: Vec<TokenId> = match &built {
            None => {
                let mut v: Vec<TokenId> = (0..cfg.text_len).map(|_| TokenId(rng.next_u32() & 1)).collect();
                if cfg.scheme == SchemeId::Simple {
                    v.push(BIT_DONE);
                }
                v
            }
            Some((model, _)) => sample_response(model, b"", &mut rng)?.tokens,
        };
        let report = if built.is_none() && cfg.scheme != SchemeId::Simple {
            let bits: Vec<bool> = tokens.iter().map(|x| x.0 == 1).collect();
            detect_bits(&sk, &bits, cfg.stride)
        } else {
            let codec = built.as_ref().and_then(|(_, c)| c.as_ref());
            detect_tokens(&sk, &tokens, codec, cfg.stride)
        };
        or_too_short(report)
    })?;

    let ran = results.len() as u64;
    let hits = results.iter().filter(|r| r.verdict).count() as u64;
    let mut out = TrialOutcome::new("soundness", hits, ran);
    out.margins = results.iter().filter_map(|r| r.margin).collect();
    let evals: u64 = results.iter().map(|r| r.prf_evaluations).sum();
    out.metric("prf_evaluations", evals as f64);
    let upper = wilson_interval(hits, ran, Z_99_UPPER).1;
    out.metric("wilson_upper_one_sided_99", upper);
    if cfg.scheme == SchemeId::Simple {
        let b = cfg.b.unwrap_or(1);
        let p = (-(f64::from(b))).exp2();
        let (lo, hi) = binomial_band(p, ran.max(1), 4.0);
        out.metric("expected_rate", p);
        out.check(
            "rate_within_4sigma_of_2^-b",
            (lo..=hi).contains(&out.rate),
            format!("rate {:.3e}, band [{lo:.3e}, {hi:.3e}] around 2^-{b}", out.rate),
        );
    } else {
        out.check(
            "no_detections",
            hits == 0,
            format!("{hits} of {ran} texts detected; one-sided 99% upper bound {upper:.3e}"),
        );
    }
    if results.iter().any(|r| r.stride != 1) {
        out.warnings.push(format!("substring detector ran with stride {}: not exhaustive", cfg.stride));
    }
    finish(&mut out, &deadline, ran, cfg.trials);
    Ok(out)
}

/// Inputs below the detector's minimum length count as not detected.
pub(crate) fn or_too_short(report: Result<DetectionReport>) -> Result<DetectionReport> {
    match report {
        Err(Error::InputTooShort { .. }) => Ok(DetectionReport {
            verdict: false,
            best_candidate: None,
            margin: None,
            candidates_scanned: 0,
            prf_evaluations: 0,
            stride: 1,
            truncated: false,
        }),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SyntheticModelSpec;

    fn cfg(scheme: SchemeId, lambda: u32, b: Option<u32>, trials: u64, len: usize) -> SoundnessConfig {
        SoundnessConfig {
            scheme,
            lambda,
            b,
            trials,
            seed: 7,
            text_len: len,
            stride: 1,
            source: TextSource::RandomBits,
            time_budget_secs: None,
        }
    }

    #[test]
    fn complete_detector_rejects_random_text() {
        let out = run_soundness(&cfg(SchemeId::Complete, 16, None, 200, 128)).unwrap();
        assert!(out.passed(), "{out:?}");
        assert_eq!(out.margins.len(), 200);
        assert_eq!(out.metrics["prf_evaluations"], 200.0 * 128.0 * 127.0 / 2.0);
    }

    #[test]
    fn simple_false_positive_rate_is_two_to_minus_b() {
        let out = run_soundness(&cfg(SchemeId::Simple, 8, Some(1), 4000, 16)).unwrap();
        assert!(out.passed(), "{:?}", out.checks);
        assert!((out.rate - 0.5).abs() < 0.05);
    }

    #[test]
    fn reproducible_and_model_sourced() {
        let mut c = cfg(SchemeId::Substring, 24, None, 8, 0);
        c.source = TextSource::Model(ModelSetup::new(SyntheticModelSpec::bernoulli(0.3, 48), None));
        let a = run_soundness(&c).unwrap();
        let b = run_soundness(&c).unwrap();
        assert_eq!(a.margins, b.margins);
        assert_eq!(a.successes, 0);
    }

    #[test]
    fn budget_marks_run_incomplete() {
        let mut c = cfg(SchemeId::Complete, 16, None, 1000, 64);
        c.time_budget_secs = Some(0.0);
        let out = run_soundness(&c).unwrap();
        assert!(!out.completed);
        assert!(!out.passed());
    }
}
