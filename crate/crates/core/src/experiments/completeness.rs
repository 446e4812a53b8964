use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use super::soundness::or_too_short;
use super::{default_one, finish, par_trials, trial_rng, Deadline, ModelSetup, TrialOutcome};
use crate::codec::Binarized;
use crate::error::{Error, Result};
use crate::prf::{setup, SchemeId};
use crate::scheme::substring::score_seed_window;
use crate::scheme::{bit_surprisals, detect_bits, generate, Watermarked};

/// Which generated responses count towards the detection rate.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// The scored text's empirical entropy reaches `c·λ·√L` bits, with
    /// `c = 4/ln2` for the complete scheme and `8/ln2` for the substring one.
    #[default]
    EntropyBound,
    /// The scored text holds a whole seed (a ledger block, or the complete
    /// scheme's seed prefix) followed by at least one more bit.
    ContainsSeed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletenessConfig {
    pub scheme: SchemeId,
    #[serde(flatten)]
    pub setup: ModelSetup,
    pub lambda: u32,
    pub trials: u64,
    pub seed: u64,
    /// 1-based inclusive bit range handed to the detector; the whole response if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(usize, usize)>,
    #[serde(default)]
    pub regime: Regime,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default = "default_min_rate")]
    pub min_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget_secs: Option<f64>,
}

fn default_min_rate() -> f64 {
    0.99
}

/// Entropy a scored text of `len` bits needs to be in the completeness regime.
pub fn entropy_bound(scheme: SchemeId, lambda: u32, len: usize) -> f64 {
    let c = if scheme == SchemeId::Substring { 8.0 } else { 4.0 };
    c / LN_2 * f64::from(lambda) * (len as f64).sqrt()
}

struct Trial {
    eligible: bool,
    meets_bound: bool,
    entropy: f64,
    detected: bool,
    margin: Option<f64>,
    seed_match: bool,
    true_seed_passes: Option<bool>,
}

/// Generates under a fresh key per trial and detects on the scored text,
/// counting only responses in the configured regime.
pub fn run_completeness(cfg: &CompletenessConfig) -> Result<TrialOutcome> {
    if cfg.scheme == SchemeId::Simple {
        return Err(Error::Config("completeness runs the complete or substring scheme".into()));
    }
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if let Some((s, e)) = cfg.window {
        if s == 0 || e <= s {
            return Err(Error::Config(format!("window ({s}, {e}) must satisfy 1 <= start < end")));
        }
        if cfg.scheme == SchemeId::Complete && s != 1 && cfg.regime == Regime::ContainsSeed {
            return Err(Error::Config("the complete detector only finds seeds that start the text".into()));
        }
    }
    let (model, codec) = cfg.setup.build(b"")?;
    let bmodel = Binarized::new(&model, codec.as_ref())?;
    let deadline = Deadline::new(cfg.time_budget_secs);
    let results = par_trials(cfg.trials, &deadline, |t| {
        let mut rng = trial_rng(cfg.seed, t);
        let sk = setup(cfg.lambda, cfg.scheme, None, &mut rng)?;
        let gen = generate(&sk, &model, codec.as_ref(), b"", &mut rng)?;
        let (bits, seeds): (&[bool], Vec<(usize, usize)>) = match &gen {
            Watermarked::Complete(g) => (&g.bits, g.ledger.seed_end_index.map(|e| (1, e)).into_iter().collect()),
            Watermarked::Substring(g) => (&g.bits, g.ledger.blocks.iter().map(|b| (b.start, b.end)).collect()),
            Watermarked::Simple { .. } => unreachable!("simple keys are rejected above"),
        };
        let (s, e) = cfg.window.unwrap_or((1, bits.len()));
        if e > bits.len() || bits.len() < 2 {
            return Ok(Trial {
                eligible: false,
                meets_bound: false,
                entropy: 0.0,
                detected: false,
                margin: None,
                seed_match: false,
                true_seed_passes: None,
            });
        }
        let window = &bits[s - 1..e];
        let entropy: f64 = bit_surprisals(&bmodel, b"", bits)?[s - 1..e].iter().sum();
        let meets_bound = entropy >= entropy_bound(cfg.scheme, cfg.lambda, window.len());
        let inside: Vec<(usize, usize)> = seeds.iter().copied().filter(|&(a, b)| a >= s && b < e).collect();
        let eligible = match cfg.regime {
            Regime::EntropyBound => meets_bound,
            Regime::ContainsSeed => !inside.is_empty(),
        };
        let report = or_too_short(detect_bits(&sk, window, cfg.stride))?;
        let seed_match = report.verdict
            && report
                .best_candidate
                .is_some_and(|c| seeds.iter().any(|&(a, b)| c.seed_start + s - 1 == a && c.seed_end + s - 1 == b));
        let true_seed_passes = match (cfg.scheme, inside.first()) {
            (SchemeId::Substring, Some(&(a, b))) => {
                Some(score_seed_window(&sk, window, a + 1 - s, b + 1 - s, cfg.lambda)?.0)
            }
            _ => None,
        };
        Ok(Trial {
            eligible,
            meets_bound,
            entropy,
            detected: report.verdict,
            margin: report.margin,
            seed_match,
            true_seed_passes,
        })
    })?;

    let ran = results.len() as u64;
    let eligible: Vec<&Trial> = results.iter().filter(|r| r.eligible).collect();
    let n = eligible.len() as u64;
    let hits = eligible.iter().filter(|r| r.detected).count() as u64;
    let mut out = TrialOutcome::new("completeness", hits, n);
    out.margins = eligible.iter().filter_map(|r| r.margin).collect();
    let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    out.metric("eligible", n as f64);
    out.metric("excluded", (ran - n) as f64);
    out.metric("mean_entropy_bits", results.iter().map(|r| r.entropy).sum::<f64>() / ran.max(1) as f64);
    out.metric("entropy_bound_rate", frac(results.iter().filter(|r| r.meets_bound).count(), results.len()));
    let matched = eligible.iter().filter(|r| r.seed_match).count();
    out.metric("seed_match_rate", frac(matched, hits as usize));
    let truth: Vec<bool> = eligible.iter().filter_map(|r| r.true_seed_passes).collect();
    if !truth.is_empty() {
        out.metric("true_seed_pass_rate", frac(truth.iter().filter(|p| **p).count(), truth.len()));
    }
    if n == 0 {
        out.rate = 1.0;
        out.warnings.push("no response met the regime; the completeness claim holds vacuously".into());
    }
    out.check(
        "rate_at_least_min",
        out.rate >= cfg.min_rate,
        format!("{hits} of {n} eligible responses detected (rate {:.4}, need {})", out.rate, cfg.min_rate),
    );
    finish(&mut out, &deadline, ran, cfg.trials);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SyntheticModelSpec;

    fn cfg(scheme: SchemeId, model: SyntheticModelSpec, lambda: u32, trials: u64) -> CompletenessConfig {
        CompletenessConfig {
            scheme,
            setup: ModelSetup::new(model, None),
            lambda,
            trials,
            seed: 3,
            window: None,
            regime: Regime::EntropyBound,
            stride: 1,
            min_rate: 0.99,
            time_budget_secs: None,
        }
    }

    #[test]
    fn bound_values() {
        assert!((entropy_bound(SchemeId::Complete, 8, 4096) - 2954.64).abs() < 0.01);
        assert!((entropy_bound(SchemeId::Substring, 8, 1024) - 2954.64).abs() < 0.01);
    }

    #[test]
    fn complete_scheme_detects_in_regime() {
        let out = run_completeness(&cfg(SchemeId::Complete, SyntheticModelSpec::uniform(1024), 4, 20)).unwrap();
        assert!(out.passed(), "{out:?}");
        assert_eq!(out.trials, 20);
        assert_eq!(out.metrics["seed_match_rate"], 1.0);
    }

    #[test]
    fn substring_window_with_a_contained_block() {
        let mut c = cfg(SchemeId::Substring, SyntheticModelSpec::uniform(600), 4, 10);
        c.window = Some((100, 500));
        c.regime = Regime::ContainsSeed;
        let out = run_completeness(&c).unwrap();
        assert!(out.passed(), "{out:?}");
        assert_eq!(out.metrics["true_seed_pass_rate"], 1.0);
    }

    #[test]
    fn deterministic_model_is_vacuous() {
        let spec = SyntheticModelSpec::deterministic(vec![0, 1, 1, 0, 1], 3, 2);
        let out = run_completeness(&cfg(SchemeId::Complete, spec, 8, 5)).unwrap();
        assert_eq!(out.trials, 0);
        assert!(out.passed());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn bad_windows_are_config_errors() {
        let mut c = cfg(SchemeId::Complete, SyntheticModelSpec::uniform(64), 4, 1);
        c.window = Some((5, 5));
        assert!(run_completeness(&c).is_err());
        let c = cfg(SchemeId::Simple, SyntheticModelSpec::uniform(64), 4, 1);
        assert!(run_completeness(&c).is_err());
    }
}
