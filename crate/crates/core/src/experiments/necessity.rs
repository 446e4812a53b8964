use rand::Rng;
use serde::{Deserialize, Serialize};

use super::soundness::or_too_short;
use super::{default_one, finish, par_trials, trial_rng, Deadline, ModelSetup, TrialOutcome};
use crate::codec::{CodecKind, TokenCodec};
use crate::error::{Error, Result};
use crate::model::{sample_response, SyntheticModel, SyntheticModelSpec, TokenId};
use crate::prf::{SchemeId, SecretKey};
use crate::scheme::{detect_tokens, generate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub epsilon: f64,
    pub lambda: u32,
    /// Fair bits in the non-`done` branch; `ceil(8λ/ε)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_len: Option<usize>,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeId,
    #[serde(default = "default_codec")]
    pub codec: CodecKind,
    pub trials: u64,
    pub seed: u64,
}

fn default_scheme() -> SchemeId {
    SchemeId::Complete
}

fn default_codec() -> CodecKind {
    CodecKind::FixedWidth
}

/// Branch length used for a mixture config.
pub fn mixture_branch_len(cfg: &MixtureConfig) -> usize {
    cfg.branch_len.unwrap_or_else(|| {
        let len = 8.0 * f64::from(cfg.lambda) / cfg.epsilon;
        if len.is_finite() {
            len.ceil() as usize
        } else {
            8 * cfg.lambda as usize
        }
    })
}

/// Detected fraction of the scheme's own outputs on a model that says
/// `done` with probability `1 - ε`: it cannot exceed ε by more than noise.
pub fn run_mixture_necessity(cfg: &MixtureConfig) -> Result<TrialOutcome> {
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if cfg.scheme == SchemeId::Simple {
        return Err(Error::Config("the mixture experiment runs the complete or substring scheme".into()));
    }
    let setup = ModelSetup::new(SyntheticModelSpec::mixture(cfg.epsilon, mixture_branch_len(cfg)), Some(cfg.codec));
    let (model, codec) = setup.build(b"")?;
    let deadline = Deadline::new(None);
    let results = par_trials(cfg.trials, &deadline, |t| {
        let mut rng = trial_rng(cfg.seed, t);
        let sk = crate::prf::setup(cfg.lambda, cfg.scheme, None, &mut rng)?;
        let tokens = generate(&sk, &model, codec.as_ref(), b"", &mut rng)?.tokens().to_vec();
        let branch = tokens.len() > 1;
        let report = or_too_short(detect_tokens(&sk, &tokens, codec.as_ref(), 1))?;
        Ok((branch, report.verdict))
    })?;
    let n = results.len() as u64;
    let hits = results.iter().filter(|r| r.1).count() as u64;
    let branches = results.iter().filter(|r| r.0).count() as u64;
    let branch_hits = results.iter().filter(|r| r.0 && r.1).count() as u64;
    let mut out = TrialOutcome::new("mixture_necessity", hits, n);
    out.metric("branch_len", mixture_branch_len(cfg) as f64);
    out.metric("branch_rate", branches as f64 / n as f64);
    out.metric("in_branch_detection_rate", if branches == 0 { 0.0 } else { branch_hits as f64 / branches as f64 });
    let eps = cfg.epsilon;
    let limit = eps + 4.0 * (eps * (1.0 - eps) / n as f64).sqrt();
    out.check(
        "rate_at_most_epsilon_plus_4sigma",
        out.rate <= limit,
        format!("{hits} of {n} outputs detected (rate {:.4}, limit {limit:.4})", out.rate),
    );
    finish(&mut out, &deadline, n, cfg.trials);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    /// Size of the key space is `2^key_bits`.
    pub key_bits: u32,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeId,
    #[serde(flatten)]
    pub setup: ModelSetup,
    pub lambda: u32,
    /// Draws from each oracle per game.
    pub samples: usize,
    pub games: u64,
    /// Completeness level the witness threshold `3ε²/4` is built from.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// When set, both oracles are the plain model.
    #[serde(default)]
    pub control: bool,
    pub seed: u64,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget_secs: Option<f64>,
}

fn default_epsilon() -> f64 {
    1.0
}

/// Largest key space the enumeration accepts.
pub const MAX_TOY_KEY_BITS: u32 = 14;

/// Key number `k` of the truncated key space: `k` big-endian in the last
/// four key bytes, zeros elsewhere.
pub fn toy_key(k: u32, lambda: u32, scheme: SchemeId) -> Result<SecretKey> {
    let mut bytes = [0u8; 32];
    bytes[28..].copy_from_slice(&k.to_be_bytes());
    SecretKey::from_bytes(bytes, lambda, scheme, None)
}

struct Game {
    coin: bool,
    guess: bool,
    detect_calls: u64,
    witness: Option<u32>,
}

/// The exhaustive-key distinguisher: draw `S₁` from the model and `S₂` from
/// the watermarked generator (under a uniformly chosen toy key) or the model,
/// by a coin that alternates between games; guess "watermarked" iff some key detects under `3ε²/4` of
/// `S₁` and over `3ε²/4` of `S₂`. Reports `2·Pr[correct] - 1`.
pub fn toy_distinguisher(cfg: &ToyConfig) -> Result<TrialOutcome> {
    if cfg.key_bits == 0 || cfg.key_bits > MAX_TOY_KEY_BITS {
        return Err(Error::Config(format!("key_bits = {} is outside 1..={MAX_TOY_KEY_BITS}", cfg.key_bits)));
    }
    if cfg.scheme == SchemeId::Simple {
        return Err(Error::Config("the toy distinguisher runs the complete or substring scheme".into()));
    }
    if cfg.samples == 0 || cfg.games == 0 {
        return Err(Error::Config("samples and games must be at least 1".into()));
    }
    let (model, codec) = cfg.setup.build(b"")?;
    let keys: Vec<SecretKey> =
        (0..1u32 << cfg.key_bits).map(|k| toy_key(k, cfg.lambda, cfg.scheme)).collect::<Result<_>>()?;
    let tau = 0.75 * cfg.epsilon * cfg.epsilon;
    let deadline = Deadline::new(cfg.time_budget_secs);
    let mut games = Vec::new();
    // Fraction of the key space scanned in a game the budget cut short.
    let mut partial = 0.0;
    // Games run one after another; the key scan inside each is the parallel part.
    for g in 0..cfg.games {
        if deadline.expired() {
            break;
        }
        match play(cfg, &model, codec.as_ref(), &keys, tau, g, &deadline)? {
            Ok(game) => games.push(game),
            Err(scanned) => {
                partial = scanned as f64 / keys.len() as f64;
                break;
            }
        }
    }
    let n = games.len() as u64;
    let correct = games.iter().filter(|g| g.coin == g.guess).count() as u64;
    let mut out = TrialOutcome::new("toy_distinguisher", correct, n);
    let advantage = if n == 0 { 0.0 } else { 2.0 * out.rate - 1.0 };
    let arm = |c: bool| {
        let (hit, all) = games.iter().filter(|g| g.coin == c).fold((0, 0), |(h, a), g| (h + u64::from(g.guess), a + 1));
        if all == 0 {
            0.0
        } else {
            hit as f64 / all as f64
        }
    };
    out.metric("advantage", advantage);
    out.metric("guess_rate_watermarked_arm", arm(true));
    out.metric("guess_rate_model_arm", arm(false));
    out.metric("games_completed", n as f64);
    out.metric("detect_calls", games.iter().map(|g| g.detect_calls).sum::<u64>() as f64);
    out.metric("witness_rate", games.iter().filter(|g| g.witness.is_some()).count() as f64 / n.max(1) as f64);
    out.metric("threshold_fraction", tau);
    finish(&mut out, &deadline, n, cfg.games);
    if !out.completed && n == 0 && partial > 0.0 {
        // Cut before the first game ended: project from the keys scanned.
        let projected = out.wall_time_secs * cfg.games as f64 / partial;
        out.metric("projected_secs", projected);
        out.metric("partial_game_progress", partial);
        out.warnings
            .push(format!("{partial:.3} of {} games played; full run projected at {projected:.0} s", cfg.games));
    }
    Ok(out)
}

/// Plays one game, or reports how many keys were scanned before the deadline.
fn play(
    cfg: &ToyConfig,
    model: &SyntheticModel,
    codec: Option<&TokenCodec>,
    keys: &[SecretKey],
    tau: f64,
    game: u64,
    deadline: &Deadline,
) -> Result<std::result::Result<Game, usize>> {
    let mut rng = trial_rng(cfg.seed, game);
    // Alternating the coin balances the two arms exactly, so the control
    // run's advantage carries no coin-count noise.
    let coin = game % 2 == 1;
    let secret = rng.random_range(0..keys.len());
    let watermarked = coin && !cfg.control;
    let mut s1 = Vec::with_capacity(cfg.samples);
    let mut s2 = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        s1.push(sample_response(model, b"", &mut rng)?.tokens);
        s2.push(if watermarked {
            generate(&keys[secret], model, codec, b"", &mut rng)?.tokens().to_vec()
        } else {
            sample_response(model, b"", &mut rng)?.tokens
        });
    }
    let n = cfg.samples as f64;
    let scans = par_trials(keys.len() as u64, deadline, |k| {
        let sk = &keys[k as usize];
        let mut calls = 0u64;
        // S₂ first: most keys fail there, and the scan stops as soon as
        // more than τ·n detections are out of reach.
        let high = at_least(sk, &s2, codec, cfg.stride, (tau * n).floor() as usize + 1, &mut calls)?;
        let low = high && !at_least(sk, &s1, codec, cfg.stride, (tau * n).ceil() as usize, &mut calls)?;
        Ok((calls, high && low))
    })?;
    if scans.len() < keys.len() {
        return Ok(Err(scans.len()));
    }
    let witness = scans.iter().position(|s| s.1).map(|k| k as u32);
    Ok(Ok(Game { coin, guess: witness.is_some(), detect_calls: scans.iter().map(|s| s.0).sum(), witness }))
}

/// Whether at least `need` of `texts` are detected under `sk`, stopping
/// once the answer is settled.
fn at_least(
    sk: &SecretKey,
    texts: &[Vec<TokenId>],
    codec: Option<&TokenCodec>,
    stride: usize,
    need: usize,
    calls: &mut u64,
) -> Result<bool> {
    let mut hits = 0usize;
    for (i, x) in texts.iter().enumerate() {
        if hits >= need {
            return Ok(true);
        }
        if hits + texts.len() - i < need {
            return Ok(false);
        }
        *calls += 1;
        hits += usize::from(or_too_short(detect_tokens(sk, x, codec, stride))?.verdict);
    }
    Ok(hits >= need)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(control: bool, samples: usize) -> ToyConfig {
        ToyConfig {
            key_bits: 4,
            scheme: SchemeId::Complete,
            setup: ModelSetup::new(SyntheticModelSpec::uniform(256), None),
            lambda: 6,
            samples,
            games: 40,
            epsilon: 1.0,
            control,
            seed: 4,
            stride: 1,
            time_budget_secs: None,
        }
    }

    #[test]
    fn exceeds_stops_early() {
        let sk = toy_key(0, 4, SchemeId::Complete).unwrap();
        let texts = vec![vec![TokenId(0), TokenId(1), TokenId(0)]; 10];
        let mut calls = 0;
        assert!(!at_least(&sk, &texts, None, 1, 8, &mut calls).unwrap());
        assert_eq!(calls, 3);
    }

    #[test]
    fn toy_keys_are_distinct_and_valid() {
        let a = toy_key(1, 6, SchemeId::Complete).unwrap();
        let b = toy_key(2, 6, SchemeId::Complete).unwrap();
        assert_ne!(a.key_bytes(), b.key_bytes());
        assert_eq!(a.key_bytes()[31], 1);
    }

    #[test]
    fn distinguisher_separates_and_control_does_not() {
        let out = toy_distinguisher(&toy(false, 20)).unwrap();
        assert!(out.metrics["advantage"] >= 0.8, "{out:?}");
        let out = toy_distinguisher(&toy(true, 20)).unwrap();
        assert_eq!(out.metrics["advantage"], 0.0, "{out:?}");
        assert_eq!(out.metrics["witness_rate"], 0.0);
    }

    #[test]
    fn one_sample_per_oracle_still_separates() {
        // A sound detector rarely fires on plain text, so a single
        // watermarked sample already gives the true key away.
        let out = toy_distinguisher(&toy(false, 1)).unwrap();
        assert!(out.metrics["advantage"] >= 0.8, "{out:?}");
    }

    #[test]
    fn budget_projects_from_partial_games() {
        let mut c = toy(true, 20);
        c.time_budget_secs = Some(0.2);
        c.games = 1000;
        let out = toy_distinguisher(&c).unwrap();
        assert!(!out.completed);
        assert!(out.metrics["projected_secs"] > 0.2);
    }

    #[test]
    fn mixture_rate_is_bounded_by_epsilon() {
        let cfg = MixtureConfig {
            epsilon: 0.25,
            lambda: 4,
            branch_len: None,
            scheme: SchemeId::Complete,
            codec: CodecKind::FixedWidth,
            trials: 400,
            seed: 8,
        };
        let out = run_mixture_necessity(&cfg).unwrap();
        assert!(out.passed(), "{out:?}");
        assert_eq!(out.metrics["branch_len"], 128.0);
        let zero = run_mixture_necessity(&MixtureConfig { epsilon: 0.0, trials: 50, ..cfg }).unwrap();
        assert_eq!(zero.successes, 0);
        assert!(zero.passed());
    }
}
