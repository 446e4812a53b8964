use std::collections::HashMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::soundness::or_too_short;
use super::{default_one, finish, par_trials, trial_rng, Deadline, ModelSetup, TrialOutcome};
use crate::attack::{resample_attack, OracleMode, WatermarkOracle};
use crate::codec::{Binarized, TokenCodec};
use crate::error::{Error, Result};
use crate::model::{empirical_entropy, sample_response, SyntheticModel, TokenId, TokenModel};
use crate::prf::{setup, PrfSource, RandomOracle, SchemeId, SecretKey};
use crate::scheme::complete::wat_complete_with;
use crate::scheme::substring::wat_substring_with;
use crate::scheme::{detect_tokens, generate};
use crate::stats::{chi_square_two_sample, ChiSquare, P_FLOOR};

/// Stream offset separating plain samples from watermarked ones.
const PLAIN_STREAM: u64 = 1 << 62;
/// Stream offset for random-oracle tables.
const ORACLE_STREAM: u64 = 1 << 61;

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyMode {
    /// A new key (or oracle table) for every response.
    #[default]
    Fresh,
    /// One key (or oracle table) for all responses.
    Fixed,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrfMode {
    #[default]
    Keyed,
    /// A lazily sampled random function in place of the keyed PRF.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UndetectabilityConfig {
    pub scheme: SchemeId,
    #[serde(flatten)]
    pub setup: ModelSetup,
    pub lambda: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<u32>,
    /// Responses per side.
    pub samples: u64,
    pub seed: u64,
    #[serde(default)]
    pub key_mode: KeyMode,
    #[serde(default)]
    pub prf: PrfMode,
    /// Largest number of distinct responses for the whole-response histogram.
    #[serde(default = "default_max_outcomes")]
    pub max_outcomes: usize,
}

fn default_max_outcomes() -> usize {
    4096
}

/// Compares watermarked responses with plain samples position by position
/// and, for short models, over whole responses.
pub fn run_undetectability(cfg: &UndetectabilityConfig) -> Result<TrialOutcome> {
    if cfg.samples == 0 {
        return Err(Error::Config("samples must be at least 1".into()));
    }
    if cfg.prf == PrfMode::Oracle && cfg.scheme == SchemeId::Simple {
        return Err(Error::Config("the oracle variant applies to the complete and substring schemes".into()));
    }
    let (model, codec) = cfg.setup.build(b"")?;
    let deadline = Deadline::new(None);
    let fixed_key = match cfg.key_mode {
        KeyMode::Fixed => Some(setup(cfg.lambda, cfg.scheme, cfg.b, &mut trial_rng(cfg.seed, u64::MAX))?),
        KeyMode::Fresh => None,
    };
    let marked: Vec<Vec<TokenId>> = match (cfg.prf, cfg.key_mode) {
        (PrfMode::Oracle, KeyMode::Fixed) => {
            let mut oracle = RandomOracle::new(trial_rng(cfg.seed, ORACLE_STREAM));
            let mut v = Vec::with_capacity(cfg.samples as usize);
            for i in 0..cfg.samples {
                v.push(oracle_response(cfg, &model, codec.as_ref(), &mut oracle, &mut trial_rng(cfg.seed, i))?);
            }
            v
        }
        (PrfMode::Oracle, KeyMode::Fresh) => par_trials(cfg.samples, &deadline, |i| {
            let mut oracle = RandomOracle::new(trial_rng(cfg.seed, ORACLE_STREAM + i));
            oracle_response(cfg, &model, codec.as_ref(), &mut oracle, &mut trial_rng(cfg.seed, i))
        })?,
        (PrfMode::Keyed, _) => par_trials(cfg.samples, &deadline, |i| {
            let mut rng = trial_rng(cfg.seed, i);
            let fresh;
            let sk = match &fixed_key {
                Some(k) => k,
                None => {
                    fresh = setup(cfg.lambda, cfg.scheme, cfg.b, &mut rng)?;
                    &fresh
                }
            };
            Ok(generate(sk, &model, codec.as_ref(), b"", &mut rng)?.tokens().to_vec())
        })?,
    };
    let plain = plain_samples(&model, cfg.seed, cfg.samples, &deadline)?;

    let mut out = TrialOutcome::new("undetectability", 0, 0);
    let tests = position_battery(&mut out, &marked, &plain, model.alphabet_size());
    let passing = tests.iter().filter(|c| c.p_value > P_FLOOR).count() as u64;
    out.successes = passing;
    out.trials = tests.len() as u64;
    out.rate = if tests.is_empty() { 1.0 } else { passing as f64 / tests.len() as f64 };
    out.wilson_interval = crate::stats::wilson_interval(passing, tests.len() as u64, crate::stats::Z_99);
    histogram_battery(&mut out, &model, &marked, &plain, cfg.max_outcomes)?;
    done_rate_check(&mut out, &model, &marked);
    finish(&mut out, &deadline, cfg.samples, cfg.samples);
    Ok(out)
}

fn oracle_response<P: PrfSource, R: RngCore>(
    cfg: &UndetectabilityConfig,
    model: &SyntheticModel,
    codec: Option<&TokenCodec>,
    prf: &mut P,
    rng: &mut R,
) -> Result<Vec<TokenId>> {
    let bm = Binarized::new(model, codec)?;
    Ok(match cfg.scheme {
        SchemeId::Complete => wat_complete_with(prf, cfg.lambda, &bm, b"", rng, &[])?.tokens,
        _ => wat_substring_with(prf, cfg.lambda, &bm, b"", rng, &[])?.tokens,
    })
}

fn plain_samples(model: &SyntheticModel, seed: u64, n: u64, deadline: &Deadline) -> Result<Vec<Vec<TokenId>>> {
    par_trials(n, deadline, |i| Ok(sample_response(model, b"", &mut trial_rng(seed, PLAIN_STREAM + i))?.tokens))
}

/// Per-position two-sample chi-square over the alphabet plus "ended".
/// Adds the `per_position_chi_square` check and returns every test.
fn position_battery(out: &mut TrialOutcome, a: &[Vec<TokenId>], b: &[Vec<TokenId>], alphabet: usize) -> Vec<ChiSquare> {
    let len = a.iter().chain(b).map(Vec::len).max().unwrap_or(0);
    let counts = |set: &[Vec<TokenId>], pos: usize| {
        let mut c = vec![0u64; alphabet + 1];
        for r in set {
            c[r.get(pos).map_or(alphabet, |t| t.index())] += 1;
        }
        c
    };
    let tests: Vec<ChiSquare> = (0..len).map(|pos| chi_square_two_sample(&counts(a, pos), &counts(b, pos))).collect();
    let (worst, min_p) = tests
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, c.p_value))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap_or((0, 1.0));
    out.metric("positions_tested", tests.len() as f64);
    out.metric("min_position_p", min_p);
    out.check(
        "per_position_chi_square",
        min_p > P_FLOOR,
        format!("smallest p-value {min_p:.4} at position {worst} over {} positions", tests.len()),
    );
    tests
}

/// Whole-response comparison for models with few outcomes: a two-sample
/// chi-square, and a 4σ band around each outcome's exact probability.
/// Skipped unless every observed response has an expected count of at
/// least five, where neither approximation means anything.
fn histogram_battery(
    out: &mut TrialOutcome,
    model: &SyntheticModel,
    marked: &[Vec<TokenId>],
    plain: &[Vec<TokenId>],
    max_outcomes: usize,
) -> Result<()> {
    let mut table: HashMap<&[TokenId], (u64, u64)> = HashMap::new();
    for r in marked {
        table.entry(r).or_default().0 += 1;
    }
    for r in plain {
        table.entry(r).or_default().1 += 1;
    }
    out.metric("distinct_responses", table.len() as f64);
    if table.len() > max_outcomes {
        return Ok(());
    }
    let n = marked.len() as f64;
    let mut rows = Vec::with_capacity(table.len());
    for (tokens, counts) in table {
        let p = (-empirical_entropy(model, b"", tokens)?).exp2();
        if n * p < 5.0 {
            return Ok(());
        }
        rows.push((tokens, counts, p));
    }
    rows.sort_by(|a, b| a.0.cmp(b.0));
    let a: Vec<u64> = rows.iter().map(|r| r.1 .0).collect();
    let b: Vec<u64> = rows.iter().map(|r| r.1 .1).collect();
    let chi = chi_square_two_sample(&a, &b);
    out.metric("histogram_p", chi.p_value);
    out.check(
        "histogram_chi_square",
        chi.p_value > P_FLOOR,
        format!("chi-square {:.2} on {} dof, p = {:.4}", chi.statistic, chi.dof, chi.p_value),
    );
    let worst = rows
        .iter()
        .map(|(_, (count, _), p)| {
            let sigma = (n * p * (1.0 - p)).sqrt();
            let dev = (*count as f64 - n * p).abs();
            if sigma > 0.0 {
                dev / sigma
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    out.metric("histogram_max_sigma", worst);
    out.check(
        "histogram_within_4sigma",
        worst <= 4.0,
        format!("largest deviation of a watermarked outcome count from its exact expectation: {worst:.2} sigma"),
    );
    Ok(())
}

/// Fraction of responses that are just `done`, against the model's probability.
fn done_rate_check(out: &mut TrialOutcome, model: &SyntheticModel, marked: &[Vec<TokenId>]) {
    let done = model.done_id();
    let p = model.next_dist(b"", &[]).prob(done);
    if p <= 0.0 || p >= 1.0 {
        return;
    }
    let n = marked.len() as u64;
    let hits = marked.iter().filter(|r| r.as_slice() == [done]).count() as u64;
    let rate = hits as f64 / n as f64;
    let (lo, hi) = crate::stats::binomial_band(p, n, 4.0);
    out.metric("done_only_rate", rate);
    out.check(
        "done_only_rate_within_4sigma",
        (lo..=hi).contains(&rate),
        format!("{hits} of {n} watermarked responses are just done (rate {rate:.4}, band [{lo:.4}, {hi:.4}])"),
    );
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalConfig {
    pub scheme: SchemeId,
    #[serde(flatten)]
    pub setup: ModelSetup,
    pub lambda: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<u32>,
    pub trials: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[serde(default)]
    pub mode: OracleMode,
    #[serde(default = "default_one")]
    pub stride: usize,
    /// Compare attacked outputs with plain samples position by position.
    #[serde(default = "default_true")]
    pub battery: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget_secs: Option<f64>,
}

fn default_true() -> bool {
    true
}

/// Attacks a fresh key per trial, detects the result under that key, and
/// compares attacked outputs with plain samples position by position.
pub fn run_removal(cfg: &RemovalConfig) -> Result<TrialOutcome> {
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let (model, codec) = cfg.setup.build(b"")?;
    let max_len = cfg.max_len.unwrap_or(model.max_len());
    let deadline = Deadline::new(cfg.time_budget_secs);
    let results = par_trials(cfg.trials, &deadline, |t| {
        let mut rng = trial_rng(cfg.seed, t);
        let sk: SecretKey = setup(cfg.lambda, cfg.scheme, cfg.b, &mut rng)?;
        let mut oracle = WatermarkOracle::new(&sk, &model, codec.as_ref(), cfg.mode, rng);
        let (tokens, stats) = resample_attack(&mut oracle, b"", max_len)?;
        let report = or_too_short(detect_tokens(&sk, &tokens, codec.as_ref(), cfg.stride))?;
        Ok((tokens, stats, report))
    })?;
    let ran = results.len() as u64;
    let hits = results.iter().filter(|r| r.2.verdict).count() as u64;
    let mut out = TrialOutcome::new("removal", hits, ran);
    out.margins = results.iter().filter_map(|r| r.2.margin).collect();
    let honest = results.iter().all(|r| r.1.queries == r.1.output_length && r.1.output_length == r.0.len() as u64);
    let queries: u64 = results.iter().map(|r| r.1.queries).sum();
    out.metric("total_queries", queries as f64);
    out.check("queries_equal_output_length", honest, format!("{queries} queries over {ran} attacks"));
    out.check("no_detections", hits == 0, format!("{hits} of {ran} attacked outputs detected"));
    if cfg.battery {
        let attacked: Vec<Vec<TokenId>> = results.into_iter().map(|r| r.0).collect();
        let plain = plain_samples(&model, cfg.seed, ran, &Deadline::new(None))?;
        position_battery(&mut out, &attacked, &plain, model.alphabet_size());
    }
    finish(&mut out, &deadline, ran, cfg.trials);
    Ok(out)
}
