//! Monte Carlo batteries for soundness, completeness, undetectability and
//! the necessity results, with JSON configs and outcomes.
//!
//! Every trial draws from its own ChaCha20 stream (`seed`, trial index), so
//! an outcome depends only on its config, never on thread count or order.
//! Rates come with two-sided 99% Wilson intervals; bands are 4σ.

mod calls;
mod completeness;
mod concentration;
mod necessity;
mod soundness;
mod undetectability;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{CodecKind, TokenCodec};
use crate::error::{Error, Result};
use crate::model::{make_synthetic_model, SyntheticModel, SyntheticModelSpec, TokenModel};
use crate::stats::{wilson_interval, Z_99};

pub use calls::{run_simple_calls, SimpleCallsConfig};
pub use completeness::{run_completeness, CompletenessConfig, Regime};
pub use concentration::{run_concentration, ConcentrationConfig};
pub use necessity::{run_mixture_necessity, toy_distinguisher, toy_key, MixtureConfig, ToyConfig};
pub use soundness::{run_soundness, SoundnessConfig, TextSource};
pub use undetectability::{run_removal, run_undetectability, KeyMode, PrfMode, RemovalConfig, UndetectabilityConfig};

/// One experiment, selected by the `experiment` field of its JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum TrialConfig {
    Soundness(SoundnessConfig),
    Completeness(CompletenessConfig),
    Undetectability(UndetectabilityConfig),
    Removal(RemovalConfig),
    SimpleCalls(SimpleCallsConfig),
    MixtureNecessity(MixtureConfig),
    ToyDistinguisher(ToyConfig),
    Concentration(ConcentrationConfig),
}

impl TrialConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            TrialConfig::Soundness(c) => c.seed = seed,
            TrialConfig::Completeness(c) => c.seed = seed,
            TrialConfig::Undetectability(c) => c.seed = seed,
            TrialConfig::Removal(c) => c.seed = seed,
            TrialConfig::SimpleCalls(c) => c.seed = seed,
            TrialConfig::MixtureNecessity(c) => c.seed = seed,
            TrialConfig::ToyDistinguisher(c) => c.seed = seed,
            TrialConfig::Concentration(c) => c.seed = seed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrialConfig::Soundness(_) => "soundness",
            TrialConfig::Completeness(_) => "completeness",
            TrialConfig::Undetectability(_) => "undetectability",
            TrialConfig::Removal(_) => "removal",
            TrialConfig::SimpleCalls(_) => "simple_calls",
            TrialConfig::MixtureNecessity(_) => "mixture_necessity",
            TrialConfig::ToyDistinguisher(_) => "toy_distinguisher",
            TrialConfig::Concentration(_) => "concentration",
        }
    }
}

/// Runs any experiment on the current rayon pool.
pub fn run(cfg: &TrialConfig) -> Result<TrialOutcome> {
    match cfg {
        TrialConfig::Soundness(c) => run_soundness(c),
        TrialConfig::Completeness(c) => run_completeness(c),
        TrialConfig::Undetectability(c) => run_undetectability(c),
        TrialConfig::Removal(c) => run_removal(c),
        TrialConfig::SimpleCalls(c) => run_simple_calls(c),
        TrialConfig::MixtureNecessity(c) => run_mixture_necessity(c),
        TrialConfig::ToyDistinguisher(c) => toy_distinguisher(c),
        TrialConfig::Concentration(c) => run_concentration(c),
    }
}

/// A named pass/fail assertion with the numbers behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub experiment: String,
    /// Trials in the rate's denominator.
    pub trials: u64,
    pub successes: u64,
    pub rate: f64,
    /// Two-sided 99% Wilson interval for `rate`.
    pub wilson_interval: (f64, f64),
    pub confidence: String,
    /// Per-trial detector margins, in trial order, where the experiment has them.
    pub margins: Vec<f64>,
    pub wall_time_secs: f64,
    /// False when a time budget stopped the run early.
    pub completed: bool,
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl TrialOutcome {
    pub(crate) fn new(experiment: &str, successes: u64, trials: u64) -> Self {
        let rate = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        TrialOutcome {
            experiment: experiment.into(),
            trials,
            successes,
            rate,
            wilson_interval: wilson_interval(successes, trials, Z_99),
            confidence: "Wilson 99% (two-sided) for rates; 4-sigma bands; p-value floor 0.001".into(),
            margins: Vec::new(),
            wall_time_secs: 0.0,
            completed: true,
            checks: Vec::new(),
            metrics: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub(crate) fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.into(), passed, detail });
    }

    pub(crate) fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn get_check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// All checks passed and the run was not cut short.
    pub fn passed(&self) -> bool {
        self.completed && self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serialization cannot fail")
    }

    /// Writes `trial,margin` rows.
    pub fn write_margins_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["trial", "margin"]).map_err(csv_err)?;
        for (i, m) in self.margins.iter().enumerate() {
            out.write_record([i.to_string(), m.to_string()]).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// A model plus the codec its bits go through.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSetup {
    pub model: SyntheticModelSpec,
    /// Codec for non-bit alphabets. Huffman codes are built from the
    /// model's first-step distribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codec: Option<CodecKind>,
}

impl ModelSetup {
    pub fn new(model: SyntheticModelSpec, codec: Option<CodecKind>) -> Self {
        ModelSetup { model, codec }
    }

    pub fn build(&self, prompt: &[u8]) -> Result<(SyntheticModel, Option<TokenCodec>)> {
        let model = make_synthetic_model(&self.model)?;
        let codec = match self.codec {
            None => None,
            Some(kind) => {
                let freqs = match kind {
                    CodecKind::Huffman => Some(model.next_dist(prompt, &[]).probs().to_vec()),
                    CodecKind::FixedWidth => None,
                };
                Some(TokenCodec::build(model.alphabet_size(), model.done_id(), kind, freqs.as_deref())?)
            }
        };
        Ok((model, codec))
    }
}

/// The RNG for trial `index` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Stops trials once a wall-clock budget is spent.
#[derive(Clone, Copy)]
pub(crate) struct Deadline {
    start: Instant,
    limit: Option<Duration>,
}

impl Deadline {
    pub(crate) fn new(budget_secs: Option<f64>) -> Self {
        Deadline { start: Instant::now(), limit: budget_secs.map(Duration::from_secs_f64) }
    }

    pub(crate) fn expired(&self) -> bool {
        self.limit.is_some_and(|l| self.start.elapsed() >= l)
    }

    pub(crate) fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// Marks `out` incomplete when fewer than `planned` trials ran, recording
/// the projected time for the whole run.
pub(crate) fn finish(out: &mut TrialOutcome, deadline: &Deadline, ran: u64, planned: u64) {
    out.wall_time_secs = deadline.elapsed();
    out.metric("trials_planned", planned as f64);
    out.metric("trials_run", ran as f64);
    if ran < planned {
        out.completed = false;
        if ran == 0 {
            out.warnings.push(format!("time budget spent before any of {planned} trials finished"));
            return;
        }
        let projected = out.wall_time_secs * planned as f64 / ran as f64;
        out.metric("projected_secs", projected);
        out.warnings
            .push(format!("time budget spent after {ran} of {planned} trials; full run projected at {projected:.0} s"));
    }
}

/// Runs `f` for each trial index in parallel, skipping those that would
/// start after the deadline. Results come back in trial order.
pub(crate) fn par_trials<T, F>(trials: u64, deadline: &Deadline, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let results: Vec<Option<Result<T>>> =
        (0..trials).into_par_iter().map(|t| (!deadline.expired()).then(|| f(t))).collect();
    results.into_iter().flatten().collect()
}

fn default_one() -> usize {
    1
}
