//! The `entmark` command line. Reports go to stdout as JSON, human summaries
//! to stderr. Exit codes: 0 detected (or success), 1 not detected (or an
//! experiment check failed), 2 any error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{resample_attack, OracleMode, WatermarkOracle};
use crate::codec::{CodecKind, TokenCodec};
use crate::experiments::{self, TrialConfig};
use crate::interchange::{LedgerSummary, Text, TextFile};
use crate::model::{make_synthetic_model, train_ngram, Alphabet, ModelKind, SyntheticModelSpec, TokenModel};
use crate::prf::{setup, SchemeId, SecretKey};
use crate::scheme::{detect_bits, detect_tokens, generate};

/// Environment variable that overrides `--seed`.
pub const SEED_ENV: &str = "ENTMARK_SEED";

#[derive(Parser, Debug)]
#[command(name = "entmark", version, about = "Undetectable watermarks for language model output")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a new key.
    Keygen {
        #[arg(long)]
        scheme: SchemeId,
        #[arg(long)]
        lambda: u32,
        /// Tag length, simple scheme only.
        #[arg(long)]
        b: Option<u32>,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing key file.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build a token codec for a model.
    Codec {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "fixed_width")]
        kind: CodecKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a watermarked response.
    Generate {
        #[arg(long)]
        key: PathBuf,
        /// Model spec JSON.
        #[arg(long)]
        model: PathBuf,
        /// Prompt text, or `@path` to read it from a file.
        #[arg(long, default_value = "")]
        prompt: String,
        #[arg(long)]
        codec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Detect the watermark in a text file.
    Detect {
        #[arg(long)]
        key: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Overrides the text's `codec_ref`.
        #[arg(long)]
        codec: Option<PathBuf>,
        /// Seed-length stride for the substring detector.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Strip the watermark with one prefix query per output token.
    Attack {
        /// JSON naming the key, model, optional codec and oracle mode.
        #[arg(long)]
        key_oracle_config: PathBuf,
        #[arg(long, default_value = "")]
        prompt: String,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an experiment config and print its outcome.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Write per-trial margins here.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit an n-gram model to a corpus.
    TrainNgram {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        order: u8,
        /// Alphabet bytes; defaults to the bytes in the corpus.
        #[arg(long)]
        alphabet: Option<String>,
        /// Binary table output.
        #[arg(long)]
        table: PathBuf,
        /// Model spec output, referring to the table.
        #[arg(long)]
        out: PathBuf,
    },
}

/// What `attack --key-oracle-config` points at.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleConfig {
    pub key: PathBuf,
    pub model: ModelRef,
    #[serde(default)]
    pub codec: Option<PathBuf>,
    #[serde(default)]
    pub mode: OracleMode,
}

/// A model spec given inline or by path.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Path(PathBuf),
    Inline(SyntheticModelSpec),
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    dispatch(cli.command).unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        2
    })
}

fn dispatch(cmd: Command) -> anyhow::Result<i32> {
    match cmd {
        Command::Keygen { scheme, lambda, b, out, force, seed } => keygen(scheme, lambda, b, &out, force, seed),
        Command::Codec { model, kind, out } => codec(&model, kind, &out),
        Command::Generate { key, model, prompt, codec, out, seed } => {
            generate_cmd(&key, &model, &prompt, codec.as_deref(), out.as_deref(), seed)
        }
        Command::Detect { key, input, codec, stride } => detect(&key, &input, codec.as_deref(), stride),
        Command::Attack { key_oracle_config, prompt, max_len, out, seed } => {
            attack(&key_oracle_config, &prompt, max_len, out.as_deref(), seed)
        }
        Command::Experiment { config, csv, out, jobs, seed } => {
            experiment(&config, csv.as_deref(), out.as_deref(), jobs, seed)
        }
        Command::TrainNgram { corpus, order, alphabet, table, out } => {
            train(&corpus, order, alphabet.as_deref(), &table, &out)
        }
    }
}

/// `ENTMARK_SEED` if set, else `--seed`, else OS entropy.
fn resolve_seed(flag: Option<u64>) -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not a u64"))?)),
        Err(_) => Ok(flag),
    }
}

fn rng_for(flag: Option<u64>) -> anyhow::Result<ChaCha20Rng> {
    Ok(match resolve_seed(flag)? {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_os_rng(),
    })
}

fn read_prompt(arg: &str) -> anyhow::Result<Vec<u8>> {
    match arg.strip_prefix('@') {
        Some(path) => std::fs::read(path).with_context(|| format!("reading prompt file {path}")),
        None => Ok(arg.as_bytes().to_vec()),
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serialization cannot fail"));
}

fn write_text(file: &TextFile, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, file.to_json() + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{}", file.to_json()),
    }
    Ok(())
}

fn keygen(
    scheme: SchemeId,
    lambda: u32,
    b: Option<u32>,
    out: &Path,
    force: bool,
    seed: Option<u64>,
) -> anyhow::Result<i32> {
    if out.exists() && !force {
        eprintln!("error: {} exists; pass --force to overwrite", out.display());
        return Ok(2);
    }
    let sk = setup(lambda, scheme, b, &mut rng_for(seed)?)?;
    sk.save(out)?;
    eprintln!("wrote {scheme} key (lambda {lambda}) to {}, fingerprint {}", out.display(), sk.fingerprint());
    print_json(&serde_json::json!({ "fingerprint": sk.fingerprint(), "path": out }));
    Ok(0)
}

fn codec(model: &Path, kind: CodecKind, out: &Path) -> anyhow::Result<i32> {
    let m = make_synthetic_model(&SyntheticModelSpec::load(model)?)?;
    let freqs = (kind == CodecKind::Huffman).then(|| m.next_dist(b"", &[]).probs().to_vec());
    let c = TokenCodec::build(m.alphabet_size(), m.done_id(), kind, freqs.as_deref())?;
    c.save(out)?;
    eprintln!("wrote {kind:?} codec for {} tokens to {}", m.alphabet_size(), out.display());
    Ok(0)
}

fn generate_cmd(
    key: &Path,
    model: &Path,
    prompt: &str,
    codec: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
) -> anyhow::Result<i32> {
    let sk = SecretKey::load(key).with_context(|| format!("loading key {}", key.display()))?;
    let m = make_synthetic_model(&SyntheticModelSpec::load(model)?)?;
    let c = codec.map(TokenCodec::load).transpose()?;
    let prompt = read_prompt(prompt)?;
    let w = generate(&sk, &m, c.as_ref(), &prompt, &mut rng_for(seed)?)?;
    let file = TextFile::from_watermarked(&w, codec.map(|p| p.display().to_string()));
    eprintln!(
        "{} tokens, H_e {:.1} bits{}",
        w.tokens().len(),
        w.entropy(),
        if w.truncated() { ", truncated" } else { "" }
    );
    write_text(&file, out)?;
    Ok(0)
}

fn detect(key: &Path, input: &Path, codec: Option<&Path>, stride: usize) -> anyhow::Result<i32> {
    let sk = SecretKey::load(key).with_context(|| format!("loading key {}", key.display()))?;
    let file = TextFile::read(input).with_context(|| format!("reading {}", input.display()))?;
    let c = match codec {
        Some(p) => Some(TokenCodec::load(p)?),
        None => file.load_codec(input.parent())?,
    };
    let mut report = match file.text()? {
        Text::Tokens(t) => detect_tokens(&sk, &t, c.as_ref(), stride)?,
        Text::Bits(b) => {
            if sk.scheme() == SchemeId::Simple {
                bail!("the simple scheme detects token ids, not bit strings");
            }
            detect_bits(&sk, &b, stride)?
        }
    };
    report.truncated = file.truncated;
    eprintln!(
        "{} (margin {}, {} candidates, {} PRF evaluations)",
        if report.verdict { "watermarked" } else { "not watermarked" },
        report.margin.map_or("n/a".into(), |m| format!("{m:.2}")),
        report.candidates_scanned,
        report.prf_evaluations
    );
    print_json(&report);
    Ok(if report.verdict { 0 } else { 1 })
}

fn attack(
    config: &Path,
    prompt: &str,
    max_len: Option<usize>,
    out: Option<&Path>,
    seed: Option<u64>,
) -> anyhow::Result<i32> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: OracleConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    let base = config.parent().unwrap_or(Path::new(""));
    let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
    let sk = SecretKey::load(&resolve(&cfg.key))?;
    let spec = match &cfg.model {
        ModelRef::Path(p) => SyntheticModelSpec::load(&resolve(p))?,
        ModelRef::Inline(s) => s.clone(),
    };
    let m = make_synthetic_model(&spec)?;
    let codec_path = cfg.codec.as_deref().map(resolve);
    let c = codec_path.as_deref().map(TokenCodec::load).transpose()?;
    let prompt = read_prompt(prompt)?;
    let limit = max_len.unwrap_or(m.max_len());
    let mut oracle = WatermarkOracle::new(&sk, &m, c.as_ref(), cfg.mode, rng_for(seed)?);
    let (tokens, stats) = resample_attack(&mut oracle, &prompt, limit)?;
    let mut file = TextFile::from_tokens(&tokens, codec_path.map(|p| p.display().to_string()), stats.truncated);
    file.ledger = Some(LedgerSummary::Attack { queries: stats.queries });
    eprintln!("{} tokens from {} oracle queries", stats.output_length, stats.queries);
    write_text(&file, out)?;
    Ok(0)
}

fn experiment(
    config: &Path,
    csv: Option<&Path>,
    out: Option<&Path>,
    jobs: Option<usize>,
    seed: Option<u64>,
) -> anyhow::Result<i32> {
    let mut cfg = TrialConfig::load(config)?;
    if let Some(s) = resolve_seed(seed)? {
        cfg.set_seed(s);
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| anyhow!("thread pool: {e}"))?;
    let outcome = pool.install(|| experiments::run(&cfg))?;
    for c in &outcome.checks {
        eprintln!("[{}] {}: {}", if c.passed { "ok" } else { "FAILED" }, c.name, c.detail);
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(p) = csv {
        outcome.write_margins_csv(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)?;
    }
    if let Some(p) = out {
        std::fs::write(p, outcome.to_json() + "\n")?;
    }
    println!("{}", outcome.to_json());
    Ok(if outcome.passed() { 0 } else { 1 })
}

fn train(corpus: &Path, order: u8, alphabet: Option<&str>, table: &Path, out: &Path) -> anyhow::Result<i32> {
    let bytes = std::fs::read(corpus).with_context(|| format!("reading {}", corpus.display()))?;
    let alpha = match alphabet {
        Some(a) => Alphabet::new(a.as_bytes().to_vec())?,
        None => Alphabet::from_corpus(&bytes)?,
    };
    let mut spec = train_ngram(&bytes, order, &alpha)?;
    if let ModelKind::Ngram { table: t, table_file, .. } = &mut spec.kind {
        t.take().expect("training fills the table").write_file(table)?;
        // Refer to the table relative to the spec when they share a directory.
        let same_dir = table.parent() == out.parent();
        *table_file = Some(if same_dir {
            PathBuf::from(table.file_name().expect("table path has a name"))
        } else {
            std::fs::canonicalize(table)?
        });
    }
    std::fs::write(out, spec.to_json() + "\n")?;
    eprintln!(
        "order-{order} model over {} symbols; table {}, spec {}",
        alpha.size() - 1,
        table.display(),
        out.display()
    );
    Ok(0)
}
