//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs everything; pass criterion numbers
//! (`cargo test --test acceptance -- 3 11`) to run a subset.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use entmark::codec::{fixed_width, TokenCodec};
use entmark::experiments::{run, TrialConfig, TrialOutcome};
use entmark::model::TokenId;
use entmark::prf::{prf_unit, SchemeId, SecretKey};

struct Verdict {
    pass: bool,
    lines: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Verdict { pass: true, lines: Vec::new() }
    }

    fn require(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {what}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, what: String) {
        self.lines.push(format!("     {what}"));
    }

    /// Every check of `out` must hold and the run must finish, within `limit` seconds if finite.
    fn outcome(&mut self, label: &str, out: &TrialOutcome, limit: f64) {
        for c in &out.checks {
            self.require(c.passed, format!("{label}: {} ({})", c.name, c.detail));
        }
        if !out.completed {
            self.require(false, format!("{label}: stopped by its time budget before finishing"));
        }
        if limit.is_finite() {
            self.require(
                out.wall_time_secs <= limit,
                format!("{label}: {:.1} s of {limit} s allowed", out.wall_time_secs),
            );
        }
        for w in &out.warnings {
            self.note(format!("{label}: {w}"));
        }
    }
}

fn preset(name: &str) -> TrialOutcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(format!("{name}.json"));
    let cfg = TrialConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
    run(&cfg).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn metric(out: &TrialOutcome, name: &str) -> f64 {
    out.metrics.get(name).copied().unwrap_or(f64::NAN)
}

fn soundness() -> Verdict {
    let mut v = Verdict::new();
    let out = preset("soundness_complete");
    v.outcome("complete λ=16, 10^4 texts", &out, 60.0);
    let upper = metric(&out, "wilson_upper_one_sided_99");
    v.require(upper < 6e-4, format!("one-sided 99% Wilson upper bound {upper:.3e} < 6e-4"));
    v.note(format!("two-sided 99% Wilson interval ({:.3e}, {:.3e})", out.wilson_interval.0, out.wilson_interval.1));
    v
}

fn substring_soundness() -> Verdict {
    let mut v = Verdict::new();
    let out = preset("soundness_substring");
    v.outcome("substring λ=24, 512-bit texts", &out, 600.0);
    if let Some(p) = out.metrics.get("projected_secs") {
        v.note(format!("projected time for all {} texts: {p:.0} s", 1000));
    }
    v
}

fn completeness() -> Verdict {
    let mut v = Verdict::new();
    let out = preset("completeness_complete");
    v.outcome("complete on uniform(4096), λ=8", &out, 300.0);
    let m = metric(&out, "seed_match_rate");
    v.require(m >= 0.95, format!("winning candidate is the ledger seed in {:.1}% of detections (need 95%)", 100.0 * m));
    v
}

fn substring_completeness() -> Verdict {
    let mut v = Verdict::new();
    let out = preset("completeness_substring");
    v.outcome("substring on uniform(2048), window [513..1536]", &out, 600.0);
    v.note(format!("true seed block alone passes in {:.1}% of windows", 100.0 * metric(&out, "true_seed_pass_rate")));
    v
}

fn undetectability() -> Verdict {
    let mut v = Verdict::new();
    let out = preset("undetectability_bernoulli");
    v.outcome("bernoulli(0.3, 64), fresh keys", &out, f64::INFINITY);
    let out = preset("undetectability_uniform4");
    v.require(out.get_check("histogram_within_4sigma").is_some(), "uniform(4) histogram battery ran".into());
    v.outcome("uniform(4), 16-outcome histogram", &out, f64::INFINITY);
    let out = preset("undetectability_oracle");
    v.outcome("bernoulli(0.3, 64), random-oracle PRF", &out, f64::INFINITY);
    let out = preset("undetectability_fixed_key");
    v.outcome("bernoulli(0.3, 64), one fixed key", &out, f64::INFINITY);
    v
}

fn simple_scheme() -> Verdict {
    let mut v = Verdict::new();
    for b in [4, 10] {
        v.outcome(&format!("false positives at b={b}"), &preset(&format!("soundness_simple_b{b}")), f64::INFINITY);
    }
    for b in [1, 2, 4] {
        v.outcome(&format!("model calls at b={b}"), &preset(&format!("simple_calls_b{b}")), f64::INFINITY);
    }
    v
}

fn concentration() -> Verdict {
    let mut v = Verdict::new();
    let out = preset("concentration");
    v.require(out.checks.len() == 16, format!("{} grid cells checked", out.checks.len()));
    v.outcome("tails", &out, f64::INFINITY);
    v
}

fn removal() -> Verdict {
    let mut v = Verdict::new();
    v.outcome("uniform(1024), λ=8, 200 attacks", &preset("removal_uniform"), f64::INFINITY);
    v.outcome("bernoulli(0.3, 64), attacked distribution", &preset("removal_bernoulli"), f64::INFINITY);
    v
}

fn mixture() -> Verdict {
    let mut v = Verdict::new();
    let out = preset("mixture_necessity");
    v.outcome("ε=0.25", &out, f64::INFINITY);
    v.note(format!(
        "detected fraction {:.4}; inside the high-entropy branch {:.3}",
        out.rate,
        metric(&out, "in_branch_detection_rate")
    ));
    v
}

fn toy_distinguisher() -> Verdict {
    let mut v = Verdict::new();
    let show = |v: &mut Verdict, label: &str, out: &TrialOutcome| {
        v.note(format!(
            "{label}: advantage {:.2} over {} games, {} detector calls",
            metric(out, "advantage"),
            metric(out, "games_completed"),
            metric(out, "detect_calls")
        ));
        if let Some(p) = out.metrics.get("projected_secs") {
            v.note(format!("{label}: projected {p:.0} s for all games"));
        }
    };
    let main = preset("toy_distinguisher");
    show(&mut v, "10-bit keys", &main);
    v.outcome("10-bit keys, advantage ≥ 0.9", &main, f64::INFINITY);
    let control = preset("toy_distinguisher_control");
    show(&mut v, "10-bit control", &control);
    v.outcome("10-bit control, |advantage| < 0.1", &control, f64::INFINITY);

    // Same mechanism at a size that finishes, reported but not scored.
    for (control, seed) in [(false, 21), (true, 22)] {
        let json = format!(
            r#"{{"experiment": "toy_distinguisher", "key_bits": 6, "model": {{"kind": "uniform", "len": 256}},
                "lambda": 6, "samples": 20, "games": 20, "seed": {seed}, "control": {control}}}"#
        );
        let out = run(&serde_json::from_str(&json).unwrap()).unwrap();
        show(&mut v, if control { "6-bit control (diagnostic)" } else { "6-bit keys (diagnostic)" }, &out);
    }
    v
}

fn codec() -> Verdict {
    let mut v = Verdict::new();
    let r = common::codec_sweep(6);
    v.require(
        r.worst_error < 1e-12,
        format!("{} models, {} outcomes: worst per-outcome mass error {:.2e}", r.models, r.outcomes, r.worst_error),
    );
    let c = TokenCodec::fixed(100_277, TokenId(0)).unwrap();
    v.require(fixed_width(100_277) == 17 && c.width() == Some(17), format!("100,277 tokens: width {:?}", c.width()));
    v
}

fn bit_exactness() -> Verdict {
    let mut v = Verdict::new();
    let mut reader =
        csv::Reader::from_path(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/prf_golden.csv")).unwrap();
    let (mut rows, mut bad) = (0, 0);
    for rec in reader.records() {
        let rec = rec.unwrap();
        let key: [u8; 32] = hex::decode(&rec[0]).unwrap().try_into().unwrap();
        let sk = SecretKey::from_bytes(key, 16, SchemeId::Complete, None).unwrap();
        let seed: Vec<bool> = rec[1].chars().map(|c| c == '1').collect();
        let z: u64 = rec[3].parse().unwrap();
        rows += 1;
        bad += usize::from(prf_unit(&sk, &seed, rec[2].parse().unwrap()).z() != z);
    }
    v.require(rows >= 32 && bad == 0, format!("{} of {rows} golden vectors match", rows - bad));

    let dir = tempfile::tempdir().unwrap();
    let (key, model, text) = (dir.path().join("key.json"), dir.path().join("model.json"), dir.path().join("text.json"));
    std::fs::write(&model, r#"{"kind": "uniform", "len": 1024}"#).unwrap();
    let cli = |args: &[&Path]| -> Option<i32> {
        let args: Vec<&std::ffi::OsStr> = args.iter().map(|a| a.as_os_str()).collect();
        Command::new(env!("CARGO_BIN_EXE_entmark")).args(args).env_remove("ENTMARK_SEED").output().ok()?.status.code()
    };
    let p = |s: &'static str| Path::new(s);
    let keygen = cli(&[p("keygen"), p("--scheme"), p("complete"), p("--lambda"), p("8"), p("--out"), &key]);
    let gen = cli(&[p("generate"), p("--key"), &key, p("--model"), &model, p("--out"), &text]);
    let det = cli(&[p("detect"), p("--key"), &key, p("--in"), &text]);
    v.require(
        keygen == Some(0) && gen == Some(0) && det == Some(0),
        format!("keygen, generate, detect as separate processes exit {keygen:?}, {gen:?}, {det:?}"),
    );
    v
}

type Criterion = fn() -> Verdict;

fn main() {
    let criteria: [(&str, Criterion); 12] = [
        ("soundness of the complete detector", soundness),
        ("soundness of the substring detector", substring_soundness),
        ("completeness", completeness),
        ("substring completeness", substring_completeness),
        ("undetectability", undetectability),
        ("simple scheme rates", simple_scheme),
        ("concentration of scores", concentration),
        ("removal attack", removal),
        ("mixture necessity", mixture),
        ("toy exhaustive distinguisher", toy_distinguisher),
        ("codec equivalence", codec),
        ("bit-exactness", bit_exactness),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let v = f();
        for line in &v.lines {
            println!("    {line}");
        }
        println!("{} {n:>2} {name} ({:.1} s)", if v.pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
        failed += usize::from(!v.pass);
    }
    println!("{failed} criteria failed");
}
