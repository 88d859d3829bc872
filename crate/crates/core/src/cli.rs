//! The `lato` command line.
//!
//! Machine-readable JSON goes to stdout (or `--out`); `--pretty` switches
//! to a human-readable rendering. Exit codes: 0 on success, 1 for invalid
//! input or usage, 2 when a file cannot be read or written.
//!
//! Every flag a subcommand accepts shows up in its `--help`:
//!
//! ```
//! let cmd = lato::cli::command();
//! for sub in cmd.get_subcommands() {
//!     let help = sub.clone().render_long_help().to_string();
//!     for arg in sub.get_arguments() {
//!         if let Some(long) = arg.get_long() {
//!             assert!(help.contains(&format!("--{long}")), "{} lacks --{long}", sub.get_name());
//!         }
//!     }
//! }
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, CommandFactory, Parser, Subcommand};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::curation::{curate, read_gray, write_pgm, CurateOptions, CurationConfig};
use crate::error::{LatoError, Result};
use crate::fuser::{attention_cost, attention_forward, compare_cost, AttentionBlockParams, SequenceLengths, TokenSequence};
use crate::instruction::EditInstruction;
use crate::kinematics::{predict_landmarks, synthesize};
use crate::landmarks::{parse_landmarks, serialize_landmarks, LandmarkSet};
use crate::metrics::{evaluate, rectified_ip, EvalConfig, IpInputs};
use crate::posenc::{image_positions, landmark_positions, text_positions, PositionTriple, RopeLayout};
use crate::scoring::ScorerSuite;
use crate::tokenizer::{codebook_stats, evaluate_tokenizer, train_with, TokenizerConfig, TokenizerModel};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 0;

/// Environment variable naming a config file when `--config` is absent.
pub const CONFIG_ENV: &str = "LATO_CONFIG";

/// Settings file shared by all subcommands; each reads its own section.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatoConfig {
    pub tokenizer: TokenizerConfig,
    pub curation: CurationConfig,
    pub eval: EvalConfig,
}

impl LatoConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LatoError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Parser)]
#[command(name = "lato", version, about = "Landmark tokens for instruction-driven face editing")]
pub struct Cli {
    /// JSON settings file with optional `tokenizer`, `curation` and `eval` sections.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Human-readable output instead of JSON.
    #[arg(long, global = true)]
    pub pretty: bool,
    /// Worker threads for record-parallel subcommands.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a landmark tokenizer.
    TrainTokenizer(TrainArgs),
    /// Turn a landmark file into 68 codebook indices.
    Tokenize(TokenizeArgs),
    /// Turn codebook indices back into landmarks.
    Detokenize(DetokenizeArgs),
    /// Predict edited landmarks from an instruction, with a reasoning trace.
    Predict(PredictArgs),
    /// Print rotary positions of landmark, image or text tokens.
    Posenc(PosencArgs),
    /// Attention cost of the fused sequence against rendered conditioning.
    FuseBench(FuseBenchArgs),
    /// Filter a JSONL manifest of face pairs.
    Curate(CurateArgs),
    /// Rectified identity-preservation score for one sample.
    ScoreIp(ScoreIpArgs),
    /// Evaluate a JSONL manifest of edits.
    Eval(EvalArgs),
    /// Draw landmarks onto a grayscale image.
    Overlay(OverlayArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `gen:N` or `gen:N:SEED` for synthetic faces, or a JSONL file of landmark objects.
    #[arg(long, default_value = "gen:10000")]
    pub data: String,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the configured step count.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Override the configured residual block count.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Synthetic held-out faces to evaluate on afterwards (0 skips).
    #[arg(long, default_value_t = 1000)]
    pub eval: usize,
    /// Per-step loss log as JSONL.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub landmarks: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetokenizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSON with an `indices` array (as written by `tokenize`) or a bare array.
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub landmarks: PathBuf,
    #[arg(long)]
    pub instruction: String,
    /// Predicted landmarks; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reasoning trace as JSON.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PosencArgs {
    /// Landmark file whose points are mapped to grid cells.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// Pixels per latent cell.
    #[arg(long, default_value_t = 16)]
    pub stride: u32,
    /// Image-token grid as HxW, e.g. 32x32.
    #[arg(long)]
    pub grid: Option<String>,
    /// Number of text tokens.
    #[arg(long)]
    pub text: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FuseBenchArgs {
    /// Text tokens.
    #[arg(long, default_value_t = 77)]
    pub lt: usize,
    /// Source-image tokens.
    #[arg(long, default_value_t = 1024)]
    pub ls: usize,
    /// Landmark tokens.
    #[arg(long, default_value_t = 68)]
    pub lf: usize,
    /// Noise tokens.
    #[arg(long, default_value_t = 1024)]
    pub ln: usize,
    /// Tokens of the rendered landmark image; defaults to the noise length.
    #[arg(long)]
    pub rendered: Option<usize>,
    /// Also time one reference attention pass per layout at this model width.
    #[arg(long)]
    pub time_d_model: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Input manifest (JSONL).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output manifest (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// `mock`, `mock:SEED` or `http:URL`.
    #[arg(long, default_value = "mock")]
    pub scorers: String,
    /// Per-request timeout for remote scorers, in milliseconds.
    #[arg(long, default_value_t = 10_000)]
    pub timeout_ms: u64,
    /// Extra attempts after a failed remote call.
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
    /// Records per parallel batch.
    #[arg(long, default_value_t = 256)]
    pub chunk: usize,
}

#[derive(Debug, Args)]
pub struct ScoreIpArgs {
    #[arg(long)]
    pub sarc: f64,
    #[arg(long)]
    pub phi_ins: f64,
    #[arg(long)]
    pub phi_real: f64,
    #[arg(long, default_value_t = IpInputs::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = IpInputs::DEFAULT_EPSILON)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "mock")]
    pub scorers: String,
    #[arg(long, default_value_t = 10_000)]
    pub timeout_ms: u64,
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Output PGM.
    #[arg(long)]
    pub out: PathBuf,
    /// Dot radius in image pixels.
    #[arg(long, default_value_t = 2)]
    pub radius: u32,
    /// Gray level of the dots.
    #[arg(long, default_value_t = 255)]
    pub value: u8,
}

/// The parser, for introspection.
pub fn command() -> clap::Command {
    Cli::command()
}

/// Exit code for an error: 2 for file access, 1 for everything else.
pub fn exit_code(e: &LatoError) -> i32 {
    if e.is_io() {
        2
    } else {
        1
    }
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing results to `out` and diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs against the process arguments and standard streams.
pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

fn load_config(cli: &Cli) -> Result<LatoConfig> {
    match &cli.config {
        Some(p) => LatoConfig::load(p),
        None => Ok(LatoConfig::default()),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| LatoError::io(path, e))
}

fn read_landmarks(path: &Path) -> Result<LandmarkSet> {
    parse_landmarks(&read_text(path)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| LatoError::io(path, e))
}

fn to_json<T: Serialize>(v: &T, pretty: bool) -> Result<String> {
    Ok(if pretty { serde_json::to_string_pretty(v)? } else { serde_json::to_string(v)? })
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| LatoError::io("<stdout>", e))
}

/// Writes to `path` when given, else to `out`.
fn deliver(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, &format!("{text}\n")),
        None => emit(out, text),
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::TrainTokenizer(a) => train_cmd(cli, a, out),
        Command::Tokenize(a) => {
            let model = TokenizerModel::load(&a.model)?;
            let tokens = model.tokenize(&read_landmarks(&a.landmarks)?)?;
            deliver(out, a.out.as_deref(), &to_json(&json!({ "indices": tokens.indices }), cli.pretty)?)
        }
        Command::Detokenize(a) => {
            let model = TokenizerModel::load(&a.model)?;
            let v: Value = serde_json::from_str(&read_text(&a.tokens)?)?;
            let arr = v.get("indices").unwrap_or(&v);
            let indices: Vec<usize> = serde_json::from_value(arr.clone())?;
            let f = model.decode_indices(&indices)?;
            deliver(out, a.out.as_deref(), &serialize_landmarks(&f))
        }
        Command::Predict(a) => {
            let f = read_landmarks(&a.landmarks)?;
            let ins: EditInstruction = a.instruction.parse()?;
            let (pred, trace) = predict_landmarks(&f, &ins)?;
            if let Some(t) = &a.trace {
                write_text(t, &format!("{}\n", serde_json::to_string_pretty(&trace)?))?;
            }
            deliver(out, a.out.as_deref(), &serialize_landmarks(&pred))
        }
        Command::Posenc(a) => posenc_cmd(cli, a, out),
        Command::FuseBench(a) => fuse_bench_cmd(cli, a, out),
        Command::Curate(a) => {
            let cfg = load_config(cli)?.curation;
            let suite = ScorerSuite::from_spec(&a.scorers, cli.seed, Duration::from_millis(a.timeout_ms), a.retries)?;
            let input = BufReader::new(File::open(&a.input).map_err(|e| LatoError::io(&a.input, e))?);
            let output = BufWriter::new(File::create(&a.out).map_err(|e| LatoError::io(&a.out, e))?);
            let opts = CurateOptions {
                base_dir: parent_dir(&a.input),
                jobs: cli.jobs,
                chunk: a.chunk,
            };
            let summary = curate(input, output, &cfg, &suite, &opts)?;
            if cli.pretty {
                let mut text = format!(
                    "{} records: {} kept, {} rejected, {} quarantined, {} malformed\n",
                    summary.records, summary.kept, summary.rejected, summary.quarantined, summary.malformed
                );
                for s in &summary.stages {
                    text += &format!(
                        "  {:<10} entered {:>6}  passed {:>6}  rate {:.4}\n",
                        format!("{:?}", s.stage.expect("stage")).to_lowercase(),
                        s.entered,
                        s.passed,
                        s.pass_rate
                    );
                }
                emit(out, text.trim_end())
            } else {
                emit(out, &to_json(&summary, false)?)
            }
        }
        Command::ScoreIp(a) => {
            let r = rectified_ip(&IpInputs {
                s_arc: a.sarc,
                phi_ins: a.phi_ins,
                phi_real: a.phi_real,
                alpha: a.alpha,
                epsilon: a.epsilon,
            })?;
            if cli.pretty {
                let flag = if r.p_capped { " (penalty capped at 1)" } else { "" };
                emit(out, &format!("p = {:.4}\ns_rip = {:.4}{flag}", r.p, r.s_rip))
            } else {
                emit(out, &to_json(&r, false)?)
            }
        }
        Command::Eval(a) => {
            let cfg = load_config(cli)?.eval;
            let suite = ScorerSuite::from_spec(&a.scorers, cli.seed, Duration::from_millis(a.timeout_ms), a.retries)?;
            let input = BufReader::new(File::open(&a.input).map_err(|e| LatoError::io(&a.input, e))?);
            let report = evaluate(input, &suite, &cfg, &parent_dir(&a.input), cli.jobs)?;
            deliver(out, a.out.as_deref(), &to_json(&report, cli.pretty)?)
        }
        Command::Overlay(a) => {
            let img = read_gray(&a.image)?;
            let f = read_landmarks(&a.landmarks)?;
            write_pgm(&a.out, &overlay(&img, &f, a.radius, a.value))
        }
    }
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Draws a filled dot per landmark, scaling canvas coordinates to the
/// image size.
pub fn overlay(img: &Array2<u8>, f: &LandmarkSet, radius: u32, value: u8) -> Array2<u8> {
    let mut out = img.clone();
    let (h, w) = img.dim();
    let c = f.canvas();
    let (sx, sy) = (w as f64 / c.width as f64, h as f64 / c.height as f64);
    let r = radius as i64;
    for p in f.points() {
        let (cx, cy) = ((p[0] * sx).round() as i64, (p[1] * sy).round() as i64);
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (cx + dx, cy + dy);
                if dx * dx + dy * dy <= r * r && (0..w as i64).contains(&x) && (0..h as i64).contains(&y) {
                    out[[y as usize, x as usize]] = value;
                }
            }
        }
    }
    out
}

/// Faces from `gen:N[:SEED]` or a JSONL file of landmark objects.
fn training_faces(spec: &str, seed: u64) -> Result<Vec<LandmarkSet>> {
    if let Some(rest) = spec.strip_prefix("gen:") {
        let mut parts = rest.split(':');
        let bad = || LatoError::Config(format!("bad data spec {spec:?}, expected gen:N or gen:N:SEED"));
        let n: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let seed = match parts.next() {
            Some(s) => s.parse().map_err(|_| bad())?,
            None => seed.wrapping_add(1),
        };
        return Ok(synthesize(n, seed));
    }
    let path = Path::new(spec);
    let file = File::open(path).map_err(|e| LatoError::io(path, e))?;
    let mut faces = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| LatoError::io(path, e))?;
        if !line.trim().is_empty() {
            faces.push(parse_landmarks(&line)?);
        }
    }
    Ok(faces)
}

fn train_cmd(cli: &Cli, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = load_config(cli)?.tokenizer;
    config.seed = cli.seed;
    if let Some(s) = a.steps {
        config.steps = s;
    }
    if let Some(b) = a.blocks {
        config.blocks = b;
    }
    let faces = training_faces(&a.data, cli.seed)?;
    let (model, log) = train_with(&config, &faces, |s| {
        if s.step % 100 == 0 {
            log::info!("step {}: loss {:.4}", s.step, s.loss);
        }
    })?;
    model.save(&a.out)?;
    if let Some(p) = &a.log {
        let mut text = String::new();
        for s in &log.steps {
            text += &serde_json::to_string(s)?;
            text.push('\n');
        }
        write_text(p, &text)?;
    }
    let mut summary = BTreeMap::new();
    summary.insert("steps", json!(config.steps));
    summary.insert("seconds", json!(log.seconds));
    summary.insert("resets", json!(log.resets.len()));
    summary.insert("final_loss", json!(log.steps.last().map(|s| s.loss)));
    summary.insert("codebook", serde_json::to_value(codebook_stats(model.codebook())?)?);
    if a.eval > 0 {
        let held_out = synthesize(a.eval, cli.seed.wrapping_add(2));
        let e = evaluate_tokenizer(&model, &held_out)?;
        summary.insert("held_out_l1_px", json!(e.mean_l1_px));
        summary.insert("utilization", json!(e.utilization));
    }
    emit(out, &to_json(&summary, cli.pretty)?)
}

fn parse_grid(s: &str) -> Result<(u32, u32)> {
    let bad = || LatoError::Config(format!("bad grid {s:?}, expected HxW"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn posenc_cmd(cli: &Cli, a: &PosencArgs, out: &mut dyn Write) -> Result<()> {
    let mut result: BTreeMap<&str, Value> = BTreeMap::new();
    result.insert("layout", serde_json::to_value(RopeLayout::default())?);
    let triples = |v: Vec<PositionTriple>| -> Value { v.iter().map(|p| json!([p.t, p.h, p.w])).collect() };
    if let Some(p) = &a.landmarks {
        result.insert("landmarks", triples(landmark_positions(&read_landmarks(p)?, a.stride)?));
    }
    if let Some(g) = &a.grid {
        let (h, w) = parse_grid(g)?;
        result.insert("image", triples(image_positions(h, w)?));
    }
    if let Some(n) = a.text {
        result.insert("text", triples(text_positions(n)));
    }
    if result.len() == 1 {
        return Err(LatoError::Config("give at least one of --landmarks, --grid, --text".into()));
    }
    emit(out, &to_json(&result, cli.pretty)?)
}

fn time_attention(lengths: SequenceLengths, d_model: usize, heads: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = AttentionBlockParams::init(&mut rng, d_model, heads)?;
    let n = lengths.total();
    let tokens = Array2::from_shape_simple_fn((n, d_model), || StandardNormal.sample(&mut rng));
    let seq = TokenSequence::from_parts(tokens, text_positions(n))?;
    let start = Instant::now();
    attention_forward(&seq, &params)?;
    Ok(start.elapsed().as_secs_f64())
}

fn fuse_bench_cmd(cli: &Cli, a: &FuseBenchArgs, out: &mut dyn Write) -> Result<()> {
    let lengths = SequenceLengths::new(a.lt, a.ls, a.lf, a.ln);
    let cost = match a.rendered {
        Some(r) => compare_cost(lengths, SequenceLengths { landmark: r, ..lengths }),
        None => attention_cost(lengths),
    };
    let mut v = serde_json::to_value(cost)?;
    if let Some(d) = a.time_d_model {
        let rendered = SequenceLengths::new(a.lt, a.ls, cost.rendered_tokens - a.lt - a.ls - a.ln, a.ln);
        v["seconds"] = json!(time_attention(lengths, d, a.heads, cli.seed)?);
        v["rendered_seconds"] = json!(time_attention(rendered, d, a.heads, cli.seed)?);
    }
    if cli.pretty {
        emit(
            out,
            &format!(
                "tokens {} vs {} rendered\nlogits {} vs {} rendered\nrelative cost {:.4}",
                cost.tokens_total, cost.rendered_tokens, cost.pairwise_logits, cost.rendered_logits, cost.relative_cost_vs_rendered
            ),
        )
    } else {
        emit(out, &v.to_string())
    }
}
