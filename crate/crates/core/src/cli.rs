//! Command-line front end. [`run`] is the whole program; the binary only
//! forwards `std::env::args` to it.
//!
//! Exit codes: 0 success, 1 usage error, 2 verification failure, 3 I/O,
//! format or model error.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::Form;
use crate::embedding::{cosine_similarity, load_image, read_embedding, write_embedding};
use crate::error::{Error, Result};
use crate::model::{config_cost_report, cost_report, Model, ModelConfig, Variant};
use crate::reparam::{
    probe_agreement, reparameterize_model, FusionOptions, FusionReport, PROBE_SEED,
};
use crate::tensor::Tensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Equivalence thresholds used by `verify`.
pub const MAX_ABS_TOLERANCE: f32 = 1e-4;
pub const MIN_COSINE: f32 = 0.9999;

#[derive(Parser, Debug)]
#[command(
    name = "facelivt",
    version,
    about = "FaceLiVT inference, reparameterization and cost tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a train-form model with seeded random weights.
    Build(BuildArgs),
    /// Fuse a train-form archive into deploy form.
    Reparam(ReparamArgs),
    /// Check that two archives compute the same embeddings.
    Verify(VerifyArgs),
    /// Parameter and operation counts.
    Cost(CostArgs),
    /// Time forward passes.
    Bench(BenchArgs),
    /// Embed one image.
    Embed(EmbedArgs),
    /// Cosine similarity of two embedding files.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(long, value_parser = parse_variant, required_unless_present = "config", conflicts_with = "config")]
    variant: Option<Variant>,
    /// TOML model config instead of a preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the attention head count.
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReparamArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep batch norms unfused (this also keeps the residual explicit).
    #[arg(long)]
    no_fuse_bn: bool,
    /// Keep the residual connection of RepMix blocks explicit.
    #[arg(long)]
    no_res_rep: bool,
    /// Keep the 1x1 branch of RepMix blocks separate.
    #[arg(long)]
    no_dw1x1: bool,
    /// Probe images used to measure equivalence.
    #[arg(long, default_value_t = 2)]
    probes: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    deploy: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    probes: u64,
    #[arg(long, default_value_t = PROBE_SEED)]
    seed: u64,
}

#[derive(Args, Debug)]
struct CostArgs {
    #[arg(long, value_parser = parse_variant, required_unless_present = "input", conflicts_with = "input")]
    variant: Option<Variant>,
    /// Count an archive instead of a preset.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, conflicts_with = "input")]
    heads: Option<usize>,
    /// Form counted for a preset.
    #[arg(long, value_enum, default_value_t = CostForm::Deploy, conflicts_with = "input")]
    form: CostForm,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CostForm {
    Train,
    Deploy,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    iters: u64,
    #[arg(long, default_value_t = 3)]
    warmup: u64,
    /// Independent inference streams over the shared model.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// PNG, or raw little-endian f32 `[3, S, S]`.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Timing summary of `bench`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub variant: String,
    pub form: Form,
    /// Timed forwards per stream.
    pub iterations: usize,
    pub warmup: usize,
    pub threads: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p95_us: f64,
    /// Forwards per second over all streams.
    pub throughput_per_s: f64,
    pub host: String,
}

/// Per-forward wall times of `iters` forwards after `warmup` untimed ones,
/// on each of `threads` streams, plus the total wall time in seconds.
pub fn time_forwards(
    model: &Model,
    image: &Tensor,
    iters: usize,
    warmup: usize,
    threads: usize,
) -> Result<(Vec<f64>, f64)> {
    let stream = || -> Result<Vec<f64>> {
        for _ in 0..warmup {
            model.forward(image)?;
        }
        (0..iters)
            .map(|_| {
                let t = Instant::now();
                model.forward(image)?;
                Ok(t.elapsed().as_secs_f64() * 1e6)
            })
            .collect()
    };
    let start = Instant::now();
    let samples = if threads <= 1 {
        stream()?
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads).map(|_| s.spawn(stream)).collect();
            let mut all = Vec::new();
            for h in handles {
                all.extend(h.join().expect("bench stream panicked")?);
            }
            Ok::<_, Error>(all)
        })?
    };
    Ok((samples, start.elapsed().as_secs_f64()))
}

/// `(mean, median, p95)`; the percentile is nearest-rank.
pub fn summarize(samples: &[f64]) -> (f64, f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return (0.0, 0.0, 0.0);
    }
    let mean = s.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    (mean, median, s[rank - 1])
}

pub fn host_description() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{} {} cpu",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cpus
    )
}

/// Deterministic `[1, 3, S, S]` image in `[-1, 1]`.
pub fn probe_image(size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([1, 3, size, size], |_| rng.random_range(-1.0..=1.0))
}

/// Runs the program on `args` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_IO
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Build(a) => {
            let mut config = match (&a.variant, &a.config) {
                (Some(v), _) => v.config(),
                (None, Some(path)) => ModelConfig::from_file(path)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            if let Some(h) = a.heads {
                config = config.with_heads(h);
            }
            let model = Model::build(&config, a.seed)?;
            model.save(&a.out)?;
            let dims: Vec<_> = config.stages.iter().map(|s| s.dim).collect();
            writeln!(
                out,
                "built {} seed {} dims {:?} params {} -> {}",
                config.variant,
                a.seed,
                dims,
                model.param_count(),
                a.out.display()
            )?;
        }
        Command::Reparam(a) => {
            let model = Model::load(&a.input)?;
            let options = FusionOptions {
                fuse_bn: !a.no_fuse_bn,
                fold_residual: !a.no_res_rep,
                merge_1x1: !a.no_dw1x1,
            };
            let (fused, report) = reparameterize_model(&model, options, a.probes)?;
            fused.save(&a.out)?;
            match a.format {
                Format::Json => writeln!(out, "{}", to_json(&report))?,
                Format::Text => write!(out, "{}", fusion_text(&report, fused.form()))?,
            }
        }
        Command::Verify(a) => {
            let train = Model::load(&a.train)?;
            let deploy = Model::load(&a.deploy)?;
            if train.config != deploy.config {
                return Err(Error::Config(
                    "the two archives have different configs".into(),
                ));
            }
            let (max_abs, cos) = probe_agreement(&train, &deploy, a.probes as usize, a.seed)?;
            let pass = max_abs < MAX_ABS_TOLERANCE && cos >= MIN_COSINE;
            writeln!(
                out,
                "probes {}  max_abs_error {:.3e}  min_cosine {:.7}  {}",
                a.probes,
                max_abs,
                cos,
                if pass { "PASS" } else { "FAIL" }
            )?;
            return Ok(if pass { EXIT_OK } else { EXIT_VERIFY });
        }
        Command::Cost(a) => {
            let report = match (a.variant, &a.input) {
                (Some(v), _) => {
                    let mut config = v.config();
                    if let Some(h) = a.heads {
                        config = config.with_heads(h);
                    }
                    let form = match a.form {
                        CostForm::Train => Form::Train,
                        CostForm::Deploy => Form::Deploy,
                    };
                    config_cost_report(&config, form)?
                }
                (None, Some(path)) => cost_report(&Model::load(path)?)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            match a.format {
                Format::Json => writeln!(out, "{}", to_json(&report))?,
                Format::Text => write!(out, "{}", report.to_text())?,
            }
        }
        Command::Bench(a) => {
            let model = Model::load(&a.input)?;
            let image = probe_image(model.config.input_size, 1);
            let (iters, warmup, threads) =
                (a.iters as usize, a.warmup as usize, a.threads as usize);
            let (samples, wall) = time_forwards(&model, &image, iters, warmup, threads)?;
            let (mean_us, median_us, p95_us) = summarize(&samples);
            let result = BenchResult {
                variant: model.config.variant.clone(),
                form: model.form(),
                iterations: iters,
                warmup,
                threads,
                mean_us,
                median_us,
                p95_us,
                throughput_per_s: samples.len() as f64 / wall,
                host: host_description(),
            };
            match a.format {
                Format::Json => writeln!(out, "{}", to_json(&result))?,
                Format::Text => writeln!(
                    out,
                    "{} {} x{} threads {}: mean {:.1} us  median {:.1} us  p95 {:.1} us  {:.2} fwd/s  [{}]",
                    result.variant,
                    result.form,
                    result.iterations,
                    result.threads,
                    result.mean_us,
                    result.median_us,
                    result.p95_us,
                    result.throughput_per_s,
                    result.host
                )?,
            }
        }
        Command::Embed(a) => {
            let model = Model::load(&a.input)?;
            let image = load_image(&a.image, model.config.input_size)?;
            let embedding = model.forward(&image)?;
            write_embedding(&a.out, &embedding)?;
            writeln!(
                out,
                "wrote {}-d embedding to {}",
                embedding.len(),
                a.out.display()
            )?;
        }
        Command::Compare(a) => {
            let cos = cosine_similarity(&read_embedding(&a.a)?, &read_embedding(&a.b)?)?;
            writeln!(out, "{cos:.7}")?;
        }
    }
    Ok(EXIT_OK)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn fusion_text(r: &FusionReport, form: Form) -> String {
    format!(
        "form {form}  fused {} parts  params {} -> {}\n\
         fuse_bn {}  fold_residual {}  merge_1x1 {}\n\
         probes {}  max_abs_error {:.3e}  min_cosine {:.7}\n",
        r.blocks_fused,
        r.params_before,
        r.params_after,
        r.options.fuse_bn,
        r.options.fold_residual,
        r.options.merge_1x1,
        r.probe_count,
        r.max_abs_error,
        r.min_cosine
    )
}
