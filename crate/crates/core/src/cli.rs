//! Command-line interface: `gen-data`, `train`, `probe`, `verify-theory`
//! and `ablate`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data, format
//! or IO error (including failed verification rows), 3 numerical abort.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::datakit::{apply_setting_str, gen_blobs, load_dataset, parse_config_file, save_dataset, split, BlobSpec, LabeledDataset};
use crate::error::{Error, Result};
use crate::evalkit::{export_embeddings, linear_probe, representation_contract_check, sample_triples, train_and_probe, ProbeConfig};
use crate::objective::Method;
use crate::rng::substream;
use crate::theory::{p_b_bounds, p_b_exact, random_spec, render_table, verify_spec, write_theory_csv, PopulationSpec};
use crate::trainer::{write_log_csv, Checkpoint, LogRow, TrainConfig, Trainer, LOG_HEADER};

#[derive(Debug, Parser)]
#[command(name = "pnnclr", version, about = "Contrastive learning with pseudo nearest neighbor positives")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Gaussian-blob dataset file.
    GenData(GenDataArgs),
    /// Train an encoder; writes log.csv, config.txt and checkpoint.bin.
    Train(TrainArgs),
    /// Linear-probe a trained encoder.
    Probe(ProbeArgs),
    /// Tabulate P[B], its bounds and a Monte-Carlo estimate.
    VerifyTheory(TheoryArgs),
    /// Sweep one hyperparameter and report mean probe accuracy.
    Ablate(AblateArgs),
}

#[derive(Debug, clap::Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 8)]
    pub classes: u32,
    #[arg(long, default_value_t = 500)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub center_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Options shared by `train` and `ablate` for building a [`TrainConfig`].
/// Precedence: defaults, then `--config`, then the named flags, then `--set`.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Overrides --steps with whole passes over the training data.
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra `key=value` settings, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint; only --steps/--epochs are honoured.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Fraction of each class used to train the probe.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub probe_steps: usize,
    /// Also report the contract violation rate on this many triples.
    #[arg(long, default_value_t = 0)]
    pub triples: usize,
    /// Write `label,e1..eD` embeddings of the whole dataset here.
    #[arg(long)]
    pub export_embeddings: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct TheoryArgs {
    /// Number of classes; with --ne and --nq, replaces the default rows.
    #[arg(long, requires_all = ["ne", "nq"])]
    pub nc: Option<u64>,
    #[arg(long, requires_all = ["nc", "nq"])]
    pub ne: Option<u64>,
    #[arg(long, requires_all = ["nc", "ne"])]
    pub nq: Option<u64>,
    /// Monte-Carlo trials per row (0 to skip).
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also check the bounds on this many random specs.
    #[arg(long, default_value_t = 1000)]
    pub random_specs: u64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Alpha,
    Beta,
    Queue,
    Batch,
    Embedding,
    Method,
}

#[derive(Debug, clap::Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated values. The method axis takes
    /// baseline, swu, swu+pnn, swu+pnn+noise, simclr, nnclr or pnnclr.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    /// Seeds per value (at least 3).
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// Dataset file; defaults to the standard blob dataset.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::from_name(s).ok_or_else(|| format!("unknown method `{s}` (simclr | nnclr | pnnclr)"))
}

impl ConfigArgs {
    pub fn build(&self, batches_per_epoch: impl Fn(&TrainConfig) -> u64) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => parse_config_file(p)?,
            None => TrainConfig::default(),
        };
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        for kv in &self.set {
            apply_setting_str(&mut cfg, kv)?;
        }
        if let Some(e) = self.epochs {
            cfg.steps = e * batches_per_epoch(&cfg);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Probe(a) => probe_cmd(a, out),
        Command::VerifyTheory(a) => verify_theory(a, out),
        Command::Ablate(a) => ablate(a, out),
    }
}

fn gen_data(a: GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let spec = BlobSpec {
        class_count: a.classes,
        per_class: a.per_class,
        dim: a.dim,
        center_scale: a.center_scale,
        within_class_std: a.std,
        seed: a.seed,
    };
    let data = gen_blobs(&spec)?;
    save_dataset(&data, &a.out)?;
    writeln!(
        out,
        "wrote {} samples ({} classes, dim {}) to {}",
        data.len(),
        data.class_count(),
        data.dim(),
        a.out.display()
    )?;
    Ok(())
}

/// Rows of an existing log that precede `step`.
fn earlier_log_rows(path: &Path, step: u64) -> Result<Vec<String>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .is_some_and(|s| s < step)
        })
        .map(str::to_owned)
        .collect())
}

fn write_log(path: &Path, earlier: &[String], rows: &[LogRow]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    if earlier.is_empty() {
        write_log_csv(&mut w, rows)?;
    } else {
        writeln!(w, "{LOG_HEADER}")?;
        for l in earlier {
            writeln!(w, "{l}")?;
        }
        for r in rows {
            writeln!(w, "{}", r.to_csv())?;
        }
        w.flush()?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let data = load_dataset(&a.dataset)?;
    let batches = |c: &TrainConfig| (data.len() / c.batch_size.max(1)) as u64;
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut ck = Checkpoint::load(path)?;
            if let Some(s) = a.config.steps {
                ck.config.steps = s;
            }
            if let Some(e) = a.config.epochs {
                ck.config.steps = e * batches(&ck.config);
            }
            Trainer::resume(ck, &data)?
        }
        None => Trainer::new(a.config.build(batches)?, &data)?,
    };
    fs::create_dir_all(&a.out)?;
    let log_path = a.out.join("log.csv");
    let start = trainer.state().step;
    let earlier = if a.resume.is_some() {
        earlier_log_rows(&log_path, start)?
    } else {
        Vec::new()
    };
    fs::write(a.out.join("config.txt"), trainer.config().to_canonical_string())?;

    let every = trainer.config().checkpoint_every;
    let mut rows = Vec::new();
    let result = trainer.run(None, |t, r| {
        rows.push(LogRow::from(r));
        if every > 0 && (r.step + 1) % every == 0 {
            t.checkpoint()
                .save(a.out.join(format!("checkpoint-{}.bin", r.step + 1)))?;
        }
        Ok(())
    });
    write_log(&log_path, &earlier, &rows)?;
    result?;
    trainer.checkpoint().save(a.out.join("checkpoint.bin"))?;
    let last = rows.last().map_or(f64::NAN, |r| r.loss);
    writeln!(
        out,
        "trained {} {} steps (from step {start}), final loss {last}; artifacts in {}",
        trainer.config().method.name(),
        rows.len(),
        a.out.display()
    )?;
    Ok(())
}

fn probe_cmd(a: ProbeArgs, out: &mut dyn Write) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let data = load_dataset(&a.dataset)?;
    if data.dim() != ck.input_dim {
        return Err(Error::DimensionMismatch {
            expected: ck.input_dim,
            got: data.dim(),
        });
    }
    let cfg = ProbeConfig {
        lr: a.lr,
        steps: a.probe_steps,
        train_fraction: a.split,
        seed: a.seed,
    };
    let encoder = &ck.state.online;
    let (train_set, test_set) = split(&data, cfg.train_fraction, cfg.seed)?;
    let result = linear_probe(encoder, &train_set, &test_set, &cfg)?;
    writeln!(out, "{} step={}", result.to_record(), ck.state.step)?;
    if a.triples > 0 {
        let triples = sample_triples(&data, a.triples, a.seed)?;
        let rate = representation_contract_check(encoder, &triples)?;
        writeln!(out, "contract violation_rate={rate} triples={}", a.triples)?;
    }
    if let Some(path) = &a.export_embeddings {
        export_embeddings(encoder, &data, path)?;
        writeln!(out, "wrote embeddings to {}", path.display())?;
    }
    Ok(())
}

/// The two published scenarios, a smaller-population variant, small specs
/// with an informative simulation and the empty-queue row.
pub fn default_theory_specs() -> Vec<PopulationSpec> {
    [
        (1000, 1000, 10_000),
        (100, 100, 10_000),
        (10, 1000, 10_000),
        (20, 5, 5),
        (50, 20, 100),
        (8, 500, 64),
        (10, 10, 0),
    ]
    .into_iter()
    .map(|(c, e, q)| PopulationSpec {
        num_classes: c,
        items_per_class: e,
        queue_size: q,
    })
    .collect()
}

fn verify_theory(a: TheoryArgs, out: &mut dyn Write) -> Result<()> {
    let specs = match (a.nc, a.ne, a.nq) {
        (Some(c), Some(e), Some(q)) => vec![PopulationSpec::new(c, e, q)?],
        _ => default_theory_specs(),
    };
    let rows = specs
        .iter()
        .map(|s| verify_spec(s, a.trials, a.seed))
        .collect::<Result<Vec<_>>>()?;
    write!(out, "{}", render_table(&rows))?;
    let mut failed = rows.iter().filter(|r| !r.pass).count();

    if a.random_specs > 0 {
        let mut rng = substream(a.seed, &[crate::rng::domain::MONTE_CARLO, u64::MAX - 1]);
        let mut violations = 0;
        for _ in 0..a.random_specs {
            let s = random_spec(&mut rng, 1000);
            let p = p_b_exact(&s)?;
            let (lo, hi) = p_b_bounds(&s)?;
            if !(lo <= p + 1e-12 && p <= hi + 1e-12) {
                violations += 1;
                writeln!(out, "bounds violated for {s}: {lo} <= {p} <= {hi}")?;
            }
        }
        writeln!(
            out,
            "bounds on {} random specs: {}",
            a.random_specs,
            if violations == 0 { "PASS" } else { "FAIL" }
        )?;
        failed += violations;
    }
    if let Some(path) = &a.csv {
        write_theory_csv(BufWriter::new(fs::File::create(path)?), &rows)?;
        writeln!(out, "wrote {}", path.display())?;
    }
    if failed > 0 {
        return Err(Error::VerificationFailed(failed));
    }
    Ok(())
}

/// Applies one ablation value to a base config.
pub fn apply_axis(base: &TrainConfig, axis: Axis, value: &str) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    let key = match axis {
        Axis::Alpha => "alpha",
        Axis::Beta => "beta",
        Axis::Queue => "queue_capacity",
        Axis::Batch => "batch_size",
        Axis::Embedding => "projection_dim",
        Axis::Method => {
            match value {
                "baseline" => {
                    cfg.method = Method::NnClr;
                    cfg.swu = Some(false);
                }
                "swu" => {
                    cfg.method = Method::NnClr;
                    cfg.swu = Some(true);
                }
                "swu+pnn" => {
                    cfg.method = Method::PnnClr;
                    cfg.swu = Some(true);
                    cfg.beta = 0.0;
                }
                "swu+pnn+noise" => {
                    cfg.method = Method::PnnClr;
                    cfg.swu = Some(true);
                    if cfg.beta == 0.0 {
                        cfg.beta = TrainConfig::default().beta;
                    }
                }
                other => {
                    cfg.method = parse_method(other).map_err(Error::InvalidConfig)?;
                }
            }
            cfg.validate()?;
            return Ok(cfg);
        }
    };
    crate::datakit::config::apply_setting(&mut cfg, key, value, 0)?;
    cfg.validate()?;
    Ok(cfg)
}

pub const ABLATION_CSV_HEADER: &str = "value,mean_top1,std_top1,n_seeds";

/// Mean and sample standard deviation of probe accuracy per value.
pub fn run_ablation(
    base: &TrainConfig,
    axis: Axis,
    values: &[String],
    seeds: u64,
    data: &LabeledDataset,
) -> Result<Vec<(String, f64, f64, u64)>> {
    let configs = values
        .iter()
        .map(|v| apply_axis(base, axis, v))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|v| (0..seeds).map(move |s| (v, s)))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(v, s)| {
            let cfg = TrainConfig {
                seed: base.seed + s,
                ..configs[v].clone()
            };
            let probe = ProbeConfig {
                seed: base.seed + s,
                ..ProbeConfig::default()
            };
            train_and_probe(&cfg, data, &probe).map(|r| r.top1)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(values
        .iter()
        .enumerate()
        .map(|(v, name)| {
            let xs = &scores[v * seeds as usize..(v + 1) * seeds as usize];
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            (name.clone(), mean, var.sqrt(), seeds)
        })
        .collect())
}

fn ablate(a: AblateArgs, out: &mut dyn Write) -> Result<()> {
    if a.seeds < 3 {
        return Err(Error::InvalidConfig(format!(
            "ablations aggregate at least 3 seeds, got {}",
            a.seeds
        )));
    }
    let data = match &a.dataset {
        Some(p) => load_dataset(p)?,
        None => gen_blobs(&BlobSpec::default())?,
    };
    let train_len = (data.len() as f64 * ProbeConfig::default().train_fraction) as usize;
    let base = a.config.build(|c| (train_len / c.batch_size.max(1)) as u64)?;
    let rows = run_ablation(&base, a.axis, &a.values, a.seeds, &data)?;
    let mut text = format!("{ABLATION_CSV_HEADER}\n");
    for (v, mean, std, n) in &rows {
        text.push_str(&format!("{v},{mean},{std},{n}\n"));
    }
    write!(out, "{text}")?;
    if let Some(path) = &a.out {
        fs::write(path, &text)?;
    }
    Ok(())
}
