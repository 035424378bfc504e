//! Acceptance suite. Each test checks one numbered criterion at its stated
//! tolerance and runtime budget and prints a single PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use pnnclr::cli;
use pnnclr::datakit::{gen_blobs, split, BlobSpec, LabeledDataset};
use pnnclr::encoder::{backward, forward, init_params, Activation, EncoderArch, EncoderParams, Mode};
use pnnclr::evalkit::{linear_probe, ProbeConfig};
use pnnclr::objective::{
    loss_nnclr, loss_pnnclr, loss_simclr, select_anchors, symmetric_loss_with_anchors, AnchorRule,
    LossConfig, Method,
};
use pnnclr::pnn_sampler::{resample, shrink_toward_nn, PnnConfig};
use pnnclr::rng::{substream, RngStream};
use pnnclr::support_set::{SupportEntry, SupportSet};
use pnnclr::theory::{p_b_bounds, p_b_exact, p_b_monte_carlo, random_spec, PopulationSpec};
use pnnclr::trainer::{ema_update, train, LogRow, TrainConfig, Trainer};
use pnnclr::vecspace::{cosine_sim, norm, normalize, DenseMatrix};

fn report(criterion: u32, pass: bool, detail: &str, elapsed: Duration, limit_s: f64) -> bool {
    let in_time = elapsed.as_secs_f64() < limit_s;
    let ok = pass && in_time;
    // straight to stderr so the line survives output capture
    let _ = writeln!(
        std::io::stderr(),
        "criterion {criterion}: {} ({detail}; {:.1} s, limit {limit_s} s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    ok
}

fn gaussian(rng: &mut RngStream, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

fn unit_rows(rng: &mut RngStream, rows: usize, cols: usize) -> DenseMatrix {
    gaussian(rng, rows, cols).normalize_rows().unwrap()
}

fn queue_from(rows: &DenseMatrix) -> SupportSet {
    let mut q = SupportSet::new(rows.rows()).unwrap();
    q.insert_batch(
        rows.row_iter()
            .enumerate()
            .map(|(i, r)| SupportEntry::new(normalize(r).unwrap(), Some(0), i as u64)),
    )
    .unwrap();
    q
}

/// Relative error with a 1e-5 floor. The bias feeding batch norm has an
/// exact zero gradient, where central differences return rounding noise of
/// order `ε·|L|/h ≈ 1e-10`.
fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / (a.abs() + f.abs()).max(1e-5)
}

fn add(a: &mut EncoderParams, b: &EncoderParams) {
    for (x, y) in a.trainable_mut().into_iter().zip(b.trainable()) {
        x.iter_mut().zip(y).for_each(|(u, v)| *u += v);
    }
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let combos = 24u64;
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut degenerate = 0;
    let mut done = 0u64;
    for c in 0.. {
        if done == combos {
            break;
        }
        let mut rng = substream(1_000, &[c]);
        let input_dim = rng.random_range(2..=8);
        let hidden_dims: Vec<usize> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(2..=8)).collect();
        let activation = [Activation::Tanh, Activation::Relu, Activation::Identity][rng.random_range(0..3)];
        let arch = EncoderArch {
            input_dim,
            use_batchnorm_in_head: !hidden_dims.is_empty() && rng.random_bool(0.5),
            hidden_dims,
            projection_dim: rng.random_range(2..=6),
            activation,
        };
        let batch = rng.random_range(3..=6);
        let method = [Method::SimClr, Method::NnClr, Method::PnnClr][(c % 3) as usize];
        let cfg = LossConfig {
            temperature: [0.1, 0.5, 1.0][rng.random_range(0..3)],
            method,
            symmetrize: true,
            paper_literal_sums: c % 4 == 3,
        };
        let online = init_params(&arch, &mut rng).unwrap();
        let target = init_params(&arch, &mut rng).unwrap();
        let v1 = gaussian(&mut rng, batch, input_dim);
        let v2 = gaussian(&mut rng, batch, input_dim);
        let queue_len = rng.random_range(3..=10);
        let queue = queue_from(&unit_rows(&mut rng, queue_len, arch.projection_dim));

        // anchors are constants: computed once, before differentiation
        let anchor_net = if method == Method::SimClr { &online } else { &target };
        // all-dead ReLU layers give a zero projection, where the loss is undefined
        let (Ok((z1, _)), Ok((z2, _)), Ok(_), Ok(_)) = (
            forward(anchor_net, &v1, Mode::Train),
            forward(anchor_net, &v2, Mode::Train),
            forward(&online, &v1, Mode::Train),
            forward(&online, &v2, Mode::Train),
        ) else {
            degenerate += 1;
            continue;
        };
        done += 1;
        let rule = match method {
            Method::SimClr => AnchorRule::Identity,
            Method::NnClr => AnchorRule::Nearest(&queue),
            Method::PnnClr => AnchorRule::Pseudo {
                queue: &queue,
                cfg: PnnConfig::default(),
                seed: c,
            },
        };
        let a1 = select_anchors(&z1, &rule, 0).unwrap().matrix;
        let a2 = select_anchors(&z2, &rule, 1).unwrap().matrix;
        let loss = |p: &EncoderParams| {
            let zp1 = forward(p, &v1, Mode::Train).unwrap().0;
            let zp2 = forward(p, &v2, Mode::Train).unwrap().0;
            symmetric_loss_with_anchors(&a1, &zp2, &a2, &zp1, &cfg).unwrap().report.loss
        };

        let (zp1, tr1) = forward(&online, &v1, Mode::Train).unwrap();
        let (zp2, tr2) = forward(&online, &v2, Mode::Train).unwrap();
        let sym = symmetric_loss_with_anchors(&a1, &zp2, &a2, &zp1, &cfg).unwrap();
        let mut grads = backward(&online, &tr1, &sym.grad_v1_plus).unwrap();
        add(&mut grads, &backward(&online, &tr2, &sym.grad_v2_plus).unwrap());
        let analytic = grads.trainable().concat();

        let mut k = 0;
        for t in 0..online.trainable().len() {
            for i in 0..online.trainable()[t].len() {
                let mut plus = online.clone();
                plus.trainable_mut()[t][i] += h;
                let mut minus = online.clone();
                minus.trainable_mut()[t][i] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                worst = worst.max(rel_err(analytic[k], fd));
                k += 1;
            }
        }
    }
    let ok = report(
        1,
        worst < 1e-4,
        &format!("{combos} combos ({degenerate} degenerate draws skipped), worst relative error {worst:.2e}, limit 1e-4"),
        start.elapsed(),
        30.0,
    );
    assert!(ok);
}

#[test]
fn criterion_2_method_reduction_equivalences() {
    let start = Instant::now();
    let cfg = LossConfig::default();
    let mut worst = 0.0f64;
    for b in 0..100u64 {
        let mut rng = substream(2_000, &[b]);
        let n = rng.random_range(2..=8);
        let d = rng.random_range(2..=8);
        let z = unit_rows(&mut rng, n, d);
        let z_plus = unit_rows(&mut rng, n, d);
        let queue_len = rng.random_range(3..=10);
        let queue = queue_from(&unit_rows(&mut rng, queue_len, d));

        let nn = loss_nnclr(&z, &z_plus, &queue, &cfg).unwrap();
        let near_nn = PnnConfig::new(1e-15, 0.0, true).unwrap();
        let p0 = loss_pnnclr(&z, &z_plus, &queue, &near_nn, &cfg, b).unwrap();

        let sim = loss_simclr(&z, &z_plus, &cfg).unwrap();
        let near_self = PnnConfig::new(1.0 - 1e-15, 0.0, true).unwrap();
        let p1 = loss_pnnclr(&z, &z_plus, &queue, &near_self, &cfg, b).unwrap();

        for (a, r) in [(&p0, &nn), (&p1, &sim)] {
            worst = worst.max((a.report.loss - r.report.loss).abs());
            for (x, y) in a.report.per_item_losses.iter().zip(&r.report.per_item_losses) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    let ok = report(
        2,
        worst < 1e-12,
        &format!("100 batches, alpha at 1e-15 and 1-1e-15, max |diff| {worst:.2e}, limit 1e-12"),
        start.elapsed(),
        5.0,
    );
    assert!(ok);
}

#[test]
fn criterion_3_pnn_geometry() {
    let start = Instant::now();
    let mut rng = substream(3_000, &[]);
    let mut worst_mag = 0.0f64;
    let mut worst_dir = 0.0f64;
    for _ in 0..10_000 {
        let d = rng.random_range(2..=16);
        let z = unit_rows(&mut rng, 1, d);
        let nn = unit_rows(&mut rng, 1, d);
        let alpha: f64 = rng.random_range(0.001..0.999);
        let s = shrink_toward_nn(z.row(0), nn.row(0), alpha).unwrap();
        let moved: Vec<f64> = s.iter().zip(z.row(0)).map(|(a, b)| a - b).collect();
        let gap: Vec<f64> = nn.row(0).iter().zip(z.row(0)).map(|(a, b)| a - b).collect();
        worst_mag = worst_mag.max((norm(&moved) - (1.0 - alpha) * norm(&gap)).abs());
        let cos = cosine_sim(normalize(&moved).unwrap().as_ref(), normalize(&gap).unwrap().as_ref()).unwrap();
        worst_dir = worst_dir.max((cos - 1.0).abs());
    }

    // noise: (out − z″)/σ should be standard normal in every coordinate
    let d = 8;
    let draws = 100_000;
    let z = unit_rows(&mut rng, 1, d);
    let nn = unit_rows(&mut rng, 1, d);
    let beta = 0.1;
    let s = shrink_toward_nn(z.row(0), nn.row(0), 0.25).unwrap();
    let offset: Vec<f64> = s.iter().zip(z.row(0)).map(|(a, b)| a - b).collect();
    let sigma = beta * norm(&offset);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let out = resample(z.row(0), &s, beta, &mut rng).unwrap();
        for (o, m) in out.iter().zip(s.iter()) {
            let e = (o - m) / sigma;
            sum += e;
            sum_sq += e * e;
        }
    }
    let n = (draws * d) as f64;
    let mean = sum / n;
    let var = sum_sq / n - mean * mean;
    let mean_z = mean / (1.0 / n.sqrt());
    let var_z = (var - 1.0) / (2.0 / (n - 1.0)).sqrt();

    let pass = worst_mag <= 1e-9 && worst_dir <= 1e-9 && mean_z.abs() < 3.0 && var_z.abs() < 3.0;
    let ok = report(
        3,
        pass,
        &format!(
            "10^4 cases: magnitude err {worst_mag:.1e}, cosine err {worst_dir:.1e}; \
             10^5 draws: mean {mean_z:+.2} SE, variance {var_z:+.2} SE"
        ),
        start.elapsed(),
        10.0,
    );
    assert!(ok);
}

#[test]
fn criterion_4_p_b_reproduction() {
    let start = Instant::now();
    let s1 = PopulationSpec::new(1000, 1000, 10_000).unwrap();
    let s2 = PopulationSpec::new(100, 100, 10_000).unwrap();
    let p1 = p_b_exact(&s1).unwrap();
    let p2 = p_b_exact(&s2).unwrap();
    let scenarios = (0.99985..=1.0).contains(&p1) && p2 > 0.9999;

    let mut rng = substream(4_000, &[]);
    let mut sandwich_failures = 0;
    for _ in 0..1000 {
        let s = random_spec(&mut rng, 1000);
        let p = p_b_exact(&s).unwrap();
        let (lo, hi) = p_b_bounds(&s).unwrap();
        if !(lo <= p + 1e-12 && p <= hi + 1e-12) {
            sandwich_failures += 1;
        }
    }

    // specs whose exact value is far from 0 and 1, so the SE is informative
    let mut specs = Vec::new();
    while specs.len() < 20 {
        let s = random_spec(&mut rng, 30);
        let p = p_b_exact(&s).unwrap();
        if (0.05..=0.95).contains(&p) {
            specs.push(s);
        }
    }
    let mc_outside: Vec<String> = specs
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let exact = p_b_exact(s).unwrap();
            let (est, se) = p_b_monte_carlo(s, 100_000, 4_000 + i as u64).unwrap();
            ((est - exact).abs() >= 3.0 * se).then(|| format!("{s}: {est} ± {se} vs {exact}"))
        })
        .collect();

    let ok = report(
        4,
        scenarios && sandwich_failures == 0 && mc_outside.is_empty(),
        &format!(
            "P[B] = {p1:.6} and {p2:.8}; bounds violated on {sandwich_failures}/1000 specs; \
             Monte Carlo outside 3 SE on {}/20 specs {mc_outside:?}",
            mc_outside.len()
        ),
        start.elapsed(),
        60.0,
    );
    assert!(ok);
}

struct Run {
    top1: f64,
    log: Vec<LogRow>,
}

fn pretrain_and_probe(config: &TrainConfig, data: &LabeledDataset) -> Run {
    let probe = ProbeConfig {
        seed: config.seed,
        ..ProbeConfig::default()
    };
    let (train_set, test_set) = split(data, probe.train_fraction, probe.seed).unwrap();
    let (checkpoint, log) = train(config, &train_set).unwrap();
    let top1 = linear_probe(&checkpoint.state.online, &train_set, &test_set, &probe)
        .unwrap()
        .top1;
    Run { top1, log }
}

fn decile_means(log: &[LogRow]) -> (f64, f64) {
    let k = (log.len() / 10).max(1);
    let mean = |rows: &[LogRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
    (mean(&log[..k]), mean(&log[log.len() - k..]))
}

#[test]
fn criteria_5_and_6_desk_scale_training() {
    let start = Instant::now();
    let data = gen_blobs(&BlobSpec::default()).unwrap();
    let seeds: Vec<u64> = (0..5).collect();
    let jobs: Vec<(Method, u64, u64)> = seeds
        .iter()
        .flat_map(|&s| {
            [(Method::NnClr, s, 2000), (Method::PnnClr, s, 2000), (Method::PnnClr, s, 0)]
        })
        .collect();
    let runs: Vec<Run> = jobs
        .par_iter()
        .map(|&(method, seed, steps)| {
            let config = TrainConfig {
                method,
                seed,
                steps,
                ..TrainConfig::default()
            };
            pretrain_and_probe(&config, &data)
        })
        .collect();
    let elapsed = start.elapsed();
    let mean_of = |m: Method, steps: u64| {
        let xs: Vec<f64> = jobs
            .iter()
            .zip(&runs)
            .filter(|((jm, _, js), _)| *jm == m && *js == steps)
            .map(|(_, r)| r.top1)
            .collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let nnclr = mean_of(Method::NnClr, 2000);
    let pnnclr = mean_of(Method::PnnClr, 2000);
    let untrained = mean_of(Method::PnnClr, 0);
    let pass5 = pnnclr >= nnclr && nnclr - untrained >= 0.10 && pnnclr - untrained >= 0.10;

    let trends: Vec<(f64, f64)> = jobs
        .iter()
        .zip(&runs)
        .filter(|((m, _, steps), _)| *m == Method::PnnClr && *steps == 2000)
        .map(|(_, r)| decile_means(&r.log))
        .collect();
    let decreasing = trends.iter().filter(|(first, last)| last < first).count();
    let finite = runs.iter().all(|r| r.log.iter().all(|row| row.loss.is_finite()));
    let pass6 = decreasing >= 4 && finite;

    let ok5 = report(
        5,
        pass5,
        &format!(
            "mean Top-1 over 5 seeds: pNNCLR {pnnclr:.4}, NNCLR {nnclr:.4}, untrained {untrained:.4}"
        ),
        elapsed,
        600.0,
    );
    let trend_text: Vec<String> = trends.iter().map(|(f, l)| format!("{f:.3}->{l:.3}")).collect();
    let ok6 = report(
        6,
        pass6,
        &format!(
            "pNNCLR first/last decile loss decreased on {decreasing}/5 seeds [{}]; all losses finite: {finite}",
            trend_text.join(", ")
        ),
        elapsed,
        600.0,
    );
    assert!(ok5 && ok6);
}

fn cli_ok(args: &[&str]) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run(std::iter::once("pnnclr").chain(args.iter().copied()), &mut out, &mut err);
    assert_eq!(code, 0, "{args:?}: {}", String::from_utf8_lossy(&err));
}

#[test]
fn criterion_7_determinism_and_resume() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    let data = p("data.bin");
    cli_ok(&["gen-data", "--classes", "4", "--per-class", "40", "--dim", "8", "--seed", "3", "--out", &data]);
    let small = [
        "--set", "batch_size=16", "--set", "queue_capacity=48", "--set", "hidden_dims=16",
        "--set", "projection_dim=4",
    ];
    let mut mismatches = Vec::new();
    for method in ["simclr", "nnclr", "pnnclr"] {
        let run = |out: &str, steps: &str, resume: Option<&str>| {
            let mut args = vec!["train", "--dataset", &data, "--method", method, "--seed", "11", "--steps", steps, "--out", out];
            args.extend_from_slice(&small);
            if let Some(r) = resume {
                args.extend_from_slice(&["--resume", r]);
            }
            cli_ok(&args);
        };
        let (a, b, c) = (p(&format!("{method}-a")), p(&format!("{method}-b")), p(&format!("{method}-c")));
        run(&a, "60", None);
        run(&b, "60", None);
        run(&c, "25", None);
        run(&c, "60", Some(&format!("{c}/checkpoint.bin")));
        let read = |d: &str, f: &str| std::fs::read(format!("{d}/{f}")).unwrap();
        for f in ["log.csv", "checkpoint.bin"] {
            if read(&a, f) != read(&b, f) {
                mismatches.push(format!("{method} rerun {f}"));
            }
            if read(&a, f) != read(&c, f) {
                mismatches.push(format!("{method} resume {f}"));
            }
        }
        assert_eq!(String::from_utf8(read(&a, "log.csv")).unwrap().lines().count(), 61);
    }
    let ok = report(
        7,
        mismatches.is_empty(),
        &format!("3 methods, rerun and 25+35 resume vs 60 steps byte-compared; mismatches {mismatches:?}"),
        start.elapsed(),
        60.0,
    );
    assert!(ok);
}

#[test]
fn criterion_8_fifo_and_retrieve_before_insert() {
    let start = Instant::now();
    let mut fifo_failures = 0;
    for trial in 0..1000u64 {
        let mut rng = substream(8_000, &[trial]);
        let cap = rng.random_range(1..=20);
        let mut q = SupportSet::new(cap).unwrap();
        let mut stream: Vec<u64> = Vec::new();
        for _ in 0..rng.random_range(1..=10) {
            let n = rng.random_range(0..=2 * cap);
            let batch: Vec<SupportEntry> = (0..n)
                .map(|_| {
                    let id = stream.len() as u64;
                    stream.push(id);
                    let v = unit_rows(&mut rng, 1, 3);
                    SupportEntry::new(normalize(v.row(0)).unwrap(), None, id)
                })
                .collect();
            q.insert_batch(batch).unwrap();
            let expected = &stream[stream.len().saturating_sub(cap)..];
            let held: Vec<u64> = q.entries().map(|e| e.step).collect();
            if held != expected {
                fifo_failures += 1;
            }
        }
    }

    let mut sentinel_failures = 0;
    for trial in 0..1000u64 {
        let mut rng = substream(8_001, &[trial]);
        let data = gen_blobs(&BlobSpec {
            class_count: 2,
            per_class: 8,
            dim: 3,
            center_scale: 1.0,
            within_class_std: 0.5,
            seed: trial,
        })
        .unwrap();
        let config = TrainConfig {
            method: if trial % 2 == 0 { Method::NnClr } else { Method::PnnClr },
            batch_size: rng.random_range(2..=6),
            queue_capacity: rng.random_range(1..=12),
            hidden_dims: vec![4],
            projection_dim: 3,
            activation: Activation::Tanh,
            steps: 4,
            seed: trial,
            // a fully masked 3-dim view would embed to the zero vector
            mask_prob: 0.0,
            ..TrainConfig::default()
        };
        // one retrieval per row and view once the queue is non-empty
        let per_step = 2 * config.batch_size;
        let mut trainer = Trainer::new(config, &data).unwrap();
        trainer
            .run(None, |_, r| {
                let expected_len = if r.step == 0 { 0 } else { per_step };
                if r.retrieved_steps.iter().any(|&s| s >= r.step) || r.retrieved_steps.len() != expected_len {
                    sentinel_failures += 1;
                }
                Ok(())
            })
            .unwrap();
    }
    let ok = report(
        8,
        fifo_failures == 0 && sentinel_failures == 0,
        &format!(
            "1000 random streams, FIFO violations {fifo_failures}; 1000 random runs, \
             retrievals not older than the current step {sentinel_failures}"
        ),
        start.elapsed(),
        60.0,
    );
    assert!(ok);
}

fn distance(a: &EncoderParams, b: &EncoderParams) -> f64 {
    a.trainable()
        .iter()
        .zip(b.trainable())
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn criterion_9_ema_law() {
    let start = Instant::now();
    let mut failures = Vec::new();
    for trial in 0..200u64 {
        let mut rng = substream(9_000, &[trial]);
        let arch = EncoderArch {
            input_dim: rng.random_range(1..=8),
            hidden_dims: vec![rng.random_range(1..=8)],
            projection_dim: rng.random_range(1..=6),
            activation: Activation::Relu,
            use_batchnorm_in_head: rng.random_bool(0.5),
        };
        let online = init_params(&arch, &mut rng).unwrap();
        let target = init_params(&arch, &mut rng).unwrap();

        let mut frozen = target.clone();
        ema_update(&mut frozen, &online, 1.0).unwrap();
        if frozen != target {
            failures.push(format!("trial {trial}: lambda=1 moved the target"));
        }
        let mut copied = target.clone();
        ema_update(&mut copied, &online, 0.0).unwrap();
        if copied.trainable() != online.trainable() {
            failures.push(format!("trial {trial}: lambda=0 is not a copy"));
        }
        let lambda: f64 = rng.random_range(0.0..1.0);
        let mut moved = target.clone();
        ema_update(&mut moved, &online, lambda).unwrap();
        let (before, after) = (distance(&target, &online), distance(&moved, &online));
        if after > lambda * before * (1.0 + 1e-12) + 1e-15 || (after - lambda * before).abs() > 1e-12 * before.max(1.0) {
            failures.push(format!("trial {trial}: distance {before} -> {after} at lambda {lambda}"));
        }
    }

    // the same endpoints through the training loop
    let data = gen_blobs(&BlobSpec {
        class_count: 3,
        per_class: 20,
        dim: 6,
        ..BlobSpec::default()
    })
    .unwrap();
    for lambda in [1.0, 0.0] {
        let config = TrainConfig {
            lambda,
            batch_size: 8,
            queue_capacity: 24,
            hidden_dims: vec![16],
            projection_dim: 4,
            activation: Activation::Tanh,
            steps: 10,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(config, &data).unwrap();
        let initial = trainer.state().target.clone().unwrap();
        trainer
            .run(None, |t, _| {
                let s = t.state();
                let target = s.target.as_ref().unwrap();
                let ok = if lambda == 1.0 {
                    target.trainable() == initial.trainable()
                } else {
                    target.trainable() == s.online.trainable()
                };
                if !ok {
                    failures.push(format!("trainer lambda={lambda} at step {}", s.step));
                }
                Ok(())
            })
            .unwrap();
    }
    let ok = report(
        9,
        failures.is_empty(),
        &format!("200 random param pairs plus trainer endpoints; failures {failures:?}"),
        start.elapsed(),
        10.0,
    );
    assert!(ok);
}
