//! Support-set probability analysis.
//!
//! A population of `N_c` classes with `N_e` items each (`M = N_c·N_e`
//! items) feeds a queue of `N_q` items drawn without replacement. `P[B]`
//! is the probability that the queue holds at least one item of a given
//! class:
//!
//! ```text
//! P[B] = 1 − Π_{j=0}^{N_e−1} (M − j − N_q) / (M − j)
//! 1 − ((M − N_q)/M)^{N_e}  ≤  P[B]  ≤  1 − ((M − N_e + 1 − N_q)/(M − N_e + 1))^{N_e}
//! ```
//!
//! `P[ψ]`, the probability that a retrieved nearest neighbor shares the
//! query's class, is only measured empirically.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::datakit::LabeledDataset;
use crate::error::{Error, Result};
use crate::evalkit::Embedder;
use crate::rng::{domain, substream};
use crate::support_set::{SupportEntry, SupportSet};
use crate::trainer::{TrainConfig, Trainer};
use crate::vecspace::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PopulationSpec {
    pub num_classes: u64,
    pub items_per_class: u64,
    pub queue_size: u64,
}

impl PopulationSpec {
    pub fn new(num_classes: u64, items_per_class: u64, queue_size: u64) -> Result<Self> {
        let s = Self {
            num_classes,
            items_per_class,
            queue_size,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn population(&self) -> u64 {
        self.num_classes * self.items_per_class
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.items_per_class == 0 {
            return Err(Error::InvalidSpec(format!(
                "N_c and N_e must be positive, got {self}"
            )));
        }
        let m = self
            .num_classes
            .checked_mul(self.items_per_class)
            .ok_or_else(|| Error::InvalidSpec(format!("population overflows: {self}")))?;
        if self.queue_size > m {
            return Err(Error::InvalidSpec(format!(
                "queue larger than the population: {self}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for PopulationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(N_c={}, N_e={}, N_q={})",
            self.num_classes, self.items_per_class, self.queue_size
        )
    }
}

/// `1 − x^n` for `x = 1 − t`, accurate when `x` is close to 1.
fn one_minus_pow(t: f64, n: f64) -> f64 {
    if t >= 1.0 {
        return 1.0;
    }
    -(n * (-t).ln_1p()).exp_m1()
}

pub fn p_b_exact(spec: &PopulationSpec) -> Result<f64> {
    spec.validate()?;
    let m = spec.population();
    let (ne, nq) = (spec.items_per_class, spec.queue_size);
    if nq > m - ne {
        return Ok(1.0);
    }
    let log_miss: f64 = (0..ne)
        .map(|j| (-(nq as f64) / (m - j) as f64).ln_1p())
        .sum();
    Ok(-log_miss.exp_m1())
}

/// `(lower, upper)`; the upper bound's base is clamped at 0.
pub fn p_b_bounds(spec: &PopulationSpec) -> Result<(f64, f64)> {
    spec.validate()?;
    let m = spec.population() as f64;
    let ne = spec.items_per_class as f64;
    let nq = spec.queue_size as f64;
    let lower = one_minus_pow(nq / m, ne);
    let upper = one_minus_pow(nq / (m - ne + 1.0), ne);
    Ok((lower, upper))
}

const MC_CHUNK: u64 = 1024;

/// Draws `trials` random queues and counts those holding an item of class
/// 0. Returns the hit fraction and its standard error.
///
/// Only the overlap between the queue and the class matters, so each trial
/// samples whichever of the two index sets is smaller and tests it against
/// the other, which is fixed to the leading indices. Trials run in chunks
/// with their own substreams, so the result does not depend on the thread
/// count.
pub fn p_b_monte_carlo(spec: &PopulationSpec, trials: u64, seed: u64) -> Result<(f64, f64)> {
    spec.validate()?;
    if trials == 0 {
        return Err(Error::InvalidSpec("trials must be at least 1".into()));
    }
    let m = spec.population() as usize;
    let (ne, nq) = (spec.items_per_class as usize, spec.queue_size as usize);
    let (drawn, fixed) = if ne <= nq { (ne, nq) } else { (nq, ne) };
    let chunks = trials.div_ceil(MC_CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, &[domain::MONTE_CARLO, c]);
            let n = MC_CHUNK.min(trials - c * MC_CHUNK);
            (0..n)
                .filter(|_| index::sample(&mut rng, m, drawn).iter().any(|i| i < fixed))
                .count() as u64
        })
        .sum();
    let p = hits as f64 / trials as f64;
    Ok((p, (p * (1.0 - p) / trials as f64).sqrt()))
}

/// Random valid spec with `N_c, N_e ≤ max_side` for property checks.
pub fn random_spec<R: Rng + ?Sized>(rng: &mut R, max_side: u64) -> PopulationSpec {
    let nc = rng.random_range(1..=max_side);
    let ne = rng.random_range(1..=max_side);
    let nq = rng.random_range(0..=nc * ne);
    PopulationSpec {
        num_classes: nc,
        items_per_class: ne,
        queue_size: nq,
    }
}

/// One line of the verification table.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryRow {
    pub spec: PopulationSpec,
    pub lower: f64,
    pub exact: f64,
    pub upper: f64,
    pub monte_carlo: Option<(f64, f64)>,
    pub pass: bool,
}

/// Bounds, exact value and (if `trials > 0`) a simulation for one spec.
/// A row passes when the bounds hold and the estimate lies within three
/// standard errors of the exact value. The larger of the estimate's SE and
/// the SE implied by the exact value is used, so a run that happens to
/// produce `p̂ ∈ {0, 1}` is not judged against a zero width.
pub fn verify_spec(spec: &PopulationSpec, trials: u64, seed: u64) -> Result<TheoryRow> {
    let exact = p_b_exact(spec)?;
    let (lower, upper) = p_b_bounds(spec)?;
    let monte_carlo = match trials {
        0 => None,
        t => Some(p_b_monte_carlo(spec, t, seed)?),
    };
    let tol = 1e-12;
    let mut pass = lower <= exact + tol && exact <= upper + tol;
    if let Some((est, se)) = monte_carlo {
        let se_exact = (exact * (1.0 - exact) / trials as f64).sqrt();
        pass &= (est - exact).abs() <= 3.0 * se.max(se_exact) + tol;
    }
    Ok(TheoryRow {
        spec: *spec,
        lower,
        exact,
        upper,
        monte_carlo,
        pass,
    })
}

pub const THEORY_CSV_HEADER: &str = "nc,ne,nq,lower,exact,mc_estimate,mc_se,upper,pass";

impl TheoryRow {
    pub fn to_csv(&self) -> String {
        let (est, se) = match self.monte_carlo {
            Some((e, s)) => (e.to_string(), s.to_string()),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.spec.num_classes,
            self.spec.items_per_class,
            self.spec.queue_size,
            self.lower,
            self.exact,
            est,
            se,
            self.upper,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

pub fn render_table(rows: &[TheoryRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<34} {:>12} {:>12} {:>26} {:>12}  result",
        "spec", "lower", "exact", "monte carlo ± SE", "upper"
    );
    for r in rows {
        let mc = match r.monte_carlo {
            Some((e, s)) => format!("{e:.8} ± {s:.8}"),
            None => "-".into(),
        };
        let _ = writeln!(
            out,
            "{:<34} {:>12.8} {:>12.8} {:>26} {:>12.8}  {}",
            r.spec.to_string(),
            r.lower,
            r.exact,
            mc,
            r.upper,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    out
}

pub fn write_theory_csv<W: Write>(mut out: W, rows: &[TheoryRow]) -> std::io::Result<()> {
    writeln!(out, "{THEORY_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    out.flush()
}

/// Hard-NN class-match rate for `n_queries` held-out items against a queue
/// of `queue_size` random items, all embedded by `embedder`.
pub fn p_psi_snapshot(
    embedder: &dyn Embedder,
    data: &LabeledDataset,
    queue_size: usize,
    n_queries: usize,
    seed: u64,
) -> Result<f64> {
    if queue_size == 0 || queue_size + n_queries > data.len() {
        return Err(Error::InvalidConfig(format!(
            "queue {queue_size} plus {n_queries} queries do not fit in {} samples",
            data.len()
        )));
    }
    let mut rng = substream(seed, &[domain::MONTE_CARLO, u64::MAX]);
    let picked = index::sample(&mut rng, data.len(), queue_size + n_queries).into_vec();
    let (queue_idx, query_idx) = picked.split_at(queue_size);

    let e = embedder.embed(data.samples())?.normalize_rows()?;
    let labels = data.labels();
    let mut queue = SupportSet::new(queue_size)?;
    queue.insert_batch(
        queue_idx
            .iter()
            .map(|&i| Ok(SupportEntry::new(Embedding::new(e.row(i).to_vec())?, Some(labels[i]), 0)))
            .collect::<Result<Vec<_>>>()?,
    )?;
    queue.class_match_rate(query_idx.iter().map(|&i| (e.row(i), labels[i])))
}

/// Trains with `config` and records a [`p_psi_snapshot`] of the online
/// encoder before the first step and after every `every` steps.
pub fn p_psi_curve(
    config: &TrainConfig,
    data: &LabeledDataset,
    every: u64,
    queue_size: usize,
    n_queries: usize,
) -> Result<Vec<(u64, f64)>> {
    let every = every.max(1);
    let snapshot = |t: &Trainer<'_>| {
        p_psi_snapshot(&t.state().online, data, queue_size, n_queries, config.seed)
    };
    let mut trainer = Trainer::new(config.clone(), data)?;
    let mut curve = vec![(0, snapshot(&trainer)?)];
    trainer.run(None, |t, r| {
        let done = r.step + 1;
        if done % every == 0 || done == config.steps {
            curve.push((done, snapshot(t)?));
        }
        Ok(())
    })?;
    Ok(curve)
}

pub fn write_p_psi_csv<W: Write>(mut out: W, curve: &[(u64, f64)]) -> std::io::Result<()> {
    writeln!(out, "step,p_psi")?;
    for (s, p) in curve {
        writeln!(out, "{s},{p}")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{gen_blobs, BlobSpec};
    use crate::vecspace::DenseMatrix;
    use proptest::prelude::*;

    fn spec(nc: u64, ne: u64, nq: u64) -> PopulationSpec {
        PopulationSpec::new(nc, ne, nq).unwrap()
    }

    /// `1 − C(M − N_q, N_e) / C(M, N_e)` by direct rational arithmetic.
    fn binomial_oracle(s: &PopulationSpec) -> f64 {
        let m = s.population() as u128;
        let (ne, nq) = (s.items_per_class as u128, s.queue_size as u128);
        if nq + ne > m {
            return 1.0;
        }
        let (mut num, mut den) = (1u128, 1u128);
        for j in 0..ne {
            num *= m - nq - j;
            den *= m - j;
        }
        1.0 - num as f64 / den as f64
    }

    #[test]
    fn examples() {
        assert_eq!(p_b_exact(&spec(3, 4, 12)).unwrap(), 1.0);
        assert_eq!(p_b_exact(&spec(3, 4, 0)).unwrap(), 0.0);
        let p = p_b_exact(&spec(20, 5, 5)).unwrap();
        let oracle = 1.0 - (95.0 * 94.0 * 93.0 * 92.0 * 91.0) / (100.0 * 99.0 * 98.0 * 97.0 * 96.0);
        assert!((p - oracle).abs() < 1e-14);
        // the exact value is 0.2304100…; the commonly quoted 0.23046 is a rounding slip
        assert!((p - 0.230410046711593).abs() < 1e-12);
        assert!((p - 0.23046).abs() < 1e-4);
        // pigeonhole: any 9 of 12 items include a class-0 item
        assert_eq!(p_b_exact(&spec(3, 4, 9)).unwrap(), 1.0);
    }

    #[test]
    fn invalid_specs() {
        assert!(matches!(PopulationSpec::new(0, 3, 0), Err(Error::InvalidSpec(_))));
        assert!(matches!(PopulationSpec::new(2, 3, 7), Err(Error::InvalidSpec(_))));
        let bad = PopulationSpec {
            num_classes: 2,
            items_per_class: 3,
            queue_size: 7,
        };
        assert!(p_b_exact(&bad).is_err());
        assert!(p_b_bounds(&bad).is_err());
    }

    #[test]
    fn large_queue_scenarios() {
        let s1 = spec(1000, 1000, 10_000);
        let p1 = p_b_exact(&s1).unwrap();
        let (lo, hi) = p_b_bounds(&s1).unwrap();
        assert!((0.99985..=1.0).contains(&p1), "{p1}");
        assert!(lo <= p1 && p1 <= hi);
        let p2 = p_b_exact(&spec(100, 100, 10_000)).unwrap();
        assert!(p2 > 0.9999);
    }

    #[test]
    fn monte_carlo_matches_exact() {
        let s = spec(20, 5, 5);
        let (est, se) = p_b_monte_carlo(&s, 100_000, 7).unwrap();
        let exact = p_b_exact(&s).unwrap();
        assert!((est - exact).abs() < 3.0 * se, "{est} ± {se} vs {exact}");
        assert_eq!(p_b_monte_carlo(&s, 100_000, 7).unwrap(), (est, se));
        assert_eq!(p_b_monte_carlo(&spec(4, 5, 20), 100, 1).unwrap(), (1.0, 0.0));
        assert_eq!(p_b_monte_carlo(&spec(4, 5, 0), 100, 1).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn verify_rows_render() {
        let rows = vec![
            verify_spec(&spec(20, 5, 5), 2000, 1).unwrap(),
            verify_spec(&spec(10, 10, 0), 0, 1).unwrap(),
        ];
        assert!(rows.iter().all(|r| r.pass));
        assert_eq!(rows[1].exact, 0.0);
        let table = render_table(&rows);
        assert_eq!(table.lines().count(), 3);
        let mut csv = Vec::new();
        write_theory_csv(&mut csv, &rows).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.lines().nth(2).unwrap().starts_with("10,10,0,0,0,,,0,PASS"));
    }

    #[test]
    fn p_psi_one_class_is_one() {
        let d = gen_blobs(&BlobSpec {
            class_count: 1,
            per_class: 50,
            dim: 3,
            ..BlobSpec::default()
        })
        .unwrap();
        let id = crate::evalkit::IdentityEmbedder;
        assert_eq!(p_psi_snapshot(&id, &d, 20, 30, 0).unwrap(), 1.0);
    }

    #[test]
    fn p_psi_of_constant_encoder_is_chance() {
        let c = 4u32;
        let d = gen_blobs(&BlobSpec {
            class_count: c,
            per_class: 1000,
            dim: 3,
            ..BlobSpec::default()
        })
        .unwrap();
        let constant = |x: &DenseMatrix| DenseMatrix::from_vec(x.rows(), 2, [0.6, 0.8].repeat(x.rows()));
        let n = 3000;
        let p = p_psi_snapshot(&constant, &d, 100, n, 3).unwrap();
        let chance = 1.0 / c as f64;
        let band = 3.0 * (chance * (1.0 - chance) / n as f64).sqrt();
        assert!((p - chance).abs() < band, "{p}");
    }

    proptest! {
        #[test]
        fn sandwich_holds(nc in 1u64..60, ne in 1u64..60, frac in 0.0f64..=1.0) {
            let nq = (frac * (nc * ne) as f64).floor() as u64;
            let s = spec(nc, ne, nq);
            let p = p_b_exact(&s).unwrap();
            let (lo, hi) = p_b_bounds(&s).unwrap();
            prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12, "{} {} {} {}", s, lo, p, hi);
            prop_assert!((0.0..=1.0).contains(&p));
            // strictness is only visible while 1 - hi is well above f64 resolution
            if ne >= 2 && nq > 0 && nq < s.population() - ne && 1.0 - hi > 1e-9 {
                prop_assert!(lo < p && p < hi);
            }
        }

        #[test]
        fn exact_matches_binomial_oracle(nc in 1u64..12, ne in 1u64..6, frac in 0.0f64..=1.0) {
            let nq = (frac * (nc * ne) as f64).floor() as u64;
            let s = spec(nc, ne, nq);
            prop_assert!((p_b_exact(&s).unwrap() - binomial_oracle(&s)).abs() < 1e-12);
        }

        #[test]
        fn exact_is_monotone_in_queue_size(nc in 1u64..40, ne in 1u64..40, frac in 0.0f64..1.0) {
            let m = nc * ne;
            let nq = (frac * m as f64).floor() as u64;
            let a = p_b_exact(&spec(nc, ne, nq)).unwrap();
            let b = p_b_exact(&spec(nc, ne, (nq + 1).min(m))).unwrap();
            prop_assert!(a <= b + 1e-15);
        }
    }
}
