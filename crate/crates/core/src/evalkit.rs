//! Frozen-encoder evaluation: linear probing, the representation contract
//! check and embedding export.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::datakit::{split, LabeledDataset};
use crate::encoder::{forward, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::rng::{domain, substream};
use crate::trainer::{train, TrainConfig};
use crate::vecspace::{cosine_sim, DenseMatrix};

/// Anything that maps a batch of inputs to a batch of embeddings without
/// changing state.
pub trait Embedder {
    fn embed(&self, x: &DenseMatrix) -> Result<DenseMatrix>;
}

/// The online encoder in evaluation mode (batch norm uses running stats).
impl Embedder for EncoderParams {
    fn embed(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(forward(self, x, Mode::Eval)?.0)
    }
}

/// Raw inputs as embeddings.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEmbedder;

impl Embedder for IdentityEmbedder {
    fn embed(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(x.clone())
    }
}

impl<F: Fn(&DenseMatrix) -> Result<DenseMatrix>> Embedder for F {
    fn embed(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub lr: f64,
    pub steps: usize,
    /// Labeled fraction used to train the probe when splitting a dataset.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            steps: 500,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub top1: f64,
    /// Test accuracy per class; 0 for classes without test items.
    pub per_class_accuracy: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl ProbeResult {
    /// Single-line `key=value` record.
    pub fn to_record(&self) -> String {
        let per_class = self
            .per_class_accuracy
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "probe top1={} n_train={} n_test={} seed={} per_class_accuracy={}",
            self.top1, self.n_train, self.n_test, self.seed, per_class
        )
    }
}

/// Multinomial logistic regression `softmax(W·e + b)` fitted by full-batch
/// gradient descent on the mean cross-entropy, starting from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxProbe {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl SoftmaxProbe {
    pub fn fit(features: &DenseMatrix, labels: &[u32], classes: usize, lr: f64, steps: usize) -> Result<Self> {
        let (n, d) = (features.rows(), features.cols());
        if labels.len() != n {
            return Err(Error::ShapeMismatch(format!("{} labels for {n} feature rows", labels.len())));
        }
        let mut probe = Self {
            weight: DenseMatrix::zeros(classes, d),
            bias: vec![0.0; classes],
        };
        for _ in 0..steps {
            let mut dlogits = probe.logits(features)?;
            for (i, &y) in labels.iter().enumerate() {
                let row = dlogits.row_mut(i);
                softmax_in_place(row);
                row[y as usize] -= 1.0;
                row.iter_mut().for_each(|v| *v /= n as f64);
            }
            let dw = dlogits.transpose().matmul(features)?;
            for (w, g) in probe.weight.as_mut_slice().iter_mut().zip(dw.as_slice()) {
                *w -= lr * g;
            }
            for c in 0..classes {
                let db: f64 = (0..n).map(|i| dlogits[(i, c)]).sum();
                probe.bias[c] -= lr * db;
            }
        }
        Ok(probe)
    }

    pub fn logits(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = features.matmul_transposed(&self.weight)?;
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Arg-max class per row; ties go to the lowest class index.
    pub fn predict(&self, features: &DenseMatrix) -> Result<Vec<u32>> {
        let logits = self.logits(features)?;
        Ok(logits
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best as u32
            })
            .collect())
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Trains a softmax probe on frozen embeddings of `train` and reports
/// Top-1 accuracy on `test`. The embedder is only read.
pub fn linear_probe(
    embedder: &dyn Embedder,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let classes = train.class_count().max(test.class_count()) as usize;
    let f_train = embedder.embed(train.samples())?;
    let f_test = embedder.embed(test.samples())?;
    let probe = SoftmaxProbe::fit(&f_train, train.labels(), classes, cfg.lr, cfg.steps)?;
    let predicted = probe.predict(&f_test)?;

    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for (&p, &y) in predicted.iter().zip(test.labels()) {
        counts[y as usize] += 1;
        hits[y as usize] += usize::from(p == y);
    }
    let per_class_accuracy = hits
        .iter()
        .zip(&counts)
        .map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 })
        .collect();
    Ok(ProbeResult {
        top1: hits.iter().sum::<usize>() as f64 / test.len() as f64,
        per_class_accuracy,
        n_train: train.len(),
        n_test: test.len(),
        seed: cfg.seed,
    })
}

/// Splits `data` with the probe seed, trains an encoder on the train side
/// (labels unused) and probes it. `config.steps = 0` gives the untrained
/// baseline.
pub fn train_and_probe(config: &TrainConfig, data: &LabeledDataset, probe: &ProbeConfig) -> Result<ProbeResult> {
    let (train_set, test_set) = split(data, probe.train_fraction, probe.seed)?;
    let (checkpoint, _) = train(config, &train_set)?;
    linear_probe(&checkpoint.state.online, &train_set, &test_set, probe)
}

/// Input triples `(x_i, x_j, x_k)` with `x_j` closer to `x_i` than `x_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Triples {
    pub anchor: DenseMatrix,
    pub near: DenseMatrix,
    pub far: DenseMatrix,
}

/// Samples `n` triples with `j` from the class of `i` and `k` from another
/// class, keeping only those where `‖x_i − x_j‖ < ‖x_i − x_k‖`.
pub fn sample_triples(data: &LabeledDataset, n: usize, seed: u64) -> Result<Triples> {
    let labels = data.labels();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.class_count() as usize];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y as usize].push(i);
    }
    if by_class.iter().filter(|c| !c.is_empty()).count() < 2 || by_class.iter().all(|c| c.len() < 2) {
        return Err(Error::InvalidConfig(
            "triples need two classes and a class with two samples".into(),
        ));
    }
    let x = data.samples();
    let dist2 = |a: usize, b: usize| -> f64 {
        x.row(a).iter().zip(x.row(b)).map(|(u, v)| (u - v) * (u - v)).sum()
    };
    let mut rng = substream(seed, &[domain::TRIPLES]);
    let mut idx = [Vec::new(), Vec::new(), Vec::new()];
    let budget = 1000 * n.max(1);
    for _ in 0..budget {
        if idx[0].len() == n {
            break;
        }
        let i = rng.random_range(0..data.len());
        let same = &by_class[labels[i] as usize];
        if same.len() < 2 {
            continue;
        }
        let j = same[rng.random_range(0..same.len())];
        let k = rng.random_range(0..data.len());
        if j == i || labels[k] == labels[i] || dist2(i, j) >= dist2(i, k) {
            continue;
        }
        idx[0].push(i);
        idx[1].push(j);
        idx[2].push(k);
    }
    if idx[0].len() < n {
        return Err(Error::InvalidConfig(format!(
            "found only {} of {n} ordered triples",
            idx[0].len()
        )));
    }
    Ok(Triples {
        anchor: x.select_rows(&idx[0]),
        near: x.select_rows(&idx[1]),
        far: x.select_rows(&idx[2]),
    })
}

/// Fraction of triples whose embedding cosine distances do not keep `j`
/// strictly closer to `i` than `k`.
pub fn representation_contract_check(embedder: &dyn Embedder, triples: &Triples) -> Result<f64> {
    let n = triples.anchor.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let a = embedder.embed(&triples.anchor)?.normalize_rows()?;
    let b = embedder.embed(&triples.near)?.normalize_rows()?;
    let c = embedder.embed(&triples.far)?.normalize_rows()?;
    let mut violations = 0usize;
    for t in 0..n {
        let d_near = 1.0 - cosine_sim(a.row(t), b.row(t))?;
        let d_far = 1.0 - cosine_sim(a.row(t), c.row(t))?;
        violations += usize::from(d_near >= d_far);
    }
    Ok(violations as f64 / n as f64)
}

/// CSV with header `label,e1,...,eD`, one row per sample.
pub fn write_embeddings_csv<W: Write>(
    mut out: W,
    embedder: &dyn Embedder,
    data: &LabeledDataset,
) -> Result<()> {
    let e = embedder.embed(data.samples())?;
    let mut header = String::from("label");
    for j in 1..=e.cols() {
        let _ = write!(header, ",e{j}");
    }
    writeln!(out, "{header}")?;
    for (row, label) in e.row_iter().zip(data.labels()) {
        let mut line = label.to_string();
        for v in row {
            let _ = write!(line, ",{v}");
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn export_embeddings(embedder: &dyn Embedder, data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_embeddings_csv(file, embedder, data)
}
