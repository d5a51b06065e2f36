//! Labelled corpora: CSV loading, agent partitioning, synthetic generators.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::environment::LabeledData;
use crate::rng::{Domain, SeedTree};
use crate::{Error, Result};

/// Reads a CSV corpus: one sample per row, features then a 0/1 label in the
/// last column. A first row containing a non-numeric cell is taken to be a
/// header and skipped. With `columns = Some(k)` only the first `k` feature
/// columns are kept.
pub fn load_dataset(path: &Path, columns: Option<usize>) -> Result<LabeledData> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(std::io::BufReader::new(file), path, columns)
}

pub fn parse_dataset<R: std::io::Read>(input: R, origin: &Path, columns: Option<usize>) -> Result<LabeledData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let err = |line: usize, msg: String| Error::Dataset {
        path: origin.into(),
        line,
        msg,
    };
    let mut width: Option<usize> = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let line = k + 1;
        let row = row.map_err(|e| err(line, e.to_string()))?;
        if row.iter().all(|c| c.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = row.iter().map(|c| c.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if k == 0 => continue,
            Err(e) => return Err(err(line, format!("non-numeric cell: {e}"))),
        };
        if values.len() < 2 {
            return Err(err(line, "need at least one feature and a label".into()));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(err(line, format!("expected {w} columns, found {}", values.len())));
            }
            _ => {}
        }
        let (x, y) = values.split_at(values.len() - 1);
        let label = y[0];
        if label != 0.0 && label != 1.0 {
            return Err(err(line, format!("label must be 0 or 1, found {label}")));
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(err(line, format!("non-finite feature {bad}")));
        }
        let keep = columns.unwrap_or(x.len());
        if keep == 0 || keep > x.len() {
            return Err(err(line, format!("cannot keep {keep} of {} feature columns", x.len())));
        }
        features.extend_from_slice(&x[..keep]);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(err(0, "no data rows".into()));
    }
    let dim = features.len() / labels.len();
    LabeledData::new(dim, features, labels)
}

/// Agent shards and a test split drawn from one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub shards: Vec<Arc<LabeledData>>,
    pub test: Option<Arc<LabeledData>>,
    /// Corpus row indices of each shard.
    pub agent_rows: Vec<Vec<usize>>,
    pub test_rows: Vec<usize>,
}

fn gather(table: &LabeledData, rows: &[usize]) -> Result<LabeledData> {
    let mut x = Vec::with_capacity(rows.len() * table.dim());
    let mut y = Vec::with_capacity(rows.len());
    for &r in rows {
        x.extend_from_slice(table.features(r));
        y.push(table.label(r));
    }
    LabeledData::new(table.dim(), x, y)
}

/// Shuffles the rows with `seed` and deals `per_agent` rows to each of `n`
/// agents, then `test` rows to the test split.
pub fn partition_agents(table: &LabeledData, n: usize, per_agent: usize, test: usize, seed: u64) -> Result<DatasetBundle> {
    let required = n * per_agent + test;
    if n == 0 || per_agent == 0 {
        return Err(Error::InvalidSize("partition needs n >= 1 and per_agent >= 1".into()));
    }
    if required > table.len() {
        return Err(Error::InsufficientRows {
            required,
            available: table.len(),
        });
    }
    let mut order: Vec<usize> = (0..table.len()).collect();
    let mut rng = SeedTree::new(seed).stream(Domain::Partition, 0, 0);
    order.shuffle(&mut rng);
    let agent_rows: Vec<Vec<usize>> = (0..n).map(|i| order[i * per_agent..(i + 1) * per_agent].to_vec()).collect();
    let test_rows = order[n * per_agent..required].to_vec();
    let shards = agent_rows
        .iter()
        .map(|rows| gather(table, rows).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetBundle {
        shards,
        test: if test_rows.is_empty() {
            None
        } else {
            Some(Arc::new(gather(table, &test_rows)?))
        },
        agent_rows,
        test_rows,
    })
}

impl DatasetBundle {
    /// Wraps shards that were generated per agent rather than dealt from a
    /// single corpus.
    pub fn from_shards(shards: Vec<Arc<LabeledData>>, test: Option<Arc<LabeledData>>) -> Self {
        Self {
            agent_rows: shards.iter().map(|s| (0..s.len()).collect()).collect(),
            test_rows: test.as_ref().map(|t| (0..t.len()).collect()).unwrap_or_default(),
            shards,
            test,
        }
    }

    /// Z-scores every feature column using statistics of the training rows
    /// (all shards). Constant columns are only centred.
    pub fn standardized(&self) -> Self {
        let d = self.shards[0].dim();
        let mut count = 0.0;
        let mut mean = vec![0.0; d];
        for s in &self.shards {
            for k in 0..s.len() {
                count += 1.0;
                for (m, x) in mean.iter_mut().zip(s.features(k)) {
                    *m += x;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; d];
        for s in &self.shards {
            for k in 0..s.len() {
                for ((v, x), m) in var.iter_mut().zip(s.features(k)).zip(&mean) {
                    *v += (x - m).powi(2);
                }
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|v| {
                let sd = (v / count).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let apply = |data: &LabeledData| -> Arc<LabeledData> {
            let mut x = Vec::with_capacity(data.len() * d);
            for k in 0..data.len() {
                x.extend(data.features(k).iter().zip(&mean).zip(&scale).map(|((x, m), s)| (x - m) / s));
            }
            Arc::new(LabeledData::new(d, x, data.labels().to_vec()).expect("same shape"))
        };
        Self {
            shards: self.shards.iter().map(|s| apply(s)).collect(),
            test: self.test.as_deref().map(apply),
            agent_rows: self.agent_rows.clone(),
            test_rows: self.test_rows.clone(),
        }
    }
}

/// A binary corpus from a two-class Gaussian model: labels are Bernoulli
/// with rate `positive_rate`, features are `N(0, I)` shifted by
/// `separation * u` for positives and `-separation * u * r/(1-r)` for
/// negatives along a fixed random unit direction `u`, so the corpus mean is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpus {
    pub rows: usize,
    pub dim: usize,
    pub seed: u64,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_positive_rate")]
    pub positive_rate: f64,
}

fn default_separation() -> f64 {
    1.5
}

fn default_positive_rate() -> f64 {
    0.4
}

pub fn synthetic_corpus(corpus: &SyntheticCorpus) -> Result<LabeledData> {
    if corpus.rows == 0 || corpus.dim == 0 || !(corpus.positive_rate > 0.0 && corpus.positive_rate < 1.0) {
        return Err(Error::Config(format!("invalid synthetic corpus {corpus:?}")));
    }
    let tree = SeedTree::new(corpus.seed);
    let mut rng = tree.stream(Domain::Generator, 0, 0);
    let mut u: Vec<f64> = (0..corpus.dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= norm);
    let r = corpus.positive_rate;
    let mut x = Vec::with_capacity(corpus.rows * corpus.dim);
    let mut y = Vec::with_capacity(corpus.rows);
    for _ in 0..corpus.rows {
        let positive = rng.random::<f64>() < r;
        let shift = if positive { corpus.separation } else { -corpus.separation * r / (1.0 - r) };
        for uj in &u {
            let noise: f64 = rng.sample(StandardNormal);
            x.push(noise + shift * uj);
        }
        y.push(if positive { 1.0 } else { 0.0 });
    }
    LabeledData::new(corpus.dim, x, y)
}

/// Per-agent logistic data in the spirit of federated synthetic benchmarks:
/// agent `i` has its own weight vector `w_i = w + heterogeneity * N(0, I)`
/// and feature mean `heterogeneity * N(0, I)`; labels are Bernoulli with
/// probability `sigmoid(<w_i, x>)`. Each agent additionally draws
/// `test_per_agent` rows from its own model; these are pooled into the
/// test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeterogeneousCorpus {
    pub agents: usize,
    pub per_agent: usize,
    #[serde(default)]
    pub test_per_agent: usize,
    pub dim: usize,
    pub heterogeneity: f64,
    pub seed: u64,
}

pub fn heterogeneous_corpus(corpus: &HeterogeneousCorpus) -> Result<DatasetBundle> {
    if corpus.agents == 0 || corpus.per_agent == 0 || corpus.dim == 0 {
        return Err(Error::Config(format!("invalid heterogeneous corpus {corpus:?}")));
    }
    let tree = SeedTree::new(corpus.seed);
    let d = corpus.dim;
    let scale = 1.0 / (d as f64).sqrt();
    let mut shared = tree.stream(Domain::Generator, 0, 0);
    let w: Vec<f64> = (0..d).map(|_| 2.0 * shared.sample::<f64, _>(StandardNormal)).collect();
    let rows = corpus.per_agent + corpus.test_per_agent;
    let per_agent: Vec<LabeledData> = (0..corpus.agents)
        .map(|i| {
            let mut rng = tree.stream(Domain::Generator, i as u32 + 1, 0);
            let wi: Vec<f64> = w.iter().map(|wj| wj + corpus.heterogeneity * rng.sample::<f64, _>(StandardNormal)).collect();
            let mi: Vec<f64> = (0..d).map(|_| corpus.heterogeneity * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut x = Vec::with_capacity(rows * d);
            let mut y = Vec::with_capacity(rows);
            for _ in 0..rows {
                let row: Vec<f64> = mi.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect();
                let score: f64 = row.iter().zip(&wi).map(|(a, b)| a * b).sum::<f64>() * scale;
                let p = crate::environment::sigmoid(score);
                y.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
                x.extend(row);
            }
            LabeledData::new(d, x, y)
        })
        .collect::<Result<_>>()?;
    let split = corpus.per_agent * d;
    let mut shards = Vec::with_capacity(corpus.agents);
    let mut test_x = Vec::new();
    let mut test_y = Vec::new();
    for data in &per_agent {
        let x: Vec<f64> = (0..rows).flat_map(|k| data.features(k).to_vec()).collect();
        shards.push(Arc::new(LabeledData::new(d, x[..split].to_vec(), data.labels()[..corpus.per_agent].to_vec())?));
        test_x.extend_from_slice(&x[split..]);
        test_y.extend_from_slice(&data.labels()[corpus.per_agent..]);
    }
    let test = if test_y.is_empty() {
        None
    } else {
        Some(Arc::new(LabeledData::new(d, test_x, test_y)?))
    };
    Ok(DatasetBundle::from_shards(shards, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LabeledData> {
        parse_dataset(text.as_bytes(), Path::new("toy.csv"), None)
    }

    #[test]
    fn toy_csv() {
        let t = parse("0.1,2,1\n3,4,0\n-1,0.5,1\n").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.dim(), 2);
        assert_eq!(t.labels(), &[1.0, 0.0, 1.0]);
        assert_eq!(t.features(1), &[3.0, 4.0]);
    }

    #[test]
    fn header_is_skipped() {
        let t = parse("a,b,spam\n1,2,1\n").unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse("1,2,1\n3,x,0\n") {
            Err(Error::Dataset { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse("1,2,1\n3,4,2\n") {
            Err(Error::Dataset { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("label"));
            }
            other => panic!("{other:?}"),
        }
        match parse("1,2,1\n3,4\n") {
            Err(Error::Dataset { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn column_selection() {
        let t = parse_dataset("1,2,3,1\n4,5,6,0\n".as_bytes(), Path::new("x"), Some(2)).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.features(1), &[4.0, 5.0]);
    }

    fn corpus(rows: usize) -> LabeledData {
        synthetic_corpus(&SyntheticCorpus {
            rows,
            dim: 48,
            seed: 7,
            separation: 1.5,
            positive_rate: 0.4,
        })
        .unwrap()
    }

    #[test]
    fn full_scale_partition() {
        let table = corpus(4601);
        let b = partition_agents(&table, 25, 138, 1150, 3).unwrap();
        assert_eq!(b.shards.len(), 25);
        assert!(b.shards.iter().all(|s| s.len() == 138));
        assert_eq!(b.test.as_ref().unwrap().len(), 1150);
        let mut all: Vec<usize> = b.agent_rows.concat();
        all.extend(&b.test_rows);
        assert_eq!(all.len(), 4600);
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 4600, "shards and test split overlap");
        assert_eq!(partition_agents(&table, 25, 138, 1150, 3).unwrap(), b);
        assert_ne!(partition_agents(&table, 25, 138, 1150, 4).unwrap().agent_rows, b.agent_rows);
    }

    #[test]
    fn single_agent_owns_everything() {
        let table = corpus(50);
        let b = partition_agents(&table, 1, 50, 0, 0).unwrap();
        assert_eq!(b.shards[0].len(), 50);
        assert!(b.test.is_none());
    }

    #[test]
    fn insufficient_rows() {
        match partition_agents(&corpus(100), 25, 4, 1, 0) {
            Err(Error::InsufficientRows { required, available }) => assert_eq!((required, available), (101, 100)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn standardization_uses_training_rows() {
        let b = partition_agents(&corpus(600), 5, 100, 100, 1).unwrap().standardized();
        let train = LabeledData::concat(b.shards.iter().map(|s| s.as_ref())).unwrap();
        for j in 0..train.dim() {
            let col: Vec<f64> = (0..train.len()).map(|k| train.features(k)[j]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn generators_are_seeded() {
        let corpus = HeterogeneousCorpus {
            agents: 4,
            per_agent: 20,
            test_per_agent: 5,
            dim: 5,
            heterogeneity: 1.0,
            seed: 9,
        };
        let b = heterogeneous_corpus(&corpus).unwrap();
        assert_eq!(b, heterogeneous_corpus(&corpus).unwrap());
        assert_eq!(b.test.as_ref().unwrap().len(), 20);
        let a = &b.shards;
        assert_ne!(a[0], a[1]);
        let labels: f64 = a.iter().flat_map(|s| s.labels().to_vec()).sum();
        assert!(labels > 0.0 && labels < 80.0);
    }
}
