//! Seeded synthetic sequence-classification tasks and mini-batching.
//!
//! Every task labels a sequence by bag-of-token statistics, so the order of
//! tokens is irrelevant to the label.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid task spec: {0}")]
    Spec(String),
    #[error("could not draw {wanted} distinct sequences for class {label}")]
    Exhausted { wanted: usize, label: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// `C = 2^b` classes. Tokens `0..2b` form `b` motif pairs; bit `i` of the
    /// label is set when exactly one token of pair `(2i, 2i+1)` occurs.
    SparseMotif,
    /// The most frequent token among `0..C`; ties go to the smaller id.
    MajorityToken,
    /// Occurrences of token 0, modulo `C`.
    CountParity,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::SparseMotif => "sparse-motif",
            TaskKind::MajorityToken => "majority-token",
            TaskKind::CountParity => "count-parity",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sparse-motif" => Ok(TaskKind::SparseMotif),
            "majority-token" => Ok(TaskKind::MajorityToken),
            "count-parity" => Ok(TaskKind::CountParity),
            other => Err(DataError::Spec(format!("unknown task kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub kind: TaskKind,
    pub vocab: usize,
    pub seq_len: usize,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Spec(m));
        if self.n_classes < 2 {
            return bad(format!("n_classes = {} must be >= 2", self.n_classes));
        }
        if self.seq_len == 0 {
            return bad("seq_len must be >= 1".into());
        }
        if self.n_train == 0 {
            return bad("n_train must be >= 1".into());
        }
        match self.kind {
            TaskKind::SparseMotif => {
                if !self.n_classes.is_power_of_two() {
                    return bad(format!(
                        "sparse-motif needs a power-of-two n_classes, got {}",
                        self.n_classes
                    ));
                }
                let motif = 2 * self.n_classes.trailing_zeros() as usize;
                if self.vocab <= motif {
                    return bad(format!("sparse-motif needs vocab > {motif} for noise tokens"));
                }
                if self.seq_len < motif {
                    return bad(format!("sparse-motif needs seq_len >= {motif}"));
                }
            }
            TaskKind::MajorityToken => {
                if self.vocab < self.n_classes {
                    return bad(format!("majority-token needs vocab >= n_classes = {}", self.n_classes));
                }
            }
            TaskKind::CountParity => {
                if self.vocab < 2 {
                    return bad("count-parity needs vocab >= 2".into());
                }
                if self.seq_len + 1 < self.n_classes {
                    return bad(format!(
                        "count-parity needs seq_len >= n_classes - 1 = {}",
                        self.n_classes - 1
                    ));
                }
            }
        }
        Ok(())
    }

    /// The deterministic labelling rule of the task.
    pub fn label(&self, tokens: &[usize]) -> usize {
        match self.kind {
            TaskKind::SparseMotif => {
                let bits = self.n_classes.trailing_zeros() as usize;
                let mut present = vec![false; 2 * bits];
                for &t in tokens {
                    if t < 2 * bits {
                        present[t] = true;
                    }
                }
                (0..bits).fold(0, |acc, i| {
                    acc | (((present[2 * i] ^ present[2 * i + 1]) as usize) << i)
                })
            }
            TaskKind::MajorityToken => {
                let mut counts = vec![0usize; self.n_classes];
                for &t in tokens {
                    if t < self.n_classes {
                        counts[t] += 1;
                    }
                }
                let mut best = 0;
                for (c, &n) in counts.iter().enumerate() {
                    if n > counts[best] {
                        best = c;
                    }
                }
                best
            }
            TaskKind::CountParity => tokens.iter().filter(|&&t| t == 0).count() % self.n_classes,
        }
    }

    fn sample<R: Rng>(&self, label: usize, rng: &mut R) -> Vec<usize> {
        match self.kind {
            TaskKind::SparseMotif => {
                let bits = self.n_classes.trailing_zeros() as usize;
                let mut tokens = Vec::with_capacity(self.seq_len);
                for i in 0..bits {
                    let (a, b) = (2 * i, 2 * i + 1);
                    if (label >> i) & 1 == 1 {
                        tokens.push(if rng.random::<bool>() { a } else { b });
                    } else if rng.random::<bool>() {
                        tokens.extend([a, b]);
                    }
                }
                let lo = 2 * bits;
                while tokens.len() < self.seq_len {
                    tokens.push(rng.random_range(lo..self.vocab));
                }
                tokens.shuffle(rng);
                tokens
            }
            TaskKind::MajorityToken => loop {
                let tokens: Vec<usize> = (0..self.seq_len).map(|_| rng.random_range(0..self.vocab)).collect();
                if self.label(&tokens) == label {
                    return tokens;
                }
            },
            TaskKind::CountParity => {
                let choices: Vec<usize> = (label..=self.seq_len).step_by(self.n_classes).collect();
                let zeros = choices[rng.random_range(0..choices.len())];
                let mut tokens = vec![0; zeros];
                while tokens.len() < self.seq_len {
                    tokens.push(rng.random_range(1..self.vocab));
                }
                tokens.shuffle(rng);
                tokens
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Examples per class, indexed by label.
    pub fn label_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.examples {
            let ids: Vec<String> = e.tokens.iter().map(|t| t.to_string()).collect();
            writeln!(w, "{}\t{}", ids.join(" "), e.label)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, DataError> {
        let mut examples = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: &str| DataError::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let (ids, label) = line.split_once('\t').ok_or_else(|| parse_err("missing tab"))?;
            let tokens = ids
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| parse_err("bad token id")))
                .collect::<Result<Vec<_>, _>>()?;
            let label = label.trim().parse().map_err(|_| parse_err("bad label"))?;
            examples.push(Example { tokens, label });
        }
        Ok(Self { examples })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

const MAX_ATTEMPTS: usize = 10_000;

/// Builds train, dev and test splits. Labels within each split are dealt
/// round-robin and shuffled, so every class count is within one of the
/// others. No sequence appears twice across all three splits.
pub fn generate_dataset(spec: &SyntheticTaskSpec) -> Result<Splits, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = HashSet::new();
    let mut split = |n: usize, rng: &mut ChaCha8Rng| -> Result<Dataset, DataError> {
        let mut labels: Vec<usize> = (0..n).map(|i| i % spec.n_classes).collect();
        labels.shuffle(rng);
        let mut examples = Vec::with_capacity(n);
        for label in labels {
            let mut attempts = 0;
            let tokens = loop {
                let tokens = spec.sample(label, rng);
                if seen.insert(tokens.clone()) {
                    break tokens;
                }
                attempts += 1;
                if attempts >= MAX_ATTEMPTS {
                    return Err(DataError::Exhausted { wanted: n, label });
                }
            };
            examples.push(Example { tokens, label });
        }
        Ok(Dataset { examples })
    };
    let train = split(spec.n_train, &mut rng)?;
    let dev = split(spec.n_dev, &mut rng)?;
    let test = split(spec.n_test, &mut rng)?;
    Ok(Splits { train, dev, test })
}

/// Number of mini-batches in one epoch; the last short batch counts.
pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size.max(1))
}

/// Total optimizer steps for `epochs` passes.
pub fn total_steps(n: usize, batch_size: usize, epochs: usize) -> usize {
    epochs * batches_per_epoch(n, batch_size)
}

/// Shuffled index batches for one epoch. The permutation depends only on
/// `epoch_seed`; the last batch may be short.
pub fn batch_indices(n: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Mini-batches of one epoch as borrowed examples.
pub fn batch_iterator(dataset: &Dataset, batch_size: usize, epoch_seed: u64) -> impl Iterator<Item = Vec<&Example>> {
    batch_indices(dataset.len(), batch_size, epoch_seed)
        .into_iter()
        .map(move |idx| idx.into_iter().map(|i| &dataset.examples[i]).collect())
}

/// Seed of epoch `epoch` of a run seeded with `seed`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(0xD1B5_4A32_D192_ED03)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: TaskKind) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            kind,
            vocab: 16,
            seq_len: 16,
            n_classes: 4,
            n_train: 400,
            n_dev: 50,
            n_test: 50,
            seed: 11,
        }
    }

    #[test]
    fn labels_follow_rules() {
        let s = spec(TaskKind::MajorityToken);
        assert_eq!(s.label(&[3; 16]), 3);
        assert_eq!(s.label(&[1, 2, 2, 1, 9]), 1);
        assert_eq!(s.label(&[9, 9, 9]), 0);
        let p = spec(TaskKind::CountParity);
        assert_eq!(p.label(&[0, 0, 0, 0, 0, 5]), 1);
        let m = spec(TaskKind::SparseMotif);
        assert_eq!(m.label(&[0, 7, 7]), 1);
        assert_eq!(m.label(&[0, 1, 3]), 2);
        assert_eq!(m.label(&[0, 2, 9]), 3);
        assert_eq!(m.label(&[0, 1, 2, 3]), 0);
    }

    #[test]
    fn generation_is_labelled_balanced_and_disjoint() {
        for kind in [TaskKind::SparseMotif, TaskKind::MajorityToken, TaskKind::CountParity] {
            let s = spec(kind);
            let splits = generate_dataset(&s).unwrap();
            let mut all = HashSet::new();
            for d in [&splits.train, &splits.dev, &splits.test] {
                for e in &d.examples {
                    assert_eq!(s.label(&e.tokens), e.label);
                    assert_eq!(e.tokens.len(), 16);
                    assert!(e.tokens.iter().all(|&t| t < 16));
                    assert!(all.insert(e.tokens.clone()));
                }
                let c = d.label_counts(4);
                assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1, "{kind}: {c:?}");
            }
            assert_eq!(generate_dataset(&s).unwrap(), splits);
        }
    }

    #[test]
    fn sparse_motif_uses_each_motif_token_at_most_once() {
        let splits = generate_dataset(&spec(TaskKind::SparseMotif)).unwrap();
        for e in &splits.train.examples {
            for m in 0..4 {
                assert!(e.tokens.iter().filter(|&&t| t == m).count() <= 1);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(TaskKind::SparseMotif);
        s.n_classes = 3;
        assert!(generate_dataset(&s).is_err());
        let mut s = spec(TaskKind::SparseMotif);
        s.vocab = 4;
        assert!(s.validate().is_err());
        let mut s = spec(TaskKind::MajorityToken);
        s.vocab = 3;
        assert!(s.validate().is_err());
        let mut s = spec(TaskKind::CountParity);
        s.n_classes = 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn exhausted_space_is_an_error() {
        let s = SyntheticTaskSpec {
            kind: TaskKind::CountParity,
            vocab: 2,
            seq_len: 2,
            n_classes: 2,
            n_train: 10,
            n_dev: 0,
            n_test: 0,
            seed: 1,
        };
        assert!(matches!(generate_dataset(&s), Err(DataError::Exhausted { .. })));
    }

    #[test]
    fn line_format_round_trip() {
        let d = generate_dataset(&spec(TaskKind::CountParity)).unwrap().dev;
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains('\t'));
        assert_eq!(Dataset::read_from(&buf[..]).unwrap(), d);
        assert!(matches!(
            Dataset::read_from(&b"1 2 3\n"[..]),
            Err(DataError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn batching_partitions_each_epoch() {
        let b = batch_indices(100, 32, 5);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [32, 32, 32, 4]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(batch_indices(100, 32, 5), b);
        assert_ne!(batch_indices(100, 32, 6), b);
        assert_eq!(total_steps(100, 32, 1), 4);
        assert_eq!(total_steps(8000, 32, 10), 2500);
    }
}
