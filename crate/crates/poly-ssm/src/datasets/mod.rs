//! Synthetic task generators and dataset files.
//!
//! Two task families live here. The count-in-row task labels each position of
//! a binary sequence with the length of the run of ones ending there, and the
//! classifier variant keeps the last-position label. The regression task draws
//! a random sparse polynomial and labels random points with its exact value,
//! optionally standardized by training-split statistics. Both generators
//! derive the randomness for sample `i` from `(seed, i)` alone, so a sample's
//! content does not depend on how many other samples were requested.
//!
//! Datasets serialize to JSON lines: a header object describing the task,
//! then one object per sample. Floats survive a save/load round trip exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::polyalg::{Monomial, MultiPoly};

/// Number of monomial terms in a randomly sampled polynomial task.
pub const NUM_POLY_TERMS: usize = 3;

/// Coefficients of a random polynomial task are drawn from this symmetric box.
pub const POLY_COEFF_BOUND: f64 = 2.0;

/// Regression inputs are drawn uniformly from this interval per coordinate.
pub const REGRESSION_INPUT_RANGE: (f64, f64) = (0.1, 2.0);

/// A standard deviation below this floor means the task has no label spread.
const DEGENERATE_STD_FLOOR: f64 = 1e-12;

/// One labeled binary sequence for the count-in-row task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountInRowSample {
    /// Binary input sequence, entries 0 or 1.
    pub x: Vec<u8>,
    /// Run length of ones ending at the last position.
    pub y: usize,
    /// Per-position labels, when the generator kept them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_seq: Option<Vec<usize>>,
}

/// A generated count-in-row dataset together with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountInRowDataset {
    /// Sequence length shared by every sample.
    pub l: usize,
    /// Seed the samples were derived from.
    pub seed: u64,
    /// Whether the last-position labels were balanced over `{0, ..., l}`.
    pub balanced: bool,
    pub samples: Vec<CountInRowSample>,
}

/// Per-position run-length labels of a binary sequence.
///
/// Position `i` is labeled with the length of the maximal run of ones ending
/// at `i`, and 0 where the entry itself is 0.
pub fn count_in_row_labels(x: &[u8]) -> Result<Vec<usize>> {
    let mut labels = Vec::with_capacity(x.len());
    let mut run = 0usize;
    for (i, &v) in x.iter().enumerate() {
        match v {
            0 => run = 0,
            1 => run += 1,
            other => {
                return Err(Error::InvalidInput {
                    reason: format!("entry {} is {other}, the sequence must be binary", i + 1),
                })
            }
        }
        labels.push(run);
    }
    Ok(labels)
}

/// Binary sequence whose last-position label is exactly `y`.
///
/// For `y < l` the tail is forced to `0` followed by `y` ones and the free
/// prefix is drawn uniformly, which is the conditional law of a uniform
/// binary sequence given its final run length.
fn sequence_with_final_run(y: usize, l: usize, rng: &mut Rng) -> Vec<u8> {
    if y >= l {
        return vec![1; l];
    }
    let mut x = Vec::with_capacity(l);
    for _ in 0..l - y - 1 {
        x.push(rng.bit() as u8);
    }
    x.push(0);
    x.extend(std::iter::repeat(1).take(y));
    x
}

/// Generate `n` count-in-row samples of length `l`.
///
/// With `balance` set, the last-position labels cycle through `{0, ..., l}`
/// so every label count is within one of uniform; this needs `n >= l + 1`.
/// Sample `i` is a deterministic function of `(seed, i)`.
pub fn generate_count_in_row(
    n: usize,
    l: usize,
    seed: u64,
    balance: bool,
) -> Result<CountInRowDataset> {
    if l == 0 {
        return Err(Error::InvalidInput {
            reason: "sequence length must be positive".into(),
        });
    }
    if balance && n < l + 1 {
        return Err(Error::InvalidInput {
            reason: format!(
                "balancing {n} samples over {} labels is infeasible, need at least {} samples",
                l + 1,
                l + 1
            ),
        });
    }
    let root = Rng::new(seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = root.derive(i as u64);
        let x = if balance {
            sequence_with_final_run(i % (l + 1), l, &mut rng)
        } else {
            (0..l).map(|_| rng.bit() as u8).collect()
        };
        let labels = count_in_row_labels(&x)?;
        let y = labels[l - 1];
        samples.push(CountInRowSample {
            x,
            y,
            y_seq: Some(labels),
        });
    }
    Ok(CountInRowDataset {
        l,
        seed,
        balanced: balance,
        samples,
    })
}

/// A sampled polynomial regression task: three monomial terms over `l`
/// variables with full exponent rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyTaskSpec {
    /// Term coefficients, each in `[-2, 2]`.
    pub coefficients: Vec<f64>,
    /// Exponent table, one row per term, entries in `{1, ..., l}`.
    pub exponents: Vec<Vec<u32>>,
    /// Seed the task was drawn from.
    pub seed: u64,
}

impl PolyTaskSpec {
    /// Number of input variables.
    pub fn l(&self) -> usize {
        self.exponents.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients.is_empty() || self.coefficients.len() != self.exponents.len() {
            return Err(Error::InvalidInput {
                reason: format!(
                    "task has {} coefficients for {} exponent rows",
                    self.coefficients.len(),
                    self.exponents.len()
                ),
            });
        }
        let l = self.l();
        if l == 0 {
            return Err(Error::InvalidInput {
                reason: "task has no variables".into(),
            });
        }
        for (i, c) in self.coefficients.iter().enumerate() {
            if !c.is_finite() || c.abs() > POLY_COEFF_BOUND {
                return Err(Error::InvalidInput {
                    reason: format!("coefficient {} is {c}, outside [-2, 2]", i + 1),
                });
            }
        }
        for (i, row) in self.exponents.iter().enumerate() {
            if row.len() != l {
                return Err(Error::InvalidInput {
                    reason: format!("exponent row {} has {} entries, expected {l}", i + 1, row.len()),
                });
            }
            if let Some(&p) = row.iter().find(|&&p| p < 1 || p as usize > l) {
                return Err(Error::InvalidInput {
                    reason: format!("exponent row {} holds {p}, outside 1..={l}", i + 1),
                });
            }
        }
        Ok(())
    }

    /// The polynomial this task labels points with.
    pub fn to_poly(&self) -> Result<MultiPoly> {
        self.validate()?;
        let l = self.l();
        let mut poly = MultiPoly::zero(l);
        for (row, &c) in self.exponents.iter().zip(&self.coefficients) {
            let pairs: Vec<(u32, u32)> = row
                .iter()
                .enumerate()
                .map(|(j, &p)| (j as u32 + 1, p))
                .collect();
            poly.add_term(Monomial::from_pairs(&pairs), c);
        }
        Ok(poly)
    }
}

/// Draw a random polynomial task over `l` variables.
///
/// Coefficients are uniform on `[-2, 2]` and every exponent is uniform on
/// `{1, ..., l}`, so each of the three terms touches all variables.
pub fn sample_random_poly_task(l: usize, seed: u64) -> Result<(PolyTaskSpec, MultiPoly)> {
    if l == 0 {
        return Err(Error::InvalidInput {
            reason: "a polynomial task needs at least one variable".into(),
        });
    }
    let mut rng = Rng::new(seed);
    let mut coefficients = Vec::with_capacity(NUM_POLY_TERMS);
    let mut exponents = Vec::with_capacity(NUM_POLY_TERMS);
    for _ in 0..NUM_POLY_TERMS {
        coefficients.push(rng.range(-POLY_COEFF_BOUND, POLY_COEFF_BOUND));
        exponents.push((0..l).map(|_| 1 + rng.below(l as u64) as u32).collect());
    }
    let task = PolyTaskSpec {
        coefficients,
        exponents,
        seed,
    };
    let poly = task.to_poly()?;
    Ok((task, poly))
}

/// Mean and standard deviation used to standardize regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizeStats {
    pub mean: f64,
    pub std: f64,
}

/// One labeled point of a polynomial regression task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSample {
    pub x: Vec<f64>,
    /// Training target, standardized when the dataset carries stats.
    pub y: f64,
    /// Exact polynomial value at `x`.
    pub y_raw: f64,
}

/// A generated regression dataset together with its task and target scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionDataset {
    pub task: PolyTaskSpec,
    /// Seed the samples were derived from.
    pub seed: u64,
    /// Standardization applied to `y`, `None` when targets are raw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<StandardizeStats>,
    pub samples: Vec<RegressionSample>,
}

impl RegressionDataset {
    /// Rescale targets with statistics estimated elsewhere, typically the
    /// training split when this is the matching test split.
    pub fn apply_stats(&mut self, stats: StandardizeStats) -> Result<()> {
        if !(stats.std > 0.0) || !stats.mean.is_finite() || !stats.std.is_finite() {
            return Err(Error::InvalidInput {
                reason: format!("standardization needs a positive std, got {}", stats.std),
            });
        }
        for s in &mut self.samples {
            s.y = (s.y_raw - stats.mean) / stats.std;
        }
        self.stats = Some(stats);
        Ok(())
    }
}

/// Generate `n` regression samples for `task`.
///
/// Inputs are uniform on `[0.1, 2]` per coordinate and `y_raw` is the exact
/// polynomial value. With `standardize` set, targets are shifted and scaled
/// by the mean and population standard deviation of this split, and those
/// statistics are recorded on the dataset. Sample `i` depends only on
/// `(seed, i)`.
pub fn generate_regression(
    task: &PolyTaskSpec,
    n: usize,
    seed: u64,
    standardize: bool,
) -> Result<RegressionDataset> {
    let poly = task.to_poly()?;
    let l = task.l();
    let (lo, hi) = REGRESSION_INPUT_RANGE;
    let root = Rng::new(seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = root.derive(i as u64);
        let x: Vec<f64> = (0..l).map(|_| rng.range(lo, hi)).collect();
        let y_raw = poly.eval(&x)?;
        samples.push(RegressionSample { x, y: y_raw, y_raw });
    }
    let mut dataset = RegressionDataset {
        task: task.clone(),
        seed,
        stats: None,
        samples,
    };
    if standardize {
        if n == 0 {
            return Err(Error::DegenerateTask {
                reason: "cannot estimate standardization from an empty split".into(),
            });
        }
        let mean = dataset.samples.iter().map(|s| s.y_raw).sum::<f64>() / n as f64;
        let var = dataset
            .samples
            .iter()
            .map(|s| (s.y_raw - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        if std <= DEGENERATE_STD_FLOOR * mean.abs().max(1.0) {
            return Err(Error::DegenerateTask {
                reason: format!("target standard deviation {std:e} leaves nothing to learn"),
            });
        }
        dataset.apply_stats(StandardizeStats { mean, std })?;
    }
    Ok(dataset)
}

/// Either task family, as stored in a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    CountInRow(CountInRowDataset),
    Regression(RegressionDataset),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::CountInRow(d) => d.samples.len(),
            Dataset::Regression(d) => d.samples.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sequence length of the samples.
    pub fn l(&self) -> usize {
        match self {
            Dataset::CountInRow(d) => d.l,
            Dataset::Regression(d) => d.task.l(),
        }
    }
}

/// First line of a dataset file: the task description without the samples.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DatasetHeader {
    CountInRow {
        l: usize,
        seed: u64,
        balanced: bool,
    },
    Regression {
        l: usize,
        seed: u64,
        task: PolyTaskSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stats: Option<StandardizeStats>,
    },
}

fn parse_error(path: &Path, line: usize, err: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: err.to_string(),
    }
}

/// Write a dataset as JSON lines: one header object, then one object per
/// sample. Floats are written so they read back to the same value.
pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut write_line = |value: String| -> Result<()> {
        writeln!(out, "{value}").map_err(|e| Error::io(path, e))
    };
    match dataset {
        Dataset::CountInRow(d) => {
            let header = DatasetHeader::CountInRow {
                l: d.l,
                seed: d.seed,
                balanced: d.balanced,
            };
            write_line(serde_json::to_string(&header).expect("header serializes"))?;
            for s in &d.samples {
                write_line(serde_json::to_string(s).expect("sample serializes"))?;
            }
        }
        Dataset::Regression(d) => {
            let header = DatasetHeader::Regression {
                l: d.task.l(),
                seed: d.seed,
                task: d.task.clone(),
                stats: d.stats,
            };
            write_line(serde_json::to_string(&header).expect("header serializes"))?;
            for s in &d.samples {
                write_line(serde_json::to_string(s).expect("sample serializes"))?;
            }
        }
    }
    Ok(())
}

/// Read a dataset written by [`save_dataset`].
///
/// Malformed lines are reported with their 1-based line number. A file with
/// no content loads as an empty dataset.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| parse_error(path, idx + 1, e))?;
        lines.push((idx + 1, line));
    }
    let mut content = lines
        .into_iter()
        .filter(|(_, line)| !line.trim().is_empty());
    let Some((header_line, header_text)) = content.next() else {
        return Ok(Dataset::CountInRow(CountInRowDataset {
            l: 0,
            seed: 0,
            balanced: false,
            samples: Vec::new(),
        }));
    };
    let header: DatasetHeader = serde_json::from_str(&header_text)
        .map_err(|e| parse_error(path, header_line, e))?;
    match header {
        DatasetHeader::CountInRow { l, seed, balanced } => {
            let mut samples = Vec::new();
            for (lineno, text) in content {
                let sample: CountInRowSample =
                    serde_json::from_str(&text).map_err(|e| parse_error(path, lineno, e))?;
                if sample.x.len() != l {
                    return Err(parse_error(
                        path,
                        lineno,
                        format!("sample has {} entries, the header says {l}", sample.x.len()),
                    ));
                }
                if let Some(&bad) = sample.x.iter().find(|&&v| v > 1) {
                    return Err(parse_error(path, lineno, format!("entry {bad} is not binary")));
                }
                samples.push(sample);
            }
            Ok(Dataset::CountInRow(CountInRowDataset {
                l,
                seed,
                balanced,
                samples,
            }))
        }
        DatasetHeader::Regression {
            l,
            seed,
            task,
            stats,
        } => {
            task.validate()
                .map_err(|e| parse_error(path, header_line, e))?;
            if task.l() != l {
                return Err(parse_error(
                    path,
                    header_line,
                    format!("header says {l} variables, the task has {}", task.l()),
                ));
            }
            let mut samples = Vec::new();
            for (lineno, text) in content {
                let sample: RegressionSample =
                    serde_json::from_str(&text).map_err(|e| parse_error(path, lineno, e))?;
                if sample.x.len() != l {
                    return Err(parse_error(
                        path,
                        lineno,
                        format!("sample has {} entries, the header says {l}", sample.x.len()),
                    ));
                }
                samples.push(sample);
            }
            Ok(Dataset::Regression(RegressionDataset {
                task,
                seed,
                stats,
                samples,
            }))
        }
    }
}
