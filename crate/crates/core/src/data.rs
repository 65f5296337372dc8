//! Dataset ingestion, standardization, synthetic generation, and the
//! two-level partition plan (feature blocks across silos, row shards across
//! clients within a silo).

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    MissingFile(String),
    #[error("could not parse field at data row {row}, column {column}")]
    ParseError { row: usize, column: usize },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("label column not found: {0}")]
    LabelNotFound(String),
    #[error("column {0} has zero variance and is not exempt")]
    ZeroVariance(usize),
    #[error("bad vertical widths: {0}")]
    BadWidths(String),
    #[error("{clients} clients but only {rows} rows")]
    TooManyClients { clients: usize, rows: usize },
}

/// Selects the label column of a CSV file either by header name or by
/// zero-based position.
#[derive(Debug, Clone)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

/// Per-column statistics recorded by [`standardize`].
#[derive(Debug, Clone)]
pub struct ColumnStats {
    /// Sample mean per column (0 for exempt columns).
    pub means: Vec<f64>,
    /// Population standard deviation per column, divisor M (1 for exempt
    /// columns).
    pub stds: Vec<f64>,
}

/// An in-memory dense dataset: M samples by D features plus M labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<f64>,
    /// Populated by [`standardize`], absent otherwise.
    pub stats: Option<ColumnStats>,
    /// Columns exempt from standardization (e.g. the bias column).
    pub exempt_columns: BTreeSet<usize>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<f64>) -> Self {
        assert_eq!(features.n_rows(), labels.len(), "label count mismatch");
        Self {
            features,
            labels,
            stats: None,
            exempt_columns: BTreeSet::new(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.features.n_rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.n_cols()
    }

    /// New dataset holding only the first `n` rows.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.n_samples());
        let idx: Vec<usize> = (0..n).collect();
        Dataset {
            features: self.features.take_rows(&idx),
            labels: self.labels[..n].to_vec(),
            stats: self.stats.clone(),
            exempt_columns: self.exempt_columns.clone(),
        }
    }
}

/// Parse a CSV file of finite reals into a [`Dataset`], removing the label
/// column from the feature matrix. Row order is preserved exactly.
///
/// `row` in a [`DataError::ParseError`] counts data rows from zero, after
/// the optional header; `column` is the position in the original record.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &LabelColumn,
    has_header: bool,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(false)
        .from_path(path)
        .map_err(|_| DataError::MissingFile(path.display().to_string()))?;

    let label_index = match label_column {
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(name) => {
            if !has_header {
                return Err(DataError::LabelNotFound(name.clone()));
            }
            let headers = reader
                .headers()
                .map_err(|_| DataError::LabelNotFound(name.clone()))?;
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::LabelNotFound(name.clone()))?
        }
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|_| DataError::ParseError {
            row: row_idx,
            column: 0,
        })?;
        if label_index >= record.len() {
            return Err(DataError::LabelNotFound(format!("index {label_index}")));
        }
        let mut features = Vec::with_capacity(record.len() - 1);
        for (col_idx, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| DataError::ParseError {
                row: row_idx,
                column: col_idx,
            })?;
            if !value.is_finite() {
                return Err(DataError::ParseError {
                    row: row_idx,
                    column: col_idx,
                });
            }
            if col_idx == label_index {
                labels.push(value);
            } else {
                features.push(value);
            }
        }
        rows.push(features);
    }
    if rows.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok(Dataset::new(Matrix::from_rows(&rows), labels))
}

/// Transform every non-exempt column to zero mean and unit variance
/// (population convention, divisor M). Exempt columns, both those passed
/// here and those already recorded on the dataset, are left untouched.
pub fn standardize(ds: &Dataset, exempt: &BTreeSet<usize>) -> Result<Dataset, DataError> {
    let m = ds.n_samples();
    let d = ds.n_features();
    let mut all_exempt = ds.exempt_columns.clone();
    all_exempt.extend(exempt.iter().copied());

    let mut means = vec![0.0; d];
    let mut stds = vec![1.0; d];
    for c in 0..d {
        if all_exempt.contains(&c) {
            continue;
        }
        let mut sum = 0.0;
        for r in 0..m {
            sum += ds.features.get(r, c);
        }
        let mean = sum / m as f64;
        let mut sq = 0.0;
        for r in 0..m {
            let delta = ds.features.get(r, c) - mean;
            sq += delta * delta;
        }
        let std = (sq / m as f64).sqrt();
        if std == 0.0 {
            return Err(DataError::ZeroVariance(c));
        }
        means[c] = mean;
        stds[c] = std;
    }

    let mut features = ds.features.clone();
    for r in 0..m {
        let row = features.row_mut(r);
        for c in 0..d {
            if !all_exempt.contains(&c) {
                row[c] = (row[c] - means[c]) / stds[c];
            }
        }
    }
    Ok(Dataset {
        features,
        labels: ds.labels.clone(),
        stats: Some(ColumnStats { means, stds }),
        exempt_columns: all_exempt,
    })
}

/// Append an all-ones column and record it as standardization-exempt.
pub fn append_bias(ds: &Dataset) -> Dataset {
    let m = ds.n_samples();
    let d = ds.n_features();
    let mut data = Vec::with_capacity(m * (d + 1));
    for r in 0..m {
        data.extend_from_slice(ds.features.row(r));
        data.push(1.0);
    }
    let mut exempt = ds.exempt_columns.clone();
    exempt.insert(d);
    let stats = ds.stats.as_ref().map(|s| {
        let mut means = s.means.clone();
        let mut stds = s.stds.clone();
        means.push(0.0);
        stds.push(1.0);
        ColumnStats { means, stds }
    });
    Dataset {
        features: Matrix::from_vec(m, d + 1, data),
        labels: ds.labels.clone(),
        stats,
        exempt_columns: exempt,
    }
}

/// Deterministic synthetic regression data: standard-normal features and
/// weights, labels `X w + noise`. Same seed, same bytes.
pub fn synth_regression(
    seed: u64,
    n_samples: usize,
    n_features: usize,
    noise_std: f64,
) -> (Dataset, Vec<f64>) {
    assert!(n_samples >= 1 && n_features >= 1);
    assert!(noise_std >= 0.0);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n_samples * n_features);
    for _ in 0..n_samples * n_features {
        data.push(rng.sample::<f64, _>(StandardNormal));
    }
    let weights: Vec<f64> = (0..n_features)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let features = Matrix::from_vec(n_samples, n_features, data);
    let mut labels = features.matvec(&weights);
    if noise_std > 0.0 {
        for y in labels.iter_mut() {
            *y += noise_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    (Dataset::new(features, labels), weights)
}

/// How a silo's rows are divided among its clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowScheme {
    /// Contiguous equal blocks, identical across silos.
    Contiguous,
    /// An independent seeded permutation per silo before splitting.
    Strided,
}

/// Vertical feature blocks per silo plus horizontal row shards per
/// (silo, client).
#[derive(Debug, Clone)]
pub struct PartitionPlan {
    pub n_silos: usize,
    pub clients_per_silo: usize,
    /// Contiguous, ordered, covering `[start, end)` column ranges, one per
    /// silo.
    pub vertical_blocks: Vec<(usize, usize)>,
    /// `row_assignment[silo][client]` is that client's sorted row set.
    pub row_assignment: Vec<Vec<Vec<usize>>>,
    /// True when every client shard has exactly M/K rows.
    pub equal_split: bool,
}

impl PartitionPlan {
    pub fn block_width(&self, silo: usize) -> usize {
        let (s, e) = self.vertical_blocks[silo];
        e - s
    }

    pub fn widths(&self) -> Vec<usize> {
        self.vertical_blocks.iter().map(|(s, e)| e - s).collect()
    }

    pub fn total_features(&self) -> usize {
        self.vertical_blocks.last().map_or(0, |(_, e)| *e)
    }

    pub fn n_rows(&self) -> usize {
        self.row_assignment[0].iter().map(|r| r.len()).sum()
    }

    /// True when every silo assigns the same row sets to its clients, which
    /// stratified minibatch sampling requires.
    pub fn identical_row_assignment(&self) -> bool {
        self.row_assignment
            .iter()
            .all(|per_silo| *per_silo == self.row_assignment[0])
    }

    pub fn min_shard_size(&self) -> usize {
        self.row_assignment
            .iter()
            .flat_map(|per_silo| per_silo.iter().map(|r| r.len()))
            .min()
            .unwrap_or(0)
    }
}

fn near_equal_widths(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts)
        .map(|i| if i < extra { base + 1 } else { base })
        .collect()
}

/// Build the two-level partition plan.
///
/// Default vertical split is near-equal with the first `D mod N` blocks one
/// column wider; `vertical_widths` overrides it. Rows default to contiguous
/// near-equal blocks identical across silos; `RowScheme::Strided` applies an
/// independent seeded shuffle per silo before splitting.
pub fn make_partition(
    n_rows: usize,
    n_features: usize,
    n_silos: usize,
    clients_per_silo: usize,
    vertical_widths: Option<Vec<usize>>,
    scheme: RowScheme,
    seed: Option<u64>,
) -> Result<PartitionPlan, DataError> {
    if n_silos == 0 || n_silos > n_features {
        return Err(DataError::BadWidths(format!(
            "{n_silos} silos cannot split {n_features} features"
        )));
    }
    if clients_per_silo == 0 || clients_per_silo > n_rows {
        return Err(DataError::TooManyClients {
            clients: clients_per_silo,
            rows: n_rows,
        });
    }
    let widths = match vertical_widths {
        Some(w) => {
            if w.len() != n_silos {
                return Err(DataError::BadWidths(format!(
                    "expected {} widths, got {}",
                    n_silos,
                    w.len()
                )));
            }
            if w.iter().sum::<usize>() != n_features || w.contains(&0) {
                return Err(DataError::BadWidths(format!(
                    "widths {w:?} do not cover {n_features} columns"
                )));
            }
            w
        }
        None => near_equal_widths(n_features, n_silos),
    };
    let mut vertical_blocks = Vec::with_capacity(n_silos);
    let mut start = 0;
    for w in &widths {
        vertical_blocks.push((start, start + w));
        start += w;
    }

    let shard_sizes = near_equal_widths(n_rows, clients_per_silo);
    let equal_split = n_rows % clients_per_silo == 0;
    let mut row_assignment = Vec::with_capacity(n_silos);
    for silo in 0..n_silos {
        let order: Vec<usize> = match scheme {
            RowScheme::Contiguous => (0..n_rows).collect(),
            RowScheme::Strided => {
                let mut rng = ChaCha20Rng::seed_from_u64(seed.unwrap_or(0));
                rng.set_stream(silo as u64);
                let mut order: Vec<usize> = (0..n_rows).collect();
                use rand::seq::SliceRandom;
                order.shuffle(&mut rng);
                order
            }
        };
        let mut per_silo = Vec::with_capacity(clients_per_silo);
        let mut offset = 0;
        for &size in &shard_sizes {
            let mut shard: Vec<usize> = order[offset..offset + size].to_vec();
            shard.sort_unstable();
            per_silo.push(shard);
            offset += size;
        }
        row_assignment.push(per_silo);
    }

    Ok(PartitionPlan {
        n_silos,
        clients_per_silo,
        vertical_blocks,
        row_assignment,
        equal_split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_csv_with_header_and_named_label() {
        let f = write_temp("a,b,y\n1,2,3\n4,5,6\n");
        let ds = load_csv(f.path(), &LabelColumn::Name("y".into()), true).unwrap();
        assert_eq!(ds.n_samples(), 2);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.labels, vec![3.0, 6.0]);
        assert_eq!(ds.features.row(1), &[4.0, 5.0]);
    }

    #[test]
    fn load_csv_parse_error_carries_position() {
        let f = write_temp("1,2\nx,5\n");
        let err = load_csv(f.path(), &LabelColumn::Index(1), false).unwrap_err();
        match err {
            DataError::ParseError { row, column } => {
                assert_eq!((row, column), (1, 0));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_csv_missing_and_empty() {
        assert!(matches!(
            load_csv("/no/such/file.csv", &LabelColumn::Index(0), false),
            Err(DataError::MissingFile(_))
        ));
        let f = write_temp("a,y\n");
        assert!(matches!(
            load_csv(f.path(), &LabelColumn::Name("y".into()), true),
            Err(DataError::EmptyDataset)
        ));
    }

    // The published training file keeps its first 20000 rows with 81 feature
    // columns; run with TDCD_SUPERCOND_CSV pointing at it.
    #[test]
    fn load_csv_superconductivity_when_available() {
        let Ok(path) = std::env::var("TDCD_SUPERCOND_CSV") else {
            return;
        };
        let ds = load_csv(&path, &LabelColumn::Name("critical_temp".into()), true).unwrap();
        let ds = ds.head(20000);
        assert_eq!(ds.n_samples(), 20000);
        assert_eq!(ds.n_features(), 81);
    }

    #[test]
    fn standardize_two_point_column() {
        let ds = Dataset::new(Matrix::from_rows(&[vec![1.0], vec![3.0]]), vec![0.0, 0.0]);
        let out = standardize(&ds, &BTreeSet::new()).unwrap();
        // Population std of [1,3] is 1, mean 2.
        assert_eq!(out.features.row(0), &[-1.0]);
        assert_eq!(out.features.row(1), &[1.0]);
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let ds = Dataset::new(Matrix::from_rows(&[vec![5.0], vec![5.0]]), vec![0.0, 0.0]);
        assert!(matches!(
            standardize(&ds, &BTreeSet::new()),
            Err(DataError::ZeroVariance(0))
        ));
    }

    #[test]
    fn standardize_random_matrix_has_unit_stats() {
        let (ds, _) = synth_regression(42, 10, 3, 0.0);
        let out = standardize(&ds, &BTreeSet::new()).unwrap();
        let m = out.n_samples() as f64;
        for c in 0..out.n_features() {
            let mean: f64 = (0..out.n_samples()).map(|r| out.features.get(r, c)).sum::<f64>() / m;
            let var: f64 = (0..out.n_samples())
                .map(|r| {
                    let d = out.features.get(r, c) - mean;
                    d * d
                })
                .sum::<f64>()
                / m;
            assert!(mean.abs() < 1e-12, "column {c} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-12, "column {c} std {}", var.sqrt());
        }
    }

    #[test]
    fn standardize_is_idempotent() {
        let (ds, _) = synth_regression(3, 20, 4, 1.0);
        let once = standardize(&ds, &BTreeSet::new()).unwrap();
        let twice = standardize(&once, &BTreeSet::new()).unwrap();
        for (a, b) in once.features.data().iter().zip(twice.features.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn append_bias_adds_exempt_ones_column() {
        let ds = Dataset::new(
            Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]),
            vec![0.0, 0.0],
        );
        let with_bias = append_bias(&ds);
        assert_eq!(with_bias.n_features(), 3);
        assert_eq!(with_bias.features.get(0, 2), 1.0);
        assert_eq!(with_bias.features.get(1, 2), 1.0);
        assert!(with_bias.exempt_columns.contains(&2));
        // A later standardize leaves the bias column untouched.
        let std = standardize(&with_bias, &BTreeSet::new()).unwrap();
        assert_eq!(std.features.get(0, 2), 1.0);
        assert_eq!(std.features.get(1, 2), 1.0);
    }

    #[test]
    fn synth_regression_zero_noise_interpolates() {
        let (ds, w) = synth_regression(7, 50, 6, 0.0);
        let pred = ds.features.matvec(&w);
        let resid: f64 = pred
            .iter()
            .zip(&ds.labels)
            .map(|(p, y)| (p - y) * (p - y))
            .sum();
        assert_eq!(resid, 0.0);
    }

    #[test]
    fn synth_regression_replays_bit_identically() {
        let (a, wa) = synth_regression(7, 30, 5, 0.25);
        let (b, wb) = synth_regression(7, 30, 5, 0.25);
        assert_eq!(a.features.data(), b.features.data());
        assert_eq!(a.labels, b.labels);
        assert_eq!(wa, wb);
    }

    #[test]
    fn synth_regression_ols_recovers_weights() {
        let (ds, w) = synth_regression(7, 100, 8, 0.0);
        // Normal-equations oracle: solve (X^T X) w = X^T y by Gaussian
        // elimination with partial pivoting.
        let d = ds.n_features();
        let gram = ds.features.gram();
        let rhs = ds.features.matvec_transpose(&ds.labels);
        let mut a: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                let mut row: Vec<f64> = gram.row(i).to_vec();
                row.push(rhs[i]);
                row
            })
            .collect();
        for col in 0..d {
            let pivot = (col..d)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            let p = a[col][col];
            for r in 0..d {
                if r != col {
                    let factor = a[r][col] / p;
                    for c in col..=d {
                        a[r][c] -= factor * a[col][c];
                    }
                }
            }
        }
        let solved: Vec<f64> = (0..d).map(|i| a[i][d] / a[i][i]).collect();
        for (got, want) in solved.iter().zip(&w) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn partition_default_widths() {
        let plan = make_partition(10, 8, 4, 1, None, RowScheme::Contiguous, None).unwrap();
        assert_eq!(plan.widths(), vec![2, 2, 2, 2]);
        let plan = make_partition(10, 82, 4, 1, None, RowScheme::Contiguous, None).unwrap();
        assert_eq!(plan.widths(), vec![21, 21, 20, 20]);
    }

    #[test]
    fn partition_contiguous_rows() {
        let plan = make_partition(10, 4, 2, 5, None, RowScheme::Contiguous, None).unwrap();
        for silo in 0..2 {
            assert_eq!(plan.row_assignment[silo][0], vec![0, 1]);
            assert_eq!(plan.row_assignment[silo][4], vec![8, 9]);
        }
        assert!(plan.equal_split);
        assert!(plan.identical_row_assignment());
    }

    #[test]
    fn partition_rejects_bad_inputs() {
        assert!(matches!(
            make_partition(10, 4, 2, 11, None, RowScheme::Contiguous, None),
            Err(DataError::TooManyClients { .. })
        ));
        assert!(matches!(
            make_partition(10, 4, 2, 2, Some(vec![1, 1]), RowScheme::Contiguous, None),
            Err(DataError::BadWidths(_))
        ));
        assert!(matches!(
            make_partition(10, 4, 5, 2, None, RowScheme::Contiguous, None),
            Err(DataError::BadWidths(_))
        ));
    }

    #[test]
    fn strided_partition_covers_rows_per_silo() {
        let plan = make_partition(11, 6, 3, 2, None, RowScheme::Strided, Some(9)).unwrap();
        assert!(!plan.equal_split);
        for silo in 0..3 {
            let mut all: Vec<usize> = plan.row_assignment[silo]
                .iter()
                .flatten()
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..11).collect::<Vec<_>>());
        }
        // Independent permutations per silo should disagree somewhere.
        assert!(!plan.identical_row_assignment());
        // Replays are identical.
        let again = make_partition(11, 6, 3, 2, None, RowScheme::Strided, Some(9)).unwrap();
        assert_eq!(plan.row_assignment, again.row_assignment);
    }
}
