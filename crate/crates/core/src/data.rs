//! Attribution data model: ingestion, validation and export.

use std::collections::HashSet;
use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::clustering::Partition;
use crate::error::{Error, Result};

/// Per-instance, per-feature attribution weights.
///
/// Immutable after construction: every value is finite, ids and feature
/// names are unique, and the value matrix is `n × m` with `n, m ≥ 1`.
/// Values are kept exactly as ingested (signed, unscaled).
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    instance_ids: Vec<String>,
    feature_names: Vec<String>,
    values: Array2<f64>,
    prior_labels: Option<Vec<i64>>,
}

impl AttributionMatrix {
    pub fn new(
        instance_ids: Vec<String>,
        feature_names: Vec<String>,
        values: Array2<f64>,
        prior_labels: Option<Vec<i64>>,
    ) -> Result<Self> {
        let (n, m) = values.dim();
        if n == 0 || m == 0 {
            return Err(Error::validation(format!(
                "attribution matrix must be non-empty, got {n}×{m}"
            )));
        }
        if instance_ids.len() != n {
            return Err(Error::validation(format!(
                "{} instance ids for {n} rows",
                instance_ids.len()
            )));
        }
        if feature_names.len() != m {
            return Err(Error::validation(format!(
                "{} feature names for {m} columns",
                feature_names.len()
            )));
        }
        if let Some(labels) = &prior_labels {
            if labels.len() != n {
                return Err(Error::validation(format!(
                    "{} prior labels for {n} rows",
                    labels.len()
                )));
            }
        }
        if let Some(dup) = first_duplicate(&instance_ids) {
            return Err(Error::validation(format!("duplicate instance id {dup:?}")));
        }
        if let Some(dup) = first_duplicate(&feature_names) {
            return Err(Error::validation(format!("duplicate feature name {dup:?}")));
        }
        if let Some(((r, c), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite value {v} at row {r}, column {c}"
            )));
        }
        Ok(Self {
            instance_ids,
            feature_names,
            values,
            prior_labels,
        })
    }

    /// Builds a matrix with ids `"0".."n-1"` and feature names `"f0".."f{m-1}"`.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let (n, m) = values.dim();
        let ids = (0..n).map(|i| i.to_string()).collect();
        let names = (0..m).map(|j| format!("f{j}")).collect();
        Self::new(ids, names, values, None)
    }

    pub fn n_instances(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn prior_labels(&self) -> Option<&[i64]> {
        self.prior_labels.as_deref()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

fn first_duplicate(items: &[String]) -> Option<&str> {
    let mut seen = HashSet::with_capacity(items.len());
    items
        .iter()
        .find(|s| !seen.insert(s.as_str()))
        .map(String::as_str)
}

/// A strictly increasing set of row indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Selection(Vec<usize>);

impl Selection {
    /// Sorts and deduplicates `indices`, rejecting any index `≥ n`.
    pub fn new(indices: impl IntoIterator<Item = usize>, n: usize) -> Result<Self> {
        let mut v: Vec<usize> = indices.into_iter().collect();
        if let Some(&bad) = v.iter().find(|&&i| i >= n) {
            return Err(Error::range(format!(
                "selection index {bad} out of range for {n} instances"
            )));
        }
        v.sort_unstable();
        v.dedup();
        Ok(Self(v))
    }

    pub fn all(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    /// Membership mask of length `n`.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.0 {
            if i < n {
                mask[i] = true;
            }
        }
        mask
    }

    pub(crate) fn check_against(&self, n: usize) -> Result<()> {
        match self.0.last() {
            Some(&last) if last >= n => Err(Error::range(format!(
                "selection index {last} out of range for {n} instances"
            ))),
            _ => Ok(()),
        }
    }
}

/// Mean attribution of one group, optionally restricted to a selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAggregate {
    pub group_id: usize,
    pub size: usize,
    pub mean_attribution: Vec<f64>,
}

/// Input format of [`load_attributions`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// JSON if the first non-blank byte is `{`, delimited text otherwise.
    #[default]
    Auto,
    Delimited,
    Json,
}

/// Ingestion settings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub format: InputFormat,
    /// Column holding the instance ids; rows are numbered when absent.
    pub id_column: Option<String>,
    /// Integer column with prior labels. Every cell must be filled.
    pub label_column: Option<String>,
    /// Field delimiter. Only comma and tab are detected automatically.
    pub delimiter: Option<u8>,
}

#[derive(Deserialize)]
struct JsonAttributions {
    #[serde(default)]
    instance_ids: Option<Vec<String>>,
    feature_names: Vec<String>,
    values: Vec<Vec<f64>>,
    #[serde(default)]
    prior_labels: Option<Vec<i64>>,
}

/// Reads an attribution table from delimited text (header row required) or
/// the JSON object form `{"instance_ids", "feature_names", "values"}`.
pub fn load_attributions<R: Read>(mut source: R, config: &IngestConfig) -> Result<AttributionMatrix> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| Error::Parse {
            row: 0,
            column: 0,
            message: format!("input is not valid UTF-8 text: {e}"),
        })?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    let format = match config.format {
        InputFormat::Auto if text.trim_start().starts_with('{') => InputFormat::Json,
        InputFormat::Auto => InputFormat::Delimited,
        f => f,
    };
    match format {
        InputFormat::Json => load_json(text),
        _ => load_delimited(text, config),
    }
}

fn load_json(text: &str) -> Result<AttributionMatrix> {
    let parsed: JsonAttributions = serde_json::from_str(text).map_err(|e| Error::Parse {
        row: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let n = parsed.values.len();
    let m = parsed.feature_names.len();
    let mut values = Array2::zeros((n, m));
    for (i, row) in parsed.values.iter().enumerate() {
        if row.len() != m {
            return Err(Error::Parse {
                row: i + 1,
                column: row.len().min(m) + 1,
                message: format!("expected {m} values, found {}", row.len()),
            });
        }
        for (j, &v) in row.iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    let ids = parsed
        .instance_ids
        .unwrap_or_else(|| (0..n).map(|i| i.to_string()).collect());
    AttributionMatrix::new(ids, parsed.feature_names, values, parsed.prior_labels)
}

fn detect_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    if header.contains('\t') && !header.contains(',') {
        b'\t'
    } else {
        b','
    }
}

fn load_delimited(text: &str, config: &IngestConfig) -> Result<AttributionMatrix> {
    let delimiter = config.delimiter.unwrap_or_else(|| detect_delimiter(text));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Parse {
            row: 0,
            column: 1,
            message: "missing header row".into(),
        });
    }

    let locate = |name: &Option<String>, what: &str| -> Result<Option<usize>> {
        match name {
            None => Ok(None),
            Some(name) => header
                .iter()
                .position(|h| h == name)
                .map(Some)
                .ok_or_else(|| Error::validation(format!("{what} column {name:?} not in header"))),
        }
    };
    let id_col = locate(&config.id_column, "id")?;
    let label_col = locate(&config.label_column, "label")?;
    if id_col.is_some() && id_col == label_col {
        return Err(Error::validation("id and label columns must differ"));
    }
    let value_cols: Vec<usize> = (0..header.len())
        .filter(|&c| Some(c) != id_col && Some(c) != label_col)
        .collect();
    let feature_names: Vec<String> = value_cols.iter().map(|&c| header[c].clone()).collect();

    let mut ids = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    let mut flat = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: record.len().min(header.len()) + 1,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        ids.push(match id_col {
            Some(c) => record[c].trim().to_string(),
            None => r.to_string(),
        });
        if let (Some(c), Some(labels)) = (label_col, labels.as_mut()) {
            let cell = record[c].trim();
            let label = cell.parse::<i64>().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                message: if cell.is_empty() {
                    "empty prior label (the label column must be fully populated)".into()
                } else {
                    format!("prior label {cell:?} is not an integer")
                },
            })?;
            labels.push(label);
        }
        for &c in &value_cols {
            let cell = record[c].trim();
            let v = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: c + 1,
                    message: format!("attribution value {cell:?} is not a finite number"),
                })?;
            flat.push(v);
        }
    }
    let values = Array2::from_shape_vec((ids.len(), feature_names.len()), flat)
        .map_err(|e| Error::validation(e.to_string()))?;
    AttributionMatrix::new(ids, feature_names, values, labels)
}

/// Selected rows as a table: ids plus every attribution value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<InstanceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub index: usize,
    pub id: String,
    pub values: Vec<f64>,
}

impl InstanceTable {
    /// Writes the table as CSV with header `id,<feature names...>`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(std::iter::once("id").chain(self.feature_names.iter().map(String::as_str)))
            .map_err(io)?;
        for row in &self.rows {
            let mut record = Vec::with_capacity(row.values.len() + 1);
            record.push(row.id.clone());
            record.extend(row.values.iter().map(f64::to_string));
            w.write_record(&record).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rows of `matrix` listed in `selection`, in index order.
pub fn export_selected_instances(
    matrix: &AttributionMatrix,
    selection: &Selection,
) -> Result<InstanceTable> {
    selection.check_against(matrix.n_instances())?;
    let rows = selection
        .indices()
        .iter()
        .map(|&i| InstanceRow {
            index: i,
            id: matrix.instance_ids[i].clone(),
            values: matrix.row(i).to_vec(),
        })
        .collect();
    Ok(InstanceTable {
        feature_names: matrix.feature_names.clone(),
        rows,
    })
}

/// Per-group mean attributions over the members of each group that are in
/// `selection` (all rows when `None`). Groups with no selected member report
/// size 0 and zero means.
pub fn export_group_aggregates(
    matrix: &AttributionMatrix,
    partition: &Partition,
    selection: Option<&Selection>,
) -> Result<Vec<GroupAggregate>> {
    let n = matrix.n_instances();
    if partition.n_instances() != n {
        return Err(Error::validation(format!(
            "partition covers {} instances, matrix has {n}",
            partition.n_instances()
        )));
    }
    let m = matrix.n_features();
    let k = partition.n_groups();
    let mut sums = vec![vec![0.0; m]; k];
    let mut sizes = vec![0usize; k];
    let mut accumulate = |i: usize| {
        let g = partition.labels()[i];
        sizes[g] += 1;
        for (s, v) in sums[g].iter_mut().zip(matrix.row(i)) {
            *s += v;
        }
    };
    match selection {
        Some(sel) => {
            sel.check_against(n)?;
            sel.indices().iter().copied().for_each(&mut accumulate);
        }
        None => (0..n).for_each(&mut accumulate),
    }
    Ok(sums
        .into_iter()
        .zip(sizes)
        .enumerate()
        .map(|(group_id, (mut sum, size))| {
            if size > 0 {
                sum.iter_mut().for_each(|s| *s /= size as f64);
            }
            GroupAggregate {
                group_id,
                size,
                mean_attribution: sum,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::Provenance;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn csv(text: &str) -> Result<AttributionMatrix> {
        load_attributions(
            text.as_bytes(),
            &IngestConfig {
                id_column: Some("id".into()),
                ..Default::default()
            },
        )
    }

    #[test]
    fn loads_small_csv_with_ids() {
        let m = csv("id,f1,f2\na,0.1,0.2\nb,0.3,0.4\n").unwrap();
        assert_eq!(m.instance_ids(), ["a", "b"]);
        assert_eq!(m.feature_names(), ["f1", "f2"]);
        assert_eq!(m.values(), &array![[0.1, 0.2], [0.3, 0.4]]);
        assert!(m.prior_labels().is_none());
    }

    #[test]
    fn missing_id_column_numbers_rows() {
        let m = load_attributions("f1,f2\n1,2\n3,4\n5,6\n".as_bytes(), &IngestConfig::default())
            .unwrap();
        assert_eq!(m.instance_ids(), ["0", "1", "2"]);
    }

    #[test]
    fn tab_delimiter_is_detected() {
        let m = load_attributions("a\tb\n1\t-2\n".as_bytes(), &IngestConfig::default()).unwrap();
        assert_eq!(m.values(), &array![[1.0, -2.0]]);
    }

    #[test]
    fn other_delimiters_need_explicit_config() {
        let text = "a;b\n1;2\n";
        // Without config the header is one column named "a;b" and "1;2" is not a number.
        assert!(matches!(
            load_attributions(text.as_bytes(), &IngestConfig::default()),
            Err(Error::Parse { row: 1, .. })
        ));
        let cfg = IngestConfig {
            delimiter: Some(b';'),
            ..Default::default()
        };
        assert_eq!(load_attributions(text.as_bytes(), &cfg).unwrap().n_features(), 2);
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let err = csv("id,f1,f2\na,abc,0.2\n").unwrap_err();
        assert_eq!(
            err,
            Error::Parse {
                row: 1,
                column: 2,
                message: "attribution value \"abc\" is not a finite number".into()
            }
        );
        assert!(matches!(csv("id,f1\na,NaN\n"), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        assert!(matches!(
            csv("id,f1\na,1\na,2\n"),
            Err(Error::Validation(msg)) if msg.contains("duplicate instance id")
        ));
    }

    #[test]
    fn ragged_rows_are_parse_errors() {
        assert!(matches!(
            csv("id,f1,f2\na,1,2\nb,3\n"),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn header_only_is_rejected() {
        assert!(matches!(csv("id,f1\n"), Err(Error::Validation(_))));
    }

    #[test]
    fn label_column_must_be_fully_populated() {
        let cfg = IngestConfig {
            label_column: Some("y".into()),
            ..Default::default()
        };
        let ok = load_attributions("f1,y\n0.5,1\n0.7,0\n".as_bytes(), &cfg).unwrap();
        assert_eq!(ok.prior_labels(), Some(&[1, 0][..]));
        assert_eq!(ok.n_features(), 1);
        assert!(matches!(
            load_attributions("f1,y\n0.5,1\n0.7,\n".as_bytes(), &cfg),
            Err(Error::Parse { row: 2, column: 2, .. })
        ));
    }

    #[test]
    fn json_form_loads() {
        let m = load_attributions(
            r#"{"instance_ids":["x","y"],"feature_names":["a"],"values":[[1.5],[-2]]}"#.as_bytes(),
            &IngestConfig::default(),
        )
        .unwrap();
        assert_eq!(m.instance_ids(), ["x", "y"]);
        assert_eq!(m.values(), &array![[1.5], [-2.0]]);
        assert!(matches!(
            load_attributions(
                r#"{"feature_names":["a","b"],"values":[[1,2],[3]]}"#.as_bytes(),
                &IngestConfig::default()
            ),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn fico_shaped_file_loads() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut text = String::from("id");
        for j in 0..37 {
            text.push_str(&format!(",feat{j}"));
        }
        text.push('\n');
        for i in 0..6600 {
            text.push_str(&format!("app{i}"));
            for _ in 0..37 {
                text.push_str(&format!(",{}", rng.random_range(-1.0..1.0)));
            }
            text.push('\n');
        }
        let m = csv(&text).unwrap();
        assert_eq!((m.n_instances(), m.n_features()), (6600, 37));
    }

    #[test]
    fn selection_normalizes_and_checks_range() {
        let s = Selection::new([3, 1, 2, 3], 4).unwrap();
        assert_eq!(s.indices(), [1, 2, 3]);
        assert!(matches!(Selection::new([4], 4), Err(Error::Range(_))));
    }

    #[test]
    fn export_all_echoes_matrix_and_empty_is_header_only() {
        let m = csv("id,f1,f2\na,0.1,0.2\nb,0.3,0.4\n").unwrap();
        let all = export_selected_instances(&m, &Selection::all(2)).unwrap();
        assert_eq!(all.rows.len(), 2);
        assert_eq!(all.rows[1].values, vec![0.3, 0.4]);

        let empty = export_selected_instances(&m, &Selection::empty()).unwrap();
        let mut out = Vec::new();
        empty.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "id,f1,f2\n");
    }

    #[test]
    fn export_rejects_selection_from_a_larger_matrix() {
        let m = AttributionMatrix::from_values(Array2::zeros((3, 2))).unwrap();
        let sel = Selection::new([5], 10).unwrap();
        assert!(matches!(export_selected_instances(&m, &sel), Err(Error::Range(_))));
    }

    #[test]
    fn export_subset_matches_row_lookup() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values = Array2::from_shape_fn((10, 3), |_| rng.random::<f64>());
        let m = AttributionMatrix::from_values(values.clone()).unwrap();
        let table = export_selected_instances(&m, &Selection::new([7, 2, 5], 10).unwrap()).unwrap();
        let picked: Vec<usize> = table.rows.iter().map(|r| r.index).collect();
        assert_eq!(picked, [2, 5, 7]);
        for r in &table.rows {
            assert_eq!(r.values, values.row(r.index).to_vec());
            assert_eq!(r.id, r.index.to_string());
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values = Array2::from_shape_fn((20, 4), |_| rng.random_range(-10.0..10.0));
        let m = AttributionMatrix::from_values(values).unwrap();
        let mut out = Vec::new();
        export_selected_instances(&m, &Selection::all(20))
            .unwrap()
            .write_csv(&mut out)
            .unwrap();
        let back = load_attributions(
            out.as_slice(),
            &IngestConfig {
                id_column: Some("id".into()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn aggregates_match_naive_group_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values = Array2::from_shape_fn((50, 4), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..50).map(|_| rng.random_range(0..3)).collect();
        let m = AttributionMatrix::from_values(values.clone()).unwrap();
        let part = Partition::from_labels(labels.clone(), values.view(), Provenance::Algorithmic).unwrap();
        let aggs = export_group_aggregates(&m, &part, None).unwrap();
        assert_eq!(aggs.len(), 3);
        for agg in &aggs {
            let members: Vec<usize> = (0..50).filter(|&i| labels[i] == agg.group_id).collect();
            assert_eq!(agg.size, members.len());
            for j in 0..4 {
                let mut s = 0.0;
                for &i in &members {
                    s += values[[i, j]];
                }
                let naive = s / members.len() as f64;
                assert!((agg.mean_attribution[j] - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aggregates_of_disjoint_selection_are_zero() {
        let values = array![[0.2, 1.0], [0.4, 3.0], [9.0, 9.0]];
        let m = AttributionMatrix::from_values(values.clone()).unwrap();
        let part = Partition::from_labels(vec![0, 0, 1], values.view(), Provenance::Algorithmic).unwrap();
        let aggs = export_group_aggregates(&m, &part, Some(&Selection::new([2], 3).unwrap())).unwrap();
        assert_eq!(aggs[0].size, 0);
        assert_eq!(aggs[0].mean_attribution, vec![0.0, 0.0]);
        assert_eq!(aggs[1].mean_attribution, vec![9.0, 9.0]);

        let full = export_group_aggregates(&m, &part, None).unwrap();
        assert!((full[0].mean_attribution[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn single_group_aggregate_is_column_mean() {
        let values = array![[1.0, 2.0], [3.0, 5.0], [5.0, -1.0]];
        let m = AttributionMatrix::from_values(values.clone()).unwrap();
        let part = Partition::from_labels(vec![0; 3], values.view(), Provenance::Algorithmic).unwrap();
        let aggs = export_group_aggregates(&m, &part, None).unwrap();
        let direct = values.mean_axis(ndarray::Axis(0)).unwrap();
        assert_eq!(aggs[0].mean_attribution, direct.to_vec());
    }
}
