//! Immutable unit-level table: covariates, binary treatment, outcome and
//! optional simulation ground truth, plus CSV ingestion and splitting.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Simulation-only record. Estimators never read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GroundTruth<T> {
    pub true_group: u32,
    pub true_cate: T,
    pub y0: T,
    pub y1: T,
    pub z: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    covariate_names: Vec<String>,
    /// Row-major `n x k`.
    covariates: Vec<T>,
    treatment: Vec<u8>,
    outcome: Vec<T>,
    ground_truth: Option<Vec<GroundTruth<T>>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        covariate_names: Vec<String>,
        covariates: Vec<T>,
        treatment: Vec<u8>,
        outcome: Vec<T>,
    ) -> Result<Self> {
        let n = treatment.len();
        let k = covariate_names.len();
        if outcome.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: outcome.len(),
            });
        }
        if covariates.len() != n * k {
            return Err(Error::LengthMismatch {
                expected: n * k,
                found: covariates.len(),
            });
        }
        if let Some(i) = treatment.iter().position(|&a| a > 1) {
            return Err(Error::NonBinaryTreatment {
                row: i + 1,
                value: treatment[i].to_string(),
            });
        }
        if let Some(i) = outcome.iter().position(|y| !y.is_finite()) {
            return Err(Error::BadCell {
                row: i + 1,
                column: "outcome".into(),
                message: "not a finite number".into(),
            });
        }
        if let Some(p) = covariates.iter().position(|x| !x.is_finite()) {
            return Err(Error::BadCell {
                row: p / k.max(1) + 1,
                column: covariate_names[p % k.max(1)].clone(),
                message: "not a finite number".into(),
            });
        }
        Ok(Dataset {
            covariate_names,
            covariates,
            treatment,
            outcome,
            ground_truth: None,
        })
    }

    /// Attaches ground truth; `y1 - y0` must equal `true_cate` for every unit.
    pub fn with_ground_truth(mut self, gt: Vec<GroundTruth<T>>) -> Result<Self> {
        if gt.len() != self.n() {
            return Err(Error::LengthMismatch {
                expected: self.n(),
                found: gt.len(),
            });
        }
        for (i, g) in gt.iter().enumerate() {
            let scale = T::one().max(g.y1.abs()).max(g.y0.abs());
            let tol = T::lit(1e-9).max(T::epsilon() * T::lit(16.0) * scale);
            if ((g.y1 - g.y0) - g.true_cate).abs() > tol {
                return Err(Error::InvalidData(format!(
                    "row {}: y1 - y0 = {} differs from true_cate {}",
                    i + 1,
                    g.y1 - g.y0,
                    g.true_cate
                )));
            }
            if g.z > 1 {
                return Err(Error::InvalidData(format!("row {}: z must be 0 or 1", i + 1)));
            }
        }
        self.ground_truth = Some(gt);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn k(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariates(&self) -> &[T] {
        &self.covariates
    }

    pub fn row(&self, i: usize) -> &[T] {
        let k = self.k();
        &self.covariates[i * k..(i + 1) * k]
    }

    pub fn covariate_column(&self, j: usize) -> Vec<T> {
        (0..self.n()).map(|i| self.covariates[i * self.k() + j]).collect()
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[T] {
        &self.outcome
    }

    pub fn ground_truth(&self) -> Option<&[GroundTruth<T>]> {
        self.ground_truth.as_deref()
    }

    pub fn treated_count(&self) -> usize {
        self.treatment.iter().filter(|&&a| a == 1).count()
    }

    pub fn require_both_arms(&self) -> Result<()> {
        let t = self.treated_count();
        if t == 0 || t == self.n() {
            return Err(Error::NoTreatmentVariation);
        }
        Ok(())
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let k = self.k();
        let mut cov = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            cov.extend_from_slice(self.row(i));
        }
        Dataset {
            covariate_names: self.covariate_names.clone(),
            covariates: cov,
            treatment: indices.iter().map(|&i| self.treatment[i]).collect(),
            outcome: indices.iter().map(|&i| self.outcome[i]).collect(),
            ground_truth: self
                .ground_truth
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i].clone()).collect()),
        }
    }

    pub fn with_treatment(&self, treatment: Vec<u8>) -> Result<Self> {
        let d = Dataset::new(
            self.covariate_names.clone(),
            self.covariates.clone(),
            treatment,
            self.outcome.clone(),
        )?;
        Ok(Dataset {
            ground_truth: self.ground_truth.clone(),
            ..d
        })
    }

    pub fn with_outcome(&self, outcome: Vec<T>) -> Result<Self> {
        let d = Dataset::new(
            self.covariate_names.clone(),
            self.covariates.clone(),
            self.treatment.clone(),
            outcome,
        )?;
        Ok(Dataset {
            ground_truth: self.ground_truth.clone(),
            ..d
        })
    }

    /// Appends one covariate column.
    pub fn with_covariate(&self, name: &str, values: &[T]) -> Result<Self> {
        if values.len() != self.n() {
            return Err(Error::LengthMismatch {
                expected: self.n(),
                found: values.len(),
            });
        }
        let k = self.k();
        let mut cov = Vec::with_capacity(self.n() * (k + 1));
        for (i, &v) in values.iter().enumerate() {
            cov.extend_from_slice(self.row(i));
            cov.push(v);
        }
        let mut names = self.covariate_names.clone();
        names.push(name.to_string());
        let d = Dataset::new(names, cov, self.treatment.clone(), self.outcome.clone())?;
        Ok(Dataset {
            ground_truth: self.ground_truth.clone(),
            ..d
        })
    }

    /// Copy without ground truth.
    pub fn observed(&self) -> Self {
        Dataset {
            ground_truth: None,
            ..self.clone()
        }
    }
}

/// Column roles of a CSV file, read from a JSON sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub treatment: String,
    pub outcome: String,
    /// When absent, every column not claimed by another role is a covariate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthColumns>,
    /// Identifier column, ignored on load.
    #[serde(default = "default_id", skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

fn default_id() -> Option<String> {
    Some("id".into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthColumns {
    pub true_group: String,
    pub true_cate: String,
    pub y0: String,
    pub y1: String,
    pub z: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<String>,
}

impl Default for GroundTruthColumns {
    fn default() -> Self {
        GroundTruthColumns {
            true_group: "true_group".into(),
            true_cate: "true_cate".into(),
            y0: "y0".into(),
            y1: "y1".into(),
            z: "z".into(),
            u: Some("u".into()),
        }
    }
}

impl Schema {
    /// Schema used when writing `d`: columns `id`, covariates, `a`, `y` and
    /// the default ground-truth names.
    pub fn for_dataset<T: Scalar>(d: &Dataset<T>) -> Self {
        let gt = d.ground_truth().map(|g| GroundTruthColumns {
            u: if g.iter().any(|r| r.u.is_some()) {
                Some("u".into())
            } else {
                None
            },
            ..GroundTruthColumns::default()
        });
        Schema {
            treatment: "a".into(),
            outcome: "y".into(),
            covariates: Some(d.covariate_names().to_vec()),
            ground_truth: gt,
            id: Some("id".into()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

fn parse_cell<T: Scalar>(raw: &str, row: usize, column: &str) -> Result<T> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::BadCell {
        row,
        column: column.to_string(),
        message: format!("cannot parse `{raw}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::BadCell {
            row,
            column: column.to_string(),
            message: "not a finite number".into(),
        });
    }
    T::from_f64(v).ok_or_else(|| Error::BadCell {
        row,
        column: column.to_string(),
        message: "out of range".into(),
    })
}

fn parse_binary(raw: &str, row: usize, column: &str) -> Result<u8> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => match other.parse::<f64>() {
            Ok(v) if v == 0.0 => Ok(0),
            Ok(v) if v == 1.0 => Ok(1),
            Ok(v) if v.is_nan() => Err(Error::BadCell {
                row,
                column: column.into(),
                message: "NaN".into(),
            }),
            _ => Err(Error::NonBinaryTreatment {
                row,
                value: other.to_string(),
            }),
        },
    }
}

/// Reads a dataset from CSV with a header row. Lines starting with `#` are
/// comments. Row numbers in errors count data rows from 1.
pub fn read_dataset<T: Scalar, R: Read>(reader: R, schema: &Schema) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    let find = |name: &str| -> Result<usize> {
        col.get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let a_idx = find(&schema.treatment)?;
    let y_idx = find(&schema.outcome)?;
    let gt_idx = match &schema.ground_truth {
        Some(g) => Some((
            find(&g.true_group)?,
            find(&g.true_cate)?,
            find(&g.y0)?,
            find(&g.y1)?,
            find(&g.z)?,
            match &g.u {
                Some(u) => col.get(u.as_str()).copied(),
                None => None,
            },
        )),
        None => None,
    };
    let cov_names: Vec<String> = match &schema.covariates {
        Some(c) => c.clone(),
        None => {
            let mut claimed: Vec<&str> = vec![&schema.treatment, &schema.outcome];
            if let Some(id) = &schema.id {
                claimed.push(id);
            }
            if let Some(g) = &schema.ground_truth {
                claimed.extend([&g.true_group, &g.true_cate, &g.y0, &g.y1, &g.z].map(String::as_str));
                if let Some(u) = &g.u {
                    claimed.push(u);
                }
            }
            headers
                .iter()
                .filter(|h| !claimed.contains(&h.as_str()))
                .cloned()
                .collect()
        }
    };
    let cov_idx: Vec<usize> = cov_names.iter().map(|c| find(c)).collect::<Result<_>>()?;

    let mut covariates = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut gt = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec?;
        let cell = |i: usize| rec.get(i).unwrap_or("");
        for (&ci, name) in cov_idx.iter().zip(&cov_names) {
            covariates.push(parse_cell::<T>(cell(ci), row, name)?);
        }
        treatment.push(parse_binary(cell(a_idx), row, &schema.treatment)?);
        outcome.push(parse_cell::<T>(cell(y_idx), row, &schema.outcome)?);
        if let (Some((g, c, y0, y1, z, u)), Some(names)) = (gt_idx, &schema.ground_truth) {
            let group: T = parse_cell(cell(g), row, &names.true_group)?;
            gt.push(GroundTruth {
                true_group: group.to_u32().ok_or_else(|| Error::BadCell {
                    row,
                    column: names.true_group.clone(),
                    message: "not a group number".into(),
                })?,
                true_cate: parse_cell(cell(c), row, &names.true_cate)?,
                y0: parse_cell(cell(y0), row, &names.y0)?,
                y1: parse_cell(cell(y1), row, &names.y1)?,
                z: parse_binary(cell(z), row, &names.z)?,
                u: match u {
                    Some(ui) if !cell(ui).is_empty() => Some(parse_cell(cell(ui), row, "u")?),
                    _ => None,
                },
            });
        }
    }
    if treatment.is_empty() {
        return Err(Error::NoData);
    }
    let d = Dataset::new(cov_names, covariates, treatment, outcome)?;
    if gt_idx.is_some() {
        d.with_ground_truth(gt)
    } else {
        Ok(d)
    }
}

pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(f), schema)
}

/// Writes `d` with the column names of `schema`. An optional `comment` is
/// emitted as a leading `# ...` line.
pub fn write_dataset<T: Scalar, W: Write>(
    d: &Dataset<T>,
    writer: W,
    schema: &Schema,
    comment: Option<&str>,
) -> Result<()> {
    let mut writer = writer;
    if let Some(c) = comment {
        writeln!(writer, "# {c}").map_err(|e| Error::io("<csv>", e))?;
    }
    let mut w = csv::Writer::from_writer(writer);
    let covs = schema
        .covariates
        .clone()
        .unwrap_or_else(|| d.covariate_names().to_vec());
    if covs.len() != d.k() {
        return Err(Error::DimensionMismatch {
            expected: d.k(),
            found: covs.len(),
        });
    }
    let mut header: Vec<String> = Vec::new();
    if let Some(id) = &schema.id {
        header.push(id.clone());
    }
    header.extend(covs.iter().cloned());
    header.push(schema.treatment.clone());
    header.push(schema.outcome.clone());
    let gt = match (&schema.ground_truth, d.ground_truth()) {
        (Some(names), Some(g)) => {
            header.extend([&names.true_group, &names.true_cate, &names.y0, &names.y1, &names.z].map(Clone::clone));
            if let Some(u) = &names.u {
                header.push(u.clone());
            }
            Some((names, g))
        }
        _ => None,
    };
    w.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if schema.id.is_some() {
            rec.push(i.to_string());
        }
        rec.extend(d.row(i).iter().map(|v| v.to_string()));
        rec.push(d.treatment()[i].to_string());
        rec.push(d.outcome()[i].to_string());
        if let Some((names, g)) = gt {
            let g = &g[i];
            rec.push(g.true_group.to_string());
            rec.push(g.true_cate.to_string());
            rec.push(g.y0.to_string());
            rec.push(g.y1.to_string());
            rec.push(g.z.to_string());
            if names.u.is_some() {
                rec.push(g.u.map(|u| u.to_string()).unwrap_or_default());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_dataset<T: Scalar>(
    d: &Dataset<T>,
    path: impl AsRef<Path>,
    schema: &Schema,
    comment: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(d, std::io::BufWriter::new(f), schema, comment)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub seed: u64,
}

/// Disjoint `(train, validation)` index sets covering `0..n`, each sorted.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let f = spec.validation_fraction;
    if !(0.0..1.0).contains(&f) {
        return Err(Error::param(format!("validation fraction {f} must lie in [0, 1)")));
    }
    if f > 0.0 && n < 2 {
        return Err(Error::param("need at least two units to split"));
    }
    let n_train = ((n as f64) * (1.0 - f)).round() as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(spec.seed, "split"));
    let mut train = perm[..n_train].to_vec();
    let mut val = perm[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

pub fn train_validation_split<T: Scalar>(
    d: &Dataset<T>,
    spec: &SplitSpec,
) -> Result<(Dataset<T>, Dataset<T>)> {
    let (train, val) = split_indices(d.n(), spec)?;
    Ok((d.subset(&train), d.subset(&val)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema {
            treatment: "a".into(),
            outcome: "y".into(),
            covariates: Some(vec!["x0".into(), "x1".into()]),
            ground_truth: None,
            id: Some("id".into()),
        }
    }

    #[test]
    fn empty_file_is_rejected() {
        let err = read_dataset::<f64, _>("".as_bytes(), &schema()).unwrap_err();
        // no header at all means the treatment column is missing
        assert!(matches!(err, Error::MissingColumn(_)));
        let err = read_dataset::<f64, _>("id,x0,x1,a,y\n".as_bytes(), &schema()).unwrap_err();
        assert_eq!(err.to_string(), "no data rows");
    }

    #[test]
    fn non_binary_treatment_names_the_row() {
        let csv = "id,x0,x1,a,y\n0,1,2,0,3\n1,1,2,2,3\n";
        let err = read_dataset::<f64, _>(csv.as_bytes(), &schema()).unwrap_err();
        match err {
            Error::NonBinaryTreatment { row, value } => {
                assert_eq!(row, 2);
                assert_eq!(value, "2");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unparseable_and_nan_cells_are_reported() {
        let csv = "id,x0,x1,a,y\n0,1,abc,0,3\n";
        let err = read_dataset::<f64, _>(csv.as_bytes(), &schema()).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        let csv = "id,x0,x1,a,y\n0,1,2,0,NaN\n";
        assert!(read_dataset::<f64, _>(csv.as_bytes(), &schema()).is_err());
        let csv = "id,x0,x1,a,y\n0,1,,0,1\n";
        assert!(read_dataset::<f64, _>(csv.as_bytes(), &schema()).is_err());
    }

    #[test]
    fn missing_column_is_reported() {
        let csv = "id,x0,a,y\n0,1,0,3\n";
        let err = read_dataset::<f64, _>(csv.as_bytes(), &schema()).unwrap_err();
        assert_eq!(err.to_string(), "missing column `x1`");
    }

    #[test]
    fn covariates_default_to_unclaimed_columns() {
        let mut s = schema();
        s.covariates = None;
        let csv = "id,x0,x1,a,y\n0,1,2,0,3\n";
        let d: Dataset<f64> = read_dataset(csv.as_bytes(), &s).unwrap();
        assert_eq!(d.covariate_names(), &["x0".to_string(), "x1".to_string()]);
    }

    #[test]
    fn ground_truth_invariant_is_checked() {
        let d = Dataset::new(vec!["x".into()], vec![0.0], vec![1], vec![2.0]).unwrap();
        let bad = vec![GroundTruth {
            true_group: 1,
            true_cate: 10.0,
            y0: 0.0,
            y1: 9.0,
            z: 1,
            u: None,
        }];
        assert!(d.clone().with_ground_truth(bad).is_err());
    }

    #[test]
    fn split_rejects_fraction_of_one() {
        assert!(split_indices(10, &SplitSpec { validation_fraction: 1.0, seed: 1 }).is_err());
        assert!(split_indices(1, &SplitSpec { validation_fraction: 0.5, seed: 1 }).is_err());
    }
}
