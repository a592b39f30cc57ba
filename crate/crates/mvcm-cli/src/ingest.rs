//! Dataset ingestion from long-format response and covariate CSV files.
//!
//! Responses: `subject_id,response_index,grid_position,value`, one row per
//! observed cell. Covariates: `subject_id,x1,...,xp`. Subjects keep the
//! covariate-file order; grid positions must be written identically across
//! subjects (they are matched exactly, not by tolerance).

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mvcm::FunctionalDataset;
use ndarray::{Array2, Array3};

pub struct IngestReport {
    pub dataset: FunctionalDataset,
    pub subject_ids: Vec<String>,
}

pub fn ingest(responses_path: &Path, covariates_path: &Path) -> Result<IngestReport> {
    let (subject_ids, x_rows) = read_covariates(covariates_path)?;
    let subject_index: HashMap<&str, usize> = subject_ids
        .iter()
        .enumerate()
        .map(|(k, id)| (id.as_str(), k))
        .collect();

    let mut reader = csv::Reader::from_path(responses_path)
        .with_context(|| format!("cannot open responses file {}", responses_path.display()))?;
    {
        let headers = reader.headers()?;
        let expected = ["subject_id", "response_index", "grid_position", "value"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(a, b)| a != b) {
            bail!(
                "responses header must be {:?}, found {:?}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            );
        }
    }

    // cells[(subject, response, grid-bits)] -> value
    let mut cells: HashMap<(usize, usize, u64), f64> = HashMap::new();
    let mut grid_set: BTreeSet<u64> = BTreeSet::new();
    let mut max_response = 0usize;
    let mut seen_subjects: Vec<bool> = vec![false; subject_ids.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let subject = record.get(0).unwrap_or_default().to_string();
        let Some(&i) = subject_index.get(subject.as_str()) else {
            bail!("responses row {} names subject {subject:?} absent from the covariates file", row_idx + 2);
        };
        seen_subjects[i] = true;
        let j: usize = record
            .get(1)
            .unwrap_or_default()
            .parse()
            .with_context(|| format!("bad response_index in responses row {}", row_idx + 2))?;
        if j == 0 {
            bail!("response_index is 1-based; got 0 in responses row {}", row_idx + 2);
        }
        max_response = max_response.max(j);
        let s: f64 = record
            .get(2)
            .unwrap_or_default()
            .parse()
            .with_context(|| format!("bad grid_position in responses row {}", row_idx + 2))?;
        let value: f64 = record
            .get(3)
            .unwrap_or_default()
            .parse()
            .with_context(|| format!("bad value in responses row {}", row_idx + 2))?;
        let key = (i, j - 1, s.to_bits());
        if cells.insert(key, value).is_some() {
            bail!(
                "duplicate cell for subject {subject:?}, response {j}, grid position {s}"
            );
        }
        grid_set.insert(s.to_bits());
    }

    if let Some(missing) = seen_subjects.iter().position(|seen| !seen) {
        bail!(
            "subject {:?} present in covariates but absent in responses",
            subject_ids[missing]
        );
    }
    if cells.is_empty() {
        bail!("responses file contains no data rows");
    }

    let mut grid: Vec<f64> = grid_set.iter().map(|bits| f64::from_bits(*bits)).collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Every (subject, response) must cover the full grid.
    let n = subject_ids.len();
    let j_dim = max_response;
    let m_len = grid.len();
    let mut gaps: Vec<String> = Vec::new();
    let mut y = Array3::zeros((n, j_dim, m_len));
    'outer: for i in 0..n {
        for j in 0..j_dim {
            for (m, &s) in grid.iter().enumerate() {
                match cells.get(&(i, j, s.to_bits())) {
                    Some(&v) => y[[i, j, m]] = v,
                    None => {
                        gaps.push(format!(
                            "incomplete grid for subject {}, response {} (missing s = {s})",
                            subject_ids[i],
                            j + 1
                        ));
                        if gaps.len() >= 10 {
                            break 'outer;
                        }
                    }
                }
            }
        }
    }
    if !gaps.is_empty() {
        bail!("grid mismatch across subjects:\n{}", gaps.join("\n"));
    }

    let p = x_rows[0].len();
    let mut x = Array2::zeros((n, p));
    for (i, row) in x_rows.iter().enumerate() {
        for (l, v) in row.iter().enumerate() {
            x[[i, l]] = *v;
        }
    }

    let dataset = mvcm::validate_dataset(grid, y, x)?;
    Ok(IngestReport {
        dataset,
        subject_ids,
    })
}

fn read_covariates(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open covariates file {}", path.display()))?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.get(0) != Some("subject_id") {
        bail!("covariates header must start with subject_id");
    }
    let p = headers.len() - 1;
    if p == 0 {
        bail!("covariates file has no covariate columns");
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let id = record.get(0).unwrap_or_default().to_string();
        if ids.contains(&id) {
            bail!("duplicate subject {id:?} in covariates row {}", row_idx + 2);
        }
        let mut row = Vec::with_capacity(p);
        for l in 0..p {
            let v: f64 = record
                .get(l + 1)
                .unwrap_or_default()
                .parse()
                .with_context(|| {
                    format!("bad covariate value in covariates row {}", row_idx + 2)
                })?;
            row.push(v);
        }
        ids.push(id);
        rows.push(row);
    }
    if ids.is_empty() {
        bail!("covariates file contains no subjects");
    }
    Ok((ids, rows))
}

/// Writes a dataset back to the two-file interchange format; `ingest` of the
/// emitted files reproduces the dataset exactly.
pub fn emit(
    dataset: &FunctionalDataset,
    subject_ids: &[String],
    responses_path: &Path,
    covariates_path: &Path,
) -> Result<()> {
    let mut responses = String::from("subject_id,response_index,grid_position,value\n");
    for i in 0..dataset.n() {
        for j in 0..dataset.num_responses() {
            for (m, &s) in dataset.grid().iter().enumerate() {
                responses.push_str(&format!(
                    "{},{},{},{}\n",
                    subject_ids[i],
                    j + 1,
                    s,
                    dataset.y()[[i, j, m]]
                ));
            }
        }
    }
    std::fs::write(responses_path, responses)
        .with_context(|| format!("cannot write {}", responses_path.display()))?;

    let mut covariates = String::from("subject_id");
    for l in 1..=dataset.p() {
        covariates.push_str(&format!(",x{l}"));
    }
    covariates.push('\n');
    for i in 0..dataset.n() {
        covariates.push_str(&subject_ids[i].to_string());
        for l in 0..dataset.p() {
            covariates.push_str(&format!(",{}", dataset.x()[[i, l]]));
        }
        covariates.push('\n');
    }
    std::fs::write(covariates_path, covariates)
        .with_context(|| format!("cannot write {}", covariates_path.display()))?;
    Ok(())
}
