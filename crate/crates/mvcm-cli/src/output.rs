//! Artifact serialization: JSON/CSV payloads and the run manifest.
//!
//! Payloads carry no timestamps, and maps are ordered, so a rerun with the
//! same inputs, seed and config is byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use mvcm::{
    BandResult, CoefficientFit, EigenSystem, FunctionalDataset, GlobalTestResult,
    IndividualCurves, Scores,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
struct CoefficientRecord {
    response: usize,
    covariate: usize,
    values: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize)]
struct CvRecord {
    response: usize,
    table: Vec<(f64, f64)>,
}

#[derive(Serialize)]
struct EstimatesPayload {
    kernel: String,
    bandwidths: Vec<f64>,
    data_grid: Vec<f64>,
    eval_points: Vec<f64>,
    coefficients: Vec<CoefficientRecord>,
    cv_tables: Vec<CvRecord>,
}

pub fn estimates_json(fit: &CoefficientFit, data: &FunctionalDataset) -> Result<String> {
    let (j_dim, p, e_len) = fit.b_hat().dim();
    let zero_bias;
    let bias = match fit.bias() {
        Some(b) => b,
        None => {
            zero_bias = ndarray::Array3::zeros((j_dim, p, e_len));
            &zero_bias
        }
    };
    let mut coefficients = Vec::new();
    for j in 0..j_dim {
        for l in 0..p {
            coefficients.push(CoefficientRecord {
                response: j + 1,
                covariate: l + 1,
                values: (0..e_len).map(|e| fit.b_hat()[[j, l, e]]).collect(),
                bias: (0..e_len).map(|e| bias[[j, l, e]]).collect(),
            });
        }
    }
    let cv_tables = fit
        .cv_tables()
        .iter()
        .enumerate()
        .filter_map(|(j, table)| {
            table.as_ref().map(|t| CvRecord {
                response: j + 1,
                table: t.clone(),
            })
        })
        .collect();
    let payload = EstimatesPayload {
        kernel: fit.kernel().to_string(),
        bandwidths: fit.bandwidths().to_vec(),
        data_grid: data.grid().to_vec(),
        eval_points: fit.eval_points().to_vec(),
        coefficients,
        cv_tables,
    };
    Ok(serde_json::to_string_pretty(&payload)?)
}

pub fn eta_csv(
    data: &FunctionalDataset,
    curves: &IndividualCurves,
    subject_ids: &[String],
) -> String {
    let mut out = String::from("subject_id,response_index,grid_position,eta_hat,eps_hat\n");
    let (n, j_dim, m_len) = curves.eta_hat().dim();
    for i in 0..n {
        for j in 0..j_dim {
            for m in 0..m_len {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    subject_ids[i],
                    j + 1,
                    data.grid()[m],
                    curves.eta_hat()[[i, j, m]],
                    curves.eps_hat()[[i, j, m]]
                ));
            }
        }
    }
    out
}

#[derive(Serialize)]
struct FpcaResponse {
    response: usize,
    smoothing_bandwidth: f64,
    eigenvalues: Vec<f64>,
    energy_fractions: Vec<f64>,
    retained: usize,
    clipped: usize,
}

#[derive(Serialize)]
struct FpcaPayload {
    responses: Vec<FpcaResponse>,
}

pub fn fpca_json(eig: &EigenSystem, curves: &IndividualCurves) -> Result<String> {
    let responses = (0..eig.num_responses())
        .map(|j| {
            let resp = eig.response(j);
            FpcaResponse {
                response: j + 1,
                smoothing_bandwidth: curves.bandwidths()[j],
                eigenvalues: resp.eigenvalues().to_vec(),
                energy_fractions: resp.energy_fractions().to_vec(),
                retained: resp.retained(),
                clipped: resp.clipped(),
            }
        })
        .collect();
    Ok(serde_json::to_string_pretty(&FpcaPayload { responses })?)
}

/// Grid plus one discretized eigenfunction per column.
pub fn fpca_csv(eig: &EigenSystem) -> String {
    let mut header = String::from("grid_position");
    for j in 0..eig.num_responses() {
        for l in 0..eig.response(j).retained() {
            header.push_str(&format!(",psi_{}_{}", j + 1, l + 1));
        }
    }
    header.push('\n');
    let mut out = header;
    for (m, &s) in eig.grid().iter().enumerate() {
        out.push_str(&s.to_string());
        for j in 0..eig.num_responses() {
            let resp = eig.response(j);
            for l in 0..resp.retained() {
                out.push_str(&format!(",{}", resp.eigenfunctions()[[l, m]]));
            }
        }
        out.push('\n');
    }
    out
}

pub fn scores_csv(scores: &Scores, subject_ids: &[String]) -> String {
    let mut out = String::from("subject_id,response_index,component,score\n");
    for j in 0..scores.num_responses() {
        let table = scores.response(j);
        let (n, l_dim) = table.dim();
        for i in 0..n {
            for l in 0..l_dim {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    subject_ids[i],
                    j + 1,
                    l + 1,
                    table[[i, l]]
                ));
            }
        }
    }
    out
}

#[derive(Serialize)]
struct TestPayload {
    statistic: f64,
    p_value: f64,
    g: usize,
    seed: u64,
    aborted: usize,
    pseudo_inverse_points: usize,
    bias_supremum: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    draws: Option<Vec<f64>>,
}

pub fn test_json(result: &GlobalTestResult, emit_draws: bool) -> Result<String> {
    let payload = TestPayload {
        statistic: result.s_n,
        p_value: result.p_value,
        g: result.g,
        seed: result.seed,
        aborted: result.aborted,
        pseudo_inverse_points: result.pseudo_inverse_points,
        bias_supremum: result.bias_supremum,
        draws: emit_draws.then(|| result.draws.clone()),
    };
    Ok(serde_json::to_string_pretty(&payload)?)
}

#[derive(Serialize)]
struct CriticalValueRecord {
    response: usize,
    covariate: usize,
    critical_value: f64,
}

#[derive(Serialize)]
struct BandsPayload {
    alpha: f64,
    g: usize,
    seed: u64,
    critical_values: Vec<CriticalValueRecord>,
}

pub fn bands_json(bands: &[BandResult]) -> Result<String> {
    let critical_values = bands
        .iter()
        .map(|b| CriticalValueRecord {
            response: b.j + 1,
            covariate: b.l + 1,
            critical_value: b.critical_value,
        })
        .collect();
    let payload = BandsPayload {
        alpha: bands.first().map(|b| b.alpha).unwrap_or(f64::NAN),
        g: bands.first().map(|b| b.g).unwrap_or(0),
        seed: bands.first().map(|b| b.seed).unwrap_or(0),
        critical_values,
    };
    Ok(serde_json::to_string_pretty(&payload)?)
}

pub fn bands_csv(bands: &[BandResult]) -> String {
    let mut out = String::from("response,covariate,alpha,grid_position,estimate,lower,upper\n");
    for band in bands {
        for (e, &s) in band.grid.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                band.j + 1,
                band.l + 1,
                band.alpha,
                s,
                band.estimate[e],
                band.lower[e],
                band.upper[e]
            ));
        }
    }
    out
}

#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub versions: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: BTreeMap<String, String>) -> Self {
        let mut hasher = Sha256::new();
        for (key, value) in &config {
            hasher.update(key.as_bytes());
            hasher.update(b"=");
            hasher.update(value.as_bytes());
            hasher.update(b"\n");
        }
        let config_hash = hex::encode(hasher.finalize());
        let mut versions = BTreeMap::new();
        versions.insert("mvcm".into(), mvcm_version());
        versions.insert("mvcm-cli".into(), env!("CARGO_PKG_VERSION").into());
        Self {
            command: command.to_string(),
            config,
            config_hash,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            versions,
        }
    }

    pub fn record_input(&mut self, label: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("cannot hash input {}", path.display()))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        self.inputs
            .insert(label.to_string(), hex::encode(hasher.finalize()));
        Ok(())
    }
}

fn mvcm_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

/// Collects payloads and writes everything (files plus manifest) only after
/// the whole pipeline has succeeded, so failures leave no partial outputs.
pub struct OutputSet {
    files: Vec<(String, String)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self { files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, payload: String) {
        self.files.push((name.to_string(), payload));
    }

    pub fn write_all(self, out_dir: &Path, mut manifest: Manifest) -> Result<()> {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
        for (name, payload) in &self.files {
            std::fs::write(out_dir.join(name), payload)
                .with_context(|| format!("cannot write {name}"))?;
            manifest.outputs.push(name.clone());
        }
        let manifest_json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(out_dir.join("manifest.json"), manifest_json)
            .context("cannot write manifest.json")?;
        Ok(())
    }
}
