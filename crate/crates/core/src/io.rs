//! Instance files: JSON with explicit dimensions, nested utility rows, and
//! 1-based group indices. Index conversion happens here; everything in
//! memory is 0-based.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{MarketInstance, PriceVector, SupplierSpec, UtilityMatrix};

#[derive(Debug, Serialize, Deserialize)]
struct InstanceFile {
    n: usize,
    m: usize,
    /// 1-based alternative indices.
    groups: Vec<Vec<usize>>,
    mu: Vec<f64>,
    /// Row-major `n x D`: one row per alternative.
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    suppliers: Vec<SupplierFile>,
    p0: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SupplierFile {
    gamma: f64,
    y_hat: Vec<f64>,
    cost_coeff: f64,
}

fn to_file(instance: &MarketInstance) -> InstanceFile {
    let n = instance.n();
    InstanceFile {
        n,
        m: instance.num_groups(),
        groups: instance
            .groups
            .iter()
            .map(|g| g.iter().map(|&i| i + 1).collect())
            .collect(),
        mu: instance.mu.clone(),
        a: (0..n).map(|i| instance.utilities.row(i).to_vec()).collect(),
        suppliers: instance
            .suppliers
            .iter()
            .map(|s| SupplierFile {
                gamma: s.gamma,
                y_hat: s.y_hat.clone(),
                cost_coeff: s.cost_coeff,
            })
            .collect(),
        p0: instance.p0.as_slice().to_vec(),
    }
}

fn from_file(file: InstanceFile, path: &str) -> Result<MarketInstance> {
    let parse_err = |detail: String| Error::Parse {
        path: path.to_string(),
        detail,
    };

    if file.a.len() != file.n {
        return Err(parse_err(format!(
            "A has {} rows, expected n = {}",
            file.a.len(),
            file.n
        )));
    }
    let consumers = file.a.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(file.n * consumers);
    for (i, row) in file.a.iter().enumerate() {
        if row.len() != consumers {
            return Err(parse_err(format!(
                "A row {i} has {} entries, expected {consumers}",
                row.len()
            )));
        }
        data.extend_from_slice(row);
    }

    if file.groups.len() != file.m {
        return Err(parse_err(format!(
            "{} groups listed, expected m = {}",
            file.groups.len(),
            file.m
        )));
    }
    let mut groups = Vec::with_capacity(file.groups.len());
    for (j, group) in file.groups.iter().enumerate() {
        let mut converted = Vec::with_capacity(group.len());
        for &i in group {
            if i == 0 || i > file.n {
                return Err(parse_err(format!(
                    "groups[{j}] index {i} out of range (1-based, n = {})",
                    file.n
                )));
            }
            converted.push(i - 1);
        }
        groups.push(converted);
    }

    let utilities =
        UtilityMatrix::new(file.n, consumers, data).map_err(|e| parse_err(e.to_string()))?;
    let suppliers = file
        .suppliers
        .into_iter()
        .map(|s| SupplierSpec {
            gamma: s.gamma,
            y_hat: s.y_hat,
            cost_coeff: s.cost_coeff,
        })
        .collect();
    let p0 = PriceVector::new(file.p0)
        .map_err(|e| Error::Validation(vec![crate::error::Violation::new("p0", e.to_string())]))?;

    // Invariant violations (as opposed to structural mismatches) surface as
    // a validation error so callers can distinguish the two.
    MarketInstance::new(groups, file.mu, utilities, suppliers, p0)
}

pub fn to_json(instance: &MarketInstance) -> String {
    serde_json::to_string_pretty(&to_file(instance)).expect("instance serialization cannot fail")
}

pub fn from_json(json: &str, origin: &str) -> Result<MarketInstance> {
    let file: InstanceFile = serde_json::from_str(json).map_err(|e| Error::Parse {
        path: origin.to_string(),
        detail: e.to_string(),
    })?;
    from_file(file, origin)
}

pub fn save(instance: &MarketInstance, path: impl AsRef<Path>) -> Result<()> {
    let mut json = to_json(instance);
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<MarketInstance> {
    let path = path.as_ref();
    let json = fs::read_to_string(path)?;
    from_json(&json, &path.display().to_string())
}
