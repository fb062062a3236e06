use serde::{Deserialize, Serialize};

use super::{run_protocol, Protocol, SplitSpec, TrainConfig};
use crate::data::{partition_iid, Dataset};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Client counts (rows) by samples per client (columns).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub clients: Vec<usize>,
    pub samples_per_client: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub metric: String,
    pub grid: SweepGrid,
    pub protocols: [Protocol; 2],
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    /// `first - second`, cell by cell.
    pub difference: Vec<Vec<f64>>,
}

impl SweepResult {
    /// RFC 4180 CSV of one matrix with a header of sample counts.
    pub fn matrix_csv(&self, matrix: &[Vec<f64>]) -> Result<String> {
        let encode = |e: csv::Error| Error::Data(format!("csv encoding: {e}"));
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["clients".to_string()];
        header.extend(self.grid.samples_per_client.iter().map(|s| s.to_string()));
        w.write_record(&header).map_err(encode)?;
        for (k, row) in self.grid.clients.iter().zip(matrix) {
            let mut rec = vec![k.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(encode)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv encoding: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Seed of grid cell `(row, col)`, derived so cells draw independently.
pub fn cell_seed(seed: u64, row: usize, col: usize) -> u64 {
    SeededRng::new(seed)
        .derive("sweep")
        .derive_index(row as u64)
        .derive_index(col as u64)
        .next_u64()
}

/// Runs both protocols on every cell: `k` clients each drawing `s` samples
/// from `train`. Both protocols of a cell share its seed and partition.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_sweep(
    protocols: [Protocol; 2],
    split: &SplitSpec,
    train: &Dataset,
    test: &Dataset,
    grid: &SweepGrid,
    metric: &str,
    cfg: &TrainConfig,
) -> Result<SweepResult> {
    if grid.clients.is_empty() || grid.samples_per_client.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if grid.clients.contains(&0) || grid.samples_per_client.contains(&0) {
        return Err(Error::Config("grid entries must be positive".into()));
    }
    let mut mats = [Vec::new(), Vec::new()];
    for (r, &k) in grid.clients.iter().enumerate() {
        let mut rows = [Vec::new(), Vec::new()];
        for (c, &s) in grid.samples_per_client.iter().enumerate() {
            let seed = cell_seed(cfg.seed, r, c);
            let partition = partition_iid(train.len(), k, Some(&vec![s; k]), seed)?;
            let cell_cfg = TrainConfig { seed, ..cfg.clone() };
            for (p, row) in protocols.iter().zip(&mut rows) {
                let report = run_protocol(*p, split, train, &partition, test, &cell_cfg)?;
                let v = report.final_metrics().get(metric).ok_or_else(|| {
                    Error::Data(format!("metric {metric} is undefined for cell ({k} clients, {s} samples)"))
                })?;
                row.push(v);
            }
        }
        let [a, b] = rows;
        mats[0].push(a);
        mats[1].push(b);
    }
    let [first, second] = mats;
    let difference = first
        .iter()
        .zip(&second)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    Ok(SweepResult {
        metric: metric.to_string(),
        grid: grid.clone(),
        protocols,
        first,
        second,
        difference,
    })
}
