//! Capacity-saturation and projective-linearity tables over record sets.
//!
//! Every aggregate sorts its rows by content, so the result does not depend
//! on the order in which records are supplied.

use serde::{Deserialize, Serialize};

use super::RunRecord;

/// Fixed-width float field with 17 significant digits; empty when absent.
pub fn fmt_float(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.16e}"),
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}

/// Median of a sample; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

pub(crate) fn csv_text(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationRow {
    pub run_id: String,
    pub m: usize,
    pub sparsity: String,
    pub mean_sparsity: f64,
    pub seed_index: usize,
    pub rank: usize,
    pub sum_d: f64,
    /// `ΣD/m`.
    pub per_width: f64,
    /// `ΣD/rank`; absent at rank zero.
    pub per_rank: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationSummary {
    pub runs: usize,
    pub failed: usize,
    pub min: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<f64>,
    /// Median of `ΣD/rank` over runs with mean sparsity at most 0.7.
    pub median_dense: Option<f64>,
    pub median_per_width: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationTable {
    pub rows: Vec<SaturationRow>,
    pub summary: SaturationSummary,
}

/// Sparsity up to which a run counts as dense in the summary.
pub const DENSE_SPARSITY: f64 = 0.7;

pub fn aggregate_saturation(records: &[RunRecord]) -> SaturationTable {
    let mut rows: Vec<SaturationRow> = records
        .iter()
        .filter_map(|r| {
            let s = &r.result.as_ref()?.summary;
            Some(SaturationRow {
                run_id: r.run_id.clone(),
                m: r.cell.m,
                sparsity: r.cell.sparsity.label(),
                mean_sparsity: r.cell.sparsity.mean(r.cell.n),
                seed_index: r.cell.seed_index,
                rank: s.rank,
                sum_d: s.sum_d,
                per_width: s.sum_d / r.cell.m as f64,
                per_rank: s.saturation,
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        a.m.cmp(&b.m)
            .then(a.mean_sparsity.total_cmp(&b.mean_sparsity))
            .then(a.sparsity.cmp(&b.sparsity))
            .then(a.seed_index.cmp(&b.seed_index))
            .then(a.run_id.cmp(&b.run_id))
    });
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.per_rank).collect();
    let dense: Vec<f64> = rows
        .iter()
        .filter(|r| r.mean_sparsity <= DENSE_SPARSITY)
        .filter_map(|r| r.per_rank)
        .collect();
    let widths: Vec<f64> = rows.iter().map(|r| r.per_width).collect();
    let summary = SaturationSummary {
        runs: rows.len(),
        failed: records.len() - rows.len(),
        min: ratios.iter().copied().reduce(f64::min),
        median: median(&ratios),
        max: ratios.iter().copied().reduce(f64::max),
        median_dense: median(&dense),
        median_per_width: median(&widths),
    };
    SaturationTable { rows, summary }
}

impl SaturationTable {
    pub fn to_csv(&self) -> String {
        csv_text(
            &["run_id", "m", "sparsity", "mean_sparsity", "seed_index", "rank", "sum_d", "sum_d_over_m", "sum_d_over_rank"],
            self.rows.iter().map(|r| {
                vec![
                    r.run_id.clone(),
                    r.m.to_string(),
                    r.sparsity.clone(),
                    fmt_float(Some(r.mean_sparsity)),
                    r.seed_index.to_string(),
                    r.rank.to_string(),
                    fmt_float(Some(r.sum_d)),
                    fmt_float(Some(r.per_width)),
                    fmt_float(r.per_rank),
                ]
            }),
        )
    }
}

/// One cluster of one run: localization against fit quality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearityRow {
    pub run_id: String,
    pub m: usize,
    pub sparsity: String,
    pub mean_sparsity: f64,
    pub lambda: f64,
    pub size: usize,
    pub dim_v: usize,
    pub localization: f64,
    pub slope: f64,
    pub r2: f64,
    pub abs_error: f64,
}

pub fn aggregate_projective_linearity(records: &[RunRecord]) -> Vec<LinearityRow> {
    let mut rows: Vec<LinearityRow> = records
        .iter()
        .filter_map(|r| r.result.as_ref().map(|res| (r, res)))
        .flat_map(|(r, res)| {
            res.summary.clusters.iter().filter_map(move |c| {
                Some(LinearityRow {
                    run_id: r.run_id.clone(),
                    m: r.cell.m,
                    sparsity: r.cell.sparsity.label(),
                    mean_sparsity: r.cell.sparsity.mean(r.cell.n),
                    lambda: c.lambda,
                    size: c.size,
                    dim_v: c.dim_v,
                    localization: c.localization,
                    slope: c.slope?,
                    r2: c.r2?,
                    abs_error: c.abs_error?,
                })
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        a.run_id
            .cmp(&b.run_id)
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.size.cmp(&b.size))
    });
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearitySummary {
    pub min_localization: f64,
    pub clusters: usize,
    pub median_r2: Option<f64>,
    pub median_abs_error: Option<f64>,
}

/// Medians over clusters localized at least `min_localization`.
pub fn linearity_summary(rows: &[LinearityRow], min_localization: f64) -> LinearitySummary {
    let kept: Vec<&LinearityRow> = rows.iter().filter(|r| r.localization >= min_localization).collect();
    LinearitySummary {
        min_localization,
        clusters: kept.len(),
        median_r2: median(&kept.iter().map(|r| r.r2).collect::<Vec<_>>()),
        median_abs_error: median(&kept.iter().map(|r| r.abs_error).collect::<Vec<_>>()),
    }
}

pub fn linearity_csv(rows: &[LinearityRow]) -> String {
    csv_text(
        &["run_id", "m", "sparsity", "mean_sparsity", "lambda", "size", "dim_v", "localization", "slope", "r2", "abs_error"],
        rows.iter().map(|r| {
            vec![
                r.run_id.clone(),
                r.m.to_string(),
                r.sparsity.clone(),
                fmt_float(Some(r.mean_sparsity)),
                fmt_float(Some(r.lambda)),
                r.size.to_string(),
                r.dim_v.to_string(),
                fmt_float(Some(r.localization)),
                fmt_float(Some(r.slope)),
                fmt_float(Some(r.r2)),
                fmt_float(Some(r.abs_error)),
            ]
        }),
    )
}
