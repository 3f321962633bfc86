//! Hyperparameter selection on ID validation accuracy, rank aggregation
//! across ρ settings, and the CSV/markdown report files.
//!
//! Floats are written with Rust's shortest-roundtrip formatting so reruns
//! are byte-identical and readers recover exact values.

use std::collections::BTreeMap;

use adaptlab_core::metrics::MetricReport;
use adaptlab_core::{Error, Result};

use crate::config::{HpPoint, StudyConfig};
use crate::runner::RunRecord;

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub const RUNS_HEADER: &str = "run_id,rho,protocol,lp_lr,ft_lr,vat_alpha,udp_epsilon,soup_k,seed,\
status,error,id_val_acc,id_acc,ood_acc,corr_acc,rand_acc,mca,adv_acc,calib_id,calib_corr,\
calib_ood,anomaly_auroc,cka";

/// Per-run rows, one per grid cell, failures included with their reason.
pub fn runs_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(RUNS_HEADER);
    out.push('\n');
    for r in records {
        let s = &r.spec;
        let status = if r.error.is_none() { "ok" } else { "failed" };
        let error = r.error.clone().unwrap_or_default().replace(',', ";");
        let metric_cols = match &r.report {
            Some(m) => m
                .values()
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(","),
            None => vec![""; MetricReport::FIELDS.len()].join(","),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.run_id,
            s.rho,
            s.protocol_name,
            fmt_opt(s.hp.lp_lr),
            fmt_opt(s.hp.ft_lr),
            fmt_opt(s.hp.vat_alpha),
            fmt_opt(s.hp.udp_epsilon),
            fmt_opt_usize(s.hp.soup_k),
            s.seed,
            status,
            error,
            fmt_opt(r.id_val_acc),
            metric_cols
        ));
    }
    out
}

/// Best grid point per protocol: max mean id_val accuracy over every
/// (ρ, seed) run of that point; ties go to the lexicographically smallest
/// hyperparameter tuple.
pub fn select_hyperparameters(records: &[RunRecord]) -> BTreeMap<String, HpPoint> {
    // (protocol, hp_index) → (sum, count, hp)
    let mut stats: BTreeMap<(String, usize), (f64, usize, HpPoint)> = BTreeMap::new();
    for r in records {
        let Some(val) = r.id_val_acc else { continue };
        let key = (r.spec.protocol_name.clone(), r.spec.hp_index);
        let entry = stats.entry(key).or_insert((0.0, 0, r.spec.hp.clone()));
        entry.0 += val;
        entry.1 += 1;
    }
    let mut best: BTreeMap<String, (f64, HpPoint)> = BTreeMap::new();
    for ((protocol, _), (sum, count, hp)) in stats {
        let mean = sum / count as f64;
        match best.get(&protocol) {
            None => {
                best.insert(protocol, (mean, hp));
            }
            Some((cur_mean, cur_hp)) => {
                let better = mean > *cur_mean
                    || (mean == *cur_mean && hp.tuple_key() < cur_hp.tuple_key());
                if better {
                    best.insert(protocol, (mean, hp));
                }
            }
        }
    }
    best.into_iter().map(|(k, (_, hp))| (k, hp)).collect()
}

/// One seed-averaged summary row.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub rho: f64,
    pub protocol: String,
    pub id_val_acc: f64,
    pub report: MetricReport,
    pub seeds: usize,
}

pub const SUMMARY_HEADER: &str = "rho,protocol,seeds,id_val_acc,id_acc,ood_acc,corr_acc,\
rand_acc,mca,adv_acc,calib_id,calib_corr,calib_ood,anomaly_auroc,cka";

/// Seed-averaged rows at the selected hyperparameters, ordered by the
/// config's ρ and protocol order.
pub fn summarize(records: &[RunRecord], study: &StudyConfig) -> Result<Vec<SummaryRow>> {
    let selected = select_hyperparameters(records);
    let mut rows = Vec::new();
    for (rho_index, &rho) in study.rho_values.iter().enumerate() {
        for name in &study.protocols {
            let protocol = crate::config::parse_protocol(name)?.name();
            let Some(hp) = selected.get(&protocol) else { continue };
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| {
                    r.spec.rho_index == rho_index
                        && r.spec.protocol_name == protocol
                        && &r.spec.hp == hp
                        && r.report.is_some()
                })
                .collect();
            if group.is_empty() {
                continue;
            }
            let n = group.len() as f64;
            let mean =
                |f: &dyn Fn(&MetricReport) -> f64| -> f64 {
                    group.iter().map(|r| f(r.report.as_ref().unwrap())).sum::<f64>() / n
                };
            let report = MetricReport {
                id_acc: mean(&|m| m.id_acc),
                ood_acc: mean(&|m| m.ood_acc),
                corr_acc: mean(&|m| m.corr_acc),
                rand_acc: mean(&|m| m.rand_acc),
                mca: mean(&|m| m.mca),
                adv_acc: mean(&|m| m.adv_acc),
                calib_id: mean(&|m| m.calib_id),
                calib_corr: mean(&|m| m.calib_corr),
                calib_ood: mean(&|m| m.calib_ood),
                anomaly_auroc: mean(&|m| m.anomaly_auroc),
                cka: mean(&|m| m.cka),
            };
            let id_val_acc =
                group.iter().map(|r| r.id_val_acc.unwrap()).sum::<f64>() / n;
            rows.push(SummaryRow {
                rho,
                protocol: protocol.clone(),
                id_val_acc,
                report,
                seeds: group.len(),
            });
        }
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let metrics = r
            .report
            .values()
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.rho, r.protocol, r.seeds, r.id_val_acc, metrics
        ));
    }
    out
}

/// Mean rank per (metric, protocol) across ρ settings; rank 1 is the best
/// (highest) value, ties share the average rank.
#[derive(Debug, Clone)]
pub struct RankTable {
    /// (metric, protocol) → mean rank, plus the protocol order for output.
    pub entries: Vec<(String, String, f64)>,
}

pub fn rank_protocols(rows: &[SummaryRow]) -> Result<RankTable> {
    if rows.is_empty() {
        return Err(Error::eval("rank: no summary rows"));
    }
    let mut protocols: Vec<String> = Vec::new();
    for r in rows {
        if !protocols.contains(&r.protocol) {
            protocols.push(r.protocol.clone());
        }
    }
    let mut settings: Vec<f64> = Vec::new();
    for r in rows {
        if !settings.iter().any(|&s| s == r.rho) {
            settings.push(r.rho);
        }
    }
    if protocols.len() < 2 {
        return Err(Error::eval("rank: need at least 2 protocols"));
    }

    let value_of = |protocol: &str, rho: f64, field: usize| -> Result<f64> {
        rows.iter()
            .find(|r| r.protocol == protocol && r.rho == rho)
            .map(|r| r.report.values()[field])
            .ok_or_else(|| {
                Error::eval(format!(
                    "rank: protocol '{protocol}' missing a report at rho {rho}"
                ))
            })
    };

    let mut entries = Vec::new();
    for (field, metric) in MetricReport::FIELDS.iter().enumerate() {
        let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
        for &rho in &settings {
            let values: Vec<(usize, f64)> = protocols
                .iter()
                .enumerate()
                .map(|(i, p)| Ok((i, value_of(p, rho, field)?)))
                .collect::<Result<Vec<_>>>()?;
            // Average-rank with tie sharing; higher value → better (smaller) rank.
            for &(i, v) in &values {
                let better = values.iter().filter(|&&(_, o)| o > v).count();
                let equal = values.iter().filter(|&&(_, o)| o == v).count();
                let rank = better as f64 + (1.0 + equal as f64) / 2.0;
                *sums.entry(protocols[i].as_str()).or_insert(0.0) += rank;
            }
        }
        for p in &protocols {
            entries.push((
                metric.to_string(),
                p.clone(),
                sums[p.as_str()] / settings.len() as f64,
            ));
        }
    }
    Ok(RankTable { entries })
}

pub const RANKS_HEADER: &str = "metric,protocol,mean_rank";

pub fn ranks_csv(table: &RankTable) -> String {
    let mut out = String::from(RANKS_HEADER);
    out.push('\n');
    for (metric, protocol, rank) in &table.entries {
        out.push_str(&format!("{metric},{protocol},{rank}\n"));
    }
    out
}

/// Human-readable results: one metric table per ρ plus the rank table.
pub fn summary_markdown(rows: &[SummaryRow], table: &RankTable) -> String {
    let mut out = String::from("# Study summary\n");
    let mut rhos: Vec<f64> = Vec::new();
    for r in rows {
        if !rhos.iter().any(|&x| x == r.rho) {
            rhos.push(r.rho);
        }
    }
    for rho in rhos {
        out.push_str(&format!("\n## Correlation ρ = {rho}\n\n"));
        out.push_str("| protocol | id_acc | ood_acc | corr_acc | rand_acc | mca | adv_acc | calib_id | calib_corr | calib_ood | auroc | cka |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|\n");
        for r in rows.iter().filter(|r| r.rho == rho) {
            let m = &r.report;
            out.push_str(&format!(
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
                r.protocol,
                m.id_acc,
                m.ood_acc,
                m.corr_acc,
                m.rand_acc,
                m.mca,
                m.adv_acc,
                m.calib_id,
                m.calib_corr,
                m.calib_ood,
                m.anomaly_auroc,
                m.cka
            ));
        }
    }
    out.push_str("\n## Mean protocol rank across settings (1 = best)\n\n");
    out.push_str("| metric | protocol | mean rank |\n|---|---|---|\n");
    for (metric, protocol, rank) in &table.entries {
        out.push_str(&format!("| {metric} | {protocol} | {rank:.3} |\n"));
    }
    out
}

/// Reads a summary.csv produced by [`summary_csv`].
pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Io("empty summary.csv".into()))?;
    if header != SUMMARY_HEADER {
        return Err(Error::Io("unrecognized summary.csv header".into()));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 15 {
            return Err(Error::Io(format!("summary.csv line {}: bad column count", lineno + 2)));
        }
        let f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Io(format!("summary.csv line {}: {e}", lineno + 2)))
        };
        rows.push(SummaryRow {
            rho: f(cols[0])?,
            protocol: cols[1].to_string(),
            seeds: cols[2]
                .parse()
                .map_err(|e| Error::Io(format!("summary.csv line {}: {e}", lineno + 2)))?,
            id_val_acc: f(cols[3])?,
            report: MetricReport {
                id_acc: f(cols[4])?,
                ood_acc: f(cols[5])?,
                corr_acc: f(cols[6])?,
                rand_acc: f(cols[7])?,
                mca: f(cols[8])?,
                adv_acc: f(cols[9])?,
                calib_id: f(cols[10])?,
                calib_corr: f(cols[11])?,
                calib_ood: f(cols[12])?,
                anomaly_auroc: f(cols[13])?,
                cka: f(cols[14])?,
            },
        });
    }
    Ok(rows)
}
