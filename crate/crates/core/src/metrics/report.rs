use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub attack: String,
    pub parameter: f64,
    pub map_clean: f64,
    pub map_adv: f64,
    pub map_ratio: f64,
    pub mean_cd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

impl ReportRow {
    pub fn new(attack: &str, parameter: f64, map_clean: f64, map_adv: f64, mean_cd: f64) -> Self {
        let map_ratio = if map_clean > 0.0 { 100.0 * map_adv / map_clean } else { 0.0 };
        ReportRow {
            attack: attack.to_string(),
            parameter,
            map_clean,
            map_adv,
            map_ratio,
            mean_cd,
            dataset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clean_dataset: String,
    pub iou_threshold: f64,
    pub detector: DetectorModel,
    pub rows: Vec<ReportRow>,
}

const ATTACK_ORDER: [&str; 7] = ["perturb", "detach", "attach", "sybil", "rba", "paa", "gps_spoof"];

fn attack_rank(name: &str) -> usize {
    ATTACK_ORDER.iter().position(|a| *a == name).unwrap_or(ATTACK_ORDER.len())
}

/// Orders rows by attack type, then parameter value.
pub fn build_report(
    mut rows: Vec<ReportRow>,
    clean_dataset: &str,
    detector: &DetectorModel,
    iou_threshold: f64,
) -> EvalReport {
    rows.sort_by(|a, b| {
        attack_rank(&a.attack)
            .cmp(&attack_rank(&b.attack))
            .then_with(|| a.attack.cmp(&b.attack))
            .then(a.parameter.partial_cmp(&b.parameter).unwrap_or(Ordering::Equal))
    });
    EvalReport {
        clean_dataset: clean_dataset.to_string(),
        iou_threshold,
        detector: detector.clone(),
        rows,
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let header = ["Attack Type", "Parameter", "mAP Ratio (%)", "CD"];
        let cells: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.attack.clone(),
                    format!("{}", r.parameter),
                    format!("{:.2}", r.map_ratio),
                    format!("{:.5}", r.mean_cd),
                ]
            })
            .collect();
        let mut width = header.map(str::len);
        for row in &cells {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cols: [&str; 4]| {
            let _ = writeln!(
                out,
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
                cols[0],
                cols[1],
                cols[2],
                cols[3],
                w0 = width[0],
                w1 = width[1],
                w2 = width[2],
                w3 = width[3]
            );
        };
        line(&mut out, header);
        let _ = writeln!(out, "{}", "-".repeat(width.iter().sum::<usize>() + 6));
        for row in &cells {
            line(&mut out, [&row[0], &row[1], &row[2], &row[3]]);
        }
        out
    }
}
