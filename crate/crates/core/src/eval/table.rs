use std::fmt::Write;

use super::{Bucket, Metric};

#[derive(Clone, Debug, PartialEq)]
pub struct ApRow {
    pub metric: Metric,
    pub threshold: f64,
    pub bucket: Bucket,
    /// In [0, 1].
    pub ap: f64,
    pub gt_count: usize,
    pub det_count: usize,
}

impl ApRow {
    pub fn criterion(&self) -> String {
        format!("{}@{:.2}", self.metric.name(), self.threshold)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ApTable {
    pub rows: Vec<ApRow>,
}

impl ApTable {
    pub fn get(&self, metric: Metric, threshold: f64, bucket: Bucket) -> Option<&ApRow> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.bucket == bucket && (r.threshold - threshold).abs() < 1e-9)
    }

    /// One line per criterion, one column per bucket, AP in percent.
    pub fn to_text(&self) -> String {
        let mut buckets: Vec<Bucket> = Vec::new();
        let mut criteria: Vec<(Metric, f64)> = Vec::new();
        for r in &self.rows {
            if !buckets.contains(&r.bucket) {
                buckets.push(r.bucket);
            }
            if !criteria.iter().any(|c| c.0 == r.metric && c.1 == r.threshold) {
                criteria.push((r.metric, r.threshold));
            }
        }
        let mut out = format!("{:<10}", "criterion");
        for b in &buckets {
            let _ = write!(out, "{:>10}", b.name());
        }
        out.push('\n');
        for (m, t) in criteria {
            let _ = write!(out, "{:<10}", format!("{}@{:.2}", m.name(), t));
            for &b in &buckets {
                match self.get(m, t, b) {
                    Some(r) => {
                        let _ = write!(out, "{:>10.2}", r.ap * 100.0);
                    }
                    None => out.push_str(&format!("{:>10}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("criterion,bucket,ap,gt_count,det_count\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.4},{},{}",
                r.criterion(),
                r.bucket.name(),
                r.ap * 100.0,
                r.gt_count,
                r.det_count
            );
        }
        out
    }
}
