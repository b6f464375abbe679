use std::io::Write;

use super::metrics::{Metric, Region, SegReport};
use crate::data::percentile;
use crate::error::{param_err, Result};

/// Box-plot summary of one metric over a set of volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub region: Region,
    pub metric: Metric,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Most extreme values inside the 1.5 IQR fences.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn from_values(region: Region, metric: Metric, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(param_err!("box statistics of an empty list"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = percentile(&sorted, 25.0);
        let q3 = percentile(&sorted, 75.0);
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = || sorted.iter().copied().filter(|v| (lo..=hi).contains(v));
        Ok(Self {
            region,
            metric,
            count: sorted.len(),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: percentile(&sorted, 50.0),
            q1,
            q3,
            whisker_low: inside().next().unwrap_or(q1),
            whisker_high: inside().next_back().unwrap_or(q3),
            outliers: sorted.iter().copied().filter(|v| !(lo..=hi).contains(v)).collect(),
        })
    }
}

/// One entry per region and metric.
pub fn report_boxstats(reports: &[SegReport]) -> Result<Vec<BoxStats>> {
    if reports.is_empty() {
        return Err(param_err!("no reports to summarize"));
    }
    let mut out = Vec::new();
    for region in Region::ALL {
        for metric in Metric::ALL {
            let values: Vec<f64> = reports.iter().map(|r| r.region(region).metric(metric)).collect();
            out.push(BoxStats::from_values(region, metric, &values)?);
        }
    }
    Ok(out)
}

/// CSV with header `region,metric,count,mean,median,q1,q3,whisker_low,whisker_high,outliers`;
/// outliers are `;`-separated.
pub fn write_boxstats_csv<W: Write>(stats: &[BoxStats], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["region", "metric", "count", "mean", "median", "q1", "q3", "whisker_low", "whisker_high", "outliers"])?;
    for s in stats {
        let outliers: Vec<String> = s.outliers.iter().map(|v| v.to_string()).collect();
        out.write_record([
            s.region.name().to_string(),
            s.metric.name().to_string(),
            s.count.to_string(),
            s.mean.to_string(),
            s.median.to_string(),
            s.q1.to_string(),
            s.q3.to_string(),
            s.whisker_low.to_string(),
            s.whisker_high.to_string(),
            outliers.join(";"),
        ])?;
    }
    out.flush()?;
    Ok(())
}
