use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::data::LabelMap;
use crate::error::{shape_err, Result};

/// A tumor region as a set of labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Complete,
    Core,
    Enhancing,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Complete, Region::Core, Region::Enhancing];

    pub fn name(self) -> &'static str {
        match self {
            Region::Complete => "complete",
            Region::Core => "core",
            Region::Enhancing => "enhancing",
        }
    }

    pub fn labels(self) -> &'static [u8] {
        match self {
            Region::Complete => &[1, 2, 3, 4],
            Region::Core => &[1, 3, 4],
            Region::Enhancing => &[4],
        }
    }

    pub fn contains(self, label: u8) -> bool {
        match self {
            Region::Complete => (1..=4).contains(&label),
            Region::Core => matches!(label, 1 | 3 | 4),
            Region::Enhancing => label == 4,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

/// Conventions applied where a ratio has an empty denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Flags {
    /// Truth and prediction both empty: dice and sensitivity set to 1.
    pub both_empty: bool,
    /// Truth empty, prediction not: sensitivity undefined, reported as 1.
    pub sensitivity_undefined: bool,
    /// No normal pixel in the truth: specificity undefined, reported as 1.
    pub specificity_undefined: bool,
}

impl Flags {
    pub fn any(&self) -> bool {
        self.both_empty || self.sensitivity_undefined || self.specificity_undefined
    }
}

impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = [
            (self.both_empty, "both_empty"),
            (self.sensitivity_undefined, "sensitivity_undefined"),
            (self.specificity_undefined, "specificity_undefined"),
        ];
        let set: Vec<&str> = names.iter().filter(|(on, _)| *on).map(|(_, n)| *n).collect();
        f.write_str(&set.join(";"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionScore {
    pub region: Region,
    pub dice: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub counts: Confusion,
    pub flags: Flags,
}

impl RegionScore {
    pub fn from_counts(region: Region, c: Confusion) -> Self {
        let mut flags = Flags::default();
        let truth = c.tp + c.fn_;
        let pred = c.tp + c.fp;
        let (dice, sensitivity) = if truth == 0 && pred == 0 {
            flags.both_empty = true;
            (1.0, 1.0)
        } else if truth == 0 {
            flags.sensitivity_undefined = true;
            (0.0, 1.0)
        } else {
            (2.0 * c.tp as f64 / (truth + pred) as f64, c.tp as f64 / truth as f64)
        };
        let normal = c.tn + c.fp;
        let specificity = if normal == 0 {
            flags.specificity_undefined = true;
            1.0
        } else {
            c.tn as f64 / normal as f64
        };
        Self { region, dice, sensitivity, specificity, counts: c, flags }
    }

    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Dice => self.dice,
            Metric::Sensitivity => self.sensitivity,
            Metric::Specificity => self.specificity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Dice,
    Sensitivity,
    Specificity,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Dice, Metric::Sensitivity, Metric::Specificity];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::Sensitivity => "sensitivity",
            Metric::Specificity => "specificity",
        }
    }
}

/// Scores for the three regions of one volume.
#[derive(Debug, Clone, PartialEq)]
pub struct SegReport {
    pub regions: Vec<RegionScore>,
}

#[derive(Serialize)]
struct Row<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    volume: Option<&'a str>,
    region: &'a str,
    dice: f64,
    sensitivity: f64,
    specificity: f64,
    tp: u64,
    fp: u64,
    tn: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    flags: String,
}

impl SegReport {
    pub fn region(&self, region: Region) -> &RegionScore {
        self.regions.iter().find(|r| r.region == region).expect("every region is scored")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        self.rows(None, &mut out)?;
        out.flush()?;
        Ok(())
    }

    fn rows<W: Write>(&self, volume: Option<&str>, out: &mut csv::Writer<W>) -> Result<()> {
        for r in &self.regions {
            out.serialize(Row {
                volume,
                region: r.region.name(),
                dice: r.dice,
                sensitivity: r.sensitivity,
                specificity: r.specificity,
                tp: r.counts.tp,
                fp: r.counts.fp,
                tn: r.counts.tn,
                fn_: r.counts.fn_,
                flags: r.flags.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Reports of several volumes in one table, prefixed by a `volume` column.
pub fn write_reports_csv<W: Write>(reports: &[(String, SegReport)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (name, report) in reports {
        report.rows(Some(name), &mut out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn confusion(pred: &LabelMap, truth: &LabelMap, region: Region) -> Result<Confusion> {
    if pred.dims() != truth.dims() {
        return Err(shape_err!("prediction {:?} vs truth {:?}", pred.dims(), truth.dims()));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.labels().iter().zip(truth.labels()) {
        match (region.contains(p), region.contains(g)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn evaluate(pred: &LabelMap, truth: &LabelMap) -> Result<SegReport> {
    let regions = Region::ALL
        .iter()
        .map(|&r| Ok(RegionScore::from_counts(r, confusion(pred, truth, r)?)))
        .collect::<Result<_>>()?;
    Ok(SegReport { regions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(labels: Vec<u8>) -> LabelMap {
        LabelMap::new([1, 1, labels.len()], labels).unwrap()
    }

    #[test]
    fn identical_maps_score_one() {
        let m = lm(vec![0, 1, 2, 3, 4, 0, 4]);
        let r = evaluate(&m, &m).unwrap();
        for s in &r.regions {
            assert_eq!((s.dice, s.sensitivity, s.specificity), (1.0, 1.0, 1.0));
            assert!(!s.flags.any());
        }
    }

    #[test]
    fn disjoint_masks_dice_zero() {
        let r = evaluate(&lm(vec![2, 2, 0, 0]), &lm(vec![0, 0, 2, 2])).unwrap();
        assert_eq!(r.region(Region::Complete).dice, 0.0);
    }

    #[test]
    fn four_two_overlap_two() {
        let truth = lm(vec![2, 2, 2, 2, 0, 0]);
        let pred = lm(vec![2, 2, 0, 0, 0, 0]);
        let s = *evaluate(&pred, &truth).unwrap().region(Region::Complete);
        assert!((s.dice - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.sensitivity, 0.5);
        assert_eq!(s.specificity, 1.0);
    }

    #[test]
    fn empty_conventions() {
        let zero = lm(vec![0; 4]);
        let s = *evaluate(&zero, &zero).unwrap().region(Region::Enhancing);
        assert_eq!((s.dice, s.sensitivity), (1.0, 1.0));
        assert!(s.flags.both_empty);
        let s = *evaluate(&lm(vec![4, 0, 0, 0]), &zero).unwrap().region(Region::Enhancing);
        assert_eq!((s.dice, s.sensitivity, s.specificity), (0.0, 1.0, 0.75));
        assert!(s.flags.sensitivity_undefined);
        let all = lm(vec![4; 4]);
        let s = *evaluate(&all, &all).unwrap().region(Region::Enhancing);
        assert!(s.flags.specificity_undefined && s.specificity == 1.0);
    }

    #[test]
    fn extent_mismatch() {
        assert!(matches!(evaluate(&lm(vec![0; 3]), &lm(vec![0; 4])), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn csv_layout() {
        let r = evaluate(&lm(vec![0, 4, 2]), &lm(vec![0, 4, 4])).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "region,dice,sensitivity,specificity,tp,fp,tn,fn,flags");
        assert_eq!(lines[1], "complete,1.0,1.0,1.0,2,0,1,0,");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn multi_volume_csv_has_volume_column() {
        let r = evaluate(&lm(vec![0, 4, 2]), &lm(vec![0, 4, 4])).unwrap();
        let mut buf = Vec::new();
        write_reports_csv(&[("a".into(), r.clone()), ("b".into(), r)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "volume,region,dice,sensitivity,specificity,tp,fp,tn,fn,flags");
        assert_eq!(lines[4], "b,complete,1.0,1.0,1.0,2,0,1,0,");
        assert_eq!(lines.len(), 7);
    }
}
