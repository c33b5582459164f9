//! Confusion matrices, per-class IoU with NaN for absent classes, pixel
//! accuracy, prediction timing and the CSV/JSON report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassTable;
use crate::error::{Error, Result};
use crate::label::LabelMap;

/// `counts[g * C + p]` is the number of pixels of ground truth `g` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Dimension(format!(
                "{} counts for a {classes}x{classes} matrix",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one count per pixel at `(gt, pred)`. Nothing is added if any value is out of range.
    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if gt.dims() != pred.dims() {
            return Err(Error::Dimension(format!(
                "ground truth is {}x{} but prediction is {}x{}",
                gt.height(),
                gt.width(),
                pred.height(),
                pred.width()
            )));
        }
        gt.validate(self.classes)?;
        pred.validate(self.classes)?;
        for (&g, &p) in gt.values().iter().zip(pred.values()) {
            self.counts[usize::from(g) * self.classes + usize::from(p)] += 1;
        }
        Ok(())
    }

    /// Entrywise sum.
    pub fn merge(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    pub fn merge_from(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Dimension(format!(
                "cannot merge {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn transpose(&self) -> ConfusionMatrix {
        let c = self.classes;
        let mut t = ConfusionMatrix::new(c);
        for g in 0..c {
            for p in 0..c {
                t.counts[p * c + g] = self.get(g, p);
            }
        }
        t
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.get(class, class)
    }

    /// Pixels predicted as `class` whose ground truth differs.
    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.classes).map(|g| self.get(g, class)).sum::<u64>() - self.get(class, class)
    }

    /// Pixels of ground truth `class` predicted as something else.
    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..self.classes).map(|p| self.get(class, p)).sum::<u64>() - self.get(class, class)
    }

    /// `tp / (tp + fp + fn)` per class, NaN where the class never occurs in
    /// either ground truth or prediction.
    pub fn iou_per_class(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let tp = self.true_positives(c);
                let union = tp + self.false_positives(c) + self.false_negatives(c);
                if union == 0 {
                    f64::NAN
                } else {
                    tp as f64 / union as f64
                }
            })
            .collect()
    }

    /// Fraction of pixels on the diagonal.
    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Evaluation("no pixels have been accumulated".into()));
        }
        let trace: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        Ok(trace as f64 / total as f64)
    }
}

/// Arithmetic mean of the non-NaN entries.
pub fn mean_iou(ious: &[f64]) -> Result<f64> {
    let present: Vec<f64> = ious.iter().copied().filter(|v| !v.is_nan()).collect();
    if present.is_empty() {
        return Err(Error::Evaluation(
            "every class IoU is NaN; the evaluation set is empty".into(),
        ));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Arithmetic mean of per-picture prediction times.
pub fn mean_seconds(times: &[f64]) -> Result<f64> {
    if times.is_empty() {
        return Err(Error::Evaluation("no prediction times recorded".into()));
    }
    Ok(times.iter().sum::<f64>() / times.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Timing {
    pub per_image_s: Vec<f64>,
    pub mean_s: f64,
}

/// Times `predict` once per sample. Only the call itself is inside the clock,
/// so loading and scoring stay outside the measurement. Outputs are returned
/// alongside the timings.
pub fn bench_prediction<S, R>(
    samples: &[S],
    mut predict: impl FnMut(&S) -> Result<R>,
) -> Result<(Timing, Vec<R>)> {
    if samples.is_empty() {
        return Err(Error::Evaluation(
            "benchmark needs at least one sample".into(),
        ));
    }
    let mut times = Vec::with_capacity(samples.len());
    let mut outputs = Vec::with_capacity(samples.len());
    for s in samples {
        let start = Instant::now();
        let out = predict(s)?;
        let elapsed = start.elapsed().as_secs_f64();
        outputs.push(out);
        times.push(elapsed.max(f64::MIN_POSITIVE));
    }
    let mean_s = mean_seconds(&times)?;
    Ok((
        Timing {
            per_image_s: times,
            mean_s,
        },
        outputs,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassIoU {
    pub class_id: usize,
    pub class_name: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// NaN when the class has an empty union; `null` in JSON.
    #[serde(with = "nan_as_null")]
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub classes: Vec<ClassIoU>,
    pub mean_iou: f64,
    pub pixel_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_time_s: Option<f64>,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

const CSV_HEADER: &str = "class_id,class_name,tp,fp,fn,iou";

impl IoUReport {
    pub fn from_confusion(
        cm: &ConfusionMatrix,
        table: &ClassTable,
        pred_time_s: Option<f64>,
    ) -> Result<Self> {
        if table.len() != cm.classes() {
            return Err(Error::Config(format!(
                "class table has {} classes but the confusion matrix has {}",
                table.len(),
                cm.classes()
            )));
        }
        let ious = cm.iou_per_class();
        let classes = ious
            .iter()
            .enumerate()
            .map(|(c, &iou)| ClassIoU {
                class_id: c,
                class_name: table.name(c).unwrap_or_default().to_string(),
                tp: cm.true_positives(c),
                fp: cm.false_positives(c),
                fn_: cm.false_negatives(c),
                iou,
            })
            .collect();
        Ok(IoUReport {
            classes,
            mean_iou: mean_iou(&ious)?,
            pixel_accuracy: cm.pixel_accuracy()?,
            pred_time_s,
        })
    }

    pub fn ious(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.iou).collect()
    }

    /// CSV text: one row per class, then `mean_iou`, `pixel_accuracy` and
    /// (when timed) `pred_time_s` rows with the value in the last column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.class_id,
                csv_field(&c.class_name),
                c.tp,
                c.fp,
                c.fn_,
                fmt_float(c.iou)
            );
        }
        let _ = writeln!(out, "mean_iou,,,,,{}", fmt_float(self.mean_iou));
        let _ = writeln!(out, "pixel_accuracy,,,,,{}", fmt_float(self.pixel_accuracy));
        if let Some(t) = self.pred_time_s {
            let _ = writeln!(out, "pred_time_s,,,,,{}", fmt_float(t));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: "<report>".into(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == CSV_HEADER => {}
            _ => return Err(err(1, format!("expected header '{CSV_HEADER}'"))),
        }
        let mut report = IoUReport {
            classes: Vec::new(),
            mean_iou: f64::NAN,
            pixel_accuracy: f64::NAN,
            pred_time_s: None,
        };
        for (i, line) in lines {
            let fields = split_csv(line);
            if fields.len() != 6 {
                return Err(err(
                    i + 1,
                    format!("expected 6 fields, found {}", fields.len()),
                ));
            }
            let float =
                |s: &str| parse_float(s).ok_or_else(|| err(i + 1, format!("bad number '{s}'")));
            let int = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| err(i + 1, format!("bad count '{s}'")))
            };
            match fields[0].as_str() {
                "mean_iou" => report.mean_iou = float(&fields[5])?,
                "pixel_accuracy" => report.pixel_accuracy = float(&fields[5])?,
                "pred_time_s" => report.pred_time_s = Some(float(&fields[5])?),
                id => report.classes.push(ClassIoU {
                    class_id: int(id)? as usize,
                    class_name: fields[1].clone(),
                    tp: int(&fields[2])?,
                    fp: int(&fields[3])?,
                    fn_: int(&fields[4])?,
                    iou: float(&fields[5])?,
                }),
            }
        }
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<report json>".into(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Writes the CSV report to `path`.
pub fn write_report(report: &IoUReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))
}

/// Writes the JSON mirror of the report to `path`.
pub fn write_report_json(report: &IoUReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report.to_json()).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<IoUReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    IoUReport::parse_csv(&text).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    })
}

/// Shortest round-trip decimal, or `nan`.
fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:?}")
    }
}

fn parse_float(s: &str) -> Option<f64> {
    if s.eq_ignore_ascii_case("nan") {
        Some(f64::NAN)
    } else {
        s.parse().ok()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn split_csv(line: &str) -> Vec<String> {
    let mut fields = vec![String::new()];
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(ch) = chars.next() {
        match (ch, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                chars.next();
                fields.last_mut().unwrap().push('"');
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(String::new()),
            (c, _) => fields.last_mut().unwrap().push(c),
        }
    }
    fields
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(h: usize, w: usize, v: &[u8]) -> LabelMap {
        LabelMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn identical_maps_hit_diagonal() {
        let mut cm = ConfusionMatrix::new(20);
        let m = map(2, 2, &[3; 4]);
        cm.accumulate(&m, &m).unwrap();
        assert_eq!(cm.get(3, 3), 4);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn disjoint_maps_hit_off_diagonal() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&map(2, 2, &[0; 4]), &map(2, 2, &[1; 4]))
            .unwrap();
        assert_eq!(cm.get(0, 1), 4);
        assert_eq!(cm.pixel_accuracy().unwrap(), 0.0);
    }

    #[test]
    fn accumulate_errors() {
        let mut cm = ConfusionMatrix::new(3);
        assert!(matches!(
            cm.accumulate(&map(2, 2, &[0; 4]), &map(1, 4, &[0; 4])),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            cm.accumulate(&map(1, 2, &[0, 3]), &map(1, 2, &[0, 0])),
            Err(Error::Data(_))
        ));
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn two_of_six_overlap() {
        // gt mask = pixels 0..4, pred mask = pixels 2..6 on a 2x4 grid
        let gt = map(2, 4, &[1, 1, 1, 1, 0, 0, 0, 0]);
        let pred = map(2, 4, &[0, 0, 1, 1, 1, 1, 0, 0]);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&gt, &pred).unwrap();
        assert_eq!(
            (
                cm.true_positives(1),
                cm.false_positives(1),
                cm.false_negatives(1)
            ),
            (2, 2, 2)
        );
        assert!((cm.iou_per_class()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_nan_and_predicted_only_class_is_zero() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&map(1, 2, &[0, 0]), &map(1, 2, &[0, 1]))
            .unwrap();
        let iou = cm.iou_per_class();
        assert_eq!(iou[0], 0.5);
        assert_eq!(iou[1], 0.0);
        assert!(iou[2].is_nan());
    }

    #[test]
    fn perfect_prediction() {
        let m = map(2, 2, &[0, 1, 1, 0]);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&m, &m).unwrap();
        assert_eq!(cm.iou_per_class(), vec![1.0, 1.0]);
        assert_eq!(cm.pixel_accuracy().unwrap(), 1.0);
    }

    #[test]
    fn mean_skips_nan() {
        assert_eq!(mean_iou(&[1.0, 0.0, f64::NAN]).unwrap(), 0.5);
        assert_eq!(mean_iou(&[1.0; 5]).unwrap(), 1.0);
        assert_eq!(mean_iou(&[f64::NAN, 0.25]).unwrap(), 0.25);
        assert!(matches!(
            mean_iou(&[f64::NAN; 3]),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn empty_matrix_has_no_accuracy() {
        assert!(matches!(
            ConfusionMatrix::new(4).pixel_accuracy(),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn regime_prediction_times_average() {
        let mean = mean_seconds(&[0.1227, 0.1376, 0.1225]).unwrap();
        assert_eq!(format!("{mean:.4}"), "0.1276");
        assert_eq!(mean_seconds(&[0.2]).unwrap(), 0.2);
        assert!(mean_seconds(&[]).is_err());
    }

    #[test]
    fn bench_times_are_positive() {
        let samples = vec![1u64, 2, 3];
        let (timing, out) =
            bench_prediction(&samples, |&n| Ok((0..n * 1000).sum::<u64>())).unwrap();
        assert_eq!(out.len(), 3);
        assert!(timing.per_image_s.iter().all(|&t| t > 0.0));
        let mean = timing.per_image_s.iter().sum::<f64>() / 3.0;
        assert!((timing.mean_s - mean).abs() <= f64::EPSILON * mean);
        let empty: Vec<u64> = Vec::new();
        assert!(bench_prediction(&empty, |_| Ok(())).is_err());
    }

    fn sample_report(time: Option<f64>) -> IoUReport {
        let mut cm = ConfusionMatrix::new(4);
        cm.accumulate(
            &map(2, 3, &[0, 0, 1, 1, 3, 0]),
            &map(2, 3, &[0, 1, 1, 1, 0, 0]),
        )
        .unwrap();
        let table =
            ClassTable::new(vec!["a".into(), "b, c".into(), "animal".into(), "d".into()]).unwrap();
        IoUReport::from_confusion(&cm, &table, time).unwrap()
    }

    #[test]
    fn csv_renders_nan_literally() {
        let r = sample_report(None);
        let csv = r.to_csv();
        assert!(csv.starts_with("class_id,class_name,tp,fp,fn,iou\n"));
        assert!(csv.contains("\n2,animal,0,0,0,nan\n"), "{csv}");
        assert!(csv.contains("\"b, c\""));
        assert!(!csv.contains("pred_time_s"));
        assert!(sample_report(Some(0.5))
            .to_csv()
            .ends_with("pred_time_s,,,,,0.5\n"));
    }

    fn same(a: &IoUReport, b: &IoUReport) -> bool {
        let eq = |x: f64, y: f64| x == y || (x.is_nan() && y.is_nan());
        a.classes.len() == b.classes.len()
            && a.classes.iter().zip(&b.classes).all(|(x, y)| {
                (x.class_id, &x.class_name, x.tp, x.fp, x.fn_)
                    == (y.class_id, &y.class_name, y.tp, y.fp, y.fn_)
                    && eq(x.iou, y.iou)
            })
            && eq(a.mean_iou, b.mean_iou)
            && eq(a.pixel_accuracy, b.pixel_accuracy)
            && a.pred_time_s == b.pred_time_s
    }

    #[test]
    fn csv_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for r in [sample_report(None), sample_report(Some(0.1276))] {
            let p = dir.path().join("r.csv");
            write_report(&r, &p).unwrap();
            assert!(same(&read_report(&p).unwrap(), &r));
            let json = r.to_json();
            assert!(json.contains("\"iou\": null"));
            assert!(same(&IoUReport::from_json(&json).unwrap(), &r));
        }
    }

    fn brute_tally(c: usize, gt: &[u8], pred: &[u8]) -> Vec<u64> {
        let mut counts = vec![0; c * c];
        for g in 0..c {
            for p in 0..c {
                counts[g * c + p] = gt
                    .iter()
                    .zip(pred)
                    .filter(|&(&a, &b)| usize::from(a) == g && usize::from(b) == p)
                    .count() as u64;
            }
        }
        counts
    }

    proptest! {
        #[test]
        fn accumulate_matches_brute_force(gt in proptest::collection::vec(0u8..6, 64),
                                          pred in proptest::collection::vec(0u8..6, 64)) {
            let mut cm = ConfusionMatrix::new(6);
            cm.accumulate(&map(8, 8, &gt), &map(8, 8, &pred)).unwrap();
            let expected = brute_tally(6, &gt, &pred);
            prop_assert_eq!(cm.counts(), expected.as_slice());
            let agree = gt.iter().zip(&pred).filter(|(a, b)| a == b).count();
            prop_assert_eq!(cm.pixel_accuracy().unwrap(), agree as f64 / 64.0);
        }

        #[test]
        fn merge_equals_single_pass(gt in proptest::collection::vec(0u8..5, 40),
                                    pred in proptest::collection::vec(0u8..5, 40),
                                    cut in 1usize..39) {
            let mut whole = ConfusionMatrix::new(5);
            whole.accumulate(&map(1, 40, &gt), &map(1, 40, &pred)).unwrap();
            let mut a = ConfusionMatrix::new(5);
            a.accumulate(&map(1, cut, &gt[..cut]), &map(1, cut, &pred[..cut])).unwrap();
            let mut b = ConfusionMatrix::new(5);
            b.accumulate(&map(1, 40 - cut, &gt[cut..]), &map(1, 40 - cut, &pred[cut..])).unwrap();
            prop_assert_eq!(a.merge(&b).unwrap(), whole.clone());
            prop_assert_eq!(b.merge(&a).unwrap(), whole);
        }

        #[test]
        fn iou_is_bounded_and_transpose_symmetric(gt in proptest::collection::vec(0u8..7, 50),
                                                  pred in proptest::collection::vec(0u8..7, 50)) {
            let mut cm = ConfusionMatrix::new(7);
            cm.accumulate(&map(5, 10, &gt), &map(5, 10, &pred)).unwrap();
            let a = cm.iou_per_class();
            let b = cm.transpose().iou_per_class();
            for c in 0..7 {
                prop_assert!(a[c].is_nan() || (0.0..=1.0).contains(&a[c]));
                prop_assert!(a[c] == b[c] || (a[c].is_nan() && b[c].is_nan()));
                let clean = (0..7).all(|o| o == c || (cm.get(c, o) == 0 && cm.get(o, c) == 0));
                prop_assert_eq!(a[c] == 1.0, clean && cm.get(c, c) > 0);
            }
        }
    }
}
