//! Confusion-matrix construction and precision/recall/F1 computation: per
//! class, micro-averaged over pooled counts, and macro-averaged over all
//! taxonomy classes. Values are computed at full double precision; rounding
//! to two decimals happens only in the CSV renderers.

use thiserror::Error;

use crate::corpus::Taxonomy;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("gold and prediction lists differ in length ({golds} vs {preds})")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("class id {id} out of range for {num_classes} classes")]
    ClassOutOfRange { id: usize, num_classes: usize },
    #[error("confusion matrix needs at least one class")]
    ZeroClasses,
    #[error("metrics over zero evaluated examples are undefined")]
    EmptyMatrix,
    #[error("count vector length {actual} does not match {num_classes}x{num_classes}")]
    BadCountLength { num_classes: usize, actual: usize },
    #[error("report list covers {reports} classes but taxonomy has {taxonomy}")]
    TaxonomyMismatch { reports: usize, taxonomy: usize },
}

/// Square count grid: rows are gold classes, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self, MetricsError> {
        if num_classes == 0 {
            return Err(MetricsError::ZeroClasses);
        }
        if counts.len() != num_classes * num_classes {
            return Err(MetricsError::BadCountLength {
                num_classes,
                actual: counts.len(),
            });
        }
        Ok(ConfusionMatrix {
            num_classes,
            counts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn at(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.num_classes + pred]
    }

    /// Total evaluated examples.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Correct predictions (the diagonal sum).
    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.at(c, c)).sum()
    }

    pub fn row_sum(&self, gold: usize) -> u64 {
        (0..self.num_classes).map(|p| self.at(gold, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.num_classes).map(|g| self.at(g, pred)).sum()
    }
}

/// Tallies gold/prediction pairs into a confusion matrix.
pub fn confusion(
    golds: &[usize],
    preds: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if num_classes == 0 {
        return Err(MetricsError::ZeroClasses);
    }
    if golds.len() != preds.len() {
        return Err(MetricsError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let mut counts = vec![0u64; num_classes * num_classes];
    for (&g, &p) in golds.iter().zip(preds) {
        for id in [g, p] {
            if id >= num_classes {
                return Err(MetricsError::ClassOutOfRange { id, num_classes });
            }
        }
        counts[g * num_classes + p] += 1;
    }
    Ok(ConfusionMatrix {
        num_classes,
        counts,
    })
}

/// Per-class precision, recall, F1, and gold support. Every quantity falls
/// back to zero when its denominator vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class_id: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn per_class_prf(matrix: &ConfusionMatrix) -> Vec<ClassReport> {
    (0..matrix.num_classes())
        .map(|c| {
            let tp = matrix.at(c, c);
            let precision = ratio(tp, matrix.col_sum(c));
            let recall = ratio(tp, matrix.row_sum(c));
            ClassReport {
                class_id: c,
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: matrix.row_sum(c),
            }
        })
        .collect()
}

/// F1 over globally pooled true/false positives and negatives. For
/// single-label classification every error is one false positive and one
/// false negative, so this equals trace/total exactly.
pub fn micro_f1(matrix: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = matrix.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let tp = matrix.trace();
    let fp = total - tp;
    let fn_ = total - tp;
    Ok((2 * tp) as f64 / (2 * tp + fp + fn_) as f64)
}

/// Unweighted mean of per-class F1 over all classes, counting zero-support
/// classes as zero.
pub fn macro_f1(matrix: &ConfusionMatrix) -> f64 {
    let reports = per_class_prf(matrix);
    reports.iter().map(|r| r.f1).sum::<f64>() / matrix.num_classes() as f64
}

pub fn accuracy(matrix: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = matrix.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    Ok(matrix.trace() as f64 / total as f64)
}

/// Aggregate metrics plus the per-class table they summarize.
#[derive(Debug, Clone)]
pub struct SummaryReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassReport>,
}

impl SummaryReport {
    pub fn n_examples(&self) -> u64 {
        self.per_class.iter().map(|r| r.support).sum()
    }
}

pub fn summary_report(matrix: &ConfusionMatrix) -> Result<SummaryReport, MetricsError> {
    Ok(SummaryReport {
        micro_f1: micro_f1(matrix)?,
        macro_f1: macro_f1(matrix),
        accuracy: accuracy(matrix)?,
        per_class: per_class_prf(matrix),
    })
}

/// A class whose reported F1 disagrees with the harmonic mean of its own
/// precision and recall.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditFinding {
    pub class_id: usize,
    pub reported_f1: f64,
    pub harmonic_f1: f64,
    pub deviation: f64,
}

/// Flags reports where `|f1 - 2pr/(p+r)|` exceeds the tolerance. Rows with
/// `p + r = 0` are exempt since the harmonic mean is undefined there.
pub fn audit_report(reports: &[ClassReport], tolerance: f64) -> Vec<AuditFinding> {
    reports
        .iter()
        .filter(|r| r.precision + r.recall > 0.0)
        .filter_map(|r| {
            let harmonic_f1 = harmonic(r.precision, r.recall);
            let deviation = (r.f1 - harmonic_f1).abs();
            (deviation > tolerance).then_some(AuditFinding {
                class_id: r.class_id,
                reported_f1: r.f1,
                harmonic_f1,
                deviation,
            })
        })
        .collect()
}

/// Renders `class_id,name,precision,recall,f1,support` rows, two decimals.
pub fn per_class_csv(reports: &[ClassReport], taxonomy: &Taxonomy) -> Result<String, MetricsError> {
    if reports.len() != taxonomy.num_classes() {
        return Err(MetricsError::TaxonomyMismatch {
            reports: reports.len(),
            taxonomy: taxonomy.num_classes(),
        });
    }
    let mut out = String::from("class_id,name,precision,recall,f1,support\n");
    for r in reports {
        let name = taxonomy.name(r.class_id).unwrap_or("");
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{:.2},{}\n",
            r.class_id, name, r.precision, r.recall, r.f1, r.support
        ));
    }
    Ok(out)
}

/// Renders the raw count grid, one gold class per line, no header.
pub fn confusion_csv(matrix: &ConfusionMatrix) -> String {
    let mut out = String::new();
    for g in 0..matrix.num_classes() {
        let row: Vec<String> = (0..matrix.num_classes())
            .map(|p| matrix.at(g, p).to_string())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn summary_csv(summary: &SummaryReport) -> String {
    format!(
        "micro_f1,macro_f1,accuracy,n_examples\n{:.6},{:.6},{:.6},{}\n",
        summary.micro_f1,
        summary.macro_f1,
        summary.accuracy,
        summary.n_examples()
    )
}

pub fn audit_csv(findings: &[AuditFinding]) -> String {
    let mut out = String::from("class_id,reported_f1,harmonic_f1,deviation\n");
    for f in findings {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            f.class_id, f.reported_f1, f.harmonic_f1, f.deviation
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_tally_fixture() {
        let m = confusion(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(m.at(0, 0), 1);
        assert_eq!(m.at(0, 1), 1);
        assert_eq!(m.at(1, 0), 0);
        assert_eq!(m.at(1, 1), 1);
        let micro = micro_f1(&m).unwrap();
        let macro_ = macro_f1(&m);
        assert!((micro - 2.0 / 3.0).abs() < 1e-12);
        assert!((macro_ - 2.0 / 3.0).abs() < 1e-12);
        assert!((accuracy(&m).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let reports = per_class_prf(&m);
        assert_eq!(reports[0].precision, 1.0);
        assert_eq!(reports[0].recall, 0.5);
        assert_eq!(reports[1].precision, 0.5);
        assert_eq!(reports[1].recall, 1.0);
        assert_eq!(reports[0].support, 2);
        assert_eq!(reports[1].support, 1);
    }

    #[test]
    fn diagonal_matrix_scores_one() {
        let m = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(micro_f1(&m).unwrap(), 1.0);
        assert_eq!(macro_f1(&m), 1.0);
    }

    #[test]
    fn zero_support_class_counts_as_zero_in_macro() {
        // Class 1 never appears as gold or prediction.
        let m = confusion(&[0, 2], &[0, 2], 3).unwrap();
        assert_eq!(micro_f1(&m).unwrap(), 1.0);
        assert!((macro_f1(&m) - 2.0 / 3.0).abs() < 1e-12);
        let reports = per_class_prf(&m);
        assert_eq!(reports[1].precision, 0.0);
        assert_eq!(reports[1].recall, 0.0);
        assert_eq!(reports[1].f1, 0.0);
        assert_eq!(reports[1].support, 0);
    }

    #[test]
    fn empty_input_gives_zero_matrix_and_metric_errors() {
        let m = confusion(&[], &[], 4).unwrap();
        assert_eq!(m.total(), 0);
        assert!(matches!(micro_f1(&m), Err(MetricsError::EmptyMatrix)));
        assert!(matches!(accuracy(&m), Err(MetricsError::EmptyMatrix)));
        assert_eq!(macro_f1(&m), 0.0);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            confusion(&[0], &[0, 1], 2),
            Err(MetricsError::LengthMismatch { golds: 1, preds: 2 })
        ));
        assert!(matches!(
            confusion(&[2], &[0], 2),
            Err(MetricsError::ClassOutOfRange {
                id: 2,
                num_classes: 2
            })
        ));
        assert!(matches!(
            confusion(&[0], &[5], 3),
            Err(MetricsError::ClassOutOfRange {
                id: 5,
                num_classes: 3
            })
        ));
        assert!(matches!(
            confusion(&[], &[], 0),
            Err(MetricsError::ZeroClasses)
        ));
        assert!(matches!(
            ConfusionMatrix::from_counts(2, vec![1, 2, 3]),
            Err(MetricsError::BadCountLength {
                num_classes: 2,
                actual: 3
            })
        ));
    }

    #[test]
    fn precision_recall_round_to_published_row() {
        // p = 0.95, r = 0.98 harmonically combine to about 0.9648, which the
        // two-decimal renderer shows as 0.96.
        let f1 = harmonic(0.95, 0.98);
        assert!((f1 - 0.964_766_839_378_238_3).abs() < 1e-12);
        assert_eq!(format!("{f1:.2}"), "0.96");
    }

    #[test]
    fn audit_flags_inconsistent_rows_only() {
        let make = |class_id, precision, recall, f1| ClassReport {
            class_id,
            precision,
            recall,
            f1,
            support: 10,
        };
        let reports = vec![
            make(0, 0.95, 0.98, 0.96),
            make(72, 0.07, 0.40, 0.50),
            make(8, 0.0, 0.0, 0.0),
        ];
        let findings = audit_report(&reports, 0.01);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].class_id, 72);
        assert!((findings[0].harmonic_f1 - 0.119_148_936_170_212_77).abs() < 1e-12);
        assert!(findings[0].deviation > 0.38);
        assert!(audit_report(&[], 0.01).is_empty());
        // Zero-denominator rows are exempt even with absurd reported f1.
        let weird = vec![make(3, 0.0, 0.0, 0.9)];
        assert!(audit_report(&weird, 0.01).is_empty());
    }

    #[test]
    fn renderers_produce_expected_layouts() {
        let taxonomy =
            Taxonomy::from_csv("id,name,count\n0,Adjustments,5\n1,Benefits,6\n").unwrap();
        let m = confusion(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        let per_class = per_class_csv(&per_class_prf(&m), &taxonomy).unwrap();
        assert_eq!(
            per_class,
            "class_id,name,precision,recall,f1,support\n\
             0,Adjustments,1.00,0.50,0.67,2\n\
             1,Benefits,0.50,1.00,0.67,1\n"
        );
        assert_eq!(confusion_csv(&m), "1,1\n0,1\n");
        let summary = summary_report(&m).unwrap();
        assert_eq!(
            summary_csv(&summary),
            "micro_f1,macro_f1,accuracy,n_examples\n0.666667,0.666667,0.666667,3\n"
        );
        let findings = audit_report(
            &[ClassReport {
                class_id: 72,
                precision: 0.07,
                recall: 0.40,
                f1: 0.50,
                support: 5,
            }],
            0.01,
        );
        let audit = audit_csv(&findings);
        assert!(audit.starts_with("class_id,reported_f1,harmonic_f1,deviation\n"));
        assert!(audit.contains("72,0.500000,0.119149,0.380851"));
    }

    #[test]
    fn per_class_csv_rejects_taxonomy_size_mismatch() {
        let taxonomy = Taxonomy::from_csv("id,name,count\n0,Adjustments,5\n").unwrap();
        let m = confusion(&[0, 1], &[0, 1], 2).unwrap();
        assert!(matches!(
            per_class_csv(&per_class_prf(&m), &taxonomy),
            Err(MetricsError::TaxonomyMismatch {
                reports: 2,
                taxonomy: 1
            })
        ));
    }
}
