//! Confusion matrices and the per-class / averaged measures derived from them.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Square count grid. Rows are true classes, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn zeros(class_names: Vec<String>) -> Self {
        let n = class_names.len();
        ConfusionMatrix {
            counts: vec![vec![0; n]; n],
            class_names,
        }
    }

    pub fn from_counts(class_names: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = class_names.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(Error::Input(format!("confusion counts must be {n}x{n}")));
        }
        Ok(ConfusionMatrix { counts, class_names })
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        self.counts.iter().map(|r| r[predicted]).sum()
    }

    /// Reorders classes so that new class `i` is old class `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.n_classes();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&o| o >= n || std::mem::replace(&mut seen[o], true)) {
            return Err(Error::Input("class order must be a permutation".into()));
        }
        let counts = order
            .iter()
            .map(|&t| order.iter().map(|&p| self.counts[t][p]).collect())
            .collect();
        let class_names = order.iter().map(|&o| self.class_names[o].clone()).collect();
        Ok(ConfusionMatrix { counts, class_names })
    }

    /// `truth,<class>...` header then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth");
        for name in &self.class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies `(truth, prediction)` pairs.
pub fn confusion(truths: &[usize], predictions: &[usize], class_names: Vec<String>) -> Result<ConfusionMatrix> {
    if truths.len() != predictions.len() {
        return Err(Error::Input(format!(
            "{} truths but {} predictions",
            truths.len(),
            predictions.len()
        )));
    }
    let mut m = ConfusionMatrix::zeros(class_names);
    let n = m.n_classes();
    for (&t, &p) in truths.iter().zip(predictions) {
        if t >= n || p >= n {
            return Err(Error::Input(format!("label pair ({t}, {p}) outside {n} classes")));
        }
        m.counts[t][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub ovr_accuracy: f64,
    /// Row sum.
    pub support: u64,
    /// Column sum.
    pub predicted: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub classes: Vec<ClassMetrics>,
    pub total: u64,
    /// `trace / total`.
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f_measure: f64,
    /// Mean of the one-vs-rest accuracies.
    pub macro_ovr_accuracy: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    /// Metrics that hit a zero denominator and were set to 0.
    pub flags: Vec<String>,
}

/// An externally quoted accuracy printed next to the computed ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub label: String,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

pub fn report(matrix: &ConfusionMatrix) -> EvalReport {
    let total = matrix.total();
    let mut flags = Vec::new();
    if total == 0 {
        flags.push("empty confusion matrix: all metrics set to 0".to_string());
    }
    let mut classes = Vec::with_capacity(matrix.n_classes());
    let (mut tp_sum, mut fp_sum, mut fn_sum) = (0u64, 0u64, 0u64);
    for (c, name) in matrix.class_names().iter().enumerate() {
        let tp = matrix.get(c, c);
        let support = matrix.row_sum(c);
        let predicted = matrix.col_sum(c);
        let (fp, fneg) = (predicted - tp, support - tp);
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fneg;
        let precision = ratio(tp, predicted).unwrap_or_else(|| {
            if total > 0 {
                flags.push(format!("precision({name}) = 0: no predictions"));
            }
            0.0
        });
        let recall = ratio(tp, support).unwrap_or_else(|| {
            if total > 0 {
                flags.push(format!("recall({name}) = 0: no samples"));
            }
            0.0
        });
        let tn = total - tp - fp - fneg;
        classes.push(ClassMetrics {
            name: name.clone(),
            precision,
            recall,
            f_measure: harmonic(precision, recall),
            ovr_accuracy: ratio(tp + tn, total).unwrap_or(0.0),
            support,
            predicted,
        });
    }
    EvalReport {
        total,
        accuracy: ratio(matrix.trace(), total).unwrap_or(0.0),
        macro_precision: mean(classes.iter().map(|c| c.precision)),
        macro_recall: mean(classes.iter().map(|c| c.recall)),
        macro_f_measure: mean(classes.iter().map(|c| c.f_measure)),
        macro_ovr_accuracy: mean(classes.iter().map(|c| c.ovr_accuracy)),
        micro_precision: ratio(tp_sum, tp_sum + fp_sum).unwrap_or(0.0),
        micro_recall: ratio(tp_sum, tp_sum + fn_sum).unwrap_or(0.0),
        classes,
        flags,
    }
}

/// Machine-readable report, values to 4 decimals.
pub fn render_csv(report: &EvalReport) -> String {
    let mut out = String::from("class,precision,recall,f_measure,ovr_accuracy\n");
    for c in &report.classes {
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{:.4}",
            c.name, c.precision, c.recall, c.f_measure, c.ovr_accuracy
        );
    }
    let _ = writeln!(out, "overall_accuracy,{:.4},,,", report.accuracy);
    let _ = writeln!(out, "micro_precision,{:.4},,,", report.micro_precision);
    let _ = writeln!(out, "micro_recall,{:.4},,,", report.micro_recall);
    let _ = writeln!(
        out,
        "macro_average,{:.4},{:.4},{:.4},{:.4}",
        report.macro_precision, report.macro_recall, report.macro_f_measure, report.macro_ovr_accuracy
    );
    out
}

/// Human-readable table, optionally followed by reference comparisons.
pub fn render_text(report: &EvalReport, matrix: &ConfusionMatrix, references: &[Reference]) -> String {
    let width = matrix
        .class_names()
        .iter()
        .map(String::len)
        .chain([7])
        .max()
        .unwrap_or(7);
    let mut out = String::new();
    let _ = writeln!(out, "confusion matrix (rows = truth, columns = prediction)");
    let _ = write!(out, "{:width$}", "");
    for name in matrix.class_names() {
        let _ = write!(out, " {name:>width$}");
    }
    out.push('\n');
    for (name, row) in matrix.class_names().iter().zip(matrix.counts()) {
        let _ = write!(out, "{name:width$}");
        for c in row {
            let _ = write!(out, " {c:>width$}");
        }
        out.push('\n');
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{:width$} {:>9} {:>9} {:>9} {:>9} {:>7}",
        "class", "precision", "recall", "f_measure", "ovr_acc", "support"
    );
    for c in &report.classes {
        let _ = writeln!(
            out,
            "{:width$} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>7}",
            c.name, c.precision, c.recall, c.f_measure, c.ovr_accuracy, c.support
        );
    }
    let _ = writeln!(
        out,
        "{:width$} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>7}",
        "macro",
        report.macro_precision,
        report.macro_recall,
        report.macro_f_measure,
        report.macro_ovr_accuracy,
        report.total
    );
    out.push('\n');
    let _ = writeln!(out, "overall accuracy (trace/total): {:.4}", report.accuracy);
    let _ = writeln!(
        out,
        "macro per-class accuracy (mean one-vs-rest): {:.4}",
        report.macro_ovr_accuracy
    );
    for r in references {
        let _ = writeln!(
            out,
            "reference {}: {:.4} (overall {:+.4}, macro per-class {:+.4})",
            r.label,
            r.accuracy,
            report.accuracy - r.accuracy,
            report.macro_ovr_accuracy - r.accuracy
        );
    }
    for f in &report.flags {
        let _ = writeln!(out, "note: {f}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn cells() -> Vec<String> {
        ["EOSINOPHIL", "LYMPHOCYTE", "MONOCYTE", "NEUTROPHIL"]
            .map(String::from)
            .to_vec()
    }

    fn kaggle() -> ConfusionMatrix {
        ConfusionMatrix::from_counts(
            cells(),
            vec![
                vec![246, 0, 0, 2],
                vec![0, 248, 0, 0],
                vec![0, 0, 248, 0],
                vec![1, 0, 0, 247],
            ],
        )
        .unwrap()
    }

    #[test]
    fn confusion_counts_pairs() {
        let m = confusion(&[0, 1, 1, 2], &[0, 1, 2, 2], names(3)).unwrap();
        assert_eq!(m.counts(), &[vec![1, 0, 0], vec![0, 1, 1], vec![0, 0, 1]]);
        assert_eq!(m.total(), 4);
        assert_eq!(confusion(&[], &[], names(2)).unwrap(), ConfusionMatrix::zeros(names(2)));
    }

    #[test]
    fn confusion_rejects_bad_input() {
        assert!(matches!(confusion(&[0], &[], names(2)), Err(Error::Input(_))));
        assert!(matches!(confusion(&[2], &[0], names(2)), Err(Error::Input(_))));
        assert!(matches!(confusion(&[0], &[5], names(2)), Err(Error::Input(_))));
    }

    #[test]
    fn kaggle_table() {
        let r = report(&kaggle());
        assert!((r.accuracy - 989.0 / 992.0).abs() < 1e-12);
        assert_eq!(r.classes[1].recall, 1.0);
        assert_eq!(r.classes[2].recall, 1.0);
        assert!((r.classes[0].precision - 246.0 / 247.0).abs() < 1e-12);
        assert!((r.classes[0].recall - 246.0 / 248.0).abs() < 1e-12);
        assert!(render_csv(&r).contains("overall_accuracy,0.9970"));
        assert!(r.flags.is_empty());
    }

    #[test]
    fn hand_two_class() {
        // TP=3 FN=1 FP=2 TN=4 for class 0.
        let m = ConfusionMatrix::from_counts(names(2), vec![vec![3, 1], vec![2, 4]]).unwrap();
        let r = report(&m);
        let c = &r.classes[0];
        assert!((c.precision - 0.6).abs() < 1e-12);
        assert!((c.recall - 0.75).abs() < 1e-12);
        assert!((c.f_measure - 2.0 * 0.6 * 0.75 / 1.35).abs() < 1e-12);
        assert!((c.ovr_accuracy - 0.7).abs() < 1e-12);
        assert!((r.accuracy - 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_renders() {
        let m = ConfusionMatrix::zeros(names(3));
        let r = report(&m);
        assert_eq!(r.accuracy, 0.0);
        assert!(r.classes.iter().all(|c| c.precision == 0.0 && c.f_measure == 0.0));
        assert!(!r.flags.is_empty());
        let text = render_text(&r, &m, &[]);
        assert!(text.contains("overall accuracy (trace/total): 0.0000"));
        assert_eq!(render_csv(&r), render_csv(&report(&m)));
    }

    #[test]
    fn empty_column_is_flagged() {
        let m = ConfusionMatrix::from_counts(names(2), vec![vec![2, 0], vec![3, 0]]).unwrap();
        let r = report(&m);
        assert_eq!(r.classes[1].precision, 0.0);
        assert_eq!(r.classes[1].f_measure, 0.0);
        assert_eq!(r.flags.len(), 1);
    }

    #[test]
    fn confusion_csv_layout() {
        let m = ConfusionMatrix::from_counts(names(2), vec![vec![2, 1], vec![0, 3]]).unwrap();
        assert_eq!(m.to_csv(), "truth,c0,c1\nc0,2,1\nc1,0,3\n");
    }

    #[test]
    fn references_are_rendered() {
        let m = kaggle();
        let text = render_text(
            &report(&m),
            &m,
            &[Reference {
                label: "kaggle".into(),
                accuracy: 0.9957,
            }],
        );
        assert!(text.contains("reference kaggle: 0.9957"));
        assert!(text.contains("overall accuracy (trace/total): 0.9970"));
    }

    fn matrix_strategy() -> impl Strategy<Value = ConfusionMatrix> {
        (1usize..=6).prop_flat_map(|n| {
            prop::collection::vec(prop::collection::vec(0u64..50, n), n)
                .prop_map(move |counts| ConfusionMatrix::from_counts(names(n), counts).unwrap())
        })
    }

    proptest! {
        #[test]
        fn micro_equals_accuracy(m in matrix_strategy()) {
            let r = report(&m);
            prop_assert!((r.micro_precision - r.accuracy).abs() < 1e-12);
            prop_assert!((r.micro_recall - r.accuracy).abs() < 1e-12);
        }

        #[test]
        fn values_in_unit_interval(m in matrix_strategy()) {
            let r = report(&m);
            for c in &r.classes {
                for v in [c.precision, c.recall, c.f_measure, c.ovr_accuracy] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn macro_f_brute_force(m in matrix_strategy()) {
            let n = m.n_classes();
            let c = m.counts();
            let mut sum = 0.0;
            for (k, row_k) in c.iter().enumerate() {
                let tp = row_k[k] as f64;
                let col: f64 = c.iter().map(|r| r[k] as f64).sum();
                let row: f64 = row_k.iter().map(|&v| v as f64).sum();
                let p = if col > 0.0 { tp / col } else { 0.0 };
                let r = if row > 0.0 { tp / row } else { 0.0 };
                sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            }
            prop_assert!((report(&m).macro_f_measure - sum / n as f64).abs() < 1e-12);
        }

        #[test]
        fn permutation_moves_rows(m in matrix_strategy(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut order: Vec<usize> = (0..m.n_classes()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = report(&m);
            let b = report(&m.permuted(&order).unwrap());
            for (i, &o) in order.iter().enumerate() {
                prop_assert_eq!(&b.classes[i], &a.classes[o]);
            }
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            prop_assert!((a.macro_f_measure - b.macro_f_measure).abs() < 1e-12);
        }
    }
}
