use crate::error::{Error, Result};

/// Cross-tabulation of adjudicated cause (rows) against ICD cause (columns).
///
/// `n11`: adjudicated CVD & ICD CVD, `n10`: adjudicated CVD & ICD not CVD,
/// `n01`: adjudicated not CVD & ICD CVD, `n00`: neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionTable {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
}

impl ConfusionTable {
    pub fn new(n11: u64, n10: u64, n01: u64, n00: u64) -> Self {
        ConfusionTable { n11, n10, n01, n00 }
    }

    /// Tabulates `(c, delta)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        let mut t = ConfusionTable::default();
        for (c, d) in pairs {
            match (c, d) {
                (1, 1) => t.n11 += 1,
                (1, _) => t.n10 += 1,
                (_, 1) => t.n01 += 1,
                _ => t.n00 += 1,
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub misclassification_rate: f64,
}

/// Rates conditioned on the ICD classification (column-wise): "sensitivity" is the share
/// of ICD-coded CVD deaths that are adjudicated CVD, "specificity" the share
/// of ICD non-CVD deaths that are adjudicated non-CVD.
pub fn confusion_metrics(t: &ConfusionTable) -> Result<ConfusionMetrics> {
    let col1 = t.n11 + t.n01;
    let col0 = t.n10 + t.n00;
    if col1 == 0 || col0 == 0 {
        return Err(Error::invalid("confusion table has an empty ICD column"));
    }
    Ok(ConfusionMetrics {
        sensitivity: t.n11 as f64 / col1 as f64,
        specificity: t.n00 as f64 / col0 as f64,
        misclassification_rate: t.n01 as f64 / col1 as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_rates_of_a_cohort_table() {
        let m = confusion_metrics(&ConfusionTable::new(1597, 841, 1151, 4852)).unwrap();
        assert!((m.sensitivity - 0.581).abs() < 0.0005);
        assert!((m.specificity - 0.852).abs() < 0.0005);
        assert!((m.misclassification_rate - 0.419).abs() < 0.0005);
    }

    #[test]
    fn perfect_agreement_and_disagreement() {
        let m = confusion_metrics(&ConfusionTable::new(7, 0, 0, 7)).unwrap();
        assert_eq!((m.sensitivity, m.specificity), (1.0, 1.0));
        let m = confusion_metrics(&ConfusionTable::new(0, 7, 7, 0)).unwrap();
        assert_eq!((m.sensitivity, m.specificity), (0.0, 0.0));
    }

    #[test]
    fn empty_column_is_an_error() {
        assert!(confusion_metrics(&ConfusionTable::new(0, 3, 0, 4)).is_err());
    }
}
