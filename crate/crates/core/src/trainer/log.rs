use std::fmt::Write;

/// Header of the training log CSV.
pub const LOG_HEADER: &str = "step,lr_g,lr_d,seg1,seg2,adv1,adv2,d1,d2,ms";

/// Losses and learning rates of one training step. Absent terms are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub lr_g: f64,
    pub lr_d: Option<f64>,
    pub seg: [Option<f32>; 2],
    pub adv: [Option<f32>; 2],
    pub d: [Option<f32>; 2],
    /// Wall time of the step in milliseconds.
    pub ms: Option<f64>,
}

impl StepLog {
    pub fn is_finite(&self) -> bool {
        let losses = self.seg.iter().chain(&self.adv).chain(&self.d).flatten();
        self.lr_g.is_finite()
            && self.lr_d.is_none_or(f64::is_finite)
            && losses.into_iter().all(|v| v.is_finite())
    }

    pub fn csv_row(&self) -> String {
        fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
            v.map(|v| v.to_string()).unwrap_or_default()
        }
        let mut row = format!("{},{},{}", self.step, self.lr_g, opt(self.lr_d));
        for v in self.seg.iter().chain(&self.adv).chain(&self.d) {
            write!(row, ",{}", opt(*v)).expect("write to string");
        }
        write!(row, ",{}", opt(self.ms.map(|m| format!("{m:.3}")))).expect("write to string");
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_fields_are_empty() {
        let log = StepLog {
            step: 3,
            lr_g: 2.5e-4,
            lr_d: None,
            seg: [Some(1.5), None],
            adv: [None, None],
            d: [None, None],
            ms: None,
        };
        assert_eq!(log.csv_row(), "3,0.00025,,1.5,,,,,,");
        assert_eq!(log.csv_row().split(',').count(), LOG_HEADER.split(',').count());
        assert!(log.is_finite());
        let bad = StepLog {
            adv: [Some(f32::NAN), None],
            ..log
        };
        assert!(!bad.is_finite());
    }
}
