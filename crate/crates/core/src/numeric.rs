//! Small numeric helpers.

/// Neumaier's compensated summation.
///
/// Plain left-to-right summation of a 16384-entry level already loses
/// ~1e-12 absolute accuracy; level means and grand means are compared
/// against bounds at that same magnitude, so they are summed compensated.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: CompensatedSum) {
        self.add(other.sum);
        self.carry += other.carry;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub(crate) fn compensated_sum(values: &[f64]) -> f64 {
    let mut acc = CompensatedSum::default();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_beats_naive() {
        // 1 followed by many tiny values that a naive sum swallows entirely.
        let mut values = vec![1.0];
        values.extend(std::iter::repeat_n(1e-17, 1000));
        let naive: f64 = values.iter().sum();
        assert_eq!(naive, 1.0);
        let exact = 1.0 + 1e-14;
        assert!((compensated_sum(&values) - exact).abs() < 1e-18);
    }

    #[test]
    fn merge_matches_single_pass() {
        let values: Vec<f64> = (0..1000).map(|i| (i as f64).sin() * 1e-3).collect();
        let mut a = CompensatedSum::default();
        let mut b = CompensatedSum::default();
        for &v in &values[..500] {
            a.add(v);
        }
        for &v in &values[500..] {
            b.add(v);
        }
        a.merge(b);
        let single = compensated_sum(&values);
        assert!((a.value() - single).abs() < 1e-15);
    }
}
