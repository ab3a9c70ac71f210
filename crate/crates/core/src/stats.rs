//! Order-stable accumulation.
//!
//! Every reduction in the crate goes through fixed-size chunks whose summaries
//! are merged in index order, so results do not depend on how work was spread
//! over threads. Within a chunk sums are compensated.

/// Neumaier compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl Extend<f64> for NeumaierSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut acc = NeumaierSum::new();
    acc.extend(values.iter().copied());
    acc.value()
}

/// Count, mean and centred sum of squares of a sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Summary {
    /// Two-pass summary of a slice.
    pub fn from_slice(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = compensated_sum(values) / n;
        let mut m2 = NeumaierSum::new();
        m2.extend(values.iter().map(|v| (v - mean) * (v - mean)));
        Self {
            count: values.len() as u64,
            mean,
            m2: m2.value(),
        }
    }

    /// Chan et al. pairwise update.
    pub fn merge(self, other: Self) -> Self {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta = other.mean - self.mean;
        Self {
            count: self.count + other.count,
            mean: self.mean + delta * nb / n,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n,
        }
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count as f64 - 1.0)).max(0.0)
        }
    }

    pub fn std_err(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Composite trapezoid rule on a possibly non-uniform grid.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    let mut acc = NeumaierSum::new();
    for (t, v) in times.windows(2).zip(values.windows(2)) {
        acc.add(0.5 * (t[1] - t[0]) * (v[0] + v[1]));
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let values = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(&values), 2.0);
        assert_eq!(values.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn summary_of_constant_sample_has_zero_variance() {
        let s = Summary::from_slice(&[0.7; 1000]);
        assert_eq!(s.mean, 0.7);
        assert_eq!(s.variance(), 0.0);
        assert_eq!(s.std_err(), 0.0);
    }

    #[test]
    fn empty_and_singleton() {
        assert_eq!(Summary::from_slice(&[]).count, 0);
        let one = Summary::from_slice(&[3.0]);
        assert_eq!(one.variance(), 0.0);
        assert_eq!(Summary::default().merge(one), one);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let t: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|t| 2.0 * t + 1.0).collect();
        assert!((trapezoid(&t, &v) - 2.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn chunked_merge_matches_single_pass(
            values in prop::collection::vec(-1e3f64..1e3, 2..400),
            chunk in 1usize..64,
        ) {
            let whole = Summary::from_slice(&values);
            let merged = values
                .chunks(chunk)
                .map(Summary::from_slice)
                .fold(Summary::default(), Summary::merge);
            prop_assert_eq!(merged.count, whole.count);
            prop_assert!((merged.mean - whole.mean).abs() <= 1e-12 * (1.0 + whole.mean.abs()));
            prop_assert!((merged.m2 - whole.m2).abs() <= 1e-9 * (1.0 + whole.m2));
        }

        #[test]
        fn compensated_sum_is_order_robust(mut values in prop::collection::vec(-1e6f64..1e6, 1..300)) {
            let forward = compensated_sum(&values);
            values.reverse();
            let backward = compensated_sum(&values);
            prop_assert!((forward - backward).abs() <= 1e-12 * (1.0 + forward.abs()));
        }
    }
}
