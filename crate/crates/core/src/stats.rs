//! Time integrals split into equal-length batches, for batch-means errors.

/// Minimum number of batches for a standard error.
pub const MIN_BATCHES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchIntegrals {
    start: f64,
    end: f64,
    batch_len: f64,
    channels: usize,
    /// Row-major `batches × channels`.
    data: Vec<f64>,
}

impl BatchIntegrals {
    pub fn new(start: f64, end: f64, batches: usize, channels: usize) -> Self {
        let batches = batches.max(1);
        BatchIntegrals {
            start,
            end,
            batch_len: (end - start) / batches as f64,
            channels,
            data: vec![0.0; batches * channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn batches(&self) -> usize {
        self.data.len() / self.channels.max(1)
    }

    /// Observed time per batch; all batches have the same length.
    pub fn batch_len(&self) -> f64 {
        self.batch_len
    }

    pub fn span(&self) -> f64 {
        self.batch_len * self.batches() as f64
    }

    /// Integrate piecewise-constant `values` over `[a, b]`, clipped to the window.
    pub fn add(&mut self, a: f64, b: f64, values: &[f64]) {
        let a = a.max(self.start);
        let b = b.min(self.end);
        if b <= a {
            return;
        }
        let nb = self.batches();
        let mut k = (((a - self.start) / self.batch_len) as usize).min(nb - 1);
        let mut lo = a;
        while lo < b {
            let edge = if k + 1 == nb { self.end } else { self.start + (k + 1) as f64 * self.batch_len };
            let hi = b.min(edge);
            let w = hi - lo;
            if w > 0.0 {
                let row = &mut self.data[k * self.channels..(k + 1) * self.channels];
                for (r, v) in row.iter_mut().zip(values) {
                    *r += w * v;
                }
            }
            lo = hi;
            if k + 1 == nb {
                break;
            }
            k += 1;
        }
    }

    pub fn total(&self, c: usize) -> f64 {
        (0..self.batches()).map(|k| self.data[k * self.channels + c]).sum()
    }

    pub fn mean(&self, c: usize) -> f64 {
        self.total(c) / self.span()
    }

    pub fn batch_means(&self, c: usize) -> Vec<f64> {
        (0..self.batches())
            .map(|k| self.data[k * self.channels + c] / self.batch_len)
            .collect()
    }

    /// Batch-means standard error of [`mean`](Self::mean).
    pub fn std_error(&self, c: usize) -> f64 {
        let b = self.batch_means(c);
        let nb = b.len() as f64;
        if b.len() < 2 {
            return f64::NAN;
        }
        let m = b.iter().sum::<f64>() / nb;
        let var = b.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (nb - 1.0);
        (var / nb).sqrt()
    }

    /// Append another run's batches. Batch lengths must match for the
    /// pooled mean to stay time-weighted.
    pub fn merge(&mut self, other: &BatchIntegrals) {
        assert_eq!(self.channels, other.channels, "channel count mismatch");
        assert!(
            (self.batch_len - other.batch_len).abs() <= 1e-9 * self.batch_len.abs().max(1.0),
            "batch length mismatch"
        );
        self.data.extend_from_slice(&other.data);
        self.end = self.start + self.span();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_across_batches() {
        let mut b = BatchIntegrals::new(10.0, 30.0, 20, 2);
        b.add(0.0, 40.0, &[1.0, 2.0]);
        assert!((b.total(0) - 20.0).abs() < 1e-12);
        assert!((b.mean(1) - 2.0).abs() < 1e-12);
        assert_eq!(b.std_error(0), 0.0);
        let mut c = BatchIntegrals::new(0.0, 20.0, 20, 1);
        c.add(0.5, 2.5, &[1.0]);
        assert_eq!(c.batch_means(0)[..4], [0.5, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn merge_pools_batches() {
        let mut a = BatchIntegrals::new(0.0, 20.0, 20, 1);
        a.add(0.0, 20.0, &[1.0]);
        let mut b = BatchIntegrals::new(5.0, 25.0, 20, 1);
        b.add(5.0, 25.0, &[3.0]);
        a.merge(&b);
        assert_eq!(a.batches(), 40);
        assert!((a.mean(0) - 2.0).abs() < 1e-12);
    }
}
