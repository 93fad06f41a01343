use serde::{Deserialize, Serialize};

/// A computed quantity with its Monte Carlo standard error (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, std_err: 0.0 }
    }

    pub fn is_exact(&self) -> bool {
        self.std_err == 0.0
    }
}

/// Running sums for mean and variance, mergeable across chunks.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    pub count: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(mut self, other: Moments) -> Moments {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            value: self.mean(),
            std_err: (self.variance() / self.count as f64).sqrt(),
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Mean and batch-means standard error of an autocorrelated series.
pub fn batch_means(series: &[f64], n_batches: usize) -> Estimate {
    let n_batches = n_batches.max(2).min(series.len().max(2));
    let size = series.len() / n_batches;
    if size == 0 {
        return series.iter().copied().collect::<Moments>().estimate();
    }
    let batch: Moments = series
        .chunks_exact(size)
        .take(n_batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    Estimate {
        value: series.iter().sum::<f64>() / series.len() as f64,
        std_err: (batch.variance() / n_batches as f64).sqrt(),
    }
}
