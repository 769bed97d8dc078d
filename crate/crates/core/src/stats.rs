//! Compensated accumulation and per-run random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut s = NeumaierSum::default();
    xs.iter().for_each(|&x| s.add(x));
    s.total()
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let mut ss = NeumaierSum::default();
    xs.iter().for_each(|&x| ss.add((x - mean) * (x - mean)));
    let var = ss.total() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Independent stream `run` of the generator keyed by `seed`.
///
/// Streams with distinct `(stream, run)` pairs never overlap, so runs can be
/// evaluated in any order and still reproduce bit for bit.
pub fn run_rng(seed: u64, stream: u32, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 40) ^ run);
    rng
}
