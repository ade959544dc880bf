//! Inference latency of a single model against K-member ensembles.
//!
//! One timed frame covers u8 to f32 conversion, every forward pass, the
//! sigmoid and decode, and copying the class map out as bytes. Input
//! generation and model loading are outside the timer.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{EnsembleBundle, Tensor, TinyEncoderDecoder};
use crate::evaluation::Predictor;

pub const MIN_WARMUP: usize = 10;
pub const MIN_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub height: usize,
    pub width: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub seed: u64,
    pub ensemble_sizes: Vec<usize>,
    pub tau: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            height: 64,
            width: 64,
            warmup: MIN_WARMUP,
            iterations: MIN_ITERATIONS,
            seed: 0,
            ensemble_sizes: vec![1, 2, 4, 6],
            tau: 0.5,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < MIN_ITERATIONS {
            return Err(Error::ConfigError(format!(
                "at least {MIN_ITERATIONS} iterations are required, got {}",
                self.iterations
            )));
        }
        if self.warmup < MIN_WARMUP {
            return Err(Error::ConfigError(format!(
                "at least {MIN_WARMUP} warmup iterations are required, got {}",
                self.warmup
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::ConfigError("input size must be positive".into()));
        }
        if self.ensemble_sizes.contains(&0) {
            return Err(Error::ConfigError("ensemble sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub label: String,
    /// Forward passes per frame.
    pub models: usize,
    pub mean_ms: f64,
    /// Standard deviation over per-frame timings.
    pub std_ms: f64,
    pub fps: f64,
    pub warmup: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSuite {
    pub height: usize,
    pub width: usize,
    pub single: BenchResult,
    pub ensembles: Vec<BenchResult>,
    /// Mean latency against ensemble size.
    pub fit: LinearFit,
}

impl BenchSuite {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Least-squares line through `(x, y)`. R² is 1 for a perfect fit and for
/// constant `y`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "linear fit needs at least two paired points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::ShapeMismatch("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid<[u8; 3]> {
    Grid::from_fn(h, w, |_, _| rng.gen())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Times `predictor` on freshly drawn random frames. Every configuration
/// with the same seed sees the same inputs.
pub fn bench_predictor(predictor: &Predictor, label: &str, config: &BenchConfig) -> Result<BenchResult> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::ConfigError(format!("bench thread pool: {e}")))?;
    pool.install(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut timings = Vec::with_capacity(config.iterations);
        let mut sink = 0usize;
        for i in 0..config.warmup + config.iterations {
            let frame = random_frame(&mut rng, config.height, config.width);
            let start = Instant::now();
            let input = Tensor::from_image(&frame);
            let map = predictor.predict(&input, config.tau)?;
            let bytes: Vec<u8> = map.as_slice().iter().map(|&c| c as u8).collect();
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            sink = sink.wrapping_add(bytes[bytes.len() / 2] as usize);
            if i >= config.warmup {
                timings.push(elapsed);
            }
        }
        std::hint::black_box(sink);
        let (mean_ms, std_ms) = mean_std(&timings);
        Ok(BenchResult {
            label: label.to_string(),
            models: predictor.model_count(),
            mean_ms,
            std_ms,
            fps: 1e3 / mean_ms,
            warmup: config.warmup,
            iterations: config.iterations,
        })
    })
}

/// Single multi-class model against ensembles of `member` copies of every
/// configured size.
pub fn bench_scaling(
    single: &Predictor,
    member: &TinyEncoderDecoder,
    config: &BenchConfig,
) -> Result<BenchSuite> {
    config.validate()?;
    if config.ensemble_sizes.len() < 2 {
        return Err(Error::ConfigError("at least two ensemble sizes are needed for a fit".into()));
    }
    let single_result = bench_predictor(single, "single", config)?;
    let ensembles = config
        .ensemble_sizes
        .iter()
        .map(|&k| {
            let bundle = EnsembleBundle::unchecked(vec![member.clone(); k]);
            bench_predictor(&Predictor::Ensemble(bundle), &format!("ensemble-{k}"), config)
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = ensembles.iter().map(|r| r.models as f64).collect();
    let ys: Vec<f64> = ensembles.iter().map(|r| r.mean_ms).collect();
    Ok(BenchSuite {
        height: config.height,
        width: config.width,
        single: single_result,
        fit: linear_fit(&xs, &ys)?,
        ensembles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TinyConfig;

    #[test]
    fn fit_recovers_a_line() {
        let f = linear_fit(&[1.0, 2.0, 4.0, 6.0], &[3.0, 5.0, 9.0, 13.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_err());
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rejects_short_runs() {
        let cfg = BenchConfig { iterations: 99, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::ConfigError(_))));
        let cfg = BenchConfig { warmup: 3, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn suite_shapes() {
        let tiny = TinyConfig { depth: 2, base_width: 4 };
        let single = Predictor::Single {
            model: TinyEncoderDecoder::new(tiny, 3, 0).unwrap(),
            background_channel: false,
        };
        let member = TinyEncoderDecoder::new(tiny, 1, 1).unwrap();
        let cfg = BenchConfig { height: 16, width: 16, ensemble_sizes: vec![1, 3], ..Default::default() };
        let suite = bench_scaling(&single, &member, &cfg).unwrap();
        assert_eq!(suite.single.models, 1);
        assert_eq!(suite.ensembles.iter().map(|r| r.models).collect::<Vec<_>>(), vec![1, 3]);
        assert!(suite.ensembles.iter().all(|r| r.iterations == 100 && r.mean_ms > 0.0));
    }
}
