//! Latency of one multi-class model against ensembles of 1, 2, 4 and 6
//! single-class models, with a linear fit over ensemble size.

use complseg::bench::{bench_scaling, BenchConfig};
use complseg::evaluation::Predictor;
use complseg::model::{TinyConfig, TinyEncoderDecoder};

fn main() -> complseg::Result<()> {
    let model = TinyConfig::default();
    let config = BenchConfig {
        height: 32,
        width: 32,
        ..BenchConfig::default()
    };
    let single = Predictor::Single {
        model: TinyEncoderDecoder::new(model, 4, 0)?,
        background_channel: false,
    };
    let member = TinyEncoderDecoder::new(model, 1, 1)?;
    let suite = bench_scaling(&single, &member, &config)?;

    println!("{}x{} input, {} timed runs each", suite.height, suite.width, config.iterations);
    for r in std::iter::once(&suite.single).chain(&suite.ensembles) {
        println!("{:<11} {:>7.3} ms  (sd {:.3})  {:>7.1} fps", r.label, r.mean_ms, r.std_ms, r.fps);
    }
    println!(
        "fit: {:.3} ms per model + {:.3} ms, R2 {:.4}",
        suite.fit.slope, suite.fit.intercept, suite.fit.r_squared
    );
    Ok(())
}
