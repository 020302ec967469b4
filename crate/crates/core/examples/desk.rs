//! Desk-scale run: `cargo run --release --example desk -- <flags> <seed> <T> [labels] [noise] [widths] [base_lambda]`
//! with flags `fast`, `supervised`, or any `+`-join of cbs, lsa, cpl (`vanilla` for none).

use fastmatch::dataio::{make_ssl_split, SynthSpec};
use fastmatch::engine::{train, ModelConfig, TrainConfig, TrainData};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let flags = args.get(1).map(String::as_str).unwrap_or("vanilla");
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let total: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let labels: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(40);
    let noise: f32 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(SynthSpec::default().noise);
    let widths: Vec<usize> = args
        .get(6)
        .map(|s| s.split(',').map(|w| w.parse().unwrap()).collect())
        .unwrap_or_else(|| ModelConfig::default().widths);
    let base_lambda: Option<f64> = args.get(7).and_then(|s| s.parse().ok());
    let spec = SynthSpec { seed: 1000 + seed, noise, ..SynthSpec::default() };
    let (train_ds, test) = spec.train_test(4000, 2000).unwrap();
    let split = make_ssl_split(&train_ds, labels, seed, true).unwrap();
    let data = TrainData::new(&train_ds, &test, &split);
    let mut cfg = TrainConfig { seed, eval_every: 1000, ..TrainConfig::default() };
    cfg.schedule.l = 8;
    cfg.schedule.total_iterations = total;
    cfg.model.widths = widths;
    if let Some(b) = base_lambda {
        cfg.schedule.base_lambda = b;
    }
    cfg = match flags {
        "fast" => cfg.with_flags(true, true, true),
        "supervised" => {
            cfg.schedule.mu = 0;
            cfg
        }
        other => cfg.with_flags(other.contains("cbs"), other.contains("lsa"), other.contains("cpl")),
    };
    let start = Instant::now();
    let log = train::<Vec<u8>>(&cfg, &data, None).unwrap();
    let util = log.utilization().unwrap().total;
    for e in &log.evals {
        println!("t={} passes={} acc={:.4}", e.t, e.passes, e.accuracy);
    }
    println!(
        "{flags} seed={seed} final={:.4} passes={} util={:?} secs={:.1}",
        log.final_accuracy().unwrap(),
        log.ledger.total_passes(),
        util,
        start.elapsed().as_secs_f64()
    );
}
