//! Rough train-step and inference throughput of the desk CNN.

use gradcore::{Architecture, Graph, Mode, Model, Tensor, Weights};
use std::time::Instant;

fn main() {
    for side in [8usize, 12, 16, 32] {
        let mut model = Model::<f32>::new(Architecture::desk_cnn([3, side, side], 10), 0);
        let n = 64;
        let x = Tensor::<f32>::full(&[n, 3, side, side], 0.5);
        let targets: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let reps = 20;
        let start = Instant::now();
        for _ in 0..reps {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let f = model.forward(&mut g, xv, Mode::Train, Weights::Live).unwrap();
            let l = g.cross_entropy(f.logits, &targets, None).unwrap();
            model.backward(&g, l).unwrap();
        }
        let train = start.elapsed().as_secs_f64() / (reps * n) as f64;
        let start = Instant::now();
        for _ in 0..reps {
            model.predict(&x, Weights::Live).unwrap();
        }
        let infer = start.elapsed().as_secs_f64() / (reps * n) as f64;
        println!("{side}x{side}: train {:.1} us/sample, infer {:.1} us/sample", train * 1e6, infer * 1e6);
    }
}
