//! Train a shared linear projection with the contrastive loss on pairs whose
//! label depends on four coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semshift::encoder::{train_projection, LabeledPair, ProjectionHead, TrainConfig};
use semshift::Label;

fn main() -> semshift::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<LabeledPair> = (0..400)
        .map(|i| {
            let w1: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut w2: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let label = if i % 2 == 0 { Label::Same } else { Label::Different };
            for c in 0..4 {
                w2[c] = if label.is_same() { w1[c] } else { -w1[c] };
            }
            LabeledPair { w1, w2, label }
        })
        .collect();

    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 30,
        ..TrainConfig::default()
    };
    let out = train_projection(ProjectionHead::random(16, 16, 3)?, &pairs, &cfg)?;
    for (epoch, loss) in out.loss_trace.iter().enumerate().step_by(5) {
        println!("epoch {epoch:>2}: mean loss {loss:.4}");
    }
    println!("final: {:.4}", out.loss_trace.last().copied().unwrap_or(f64::NAN));

    let w = out.head.weights();
    let col_norm = |j: usize| (0..16).map(|r| w[r * 16 + j].powi(2)).sum::<f64>().sqrt();
    println!("input column norms, signal dims: {:.3?}", (0..4).map(col_norm).collect::<Vec<_>>());
    println!("input column norms, other dims:  {:.3?}", (4..8).map(col_norm).collect::<Vec<_>>());
    Ok(())
}
