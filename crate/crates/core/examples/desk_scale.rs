//! Desk-scale comparison of training with and without the ambiguity loss.
//!
//! Usage: desk_scale [CONFIG]   (defaults to configs/desk.toml)

use std::time::Instant;

use ambigzsl::data::{generate_synthetic_bundle, SyntheticSpec};
use ambigzsl::eval::median;
use ambigzsl::trainer::{evaluate, train, Mode, TrainConfig};

fn main() -> ambigzsl::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml").to_string());
    let base = TrainConfig::from_path(path.as_ref())?;
    for mode in [Mode::Inductive, Mode::Transductive] {
        for weight in [0.0, 1.0] {
            let t = Instant::now();
            let (mut t1, mut u, mut s) = (vec![], vec![], vec![]);
            for seed in 0..5u64 {
                let bundle = generate_synthetic_bundle(&SyntheticSpec {
                    n_seen: 5,
                    n_unseen: 3,
                    d: 16,
                    a: 8,
                    samples_per_class: 40,
                    noise_scale: 0.05,
                    seed,
                })?;
                let cfg = TrainConfig { mode, ambiguity_weight: weight, seed, ..base.clone() };
                let model = train(&bundle, &cfg)?;
                let recs = evaluate(&model, &bundle, "desk")?;
                t1.push(recs[0].t1.unwrap());
                u.push(recs[1].u.unwrap());
                s.push(recs[1].s.unwrap());
            }
            println!(
                "{mode:<12} w={weight}: T1 {:6.2} u {:6.2} s {:6.2}  [{:.1}s]  T1s {:?} us {:?}",
                median(&t1).unwrap(),
                median(&u).unwrap(),
                median(&s).unwrap(),
                t.elapsed().as_secs_f64(),
                t1.iter().map(|v| v.round()).collect::<Vec<_>>(),
                u.iter().map(|v| v.round()).collect::<Vec<_>>(),
            );
        }
    }
    Ok(())
}
