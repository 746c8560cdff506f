//! Analytic gradients of the toy model against central finite differences
//! (step 1e-5) at three random parameter states.
//!
//! Coordinates are drawn from entries large enough for the difference
//! quotient to resolve (see `GradCheck::resolution`). The states use
//! embedding scale 0.5; at the default 0.02 some tensors have no entry
//! above that floor.

use posym::tasks::TaskKind;
use posym::trainer::{gradient_check, TrainConfig, TrainableModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> posym::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let states = [
        (TaskKind::Index, false, 1.0, None),
        (TaskKind::Retrieval, true, 1.0, None),
        (TaskKind::PartialInduction, false, 0.0, Some(0.5)),
    ];
    for (task, learned_value, base_angle, second_base_angle) in states {
        let cfg = TrainConfig {
            task,
            learned_value,
            base_angle,
            second_base_angle,
            embed_std: 0.5,
            ..TrainConfig::default()
        };
        let model = TrainableModel::init(cfg.vocab()?.size(), cfg.angles(), &cfg.init_config(), &mut rng)?;
        let data = cfg.val_data()?;
        for c in gradient_check(&model, &data[..32], 20, 1e-5, &mut rng)? {
            println!(
                "{:<18} {:<10} {} coords, max relative error {:.2e}, max absolute error {:.2e}",
                task.name(),
                c.tensor.name(),
                c.coords,
                c.max_rel_error,
                c.max_abs_error
            );
        }
    }
    Ok(())
}
