//! Query and key images of every token while training Index: keys gather in
//! one direction, query angles spread with the queried position.

use posym::metric::cos_sim;
use posym::tasks::{TaskKind, TaskVocabulary, Token};
use posym::trainer::{train, TrainConfig};

fn main() -> posym::Result<()> {
    let cfg = TrainConfig {
        task: TaskKind::Index,
        base_angle: 1.0,
        epochs: 30,
        log_qk: true,
        ..TrainConfig::default()
    };
    let run = train(&cfg)?;
    let vocab: TaskVocabulary = cfg.vocab()?;
    let symbols: Vec<usize> = (0..vocab.m_sym).collect();
    for snap in run.trajectory.iter().step_by(5) {
        let mut min_cos: f64 = 1.0;
        for &a in &symbols {
            for &b in &symbols {
                min_cos = min_cos.min(cos_sim(snap.keys[a], snap.keys[b]));
            }
        }
        let angles: Vec<f64> = (0..cfg.n - 1)
            .map(|j| {
                let q = snap.queries[vocab.encode(Token::Position(j)).unwrap()];
                q[1].atan2(q[0])
            })
            .collect();
        println!(
            "epoch {:>3}: min pairwise key cosine {:+.3}; query angles of positions 1, 16, 32: {:+.2} {:+.2} {:+.2}",
            snap.epoch, min_cos, angles[0], angles[15], angles[31]
        );
    }
    Ok(())
}
