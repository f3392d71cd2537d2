//! Central-difference gradient verification against the analytic backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::transformer::{Example, Model, ModelError};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|fd - analytic| / max(|fd|, |analytic|, 1e-6)`.
    pub worst_relative: f64,
    pub worst_tensor: String,
    pub coords: usize,
}

/// Compares `per_block` random coordinates of every tensor. Embedding
/// coordinates are drawn from rows of tokens present in the batch.
pub fn gradient_check(
    model: &mut Model,
    batch: &[Example],
    per_block: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheck, ModelError> {
    let (_, grad) = model.loss_and_grad(batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = model.config().hidden;
    let mut coords = Vec::new();
    for (name, off, len) in model.layout().blocks().to_vec() {
        for _ in 0..per_block.min(len) {
            coords.push(if name == "tok_emb" {
                let ids = batch[rng.random_range(0..batch.len())].0;
                off + ids[rng.random_range(0..ids.len())] as usize * hidden + rng.random_range(0..hidden)
            } else {
                off + rng.random_range(0..len)
            });
        }
    }
    let mut out = GradCheck { worst_relative: 0.0, worst_tensor: String::new(), coords: coords.len() };
    for &i in &coords {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + h;
        let up = model.loss(batch)?;
        model.params_mut()[i] = orig - h;
        let down = model.loss(batch)?;
        model.params_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        if !(rel <= out.worst_relative) {
            out.worst_relative = rel;
            out.worst_tensor = model.layout().name_of(i).to_string();
        }
    }
    Ok(out)
}
