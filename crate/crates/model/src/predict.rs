use std::collections::HashSet;

use mutraj_core::eval::Predictor;
use mutraj_core::genome::NtMutation;
use mutraj_core::tokenizer::TokenizerLayout;

use crate::transformer::{Model, ModelError};

#[derive(Debug, Clone, PartialEq)]
pub struct RankedPrediction {
    pub token: u32,
    pub mutation: NtMutation,
    /// Probability renormalised over the admissible mutation tokens.
    pub prob: f64,
}

/// Candidate mutations after `context`, best first. The softmax is taken
/// over mutation tokens not already in the context.
pub fn rank_next_mutations(
    model: &Model,
    layout: &TokenizerLayout,
    context: &[u32],
    k: usize,
) -> Result<Vec<RankedPrediction>, ModelError> {
    if k == 0 {
        return Err(ModelError::BadK);
    }
    let scored = admissible_scores(model, layout, context)?;
    let max = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scored.iter().map(|s| (s.1 - max).exp()).sum();
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(token, logit)| RankedPrediction {
            token,
            mutation: layout.mutation_of_token(token).expect("mutation block"),
            prob: (logit - max).exp() / z,
        })
        .collect())
}

/// Same as [`rank_next_mutations`] with both location tokens masked.
pub fn rank_without_location(
    model: &Model,
    layout: &TokenizerLayout,
    context: &[u32],
    k: usize,
) -> Result<Vec<RankedPrediction>, ModelError> {
    let mut ctx = context.to_vec();
    for t in ctx.iter_mut().take(2) {
        *t = layout.unknown_token();
    }
    rank_next_mutations(model, layout, &ctx, k)
}

/// `(token, logit)` sorted by descending logit, ties by token id.
fn admissible_scores(model: &Model, layout: &TokenizerLayout, context: &[u32]) -> Result<Vec<(u32, f64)>, ModelError> {
    let logits = model.next_logits(context)?;
    let seen: HashSet<u32> = context.iter().copied().collect();
    let mut scored: Vec<(u32, f64)> =
        layout.mutation_block().filter(|t| !seen.contains(t)).map(|t| (t, logits[t as usize])).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}

pub struct ModelPredictor<'a> {
    pub model: &'a Model,
    pub layout: &'a TokenizerLayout,
}

impl Predictor for ModelPredictor<'_> {
    fn rank(&self, context: &[u32], k: usize, keep: &mut dyn FnMut(u32) -> bool) -> Vec<u32> {
        let Ok(scored) = admissible_scores(self.model, self.layout, context) else {
            return Vec::new();
        };
        scored.into_iter().map(|s| s.0).filter(|&t| keep(t)).take(k).collect()
    }

    fn max_context(&self) -> Option<usize> {
        Some(self.model.config().max_seq)
    }
}
