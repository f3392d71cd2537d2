use mutraj_core::genome::NtMutation;
use mutraj_core::synth::{generate, RegionSpec, SynthConfig};
use mutraj_core::tokenizer::{TokenizedSample, TokenizerLayout};
use mutraj_core::tree::extract_all;
use mutraj_core::variants::VariantDefinitions;
use mutraj_model::{
    rank_next_mutations, rank_without_location, train, Example, Model, ModelConfig, TrainConfig, TrainState,
};

fn small(vocab: usize) -> ModelConfig {
    ModelConfig { hidden: 32, heads: 2, max_seq: 64, ..ModelConfig::desk(vocab) }
}

#[test]
fn zero_head_gives_uniform_loss() {
    let vocab = 77;
    let mut model = Model::new(small(vocab), 2).unwrap();
    let (off, len) = model.layout().block("w_out").unwrap();
    model.params_mut()[off..off + len].fill(0.0);
    let ids = [1, 5, 9, 2, 70];
    let mask = [false, true, true, true, true];
    let loss = model.loss(&[(&ids, &mask)]).unwrap();
    assert!((loss - (vocab as f64).ln()).abs() < 1e-12);
}

#[test]
fn certain_target_gives_zero_loss() {
    let mut model = Model::new(small(30), 2).unwrap();
    let (w, wl) = model.layout().block("w_out").unwrap();
    let (b, _) = model.layout().block("b_out").unwrap();
    model.params_mut()[w..w + wl].fill(0.0);
    model.params_mut()[b + 7] = 1e3;
    let loss = model.loss(&[(&[3, 7], &[false, true])]).unwrap();
    assert!(loss.abs() < 1e-12);
}

#[test]
fn logits_are_bitwise_reproducible() {
    let ids = [4, 8, 15, 16, 23, 42];
    let a = Model::new(small(50), 9).unwrap().forward(&ids).unwrap();
    let b = Model::new(small(50), 9).unwrap().forward(&ids).unwrap();
    assert_eq!(a, b);
    let c = Model::new(small(50), 10).unwrap().forward(&ids).unwrap();
    assert_ne!(a, c);
}

struct Fixture {
    layout: TokenizerLayout,
    train: Vec<TokenizedSample>,
    held_out: Vec<TokenizedSample>,
    held_out_paths: Vec<Vec<NtMutation>>,
    spectrum: mutraj_core::synth::Spectrum,
}

fn fixture() -> Fixture {
    let cfg = SynthConfig {
        genome_length: 200,
        orf_start: 51,
        orf_end: 110,
        months: 6,
        buckets: 5,
        variants: 4,
        regions: vec![
            RegionSpec { country: "USA".into(), region: Some("East".into()), population: 10e6, density: 10.0 },
            RegionSpec { country: "Kenya".into(), region: None, population: 20e6, density: 2.5 },
        ],
        ..SynthConfig::default()
    };
    let out = generate(&cfg).unwrap();
    let trajs = extract_all(&out.tree(), &VariantDefinitions::default());
    let mut layout = TokenizerLayout::new(cfg.genome_length, 2019);
    for t in &trajs {
        layout.register_trajectory_locations(t).unwrap();
    }
    let samples: Vec<TokenizedSample> = trajs.iter().map(|t| layout.tokenize(t).unwrap()).collect();
    let cut = samples.len() * 4 / 5;
    Fixture {
        held_out_paths: trajs[cut..].iter().map(|t| t.all_mutations().copied().collect()).collect(),
        held_out: samples[cut..].to_vec(),
        train: samples[..cut].to_vec(),
        layout,
        spectrum: out.truth.base,
    }
}

fn pairs(samples: &[TokenizedSample]) -> Vec<(Vec<u32>, Vec<bool>)> {
    samples.iter().map(|s| (s.ids(), s.loss_mask())).collect()
}

fn examples(p: &[(Vec<u32>, Vec<bool>)]) -> Vec<Example<'_>> {
    p.iter().map(|(a, b)| (a.as_slice(), b.as_slice())).collect()
}

#[test]
fn synthetic_training_learns_the_planted_spectrum() {
    let fx = fixture();
    let vocab = fx.layout.vocab_size() as usize;
    let train_pairs = pairs(&fx.train);
    let held_pairs = pairs(&fx.held_out);
    let (tr, held) = (examples(&train_pairs), examples(&held_pairs));
    let cfg = TrainConfig { steps: 200, batch_size: 16, lr_start: 3e-3, lr_end: 3e-4, ..Default::default() };
    let mut state = TrainState::new(Model::new(small(vocab), 1).unwrap(), &cfg);
    let init_held = state.model.loss(&held).unwrap();
    let order: Vec<u32> = (0..tr.len() as u32).collect();
    let mut last = f64::NAN;
    train(&mut state, &cfg, &tr, &order, cfg.steps, |r| last = r.loss).unwrap();
    assert!(last < (vocab as f64).ln(), "final train loss {last}");
    let held_loss = state.model.loss(&held).unwrap();
    assert!(held_loss < init_held, "{held_loss} vs {init_held}");

    // the most likely planted successor of the last context mutation ranks in the top 10
    let (mut hits, mut total) = (0, 0);
    for (s, path) in fx.held_out.iter().zip(&fx.held_out_paths) {
        let split = s.split_index;
        let ctx: Vec<u32> = s.ids()[..5 + split].to_vec();
        let prev = split.checked_sub(1).map(|i| path[i]);
        let planted = fx.spectrum.rows[fx.spectrum.row_index(prev)].next[0];
        let token = fx.layout.token_of(planted).unwrap();
        if ctx.contains(&token) {
            continue;
        }
        total += 1;
        let ranked = rank_next_mutations(&state.model, &fx.layout, &ctx, 10).unwrap();
        hits += ranked.iter().any(|r| r.token == token) as usize;
    }
    assert!(total > 50);
    assert!(hits as f64 >= 0.9 * total as f64, "{hits}/{total}");
}

#[test]
fn ranking_contract() {
    let fx = fixture();
    let model = Model::new(small(fx.layout.vocab_size() as usize), 4).unwrap();
    let ctx = fx.held_out[0].ids();
    let top = rank_next_mutations(&model, &fx.layout, &ctx, 25).unwrap();
    assert_eq!(top.len(), 25);
    assert!(top.windows(2).all(|w| w[0].prob >= w[1].prob));
    assert!(top.iter().all(|r| fx.layout.is_mutation_token(r.token) && !ctx.contains(&r.token)));
    let mut seen = std::collections::HashSet::new();
    assert!(top.iter().all(|r| seen.insert(r.token)));

    // k = 1 is the admissible argmax
    let logits = model.next_logits(&ctx).unwrap();
    let best = fx
        .layout
        .mutation_block()
        .filter(|t| !ctx.contains(t))
        .max_by(|a, b| logits[*a as usize].total_cmp(&logits[*b as usize]).then(b.cmp(a)))
        .unwrap();
    assert_eq!(rank_next_mutations(&model, &fx.layout, &ctx, 1).unwrap()[0].token, best);
    assert!(rank_next_mutations(&model, &fx.layout, &ctx, 0).is_err());

    // hiding location makes the ranking independent of the original location
    let mut moved = ctx.clone();
    moved[0] = fx.layout.location_block().start;
    moved[1] = fx.layout.location_block().start + 1;
    let a = rank_without_location(&model, &fx.layout, &ctx, 10).unwrap();
    let b = rank_without_location(&model, &fx.layout, &moved, 10).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 10);
}
