use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingDims, EmbeddingGradients, EmbeddingModel};
use crate::path_extractor::{FunctionRecord, PathContext, VocabPair, Vocabulary};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dims: EmbeddingDims,
    pub learning_rate: f64,
    /// Classical momentum coefficient; `None` is plain gradient descent.
    pub momentum: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Contexts sampled per function and step when a bag is larger.
    pub max_contexts: usize,
    pub init_range: f64,
    /// Halve the learning rate after an epoch whose loss went up.
    pub halve_lr_on_increase: bool,
    /// Stop once training accuracy reaches this fraction.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dims: EmbeddingDims::default(),
            learning_rate: 0.01,
            momentum: None,
            epochs: 20,
            batch_size: 1,
            seed: 0,
            max_contexts: 200,
            init_range: 0.05,
            halve_lr_on_increase: true,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_contexts == 0 {
            return bad("batch_size and max_contexts must be >= 1");
        }
        if self.dims.token == 0 || self.dims.path == 0 || self.dims.code == 0 {
            return bad("dimensions must be >= 1");
        }
        if let Some(mu) = self.momentum {
            if !(0.0..1.0).contains(&mu) {
                return bad("momentum must be in [0, 1)");
            }
        }
        Ok(())
    }
}

/// One training example: a bag of contexts and its name-label id.
#[derive(Debug, Clone)]
pub struct Example {
    pub contexts: Vec<PathContext>,
    pub target: u32,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: EmbeddingModel,
    /// Mean full-bag loss before training (entry 0) and after each epoch.
    pub losses: Vec<f64>,
    /// Training accuracy after the last epoch.
    pub accuracy: f64,
    pub epochs_run: usize,
}

fn name_vocab(corpus: &[FunctionRecord]) -> Vocabulary {
    let mut names = Vocabulary::new();
    for r in corpus {
        names.intern(r.primary_name());
    }
    names
}

fn examples(corpus: &[FunctionRecord], names: &Vocabulary) -> Vec<Example> {
    corpus
        .iter()
        .filter(|r| !r.contexts.is_empty() && !r.name_tokens.is_empty())
        .map(|r| Example {
            contexts: r.contexts.clone(),
            target: names.get(r.primary_name()),
        })
        .collect()
}

/// Trains a fresh model on (already filtered) records.
pub fn train_embeddings(
    corpus: &[FunctionRecord],
    vocabs: &VocabPair,
    config: &TrainConfig,
) -> Result<TrainingOutcome, EmbedError> {
    config.validate()?;
    let trainable: Vec<FunctionRecord> = corpus
        .iter()
        .filter(|r| !r.contexts.is_empty() && !r.name_tokens.is_empty())
        .cloned()
        .collect();
    if trainable.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    let names = name_vocab(&trainable);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = EmbeddingModel::random(
        config.dims,
        vocabs.tokens.table_rows(),
        vocabs.paths.table_rows(),
        names.clone(),
        config.init_range,
        &mut rng,
    );
    model.seed = config.seed;
    run(model, &examples(&trainable, &names), config, &mut rng)
}

/// Continues training from `model`, growing its tables for new vocabulary first.
///
/// Existing rows are kept exactly; rows for new tokens, paths and names are
/// freshly initialized.
pub fn train_from(
    mut model: EmbeddingModel,
    corpus: &[FunctionRecord],
    vocabs: &VocabPair,
    config: &TrainConfig,
) -> Result<TrainingOutcome, EmbedError> {
    config.validate()?;
    let mut names = model.names.clone();
    for r in corpus.iter().filter(|r| !r.contexts.is_empty() && !r.name_tokens.is_empty()) {
        if !names.contains(r.primary_name()) {
            names.intern(r.primary_name());
        }
    }
    let examples = examples(corpus, &names);
    if examples.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    model.grow(
        vocabs.tokens.table_rows().max(model.token_rows()),
        vocabs.paths.table_rows().max(model.path_rows()),
        &names,
        config.init_range,
        &mut rng,
    );
    run(model, &examples, config, &mut rng)
}

fn run(
    mut model: EmbeddingModel,
    examples: &[Example],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingOutcome, EmbedError> {
    let (initial, mut accuracy) = evaluate(&model, examples)?;
    check_finite(0, initial)?;
    let mut losses = vec![initial];
    let mut lr = config.learning_rate;
    let mut velocity: Option<Velocity> = config.momentum.map(|_| Velocity::zeros_like(&model));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epochs_run = 0;

    for epoch in 1..=config.epochs {
        if config.target_accuracy.is_some_and(|t| accuracy >= t) {
            break;
        }
        order.shuffle(rng);
        for batch in order.chunks(config.batch_size) {
            let mut grad = EmbeddingGradients::zeros_like(&model);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &examples[i];
                let bag = sample_bag(&ex.contexts, config.max_contexts, rng);
                model.accumulate_gradient(&bag, ex.target, scale, &mut grad)?;
            }
            match (&mut velocity, config.momentum) {
                (Some(v), Some(mu)) => v.step(&mut model, &grad, lr, mu),
                _ => sgd_step(&mut model, &grad, lr),
            }
        }
        let (loss, acc) = evaluate(&model, examples)?;
        check_finite(epoch, loss)?;
        if config.halve_lr_on_increase && loss > *losses.last().expect("non-empty") {
            lr *= 0.5;
        }
        losses.push(loss);
        accuracy = acc;
        epochs_run = epoch;
    }
    Ok(TrainingOutcome {
        model,
        losses,
        accuracy,
        epochs_run,
    })
}

fn check_finite(epoch: usize, loss: f64) -> Result<(), EmbedError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(EmbedError::NonFiniteLoss { epoch, loss })
    }
}

fn sample_bag(contexts: &[PathContext], cap: usize, rng: &mut ChaCha8Rng) -> Vec<PathContext> {
    if contexts.len() <= cap {
        return contexts.to_vec();
    }
    contexts.choose_multiple(rng, cap).copied().collect()
}

/// Mean loss and top-1 accuracy over full bags.
fn evaluate(model: &EmbeddingModel, examples: &[Example]) -> Result<(f64, f64), EmbedError> {
    let mut total = 0.0;
    let mut correct = 0;
    for ex in examples {
        let out = model.example_loss(&ex.contexts, ex.target)?;
        total += out.loss;
        correct += usize::from(out.predicted == ex.target);
    }
    let n = examples.len() as f64;
    Ok((total / n, correct as f64 / n))
}

/// Top-1 name accuracy of `model` over records (labels unknown to the model count as misses).
pub fn name_accuracy(model: &EmbeddingModel, corpus: &[FunctionRecord]) -> Result<f64, EmbedError> {
    let usable: Vec<&FunctionRecord> = corpus.iter().filter(|r| !r.contexts.is_empty()).collect();
    if usable.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    let mut correct = 0;
    for r in &usable {
        let target = model.names.get(r.primary_name());
        if target != 0 && model.predict_label(&r.contexts)? == target {
            correct += 1;
        }
    }
    Ok(correct as f64 / usable.len() as f64)
}

fn sgd_step(model: &mut EmbeddingModel, grad: &EmbeddingGradients, lr: f64) {
    let (dt, dp) = (model.dims.token, model.dims.path);
    for (&r, g) in &grad.token_rows {
        let row = &mut model.token_table[r as usize * dt..(r as usize + 1) * dt];
        row.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
    }
    for (&r, g) in &grad.path_rows {
        let row = &mut model.path_table[r as usize * dp..(r as usize + 1) * dp];
        row.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
    }
    for (p, g) in [
        (&mut model.combine_weights, &grad.combine_weights),
        (&mut model.attention_vector, &grad.attention_vector),
        (&mut model.name_output, &grad.name_output),
    ] {
        p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
    }
}

/// Dense momentum buffers, one per parameter block.
struct Velocity {
    blocks: [Vec<f64>; 5],
}

impl Velocity {
    fn zeros_like(model: &EmbeddingModel) -> Self {
        Self {
            blocks: [
                vec![0.0; model.token_table.len()],
                vec![0.0; model.path_table.len()],
                vec![0.0; model.combine_weights.len()],
                vec![0.0; model.attention_vector.len()],
                vec![0.0; model.name_output.len()],
            ],
        }
    }

    fn step(&mut self, model: &mut EmbeddingModel, grad: &EmbeddingGradients, lr: f64, mu: f64) {
        let grads = [
            grad.token_table(model),
            grad.path_table(model),
            grad.combine_weights.clone(),
            grad.attention_vector.clone(),
            grad.name_output.clone(),
        ];
        for ((param, vel), g) in model.blocks_mut().into_iter().zip(&mut self.blocks).zip(&grads) {
            for ((p, v), g) in param.iter_mut().zip(vel.iter_mut()).zip(g) {
                *v = mu * *v + g;
                *p -= lr * *v;
            }
        }
    }
}
