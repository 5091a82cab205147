//! Acceptance gates. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;
use vulnembed::classifier::{
    train_dual, BugCountConfig, CweLabel, DualConfig, FusionWeights, LabeledSample, Mlp, NetTrainConfig, OutputKind,
};
use vulnembed::composite::{aggregate_modules, build_composite};
use vulnembed::context_ranker::{filter_contexts, ContextFrequencyTable, FilterBounds};
use vulnembed::embedding::{
    name_accuracy, train_embeddings, CodeVector, EmbeddingDims, EmbeddingGradients, EmbeddingModel, TrainConfig,
};
use vulnembed::feedback::{apply_feedback, incremental_step, move_by, warm_start_retrain, AdjustmentConfig, Polarity};
use vulnembed::path_extractor::{
    enumerate_contexts, extract_path_contexts, extract_tree, CGrammar, FunctionRecord, Grammar, PathContext,
    PathLimits, RawContext, SyntaxNode, VocabPair, Vocabulary,
};
use vulnembed::pipeline::{self, PipelineSettings};
use vulnembed::similarity::{cosine_distance, is_similar, EntryMeta, Metric, VectorIndex, DEFAULT_THRESHOLD};
use vulnembed::store::{self, Store};
use vulnembed_server::{router, AppState, ServerConfig};

type Outcome = Result<String, String>;

fn toy() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn toy_filtered() -> (Vec<FunctionRecord>, VocabPair) {
    let corpus = extract_tree(&toy().join("src"), &CGrammar, &PathLimits::default()).expect("toy corpus");
    let table = ContextFrequencyTable::build(&corpus.records).unwrap();
    let bounds = FilterBounds::default();
    let filtered = corpus.records.iter().map(|r| filter_contexts(r, &table, &bounds)).collect();
    (filtered, corpus.vocabs)
}

// ---------------------------------------------------------------- paths

/// Every leaf with its ancestry as (node, index among the parent's children).
fn leaf_chains<'a>(node: &'a SyntaxNode, stack: &mut Vec<(&'a SyntaxNode, usize)>, out: &mut Vec<Vec<(&'a SyntaxNode, usize)>>) {
    if node.children.is_empty() {
        out.push(stack.clone());
        return;
    }
    for (i, child) in node.children.iter().enumerate() {
        stack.push((child, i));
        leaf_chains(child, stack, out);
        stack.pop();
    }
}

fn path_oracle(root: &SyntaxNode, limits: &PathLimits) -> Vec<RawContext> {
    let mut chains = Vec::new();
    leaf_chains(root, &mut vec![(root, 0)], &mut chains);
    let mut out = Vec::new();
    for i in 0..chains.len() {
        for j in i + 1..chains.len() {
            let (a, b) = (&chains[i], &chains[j]);
            let k = (0..a.len().min(b.len())).find(|&k| !std::ptr::eq(a[k].0, b[k].0)).expect("distinct leaves");
            let top = a[k - 1].0;
            let nodes = (a.len() - k) + 1 + (b.len() - k);
            let width = b[k].1 - a[k].1;
            if nodes > limits.max_length || width > limits.max_width {
                continue;
            }
            let mut path = String::new();
            for (n, _) in a[k..].iter().rev() {
                path.push_str(&n.kind);
                path.push('↑');
            }
            path.push_str(&top.kind);
            for (n, _) in &b[k..] {
                path.push('↓');
                path.push_str(&n.kind);
            }
            out.push(RawContext {
                start: a.last().unwrap().0.token_text.clone(),
                path,
                end: b.last().unwrap().0.token_text.clone(),
            });
        }
    }
    out
}

const SMALL_FUNCTIONS: &str = r#"
int one(void) { return 1; }
int ident(int x) { return x; }
int add(int a, int b) { return a + b; }
int neg(int a) { return -a; }
void clear(int *p) { *p = 0; }
int first(const int *v) { return v[0]; }
int is_zero(int x) { return x == 0; }
int max2(int a, int b) { return a > b ? a : b; }
void store(int *p, int v) { *p = v; }
int twice(int x) { return x + x; }
int sq(int x) { return x * x; }
char head(const char *s) { return *s; }
int inc(int x) { x++; return x; }
long widen(int x) { return (long)x; }
int call0(void) { return one(); }
int field(struct s *p) { return p->n; }
void noop(void) { }
int sign(int x) { if (x < 0) return -1; return 1; }
unsigned mask(unsigned x) { return x & 0xff; }
int idx(int *v, int i) { return v[i]; }
int shl(int x) { return x << 1; }
"#;

fn criterion_paths() -> Outcome {
    let start = Instant::now();
    let mut sources = vec![SMALL_FUNCTIONS.to_string()];
    for entry in std::fs::read_dir(toy().join("src")).unwrap() {
        sources.push(std::fs::read_to_string(entry.unwrap().path()).unwrap());
    }
    let mut functions = Vec::new();
    for s in &sources {
        for f in CGrammar.parse_functions(s).map_err(|e| e.to_string())? {
            let leaves = f.root.leaves().len();
            if (2..=12).contains(&leaves) {
                functions.push(f);
            }
        }
    }
    check(functions.len() >= 20, || format!("only {} functions with <= 12 leaves", functions.len()))?;
    let limit_sets = [PathLimits::default(), PathLimits::new(4, 1).unwrap(), PathLimits::new(64, 64).unwrap()];
    let mut contexts = 0;
    for f in &functions {
        for limits in &limit_sets {
            let expected = path_oracle(&f.root, limits);
            let got = enumerate_contexts(&f.root, limits).map_err(|e| e.to_string())?;
            check(got == expected, || format!("{} with {limits:?}: raw contexts differ", f.name))?;
            let mut oracle_vocab = VocabPair::default();
            let ids: Vec<PathContext> = expected
                .iter()
                .map(|c| {
                    PathContext::new(
                        oracle_vocab.tokens.intern(&c.start),
                        oracle_vocab.paths.intern(&c.path),
                        oracle_vocab.tokens.intern(&c.end),
                    )
                })
                .collect();
            let mut vocab = VocabPair::default();
            let encoded = extract_path_contexts(&f.root, limits, &mut vocab).map_err(|e| e.to_string())?;
            check(encoded == ids, || format!("{}: encoded contexts differ", f.name))?;
            contexts += expected.len();
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{} functions, {contexts} contexts over 3 limit settings, {elapsed:.2?}", functions.len()))
}

// ---------------------------------------------------------------- filter

fn criterion_filter() -> Outcome {
    let corpus = extract_tree(&toy().join("src"), &CGrammar, &PathLimits::default()).map_err(|e| e.to_string())?;
    check(corpus.records.len() == 50, || format!("{} functions", corpus.records.len()))?;
    let table = ContextFrequencyTable::build(&corpus.records).unwrap();
    let mut counts: HashMap<PathContext, u64> = HashMap::new();
    for r in &corpus.records {
        for c in &r.contexts {
            *counts.entry(*c).or_default() += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut pairs = Vec::new();
    for _ in 0..5 {
        let min = rng.random_range(1..=6u64);
        let max = min + rng.random_range(0..=60u64);
        let bounds = FilterBounds::new(min, max).unwrap();
        for r in &corpus.records {
            let expected: Vec<PathContext> =
                r.contexts.iter().copied().filter(|c| min <= counts[c] && counts[c] <= max).collect();
            let got = filter_contexts(r, &table, &bounds).contexts;
            check(got == expected, || format!("{} differs at ({min}, {max})", r.id))?;
        }
        pairs.push(format!("({min},{max})"));
    }
    Ok(format!("50 functions exact at {}", pairs.join(" ")))
}

// ---------------------------------------------------------------- gradients

const FD_STEP: f64 = 1e-4;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn embedding_worst_error() -> f64 {
    let mut names = Vocabulary::new();
    names.intern("get");
    names.intern("set");
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let model = EmbeddingModel::random(EmbeddingDims::uniform(4), 6, 5, names, 0.5, &mut rng);
    let examples = [
        (vec![PathContext::new(1, 2, 3), PathContext::new(3, 1, 4), PathContext::new(5, 4, 0)], 1u32),
        (vec![PathContext::new(5, 4, 2), PathContext::new(0, 3, 1)], 2u32),
    ];
    let loss = |m: &EmbeddingModel| {
        examples.iter().map(|(bag, y)| m.example_loss(bag, *y).unwrap().loss).sum::<f64>() / examples.len() as f64
    };
    let mut grad = EmbeddingGradients::zeros_like(&model);
    for (bag, y) in &examples {
        model.accumulate_gradient(bag, *y, 1.0 / examples.len() as f64, &mut grad).unwrap();
    }
    let analytic = [
        grad.token_table(&model),
        grad.path_table(&model),
        grad.combine_weights.clone(),
        grad.attention_vector.clone(),
        grad.name_output.clone(),
    ];
    let mut worst: f64 = 0.0;
    for (block, expected) in analytic.iter().enumerate() {
        for (i, &a) in expected.iter().enumerate() {
            let mut plus = model.clone();
            plus.blocks_mut()[block][i] += FD_STEP;
            let mut minus = model.clone();
            minus.blocks_mut()[block][i] -= FD_STEP;
            worst = worst.max(relative_error(a, (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP)));
        }
    }
    worst
}

fn mlp_worst_error(input: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Mlp::random(input, &[5, 3], 5, OutputKind::Sigmoid, &mut rng);
    let x: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = [1.0, 0.0, 0.0, 1.0, 0.0];
    let mut grad = net.zero_gradients();
    net.accumulate_gradient(&x, &y, 1.0, &mut grad);
    let mut worst: f64 = 0.0;
    for li in 0..net.layers.len() {
        for bias in [false, true] {
            let n = if bias { net.layers[li].bias.len() } else { net.layers[li].weights.len() };
            for k in 0..n {
                let nudged = |delta: f64| {
                    let mut m = net.clone();
                    let p = if bias { &mut m.layers[li].bias[k] } else { &mut m.layers[li].weights[k] };
                    *p += delta;
                    m.loss(&x, &y)
                };
                let numeric = (nudged(FD_STEP) - nudged(-FD_STEP)) / (2.0 * FD_STEP);
                let analytic = if bias { grad.layers[li].bias[k] } else { grad.layers[li].weights[k] };
                worst = worst.max(relative_error(analytic, numeric));
            }
        }
    }
    worst
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let errors = [
        ("embedding", embedding_worst_error()),
        ("vanilla", mlp_worst_error(4, 43)),
        ("composite", mlp_worst_error(8, 47)),
    ];
    let elapsed = start.elapsed();
    let summary = errors.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect::<Vec<_>>().join(", ");
    check(errors.iter().all(|(_, e)| *e < 1e-4), || summary.clone())?;
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("max relative error: {summary}, {elapsed:.2?}"))
}

// ---------------------------------------------------------------- attention

fn criterion_attention() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let mut model = EmbeddingModel::random(EmbeddingDims::uniform(8), 4, 4, Vocabulary::new(), 0.05, &mut rng);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        model.attention_vector.iter_mut().for_each(|a| *a = rng.random_range(-5.0..5.0));
        let n = rng.random_range(1..=60);
        let bag: Vec<Vec<f64>> = (0..n).map(|_| (0..8).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let (_, weights) = model.attention_pool(&bag).map_err(|e| e.to_string())?;
        check(weights.0.len() == n && weights.0.iter().all(|w| (0.0..=1.0).contains(w)), || "weight out of range".into())?;
        worst = worst.max((weights.sum() - 1.0).abs());
    }
    check(worst <= 1e-6, || format!("max |sum - 1| = {worst:e}"))?;
    Ok(format!("1000 bags, max |sum - 1| = {worst:.1e}"))
}

// ---------------------------------------------------------------- overfit

fn overfit_config() -> TrainConfig {
    TrainConfig {
        dims: EmbeddingDims::uniform(16),
        learning_rate: 0.5,
        epochs: 500,
        target_accuracy: Some(0.9),
        ..TrainConfig::default()
    }
}

fn criterion_overfit() -> Outcome {
    let start = Instant::now();
    let (corpus, vocabs) = toy_filtered();
    let distinct: std::collections::BTreeSet<&str> = corpus.iter().map(|r| r.primary_name()).collect();
    check(corpus.len() == 50 && distinct.len() == 10, || format!("{} functions, {} names", corpus.len(), distinct.len()))?;
    let first = train_embeddings(&corpus, &vocabs, &overfit_config()).map_err(|e| e.to_string())?;
    let second = train_embeddings(&corpus, &vocabs, &overfit_config()).map_err(|e| e.to_string())?;
    let accuracy = name_accuracy(&first.model, &corpus).map_err(|e| e.to_string())?;
    check(accuracy >= 0.9, || format!("accuracy {accuracy} after {} epochs", first.epochs_run))?;
    check(first.epochs_run <= 500, || format!("{} epochs", first.epochs_run))?;
    let same_losses = first.losses.iter().map(|l| l.to_bits()).eq(second.losses.iter().map(|l| l.to_bits()));
    check(same_losses && first.model == second.model, || "runs with the same seed differ".into())?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!("top-1 {accuracy:.2} after {} epochs, two runs bit-identical, {elapsed:.2?}", first.epochs_run))
}

// ---------------------------------------------------------------- knn

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    (1.0 - dot / (na * nb).sqrt()).clamp(0.0, 2.0)
}

fn criterion_knn() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let mut sizes = Vec::new();
    for round in 0..20 {
        let n = rng.random_range(1..=1000);
        let d = rng.random_range(2..=12);
        let mut index = VectorIndex::new(Metric::Cosine);
        let mut rows = Vec::new();
        for i in 0..n {
            // a few exact duplicates exercise tie ordering
            let v: Vec<f64> = if i > 0 && rng.random_bool(0.05) {
                rows.last().map(|(_, v): &(String, Vec<f64>)| v.clone()).unwrap()
            } else {
                (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            let id = format!("f{:04}", rng.random_range(0..100_000) * 1000 + i);
            index
                .insert(&CodeVector::new(v.clone(), "v1"), EntryMeta { id: id.clone(), ..EntryMeta::default() })
                .map_err(|e| e.to_string())?;
            rows.push((id, v));
        }
        let query: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = rng.random_range(1..=25);
        let mut expected: Vec<(f64, &str)> = rows.iter().map(|(id, v)| (oracle_cosine(&query, v), id.as_str())).collect();
        expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        expected.truncate(k);
        let got = index.knn(&query, k).map_err(|e| e.to_string())?;
        check(got.len() == expected.len(), || format!("round {round}: {} results", got.len()))?;
        for (g, (dist, id)) in got.iter().zip(&expected) {
            check(g.id == *id && g.distance == *dist, || {
                format!("round {round}: got ({}, {}) expected ({id}, {dist})", g.id, g.distance)
            })?;
        }
        sizes.push(n);
    }
    Ok(format!("20 indices, sizes {}..={}", sizes.iter().min().unwrap(), sizes.iter().max().unwrap()))
}

// ---------------------------------------------------------------- shared toy store

struct ToyStore {
    _dir: tempfile::TempDir,
    store: Store,
}

fn toy_store() -> Result<ToyStore, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = Store::init(&dir.path().join("store")).map_err(|e| e.to_string())?;
    let labels = std::fs::read(toy().join("labels.jsonl")).unwrap();
    let err = |e: pipeline::PipelineError| e.to_string();
    pipeline::extract(&store, &toy().join("src"), Some(&labels), &PipelineSettings::default()).map_err(err)?;
    pipeline::rank(&store, None).map_err(err)?;
    let cfg = TrainConfig { dims: EmbeddingDims::uniform(32), learning_rate: 0.5, epochs: 100, ..TrainConfig::default() };
    pipeline::train_embedding_model(&store, &cfg, false).map_err(err)?;
    pipeline::build_vectors(&store).map_err(err)?;
    Ok(ToyStore { _dir: dir, store })
}

fn stored_vectors(store: &Store) -> HashMap<String, Vec<f64>> {
    pipeline::load_vectors(store).unwrap().into_iter().map(|r| (r.id, r.values)).collect()
}

// ---------------------------------------------------------------- threshold

fn criterion_threshold(toy_store: &ToyStore) -> Outcome {
    let origin = CodeVector::new(vec![1.0, 0.0], "v1");
    let at_threshold = CodeVector::new(vec![3.0, 4.0], "v1");
    let d = cosine_distance(&origin.values, &at_threshold.values).map_err(|e| e.to_string())?;
    check(d == 0.4, || format!("3-4-5 distance {d}"))?;
    check(!is_similar(&origin, &at_threshold, DEFAULT_THRESHOLD).unwrap(), || "distance 0.4 counted as similar".into())?;
    check(is_similar(&origin, &origin, DEFAULT_THRESHOLD).unwrap(), || "distance 0 not similar".into())?;
    let vectors = stored_vectors(&toy_store.store);
    let duplicates = ["copy_buffer", "sum_bytes", "free_buffer", "find_byte"];
    for name in duplicates {
        let a = &vectors[&format!("buffer.c::{name}")];
        let b = &vectors[&format!("legacy_buffer.c::{name}")];
        let d = cosine_distance(a, b).map_err(|e| e.to_string())?;
        check(d == 0.0, || format!("duplicate {name} at distance {d}"))?;
    }
    Ok(format!("d=0 similar, d=0.4 not similar, {} duplicated functions at exactly 0", duplicates.len()))
}

// ---------------------------------------------------------------- sweep

fn criterion_sweep(built: &ToyStore) -> Outcome {
    let pairs = pipeline::parse_clone_pairs(&std::fs::read(toy().join("clone_pairs.jsonl")).unwrap(), "pairs")
        .map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let rows = pipeline::sweep_threshold(&built.store, &pairs, &grid).map_err(|e| e.to_string())?;
    let best = rows.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
    let argmax: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].accuracy == best).collect();
    let curve = rows.iter().map(|r| format!("{:.2}", r.accuracy)).collect::<Vec<_>>().join(" ");
    check(argmax.len() == 1, || format!("maximum not unique: {curve}"))?;
    let at = argmax[0];
    check(at != 0 && at != rows.len() - 1, || format!("maximum at the edge: {curve}"))?;
    check(best >= 0.9, || format!("best accuracy {best}"))?;
    Ok(format!("{} pairs, peak {best:.3} at t={}, curve [{curve}]", pairs.len(), rows[at].threshold))
}

// ---------------------------------------------------------------- dual model

fn context_label_set(rng: &mut ChaCha8Rng, modules: usize, offset: usize) -> Vec<LabeledSample> {
    const D: usize = 8;
    const MEMBERS: usize = 20;
    let direction: Vec<f64> = (0..D).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
    let mut functions: Vec<(String, String, CodeVector)> = Vec::new();
    for m in 0..modules {
        let centre: Vec<f64> = (0..D).map(|_| rng.random_range(-1.0..1.0)).collect();
        for f in 0..MEMBERS {
            let v: Vec<f64> = centre.iter().map(|c| c + 2.0 * rng.random_range(-1.0..1.0)).collect();
            functions.push((format!("m{}/f{f}", m + offset), format!("m{}", m + offset), CodeVector::new(v, "v1")));
        }
    }
    let aggregates = aggregate_modules(functions.iter().map(|(_, m, v)| (m.as_str(), v))).unwrap();
    let by_module: HashMap<&str, _> = aggregates.iter().map(|a| (a.module_id.as_str(), a)).collect();
    functions
        .iter()
        .map(|(id, module, v)| {
            let agg = by_module[module.as_str()];
            let context_flag: f64 = agg.vector.iter().zip(&direction).map(|(a, w)| a * w).sum();
            let mut labels = Vec::new();
            if context_flag > 0.0 {
                labels.push(CweLabel::Cwe476);
            }
            if v.values[0] > 0.5 {
                labels.push(CweLabel::Cwe119);
            }
            LabeledSample {
                id: id.clone(),
                vanilla: v.values.clone(),
                composite: build_composite(v, agg).unwrap().values,
                labels,
            }
        })
        .collect()
}

fn criterion_dual() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let train = context_label_set(&mut rng, 24, 0);
    let test = context_label_set(&mut rng, 12, 100);
    let cfg = DualConfig {
        net: NetTrainConfig { hidden: vec![16, 8], epochs: 150, learning_rate: 0.02, ..NetTrainConfig::default() },
        holdout_fraction: 0.25,
        ..DualConfig::default()
    };
    let models = train_dual(&train, &cfg).map_err(|e| e.to_string())?;
    let pick = |acc: Vec<(CweLabel, f64)>| acc.into_iter().find(|(l, _)| *l == CweLabel::Cwe476).unwrap().1;
    let fused = pick(models.label_accuracy(&test).map_err(|e| e.to_string())?);
    let vanilla = pick(models.vanilla_label_accuracy(&test).map_err(|e| e.to_string())?);
    let gain = (fused - vanilla) * 100.0;
    check(gain >= 5.0, || format!("fused {fused:.3} vs vanilla {vanilla:.3}"))?;
    Ok(format!(
        "module-context label on {} unseen functions: fused {fused:.3}, vanilla {vanilla:.3}, +{gain:.1} pp",
        test.len()
    ))
}

// ---------------------------------------------------------------- feedback

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn criterion_feedback() -> Outcome {
    let alpha = 0.05;
    let cfg = AdjustmentConfig { step_scale: alpha, guard: 0.9 };
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let v: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let far: Vec<f64> = (0..16).map(|_| rng.random_range(5.0..9.0)).collect();
    let mut worst: f64 = 0.0;
    for n in [1u64, 5, 50] {
        let expected = alpha * (1.0 + n as f64).ln();
        let direct = apply_feedback(&v, &far, Polarity::Positive, n, &cfg).map_err(|e| e.to_string())?;
        worst = worst.max((euclid(&v, &direct) - expected).abs());
        // the same distance accumulated vote by vote
        let mut cur = v.clone();
        let mut total = 0.0;
        for i in 1..=n {
            let (next, moved) = move_by(&cur, &far, Polarity::Positive, incremental_step(alpha, i), &cfg).unwrap();
            cur = next;
            total += moved;
        }
        worst = worst.max((total - expected).abs()).max((euclid(&v, &cur) - expected).abs());
    }
    check(worst <= 1e-9, || format!("max deviation {worst:e}"))?;

    let strong = AdjustmentConfig { step_scale: 0.5, guard: 0.9 };
    let target: Vec<f64> = v.iter().map(|x| x + 0.3).collect();
    let start_gap = euclid(&v, &target);
    let mut cur = v.clone();
    let mut gap = start_gap;
    let mut capped = 0;
    for i in 1..=20 {
        let step = incremental_step(0.5, i);
        let (next, moved) = move_by(&cur, &target, Polarity::Positive, step, &strong).unwrap();
        capped += usize::from(moved < step);
        let new_gap = euclid(&next, &target);
        // still on the segment from v to target, strictly closer
        let along: f64 = next.iter().zip(&target).zip(&v).map(|((n, t), s)| (t - n) * (t - s)).sum();
        check(new_gap < gap && along > 0.0, || format!("positive vote {i}: gap {gap} -> {new_gap}"))?;
        cur = next;
        gap = new_gap;
    }
    let mut cur = v.clone();
    let mut gap = start_gap;
    for i in 1..=200 {
        let (next, _) = move_by(&cur, &target, Polarity::Negative, incremental_step(0.5, i), &strong).unwrap();
        let new_gap = euclid(&next, &target);
        check(new_gap > gap, || format!("negative vote {i}: gap {gap} -> {new_gap}"))?;
        cur = next;
        gap = new_gap;
    }
    check(capped > 0, || "guard never engaged".into())?;
    Ok(format!(
        "n in {{1,5,50}} within {worst:.1e}; 20 positive votes ({capped} guard-capped) converge without overshoot, 200 negative diverge"
    ))
}

// ---------------------------------------------------------------- warm start

fn criterion_warm_start(built: &ToyStore) -> Outcome {
    let (corpus, vocabs) = toy_filtered();
    let cfg = TrainConfig { dims: EmbeddingDims::uniform(16), learning_rate: 0.5, epochs: 25, ..TrainConfig::default() };
    let trained = train_embeddings(&corpus, &vocabs, &cfg).map_err(|e| e.to_string())?;
    let still = warm_start_retrain(&trained.model, &corpus, &vocabs, &TrainConfig { epochs: 0, ..cfg.clone() })
        .map_err(|e| e.to_string())?;
    check(still.model.version != trained.model.version, || "version not bumped".into())?;
    let bits = |m: &EmbeddingModel| -> Vec<u64> {
        let mut m = m.clone();
        m.blocks_mut().iter().flat_map(|b| b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect()
    };
    let same_meta = still.model.names == trained.model.names && still.model.dims == trained.model.dims;
    check(same_meta && bits(&still.model) == bits(&trained.model), || "0-epoch retrain changed parameters".into())?;
    let previous = *trained.losses.last().unwrap();
    let resumed = warm_start_retrain(&trained.model, &corpus, &vocabs, &TrainConfig { epochs: 1, ..cfg })
        .map_err(|e| e.to_string())?;
    let gap = (resumed.losses[0] - previous).abs();
    check(gap <= 1e-6, || format!("epoch-0 loss {} vs previous final {previous}", resumed.losses[0]))?;

    // the stored model round-trips the same way
    let before = built.store.load(store::EMBEDDING_MODEL).map_err(|e| e.to_string())?;
    let summary = pipeline::train_embedding_model(&built.store, &TrainConfig { epochs: 0, ..TrainConfig::default() }, true)
        .map_err(|e| e.to_string())?;
    let after = built.store.load(store::EMBEDDING_MODEL).map_err(|e| e.to_string())?;
    let (mut a, b) = (EmbeddingModel::from_bytes(&before).unwrap(), EmbeddingModel::from_bytes(&after).unwrap());
    check(b.version == summary.model_version && a.version != b.version, || "stored version not bumped".into())?;
    a.version = b.version.clone();
    check(a.to_bytes() == after, || "stored 0-epoch retrain differs beyond the version".into())?;
    let rows = pipeline::load_vectors(&built.store).map_err(|e| e.to_string())?;
    check(rows.iter().all(|r| r.model_version == b.version), || "vectors not re-exported".into())?;
    Ok(format!("0 epochs bit-exact ({} -> {}), epoch-0 loss gap {gap:.1e}", trained.model.version, still.model.version))
}

// ---------------------------------------------------------------- batch vs real time

struct Api {
    state: Arc<AppState>,
}

impl Api {
    async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
        let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
        let resp = router(Arc::clone(&self.state)).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }
}

fn small_store(root: &Path) -> Result<(), String> {
    let src = root.join("src");
    std::fs::create_dir_all(&src).unwrap();
    let files = ["buffer.c", "io.c", "list.c", "stats.c"];
    for f in files {
        std::fs::copy(toy().join("src").join(f), src.join(f)).unwrap();
    }
    let labels: String = std::fs::read_to_string(toy().join("labels.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| files.iter().any(|f| l.contains(&format!("\"{f}::"))))
        .map(|l| format!("{l}\n"))
        .collect();
    let err = |e: pipeline::PipelineError| e.to_string();
    let store = Store::init(&root.join("store")).map_err(|e| e.to_string())?;
    let summary = pipeline::extract(&store, &src, Some(labels.as_bytes()), &PipelineSettings::default()).map_err(err)?;
    check(summary.functions == 20, || format!("{} functions", summary.functions))?;
    pipeline::rank(&store, None).map_err(err)?;
    let cfg = TrainConfig { dims: EmbeddingDims::uniform(16), learning_rate: 0.5, epochs: 30, ..TrainConfig::default() };
    pipeline::train_embedding_model(&store, &cfg, false).map_err(err)?;
    pipeline::build_vectors(&store).map_err(err)?;
    pipeline::build_aggregates(&store).map_err(err)?;
    let dual = DualConfig {
        net: NetTrainConfig { hidden: vec![16, 8], epochs: 60, ..NetTrainConfig::default() },
        ..DualConfig::default()
    };
    pipeline::train_classifier(&store, &dual, &BugCountConfig::default()).map_err(err)?;
    Ok(())
}

async fn batch_vs_realtime() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    small_store(dir.path())?;
    let config = ServerConfig { store: dir.path().join("store"), ..ServerConfig::default() };
    let api = Api { state: AppState::new(config) };
    let (status, accepted) = api.call("POST", "/v1/scan", Some(json!({}))).await;
    check(status == StatusCode::ACCEPTED || status == StatusCode::OK, || format!("scan returned {status}"))?;
    let id = accepted["id"].as_str().unwrap().to_string();
    let mut report = Value::Null;
    for _ in 0..5000 {
        let (_, r) = api.call("GET", &format!("/v1/scan/{id}"), None).await;
        if r["status"] == "complete" {
            report = r;
            break;
        }
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
    let rows = report["rows"].as_array().ok_or("scan did not complete")?;
    check(rows.len() == 20, || format!("{} rows", rows.len()))?;
    for row in rows {
        let fid = row["function_id"].as_str().unwrap();
        let (_, view) = api.call("GET", &format!("/v1/functions/{fid}"), None).await;
        let body = json!({ "source": view["source"], "module_id": view["module_id"] });
        let (status, predicted) = api.call("POST", "/v1/predict", Some(body)).await;
        check(status == StatusCode::OK, || format!("predict {fid}: {status}"))?;
        check(predicted["predictions"] == row["predictions"], || format!("{fid}: scan and predict differ"))?;
        let fused = |v: &Value| -> Vec<u64> {
            v.as_array().unwrap().iter().map(|p| p["p_fused"].as_f64().unwrap().to_bits()).collect()
        };
        check(fused(&predicted["predictions"]) == fused(&row["predictions"]), || format!("{fid}: fused bits differ"))?;
    }
    Ok("20 scan rows equal /v1/predict outputs bit for bit".into())
}

fn criterion_batch_realtime(runtime: &tokio::runtime::Runtime) -> Outcome {
    runtime.block_on(batch_vs_realtime())
}

// ---------------------------------------------------------------- fusion

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn criterion_fusion() -> Outcome {
    let worked = FusionWeights::new(2.0, 1.0, -1.5).fuse(0.6, 0.8);
    check((worked - sigmoid(0.5)).abs() <= 1e-9, || format!("worked example gives {worked}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let samples: Vec<LabeledSample> = (0..12)
        .map(|i| LabeledSample {
            id: format!("s{i}"),
            vanilla: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            composite: (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(),
            labels: if i % 2 == 0 { vec![CweLabel::Cwe119] } else { vec![] },
        })
        .collect();
    let cfg = DualConfig { net: NetTrainConfig { hidden: vec![4], epochs: 5, ..NetTrainConfig::default() }, ..DualConfig::default() };
    let mut models = train_dual(&samples, &cfg).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for setting in 0..3 {
        let w = FusionWeights::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-3.0..3.0));
        models.fusion.weights.iter_mut().for_each(|x| *x = w);
        for s in &samples {
            let prediction = models.predict(&s.vanilla, &s.composite).map_err(|e| e.to_string())?;
            for p in &prediction.labels {
                let hand = sigmoid(w.vanilla * p.p_vanilla + w.composite * p.p_composite + w.bias);
                worst = worst.max((p.p_fused - hand).abs());
            }
        }
        check(worst <= 1e-9, || format!("setting {setting}: deviation {worst:e}"))?;
    }
    Ok(format!("(2,1,-1.5)@(0.6,0.8) = sigmoid(0.5); 3 random settings within {worst:.1e}"))
}

// ---------------------------------------------------------------- driver

fn main() {
    let runtime = tokio::runtime::Runtime::new().expect("runtime");
    let mut failures = 0;
    let mut report = |name: &str, outcome: Outcome| {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    };
    report("path-context oracle equivalence", criterion_paths());
    report("filter-rule equivalence", criterion_filter());
    report("gradient checks", criterion_gradients());
    report("attention normalization", criterion_attention());
    report("embedding overfit gate", criterion_overfit());
    report("knn oracle equivalence", criterion_knn());
    match toy_store() {
        Ok(toy) => {
            report("similarity threshold semantics", criterion_threshold(&toy));
            report("threshold sweep", criterion_sweep(&toy));
            report("warm-start continuity", criterion_warm_start(&toy));
        }
        Err(e) => {
            for name in ["similarity threshold semantics", "threshold sweep", "warm-start continuity"] {
                report(name, Err(format!("toy store: {e}")));
            }
        }
    }
    report("dual-model improvement", criterion_dual());
    report("feedback-loop law", criterion_feedback());
    report("batch/real-time equivalence", criterion_batch_realtime(&runtime));
    report("fusion arithmetic", criterion_fusion());
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
