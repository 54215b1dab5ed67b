use devae::config::ExperimentConfig;
use devae::corpus::{LabeledSentence, Vocabulary, EOS};
use devae::evaluation::{
    accuracy_suite, level_sweep, probe_features, train_classifier, value_range, LevelGrid, RangeMode, SentimentJudge,
};
use devae::model::DeVae;
use devae::oracles::tiny_model_config;
use devae::pipeline::{generations_jsonl, new_model, stopwords, train_judge, Prepared};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const A: u32 = 4;
const B: u32 = 5;

fn vocab() -> Vocabulary {
    let words = ["<pad>", "<bos>", "<eos>", "<unk>", "great", "awful", "food", "the", "was", "service", "slow", "ok"];
    Vocabulary::from_tsv(&words.iter().enumerate().map(|(i, w)| format!("{w}\t{i}\n")).collect::<String>()).unwrap()
}

/// A model whose decoder writes "great" for z_a near +1, "awful" for z_a near
/// -1 and nothing in between, independent of every other coordinate.
fn rigged_model() -> DeVae<f64> {
    let mut m = DeVae::<f64>::new(tiny_model_config()).unwrap();
    m.force_identity_flow();
    for id in m.vae.decoder.params() {
        m.store.get_mut(id).fill(0.0);
    }
    let d = m.latent_dim();
    let dec = &m.vae.decoder;
    let init = dec.init.as_ref().expect("initial-state projection");
    m.store.get_mut(init.weight)[[d - 1, 0]] = 10.0;
    let (w, b) = (dec.out.weight, dec.out.bias);
    m.store.get_mut(w)[[0, A as usize]] = 4.0;
    m.store.get_mut(w)[[0, B as usize]] = -4.0;
    m.store.get_mut(b)[[0, EOS as usize]] = 12.0;
    m
}

/// Reads "great" as positive, "awful" as negative, anything else as a coin flip.
struct WordJudge;

impl SentimentJudge for WordJudge {
    fn num_classes(&self) -> usize {
        2
    }

    fn probabilities(&self, batch: &[&[u32]]) -> Vec<Vec<f64>> {
        batch
            .iter()
            .map(|s| match (s.contains(&A), s.contains(&B)) {
                (true, false) => vec![0.0, 1.0],
                (false, true) => vec![1.0, 0.0],
                _ => vec![0.5, 0.5],
            })
            .collect()
    }
}

struct AlwaysPositive;

impl SentimentJudge for AlwaysPositive {
    fn num_classes(&self) -> usize {
        2
    }

    fn probabilities(&self, batch: &[&[u32]]) -> Vec<Vec<f64>> {
        vec![vec![0.0, 1.0]; batch.len()]
    }
}

fn test_sentences() -> Vec<LabeledSentence> {
    (0..20)
        .map(|i| LabeledSentence {
            tokens: vec![7, 6 + (i % 3) as u32, 8, if i % 2 == 0 { A } else { B }],
            label: (i % 2 == 0) as usize,
            raw_text: format!("source {i}"),
        })
        .collect()
}

/// Fraction of controlled generations whose predicted class equals the target,
/// counted straight from the written generations file.
fn recount(jsonl: &str) -> f64 {
    let (mut hit, mut n) = (0, 0);
    for line in jsonl.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if v["kind"] == "controlled" {
            n += 1;
            hit += (v["target_class"] == v["predicted_class"]) as usize;
        }
    }
    hit as f64 / n as f64
}

#[test]
fn rigged_decoder_reaches_full_accuracy() {
    let m = rigged_model();
    let v = vocab();
    let test = test_sentences();
    let (report, records) = accuracy_suite(&m, &WordJudge, &v, &test, (-1.0, 1.0), 25, 3).unwrap();
    assert_eq!(report.controlled_accuracy, 1.0);
    assert_eq!(report.transfer_accuracy, 1.0);
    assert_eq!(report.controlled_total, 50);
    assert_eq!(report.transfer_total, 20);
    assert_eq!(report.empty_generations, 0);
    for (class, g, _) in &records.controlled {
        assert_eq!(g.tokens, vec![if *class == 1 { A } else { B }]);
    }
    assert_eq!(recount(&generations_jsonl(&records, &v).unwrap()), report.controlled_accuracy);
}

#[test]
fn reported_accuracy_matches_a_recount_for_a_constant_judge() {
    let m = rigged_model();
    let v = vocab();
    let (report, records) = accuracy_suite(&m, &AlwaysPositive, &v, &test_sentences(), (-1.0, 1.0), 25, 3).unwrap();
    assert_eq!(report.controlled_accuracy, 0.5);
    assert_eq!(report.transfer_accuracy, 0.5);
    assert_eq!(recount(&generations_jsonl(&records, &v).unwrap()), 0.5);
}

#[test]
fn small_sentiment_values_decode_to_empty_sentences() {
    let m = rigged_model();
    let (report, _) = accuracy_suite(&m, &WordJudge, &vocab(), &test_sentences(), (-0.2, 0.2), 10, 0).unwrap();
    assert_eq!(report.empty_generations, 20);
}

#[test]
fn rigged_sweep_is_perfectly_monotone() {
    let m = rigged_model();
    let grid = LevelGrid::new(-1.0, 1.0, 3).unwrap();
    let stop = stopwords(&ExperimentConfig::desk()).unwrap();
    let sweep = level_sweep(&m, &WordJudge, &vocab(), &test_sentences(), &grid, &stop).unwrap();
    let scores: Vec<f64> = sweep.rows.iter().map(|r| r.mean_score).collect();
    assert_eq!(scores, [0.0, 0.5, 1.0]);
    assert_eq!(sweep.spearman, Some(1.0));
}

#[test]
fn percentile_range_of_normals() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xs: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let (lo, hi) = value_range(&xs, RangeMode::Percentile(1.0)).unwrap();
    assert!((lo + 2.326).abs() <= 0.2, "{lo}");
    assert!((hi - 2.326).abs() <= 0.2, "{hi}");
    let (smin, smax) = value_range(&xs, RangeMode::Strict).unwrap();
    assert!(smin <= lo && hi <= smax);
    assert!(value_range(&[], RangeMode::Strict).is_err());
}

fn labelled_features(rng: &mut ChaCha8Rng, n: usize, d: usize, za_from_label: bool) -> (Array2<f64>, Vec<usize>) {
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let x = Array2::from_shape_fn((n, d), |(r, c)| {
        if za_from_label && c == d - 1 {
            2.0 * y[r] as f64 - 1.0
        } else {
            StandardNormal.sample(rng)
        }
    });
    (x, y)
}

#[test]
fn probe_sees_no_correlation_in_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (x, y) = labelled_features(&mut rng, 1000, 5, false);
    let (tx, ty) = labelled_features(&mut rng, 1000, 5, false);
    let p = probe_features(&x, &y, &tx, &ty).unwrap();
    assert!(p.correlations.iter().all(|r| r.abs() <= 0.1), "{:?}", p.correlations);
    assert!((p.z_a_probe_accuracy - 0.5).abs() <= 0.06);
}

#[test]
fn probe_finds_a_label_copy_in_the_last_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (x, y) = labelled_features(&mut rng, 400, 5, true);
    let (tx, ty) = labelled_features(&mut rng, 400, 5, true);
    let p = probe_features(&x, &y, &tx, &ty).unwrap();
    assert!((p.correlations[4] - 1.0).abs() <= 1e-12);
    assert_eq!(p.argmax_dim, 4);
    assert_eq!(p.z_a_probe_accuracy, 1.0);
    assert!(p.best_other_probe_accuracy < 0.65);
}

#[test]
fn judge_learns_the_synthetic_corpus_and_nothing_from_shuffled_labels() {
    let cfg = ExperimentConfig::desk();
    let prepared = Prepared::synthesize(&cfg).unwrap();
    let judge = train_judge(&cfg, &prepared).unwrap();
    assert!(judge.accuracy(&prepared.encoded.test) >= 0.95);
    assert_eq!(judge.weights_hash(), train_judge(&cfg, &prepared).unwrap().weights_hash());

    let e = &prepared.encoded;
    let mut shuffled = e.train.clone();
    let mut labels: Vec<usize> = shuffled.iter().map(|s| s.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(12));
    for (s, l) in shuffled.iter_mut().zip(labels) {
        s.label = l;
    }
    let noise = train_classifier(&shuffled, &e.val, prepared.vocab.len(), 2, &cfg.classifier_config()).unwrap();
    let held: Vec<LabeledSentence> = e.val.iter().chain(&e.test).cloned().collect();
    let acc = noise.accuracy(&held);
    assert!((acc - 0.5).abs() <= 0.05, "{acc}");
    assert!(noise.ensure_gate().is_err());
}

#[test]
fn untrained_model_controls_at_chance() {
    let cfg = ExperimentConfig::desk();
    let prepared = Prepared::synthesize(&cfg).unwrap();
    let judge = train_judge(&cfg, &prepared).unwrap();
    let model = new_model(&cfg, &prepared, 0).unwrap();
    let (report, _) =
        accuracy_suite(&model, &judge, &prepared.vocab, &prepared.encoded.test[..50], (-1.0, 1.0), 200, 1).unwrap();
    assert!((report.controlled_accuracy - 0.5).abs() <= 0.1, "{}", report.controlled_accuracy);
}
