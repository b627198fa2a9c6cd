//! Acceptance checks for the scoring backend: numeric correctness against
//! independent oracles, directional results on calibrated synthetic worlds,
//! and reproducibility of the command-line pipeline. One test per criterion;
//! each prints a `[PASS]` line when it holds (visible with `--nocapture`).

mod common;

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{bin, gen_corpus, run_ok, tiny_config, tree_bytes, TempDir};
use hhscore::embedding::{cosine_similarity, l2_normalize, EmbeddingVector};
use hhscore::eval::{eer_of, Trial, TrialTruth};
use hhscore::experiment::{
    generate_households, run_experiment, ExperimentConfig, ExperimentResult, Hardness,
    ModeResult, ScoringMode, STREAM_LEVELS,
};
use hhscore::model::{apply_mask, sample_mask, HouseholdScoringModel};
use hhscore::pairs::{build_pairs, LabeledUtterance};
use hhscore::seed::derive_seed;
use hhscore::sim::{
    generate_synthetic_corpus, similarity_threshold, speaker_level_embeddings, Corpus,
    SplitSpec, SyntheticConfig,
};
use hhscore::trainer::{
    gradient_check, weighted_bce_loss, GradientCheckDraw, MaskResample, Optimizer, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn pass(line: &str) {
    println!("[PASS] {line}");
}

fn random_unit(dim: usize, rng: &mut ChaCha12Rng) -> EmbeddingVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        if let Ok(e) = l2_normalize(&v) {
            return e;
        }
    }
}

// --- criterion 1: analytic gradients vs central finite differences ---

/// A draw is smooth when every first-layer pre-activation sits clearly off
/// the ReLU kink and the adapted embeddings are clearly separated, computed
/// from public accessors with stricter margins than the checker's own guards.
fn is_smooth(model: &HouseholdScoringModel, draw: &GradientCheckDraw) -> bool {
    let masked = |e: &EmbeddingVector| -> Vec<f64> {
        match &draw.mask {
            Some(m) => apply_mask(e, m).unwrap(),
            None => e.values().to_vec(),
        }
    };
    let layer = &model.layers()[0];
    let (d, k) = (layer.in_dim(), layer.out_dim());
    for x in [masked(&draw.e1), masked(&draw.e2)] {
        for row in 0..k {
            let z = layer.bias()[row]
                + layer.weights()[row * d..(row + 1) * d]
                    .iter()
                    .zip(&x)
                    .map(|(w, xi)| w * xi)
                    .sum::<f64>();
            if z.abs() < 1e-3 {
                return false;
            }
        }
    }
    let a1 = model.adapt(&masked(&draw.e1)).unwrap();
    let a2 = model.adapt(&masked(&draw.e2)).unwrap();
    let dist = a1.iter().zip(&a2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    dist > 0.1
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let start = Instant::now();
    let model = HouseholdScoringModel::init(64, 16, 2024).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(77);
    let mut draws = Vec::new();
    while draws.len() < 20 {
        let mask = if draws.len() % 2 == 0 {
            Some(sample_mask(64, 0.5, &mut rng).unwrap())
        } else {
            None
        };
        let draw = GradientCheckDraw {
            e1: random_unit(64, &mut rng),
            e2: random_unit(64, &mut rng),
            mask,
            positive: rng.random::<f64>() < 0.5,
            weight: rng.random_range(0.5..8.0),
        };
        if is_smooth(&model, &draw) {
            draws.push(draw);
        }
    }

    let report = gradient_check(&model, &draws, 1e-6, 1e-12).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(report.checked_draws, 20, "a guarded draw slipped through");
    assert_eq!(report.skipped_draws, 0);
    assert!(
        report.max_relative_error < 1e-6,
        "max relative error {} over {} coordinates",
        report.max_relative_error,
        report.checked_coordinates
    );
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:.2?}");
    pass(&format!(
        "gradients match finite differences: max rel err {:.3e} over {} coords, {:?}",
        report.max_relative_error, report.checked_coordinates, elapsed
    ));
}

// --- criterion 2: sweep-based EER vs brute-force enumeration ---

/// FAR and FNIR at `tau`, counted directly: a guest is false-accepted when
/// its best score clears the threshold; an enrolled trial errs when it is
/// rejected or its rank-1 speaker is wrong.
fn direct_rates(trials: &[Trial], tau: f64) -> (f64, f64) {
    let (mut guests, mut false_accepts, mut enrolled, mut errors) = (0u64, 0u64, 0u64, 0u64);
    for t in trials {
        match &t.truth {
            TrialTruth::Guest => {
                guests += 1;
                if t.s_max >= tau {
                    false_accepts += 1;
                }
            }
            TrialTruth::Enrolled(id) => {
                enrolled += 1;
                if t.s_max < tau || *id != t.predicted {
                    errors += 1;
                }
            }
        }
    }
    (false_accepts as f64 / guests as f64, errors as f64 / enrolled as f64)
}

fn brute_force_eer(trials: &[Trial]) -> (f64, f64, f64, f64) {
    let mut candidates: Vec<f64> = trials.iter().map(|t| t.s_max).collect();
    candidates.push(f64::NEG_INFINITY);
    candidates.push(f64::INFINITY);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best: Option<(f64, f64, f64)> = None;
    for &tau in &candidates {
        let (far, fnir) = direct_rates(trials, tau);
        if best.is_none_or(|(_, bf, bn)| (far - fnir).abs() < (bf - bn).abs()) {
            best = Some((tau, far, fnir));
        }
    }
    let (tau, far, fnir) = best.unwrap();
    ((far + fnir) / 2.0, tau, far, fnir)
}

fn random_trial_set(seed: u64) -> Vec<Trial> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=1000);
    let mut trials = Vec::with_capacity(n);
    for i in 0..n {
        let enrolled = if i == 0 {
            true
        } else if i == 1 {
            false
        } else {
            rng.random::<f64>() < 0.6
        };
        let score = if rng.random::<f64>() < 0.3 {
            (rng.random::<f64>() * 20.0).round() / 20.0
        } else {
            rng.random::<f64>()
        };
        let truth = if enrolled {
            TrialTruth::Enrolled(if rng.random::<f64>() < 0.85 { "m0" } else { "m1" }.into())
        } else {
            TrialTruth::Guest
        };
        trials.push(Trial {
            household_id: "h0".into(),
            truth,
            predicted: "m0".into(),
            s_max: score,
        });
    }
    trials
}

#[test]
fn criterion_02_eer_sweep_equals_brute_force() {
    let start = Instant::now();
    let mut max_gap = 0.0f64;
    for i in 0..100 {
        let trials = random_trial_set(9000 + i);
        let est = eer_of(&trials).unwrap();
        let (eer, tau, far, fnir) = brute_force_eer(&trials);
        let gap = (est.eer - eer).abs();
        max_gap = max_gap.max(gap);
        assert!(gap <= 1e-12, "set {i}: sweep {} vs brute force {eer}", est.eer);
        assert_eq!(est.threshold.to_bits(), tau.to_bits(), "set {i} threshold");
        assert_eq!(est.far.to_bits(), far.to_bits(), "set {i} far");
        assert_eq!(est.fnir.to_bits(), fnir.to_bits(), "set {i} fnir");
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:.2?}");
    pass(&format!(
        "sweep EER equals brute-force enumeration on 100 trial sets (max gap {max_gap:.1e}, {elapsed:.2?})"
    ));
}

// --- criterion 3: weighted loss vs independent scalar recomputation ---

#[test]
fn criterion_03_weighted_loss_matches_scalar_recomputation() {
    let mut rng = ChaCha12Rng::seed_from_u64(303);
    let mut max_gap = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=400);
        let scores: Vec<f64> = (0..n)
            .map(|_| match rng.random_range(0..20u32) {
                0 => 1e-15,
                1 => 1.0 - 1e-16,
                _ => rng.random::<f64>().clamp(1e-9, 1.0 - 1e-9),
            })
            .collect();
        let targets: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.3).collect();
        let w = rng.random_range(0.25..16.0);

        let produced = weighted_bce_loss(&scores, &targets, w).unwrap();
        let mut acc = 0.0f64;
        for (&s, &t) in scores.iter().zip(&targets) {
            let s = s.clamp(1e-12, 1.0 - 1e-12);
            acc += if t { w * s.ln() } else { (1.0 - s).ln() };
        }
        let recomputed = -(acc / n as f64);
        let gap = (produced - recomputed).abs();
        max_gap = max_gap.max(gap);
        assert!(gap <= 1e-12, "weighted loss {produced} vs recomputed {recomputed}");

        let unit = weighted_bce_loss(&scores, &targets, 1.0).unwrap();
        let mut plain = 0.0f64;
        for (&s, &t) in scores.iter().zip(&targets) {
            let s = s.clamp(1e-12, 1.0 - 1e-12);
            plain += if t { s.ln() } else { (1.0 - s).ln() };
        }
        let plain = -(plain / n as f64);
        assert_eq!(unit.to_bits(), plain.to_bits(), "w = 1 must equal mean BCE exactly");
    }
    pass(&format!(
        "weighted loss matches scalar recomputation on 200 batches (max gap {max_gap:.1e}); w = 1 equals mean BCE bitwise"
    ));
}

// --- criterion 4: pair counts vs exhaustive enumeration ---

#[test]
fn criterion_04_pair_counts_match_enumeration() {
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    let mut utterance = |label: &str, i: usize| LabeledUtterance {
        utterance_id: format!("{label}_u{i:03}"),
        speaker_label: label.to_string(),
        embedding: random_unit(8, &mut rng),
    };
    let members: Vec<LabeledUtterance> = (0..4)
        .flat_map(|m| {
            let label = format!("m{m}");
            (0..50).map(move |i| (label.clone(), i)).collect::<Vec<_>>()
        })
        .map(|(label, i)| utterance(&label, i))
        .collect();
    let guests: Vec<LabeledUtterance> =
        (0..250).map(|i| utterance("guest", i)).collect();

    let set = build_pairs(&members, &guests, None, 88).unwrap();
    assert_eq!(set.positive_count(), 4900);
    assert_eq!(set.negative_count(), 65000);
    assert_eq!(set.weight().to_bits(), (65000.0f64 / 4900.0).to_bits());
    assert_eq!(set.weight() * 4900.0, 65000.0);

    // Exhaustive oracle: classify every unordered index pair and require the
    // produced set to contain exactly the expected ones.
    let mut produced: BTreeSet<(u32, u32, bool)> = BTreeSet::new();
    for p in set.pairs() {
        let key = (p.first.min(p.second), p.first.max(p.second), p.positive);
        assert!(produced.insert(key), "duplicate pair {key:?}");
    }
    let total = members.len() + guests.len();
    let label_of = |i: usize| -> Option<usize> { (i < 200).then_some(i / 50) };
    let mut expected = BTreeSet::new();
    for i in 0..total {
        for j in (i + 1)..total {
            match (label_of(i), label_of(j)) {
                (Some(a), Some(b)) => {
                    expected.insert((i as u32, j as u32, a == b));
                }
                (Some(_), None) | (None, Some(_)) => {
                    expected.insert((i as u32, j as u32, false));
                }
                (None, None) => {}
            }
        }
    }
    assert_eq!(produced, expected);
    pass("pair counts match exhaustive enumeration: 4900 positive, 65000 negative, exact weight");
}

// --- shared calibrated world for criteria 5-7 and 10 ---

fn calibration_corpus_config() -> SyntheticConfig {
    SyntheticConfig {
        speaker_count: 120,
        utterances_per_speaker: 64,
        dimension: 64,
        identity_subspace_dim: 8,
        within_speaker_noise: 1.6,
        household_nuisance_scale: 1.2,
        nuisance_group_size: 8,
        seed: 7,
    }
}

fn calibration_corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| generate_synthetic_corpus(&calibration_corpus_config()).unwrap())
}

fn calibration_experiment(
    size: usize,
    count: usize,
    dropout: f64,
    seed: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        household_size: size,
        household_count: count,
        hardness: Hardness::Hard { percentile: 98.0 },
        split: SplitSpec::default(),
        train: TrainConfig {
            epochs: 10,
            learning_rate: 0.2,
            batch_size: 256,
            dropout_rate: dropout,
            optimizer: Optimizer::Sgd,
            seed: 0,
            distance_epsilon: 1e-12,
            mask_resample: MaskResample::PerPair,
            freeze_global_weight: false,
        },
        adapted_dim: 16,
        modes: vec![ScoringMode::Fused, ScoringMode::LocalOnly],
        guest_negative_cap: Some(1500),
        seed,
        clique_restarts: 1000,
        ..ExperimentConfig::default()
    }
}

fn mode_result(result: &ExperimentResult, mode: ScoringMode) -> &ModeResult {
    result.modes.iter().find(|m| m.mode == mode).unwrap()
}

struct CalibratedRuns {
    with_dropout: ExperimentResult,
    without_dropout: ExperimentResult,
    small_local: Vec<(usize, ExperimentResult)>,
    elapsed: Duration,
}

fn calibrated_runs() -> &'static CalibratedRuns {
    static RUNS: OnceLock<CalibratedRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let corpus = calibration_corpus();
        let start = Instant::now();
        let with_dropout =
            run_experiment(corpus, &calibration_experiment(4, 50, 0.5, 42)).unwrap();
        let without_dropout =
            run_experiment(corpus, &calibration_experiment(4, 50, 0.0, 42)).unwrap();
        let small_local = [2usize, 3]
            .iter()
            .map(|&size| {
                let mut cfg = calibration_experiment(size, 50, 0.5, 42);
                cfg.modes = vec![ScoringMode::LocalOnly];
                (size, run_experiment(corpus, &cfg).unwrap())
            })
            .collect();
        CalibratedRuns {
            with_dropout,
            without_dropout,
            small_local,
            elapsed: start.elapsed(),
        }
    })
}

// --- criterion 5: adapted scoring beats the cosine baseline ---

#[test]
fn criterion_05_adapted_scoring_beats_baseline_on_confusable_households() {
    let runs = calibrated_runs();
    let baseline = runs.with_dropout.baseline_eer;
    assert!(baseline > 0.0, "baseline must make errors for improvement to be defined");

    let fused = mode_result(&runs.with_dropout, ScoringMode::Fused);
    let fused_imp = fused.relative_improvement.unwrap();
    assert!(
        fused_imp >= 0.25,
        "fused with dropout: eer {} vs baseline {baseline} (improvement {fused_imp})",
        fused.eer
    );

    let fused_plain = mode_result(&runs.without_dropout, ScoringMode::Fused);
    assert!(
        fused_plain.eer < baseline,
        "fused without dropout: eer {} vs baseline {baseline}",
        fused_plain.eer
    );

    let local_n4 = mode_result(&runs.with_dropout, ScoringMode::LocalOnly);
    assert!(local_n4.eer < baseline, "local-only at size 4: {}", local_n4.eer);
    for (size, result) in &runs.small_local {
        let local = mode_result(result, ScoringMode::LocalOnly);
        assert!(
            local.eer < result.baseline_eer,
            "local-only at size {size}: eer {} vs baseline {}",
            local.eer,
            result.baseline_eer
        );
    }

    assert!(
        runs.elapsed < Duration::from_secs(600),
        "calibrated runs took {:?}",
        runs.elapsed
    );
    pass(&format!(
        "adapted scoring beats baseline on 50 confusable size-4 households: fused+dropout {:.1}% better ({} vs {}), fused plain {}, local-only wins at sizes 2-4 ({:?})",
        100.0 * fused_imp,
        fused.eer,
        baseline,
        fused_plain.eer,
        runs.elapsed
    ));
}

// --- criterion 6: ablation ordering ---

#[test]
fn criterion_06_dropout_and_fusion_ablations_order_correctly() {
    let runs = calibrated_runs();
    let fused_dropout = mode_result(&runs.with_dropout, ScoringMode::Fused).eer;
    let fused_plain = mode_result(&runs.without_dropout, ScoringMode::Fused).eer;
    let local_plain = mode_result(&runs.without_dropout, ScoringMode::LocalOnly).eer;
    assert!(
        fused_dropout <= fused_plain,
        "dropout should not hurt fused scoring: {fused_dropout} vs {fused_plain}"
    );
    assert!(
        fused_plain <= local_plain,
        "fusing the cosine score should not hurt: {fused_plain} vs {local_plain}"
    );
    pass(&format!(
        "ablations order correctly: fused+dropout {fused_dropout} <= fused {fused_plain} <= local-only {local_plain}"
    ));
}

// --- criterion 7: label-noise robustness ---

#[test]
fn criterion_07_dropout_retains_improvement_under_label_noise() {
    let corpus = calibration_corpus();
    let epsilons = [0.0, 0.05, 0.1];
    let seeds = [101u64, 102, 103];
    // improvements[dropout_idx][seed_idx][eps_idx]
    let mut improvements = [[[0.0f64; 3]; 3]; 2];
    for (d, &dropout) in [0.5, 0.0].iter().enumerate() {
        for (s, &seed) in seeds.iter().enumerate() {
            for (e, &eps) in epsilons.iter().enumerate() {
                let mut cfg = calibration_experiment(4, 20, dropout, seed);
                cfg.label_error_rate = eps;
                cfg.modes = vec![ScoringMode::Fused];
                let result = run_experiment(corpus, &cfg).unwrap();
                improvements[d][s][e] =
                    result.modes[0].relative_improvement.expect("baseline eer must be nonzero");
            }
        }
    }

    // (a) Without dropout, more label noise must not help, per seed within a
    // small tolerance and strictly on the 3-seed average.
    let seed_noise_tolerance = 0.05;
    for (s, per_seed) in improvements[1].iter().enumerate() {
        for e in 1..3 {
            assert!(
                per_seed[e] <= per_seed[e - 1] + seed_noise_tolerance,
                "no-dropout improvement rose with noise (seed {}): {:?}",
                seeds[s],
                per_seed
            );
        }
    }
    let mean = |d: usize, e: usize| -> f64 {
        improvements[d].iter().map(|s| s[e]).sum::<f64>() / 3.0
    };
    assert!(mean(1, 0) >= mean(1, 1) && mean(1, 1) >= mean(1, 2));

    // (b) At 10% label noise the dropout model keeps a strictly larger
    // improvement than the no-dropout model, for every seed.
    for s in 0..3 {
        assert!(
            improvements[0][s][2] > improvements[1][s][2],
            "seed {}: dropout {} vs no dropout {}",
            seeds[s],
            improvements[0][s][2],
            improvements[1][s][2]
        );
    }
    pass(&format!(
        "dropout retains improvement under label noise: no-dropout mean improvement {:.2} -> {:.2} -> {:.2}, dropout at 10% noise {:.2} vs {:.2}",
        mean(1, 0),
        mean(1, 1),
        mean(1, 2),
        mean(0, 2),
        mean(1, 2)
    ));
}

// --- criterion 8: byte-identical repetition of every command ---

#[test]
fn criterion_08_every_command_repeats_byte_identically() {
    let dir = TempDir::new("acceptance_determinism");
    let cfg = tiny_config(&dir, "\"baseline\", \"fused\", \"local_only\"");

    gen_corpus(&cfg, &dir.join("corpus.bin"));
    gen_corpus(&cfg, &dir.join("corpus_again.bin"));
    assert_eq!(
        std::fs::read(dir.join("corpus.bin")).unwrap(),
        std::fs::read(dir.join("corpus_again.bin")).unwrap(),
        "gen-corpus"
    );

    run_ok(bin().args(["run", "--config"]).arg(&cfg));
    let run_first = tree_bytes(&dir.join("out"));
    std::fs::remove_dir_all(dir.join("out")).unwrap();
    run_ok(bin().args(["run", "--config"]).arg(&cfg));
    assert_eq!(run_first, tree_bytes(&dir.join("out")), "run");
    assert!(run_first.keys().any(|k| k.starts_with("models/")), "run wrote no model files");

    let sweep_args = ["--axis", "epsilon", "--values", "0,0.1"];
    let sweep_out = dir.join("sweep");
    run_ok(
        bin().args(["sweep", "--config"]).arg(&cfg).arg("--out-dir").arg(&sweep_out).args(sweep_args),
    );
    let sweep_first = tree_bytes(&sweep_out);
    std::fs::remove_dir_all(&sweep_out).unwrap();
    run_ok(
        bin().args(["sweep", "--config"]).arg(&cfg).arg("--out-dir").arg(&sweep_out).args(sweep_args),
    );
    assert_eq!(sweep_first, tree_bytes(&sweep_out), "sweep");

    let export = |out: &str| {
        run_ok(
            bin()
                .args(["export-adapted", "--model"])
                .arg(dir.join("out/models/hh00000_fused.hhsm"))
                .arg("--corpus")
                .arg(dir.join("corpus.bin"))
                .arg("--households")
                .arg(dir.join("out/households.json"))
                .args(["--household-id", "hh00000", "--out"])
                .arg(dir.join(out)),
        );
    };
    export("adapted_a.tsv");
    export("adapted_b.tsv");
    assert_eq!(
        std::fs::read(dir.join("adapted_a.tsv")).unwrap(),
        std::fs::read(dir.join("adapted_b.tsv")).unwrap(),
        "export-adapted"
    );

    let eer = || run_ok(bin().args(["eer", "--trials"]).arg(dir.join("out/trials_fused.tsv")));
    assert_eq!(eer(), eer(), "eer");

    pass("every command repeats byte-identically with fixed config and seeds");
}

// --- criterion 9: lossless format round-trips ---

#[test]
fn criterion_09_formats_round_trip_losslessly() {
    let corpus = generate_synthetic_corpus(&SyntheticConfig {
        speaker_count: 6,
        utterances_per_speaker: 5,
        dimension: 10,
        identity_subspace_dim: 3,
        within_speaker_noise: 0.7,
        household_nuisance_scale: 0.5,
        nuisance_group_size: 3,
        seed: 99,
    })
    .unwrap();

    let bytes = corpus.to_binary_bytes();
    let from_binary = Corpus::from_binary_bytes(&bytes).unwrap();
    assert_eq!(from_binary.to_binary_bytes(), bytes);

    let text = corpus.to_text();
    let from_text = Corpus::from_text(&text).unwrap();
    assert_eq!(from_text.to_text(), text);
    assert_eq!(from_text.to_binary_bytes(), bytes, "text must preserve every bit");
    for (id, utterances) in corpus.speakers() {
        for (utt, embedding) in utterances {
            let restored = from_text.embedding(id, utt).unwrap();
            let bits: Vec<u64> = embedding.values().iter().map(|v| v.to_bits()).collect();
            let restored_bits: Vec<u64> =
                restored.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, restored_bits);
        }
    }

    for model in [
        HouseholdScoringModel::init(10, 4, 31).unwrap(),
        HouseholdScoringModel::init_layered(10, &[6, 3], 32).unwrap(),
    ] {
        let bytes = model.to_bytes();
        let restored = HouseholdScoringModel::from_bytes(&bytes).unwrap();
        assert_eq!(restored.to_bytes(), bytes);
        assert_eq!(restored.layers().len(), model.layers().len());
        for (a, b) in model.layers().iter().zip(restored.layers()) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.weights()), bits(b.weights()));
            assert_eq!(bits(a.bias()), bits(b.bias()));
        }
    }
    pass("corpus binary/text and model files round-trip bit-exactly");
}

// --- criterion 10: confusable households verify against their threshold ---

#[test]
fn criterion_10_hard_households_verify_against_their_threshold() {
    let corpus = calibration_corpus();
    let cfg = calibration_experiment(4, 50, 0.5, 42);
    let (households, threshold) = generate_households(corpus, &cfg).unwrap();
    let threshold = threshold.unwrap();
    let levels = speaker_level_embeddings(
        corpus,
        cfg.speaker_level_m,
        derive_seed(cfg.seed, STREAM_LEVELS),
    )
    .unwrap();
    assert_eq!(households.len(), 50);
    for hh in &households {
        for (i, a) in hh.members.iter().enumerate() {
            for b in &hh.members[i + 1..] {
                let cos =
                    cosine_similarity(&levels[&a.speaker_id], &levels[&b.speaker_id]).unwrap();
                assert!(
                    cos > threshold,
                    "household {}: pair ({}, {}) cosine {cos} <= threshold {threshold}",
                    hh.household_id,
                    a.speaker_id,
                    b.speaker_id
                );
            }
        }
    }

    let toy = generate_synthetic_corpus(&SyntheticConfig {
        speaker_count: 20,
        utterances_per_speaker: 25,
        dimension: 16,
        identity_subspace_dim: 4,
        within_speaker_noise: 1.0,
        household_nuisance_scale: 0.8,
        nuisance_group_size: 5,
        seed: 13,
    })
    .unwrap();
    let mut all: Vec<f64> = Vec::new();
    let speakers: Vec<&str> = toy.speaker_ids();
    for (i, a) in speakers.iter().enumerate() {
        for b in &speakers[i + 1..] {
            for (_, ea) in toy.utterances(a).unwrap() {
                for (_, eb) in toy.utterances(b).unwrap() {
                    all.push(cosine_similarity(ea, eb).unwrap());
                }
            }
        }
    }
    all.sort_by(f64::total_cmp);
    let rank = ((98.0 / 100.0) * all.len() as f64).ceil() as usize;
    let oracle = all[rank.clamp(1, all.len()) - 1];

    let exhaustive = similarity_threshold(&toy, 98.0, usize::MAX, 5).unwrap();
    assert_eq!(
        exhaustive.to_bits(),
        oracle.to_bits(),
        "exhaustive threshold {exhaustive} vs oracle {oracle}"
    );
    let sampled = similarity_threshold(&toy, 98.0, 20_000, 5).unwrap();
    assert!(
        (sampled - oracle).abs() <= 0.02,
        "sampled threshold {sampled} vs oracle {oracle}"
    );
    pass(&format!(
        "all 50 confusable households verify against threshold; toy percentile matches enumeration (exhaustive {exhaustive}, sampled gap {:.4})",
        (sampled - oracle).abs()
    ));
}
