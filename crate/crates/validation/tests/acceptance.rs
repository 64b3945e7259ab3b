//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use graphfuse::ablation::{ablation_settings, run_ablation};
use graphfuse::data::{parse_conll, serialize_conll, Batch, Sentence};
use graphfuse::gradcheck::{check_gradients, DEFAULT_FLOOR};
use graphfuse::graph::build_fully_connected;
use graphfuse::head::token_loss;
use graphfuse::metrics::{extract_spans, score, Span};
use graphfuse::model::Model;
use graphfuse::nn::ForwardCtx;
use graphfuse::synth::{generate, TaskSpec};
use graphfuse::tensor::IGNORE_INDEX;
use graphfuse::trainer::{clip_gradients, lr_schedule, train, train_with};
use graphfuse::{ModelConfig, Preset, RngState, Tagger, Tensor, Variant};
use graphfuse_validation::*;

fn small_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        d_emb: 8,
        d_model: 8,
        encoder_layers: 1,
        encoder_heads: 2,
        encoder_ff: 16,
        gat_hidden: 8,
        gat_heads: 2,
        decoder_heads: 2,
        decoder_ff: 32,
        ..ModelConfig::default()
    }
}

fn gradient_check() -> Check {
    let start = Instant::now();
    let model = Model::new(&small_config(Variant::Full), 10, 3, &mut RngState::new(11)).unwrap();
    let batch = Batch::from_rows(&[(vec![2, 5, 7, 3], vec![0, 2, 1, 2])], vec![0]);
    let report = check_gradients(
        &model.store.named_tensors(),
        || model.loss(&batch, &mut ForwardCtx::eval(&mut RngState::new(0))),
        GRAD_STEP,
        DEFAULT_FLOOR,
    )
    .unwrap();
    let elapsed = start.elapsed();
    let worst = report
        .worst
        .as_ref()
        .map_or(String::new(), |w| format!(" (worst {}[{}])", w.name, w.index));
    Check::new(
        1,
        "full-model gradients vs central differences",
        report.passes(GRAD_REL_TOL) && elapsed < GRAD_TIME_LIMIT,
        format!(
            "{} entries, max rel err {:.2e}{worst} < {GRAD_REL_TOL:e}; {:.2}s < {}s",
            report.checked,
            report.max_rel_err,
            elapsed.as_secs_f64(),
            GRAD_TIME_LIMIT.as_secs()
        ),
    )
}

fn attention_normalization() -> Check {
    let mut rng = RngState::new(21);
    let mut worst: f64 = 0.0;
    let mut masked_mass: f64 = 0.0;
    let mut rows = 0usize;
    for i in 0..100 {
        let model = Model::new(&small_config(Variant::Full), 12, 3, &mut rng.fork(i)).unwrap();
        let b = rng.int_range(1, 4);
        let sentences: Vec<(Vec<usize>, Vec<i64>)> = (0..b)
            .map(|_| {
                let n = rng.int_range(1, 8);
                ((0..n).map(|_| rng.int_range(2, 11)).collect(), vec![0; n])
            })
            .collect();
        let batch = Batch::from_rows(&sentences, (0..b).collect());
        let out = model.forward(&batch, &mut ForwardCtx::eval(&mut rng.split())).unwrap();
        let (edges, gat) = out.graph.as_ref().unwrap();
        let heads = gat.alpha.shape()[1];
        let alpha = gat.alpha.to_vec();
        let mut sums = vec![0.0; edges.node_count * heads];
        for (e, &t) in edges.targets.iter().enumerate() {
            for h in 0..heads {
                sums[t * heads + h] += alpha[e * heads + h];
            }
        }
        for s in sums {
            worst = worst.max((s - 1.0).abs());
            rows += 1;
        }
        let n = batch.n_max;
        for w in &out.decoder_attention {
            let h = w.shape()[1];
            let data = w.to_vec();
            for (r, row) in data.chunks(n).enumerate() {
                let sample = r / (h * n);
                let real = batch.lengths[sample];
                let sum: f64 = row[..real].iter().sum();
                worst = worst.max((sum - 1.0).abs());
                masked_mass = masked_mass.max(row[real..].iter().fold(0.0, |a, v| a + v.abs()));
                rows += 1;
            }
        }
    }
    Check::new(
        2,
        "attention rows sum to one",
        worst <= ATTENTION_SUM_TOL && masked_mass == 0.0,
        format!("{rows} rows, max |sum-1| {worst:.2e} <= {ATTENTION_SUM_TOL:e}, mass on padded keys {masked_mass:e}"),
    )
}

fn graph_oracle() -> Check {
    let mut rng = RngState::new(31);
    let mut mismatches = 0;
    for _ in 0..200 {
        let lengths: Vec<usize> = (0..rng.int_range(1, 6)).map(|_| rng.int_range(1, 9)).collect();
        let built = build_fully_connected(&lengths).unwrap();
        let mut expected = BTreeSet::new();
        let mut offset = 0;
        for &n in &lengths {
            for s in 0..n {
                for t in 0..n {
                    expected.insert((offset + s, offset + t));
                }
            }
            offset += n;
        }
        let got: BTreeSet<(usize, usize)> = built.edges().collect();
        let count_ok = built.len() == lengths.iter().map(|n| n * n).sum::<usize>();
        if got != expected || !count_ok || built.node_count != offset {
            mismatches += 1;
        }
    }
    Check::new(
        3,
        "edge lists equal brute-force enumeration",
        mismatches == 0,
        format!("200 length lists, {mismatches} mismatches"),
    )
}

fn loss_anchor() -> Check {
    let uniform = Tensor::zeros(&[1, 5]);
    let loss = token_loss(&uniform, &[2]).unwrap().item();
    let err = (loss - 5f64.ln()).abs();
    let logits = Tensor::param(vec![0.3, -1.2, 2.0, 0.7, 0.1, -0.4, 1.5, 0.0, -2.0], &[3, 3]).unwrap();
    token_loss(&logits, &[1, IGNORE_INDEX, 0]).unwrap().backward().unwrap();
    let grad = logits.grad().unwrap();
    let ignored_zero = grad[3..6].iter().all(|&g| g == 0.0);
    Check::new(
        4,
        "cross-entropy anchor and ignore index",
        err <= LOSS_ANCHOR_TOL && ignored_zero,
        format!("|loss - ln 5| = {err:.2e} <= {LOSS_ANCHOR_TOL:e}; ignored-row gradient exactly zero: {ignored_zero}"),
    )
}

/// Reference decoder: a token continues the previous span only when it is
/// `I-T` and the previous token carried type `T`.
fn oracle_spans(labels: &[String]) -> BTreeSet<Span> {
    let kind = |l: &str| -> Option<(bool, String)> {
        if l == "O" {
            return None;
        }
        let (prefix, ty) = l.split_at(2);
        Some((prefix == "B-", ty.to_string()))
    };
    let mut spans = BTreeSet::new();
    let mut i = 0;
    while i < labels.len() {
        let Some((_, ty)) = kind(&labels[i]) else {
            i += 1;
            continue;
        };
        let mut j = i + 1;
        while j < labels.len() && matches!(kind(&labels[j]), Some((false, ref t)) if *t == ty) {
            j += 1;
        }
        spans.insert(Span {
            entity_type: ty,
            start: i,
            end: j - 1,
        });
        i = j;
    }
    spans
}

fn oracle_scores(gold: &[Vec<String>], pred: &[Vec<String>]) -> (f64, f64) {
    let mut tally: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let gs = oracle_spans(g);
        let ps = oracle_spans(p);
        for s in &gs {
            let e = tally.entry(s.entity_type.clone()).or_default();
            if ps.contains(s) {
                e.0 += 1;
            } else {
                e.2 += 1;
            }
        }
        for s in ps.difference(&gs) {
            tally.entry(s.entity_type.clone()).or_default().1 += 1;
        }
    }
    let f = |tp: usize, fp: usize, fn_: usize| {
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    };
    let (tp, fp, fn_) = tally
        .values()
        .fold((0, 0, 0), |a, v| (a.0 + v.0, a.1 + v.1, a.2 + v.2));
    let per_type: Vec<f64> = tally
        .values()
        .filter(|v| v.0 + v.2 > 0)
        .map(|v| f(v.0, v.1, v.2))
        .collect();
    let macro_f1 = if per_type.is_empty() {
        0.0
    } else {
        per_type.iter().sum::<f64>() / per_type.len() as f64
    };
    (f(tp, fp, fn_), macro_f1)
}

fn random_bio(rng: &mut RngState) -> Vec<String> {
    let types = ["PER", "LOC", "ORG", "MISC"];
    let n = rng.int_range(0, 30);
    (0..n)
        .map(|_| match rng.int_range(0, 2) {
            0 => "O".to_string(),
            1 => format!("B-{}", types[rng.int_range(0, 3)]),
            _ => format!("I-{}", types[rng.int_range(0, 3)]),
        })
        .collect()
}

fn metrics_oracle() -> Check {
    let mut rng = RngState::new(41);
    let gold: Vec<Vec<String>> = (0..1000).map(|_| random_bio(&mut rng)).collect();
    let pred: Vec<Vec<String>> = gold
        .iter()
        .map(|g| {
            g.iter()
                .map(|l| if rng.uniform() < 0.2 { random_bio_label(&mut rng) } else { l.clone() })
                .collect()
        })
        .collect();
    let span_mismatch = gold
        .iter()
        .chain(&pred)
        .filter(|s| extract_spans(s).into_iter().collect::<BTreeSet<_>>() != oracle_spans(s))
        .count();
    let mut score_mismatch = 0;
    let mut corpora = 0;
    for (g, p) in gold.chunks(20).zip(pred.chunks(20)).chain([(&gold[..], &pred[..])]) {
        let report = score(g, p).unwrap();
        let (micro, macro_f1) = oracle_scores(g, p);
        corpora += 1;
        if report.micro.f1 != micro || report.macro_avg.f1 != macro_f1 {
            score_mismatch += 1;
        }
    }
    Check::new(
        5,
        "span extraction and F1 vs reference oracle",
        span_mismatch == 0 && score_mismatch == 0,
        format!(
            "2000 sequences, {span_mismatch} span mismatches; {corpora} corpora, {score_mismatch} F1 mismatches (exact)"
        ),
    )
}

fn random_bio_label(rng: &mut RngState) -> String {
    let types = ["PER", "LOC", "ORG", "MISC"];
    match rng.int_range(0, 2) {
        0 => "O".to_string(),
        1 => format!("B-{}", types[rng.int_range(0, 3)]),
        _ => format!("I-{}", types[rng.int_range(0, 3)]),
    }
}

fn ablation_ordering() -> Check {
    let start = Instant::now();
    let task = TaskSpec::relational(0);
    let report = run_ablation(&task, &ablation_settings(), &[1, 2, 3, 4, 5], |row, _| {
        eprintln!(
            "  ablation {:<8} seed {} test micro-F1 {:.4}",
            row.variant.as_str(),
            row.seed,
            row.micro_f1
        );
    })
    .unwrap();
    let elapsed = start.elapsed();
    let mean = |v| report.summary_for(v).micro_mean;
    let (enc, gat, full) = (mean(Variant::Encoder), mean(Variant::Gat), mean(Variant::Full));
    let passed = full >= ABLATION_FLOOR
        && gat >= ABLATION_FLOOR
        && full - enc >= ABLATION_MARGIN
        && gat - enc >= ABLATION_MARGIN
        && elapsed <= ABLATION_TIME_LIMIT;
    Check::new(
        6,
        "relational-match ablation ordering",
        passed,
        format!(
            "mean test micro-F1 encoder {enc:.4}, gat {gat:.4}, full {full:.4}; need gat,full >= {ABLATION_FLOOR} and >= encoder + {ABLATION_MARGIN}; {:.0}s <= {}s",
            elapsed.as_secs_f64(),
            ABLATION_TIME_LIMIT.as_secs()
        ),
    )
}

fn copy_convergence() -> Check {
    let mut settings = Preset::Desk.settings();
    settings.model.variant = Variant::Encoder;
    settings.train.patience = settings.train.epochs;
    let mut details = Vec::new();
    let mut passed = true;
    for seed in [1, 2, 3] {
        settings.train.seed = seed;
        let data = generate(&TaskSpec::copy(seed)).unwrap();
        let outcome = train(&settings, &data.train, &data.valid).unwrap();
        let losses: Vec<f64> = outcome.history.iter().take(5).map(|r| r.train_loss).collect();
        let monotone = losses.len() == 5 && losses.windows(2).all(|w| w[1] < w[0]);
        let f1 = outcome.tagger.evaluate(&data.test, 16).unwrap().micro.f1;
        passed &= monotone && f1 >= COPY_F1_FLOOR;
        details.push(format!("seed {seed}: decreasing {monotone}, test micro-F1 {f1:.4}"));
    }
    Check::new(
        7,
        "copy-task convergence",
        passed,
        format!("{} (floor {COPY_F1_FLOOR})", details.join("; ")),
    )
}

fn determinism() -> Check {
    let data = generate(&TaskSpec::copy(7)).unwrap();
    let mut settings = Preset::Desk.settings();
    settings.train.epochs = 3;
    settings.train.seed = 7;
    let tokens: Vec<Vec<String>> = data.test.iter().map(|s| s.tokens.clone()).collect();
    let run = || {
        let outcome = train_with(&settings, &data.train, &data.valid, |_| {}).unwrap();
        let labels = outcome.tagger.predict(&tokens, 16).unwrap();
        let predicted: Vec<Sentence> = tokens.iter().cloned().zip(labels).map(|(t, l)| Sentence::new(t, l)).collect();
        (outcome.history_jsonl(), serialize_conll(&predicted))
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    Check::new(
        8,
        "same seed, same bytes",
        h1 == h2 && p1 == p2,
        format!(
            "history {} bytes identical: {}; predictions {} bytes identical: {}",
            h1.len(),
            h1 == h2,
            p1.len(),
            p1 == p2
        ),
    )
}

fn schedule_and_clip() -> Check {
    let (total, ratio, peak) = (200, 0.1, 3e-4);
    let warmup = (ratio * total as f64).round() as usize;
    let start = lr_schedule(0, total, ratio, peak).unwrap();
    let top = lr_schedule(warmup, total, ratio, peak).unwrap();
    let end = lr_schedule(total, total, ratio, peak).unwrap();
    let mut grads = vec![vec![3.0, 4.0]];
    clip_gradients(&mut grads, 1.0);
    let norm = grads[0].iter().map(|g| g * g).sum::<f64>().sqrt();
    let clip_err = (norm - 1.0).abs();
    Check::new(
        9,
        "schedule and clipping anchors",
        start == 0.0 && top == peak && end == 0.0 && clip_err <= CLIP_TOL,
        format!("lr(0)={start}, lr({warmup})={top} (peak {peak}), lr({total})={end}; clipped norm err {clip_err:.1e}"),
    )
}

const FIXTURE: &str = "Hà_Nội B-LOC\nlà O\nthủ_đô O\n\nBệnh_nhân O\n91 B-PATIENT_ID\nđã O\nkhỏi O\n\nông O\nNguyễn_Văn_A B-NAME\n\n";

fn round_trip() -> Check {
    let messy = "Hà_Nội\tB-LOC\nlà   O\nthủ_đô O\n\n\n\nBệnh_nhân O\n91 B-PATIENT_ID\nđã O\nkhỏi O\n\nông O\nNguyễn_Văn_A B-NAME\n\n\n";
    let conll_ok = serialize_conll(&parse_conll(FIXTURE).unwrap()) == FIXTURE
        && serialize_conll(&parse_conll(messy).unwrap()) == FIXTURE;

    let corpus = parse_conll(FIXTURE).unwrap();
    let outcome = {
        let mut s = Preset::Desk.settings();
        s.train.epochs = 2;
        train(&s, &corpus, &corpus).unwrap()
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    outcome.tagger.save(&path).unwrap();
    let reloaded = Tagger::load(&path).unwrap();
    let batch = Batch::from_rows(
        &corpus
            .iter()
            .map(|s| (s.tokens.iter().map(|t| outcome.tagger.tokens.id(t)).collect(), vec![]))
            .collect::<Vec<_>>(),
        (0..corpus.len()).collect(),
    );
    let bits = |t: &Tagger| -> Vec<u64> {
        let out = t.model.forward(&batch, &mut ForwardCtx::eval(&mut RngState::new(0))).unwrap();
        out.logits.to_vec().iter().map(|v| v.to_bits()).collect()
    };
    let ckpt_ok = bits(&outcome.tagger) == bits(&reloaded);
    Check::new(
        10,
        "CoNLL and checkpoint round trips",
        conll_ok && ckpt_ok,
        format!("CoNLL normalized identity: {conll_ok}; reloaded logits bit-identical: {ckpt_ok}"),
    )
}

fn main() -> ExitCode {
    let checks = [
        gradient_check(),
        attention_normalization(),
        graph_oracle(),
        loss_anchor(),
        metrics_oracle(),
        ablation_ordering(),
        copy_convergence(),
        determinism(),
        schedule_and_clip(),
        round_trip(),
    ];
    if report(&checks) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
