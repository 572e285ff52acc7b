use std::fs;
use std::sync::Arc;

use focus::decoder::Decoder;
use focus::eval::{
    accuracy, compare_strategies, evaluate, load_dataset, save_dataset, split_validation, synthesize_minimal_pairs,
    winoground_scores, Candidate, EvalInstance, TaskKind,
};
use focus::leakage::{
    feature_similarity, load_leakage_instances, run_leakage_experiment, save_leakage_instances, CaptionRole,
    LeakageOptions, OptionBinding,
};
use focus::provider::wire::encode_png;
use focus::provider::{SyntheticModel, SyntheticModelConfig};
use focus::types::{DecodingConfig, ImageTensor};
use focus::Error;

fn model(beta: f64) -> SyntheticModel {
    SyntheticModel::new(SyntheticModelConfig {
        beta,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn dataset_round_trip() {
    let suite = synthesize_minimal_pairs(3, 4, 0.5, &model(0.4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.jsonl");
    save_dataset(&path, &suite.eval).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), suite.eval);

    let lpath = dir.path().join("leakage.jsonl");
    save_leakage_instances(&lpath, &suite.leakage).unwrap();
    assert_eq!(load_leakage_instances(&lpath).unwrap(), suite.leakage);
}

#[test]
fn empty_dataset_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    fs::write(&path, "\n\n").unwrap();
    assert!(load_dataset(&path).unwrap().is_empty());
}

#[test]
fn schema_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let img = r#"{"height":1,"width":1,"channels":1,"encoding":"raw-f32-base64","data":"AAAAPw=="}"#;
    let good = format!(
        r#"{{"schema_version":1,"id":"a","task_kind":"caption_choice","images":[{img}],"prompt_template":"image 1","candidates":["A","B"],"gold":0}}"#
    );
    let no_gold = good.replace(r#","gold":0"#, "");
    let path = dir.path().join("d.jsonl");
    fs::write(&path, format!("{good}\n\n{no_gold}\n")).unwrap();
    match load_dataset(&path) {
        Err(Error::Schema { line, message }) => {
            assert_eq!(line, 3);
            assert!(message.contains("gold"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }

    let bad_kind = good.replace("caption_choice", "essay");
    fs::write(&path, bad_kind).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Schema { line: 1, .. })));

    let bad_gold = good.replace(r#""gold":0"#, r#""gold":2"#);
    fs::write(&path, bad_gold).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Schema { line: 1, .. })));

    let bad_version = good.replace(r#""schema_version":1"#, r#""schema_version":9"#);
    fs::write(&path, bad_version).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Schema { line: 1, .. })));
}

#[test]
fn png_references_resolve_relative_to_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("img")).unwrap();
    let img = ImageTensor::new(1, 2, 3, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
    fs::write(dir.path().join("img/a.png"), encode_png(&img).unwrap()).unwrap();
    let line = r#"{"schema_version":1,"id":"a","task_kind":"multiple_choice","images":[{"path":"img/a.png"}],"prompt_template":"image 1","candidates":[[1],[2],[3]],"gold":2}"#;
    let path = dir.path().join("d.jsonl");
    fs::write(&path, line).unwrap();
    let loaded = load_dataset(&path).unwrap();
    assert_eq!(loaded[0].images[0].data(), img.data());
    assert_eq!(loaded[0].candidates[2], Candidate::Tokens(vec![3]));

    fs::write(&path, line.replace("a.png", "missing.png")).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::ImageReference { .. })));
}

#[test]
fn synthesis_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let m = model(0.4);
    let mut files = Vec::new();
    for run in 0..2 {
        let suite = synthesize_minimal_pairs(11, 5, 0.5, &m).unwrap();
        let path = dir.path().join(format!("run{run}.jsonl"));
        save_dataset(&path, &suite.eval).unwrap();
        files.push(fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
    let other = synthesize_minimal_pairs(12, 5, 0.5, &m).unwrap();
    assert_ne!(other.eval, synthesize_minimal_pairs(11, 5, 0.5, &m).unwrap().eval);
}

#[test]
fn synthesized_groups_have_the_right_shape() {
    let suite = synthesize_minimal_pairs(0, 3, 0.5, &model(0.4)).unwrap();
    assert_eq!(suite.eval.len(), 12);
    assert_eq!(suite.leakage.len(), 6);
    for inst in &suite.eval {
        inst.validate().unwrap();
    }
    for inst in &suite.leakage {
        inst.validate().unwrap();
        let (t, d) = (&inst.captions.target, &inst.captions.distractor);
        assert_eq!(inst.captions.merged, format!("{t} {d}"));
    }
    assert!(synthesize_minimal_pairs(0, 0, 0.5, &model(0.4)).is_err());
    assert!(synthesize_minimal_pairs(0, 1, 1.5, &model(0.4)).is_err());
}

#[test]
fn higher_similarity_level_gives_more_similar_pairs() {
    let m = model(0.4);
    let mean = |level: f64| {
        let suite = synthesize_minimal_pairs(5, 60, level, &m).unwrap();
        let sims: Vec<f64> = suite
            .leakage
            .iter()
            .step_by(2)
            .map(|l| feature_similarity(&l.image_pair.0, &l.image_pair.1))
            .collect();
        sims.iter().sum::<f64>() / sims.len() as f64
    };
    let (low, high) = (mean(0.1), mean(0.9));
    assert!(high > low + 0.1, "low {low} high {high}");
}

#[test]
fn mixing_free_model_scores_perfectly() {
    let m = model(0.0);
    let suite = synthesize_minimal_pairs(7, 30, 0.8, &model(0.4)).unwrap();
    let run = evaluate(&suite.eval, &m, &DecodingConfig::baseline(), &Decoder::serial(), "b").unwrap();
    let s = &run.metrics.winoground;
    assert_eq!((s.text, s.image, s.group), (100.0, 100.0, 100.0));
    assert_eq!(s.n_groups, 30);
}

#[test]
fn metrics_do_not_depend_on_instance_order() {
    let m = model(0.4);
    let suite = synthesize_minimal_pairs(2, 10, 0.5, &m).unwrap();
    let config = DecodingConfig::focus();
    let a = evaluate(&suite.eval, &m, &config, &Decoder::serial(), "f").unwrap();
    let mut reversed = suite.eval.clone();
    reversed.reverse();
    let b = evaluate(&reversed, &m, &config, &Decoder::serial(), "f").unwrap();
    assert_eq!(a.metrics, b.metrics);
    let mut rb = b.records.clone();
    rb.reverse();
    assert_eq!(a.records, rb);
    assert_eq!(accuracy(&a.records).unwrap(), accuracy(&rb).unwrap());
}

#[test]
fn parallel_evaluation_matches_serial() {
    let m = model(0.4);
    let suite = synthesize_minimal_pairs(2, 6, 0.5, &m).unwrap();
    let config = DecodingConfig::focus();
    let a = evaluate(&suite.eval, &m, &config, &Decoder::serial(), "f").unwrap();
    let b = evaluate(&suite.eval, &m, &config, &Decoder::with_jobs(8).unwrap(), "f").unwrap();
    assert_eq!(a, b);
}

#[test]
fn comparison_deltas() {
    let m = model(0.4);
    let suite = synthesize_minimal_pairs(4, 6, 0.5, &m).unwrap();
    let d = Decoder::serial();

    let one = compare_strategies(&suite.eval, &m, &[DecodingConfig::focus()], &d).unwrap();
    assert_eq!(one.report.strategies.len(), 1);
    assert!(one.report.deltas.is_empty());

    let same = compare_strategies(&suite.eval, &m, &[DecodingConfig::focus(), DecodingConfig::focus()], &d).unwrap();
    let delta = &same.report.deltas[0];
    assert_eq!((delta.accuracy, delta.text, delta.image, delta.group), (Some(0.0), 0.0, 0.0, 0.0));
    let n = suite.eval.len();
    let (first, second) = same.records.split_at(n);
    for (a, b) in first.iter().zip(second) {
        assert_eq!((a.predicted, &a.scores), (b.predicted, &b.scores));
    }

    let three = compare_strategies(
        &suite.eval,
        &m,
        &[DecodingConfig::baseline(), DecodingConfig::focus(), DecodingConfig::vcd_variant()],
        &d,
    )
    .unwrap();
    assert_eq!(three.report.deltas.len(), 3);
    // caption choice: 1 image, image choice: 2 images; 2 of each per group
    let groups = 6;
    let expected = [groups * 4, groups * 2 * (2 + 3), groups * 4 * 2];
    let passes: Vec<usize> = three.report.strategies.iter().map(|s| s.metrics.pass_count).collect();
    assert_eq!(passes, expected);
    assert_eq!(three.report.total_pass_count, expected.iter().sum::<usize>());
    assert!(compare_strategies(&suite.eval, &m, &[], &d).is_err());
}

#[test]
fn group_score_is_bounded_by_text_and_image() {
    let m = model(0.4);
    let suite = synthesize_minimal_pairs(9, 30, 0.7, &m).unwrap();
    for config in [DecodingConfig::baseline(), DecodingConfig::focus(), DecodingConfig::vcd_variant()] {
        let run = evaluate(&suite.eval, &m, &config, &Decoder::serial(), "x").unwrap();
        let s = winoground_scores(&run.records);
        assert!(s.group <= s.text.min(s.image));
        for v in [s.text, s.image, s.group] {
            assert!((0.0..=100.0).contains(&v));
        }
    }
}

#[test]
fn provider_without_vocabulary_needs_token_ids() {
    let img = Arc::new(ImageTensor::filled(2, 2, 3, 0.5).unwrap());
    let inst = EvalInstance {
        id: "x".into(),
        images: vec![img],
        task_kind: TaskKind::MultipleChoice,
        prompt_template: "image 1".into(),
        candidates: vec![Candidate::Text("A".into()), Candidate::Text("B".into())],
        gold: 0,
        group_id: None,
    };
    struct Bare;
    impl focus::provider::LogitProvider for Bare {
        fn next_token_logits(&self, _: &focus::provider::ProviderRequest) -> focus::Result<focus::types::LogitVector> {
            focus::types::LogitVector::new(vec![0.0; 4], "bare")
        }
        fn describe(&self) -> serde_json::Value {
            serde_json::json!({ "kind": "bare" })
        }
    }
    let err = evaluate(&[inst], &Bare, &DecodingConfig::baseline(), &Decoder::serial(), "b").unwrap_err();
    assert!(matches!(err, Error::NoTokenizer));
}

#[test]
fn split_is_stable_and_keeps_groups_together() {
    let suite = synthesize_minimal_pairs(1, 100, 0.5, &model(0.4)).unwrap();
    let (val, test) = split_validation(&suite.eval, 0.1, 3);
    assert_eq!(val.len() + test.len(), suite.eval.len());
    let val_groups: std::collections::BTreeSet<_> = val.iter().map(|i| i.group_id.clone()).collect();
    assert!(test.iter().all(|i| !val_groups.contains(&i.group_id)));
    assert_eq!(val.len() % 4, 0);
    let frac = val_groups.len() as f64 / 100.0;
    assert!((0.02..=0.2).contains(&frac), "{frac}");
    let mut rev = suite.eval.clone();
    rev.reverse();
    let (val2, _) = split_validation(&rev, 0.1, 3);
    assert_eq!(val2.len(), val.len());
}

#[test]
fn leakage_ratios_are_consistent() {
    let m = model(0.4);
    let suite = synthesize_minimal_pairs(0, 25, 0.5, &m).unwrap();
    let d = Decoder::serial();
    for config in [DecodingConfig::baseline(), DecodingConfig::focus()] {
        let r = run_leakage_experiment(&suite.leakage, &m, &config, &d, &LeakageOptions::default()).unwrap().report;
        assert_eq!(r.c_score, r.r_multi - r.r_single);
        for v in [r.r_single, r.r_multi, r.acc_single, r.acc_multi] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!((-1.0..=1.0).contains(&r.mean_pair_similarity));
        assert_eq!((r.n_single, r.n_multi, r.n_failed), (50, 50, 0));
    }
    assert!(run_leakage_experiment(&[], &m, &DecodingConfig::baseline(), &d, &LeakageOptions::default()).is_err());
}

#[test]
fn leakage_is_order_invariant() {
    let m = model(0.4);
    let suite = synthesize_minimal_pairs(0, 15, 0.5, &m).unwrap();
    let d = Decoder::serial();
    let opts = LeakageOptions::default();
    let a = run_leakage_experiment(&suite.leakage, &m, &DecodingConfig::focus(), &d, &opts).unwrap();
    let mut rev = suite.leakage.clone();
    rev.reverse();
    let b = run_leakage_experiment(&rev, &m, &DecodingConfig::focus(), &d, &opts).unwrap();
    assert_eq!(a.report, b.report);
}

#[test]
fn leakage_is_blind_to_option_binding() {
    use CaptionRole::*;
    let m = model(0.4);
    let suite = synthesize_minimal_pairs(0, 20, 0.5, &m).unwrap();
    let d = Decoder::serial();
    // The first-option prior is a property of positions, so binding
    // blindness is checked without it.
    let unbiased = SyntheticModel::new(SyntheticModelConfig {
        primacy_bias: 0.0,
        ..m.config().clone()
    })
    .unwrap();
    let run = |instances: &[focus::leakage::LeakageInstance]| {
        run_leakage_experiment(instances, &unbiased, &DecodingConfig::baseline(), &d, &LeakageOptions::default())
            .unwrap()
            .report
    };
    let base = run(&suite.leakage);
    for roles in [[Merged, Target, Distractor], [Distractor, Merged, Target], [Target, Distractor, Merged]] {
        let mut relabeled = suite.leakage.clone();
        for inst in &mut relabeled {
            inst.option_binding = OptionBinding::new(roles).unwrap();
        }
        let r = run(&relabeled);
        assert_eq!((r.r_single, r.r_multi), (base.r_single, base.r_multi), "{roles:?}");
    }
}

#[test]
fn no_mixing_means_no_leakage_for_baseline() {
    let m = model(0.0);
    let suite = synthesize_minimal_pairs(0, 30, 0.5, &model(0.4)).unwrap();
    let r = run_leakage_experiment(&suite.leakage, &m, &DecodingConfig::baseline(), &Decoder::serial(), &LeakageOptions::default())
        .unwrap()
        .report;
    assert_eq!(r.c_score, 0.0);
    assert_eq!(r.acc_single, r.acc_multi);
}

#[test]
fn mixing_hurts_baseline_in_the_multi_image_condition() {
    let m = model(0.4);
    let suite = synthesize_minimal_pairs(8, 40, 0.5, &m).unwrap();
    let r = run_leakage_experiment(&suite.leakage, &m, &DecodingConfig::baseline(), &Decoder::serial(), &LeakageOptions::default())
        .unwrap()
        .report;
    assert!(r.r_multi > r.r_single);
    assert!(r.acc_multi < r.acc_single);
}

#[test]
fn custom_prompt_template_is_used_and_recorded() {
    let m = model(0.4);
    let suite = synthesize_minimal_pairs(0, 2, 0.5, &m).unwrap();
    let opts = LeakageOptions {
        prompt_template: "Pick for image {target}. Options: A: {A}; B: {B}; C: {C};".into(),
        option_tokens: None,
    };
    let run = run_leakage_experiment(&suite.leakage, &m, &DecodingConfig::baseline(), &Decoder::serial(), &opts).unwrap();
    assert_eq!(run.report.prompt_template, opts.prompt_template);
    let broken = LeakageOptions {
        prompt_template: "no directive here".into(),
        option_tokens: None,
    };
    let run = run_leakage_experiment(&suite.leakage, &m, &DecodingConfig::baseline(), &Decoder::serial(), &broken).unwrap();
    assert_eq!(run.report.n_failed, suite.leakage.len());
    assert!(run.records.iter().all(|r| r.single.error.is_some()));
}
