//! End-to-end properties of the selection pipeline and the run harness on a
//! small lab.

use vislab::checkpoint::Checkpoint;
use vislab::config::LabConfig;
use vislab::geometry::iou;
use vislab::grounding::{second_stage, Selector};
use vislab::harness::{mode_source, run_aux_supervision, Lab, ObjectSource};
use vislab::{detector::baseline_select, LabError};

fn small_cfg() -> LabConfig {
    LabConfig::default()
        .with_overrides(
            &[
                "data.train=400",
                "data.val=120",
                "data.test=40",
                "updn.epochs=2",
                "selector.epochs=3",
                "selector.d_model=32",
                "selector.ff_dim=64",
                "experiment.seeds=2",
            ]
            .map(String::from),
        )
        .unwrap()
}

#[test]
fn trained_selector_beats_untrained_and_respects_nms() {
    let lab = Lab::new(small_cfg()).unwrap();
    let ev = lab.eval_split();
    let untrained = Selector::new(
        &lab.cfg.selector,
        lab.data.vocab.n_words(),
        lab.cfg.detector.feature_dim + 4,
        lab.cfg.experiment.selector_seed,
    );
    let before = lab.select_split(&untrained, ev).unwrap();
    let (sel, log) = lab.selector().unwrap();
    assert_eq!(log.len(), 3);
    assert!(log.last().unwrap().loss < log[0].loss);
    let after = lab.select_split(sel, ev).unwrap();
    let split = lab.split(ev);
    let scores_auc = |res: &[vislab::grounding::SelectionResult]| {
        let (mut s, mut y) = (Vec::new(), Vec::new());
        for (i, r) in res.iter().enumerate() {
            let scene = &split.scenes[i];
            let gt: Vec<_> = split.questions[i].necessary.iter().map(|&id| scene.object(id).unwrap().bbox).collect();
            let boxes: Vec<_> = r.candidates.iter().map(|&c| lab.proposals(ev)[i][c].bbox).collect();
            s.extend_from_slice(&r.scores);
            y.extend(vislab::geometry::match_gt(&boxes, &gt, 0.5));
        }
        vislab::harness::auc(&s, &y).unwrap()
    };
    let (a0, a1) = (scores_auc(&before), scores_auc(&after));
    assert!(a1 > a0 + 0.1, "untrained auc {a0}, trained {a1}");

    let nms2 = lab.cfg.selector.nms2;
    for (i, r) in after.iter().enumerate() {
        let props = &lab.proposals(ev)[i];
        for (x, &a) in r.selected.iter().enumerate() {
            for &b in &r.selected[x + 1..] {
                assert!(iou(&props[a].bbox, &props[b].bbox) <= nms2);
            }
        }
        // raising theta_s only removes passing candidates
        let passing = |t: f64| r.scores.iter().filter(|&&s| s >= t).count();
        assert!(passing(0.3) >= passing(0.5) && passing(0.5) >= passing(0.7));
        let (strict, fb) = second_stage(props, &r.candidates, &r.scores, 0.9, nms2).unwrap();
        if !fb {
            for s in &strict {
                let pos = r.candidates.iter().position(|c| c == s).unwrap();
                assert!(r.scores[pos] >= 0.9);
            }
        }
        let base = baseline_select(props, lab.cfg.baseline.theta_c, 4).unwrap();
        let union = lab.objects(ev, i, ObjectSource::Union { k: 4 }).unwrap();
        assert!(union.len() >= base.len());
        for (u, &b) in union.objects.iter().zip(&base) {
            assert_eq!(u.bbox, props[b].bbox);
        }
    }
    let lg = lab.recall(ev, ObjectSource::Grounded).unwrap();
    assert!(lg.mean_objects >= 1.0);
}

#[test]
fn aux_pairs_share_order_and_head_off_equals_plain_run() {
    let lab = Lab::new(small_cfg()).unwrap();
    let seed = lab.cfg.experiment.seed;
    let source = lab.default_source();
    let (model, report) = lab.train_updn(source, false, seed).unwrap();
    let (plain, _, _) = lab.evaluate(&model, lab.eval_split(), source, seed).unwrap();
    let table = run_aux_supervision(&lab, 2).unwrap();
    assert_eq!(table.pairs.len(), 2);
    assert!(table.pairs.iter().all(|p| p.same_order));
    assert!(table.pairs.iter().all(|p| p.auc.is_some()));
    assert_eq!(table.without.runs[0], plain);
    assert_eq!(lab.run(source, false, seed).unwrap().data_order_hash, report.data_order_hash);
    // baseline mode is the plain default-budget run
    assert_eq!(mode_source(&lab, "baseline").unwrap(), source);
}

#[test]
fn reproducible_metrics_for_equal_config_and_seed() {
    let a = Lab::new(small_cfg()).unwrap().run(ObjectSource::Baseline { k: 3 }, true, 4).unwrap();
    let b = Lab::new(small_cfg()).unwrap().run(ObjectSource::Baseline { k: 3 }, true, 4).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_from_other_width_names_the_tensor() {
    let cfg = small_cfg();
    let lab = Lab::new(cfg.clone()).unwrap();
    let sel = Selector::new(&cfg.selector, lab.data.vocab.n_words(), 36, 0);
    let text = Checkpoint::from_params("selector", &cfg.hash(), &sel.params).to_text();
    let wide = cfg.with_overrides(&["selector.d_model=48".to_string()]).unwrap();
    let mut other = Selector::new(&wide.selector, lab.data.vocab.n_words(), 36, 0);
    let before = other.params.tensors().to_vec();
    let err = Checkpoint::parse(&text).unwrap().restore("selector", &mut other.params).unwrap_err();
    match err {
        LabError::Checkpoint { tensor, .. } => assert!(!tensor.is_empty() && tensor != "*", "{tensor}"),
        e => panic!("unexpected {e}"),
    }
    // nothing was partially assigned
    assert_eq!(other.params.tensors(), &before[..]);

    let updn = lab.new_updn(true, 0);
    let text = Checkpoint::from_params("updn+necessity", &cfg.hash(), &updn.params).to_text();
    let mut plain = lab.new_updn(false, 0);
    assert!(matches!(
        Checkpoint::parse(&text).unwrap().restore("updn", &mut plain.params),
        Err(LabError::Checkpoint { .. })
    ));
}
