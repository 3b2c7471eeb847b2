use super::*;
use crate::compute::{grad_check, GradCheckReport, Grads, ParamStore, RngStream, Tape, Value};
use crate::data::{CodeEvent, Cohort, StaticVector, StayRecord, Stream, VitalBinner, Vocabulary};
use crate::embeddings::StepPolicy;

const DP: [&str; 4] = ["d1", "d2", "d3", "d4"];
const MV: [&str; 4] = ["m1", "m2", "vital:heart_rate:0", "vital:temperature:2"];

fn toy_cohort() -> Cohort {
    let dp_vocab = Vocabulary::build([DP.to_vec()], 1);
    let mv_vocab = Vocabulary::build([MV.to_vec()], 1);
    let mut statics = StaticVector::default();
    statics.set("age_years", 0.7).unwrap();
    statics.set("icu_los_days", 0.3).unwrap();
    statics.set("gender_male", 1.0).unwrap();
    let ev = |v: &Vocabulary, c: &str, t: f64| CodeEvent {
        code: v.id(c),
        elapsed: t,
    };
    let stay = StayRecord {
        stay_id: 1,
        patient_id: 1,
        statics,
        dp_events: vec![
            ev(&dp_vocab, "d1", 1.2),
            ev(&dp_vocab, "d2", 0.45),
            ev(&dp_vocab, "d3", 0.0),
        ],
        mv_events: vec![
            ev(&mv_vocab, "m1", 0.9),
            ev(&mv_vocab, "vital:heart_rate:0", 0.3),
            ev(&mv_vocab, "vital:temperature:2", 0.15),
        ],
        label: 1,
    };
    let mut empty = stay.clone();
    empty.stay_id = 2;
    empty.patient_id = 2;
    empty.dp_events.clear();
    empty.mv_events.clear();
    empty.label = 0;
    Cohort::new(vec![stay, empty], dp_vocab, mv_vocab, VitalBinner::oasis())
}

fn small_options() -> ModelOptions {
    ModelOptions {
        dropout: 0.5,
        h_max_dp: 0.25,
        h_max_mv: 0.1,
        ..ModelOptions::default()
    }
}

fn mce_for(schema: &InputSchema, seed: u64) -> MceTables {
    let mut rng = RngStream::new(seed);
    MceTables {
        dp: crate::embeddings::init_table(schema.dp_vocab_size, schema.embed_dim(Stream::Dp), &mut rng),
        mv: crate::embeddings::init_table(schema.mv_vocab_size, schema.embed_dim(Stream::Mv), &mut rng),
    }
}

fn model_for(spec: ArchitectureSpec, cohort: &Cohort, seed: u64) -> Model {
    let schema = InputSchema::from_cohort(cohort);
    let mce = spec.needs_mce().then(|| mce_for(&schema, 99));
    build_model(spec, &schema, &small_options(), seed, mce.as_ref()).unwrap()
}

fn randomize(ps: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = RngStream::new(seed);
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        for v in ps.get_mut(id).data.iter_mut() {
            *v = scale * rng.uniform_range(-1.0, 1.0);
        }
    }
}

#[test]
fn exp_decay_formula() {
    let h = [0.4, -1.3];
    assert_eq!(apply_exp_decay(&h, 0.0, &[0.2, 5.0]), h.to_vec());
    let raw = (std::f64::consts::E - 1.0).ln();
    let out = apply_exp_decay(&[1.0], std::f64::consts::LN_2, &[raw]);
    assert!((out[0] - 0.5).abs() < 1e-12);
    let mut prev = 1.0;
    for dt in [1.0, 10.0, 100.0, 1000.0] {
        let v = apply_exp_decay(&[1.0], dt, &[0.0])[0];
        assert!(v < prev);
        prev = v;
    }
    assert!(prev < 1e-100);
}

fn gru_store(mode: TimeMode, d: usize) -> (ParamStore, BiGru) {
    let mut ps = ParamStore::new();
    let g = BiGru::init(&mut ps, 11, "g", d, mode, StepPolicy::new(0.5).unwrap()).unwrap();
    (ps, g)
}

fn run_plain(ps: &ParamStore, g: &BiGru, xs: &[Vec<f64>], el: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut t = Tape::new(ps);
    let vars: Vec<_> = xs.iter().map(|x| t.constant(x)).collect();
    let (outs, fin) = g.run(&mut t, &vars, el).unwrap();
    (
        outs.iter().map(|o| t.value(*o).to_vec()).collect(),
        t.value(fin).to_vec(),
    )
}

#[test]
fn bigru_empty_and_single_sequences() {
    let (ps, g) = gru_store(TimeMode::None, 3);
    let (outs, fin) = run_plain(&ps, &g, &[], &[]);
    assert!(outs.is_empty());
    assert_eq!(fin, vec![0.0; 6]);

    let x = vec![0.3, -0.5, 0.9];
    let (outs, fin) = run_plain(&ps, &g, std::slice::from_ref(&x), &[2.0]);
    assert_eq!(outs.len(), 1);
    assert_eq!(outs[0].len(), 6);
    assert_eq!(outs[0], fin);

    let mut t = Tape::new(&ps);
    let v = t.constant(&x);
    assert!(g.run(&mut t, &[v], &[1.0, 2.0]).is_err());
}

#[test]
fn exp_decay_with_vanishing_rate_matches_plain_gru() {
    let (ps_none, g_none) = gru_store(TimeMode::None, 3);
    let (mut ps_exp, g_exp) = gru_store(TimeMode::ExpDecay, 3);
    if let TimeModeParams::ExpDecay(raw) = g_exp.time {
        for id in raw {
            ps_exp.get_mut(id).data.fill(-1e3);
        }
    }
    let mut rng = RngStream::new(4);
    let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
    let el = [40.0, 20.0, 20.0, 3.0, 0.0];
    let (a, fa) = run_plain(&ps_none, &g_none, &xs, &el);
    let (b, fb) = run_plain(&ps_exp, &g_exp, &xs, &el);
    for (x, y) in a.iter().flatten().chain(&fa).zip(b.iter().flatten().chain(&fb)) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn concat_delta_with_zero_gaps_equals_zero_padded_inputs() {
    let (ps_c, g_c) = gru_store(TimeMode::ConcatDelta, 3);
    let mut ps_n = ParamStore::new();
    let cells = [
        super::layers::init_gru(&mut ps_n, 11, "g.fwd", 4, 3).unwrap(),
        super::layers::init_gru(&mut ps_n, 11, "g.bwd", 4, 3).unwrap(),
    ];
    let g_n = BiGru {
        cells,
        time: TimeModeParams::None,
        hidden: 3,
    };
    let xs = vec![vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 0.0], vec![0.7, 0.7, -0.2]];
    let padded: Vec<Vec<f64>> = xs.iter().map(|x| crate::embeddings::concat_time(x, 0.0)).collect();
    let el = [5.0, 5.0, 5.0];
    let (a, fa) = run_plain(&ps_c, &g_c, &xs, &el);
    let (b, fb) = run_plain(&ps_n, &g_n, &padded, &el);
    for (x, y) in a.iter().flatten().chain(&fa).zip(b.iter().flatten().chain(&fb)) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn attention_weights_and_context() {
    let mut ps = ParamStore::new();
    let head = AttentionHead::init(&mut ps, 3, "a", 4).unwrap();
    randomize(&mut ps, 8, 1.0);
    let v = vec![0.2, -0.4, 1.0, 0.5];
    let (w, ctx) = attend(&ps, &head, &[v.clone(), v.clone(), v.clone()]);
    for a in &w {
        assert!((a - 1.0 / 3.0).abs() < 1e-15);
    }
    for (c, x) in ctx.iter().zip(&v) {
        assert!((c - x).abs() < 1e-15);
    }
    let (w, ctx) = attend(&ps, &head, std::slice::from_ref(&v));
    assert_eq!(w, vec![1.0]);
    assert_eq!(ctx, v);
    let (w, ctx) = attend(&ps, &head, &[]);
    assert!(w.is_empty());
    assert_eq!(ctx, vec![0.0; 4]);

    let mut rng = RngStream::new(12);
    let vals: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
    let (w, ctx) = attend(&ps, &head, &vals);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for k in 0..4 {
        let expect: f64 = w.iter().zip(&vals).map(|(a, v)| a * v[k]).sum();
        assert_eq!(ctx[k], expect);
    }
}

#[test]
fn attention_gradient_check() {
    let mut ps = ParamStore::new();
    let head = AttentionHead::init(&mut ps, 3, "a", 4).unwrap();
    let vals = ps
        .insert("v", Value::new(vec![0.0; 12], vec![3, 4]).unwrap(), true)
        .unwrap();
    randomize(&mut ps, 21, 1.0);
    let r = grad_check(
        &ps,
        |p, g| {
            let mut t = Tape::new(p);
            let vs: Vec<_> = (0..3).map(|i| t.param_row(vals, i)).collect();
            let (_, ctx) = head.attend(&mut t, &vs);
            let s = t.tanh(ctx);
            let l = t.sum(s);
            t.backward(l, g);
            Ok(t.scalar_value(l))
        },
        1e-6,
    )
    .unwrap();
    assert!(r.passed(), "{:?}", r.worst());
}

fn check_spec(spec: ArchitectureSpec, with_dropout: bool) -> GradCheckReport {
    let cohort = toy_cohort();
    let mut m = model_for(spec, &cohort, 5);
    randomize(&mut m.params, 31 + spec as u64, 0.6);
    let stay = &cohort.stays[0];
    let net = m.network.clone();
    grad_check(
        &m.params,
        |p, g: &mut Grads| {
            let mut t = Tape::new(p);
            let mut rng = RngStream::new(77);
            let l = net.loss(&mut t, stay, 2.5, with_dropout.then_some(&mut rng))?;
            t.backward(l, g);
            Ok(t.scalar_value(l))
        },
        1e-4,
    )
    .unwrap()
}

#[test]
fn every_architecture_passes_gradient_check() {
    for spec in ArchitectureSpec::ALL {
        let r = check_spec(spec, false);
        assert!(r.passed(), "{spec}: {:e} at {:?}", r.max_rel_error(), r.worst());
    }
}

#[test]
fn fresh_models_predict_one_half() {
    let cohort = toy_cohort();
    for spec in ArchitectureSpec::ALL {
        let m = model_for(spec, &cohort, 1);
        for p in m.predict_all(&cohort.stays).unwrap() {
            assert_eq!(p, 0.5, "{spec}");
        }
    }
}

#[test]
fn static_perturbation_scales_odds() {
    let cohort = toy_cohort();
    let mut m = model_for(ArchitectureSpec::OdeRnnAttn, &cohort, 2);
    randomize(&mut m.params, 4, 0.5);
    let w = m.params.get(m.network.final_w).data[crate::data::static_index("age_years").unwrap()];
    let stay = cohort.stays[0].clone();
    let mut bumped = stay.clone();
    let age = bumped.statics.get("age_years").unwrap();
    bumped.statics.set("age_years", age + 1.0).unwrap();
    let p = m.predict_all([&stay, &bumped]).unwrap();
    let odds = |p: f64| p / (1.0 - p);
    assert!((odds(p[1]) / odds(p[0]) - w.exp()).abs() < 1e-10);
    assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
}

#[test]
fn canonical_sort_removes_tie_order_dependence() {
    let cohort = toy_cohort();
    let mut m = model_for(ArchitectureSpec::RnnExpDecayAttn, &cohort, 3);
    randomize(&mut m.params, 6, 0.5);
    let mut a = cohort.stays[0].clone();
    a.dp_events = vec![
        CodeEvent { code: 2, elapsed: 4.0 },
        CodeEvent { code: 1, elapsed: 4.0 },
        CodeEvent { code: 3, elapsed: 0.0 },
    ];
    let mut b = a.clone();
    b.dp_events.swap(0, 1);
    crate::data::sort_events(&mut a.dp_events);
    crate::data::sort_events(&mut b.dp_events);
    let p = m.predict_all([&a, &b]).unwrap();
    assert_eq!(p[0], p[1]);
}

#[test]
fn score_head_rescaling_is_invisible() {
    let cohort = toy_cohort();
    let mut m = model_for(ArchitectureSpec::AttnConcatTime, &cohort, 4);
    randomize(&mut m.params, 9, 0.5);
    let before = m.predict_all(&cohort.stays).unwrap();
    let c = 3.7;
    let head = m.network.stream(Stream::Dp).unwrap().score;
    for id in [head.w, head.b] {
        for v in m.params.get_mut(id).data.iter_mut() {
            *v *= c;
        }
    }
    m.params.get_mut(m.network.final_w).data[crate::data::N_STATIC] /= c;
    let after = m.predict_all(&cohort.stays).unwrap();
    for (x, y) in before.iter().zip(&after) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn construction_properties() {
    let cohort = toy_cohort();
    let schema = InputSchema::from_cohort(&cohort);
    let base = model_for(ArchitectureSpec::LogisticBaseline, &cohort, 0);
    assert_eq!(base.n_parameters(), 23 + 32 + 1);

    let plain = model_for(ArchitectureSpec::OdeRnn, &cohort, 7);
    let attn = model_for(ArchitectureSpec::OdeRnnAttn, &cohort, 7);
    let names = |m: &Model| -> Vec<String> { m.params.iter().map(|(_, n, _)| n.to_string()).collect() };
    let extra: Vec<String> = names(&attn)
        .into_iter()
        .filter(|n| !names(&plain).contains(n))
        .collect();
    assert!(!extra.is_empty());
    assert!(extra.iter().all(|n| n.starts_with("attn.")));
    for (_, name, v) in plain.params.iter() {
        assert_eq!(attn.params.by_name(name).unwrap(), v, "{name}");
    }
    for spec in ArchitectureSpec::ALL {
        let a = model_for(spec, &cohort, 13);
        let b = model_for(spec, &cohort, 13);
        assert_eq!(a.params, b.params);
    }
    assert!(matches!(
        build_model(ArchitectureSpec::MceAttn, &schema, &ModelOptions::default(), 0, None),
        Err(crate::Error::Config(_))
    ));
}

#[test]
fn logistic_baseline_sees_latest_vital_per_kind() {
    let cohort = toy_cohort();
    let mut m = model_for(ArchitectureSpec::LogisticBaseline, &cohort, 0);
    let w = m.network.final_w;
    let hr = cohort.vital_index(cohort.mv_vocab.id("vital:heart_rate:0")).unwrap();
    m.params.get_mut(w).data[crate::data::N_STATIC + hr] = 2.0;
    let p = m.predict_all(&cohort.stays).unwrap();
    assert!((p[0] - crate::compute::sigmoid(2.0)).abs() < 1e-15);
    assert_eq!(p[1], 0.5);
}

#[test]
fn unknown_code_is_rejected() {
    let cohort = toy_cohort();
    let m = model_for(ArchitectureSpec::OdeAttn, &cohort, 0);
    let mut stay = cohort.stays[0].clone();
    stay.dp_events[0].code = 999;
    assert!(matches!(m.predict_all([&stay]), Err(crate::Error::Data(_))));
}

#[test]
fn checkpoint_round_trip() {
    let cohort = toy_cohort();
    for spec in [
        ArchitectureSpec::RnnOdeDecayAttn,
        ArchitectureSpec::MceRnn,
        ArchitectureSpec::LogisticBaseline,
    ] {
        let mut m = model_for(spec, &cohort, 8);
        randomize(&mut m.params, 10, 0.4);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = Model::load(dir.path()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.network, m.network);
        assert_eq!(
            m.predict_all(&cohort.stays).unwrap(),
            back.predict_all(&cohort.stays).unwrap()
        );
    }
}

#[test]
fn architecture_names_parse() {
    for spec in ArchitectureSpec::ALL {
        assert_eq!(spec.name().parse::<ArchitectureSpec>().unwrap(), spec);
    }
    assert_eq!(
        "ode_rnn_attn".parse::<ArchitectureSpec>().unwrap(),
        ArchitectureSpec::OdeRnnAttn
    );
    assert!("Transformer".parse::<ArchitectureSpec>().is_err());
}
