use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{SlotKey, RESERVED_TOKENS, UNK};
use crate::numkit::gradcheck::{max_relative_error, param_differences};
use crate::numkit::Tape;

fn tiny_vocab(extra: usize) -> Vocabulary {
    let mut toks: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    toks.extend((0..extra).map(|i| format!("w{i:02}")));
    Vocabulary::from_tokens(toks).unwrap()
}

fn tiny_ontology() -> Ontology {
    let mut slots = BTreeMap::new();
    slots.insert("hotel".to_string(), vec!["area".to_string(), "price".to_string()]);
    slots.insert("taxi".to_string(), vec!["area".to_string(), "leave".to_string()]);
    Ontology::new(["hotel".to_string(), "taxi".to_string()], slots).unwrap()
}

fn tiny_config(d: usize) -> ModelConfig {
    ModelConfig { d_emb: d, d_hdd: d, dropout: 0.0, word_dropout: 0.0, ..ModelConfig::default() }
}

fn tiny_model(seed: u64) -> TradeModel {
    TradeModel::new(tiny_config(8), tiny_vocab(14), tiny_ontology(), seed).unwrap()
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn tiny_example(model: &TradeModel) -> Example {
    let mut belief = BeliefState::new();
    belief.insert(SlotKey::new("hotel", "area"), SlotValue::Value(words("w03 w04")));
    belief.insert(SlotKey::new("taxi", "leave"), SlotValue::Value(words("zed")));
    belief.insert(SlotKey::new("hotel", "price"), SlotValue::DontCare);
    let history = words("w01 w03 w04 zed w07 w03 qux w12");
    Example::from_parts("d", 1, history, belief, &model.vocab, &model.ontology).unwrap()
}

fn randomize(model: &mut TradeModel, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for x in model.params.get_mut(id).data_mut() {
            *x = rng.gen_range(-scale..scale);
        }
    }
}

fn naive_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn naive_matvec(t: &Tensor, x: &[f64]) -> Vec<f64> {
    let (r, c) = t.dims2();
    (0..r).map(|i| (0..c).map(|k| t.data()[i * c + k] * x[k]).sum()).collect()
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    let bad = [
        ModelConfig { d_emb: 0, ..ModelConfig::default() },
        ModelConfig { d_hdd: 7, ..ModelConfig::default() },
        ModelConfig { alpha: -1.0, ..ModelConfig::default() },
        ModelConfig { dropout: 1.0, ..ModelConfig::default() },
        ModelConfig { history: HistoryWindowAlias::Turns(0), ..ModelConfig::default() },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(ModelError::Config(_))), "{c:?}");
    }
    let json = serde_json::to_string(&ModelConfig::desk()).unwrap();
    let back: ModelConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, ModelConfig::desk());
    assert!(serde_json::from_str::<ModelConfig>(r#"{"d_emb": 4, "bogus": 1}"#).is_err());
}

use crate::corpus::HistoryWindow as HistoryWindowAlias;

#[test]
fn init_is_seeded_and_shapes_follow_layout() {
    let a = tiny_model(3);
    let b = tiny_model(3);
    let c = tiny_model(4);
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
    assert!(a.params.by_name("out_proj").is_none());
    let proj = TradeModel::new(
        ModelConfig { d_emb: 6, d_hdd: 8, ..tiny_config(8) },
        tiny_vocab(3),
        tiny_ontology(),
        1,
    )
    .unwrap();
    assert_eq!(proj.params.by_name("out_proj").unwrap().shape(), &[6, 8]);
    assert_eq!(proj.params.by_name("copy_gate").unwrap().shape(), &[1, 8 + 6 + 8]);
    assert_eq!(proj.params.by_name("domain_emb").unwrap().shape(), &[2, 6]);
    assert_eq!(proj.params.by_name("slot_emb").unwrap().shape(), &[3, 6]);
}

#[test]
fn from_params_rejects_wrong_shapes() {
    let m = tiny_model(0);
    let mut p = ParamStore::new();
    for (name, t) in m.params.iter() {
        let t = if name == "slot_gate" { Tensor::zeros(&[2, 8]) } else { t.clone() };
        p.insert(name, t).unwrap();
    }
    let err = TradeModel::from_params(m.config.clone(), m.vocab.clone(), m.ontology.clone(), p);
    assert!(matches!(err, Err(ModelError::Shape(_))));
}

#[test]
fn example_targets_and_copy_ids() {
    let m = tiny_model(0);
    let ex = tiny_example(&m);
    let v = m.vocab.len();
    assert_eq!(ex.oov, vec!["zed", "qux"]);
    assert_eq!(ex.copy_ids[3], v);
    assert_eq!(ex.copy_ids[6], v + 1);
    assert_eq!(ex.input_ids[3], UNK);
    let area = m.ontology.pair_index(&SlotKey::new("hotel", "area")).unwrap();
    let leave = m.ontology.pair_index(&SlotKey::new("taxi", "leave")).unwrap();
    let price = m.ontology.pair_index(&SlotKey::new("hotel", "price")).unwrap();
    let taxi_area = m.ontology.pair_index(&SlotKey::new("taxi", "area")).unwrap();
    assert_eq!(ex.gates[area], GateLabel::Ptr);
    assert_eq!(ex.targets[area], vec![m.vocab.id("w03"), m.vocab.id("w04"), EOS]);
    assert_eq!(ex.targets[leave], vec![v, EOS]);
    assert_eq!(ex.gates[price], GateLabel::DontCare);
    assert_eq!(ex.targets[price], vec![crate::corpus::DONTCARE_ID, EOS]);
    assert_eq!(ex.gates[taxi_area], GateLabel::None);
    assert_eq!(ex.targets[taxi_area], vec![crate::corpus::NONE_ID, EOS]);
    assert!(Example::from_parts("x", 1, vec![], BeliefState::new(), &m.vocab, &m.ontology).is_err());
}

#[test]
fn encode_shapes_and_errors() {
    let m = tiny_model(1);
    let h = m.encode(&[7]).unwrap();
    assert_eq!(h.shape(), &[1, 8]);
    assert!(matches!(m.encode(&[]), Err(ModelError::EmptyHistory)));
    assert!(matches!(m.encode(&[m.vocab.len()]), Err(ModelError::Index(_))));
}

#[test]
fn encode_zero_weights_gives_zero_states() {
    let mut m = tiny_model(1);
    let ids: Vec<_> = m.params.ids().collect();
    for id in ids {
        if m.params.name(id).starts_with("enc_") {
            m.params.get_mut(id).fill(0.0);
        }
    }
    let h = m.encode(&[6, 7, 8, 9]).unwrap();
    assert!(h.data().iter().all(|&x| x == 0.0));
}

#[test]
fn encode_reversal_swaps_directions() {
    let mut m = tiny_model(5);
    randomize(&mut m, 11, 0.8);
    for part in ["w_input", "w_hidden_gates", "w_hidden_cand", "bias"] {
        let t = m.params.by_name(&format!("enc_fwd.{part}")).unwrap().clone();
        let id = m.params.id(&format!("enc_bwd.{part}")).unwrap();
        *m.params.get_mut(id) = t;
    }
    let ids = [6, 9, 7, 12, 8];
    let rev: Vec<usize> = ids.iter().rev().cloned().collect();
    let h = m.encode(&ids).unwrap();
    let hr = m.encode(&rev).unwrap();
    let n = ids.len();
    for i in 0..n {
        let a = hr.row(i);
        let b = h.row(n - 1 - i);
        let swapped: Vec<f64> = b[4..].iter().chain(&b[..4]).cloned().collect();
        for (x, y) in a.iter().zip(&swapped) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn vocab_dist_cases() {
    let mut m = tiny_model(2);
    randomize(&mut m, 3, 0.5);
    let p = m.vocab_dist(&[0.0; 8]).unwrap();
    for x in &p {
        assert!((x - 1.0 / 20.0).abs() < 1e-15);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = rand_vec(&mut rng, 8);
    let p = m.vocab_dist(&h).unwrap();
    let oracle = naive_softmax(&naive_matvec(m.params.by_name("embedding").unwrap(), &h));
    for (a, b) in p.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(matches!(m.vocab_dist(&[0.0; 3]), Err(ModelError::Shape(_))));

    // Two-word table with opposite rows: P = sigmoid(2 e1·h).
    let mut g = Graph::eval(&m);
    let e1 = rand_vec(&mut rng, 8);
    let table: Vec<f64> = e1.iter().cloned().chain(e1.iter().map(|x| -x)).collect();
    g.p.embedding = g.tape.leaf(Tensor::matrix(2, 8, table).unwrap());
    let hv = g.tape.leaf(Tensor::vector(h.clone()));
    let out = g.vocab_dist(hv);
    let logit: f64 = e1.iter().zip(&h).map(|(a, b)| a * b).sum();
    let p0 = 1.0 / (1.0 + (-2.0 * logit).exp());
    assert!((g.tape.data(out)[0] - p0).abs() < 1e-12);
    assert!((g.tape.data(out)[1] - (1.0 - p0)).abs() < 1e-12);
}

#[test]
fn vocab_dist_through_projection() {
    let mut m = TradeModel::new(
        ModelConfig { d_emb: 6, d_hdd: 8, ..tiny_config(8) },
        tiny_vocab(5),
        tiny_ontology(),
        2,
    )
    .unwrap();
    randomize(&mut m, 4, 0.5);
    let h: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
    let projected = naive_matvec(m.params.by_name("out_proj").unwrap(), &h);
    let oracle = naive_softmax(&naive_matvec(m.params.by_name("embedding").unwrap(), &projected));
    let p = m.vocab_dist(&h).unwrap();
    for (a, b) in p.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn history_attention_cases() {
    let m = tiny_model(2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let one = Tensor::matrix(1, 8, rand_vec(&mut rng, 8)).unwrap();
    let (p, c) = m.history_attention(&rand_vec(&mut rng, 8), &one).unwrap();
    assert_eq!(p, vec![1.0]);
    for (a, b) in c.iter().zip(one.row(0)) {
        assert!((a - b).abs() < 1e-15);
    }

    let states = Tensor::matrix(4, 8, rand_vec(&mut rng, 32)).unwrap();
    let (p, c) = m.history_attention(&[0.0; 8], &states).unwrap();
    for x in &p {
        assert!((x - 0.25).abs() < 1e-15);
    }
    for k in 0..8 {
        let mean: f64 = (0..4).map(|i| states.row(i)[k]).sum::<f64>() / 4.0;
        assert!((c[k] - mean).abs() < 1e-12);
    }

    let h = rand_vec(&mut rng, 8);
    let (p, c) = m.history_attention(&h, &states).unwrap();
    let oracle_p = naive_softmax(&naive_matvec(&states, &h));
    for (a, b) in p.iter().zip(&oracle_p) {
        assert!((a - b).abs() < 1e-12);
    }
    for k in 0..8 {
        let want: f64 = (0..4).map(|i| oracle_p[i] * states.row(i)[k]).sum();
        assert!((c[k] - want).abs() < 1e-12);
    }
}

#[test]
fn generation_gate_cases() {
    let mut m = tiny_model(2);
    let id = m.ids.copy_gate;
    m.params.get_mut(id).fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (h, w, c) = (rand_vec(&mut rng, 8), rand_vec(&mut rng, 8), rand_vec(&mut rng, 8));
    assert_eq!(m.generation_gate(&h, &w, &c).unwrap(), 0.5);

    // Scaling a positive-logit W1 pushes p_gen monotonically toward 1.
    let dir: Vec<f64> = h.iter().chain(&w).chain(&c).cloned().collect();
    let mut last = 0.5;
    for s in [0.01, 0.1, 0.5, 2.0] {
        m.params.get_mut(id).data_mut().copy_from_slice(&dir.iter().map(|x| x * s).collect::<Vec<_>>());
        let p = m.generation_gate(&h, &w, &c).unwrap();
        assert!(p > last && p <= 1.0);
        last = p;
    }
    assert!(last > 0.99);
}

fn gate_grad_check(build: fn(&mut Graph<'_>, Var) -> Var, target: &str, d_in: usize) {
    use crate::numkit::gradcheck::central_differences;
    let mut m = tiny_model(8);
    randomize(&mut m, 21, 0.6);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = rand_vec(&mut rng, d_in);
    let id = m.params.id(target).unwrap();
    let value = |m: &TradeModel| {
        let mut g = Graph::eval(m);
        let xv = g.tape.leaf(Tensor::vector(x.clone()));
        let out = build(&mut g, xv);
        g.tape.data(out).iter().sum::<f64>()
    };
    let mut g = Graph::eval(&m);
    let xv = g.tape.leaf(Tensor::vector(x.clone()));
    let out = build(&mut g, xv);
    let s = g.tape.sum(&[out]);
    let grads = g.tape.backward(s);
    let pv = g.tape.param_vars().iter().find(|(p, _)| *p == id).unwrap().1;
    let analytic = grads.wrt(&g.tape, pv);
    let base = m.params.get(id).data().to_vec();
    let numeric = central_differences(&base, 1e-6, |w| {
        let mut probe = m.clone();
        probe.params.get_mut(id).data_mut().copy_from_slice(w);
        value(&probe)
    });
    assert!(max_relative_error(&analytic, &numeric, 1e-8) < 1e-4);
}

use crate::numkit::Var;

#[test]
fn generation_gate_gradient_matches_differences() {
    gate_grad_check(
        |g, x| {
            let h = g.tape.slice(x, 0, 8);
            let w = g.tape.slice(x, 8, 8);
            let c = g.tape.slice(x, 16, 8);
            g.generation_gate(h, w, c)
        },
        "copy_gate",
        24,
    );
}

#[test]
fn slot_gate_gradient_matches_differences() {
    gate_grad_check(
        |g, x| {
            let p = g.slot_gate(x);
            g.tape.neg_log_at(p, 2)
        },
        "slot_gate",
        8,
    );
}

#[test]
fn slot_gate_cases() {
    let mut m = tiny_model(2);
    let id = m.ids.slot_gate;
    m.params.get_mut(id).fill(0.0);
    let c = [0.3, -0.2, 0.5, 0.1, 0.0, 0.9, -0.4, 0.2];
    let g = m.slot_gate(&c).unwrap();
    for x in g {
        assert!((x - 1.0 / 3.0).abs() < 1e-15);
    }
    for (k, x) in c.iter().enumerate() {
        m.params.get_mut(id).data_mut()[k] = 10.0 * x;
    }
    let g = m.slot_gate(&c).unwrap();
    assert_eq!(argmax(&g), GateLabel::Ptr.index());
}

#[test]
fn mix_distribution_cases() {
    let pv = naive_softmax(&[0.1, 0.5, -0.2, 0.0, 1.0, 0.3]);
    let ph = naive_softmax(&[0.2, -1.0, 0.4]);
    let copy = [2, 7, 2];
    let full = mix_distributions(&pv, &ph, 1.0, &copy, 8).unwrap();
    assert_eq!(&full[..6], pv.as_slice());
    assert_eq!(&full[6..], &[0.0, 0.0]);

    let onehot = mix_distributions(&pv, &[1.0], 0.0, &[4], 6).unwrap();
    assert_eq!(onehot, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    let p = 0.37;
    let mixed = mix_distributions(&pv, &ph, p, &copy, 8).unwrap();
    let mut oracle = vec![0.0; 8];
    for w in 0..8 {
        let gen = if w < 6 { p * pv[w] } else { 0.0 };
        let hist: f64 = (0..3).filter(|&i| copy[i] == w).map(|i| ph[i]).sum();
        oracle[w] = gen + (1.0 - p) * hist;
    }
    for (a, b) in mixed.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((mixed.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    assert!(matches!(mix_distributions(&pv, &ph, 1.5, &copy, 8), Err(ModelError::Num(_))));
    assert!(matches!(mix_distributions(&pv, &ph, -0.1, &copy, 8), Err(ModelError::Num(_))));
    assert!(mix_distributions(&pv, &ph, f64::NAN, &copy, 8).is_err());
    assert!(mix_distributions(&pv, &ph, 0.5, &[2, 9, 1], 8).is_err());
}

#[test]
fn tape_mix_agrees_with_plain_mix() {
    let m = tiny_model(0);
    let pv = naive_softmax(&[0.1, 0.5, -0.2, 0.0, 1.0, 0.3]);
    let ph = naive_softmax(&[0.2, -1.0, 0.4]);
    let copy = [2, 7, 2];
    let mut g = Graph::eval(&m);
    let a = g.tape.leaf(Tensor::vector(pv.clone()));
    let b = g.tape.leaf(Tensor::vector(ph.clone()));
    let c = g.tape.leaf(Tensor::scalar(0.61));
    let out = g.mix(a, b, c, &copy, 8);
    let plain = mix_distributions(&pv, &ph, 0.61, &copy, 8).unwrap();
    for (x, y) in g.tape.data(out).iter().zip(&plain) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn greedy_decode_respects_max_len() {
    let mut m = tiny_model(3);
    m.config.max_decode_len = 1;
    let ex = tiny_example(&m);
    for j in 0..m.num_pairs() {
        let p = m.decode_slot(&ex, j).unwrap();
        assert_eq!(p.tokens.len(), 1);
        assert_eq!(p.p_gen.len(), 1);
        assert_eq!(p.attention.len(), 1);
    }
    m.config.max_decode_len = 4;
    for j in 0..m.num_pairs() {
        let p = m.decode_slot(&ex, j).unwrap();
        assert!(ends_with_eos(&p.tokens) || p.tokens.len() == 4);
        assert!((p.gate.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(matches!(m.decode_slot(&ex, 99), Err(ModelError::Index(_))));
}

#[test]
fn teacher_forced_eos_is_one_step() {
    let m = tiny_model(3);
    let ex = tiny_example(&m);
    let (rows, loss) = m.teacher_forced(&ex, 0, &[EOS]).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((loss + rows[0][EOS].ln()).abs() < 1e-12);
    assert_eq!(rows[0].len(), m.vocab.len() + 2);
}

#[test]
fn uniform_gate_loss_is_j_ln3() {
    let mut m = tiny_model(4);
    let id = m.ids.slot_gate;
    m.params.get_mut(id).fill(0.0);
    let ex = tiny_example(&m);
    let l = m.batch_loss(&[&ex], &m.all_pairs()).unwrap();
    assert!((l.gate - 4.0 * 3f64.ln()).abs() < 1e-12);
    assert!((l.total - (l.gate + l.value)).abs() < 1e-12);
}

#[test]
fn one_hot_prediction_has_zero_loss() {
    let mut t = Tape::new();
    let p = t.leaf(Tensor::vector(vec![0.0, 1.0, 0.0]));
    let a = t.neg_log_at(p, 1);
    let b = t.leaf(Tensor::vector(vec![1.0, 0.0, 0.0]));
    let bl = t.neg_log_at(b, 0);
    let s = t.sum(&[a, bl]);
    assert_eq!(t.scalar(s), 0.0);
}

#[test]
fn loss_weights_scale_components() {
    let mut m = tiny_model(4);
    let ex = tiny_example(&m);
    let base = m.batch_loss(&[&ex], &m.all_pairs()).unwrap();
    m.config.alpha = 2.0;
    m.config.beta = 0.5;
    let w = m.batch_loss(&[&ex], &m.all_pairs()).unwrap();
    assert!((w.total - (2.0 * base.gate + 0.5 * base.value)).abs() < 1e-12);
}

#[test]
fn batch_gradient_matches_finite_differences() {
    let mut m = tiny_model(6);
    randomize(&mut m, 17, 0.4);
    let ex = tiny_example(&m);
    let mut belief = BeliefState::new();
    belief.insert(SlotKey::new("taxi", "area"), SlotValue::Value(words("w09")));
    let ex2 = Example::from_parts("e", 2, words("w09 w02 w05"), belief, &m.vocab, &m.ontology).unwrap();
    let batch = [&ex, &ex2];
    let pairs = m.all_pairs();
    let (_, grad) = m.batch_gradient(&batch, &pairs, None).unwrap();
    let numeric = param_differences(&m.params, 1e-5, |p| {
        let mut probe = m.clone();
        probe.params = p.clone();
        probe.batch_loss(&batch, &pairs).unwrap().total
    });
    for (id, num) in m.params.ids().zip(&numeric) {
        let err = max_relative_error(grad.get(id).data(), num, 1e-7);
        assert!(err <= 1e-3, "{}: {err}", m.params.name(id));
    }
}

#[test]
fn training_graph_is_seed_deterministic() {
    let mut m = tiny_model(6);
    m.config.dropout = 0.3;
    m.config.word_dropout = 0.2;
    let ex = tiny_example(&m);
    let pairs = m.all_pairs();
    let (la, ga) = m.batch_gradient(&[&ex, &ex], &pairs, Some(&[1, 2])).unwrap();
    let (lb, gb) = m.batch_gradient(&[&ex, &ex], &pairs, Some(&[1, 2])).unwrap();
    assert_eq!(la, lb);
    assert_eq!(ga.flatten(), gb.flatten());
    let (lc, _) = m.batch_gradient(&[&ex, &ex], &pairs, Some(&[3, 4])).unwrap();
    assert_ne!(la.total, lc.total);
    let eval = m.batch_loss(&[&ex, &ex], &pairs).unwrap();
    let (le, _) = m.batch_gradient(&[&ex, &ex], &pairs, None).unwrap();
    assert_eq!(eval, le);
}

#[test]
fn pair_predictions_are_independent() {
    let mut m = tiny_model(9);
    randomize(&mut m, 2, 0.7);
    let ex = tiny_example(&m);
    let all = m.predict_pairs(&ex, &m.all_pairs()).unwrap();
    for j in 0..m.num_pairs() {
        let alone = m.predict_pairs(&ex, &[j]).unwrap();
        assert_eq!(alone[0], all[j]);
    }
}

#[test]
fn belief_assembly_follows_gates() {
    let m = tiny_model(0);
    let pred = |pair: usize, gate: [f64; 3], w: &str| SlotPrediction {
        pair,
        gate,
        tokens: vec![],
        words: words(w),
        p_gen: vec![],
        attention: vec![],
    };
    let none = [0.1, 0.8, 0.1];
    let all_none: Vec<_> = (0..4).map(|j| pred(j, none, "w01 <eos>")).collect();
    assert!(m.belief_from(&all_none).is_empty());

    let price = m.ontology.pair_index(&SlotKey::new("hotel", "price")).unwrap();
    let area = m.ontology.pair_index(&SlotKey::new("hotel", "area")).unwrap();
    let leave = m.ontology.pair_index(&SlotKey::new("taxi", "leave")).unwrap();
    let b = m.belief_from(&[
        pred(price, [0.7, 0.2, 0.1], "cheap <eos>"),
        pred(area, [0.1, 0.1, 0.8], "north <eos>"),
        pred(leave, [0.9, 0.05, 0.05], "<eos>"),
    ]);
    assert_eq!(b.len(), 2);
    assert_eq!(b.get(&SlotKey::new("hotel", "price")), Some(&SlotValue::Value(words("cheap"))));
    assert_eq!(b.get(&SlotKey::new("hotel", "area")), Some(&SlotValue::DontCare));
}

#[test]
fn predict_belief_on_raw_history() {
    let m = tiny_model(1);
    let b = m.predict_belief(&words("w01 never seen")).unwrap();
    for (k, _) in b.iter() {
        assert!(m.ontology.contains(k));
    }
    assert!(matches!(m.predict_belief(&[]), Err(ModelError::EmptyHistory)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn emitted_distributions_sum_to_one(seed in 0u64..10_000, len in 1usize..12) {
        let mut m = tiny_model(seed);
        randomize(&mut m, seed ^ 0x5eed, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let history: Vec<String> = (0..len)
            .map(|_| if rng.gen_bool(0.2) { format!("oov{}", rng.gen_range(0..3)) } else { format!("w{:02}", rng.gen_range(0..14)) })
            .collect();
        let ex = Example::from_parts("p", 1, history, BeliefState::new(), &m.vocab, &m.ontology).unwrap();
        let mut g = Graph::eval(&m);
        let enc = g.encode(&ex.input_ids);
        let ext = ex.extended_size(m.vocab.len());
        for j in 0..m.num_pairs() {
            let tr = g.decode(&enc, &ex.copy_ids, ext, j, DecodeMode::Greedy);
            prop_assert!((g.tape.data(tr.gate).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (&f, &a) in tr.finals.iter().zip(&tr.attention) {
                prop_assert!((g.tape.data(f).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!((g.tape.data(a).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
