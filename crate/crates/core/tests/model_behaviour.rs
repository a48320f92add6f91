mod common;

use dyhgcn::autodiff::{Tape, Tensor};
use dyhgcn::data::{Event, UserId};
use dyhgcn::model::{hard_select, soft_select, SelectionTable};
use dyhgcn::{Ablation, Cascade, DyHgcn, DynamicGraph, ModelConfig, Selection, TimeIntervals};

use common::{random_cascades, random_edges, rng};

fn cascade(events: &[(usize, f64)]) -> Cascade {
    Cascade::new(events.iter().map(|&(u, t)| Event::new(UserId(u), t)).collect()).unwrap()
}

/// `n` stacked `|U| x d` tables whose entries encode `(interval, user)`.
fn labelled_table(n: usize, users: usize, d: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..n * users).map(|r| vec![r as f64; d]).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn set_param(model: &mut DyHgcn, name: &str, value: impl Fn(usize, usize) -> f64) {
    let id = model.params().id_of(name).unwrap();
    let t = model.params_mut().get_mut(id);
    let cols = t.shape().last().copied().unwrap();
    for (i, x) in t.data_mut().iter_mut().enumerate() {
        *x = value(i / cols, i % cols);
    }
}

#[test]
fn interval_membership_uses_left_closed_boundaries() {
    let intervals = TimeIntervals::equal_width(2).unwrap();
    let got: Vec<usize> = [0.0, 0.3, 0.9].iter().map(|&t| intervals.interval_of(t)).collect();
    assert_eq!(got, [0, 0, 1]);
    let five = TimeIntervals::equal_width(5).unwrap();
    assert_eq!(five.interval_of(0.2), 1);
    assert_eq!(five.interval_of(1.0), 4);
}

#[test]
fn hard_selection_at_the_end_of_time_uses_the_last_interval() {
    let (n, users) = (4, 3);
    let intervals = TimeIntervals::equal_width(n).unwrap();
    let mut tape = Tape::new();
    let table = SelectionTable {
        table: tape.leaf(labelled_table(n, users, 2)).unwrap(),
        stride: users,
        local: vec![2, 0],
    };
    let picked = hard_select(&mut tape, &table, &intervals, &[0.1, 1.0]).unwrap();
    assert_eq!(tape.value(picked).row(0), [2.0, 2.0]);
    assert_eq!(tape.value(picked).row(1), [9.0, 9.0]);
}

#[test]
fn single_interval_selection_returns_that_interval() {
    let intervals = TimeIntervals::equal_width(1).unwrap();
    let mut tape = Tape::new();
    let table = SelectionTable {
        table: tape.leaf(labelled_table(1, 4, 3)).unwrap(),
        stride: 4,
        local: vec![3, 1, 2],
    };
    let times = [0.0, 0.5, 1.0];
    let time_embedding = tape.leaf(Tensor::from_rows(&[vec![0.3, -1.2, 2.0]]).unwrap()).unwrap();
    let hard = hard_select(&mut tape, &table, &intervals, &times).unwrap();
    let (soft, weights) = soft_select(&mut tape, &table, &intervals, time_embedding, &times).unwrap();
    assert_eq!(tape.value(hard), tape.value(soft));
    for w in weights {
        assert_eq!(tape.value(w).data(), [1.0]);
    }
}

#[test]
fn cumulative_snapshots_repeat_when_nothing_new_happens() {
    // Every training event falls in the first half, so with cumulative
    // snapshots both diffusion graphs coincide.
    let train = vec![cascade(&[(0, 0.0), (1, 0.1), (2, 0.3)]), cascade(&[(3, 0.05), (0, 0.2), (4, 0.4)])];
    let config = ModelConfig {
        dim: 6,
        intervals: 2,
        heads: 2,
        ..ModelConfig::desk()
    };
    let mut r = rng(3);
    let edges = random_edges(&mut r, 5, 6);
    let graph = DynamicGraph::build(&train, &edges, 5, &config.graph_options()).unwrap();
    assert_eq!(graph.diffusion[0], graph.diffusion[1]);

    let mut model = DyHgcn::new(config, 5, 1).unwrap();
    set_param(&mut model, "time_embedding", |_, c| 0.1 * c as f64 - 0.2);
    let reps = model.inference_reps(&graph).unwrap();
    assert_eq!(reps.tables[0], reps.tables[1]);

    // Distinct time embeddings break the tie.
    set_param(&mut model, "time_embedding", |r, c| (r + c) as f64 * 0.3);
    let reps = model.inference_reps(&graph).unwrap();
    assert_ne!(reps.tables[0], reps.tables[1]);
}

#[test]
fn constant_scores_give_log_vocab_loss_per_step() {
    let config = ModelConfig {
        dim: 4,
        intervals: 2,
        heads: 2,
        ..ModelConfig::desk()
    };
    let mut r = rng(9);
    let train = random_cascades(&mut r, 4, 5, 4);
    let graph = DynamicGraph::build(&train, &random_edges(&mut r, 4, 4), 4, &config.graph_options()).unwrap();
    let mut model = DyHgcn::new(config, 4, 2).unwrap();
    set_param(&mut model, "out.w3", |_, _| 0.0);
    set_param(&mut model, "out.b2", |_, _| 0.0);
    let batch = [cascade(&[(1, 0.0), (3, 0.6)])];
    let out = model.loss_and_grads(&graph, &batch).unwrap();
    assert_eq!(out.steps, 1);
    assert!((out.loss - 4f64.ln()).abs() < 1e-12);

    let longer = [cascade(&[(1, 0.0), (3, 0.2), (0, 0.5), (2, 0.9)])];
    assert!((model.loss(&graph, &longer).unwrap() - 3.0 * 4f64.ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_on_hand_set_logits() {
    let logits = [[2.0, 0.5, -1.0], [0.0, 0.0, 3.0], [1.0, -2.0, 1.0]];
    let targets = [0, 1, 2];
    // -log softmax(row)[target], written out directly.
    let expected: f64 = logits
        .iter()
        .zip(targets)
        .map(|(row, t)| {
            let z: f64 = row.iter().map(|x| f64::exp(*x)).sum();
            z.ln() - row[t]
        })
        .sum();
    let mut tape = Tape::new();
    let v = tape.leaf(Tensor::from_rows(&logits.map(|r| r.to_vec())).unwrap()).unwrap();
    let loss = tape.softmax_cross_entropy(v, &targets.map(Some)).unwrap();
    assert!((tape.value(loss).item() - expected).abs() < 1e-12);
    // Uniform over four users.
    let mut tape = Tape::new();
    let v = tape.leaf(Tensor::zeros(&[1, 4])).unwrap();
    let loss = tape.softmax_cross_entropy(v, &[Some(2)]).unwrap();
    assert!((tape.value(loss).item() - 4f64.ln()).abs() < 1e-15);
}

#[test]
fn reported_configuration_shapes() {
    let config = ModelConfig::paper();
    assert_eq!((config.dim, config.intervals, config.heads, config.head_dim()), (64, 8, 14, 4));
    let layout = DyHgcn::parameter_layout(&config, 10);
    let shape = |name: &str| layout.iter().find(|(n, _, _)| n == name).unwrap().1.clone();
    assert_eq!(shape("attn.output"), [56, 64]);
    assert_eq!(shape("attn.13.query"), [64, 4]);
    assert_eq!(shape("fuse.w1"), [256, 64]);
    assert_eq!(shape("time_embedding"), [8, 64]);
    assert_eq!(shape("out.w3"), [10, 64]);
}

#[test]
fn social_ablation_ignores_the_edge_list() {
    let config = Ablation::WithoutSocialGraph.apply(&ModelConfig {
        dim: 6,
        intervals: 3,
        heads: 2,
        ..ModelConfig::desk()
    });
    let mut r = rng(21);
    let train = random_cascades(&mut r, 8, 6, 5);
    let a = DynamicGraph::build(&train, &random_edges(&mut r, 8, 10), 8, &config.graph_options()).unwrap();
    let b = DynamicGraph::build(&train, &random_edges(&mut r, 8, 20), 8, &config.graph_options()).unwrap();
    let model = DyHgcn::new(config, 8, 0).unwrap();
    assert_eq!(model.loss(&a, &train).unwrap().to_bits(), model.loss(&b, &train).unwrap().to_bits());
}

#[test]
fn heterograph_ablation_ignores_the_graph_entirely() {
    let config = Ablation::WithoutHeterogeneousGraph.apply(&ModelConfig {
        dim: 6,
        intervals: 3,
        heads: 2,
        selection: Selection::Hard,
        ..ModelConfig::desk()
    });
    let mut r = rng(22);
    let a_train = random_cascades(&mut r, 8, 6, 5);
    let b_train = random_cascades(&mut r, 8, 6, 5);
    let a = DynamicGraph::build(&a_train, &random_edges(&mut r, 8, 10), 8, &config.graph_options()).unwrap();
    let b = DynamicGraph::build(&b_train, &[], 8, &config.graph_options()).unwrap();
    let model = DyHgcn::new(config, 8, 0).unwrap();
    assert_eq!(model.loss(&a, &a_train).unwrap().to_bits(), model.loss(&b, &a_train).unwrap().to_bits());
}

#[test]
fn model_rejects_a_graph_of_the_wrong_size() {
    let config = ModelConfig::desk();
    let mut r = rng(5);
    let train = random_cascades(&mut r, 6, 4, 4);
    let graph = DynamicGraph::build(&train, &[], 6, &config.graph_options()).unwrap();
    let model = DyHgcn::new(config, 7, 0).unwrap();
    assert!(model.inference_reps(&graph).is_err());
}
