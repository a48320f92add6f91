#![allow(dead_code)]

use dyhgcn::autodiff::Tensor;
use dyhgcn::data::{Cascade, Event, SocialEdge, UserId};
use dyhgcn::{DynamicGraph, ModelConfig, ModelError, Scorer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Distinct users with sorted times in `[0, 1]`.
pub fn random_events<R: Rng>(rng: &mut R, num_users: usize, len: usize) -> Vec<Event> {
    let mut users: Vec<usize> = (0..num_users).collect();
    for i in 0..len {
        let j = rng.random_range(i..num_users);
        users.swap(i, j);
    }
    let mut times: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
    times.sort_by(f64::total_cmp);
    users[..len].iter().zip(times).map(|(&u, t)| Event::new(UserId(u), t)).collect()
}

pub fn random_cascades<R: Rng>(rng: &mut R, num_users: usize, count: usize, max_len: usize) -> Vec<Cascade> {
    (0..count)
        .map(|_| {
            let len = rng.random_range(2..=max_len.min(num_users));
            Cascade::new(random_events(rng, num_users, len)).unwrap()
        })
        .collect()
}

pub fn random_edges<R: Rng>(rng: &mut R, num_users: usize, count: usize) -> Vec<SocialEdge> {
    let mut edges = Vec::new();
    while edges.len() < count {
        let (a, b) = (rng.random_range(0..num_users), rng.random_range(0..num_users));
        let e = SocialEdge { src: UserId(a), dst: UserId(b) };
        if a != b && !edges.contains(&e) {
            edges.push(e);
        }
    }
    edges
}

/// A random dynamic graph over `num_users` users for `config`.
pub fn random_graph(seed: u64, num_users: usize, config: &ModelConfig) -> DynamicGraph {
    let mut r = rng(seed);
    let train = random_cascades(&mut r, num_users, 6, num_users.min(5));
    let edges = random_edges(&mut r, num_users, num_users);
    DynamicGraph::build(&train, &edges, num_users, &config.graph_options()).unwrap()
}

/// Replays fixed score rows regardless of the events.
pub struct FixedScorer(pub Vec<Vec<f64>>);

impl Scorer for FixedScorer {
    fn num_users(&self) -> usize {
        self.0[0].len()
    }

    fn scores(&self, events: &[Event]) -> Result<Tensor, ModelError> {
        Ok(Tensor::from_rows(&self.0[..events.len()])?)
    }
}
