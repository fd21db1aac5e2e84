#![allow(dead_code)]

use std::collections::BTreeSet;

use anemone::graph::AttributedGraph;
use anemone::linalg::Matrix;
use anemone::rng;
use rand::seq::index::sample;
use rand::Rng;

/// Community graph with sparse binary features: each community owns a block
/// of "topic" columns that its members mostly draw from.
pub struct PlantedPartition {
    pub nodes: usize,
    pub communities: usize,
    pub dim: usize,
    pub edges: usize,
    pub p_within: f64,
    pub topic_width: usize,
    pub active_topic: usize,
    pub active_noise: usize,
}

impl PlantedPartition {
    pub fn small(nodes: usize) -> Self {
        Self {
            nodes,
            communities: 4,
            dim: 32,
            edges: nodes * 2,
            p_within: 0.85,
            topic_width: 8,
            active_topic: 4,
            active_noise: 1,
        }
    }

    pub fn generate(&self, seed: u64) -> AttributedGraph {
        let mut r = rng::stream(seed, &[0x7465_7374]);
        let n = self.nodes;
        let comm: Vec<usize> = (0..n).map(|_| r.gen_range(0..self.communities)).collect();
        let members: Vec<Vec<usize>> = (0..self.communities)
            .map(|c| (0..n).filter(|&v| comm[v] == c).collect())
            .collect();
        let mut edges = BTreeSet::new();
        while edges.len() < self.edges {
            let u = r.gen_range(0..n);
            let v = if r.gen::<f64>() < self.p_within && members[comm[u]].len() > 1 {
                members[comm[u]][r.gen_range(0..members[comm[u]].len())]
            } else {
                r.gen_range(0..n)
            };
            if u != v {
                edges.insert((u.min(v), u.max(v)));
            }
        }
        let topics: Vec<Vec<usize>> = (0..self.communities)
            .map(|_| sample(&mut r, self.dim, self.topic_width).into_vec())
            .collect();
        let mut features = Matrix::zeros(n, self.dim);
        for v in 0..n {
            let t = &topics[comm[v]];
            for i in sample(&mut r, t.len(), self.active_topic).iter() {
                features.set(v, t[i], 1.0);
            }
            for c in sample(&mut r, self.dim, self.active_noise).iter() {
                features.set(v, c, 1.0);
            }
        }
        let edges: Vec<_> = edges.into_iter().collect();
        AttributedGraph::new(features, &edges, None).unwrap()
    }
}

pub fn random_graph(n: usize, dim: usize, p: f64, seed: u64) -> AttributedGraph {
    let mut r = rng::stream(seed, &[0x7267]);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let data = (0..n * dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    AttributedGraph::new(Matrix::from_vec(n, dim, data).unwrap(), &edges, None).unwrap()
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, scale: f64, r: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| r.gen_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn star_graph(leaves: usize) -> AttributedGraph {
    let edges: Vec<_> = (1..=leaves).map(|l| (0, l)).collect();
    AttributedGraph::new(Matrix::zeros(leaves + 1, 1), &edges, None).unwrap()
}

pub mod gradcheck {
    use anemone::contrast::{forward_batch, TrainMode};
    use anemone::graph::NormalizedAdjacency;
    use anemone::linalg::Matrix;
    use anemone::nn::{backward, ModelParams, NodeTape, Pooling, SampleTape, ViewTape};
    use anemone::rng;
    use anemone::sampler::Subgraph;
    use rand::Rng;

    use super::random_matrix;

    /// A fixed batch of views plus everything the loss depends on except the
    /// parameters.
    pub struct Instance {
        pub patch: Vec<Subgraph>,
        pub context: Vec<Subgraph>,
        pub raw: Vec<Vec<f64>>,
        pub labeled: Vec<bool>,
        pub alpha: f64,
        pub mode: TrainMode,
        pub params: ModelParams,
    }

    fn random_view<R: Rng>(k: usize, d: usize, r: &mut R) -> Subgraph {
        let mut a = Matrix::zeros(k, k);
        for i in 0..k {
            for j in i + 1..k {
                if r.gen::<f64>() < 0.6 {
                    a.set(i, j, 1.0);
                    a.set(j, i, 1.0);
                }
            }
        }
        let mut features = random_matrix(k, d, 1.0, r);
        features.row_mut(0).fill(0.0);
        Subgraph {
            target: 0,
            nodes: (0..k).collect(),
            adj_norm: NormalizedAdjacency::from_binary(&a).unwrap(),
            features,
        }
    }

    impl Instance {
        /// Random shapes in `D ∈ 2..=5`, `D' ∈ 2..=4`, `K ∈ 1..=4`,
        /// `B ∈ 2..=3`; half the instances are few-shot with random labels.
        pub fn random(seed: u64) -> Self {
            let mut r = rng::stream(seed, &[0x6664]);
            let d = r.gen_range(2..=5);
            let e = r.gen_range(2..=4);
            let k = r.gen_range(1..=4);
            let b = r.gen_range(2..=3);
            let few_shot = r.gen_bool(0.5);
            Self::with_shape(r.gen(), d, e, k, b, few_shot)
        }

        pub fn with_shape(seed: u64, d: usize, e: usize, k: usize, b: usize, few_shot: bool) -> Self {
            let mut r = rng::stream(seed, &[0x6665]);
            let labeled: Vec<bool> = (0..b).map(|_| few_shot && r.gen_bool(0.4)).collect();
            let params = ModelParams {
                theta: random_matrix(d, e, 1.0, &mut r),
                phi: random_matrix(d, e, 1.0, &mut r),
                w_p: random_matrix(e, e, 1.0, &mut r),
                w_c: random_matrix(e, e, 1.0, &mut r),
            };
            Self {
                patch: (0..b).map(|_| random_view(k, d, &mut r)).collect(),
                context: (0..b).map(|_| random_view(k, d, &mut r)).collect(),
                raw: (0..b).map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()).collect(),
                labeled,
                alpha: r.gen_range(0.0..=1.0),
                mode: if few_shot { TrainMode::FewShot } else { TrainMode::Unsupervised },
                params,
            }
        }

        pub fn samples(&self, p: &ModelParams) -> Vec<SampleTape> {
            (0..self.patch.len())
                .map(|i| SampleTape {
                    node: i,
                    patch: ViewTape::encode(self.patch[i].clone(), &p.theta, Pooling::Target).unwrap(),
                    context: ViewTape::encode(self.context[i].clone(), &p.phi, Pooling::Mean).unwrap(),
                    z_patch: NodeTape::encode(&self.raw[i], &p.theta).unwrap(),
                    z_context: NodeTape::encode(&self.raw[i], &p.phi).unwrap(),
                })
                .collect()
        }

        pub fn loss(&self, p: &ModelParams) -> f64 {
            forward_batch(self.samples(p), &self.labeled, p, self.alpha, self.mode)
                .unwrap()
                .loss
                .total
        }

        /// Analytic gradient, flattened in `theta, phi, w_p, w_c` order.
        pub fn analytic(&self) -> Vec<f64> {
            let fwd = forward_batch(self.samples(&self.params), &self.labeled, &self.params, self.alpha, self.mode).unwrap();
            let g = backward(Some(&fwd.tape), &self.params, 1.0).unwrap();
            g.matrices().iter().flat_map(|m| m.as_slice().to_vec()).collect()
        }

        /// Central differences with step `h`, same order as [`Self::analytic`].
        pub fn numeric(&self, h: f64) -> Vec<f64> {
            let mut out = Vec::new();
            for which in 0..4 {
                let len = self.params.matrices()[which].as_slice().len();
                for idx in 0..len {
                    let mut plus = self.params.clone();
                    plus.matrices_mut()[which].as_mut_slice()[idx] += h;
                    let mut minus = self.params.clone();
                    minus.matrices_mut()[which].as_mut_slice()[idx] -= h;
                    out.push((self.loss(&plus) - self.loss(&minus)) / (2.0 * h));
                }
            }
            out
        }

        /// Smallest |pre-activation| over every ReLU in the forward pass whose
        /// input actually depends on the weights.
        pub fn min_preactivation(&self) -> f64 {
            let p = &self.params;
            let mut m = f64::INFINITY;
            let mut scan = |v: &[f64]| {
                for &x in v {
                    m = m.min(x.abs());
                }
            };
            for i in 0..self.patch.len() {
                for (sub, w) in [(&self.patch[i], &p.theta), (&self.context[i], &p.phi)] {
                    let ax = sub.adj_norm.matrix().matmul(&sub.features).unwrap();
                    let pre = ax.matmul(w).unwrap();
                    for row in 0..pre.rows() {
                        // an all-zero input row stays at 0 under any weight change
                        if ax.row(row).iter().any(|&v| v != 0.0) {
                            scan(pre.row(row));
                        }
                    }
                }
                for w in [&p.theta, &p.phi] {
                    let x = Matrix::from_vec(1, self.raw[i].len(), self.raw[i].clone()).unwrap();
                    scan(x.matmul(w).unwrap().as_slice());
                }
            }
            m
        }
    }

    /// `max_i |a_i - n_i| / max(|a_i|, |n_i|)`, with entries where both
    /// sides are below `floor` in magnitude compared absolutely instead.
    pub fn relative_error(a: &[f64], n: &[f64], floor: f64) -> f64 {
        a.iter()
            .zip(n)
            .map(|(&x, &y)| {
                let scale = x.abs().max(y.abs());
                if scale < floor {
                    (x - y).abs() / floor
                } else {
                    (x - y).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}
