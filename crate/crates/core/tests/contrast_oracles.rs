mod common;

use anemone::contrast::{
    context_scores, forward_batch, fs_extra_negatives, init_params, loss_few_shot, loss_unsupervised,
    patch_scores, train, NodeScores, TrainConfig, TrainMode,
};
use anemone::graph::AttributedGraph;
use anemone::inject::{inject, InjectionSpec};
use anemone::nn::ModelParams;
use anemone::rng;
use anemone::sampler::{rwr_sample, Subgraph};
use anemone::Error;
use proptest::prelude::*;
use rand::Rng;

use common::{random_graph, random_matrix, PlantedPartition};

type Dense = Vec<Vec<f64>>;

fn dense(m: &anemone::Matrix) -> Dense {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn matmul(a: &Dense, b: &Dense) -> Dense {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| (0..cols).map(|c| (0..inner).map(|k| row[k] * b[k][c]).sum()).collect())
        .collect()
}

fn relu_all(m: Dense) -> Dense {
    m.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn bilinear(h: &[f64], w: &Dense, z: &[f64]) -> f64 {
    let mut acc = 0.0;
    for a in 0..h.len() {
        for b in 0..z.len() {
            acc += h[a] * w[a][b] * z[b];
        }
    }
    sig(acc)
}

/// Rebuilds a view from the graph: the first `distinct` slots are the walk's
/// nodes, the rest are isolated padding; the target row and padding rows
/// carry zero features.
fn dense_view(g: &AttributedGraph, sub: &Subgraph) -> (Dense, Dense) {
    let k = sub.nodes.len();
    let real = |s: usize| s == 0 || sub.nodes[s] != sub.target;
    let mut a = vec![vec![0.0; k]; k];
    for i in 0..k {
        a[i][i] = 1.0;
        for j in 0..k {
            if i != j && real(i) && real(j) && g.has_edge(sub.nodes[i], sub.nodes[j]) {
                a[i][j] = 1.0;
            }
        }
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let norm = (0..k).map(|i| (0..k).map(|j| a[i][j] / (deg[i] * deg[j]).sqrt()).collect()).collect();
    let x = (0..k)
        .map(|s| {
            if s == 0 || !real(s) {
                vec![0.0; g.feature_dim()]
            } else {
                g.feature_row(sub.nodes[s]).to_vec()
            }
        })
        .collect();
    (norm, x)
}

struct Oracle {
    h_p: Dense,
    z_p: Dense,
    h_c: Dense,
    z_c: Dense,
}

fn oracle(g: &AttributedGraph, nodes: &[usize], pv: &[Subgraph], cv: &[Subgraph], p: &ModelParams) -> Oracle {
    let (theta, phi) = (dense(&p.theta), dense(&p.phi));
    let mut o = Oracle { h_p: vec![], z_p: vec![], h_c: vec![], z_c: vec![] };
    for (i, &v) in nodes.iter().enumerate() {
        let (a, x) = dense_view(g, &pv[i]);
        o.h_p.push(relu_all(matmul(&matmul(&a, &x), &theta))[0].clone());
        let (a, x) = dense_view(g, &cv[i]);
        let h = relu_all(matmul(&matmul(&a, &x), &phi));
        let k = h.len() as f64;
        o.h_c.push((0..h[0].len()).map(|c| h.iter().map(|r| r[c]).sum::<f64>() / k).collect());
        let row = vec![g.feature_row(v).to_vec()];
        o.z_p.push(relu_all(matmul(&row, &theta))[0].clone());
        o.z_c.push(relu_all(matmul(&row, &phi))[0].clone());
    }
    o
}

struct Batch {
    g: AttributedGraph,
    nodes: Vec<usize>,
    patch: Vec<Subgraph>,
    context: Vec<Subgraph>,
    params: ModelParams,
}

impl Batch {
    fn random(seed: u64, b: usize, k: usize) -> Self {
        let g = random_graph(12, 3, 0.3, seed);
        let mut r = rng::stream(seed, &[9]);
        let nodes: Vec<usize> = (0..b).map(|_| r.gen_range(0..g.num_nodes())).collect();
        let view = |r: &mut rng::StreamRng, v| rwr_sample(&g, v, k, 0.5, r).unwrap();
        let patch = nodes.iter().map(|&v| view(&mut r, v)).collect();
        let context = nodes.iter().map(|&v| view(&mut r, v)).collect();
        let params = ModelParams {
            theta: random_matrix(3, 4, 1.0, &mut r),
            phi: random_matrix(3, 4, 1.0, &mut r),
            w_p: random_matrix(4, 4, 1.0, &mut r),
            w_c: random_matrix(4, 4, 1.0, &mut r),
        };
        Self { g, nodes, patch, context, params }
    }

    fn raw(&self) -> Vec<&[f64]> {
        self.nodes.iter().map(|&v| self.g.feature_row(v)).collect()
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scores_match_dense_oracle(seed in any::<u64>(), k in 1usize..6) {
        let bt = Batch::random(seed, 3, k);
        let o = oracle(&bt.g, &bt.nodes, &bt.patch, &bt.context, &bt.params);
        let (wp, wc) = (dense(&bt.params.w_p), dense(&bt.params.w_c));
        let ps = patch_scores(&bt.patch, &bt.raw(), &bt.params).unwrap();
        let cs = context_scores(&bt.context, &bt.raw(), &bt.params).unwrap();
        let fs = fs_extra_negatives(TrainMode::FewShot, &bt.patch, &bt.context, &bt.raw(), &bt.params).unwrap();
        for i in 0..3 {
            let j = (i + 1) % 3;
            prop_assert!(close(ps[i].0, bilinear(&o.h_p[i], &wp, &o.z_p[i])));
            prop_assert!(close(ps[i].1, bilinear(&o.h_p[j], &wp, &o.z_p[i])));
            prop_assert!(close(cs[i].0, bilinear(&o.h_c[i], &wc, &o.z_c[i])));
            prop_assert!(close(cs[i].1, bilinear(&o.h_c[j], &wc, &o.z_c[i])));
            prop_assert!(close(fs[i].0, bilinear(&o.h_p[i], &wp, &o.z_p[i])));
            prop_assert!(close(fs[i].1, bilinear(&o.h_c[i], &wc, &o.z_c[i])));
            // same function as the positive pair, only the loss role differs
            prop_assert_eq!(fs[i].0, ps[i].0);
        }
    }

    #[test]
    fn all_unlabeled_few_shot_is_bitwise_unsupervised(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let mut r = rng::stream(seed, &[1]);
        let scores: Vec<NodeScores> = (0..r.gen_range(1..8))
            .map(|i| NodeScores {
                node: i,
                s_p: r.gen_range(0.01..0.99),
                s_neg_p: r.gen_range(0.01..0.99),
                s_c: r.gen_range(0.01..0.99),
                s_neg_c: r.gen_range(0.01..0.99),
                self_negative: None,
            })
            .collect();
        let u = loss_unsupervised(&scores, alpha).unwrap();
        prop_assert_eq!(loss_few_shot(&scores, alpha).unwrap(), u);
        prop_assert!(u.total >= 0.0);
        // affine in alpha with exact endpoints
        prop_assert_eq!(loss_unsupervised(&scores, 0.0).unwrap().total, u.patch);
        prop_assert_eq!(loss_unsupervised(&scores, 1.0).unwrap().total, u.context);
        let lerp = alpha * u.context + (1.0 - alpha) * u.patch;
        prop_assert!((u.total - lerp).abs() <= 1e-15 * lerp.abs().max(1.0));
    }

    #[test]
    fn few_shot_forward_without_labels_matches_unsupervised(seed in any::<u64>()) {
        let inst = common::gradcheck::Instance::with_shape(seed, 3, 3, 3, 3, false);
        let none = vec![false; 3];
        let u = forward_batch(inst.samples(&inst.params), &none, &inst.params, inst.alpha, TrainMode::Unsupervised).unwrap();
        let f = forward_batch(inst.samples(&inst.params), &none, &inst.params, inst.alpha, TrainMode::FewShot).unwrap();
        prop_assert_eq!(u.loss, f.loss);
        prop_assert_eq!(u.scores, f.scores);
    }
}

#[test]
fn zero_parameters_give_half_everywhere() {
    let mut bt = Batch::random(5, 3, 4);
    bt.params = ModelParams::zeros(3, 4);
    let ps = patch_scores(&bt.patch, &bt.raw(), &bt.params).unwrap();
    let cs = context_scores(&bt.context, &bt.raw(), &bt.params).unwrap();
    let fs = fs_extra_negatives(TrainMode::FewShot, &bt.patch, &bt.context, &bt.raw(), &bt.params).unwrap();
    for (a, b) in ps.iter().chain(&cs).chain(&fs) {
        assert_eq!((*a, *b), (0.5, 0.5));
    }
}

#[test]
fn single_node_context_is_neutral() {
    let bt = Batch::random(6, 3, 1);
    for (s, neg) in context_scores(&bt.context, &bt.raw(), &bt.params).unwrap() {
        assert_eq!((s, neg), (0.5, 0.5));
    }
}

#[test]
fn identical_pair_scores_match_negatives() {
    let bt = Batch::random(8, 1, 4);
    let views = vec![bt.patch[0].clone(), bt.patch[0].clone()];
    let raw = vec![bt.raw()[0], bt.raw()[0]];
    for (s, neg) in patch_scores(&views, &raw, &bt.params).unwrap() {
        assert_eq!(s, neg);
    }
    for (s, neg) in context_scores(&views, &raw, &bt.params).unwrap() {
        assert_eq!(s, neg);
    }
    assert!(matches!(patch_scores(&views[..1], &raw[..1], &bt.params), Err(Error::Batch(_))));
}

fn small_injected(seed: u64) -> AttributedGraph {
    let g = PlantedPartition::small(200).generate(seed);
    let spec = InjectionSpec { num_cliques: 1, clique_size: 8, num_contextual: 8, num_candidates: 20, seed };
    inject(&g, &spec).unwrap().graph
}

#[test]
fn zero_epochs_return_initial_parameters() {
    let g = small_injected(1);
    let cfg = TrainConfig { epochs: 0, embed_dim: 8, seed: 4, ..TrainConfig::default() };
    assert_eq!(train(&g, &cfg).unwrap().params, init_params(&g, &cfg));
}

#[test]
fn training_descends_and_is_deterministic() {
    let g = small_injected(2);
    let cfg = TrainConfig { epochs: 50, batch_size: 50, embed_dim: 16, learning_rate: 0.005, seed: 3, ..TrainConfig::default() };
    let out = train(&g, &cfg).unwrap();
    let means = out.epoch_means();
    assert_eq!(means.len(), 50);
    let best = means.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(best <= 0.9 * means[0], "first {} best {best}", means[0]);
    assert_eq!(train(&g, &cfg).unwrap().params, out.params);
}

#[test]
fn few_shot_training_is_deterministic() {
    let g = small_injected(3);
    let labeled: Vec<usize> = (0..g.num_nodes()).filter(|&v| g.is_anomaly(v)).take(3).collect();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 40,
        embed_dim: 8,
        seed: 9,
        mode: TrainMode::FewShot,
        labeled_ids: labeled,
        ..TrainConfig::default()
    };
    let a = train(&g, &cfg).unwrap();
    assert_eq!(train(&g, &cfg).unwrap().params, a.params);
    let plain = train(&g, &TrainConfig { mode: TrainMode::Unsupervised, labeled_ids: vec![], ..cfg.clone() }).unwrap();
    assert_ne!(plain.params, a.params);
}
