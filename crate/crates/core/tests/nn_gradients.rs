mod common;

use anemone::contrast::{forward_batch, TrainMode};
use anemone::linalg::Matrix;
use anemone::nn::{backward, bilinear_score, gcn_forward, node_forward, BatchTape, PairRole, Scale};
use anemone::graph::NormalizedAdjacency;
use anemone::rng;
use proptest::prelude::*;
use rand::Rng;

use common::gradcheck::{relative_error, Instance};
use common::random_matrix;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Gradient entries smaller than this are compared absolutely; central
/// differences carry about `eps * L / STEP ≈ 1e-11` of rounding noise.
const FLOOR: f64 = 1e-6;
const KINK: f64 = 1e-8;

fn check(inst: &Instance) -> Option<f64> {
    if inst.min_preactivation() < KINK {
        return None;
    }
    Some(relative_error(&inst.analytic(), &inst.numeric(STEP), FLOOR))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_gradient_matches_central_differences(seed in any::<u64>()) {
        let inst = Instance::random(seed);
        if let Some(err) = check(&inst) {
            prop_assert!(err < TOL, "relative error {err:e}");
        }
    }
}

#[test]
fn patch_only_loss_small_shapes() {
    let mut checked = 0;
    for seed in 0..20 {
        let mut inst = Instance::with_shape(seed, 3, 2, 2, 2, false);
        inst.alpha = 0.0;
        if let Some(err) = check(&inst) {
            assert!(err < TOL, "seed {seed}: {err:e}");
            checked += 1;
        }
    }
    assert!(checked >= 5, "only {checked} instances away from ReLU kinks");
}

#[test]
fn few_shot_mixes_match_differences() {
    let mut checked = 0;
    for seed in 0..40 {
        let mut inst = Instance::with_shape(seed, 4, 3, 3, 3, true);
        inst.labeled = vec![seed % 2 == 0, true, seed % 3 == 0];
        if let Some(err) = check(&inst) {
            assert!(err < TOL, "seed {seed}: {err:e}");
            checked += 1;
        }
    }
    assert!(checked >= 10);
}

#[test]
fn zero_upstream_gradient_gives_zero() {
    let inst = Instance::random(3);
    let fwd = forward_batch(inst.samples(&inst.params), &inst.labeled, &inst.params, inst.alpha, inst.mode).unwrap();
    let g = backward(Some(&fwd.tape), &inst.params, 0.0).unwrap();
    assert_eq!(g.max_abs(), 0.0);
}

/// At `W = 0` every score is 0.5, so a positive-pair term has gradient
/// `-w/2 · h zᵀ` on its discriminator and a negative-pair term `+w/2 · h zᵀ`.
/// Embeddings are ReLU outputs, hence the sign pattern is entry-wise.
#[test]
fn discriminator_gradient_signs_at_half() {
    let mut inst = Instance::with_shape(11, 4, 3, 3, 2, false);
    inst.params.w_p = Matrix::zeros(3, 3);
    inst.params.w_c = Matrix::zeros(3, 3);
    let fwd = forward_batch(inst.samples(&inst.params), &inst.labeled, &inst.params, 0.5, TrainMode::Unsupervised).unwrap();
    for s in &fwd.scores {
        assert_eq!((s.s_p, s.s_neg_p, s.s_c, s.s_neg_c), (0.5, 0.5, 0.5, 0.5));
    }
    for role in [PairRole::Positive, PairRole::Negative] {
        let tape = BatchTape {
            samples: fwd.tape.samples.clone(),
            terms: fwd.tape.terms.iter().copied().filter(|t| t.role == role && t.scale == Scale::Patch).collect(),
        };
        let g = backward(Some(&tape), &inst.params, 1.0).unwrap();
        let mut expect = Matrix::zeros(3, 3);
        for t in &tape.terms {
            let h = tape.samples[t.h_of].h(Scale::Patch);
            let z = tape.samples[t.z_of].z(Scale::Patch);
            let sign = if role == PairRole::Positive { -1.0 } else { 1.0 };
            for a in 0..3 {
                for b in 0..3 {
                    expect.set(a, b, expect.get(a, b) + sign * t.weight * 0.5 * h[a] * z[b]);
                }
            }
        }
        for (x, y) in g.w_p.as_slice().iter().zip(expect.as_slice()) {
            assert!((x - y).abs() < 1e-15);
            match role {
                PairRole::Positive => assert!(*x <= 0.0),
                PairRole::Negative => assert!(*x >= 0.0),
            }
        }
        // a small step against the gradient moves each pair's score the right way
        let mut w = g.w_p.clone();
        w.as_mut_slice().iter_mut().for_each(|v| *v *= -1e-3);
        for t in &tape.terms {
            let s = bilinear_score(tape.samples[t.h_of].h(Scale::Patch), tape.samples[t.z_of].z(Scale::Patch), &w).unwrap();
            match role {
                PairRole::Positive => assert!(s >= 0.5),
                PairRole::Negative => assert!(s <= 0.5),
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn node_forward_is_one_node_gcn(seed in any::<u64>(), d in 1usize..6, e in 1usize..6) {
        let mut r = rng::stream(seed, &[0]);
        let w = random_matrix(d, e, 2.0, &mut r);
        let x: Vec<f64> = (0..d).map(|_| r.gen_range(-2.0..2.0)).collect();
        let adj = NormalizedAdjacency::from_binary(&Matrix::zeros(1, 1)).unwrap();
        let g = gcn_forward(&adj, &Matrix::from_vec(1, d, x.clone()).unwrap(), &w).unwrap();
        prop_assert_eq!(node_forward(&x, &w).unwrap(), g.row(0).to_vec());
    }

    #[test]
    fn training_scores_are_interior(seed in any::<u64>()) {
        let inst = Instance::random(seed);
        let fwd = forward_batch(inst.samples(&inst.params), &inst.labeled, &inst.params, inst.alpha, inst.mode).unwrap();
        for s in &fwd.scores {
            for v in [s.s_p, s.s_neg_p, s.s_c, s.s_neg_c] {
                prop_assert!(v > 0.0 && v < 1.0);
            }
        }
        prop_assert!(fwd.loss.total >= 0.0);
        let again = forward_batch(inst.samples(&inst.params), &inst.labeled, &inst.params, inst.alpha, inst.mode).unwrap();
        prop_assert_eq!(again.loss, fwd.loss);
    }
}
