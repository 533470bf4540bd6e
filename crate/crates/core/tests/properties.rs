//! Randomized invariants across the public API.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use lsdp_core::distributions::{family_pmd, DiscreteDistribution, LocalChannel};
use lsdp_core::experiments::{family_cov, ising_benchmark};
use lsdp_core::features::{covariance_from_distribution, BlockCovariance, FeatureMap};
use lsdp_core::graph::{BipartiteDag, BlockPartition};
use lsdp_core::inequalities::{cross_block_removed, entropic_tests, entropy_profile, phi_map, sign_flipped};
use lsdp_core::linalg::{min_eigenvalue, spectral_norm};
use lsdp_core::model::{random_model, LatentModel, RandomModelConfig};
use lsdp_core::realization::{finite_alphabet_realization, rank_bound_check, realization_error, realize};
use lsdp_core::rng::InstanceRng;
use lsdp_core::sdp::{adjoint_map, constraint_map, test_compatibility, verify_witness, BlockLayout, StructuredVariable, Tolerances, Verdict};

fn dag_strategy() -> impl Strategy<Value = BipartiteDag> {
    (1usize..=5).prop_flat_map(|m| {
        prop::collection::vec(prop::collection::vec(any::<bool>(), m), 0..=4).prop_map(move |masks| {
            let edges = masks
                .into_iter()
                .map(|mask| (0..m).filter(|&i| mask[i]).collect::<Vec<_>>())
                .filter(|e| !e.is_empty())
                .collect();
            BipartiteDag::new(m, edges).unwrap()
        })
    })
}

fn model(seed: u64) -> LatentModel {
    random_model(&mut InstanceRng::new(seed, 0), RandomModelConfig::default())
}

fn random_distribution(seed: u64, alphabets: Vec<usize>, zeros: bool) -> DiscreteDistribution {
    let mut rng = InstanceRng::new(seed, 1);
    let size: usize = alphabets.iter().product();
    let weights = (0..size)
        .map(|_| if zeros && rng.uniform() < 0.3 { 0.0 } else { rng.uniform() })
        .collect::<Vec<f64>>();
    let weights = if weights.iter().all(|&w| w == 0.0) { vec![1.0; size] } else { weights };
    DiscreteDistribution::from_weights(alphabets, weights).unwrap()
}

fn random_channel(seed: u64, input: usize, output: usize) -> LocalChannel {
    let mut rng = InstanceRng::new(seed, 2);
    let mut table = vec![0.0; input * output];
    for i in 0..input {
        let col: Vec<f64> = (0..output).map(|_| rng.uniform()).collect();
        let total: f64 = col.iter().sum();
        for (o, v) in col.iter().enumerate() {
            table[o * input + i] = v / total;
        }
    }
    LocalChannel::new(input, output, table).unwrap()
}

fn gaussian_matrix(seed: u64, r: usize, c: usize) -> DMatrix<f64> {
    let mut rng = InstanceRng::new(seed, 3);
    DMatrix::from_fn(r, c, |_, _| rng.standard_normal())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn children_and_parents_agree(dag in dag_strategy()) {
        for n in 0..dag.num_latents() {
            for m in 0..dag.num_observables() {
                let down = dag.children(n).unwrap().contains(&m);
                let up = dag.parents(m).unwrap().contains(&n);
                prop_assert_eq!(down, up);
            }
        }
    }

    #[test]
    fn support_projector_size(dag in dag_strategy(), dims in prop::collection::vec(1usize..4, 5)) {
        let part = BlockPartition::new(dims[..dag.num_observables()].to_vec()).unwrap();
        for n in 0..dag.num_latents() {
            let want: usize = dag.children(n).unwrap().iter().map(|&m| part.dims()[m]).sum();
            prop_assert_eq!(dag.support_projector(&part, n).unwrap().len(), want);
        }
    }

    #[test]
    fn dag_json_round_trip(dag in dag_strategy()) {
        prop_assert_eq!(BipartiteDag::from_json(&dag.to_json()).unwrap(), dag);
    }

    #[test]
    fn adjoint_identity(dag in dag_strategy(), dims in prop::collection::vec(1usize..4, 5), seed in any::<u64>()) {
        let part = BlockPartition::new(dims[..dag.num_observables()].to_vec()).unwrap();
        let layout = BlockLayout::new(&dag, &part).unwrap();
        let k = part.total();
        let x = gaussian_matrix(seed, k, k);
        let x = &x + x.transpose();
        let sym = |salt: u64, coords: &[usize]| {
            let g = gaussian_matrix(seed ^ salt, coords.len(), coords.len());
            &g + g.transpose()
        };
        let remainder = layout.remainder_coords().iter().enumerate().map(|(i, c)| sym(i as u64 + 1, c)).collect();
        let latent = layout.latent_coords().iter().enumerate().map(|(i, c)| sym(i as u64 + 100, c)).collect();
        let z = StructuredVariable::new(remainder, latent);
        let lhs = constraint_map(&layout, &z).unwrap().dot(&x);
        let rhs = z.dot(&adjoint_map(&layout, &x).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn channels_preserve_normalization(seed in any::<u64>(), alphabets in prop::collection::vec(1usize..4, 1..4)) {
        let dist = random_distribution(seed, alphabets.clone(), true);
        let channels: Vec<LocalChannel> = alphabets
            .iter()
            .enumerate()
            .map(|(i, &a)| random_channel(seed.wrapping_add(i as u64), a, 1 + (a + i) % 3))
            .collect();
        let out = dist.apply_local_channels(&channels).unwrap();
        prop_assert!(out.pmf().iter().all(|&p| p >= 0.0));
        prop_assert!((out.pmf().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn marginal_commutes_with_channels(seed in any::<u64>(), alphabets in prop::collection::vec(1usize..4, 2..4)) {
        let dist = random_distribution(seed, alphabets.clone(), false);
        let channels: Vec<LocalChannel> = alphabets
            .iter()
            .enumerate()
            .map(|(i, &a)| random_channel(seed.wrapping_add(7 * i as u64), a, 2))
            .collect();
        let keep = [0usize, alphabets.len() - 1];
        let left = dist.apply_local_channels(&channels).unwrap().marginalize(&keep).unwrap();
        let kept: Vec<LocalChannel> = keep.iter().map(|&i| channels[i].clone()).collect();
        let right = dist.marginalize(&keep).unwrap().apply_local_channels(&kept).unwrap();
        for (a, b) in left.pmf().iter().zip(right.pmf()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn depolarizing_semigroup(p in 0.0f64..0.99, frac in 0.0f64..1.0, d in 2usize..6) {
        let p2 = p + frac * (1.0 - p);
        let q = (p2 - p) / (1.0 - p);
        let composed = LocalChannel::depolarizing(p, d).unwrap().then(&LocalChannel::depolarizing(q, d).unwrap()).unwrap();
        let direct = LocalChannel::depolarizing(p2, d).unwrap();
        for o in 0..d {
            for i in 0..d {
                prop_assert!((composed.prob(o, i) - direct.prob(o, i)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn family_is_permutation_symmetric(p in 0.0f64..=1.0, d in 2usize..4) {
        let dist = family_pmd(3, d, p).unwrap();
        for (x, base) in dist.outcomes() {
            for perm in [[1, 0, 2], [0, 2, 1], [2, 1, 0], [1, 2, 0]] {
                let y = [x[perm[0]], x[perm[1]], x[perm[2]]];
                prop_assert!((dist.prob(&y).unwrap() - base).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn finite_realization_moments(seed in any::<u64>(), k in 1usize..6, extra in 0usize..3) {
        let r = 1 + (seed as usize) % k;
        let g = gaussian_matrix(seed, k, r);
        let target = &g * g.transpose();
        let fin = finite_alphabet_realization(&target, r + 1 + extra, seed).unwrap();
        prop_assert!(fin.mean().amax() < 1e-9);
        prop_assert!((fin.second_moment() - &target).amax() < 1e-9);
    }

    #[test]
    fn phi_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, d in 1usize..4) {
        let part = BlockPartition::new(vec![2, 1, 3]).unwrap();
        let q1 = gaussian_matrix(seed, 6, 6);
        let q2 = gaussian_matrix(seed ^ 1, 6, 6);
        for dist in 0..3 {
            let lhs = phi_map(&(&q1 * a + &q2 * b), d, &part, dist).unwrap();
            let rhs = phi_map(&q1, d, &part, dist).unwrap() * a + phi_map(&q2, d, &part, dist).unwrap() * b;
            prop_assert!((lhs - rhs).amax() <= 1e-12 * (1.0 + a.abs() + b.abs()) * 10.0);
        }
    }

    #[test]
    fn flip_identity(seed in any::<u64>()) {
        let part = BlockPartition::new(vec![2, 2, 2]).unwrap();
        let g = gaussian_matrix(seed, 6, 6);
        let q = &g * g.transpose();
        let avg = (&q + sign_flipped(&q, &part, 0, 1).unwrap()) * 0.5;
        prop_assert_eq!(&avg, &cross_block_removed(&q, &part, 0, 1).unwrap());
        prop_assert_eq!(&avg, &phi_map(&q, 2, &part, 2).unwrap());
    }

    #[test]
    fn entropic_values_ignore_outcome_labels(seed in any::<u64>()) {
        let dist = random_distribution(seed, vec![2, 3, 2], true);
        let relabel = [
            LocalChannel::deterministic(&[1, 0], 2).unwrap(),
            LocalChannel::deterministic(&[2, 0, 1], 3).unwrap(),
            LocalChannel::identity(2).unwrap(),
        ];
        let a = entropic_tests(&entropy_profile(&dist).unwrap()).as_array();
        let b = entropic_tests(&entropy_profile(&dist.apply_local_channels(&relabel).unwrap()).unwrap()).as_array();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn covariance_is_symmetric_psd_with_rank_bound(seed in any::<u64>(), alphabets in prop::collection::vec(1usize..5, 1..4)) {
        let dist = random_distribution(seed, alphabets.clone(), true);
        let maps = alphabets
            .iter()
            .enumerate()
            .map(|(m, &a)| {
                let g = gaussian_matrix(seed.wrapping_add(m as u64 + 11), 3, a);
                g.column_iter().map(|c| c.into_owned()).collect::<Vec<DVector<f64>>>()
            })
            .collect();
        let fmap = FeatureMap::new(maps).unwrap();
        let cov = covariance_from_distribution(&dist, &fmap).unwrap();
        prop_assert_eq!(cov.matrix(), &cov.matrix().transpose());
        prop_assert!(min_eigenvalue(cov.matrix()) >= -1e-9 * spectral_norm(cov.matrix()).max(1.0));
        prop_assert!(rank_bound_check(&dist, &fmap).unwrap().holds);
        // Block ranks are measured against the whole covariance so constant variables count as rank 0.
        let floor = 1e-10 * spectral_norm(cov.matrix()).max(1e-300);
        for m in 0..alphabets.len() {
            let support = dist.marginalize(&[m]).unwrap().support_size(1e-15);
            let eig = cov.block(m, m).symmetric_eigenvalues();
            prop_assert!(eig.iter().filter(|&&v| v > floor).count() < support);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_models_are_sound_and_realizable(seed in any::<u64>()) {
        let model = model(seed);
        let cov = model.exact_covariance().unwrap();
        let n = model.dag().num_latents();
        let order: Vec<usize> = (0..n).rev().collect();
        prop_assert!(model.chain_decomposition_oracle(&order).is_ok());
        let rep = test_compatibility(&cov, model.dag(), &Tolerances::default()).unwrap();
        prop_assert_eq!(rep.verdict, Verdict::Feasible);
        let dec = rep.decomposition.unwrap();
        prop_assert!(dec.validate(model.dag(), &cov, &Tolerances::default()).is_ok());
        let realized = realize(&dec, model.dag(), cov.partition(), seed).unwrap();
        prop_assert!(realization_error(&realized, &dec.sum()).unwrap() <= 1e-9);
    }

    #[test]
    fn hyperedge_order_does_not_change_verdict(p in 0.0f64..=1.0, rot in 0usize..3) {
        let base = BipartiteDag::triangle();
        let order: Vec<usize> = (0..3).map(|i| (i + rot) % 3).collect();
        let permuted = base.permuted(&order).unwrap();
        let cov = family_cov(3, 2, p).unwrap();
        let tol = Tolerances::default();
        let a = test_compatibility(&cov, &base, &tol).unwrap();
        let b = test_compatibility(&cov, &permuted, &tol).unwrap();
        prop_assert_eq!(a.verdict, b.verdict);
        for (rep, dag) in [(&a, &base), (&b, &permuted)] {
            if let Some(w) = &rep.witness {
                prop_assert!(verify_witness(&w.x, &cov, dag, &tol).unwrap().valid);
            }
        }
    }

    #[test]
    fn verdicts_are_monotone(p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0, d in 2usize..4) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let tol = Tolerances::default();
        let dag = BipartiteDag::triangle();
        let a = test_compatibility(&family_cov(3, d, lo).unwrap(), &dag, &tol).unwrap().verdict;
        let b = test_compatibility(&family_cov(3, d, hi).unwrap(), &dag, &tol).unwrap().verdict;
        prop_assert!(!(a == Verdict::Feasible && b == Verdict::CertifiedInfeasible));
    }

    #[test]
    fn covariance_json_round_trip(seed in any::<u64>()) {
        let cov = model(seed).exact_covariance().unwrap();
        let text = serde_json::to_string(&cov.to_json_value()).unwrap();
        prop_assert_eq!(BlockCovariance::from_json(&text).unwrap(), cov);
    }
}

#[test]
fn benchmark_ignores_worker_count() {
    let tol = Tolerances::default();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| ising_benchmark(40, 3, &tol).unwrap())
    };
    let (one, four) = (run(1), run(4));
    assert_eq!(one.rows, four.rows);
    assert_eq!(one.table, four.table);
}
