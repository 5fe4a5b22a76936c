mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use rbsbm::block::BlockPrior;
use rbsbm::network::CovariateMode;
use rbsbm::rbm::RbmParams;
use rbsbm::sbm::{self, FitOptions, VariationalStateSbm};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn block_and_node_updates_match_pair_loops(
        n in 2usize..=30, m in 1usize..=4, k in 1usize..=4, density in 0.0f64..0.5,
        masked in 0usize..10, seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let net = random_network(n, m, density, &mut r);
        let q = random_q(n, k, &mut r);
        let prior = random_prior(k, &mut r);
        let mask = (masked > 0).then(|| random_mask(n, masked, &mut r));
        let post = sbm::update_block_posteriors(&q, &net, &prior, mask.as_ref());
        let (a, b) = brute_block_posterior(&q, &net, &prior, mask.as_ref());
        for (x, y) in post.alpha_bar.iter().zip(&a).chain(post.beta_bar.iter().zip(&b)) {
            prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }

        let rbm = random_rbm(m, k, &mut r);
        let state = VariationalStateSbm {
            q: q.clone(),
            block_post: post,
            rbm: rbm.clone(),
            elbo_trace: vec![],
            lambda: 1.0,
        };
        let i = r.random_range(0..n);
        let row = sbm::update_node_posterior(&state, &net, mask.as_ref(), i).unwrap();
        let want = brute_node_row(&q, &net, &a, &b, &covariate_term(&net, &rbm.w, &rbm.v, i), mask.as_ref(), i);
        for (x, y) in row.iter().zip(&want) {
            prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    /// Each coordinate update (block factors, then single nodes) cannot lower the ELBO.
    #[test]
    fn elbo_never_decreases_under_coordinate_updates(
        n in 2usize..=20, k in 1usize..=4, seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let net = random_network(n, 3, 0.2, &mut r);
        let prior = random_prior(k, &mut r);
        let mask = random_mask(n, 3, &mut r);
        let mut state = VariationalStateSbm {
            q: random_q(n, k, &mut r),
            block_post: sbm::update_block_posteriors(&random_q(n, k, &mut r), &net, &prior, None),
            rbm: random_rbm(3, k, &mut r),
            elbo_trace: vec![],
            lambda: 1.0,
        };
        let mut last = sbm::elbo(&state, &net, &prior, Some(&mask)).unwrap();
        for _ in 0..3 {
            state.block_post = sbm::update_block_posteriors(&state.q, &net, &prior, Some(&mask));
            let now = sbm::elbo(&state, &net, &prior, Some(&mask)).unwrap();
            prop_assert!(now >= last - 1e-8, "block update: {now} < {last}");
            last = now;
            for i in 0..n {
                let row = sbm::update_node_posterior(&state, &net, Some(&mask), i).unwrap();
                state.q.row_mut(i).assign(&ndarray::Array1::from(row));
                let now = sbm::elbo(&state, &net, &prior, Some(&mask)).unwrap();
                prop_assert!(now >= last - 1e-8, "node {i}: {now} < {last}");
                last = now;
            }
        }
    }
}

#[test]
fn frozen_rbm_reduces_to_plain_sbm() {
    for seed in 0..5u64 {
        let mut r = rng(seed);
        let net = random_network(25, 4, 0.15, &mut r);
        let k = 3;
        let prior = BlockPrior::assortative(k, 1.0, 2.0, 8.0);
        let mut rbm = RbmParams::zeros(4, k, CovariateMode::Binary);
        rbm.v = ndarray::array![0.3, -0.2, 0.0];
        let mut opts = FitOptions::new(k);
        opts.tau = 20;
        opts.batch = Some(10);
        opts.seed = seed;
        opts.prior = Some(prior.clone());
        opts.anneal = Some((0.3, 1.0));
        opts.update_rbm = false;
        opts.init_rbm = Some(rbm.clone());
        let (state, _) = sbm::fit(&net, &opts).unwrap();
        let (a, b) = reference_vsbm(&net, &prior, &rbm.v, &opts);
        for (x, y) in state
            .block_post
            .alpha_bar
            .iter()
            .zip(&a)
            .chain(state.block_post.beta_bar.iter().zip(&b))
        {
            assert!((x - y).abs() < 1e-9, "seed {seed}: {x} vs {y}");
        }
        assert_eq!(state.rbm, rbm);
    }
}
