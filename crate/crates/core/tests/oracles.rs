//! Independent oracles: closed-form spectra, root finding, enumeration and
//! sampling statistics.

mod common;

use hcmrf::experiments::{
    exact_scaled_sq_gradient, gradient_concentration, kl_exact, GraphFamily, KLMethod, SamplerSettings,
};
use hcmrf::graph::{
    degree_stats, disjoint_subset_bound, generate, is_neighborhood_disjoint, neighborhood_disjoint_subset,
    DisjointStrategy, GraphKind,
};
use hcmrf::model::{color_counts, ColorSet, Model, ModelParams, Preset};
use hcmrf::pseudolikelihood::{vertex_covariance, vertex_theta, FitOptions, PLState};
use hcmrf::sampler::{enumerate_exact, sample, DEFAULT_STATE_CAP};
use hcmrf::Execution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn neg_hessian_spectrum_matches_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let inst = common::random_instance(&mut rng, 25, 6);
        let state = PLState::new(&inst.cfg, &inst.graph, &inst.h).unwrap();
        let b = common::random_beta(&mut rng, inst.h.q(), 2.0);
        let m = state.neg_hessian(&b);
        let d = m.dim();
        let na = nalgebra::DMatrix::from_row_slice(d, d, m.as_slice());
        let mut expected: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
        expected.sort_by(f64::total_cmp);
        for (a, e) in m.eigenvalues().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }
}

/// Eigenvalues λ of diag(p) − ppᵀ away from the entries of p solve
/// Σ p_i² / (p_i − λ) = 1.
#[test]
fn vertex_covariance_satisfies_secular_equation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let q = rng.gen_range(2..7);
        let b = common::random_beta(&mut rng, q, 2.0);
        let all = ColorSet::full(q);
        let theta = vertex_theta(all, &b);
        let p = &theta[1..];
        for lambda in vertex_covariance(all, &b).eigenvalues() {
            let gap = p.iter().map(|&x| (x - lambda).abs()).fold(f64::INFINITY, f64::min);
            if gap < 1e-6 {
                continue;
            }
            let secular: f64 = p.iter().map(|&x| x * x / (x - lambda)).sum();
            assert!((secular - 1.0).abs() < 1e-8, "secular {secular} at λ = {lambda}");
        }
    }
}

#[test]
fn scalar_case_is_bernoulli_variance() {
    for b in [-2.0f64, 0.0, 0.7] {
        let t = b.exp() / (1.0 + b.exp());
        let m = vertex_covariance(ColorSet::full(2), &[b]);
        assert!((m.get(0, 0) - t * (1.0 - t)).abs() < 1e-15);
    }
}

/// A stated form of the per-vertex bound, λ_min ≥ ε₀/2 whenever every θ
/// exceeds ε₀/2, fails at the uniform law on three colors.
#[test]
fn per_vertex_bound_with_half_threshold_fails() {
    let all = ColorSet::full(3);
    let theta = vertex_theta(all, &[0.0, 0.0]);
    let lambda = vertex_covariance(all, &[0.0, 0.0]).min_eigenvalue();
    let eps0 = 0.6;
    assert!(theta.iter().all(|&t| t > eps0 / 2.0));
    assert!((lambda - 1.0 / 9.0).abs() < 1e-15);
    assert!(lambda < eps0 / 2.0);
    // The product form holds with equality here.
    assert!((lambda - theta[0] * theta[1]).abs() < 1e-15);
}

/// On cycle(6) every proper 3-coloring admits a nonzero direction d
/// (d₀ = 0) along which the log pseudo-likelihood never decreases: each
/// vertex's own color maximizes d over its allowed set. So no coloring has
/// a unique finite estimate.
/// Found here by brute force over d ∈ {−2, …, 2}², enough for any strict
/// order of three colors.
#[test]
fn six_cycle_colorings_have_no_finite_estimate() {
    let g = generate(&GraphKind::Cycle { n: 6 }, 0).unwrap();
    let h = Preset::ProperColoring { q: 3 }.build().unwrap();
    let model = Model::new(g.clone(), h.clone(), ModelParams::zeros(3)).unwrap();
    let exact = enumerate_exact(&model, DEFAULT_STATE_CAP).unwrap();
    assert_eq!(exact.states.len(), 66);
    for (cfg, _) in &exact.states {
        let state = PLState::new(cfg, &g, &h).unwrap();
        const GRID: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let found = GRID.iter().flat_map(|&x| GRID.map(move |y| [0.0, x, y])).any(|d| {
            d != [0.0; 3]
                && (0..g.n()).all(|u| {
                    let allowed = state.allowed(u);
                    allowed.iter().all(|s| d[s] <= d[cfg.get(u)])
                })
        });
        assert!(found, "{:?}", cfg.colors());
        assert!(state.classify().iter().any(|f| f.is_degenerate()));
    }
}

/// Bisection on each coordinate of L, holding the others at the fit.
#[test]
fn coloring_fit_is_the_root_found_by_bisection() {
    let g = generate(&GraphKind::Cycle { n: 12 }, 0).unwrap();
    let h = Preset::ProperColoring { q: 3 }.build().unwrap();
    let model = Model::new(g.clone(), h.clone(), ModelParams::zeros(3)).unwrap();
    let mut tested = 0;
    for seed in 0..50 {
        let cfg = sample(&model, None, seed).unwrap();
        let state = PLState::new(&cfg, &g, &h).unwrap();
        let fit = state.fit(&FitOptions::default()).unwrap();
        if fit.is_degenerate() {
            continue;
        }
        assert!(fit.converged);
        for r in 0..2 {
            let coord = |x: f64| {
                let mut b = fit.beta_hat.clone();
                b[r] = x;
                state.gradient(&b)[r]
            };
            // L_r is nonincreasing in b_r.
            let (mut lo, mut hi) = (-30.0, 30.0);
            assert!(coord(lo) > 0.0 && coord(hi) < 0.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if coord(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((0.5 * (lo + hi) - fit.beta_hat[r]).abs() < 1e-6);
        }
        tested += 1;
    }
    assert!(tested >= 5, "only {tested} non-degenerate samples");
}

#[test]
fn erdos_renyi_mean_degree() {
    let (n, c) = (200, 2.5);
    let means: Vec<f64> = (0..50)
        .map(|seed| {
            let g = generate(&GraphKind::ErdosRenyi { n, c }, seed).unwrap();
            2.0 * g.edge_count() as f64 / n as f64
        })
        .collect();
    let mean = means.iter().sum::<f64>() / 50.0;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / 49.0;
    let expected = c * (n - 1) as f64 / n as f64;
    assert!((mean - expected).abs() <= 3.0 * (var / 50.0).sqrt(), "{mean} vs {expected}");
}

#[test]
fn disjoint_subsets_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..60 {
        let n = rng.gen_range(8..150);
        let g = generate(&GraphKind::ErdosRenyi { n, c: rng.gen_range(0.5..5.0) }, rng.gen()).unwrap();
        let mut w: Vec<usize> = (0..n).collect();
        w.shuffle(&mut rng);
        w.truncate(rng.gen_range(n.div_ceil(2)..=n));
        let bound = disjoint_subset_bound(&g);
        assert!((bound - n as f64 / (4.0 * (1.0 + degree_stats(&g).avg_two_neighborhood_f64()))).abs() < 1e-12);
        for strategy in [DisjointStrategy::RandomPermutation, DisjointStrategy::Greedy] {
            let a = neighborhood_disjoint_subset(&g, &w, rng.gen(), strategy);
            assert!(is_neighborhood_disjoint(&g, &a));
            assert!(a.iter().all(|v| w.contains(v)));
            if strategy == DisjointStrategy::RandomPermutation {
                assert!(a.len() as f64 >= bound);
            }
        }
    }
}

#[test]
fn partition_derivative_on_small_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let g = common::random_graph(&mut rng, 7);
        let h = common::random_preset(&mut rng, 4).build().unwrap();
        let beta = common::random_beta(&mut rng, h.q(), 1.5);
        let m = Model::new(g, h, ModelParams::new(beta.clone()).unwrap()).unwrap();
        let exact = enumerate_exact(&m, DEFAULT_STATE_CAP).unwrap();
        // Direct expectation from the state list.
        for r in 1..m.q() {
            let direct: f64 = exact.states.iter().map(|(c, p)| p * color_counts(c, m.q()).unwrap()[r] as f64).sum();
            assert!((direct - exact.expected_counts[r]).abs() < 1e-12);
            let step = 1e-5;
            let at = |d: f64| {
                let mut b = beta.clone();
                b[r - 1] += d;
                enumerate_exact(&m.with_params(ModelParams::new(b).unwrap()).unwrap(), DEFAULT_STATE_CAP)
                    .unwrap()
                    .log_partition
            };
            let fd = (at(step) - at(-step)) / (2.0 * step);
            assert!((fd - direct).abs() <= 1e-6 * direct.abs().max(1e-3));
        }
    }
}

#[test]
fn kl_methods_agree_on_disconnected_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut done = 0;
    while done < 50 {
        let mut parts = Vec::new();
        let mut total = 0;
        while parts.len() < 3 {
            let n = rng.gen_range(1..=8usize);
            if total + n > 12 {
                break;
            }
            total += n;
            parts.push(match rng.gen_range(0..3) {
                0 => GraphKind::Path { n },
                1 if n >= 3 => GraphKind::Cycle { n },
                _ => GraphKind::ErdosRenyi { n, c: rng.gen_range(0.5..2.0f64).min(n as f64) },
            });
        }
        if parts.len() < 2 {
            continue;
        }
        let g = generate(&GraphKind::DisjointUnion { parts }, rng.gen()).unwrap();
        let preset = common::random_preset(&mut rng, 3);
        let h = preset.build().unwrap();
        let a = common::random_beta(&mut rng, h.q(), 1.0);
        let b = common::random_beta(&mut rng, h.q(), 1.0);
        let Ok(brute) = kl_exact(&g, &h, &a, &b, DEFAULT_STATE_CAP, KLMethod::BruteForce) else { continue };
        let fact = kl_exact(&g, &h, &a, &b, DEFAULT_STATE_CAP, KLMethod::ComponentFactorized).unwrap();
        assert!(brute.kl >= -1e-12);
        assert!((brute.kl - fact.kl).abs() < 1e-9, "{} vs {}", brute.kl, fact.kl);
        assert_eq!(kl_exact(&g, &h, &a, &a, DEFAULT_STATE_CAP, KLMethod::BruteForce).unwrap().kl, 0.0);
        done += 1;
    }
}

#[test]
fn kl_is_positive_when_parameters_differ() {
    let g = generate(&GraphKind::Cycle { n: 5 }, 0).unwrap();
    let h = Preset::Hardcore.build().unwrap();
    let kl = kl_exact(&g, &h, &[0.0], &[0.5], DEFAULT_STATE_CAP, KLMethod::BruteForce).unwrap().kl;
    assert!(kl > 1e-6);
}

#[test]
fn triangles_never_use_the_pendant_color() {
    let h = Preset::CounterexampleH.build().unwrap();
    for (triangles, k) in [(1, 2), (2, 3), (3, 4)] {
        let g = generate(&GraphKind::TrianglesPlusPath { triangles, path_len: k }, 0).unwrap();
        let m = Model::new(g, h.clone(), ModelParams::zeros(4)).unwrap();
        for (cfg, _) in &enumerate_exact(&m, DEFAULT_STATE_CAP).unwrap().states {
            assert!(cfg.colors()[..3 * triangles].iter().all(|&c| c != 3));
            assert!(color_counts(cfg, 4).unwrap()[3] <= k);
        }
    }
}

/// Monte Carlo mean of n‖L‖² on K₂ against the enumerated value.
#[test]
fn concentration_on_k2_matches_enumeration() {
    let beta = [0.4];
    let model = Model::new(
        generate(&GraphKind::Path { n: 2 }, 0).unwrap(),
        Preset::Hardcore.build().unwrap(),
        ModelParams::new(beta.to_vec()).unwrap(),
    )
    .unwrap();
    let exact = exact_scaled_sq_gradient(&model, DEFAULT_STATE_CAP).unwrap();
    let rows = gradient_concentration(
        &GraphFamily::Path,
        Preset::Hardcore,
        &beta,
        &[2],
        20_000,
        &SamplerSettings::default(),
        11,
        Execution::Parallel,
    )
    .unwrap();
    let row = &rows[0];
    assert!((row.mean - exact).abs() <= 4.0 * row.std_error, "{} ± {} vs {exact}", row.mean, row.std_error);
}

#[test]
fn proper_coloring_of_even_cycle_counts() {
    // 3-colorings of C_n number 2^n + 2 for even n.
    let g = generate(&GraphKind::Cycle { n: 6 }, 0).unwrap();
    let m = Model::new(g, Preset::ProperColoring { q: 3 }.build().unwrap(), ModelParams::zeros(3)).unwrap();
    let ex = enumerate_exact(&m, DEFAULT_STATE_CAP).unwrap();
    assert_eq!(ex.state_count, 66);
    assert!((ex.log_partition - 66f64.ln()).abs() < 1e-12);
}
