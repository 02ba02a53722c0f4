use proptest::prelude::*;

use super::*;
use crate::nn::RngState;

fn gaussian_points(n: usize, d: usize, seed: u64, scale: f64) -> Vec<Vec<f64>> {
    let mut rng = RngState::new(seed);
    (0..n).map(|_| (0..d).map(|_| scale * rng.standard_normal()).collect()).collect()
}

fn row_perplexity_oracle(row: &[f64]) -> f64 {
    let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
    2f64.powf(h)
}

fn small_config(seed: u64) -> TsneConfig {
    TsneConfig { perplexity: 5.0, seed, ..TsneConfig::default() }
}

#[test]
fn equidistant_points_give_uniform_p() {
    // simplex vertices: every pair at distance √2
    let x: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for perplexity in [3.0, 2.0] {
        let a = pairwise_affinities(&x, perplexity).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.0 } else { 1.0 / 12.0 };
                assert!((a.get(i, j) - want).abs() < 1e-15);
            }
        }
        // a uniform row always has perplexity 3, so only the target of 3 is reachable
        assert_eq!(a.warnings.is_empty(), perplexity == 3.0);
    }
}

#[test]
fn affinity_invariants_and_row_perplexity() {
    let x = gaussian_points(40, 6, 3, 1.0);
    let a = pairwise_affinities(&x, 10.0).unwrap();
    assert!(a.warnings.is_empty());
    let total: f64 = a.p.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    for i in 0..a.n {
        assert_eq!(a.get(i, i), 0.0);
        for j in 0..a.n {
            assert!(a.get(i, j) >= 0.0);
            assert!((a.get(i, j) - a.get(j, i)).abs() < 1e-12);
        }
        assert!((a.row_perplexity[i] - 10.0).abs() < 1e-3);
    }
    // recompute each conditional row from σᵢ and check its entropy independently
    let d = squared_distances(&x);
    for i in 0..a.n {
        let s2 = a.sigma[i] * a.sigma[i];
        let mut row: Vec<f64> = (0..a.n).map(|j| if j == i { 0.0 } else { (-d[i * a.n + j] / (2.0 * s2)).exp() }).collect();
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= z);
        assert!((row_perplexity_oracle(&row) - 10.0).abs() < 1e-3, "row {i}");
    }
}

#[test]
fn tight_clusters_keep_mass_within() {
    let mut x = gaussian_points(10, 3, 5, 0.01);
    for p in x.iter_mut().skip(5) {
        p[0] += 10.0;
    }
    let a = pairwise_affinities(&x, 3.0).unwrap();
    let (mut within, mut across) = (0.0, 0.0);
    for i in 0..10 {
        for j in 0..10 {
            if (i < 5) == (j < 5) {
                within += a.get(i, j);
            } else {
                across += a.get(i, j);
            }
        }
    }
    assert!(within > across);
    assert!(within > 0.999);
}

#[test]
fn duplicate_heavy_input_warns() {
    let mut x = vec![vec![0.0, 0.0]; 8];
    x.push(vec![1.0, 0.0]);
    x.push(vec![0.0, 1.0]);
    // each duplicate row has at least 7 exact neighbours, so perplexity 2 is unreachable
    let a = pairwise_affinities(&x, 2.0).unwrap();
    assert!(!a.warnings.is_empty());
    assert!(a.p.iter().all(|v| v.is_finite()));
    assert!((a.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn preconditions_rejected() {
    let x = gaussian_points(3, 2, 0, 1.0);
    assert!(matches!(pairwise_affinities(&x, 1.0), Err(TsneError::TooFewPoints(3))));
    assert!(matches!(tsne_embed(&x, &TsneConfig::default()), Err(TsneError::TooFewPoints(3))));
    let x = gaussian_points(6, 2, 0, 1.0);
    assert!(matches!(pairwise_affinities(&x, 6.0), Err(TsneError::BadPerplexity { .. })));
    assert!(matches!(pairwise_affinities(&x, 0.0), Err(TsneError::BadPerplexity { .. })));
    let mut bad = x.clone();
    bad[2][1] = f64::NAN;
    assert!(matches!(pairwise_affinities(&bad, 2.0), Err(TsneError::NonFinite)));
    let mut ragged = x;
    ragged[1].push(0.0);
    assert!(matches!(tsne_embed(&ragged, &TsneConfig::default()), Err(TsneError::MixedDimensions { .. })));
}

#[test]
fn gradient_matches_finite_differences() {
    let x = gaussian_points(10, 5, 11, 1.0);
    let p = pairwise_affinities(&x, 3.0).unwrap().p;
    let mut rng = RngState::new(12);
    let y: Vec<[f64; 2]> = (0..10).map(|_| [rng.standard_normal(), rng.standard_normal()]).collect();
    let g = kl_gradient(&p, &y, 1.0);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..10 {
        for c in 0..2 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i][c] += eps;
            ym[i][c] -= eps;
            let fd = (kl_divergence(&p, &yp) - kl_divergence(&p, &ym)) / (2.0 * eps);
            worst = worst.max((fd - g[i][c]).abs() / fd.abs().max(g[i][c].abs()).max(1e-8));
        }
    }
    assert!(worst < 1e-4, "relative error {worst}");
}

/// Direct per-pair evaluation of Q, KL and the gradient.
fn naive_kl_and_grad(p: &[f64], y: &[[f64; 2]]) -> (f64, Vec<[f64; 2]>) {
    let n = y.len();
    let kernel = |i: usize, j: usize| 1.0 / (1.0 + (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2));
    let mut z = 0.0;
    for k in 0..n {
        for l in 0..n {
            if k != l {
                z += kernel(k, l);
            }
        }
    }
    let mut kl = 0.0;
    let mut g = vec![[0.0; 2]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let q = kernel(i, j) / z;
            let pij = p[i * n + j];
            if pij > 0.0 {
                kl += pij * (pij / q).ln();
            }
            for c in 0..2 {
                g[i][c] += 4.0 * (pij - q) * (y[i][c] - y[j][c]) * kernel(i, j);
            }
        }
    }
    (kl, g)
}

#[test]
fn exact_evaluation_matches_naive_oracle() {
    for n in [4usize, 7, 12] {
        let x = gaussian_points(n, 3, n as u64, 1.0);
        let p = pairwise_affinities(&x, (n as f64 - 1.0) / 3.0).unwrap().p;
        let y: Vec<[f64; 2]> = gaussian_points(n, 2, 100 + n as u64, 2.0).into_iter().map(|v| [v[0], v[1]]).collect();
        let (kl, g) = naive_kl_and_grad(&p, &y);
        assert!((kl_divergence(&p, &y) - kl).abs() < 1e-12);
        for (a, b) in kl_gradient(&p, &y, 1.0).iter().zip(&g) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
        let q = joint_q(&y);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

fn three_clusters() -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = RngState::new(77);
    let centers: Vec<Vec<f64>> = (0..3).map(|_| (0..50).map(|_| 10.0 * rng.standard_normal()).collect()).collect();
    let mut x = Vec::new();
    let mut label = Vec::new();
    for i in 0..90 {
        let c = i % 3;
        x.push(centers[c].iter().map(|m| m + rng.standard_normal()).collect());
        label.push(c);
    }
    (x, label)
}

#[test]
fn three_gaussian_clusters_separate() {
    let (x, label) = three_clusters();
    let emb = tsne_embed(&x, &TsneConfig { seed: 1, ..TsneConfig::default() }).unwrap();
    assert!(emb.y.iter().all(|p| p[0].is_finite() && p[1].is_finite()));
    assert!(emb.kl_history.iter().all(|&k| k >= 0.0));
    assert_eq!(emb.kl_history.len(), 1000);
    let (mut within, mut nw, mut between, mut nb) = (0.0, 0, 0.0, 0);
    for i in 0..90 {
        for j in (i + 1)..90 {
            let d = ((emb.y[i][0] - emb.y[j][0]).powi(2) + (emb.y[i][1] - emb.y[j][1]).powi(2)).sqrt();
            if label[i] == label[j] {
                within += d;
                nw += 1;
            } else {
                between += d;
                nb += 1;
            }
        }
    }
    let (within, between) = (within / nw as f64, between / nb as f64);
    assert!(within < between / 3.0, "within {within} between {between}");
    // after exaggeration KL may not rise across any 50-iteration window
    for t in 250..(1000 - 50) {
        assert!(emb.kl_history[t + 50] <= emb.kl_history[t] + 1e-6, "KL rose at {t}");
    }
}

#[test]
fn duplicate_pair_embeds_closest() {
    let mut x = gaussian_points(20, 8, 21, 1.0);
    x[7] = x[3].clone();
    let emb = tsne_embed(&x, &small_config(4)).unwrap();
    let d = |i: usize, j: usize| (emb.y[i][0] - emb.y[j][0]).powi(2) + (emb.y[i][1] - emb.y[j][1]).powi(2);
    let dup = d(3, 7);
    for i in 0..20 {
        for j in (i + 1)..20 {
            if (i, j) != (3, 7) {
                assert!(dup < d(i, j), "pair ({i},{j})");
            }
        }
    }
}

#[test]
fn same_seed_same_embedding() {
    let x = gaussian_points(15, 4, 8, 1.0);
    let cfg = TsneConfig { iterations: 300, ..small_config(9) };
    let a = tsne_embed(&x, &cfg).unwrap();
    let b = tsne_embed(&x, &cfg).unwrap();
    assert_eq!(a, b);
    let c = tsne_embed(&x, &TsneConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.y, c.y);
}

#[test]
fn small_cohorts_clamp_perplexity() {
    let x = gaussian_points(10, 3, 2, 1.0);
    let emb = tsne_embed(&x, &TsneConfig { iterations: 50, ..TsneConfig::default() }).unwrap();
    assert!((emb.perplexity - 3.0).abs() < 1e-12);
    assert!(emb.warnings.iter().any(|w| w.contains("clamped")));
}

fn items(cohort: &str, n: usize, dim: usize, offset: usize) -> Vec<CohortItem> {
    gaussian_points(n, dim, offset as u64, 1.0)
        .into_iter()
        .enumerate()
        .map(|(i, w)| CohortItem { trial_id: offset + i, cohort: cohort.into(), weights: w, accuracy: 50.0, label: AccuracyGroup::Mid })
        .collect()
}

#[test]
fn cohorts_embed_separately() {
    let cfg = TsneConfig { iterations: 100, ..TsneConfig::default() };
    let one = project_cohorts(&items("a", 30, 6, 0), &cfg).unwrap();
    assert_eq!(one.points.len(), 30);
    let mut all = items("a", 8, 6, 0);
    all.extend(items("b", 6, 9, 100));
    all.extend(items("c", 2, 9, 200));
    let p = project_cohorts(&all, &cfg).unwrap();
    assert_eq!(p.points.iter().filter(|q| q.cohort == "a").count(), 8);
    assert_eq!(p.points.iter().filter(|q| q.cohort == "b").count(), 6);
    assert!(p.warnings.iter().any(|w| w.contains("`c`")));

    let mut mixed = items("a", 8, 6, 0);
    mixed[3].weights.push(1.0);
    assert!(matches!(project_cohorts(&mixed, &cfg), Err(TsneError::MixedDimensions { .. })));
}

#[test]
fn tight_high_group_separates_from_scattered_low() {
    let mut rng = RngState::new(31);
    let center: Vec<f64> = (0..40).map(|_| rng.standard_normal()).collect();
    let mut all = Vec::new();
    for i in 0..30 {
        let high = i < 12;
        let w: Vec<f64> =
            center.iter().map(|c| if high { c + 0.05 * rng.standard_normal() } else { 3.0 * rng.standard_normal() }).collect();
        let label = if high { AccuracyGroup::High } else { AccuracyGroup::Low };
        all.push(CohortItem { trial_id: i, cohort: "dnn".into(), weights: w, accuracy: 0.0, label });
    }
    let p = project_cohorts(&all, &TsneConfig { seed: 2, ..TsneConfig::default() }).unwrap();
    let pick = |hi: bool| -> Vec<[f64; 2]> {
        p.points.iter().filter(|q| (q.label == AccuracyGroup::High) == hi).map(|q| [q.x, q.y]).collect()
    };
    let (within, across) = separation(&pick(true), &pick(false));
    assert!(within < across, "within {within} across {across}");
}

#[test]
fn embedding_csv_layout() {
    let proj = Projection {
        points: vec![ProjectedPoint { trial_id: 4, cohort: "dnn-5x5-abc".into(), x: 1.5, y: -2.0, accuracy: 11.35, label: AccuracyGroup::Non }],
        warnings: vec![],
    };
    let mut out = Vec::new();
    proj.write_csv(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "trial_id,cohort,x,y,accuracy,label\n4,dnn-5x5-abc,1.5,-2,11.35,non\n");
}

#[test]
fn cohort_key_tracks_spec() {
    use crate::models::ModelSpec;
    let a = ModelSpec::dnn([1, 28, 28], 100, 100);
    let b = ModelSpec::dnn([1, 28, 28], 100, 100).with_init(0.0, 0.05);
    let c = ModelSpec::dnn([1, 28, 28], 100, 100).with_init(0.0, 0.1);
    assert_eq!(cohort_key(&a), cohort_key(&b));
    assert_ne!(cohort_key(&a), cohort_key(&c));
    assert!(cohort_key(&a).starts_with("dnn-100x100-"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn affinities_are_a_joint_distribution(seed in 0u64..1000, n in 4usize..20, d in 1usize..6) {
        let x = gaussian_points(n, d, seed, 1.0);
        let perp = (n as f64 - 1.0) / 3.0;
        let a = pairwise_affinities(&x, perp).unwrap();
        prop_assert!((a.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..n {
            prop_assert_eq!(a.get(i, i), 0.0);
            for j in 0..n {
                prop_assert!(a.get(i, j) >= 0.0);
                prop_assert!((a.get(i, j) - a.get(j, i)).abs() < 1e-12);
            }
            prop_assert!((a.row_perplexity[i] - perp).abs() < 1e-3);
        }
    }

    #[test]
    fn kl_is_nonnegative(seed in 0u64..1000, n in 4usize..12) {
        let x = gaussian_points(n, 3, seed, 1.0);
        let p = pairwise_affinities(&x, 1.0).unwrap().p;
        let y: Vec<[f64; 2]> = gaussian_points(n, 2, seed + 1, 1.0).into_iter().map(|v| [v[0], v[1]]).collect();
        prop_assert!(kl_divergence(&p, &y) >= 0.0);
    }
}

