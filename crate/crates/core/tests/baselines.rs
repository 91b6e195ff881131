use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrt_core::baselines::*;
use rrt_core::descriptor::l2_normalize;
use rrt_core::retrieval::knn_search;
use rrt_core::{GlobalIndex, ImageRecord, LocalDescriptor, Method};

fn project(h: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let q = h * Vector3::new(p[0], p[1], 1.0);
    [q.x / q.z, q.y / q.z]
}

fn planted() -> Matrix3<f64> {
    Matrix3::new(0.9, 0.12, 40.0, -0.08, 1.05, -25.0, 2e-4, -1e-4, 1.0)
}

/// 70 exact-map correspondences with sub-pixel noise followed by 30 random
/// ones.
fn planted_points(seed: u64) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = planted();
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for i in 0..100 {
        let p = [rng.random_range(0.0..800.0), rng.random_range(0.0..600.0)];
        let q = if i < 70 {
            let q = project(&h, p);
            [q[0] + rng.random_range(-0.5..0.5), q[1] + rng.random_range(-0.5..0.5)]
        } else {
            [rng.random_range(0.0..800.0), rng.random_range(0.0..600.0)]
        };
        src.push(p);
        dst.push(q);
    }
    (src, dst)
}

#[test]
fn ransac_recovers_planted_inliers() {
    for seed in 0..5 {
        let (src, dst) = planted_points(100 + seed);
        let cfg = GvConfig { seed, ..GvConfig::default() };
        let out = ransac_homography(&src, &dst, &cfg);
        let found = out.mask[..70].iter().filter(|&&m| m).count();
        assert!(found as f64 >= 0.95 * 70.0, "seed {seed}: {found}");
        assert_eq!(out.inliers, out.mask.iter().filter(|&&m| m).count());
        let h = out.homography.unwrap();
        let probe = [400.0, 300.0];
        let (a, b) = (h.apply(probe).unwrap(), project(&planted(), probe));
        assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 2.0);
        assert_eq!(ransac_homography(&src, &dst, &cfg), out);
    }
}

#[test]
fn ransac_commutes_with_relabeling() {
    let (src, dst) = planted_points(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let schedule: Vec<[usize; 4]> = (0..300)
        .map(|_| {
            let s = rand::seq::index::sample(&mut rng, 100, 4);
            [s.index(0), s.index(1), s.index(2), s.index(3)]
        })
        .collect();
    let base = ransac_with_schedule(&src, &dst, &schedule, 3.0);

    let mut perm: Vec<usize> = (0..100).collect();
    for i in (1..100).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    // New position j holds old point perm[j].
    let mut inverse = vec![0; 100];
    for (j, &old) in perm.iter().enumerate() {
        inverse[old] = j;
    }
    let psrc: Vec<[f64; 2]> = perm.iter().map(|&i| src[i]).collect();
    let pdst: Vec<[f64; 2]> = perm.iter().map(|&i| dst[i]).collect();
    let psched: Vec<[usize; 4]> = schedule.iter().map(|s| s.map(|i| inverse[i])).collect();
    let moved = ransac_with_schedule(&psrc, &pdst, &psched, 3.0);

    assert_eq!(moved.inliers, base.inliers);
    for (j, &old) in perm.iter().enumerate() {
        assert_eq!(moved.mask[j], base.mask[old]);
    }
}

fn local(vec: Vec<f32>, u: f32, v: f32) -> LocalDescriptor {
    LocalDescriptor { vec, u, v, scale_index: 0 }
}

fn random_locals(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<LocalDescriptor> {
    (0..n)
        .map(|_| {
            let v: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            local(v, rng.random_range(0.0..500.0), rng.random_range(0.0..500.0))
        })
        .collect()
}

fn brute_mutual(a: &[LocalDescriptor], b: &[LocalDescriptor], ratio: Option<f64>) -> Vec<(usize, usize)> {
    let d = |x: &LocalDescriptor, y: &LocalDescriptor| {
        x.vec.iter().zip(&y.vec).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum::<f64>().sqrt()
    };
    let nearest = |x: &LocalDescriptor, set: &[LocalDescriptor]| {
        let mut ds: Vec<(f64, usize)> = set.iter().enumerate().map(|(j, y)| (d(x, y), j)).collect();
        ds.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap().then(p.1.cmp(&q.1)));
        ds
    };
    let ok = |ds: &[(f64, usize)]| match ratio {
        Some(r) if ds.len() > 1 => ds[0].0 <= r * ds[1].0,
        _ => true,
    };
    let mut out = Vec::new();
    for (i, x) in a.iter().enumerate() {
        let f = nearest(x, b);
        let j = f[0].1;
        let g = nearest(&b[j], a);
        if g[0].1 == i && ok(&f) && ok(&g) {
            out.push((i, j));
        }
    }
    out
}

#[test]
fn mutual_nn_matches_brute_force_and_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..50 {
        let a = random_locals(&mut rng, 3 + trial % 17, 6);
        let b = random_locals(&mut rng, 2 + trial % 13, 6);
        for ratio in [None, Some(0.9), Some(0.6)] {
            let got: Vec<(usize, usize)> = mutual_nn_matches(&a, &b, ratio).iter().map(|m| (m.a, m.b)).collect();
            assert_eq!(got, brute_mutual(&a, &b, ratio));
            let mut back: Vec<(usize, usize)> = mutual_nn_matches(&b, &a, ratio).iter().map(|m| (m.b, m.a)).collect();
            back.sort();
            assert_eq!(got, back);
        }
    }
    assert!(mutual_nn_matches(&[], &random_locals(&mut rng, 3, 6), None).is_empty());
}

fn image(id: u32, locals: Vec<LocalDescriptor>) -> ImageRecord {
    ImageRecord { id, label: 0, global: vec![1.0], locals }
}

#[test]
fn gv_counts_every_local_of_an_identical_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let locals = random_locals(&mut rng, 25, 8);
    let a = image(0, locals.clone());
    let b = image(1, locals);
    assert_eq!(gv_score(&a, &b, &GvConfig::default()), 25);
}

#[test]
fn gv_finds_a_planted_affine_copy() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let shared = random_locals(&mut rng, 20, 8);
    let (c, s) = (0.3f32.cos(), 0.3f32.sin());
    let moved: Vec<LocalDescriptor> = shared
        .iter()
        .map(|l| {
            local(
                l.vec.clone(),
                1.1 * (c * l.u - s * l.v) + 30.0,
                1.1 * (s * l.u + c * l.v) - 12.0,
            )
        })
        .collect();
    let mut qa = shared.clone();
    qa.extend(random_locals(&mut rng, 10, 8));
    let mut qb = moved;
    qb.extend(random_locals(&mut rng, 10, 8));
    let score = gv_score(&image(0, qa.clone()), &image(1, qb), &GvConfig::default());
    assert!(score >= 20, "{score}");

    let unrelated = image(2, random_locals(&mut rng, 30, 8));
    assert!(gv_score(&image(0, qa), &unrelated, &GvConfig::default()) < 10);
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    let v: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.iter().map(|x| x / n).collect()
}

#[test]
fn aqe_matches_brute_force_requery() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let rows: Vec<Vec<f32>> = (0..200).map(|_| unit(&mut rng, 12)).collect();
    let index = GlobalIndex::from_vectors((0..200).collect(), &rows, false).unwrap();
    let cfg = AqeConfig::default();
    assert_eq!((cfg.nqe, cfg.alpha), (2, 0.3));
    let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>();
    for qi in 0..10u32 {
        let raw = unit(&mut rng, 12);
        let q = l2_normalize(&raw).unwrap();
        let qid = 500 + qi;

        let mut first: Vec<(u32, f64)> = (0..200u32).map(|j| (j, dot(index.row(j as usize), &q))).collect();
        first.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut acc: Vec<f64> = q.iter().map(|&x| x as f64).collect();
        for &(j, s) in &first[..2] {
            let w = s.max(0.0).powf(0.3);
            for (a, &x) in acc.iter_mut().zip(index.row(j as usize)) {
                *a += w * x as f64;
            }
        }
        let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expanded: Vec<f32> = acc.iter().map(|x| (x / n) as f32).collect();
        let mut second: Vec<(u32, f64)> = (0..200u32).map(|j| (j, dot(index.row(j as usize), &expanded))).collect();
        second.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

        let got = aqe_search(&index, qid, &raw, &cfg).unwrap();
        assert_eq!(got.method, Method::Aqe);
        assert_eq!(got.ids(), second.iter().map(|s| s.0).collect::<Vec<_>>());
        for (a, b) in got.neighbors.iter().zip(&second) {
            assert!((a.score - b.1).abs() < 1e-9);
        }
    }
}

#[test]
fn aqe_with_no_expansion_is_plain_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f32>> = (0..50).map(|_| unit(&mut rng, 5)).collect();
    let index = GlobalIndex::from_vectors((0..50).collect(), &rows, false).unwrap();
    let q = unit(&mut rng, 5);
    let cfg = AqeConfig { nqe: 0, alpha: 0.3 };
    let a = aqe_search(&index, 999, &q, &cfg).unwrap();
    let b = knn_search(&index, 999, &l2_normalize(&q).unwrap(), 50).unwrap();
    assert_eq!(a.neighbors, b.neighbors);
}

proptest! {
    #[test]
    fn aqe_weight_falls_with_alpha(sim in 0.0f64..1.0, a in 0.0f64..5.0, extra in 0.0f64..5.0) {
        let lo = aqe_weights(&[sim], 1, a)[0];
        let hi = aqe_weights(&[sim], 1, a + extra)[0];
        prop_assert!(hi <= lo + 1e-15);
        prop_assert!((0.0..=1.0).contains(&lo));
    }

    #[test]
    fn aqe_weights_follow_similarity_order(mut sims in proptest::collection::vec(-1.0f64..1.0, 1..8), alpha in 0.01f64..4.0) {
        sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let w = aqe_weights(&sims, sims.len(), alpha);
        prop_assert!(w.windows(2).all(|p| p[0] >= p[1]));
        prop_assert!(w.iter().zip(&sims).all(|(w, s)| *s > 0.0 || *w == 0.0));
    }

    #[test]
    fn expanded_query_is_unit(seed in 0u64..500, nqe in 0usize..4, alpha in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = unit(&mut rng, 6);
        let ds: Vec<Vec<f32>> = (0..4).map(|_| unit(&mut rng, 6)).collect();
        let pairs: Vec<(&[f32], f64)> = ds.iter().map(|d| (d.as_slice(), 0.5)).collect();
        if let Ok(out) = alpha_qe_expand(&q, &pairs, nqe, alpha) {
            let n: f64 = out.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-5);
        }
    }
}
