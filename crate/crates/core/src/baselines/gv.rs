use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::{ImageRecord, LocalDescriptor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub a: usize,
    pub b: usize,
    /// Euclidean distance between the two descriptors.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GvConfig {
    pub iterations: usize,
    /// Inlier bound on the symmetric transfer error, in pixels.
    pub threshold: f64,
    /// Lowe ratio bound; `None` disables the test.
    pub ratio: Option<f64>,
    pub seed: u64,
}

impl Default for GvConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            threshold: 3.0,
            ratio: None,
            seed: 0,
        }
    }
}

/// Plane projective map, scaled so that `h[(2,2)] == 1` when that entry is
/// not zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    fn normalized(m: Matrix3<f64>) -> Option<Self> {
        let m = if m[(2, 2)].abs() > 1e-12 { m / m[(2, 2)] } else { m };
        let scale = m.norm();
        if !m.iter().all(|x| x.is_finite()) || m.determinant().abs() < 1e-12 * scale.powi(3) {
            return None;
        }
        Some(Self(m))
    }

    pub fn apply(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        transfer(&self.0, p)
    }
}

fn transfer(h: &Matrix3<f64>, p: [f64; 2]) -> Option<[f64; 2]> {
    let q = h * Vector3::new(p[0], p[1], 1.0);
    (q.z.abs() > 1e-12).then(|| [q.x / q.z, q.y / q.z])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutcome {
    pub homography: Option<Homography>,
    pub inliers: usize,
    pub mask: Vec<bool>,
}

impl RansacOutcome {
    fn none(n: usize) -> Self {
        Self {
            homography: None,
            inliers: 0,
            mask: vec![false; n],
        }
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

/// Nearest and second-nearest (squared distance) of `row` among `others`.
fn two_nearest(row: &[f32], others: &[LocalDescriptor]) -> (usize, f64, f64) {
    let mut best = (0, f64::INFINITY);
    let mut second = f64::INFINITY;
    for (j, o) in others.iter().enumerate() {
        let d = sq_dist(row, &o.vec);
        if d < best.1 {
            second = best.1;
            best = (j, d);
        } else if d < second {
            second = d;
        }
    }
    (best.0, best.1, second)
}

/// Pairs that are each other's nearest neighbor in descriptor space. With a
/// ratio bound both directions must also pass the ratio test.
pub fn mutual_nn_matches(a: &[LocalDescriptor], b: &[LocalDescriptor], ratio: Option<f64>) -> Vec<Match> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let fwd: Vec<(usize, f64, f64)> = a.iter().map(|l| two_nearest(&l.vec, b)).collect();
    let bwd: Vec<(usize, f64, f64)> = b.iter().map(|l| two_nearest(&l.vec, a)).collect();
    let passes = |(_, d1, d2): (usize, f64, f64)| match ratio {
        Some(r) => d2.is_infinite() || d1.sqrt() <= r * d2.sqrt(),
        None => true,
    };
    fwd.iter()
        .enumerate()
        .filter(|&(i, f)| bwd[f.0].0 == i && passes(*f) && passes(bwd[f.0]))
        .map(|(i, f)| Match {
            a: i,
            b: f.0,
            distance: f.1.sqrt(),
        })
        .collect()
}

/// Similarity transform taking the points to zero mean and mean distance √2.
fn normalizer(pts: &[[f64; 2]]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean = pts.iter().map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if mean > 0.0 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Normalized direct linear transform; least squares for more than four
/// correspondences.
fn dlt(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Option<Homography> {
    let (ts, td) = (normalizer(src), normalizer(dst));
    let mut a = DMatrix::<f64>::zeros(2 * src.len(), 9);
    for (i, (p, q)) in src.iter().zip(dst).enumerate() {
        let p = ts * Vector3::new(p[0], p[1], 1.0);
        let q = td * Vector3::new(q[0], q[1], 1.0);
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r1 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r2 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(2 * i, c)] = r1[c];
            a[(2 * i + 1, c)] = r2[c];
        }
    }
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))?;
    let h = eig.eigenvectors.column(k);
    let hn = Matrix3::from_row_slice(h.as_slice());
    let td_inv = td.try_inverse()?;
    Homography::normalized(td_inv * hn * ts)
}

fn collinear(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> bool {
    let cross = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let scale = ((q[0] - p[0]).hypot(q[1] - p[1])) * ((r[0] - p[0]).hypot(r[1] - p[1]));
    cross.abs() <= 1e-6 * scale.max(1e-12)
}

fn degenerate(pts: &[[f64; 2]; 4]) -> bool {
    [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]]
        .iter()
        .any(|&[i, j, k]| collinear(pts[i], pts[j], pts[k]))
}

/// Inlier mask under `h`: forward plus backward squared transfer error below
/// `threshold²`.
fn inlier_mask(h: &Homography, src: &[[f64; 2]], dst: &[[f64; 2]], threshold: f64) -> Option<Vec<bool>> {
    let inv = h.0.try_inverse()?;
    let t2 = threshold * threshold;
    Some(
        src.iter()
            .zip(dst)
            .map(|(p, q)| {
                let (Some(f), Some(b)) = (transfer(&h.0, *p), transfer(&inv, *q)) else {
                    return false;
                };
                let e = (f[0] - q[0]).powi(2) + (f[1] - q[1]).powi(2) + (b[0] - p[0]).powi(2) + (b[1] - p[1]).powi(2);
                e < t2
            })
            .collect(),
    )
}

/// Hypothesize-and-verify over an explicit list of 4-point samples, then a
/// least-squares refit on the best consensus set.
pub fn ransac_with_schedule(
    src: &[[f64; 2]],
    dst: &[[f64; 2]],
    schedule: &[[usize; 4]],
    threshold: f64,
) -> RansacOutcome {
    let n = src.len();
    if n < 4 || dst.len() != n {
        return RansacOutcome::none(n);
    }
    let mut best: Option<(Homography, Vec<bool>, usize)> = None;
    for s in schedule {
        let ps = s.map(|i| src[i]);
        let qs = s.map(|i| dst[i]);
        if degenerate(&ps) || degenerate(&qs) {
            continue;
        }
        let Some(h) = dlt(&ps, &qs) else { continue };
        let Some(mask) = inlier_mask(&h, src, dst, threshold) else { continue };
        let count = mask.iter().filter(|&&m| m).count();
        if best.as_ref().is_none_or(|b| count > b.2) {
            best = Some((h, mask, count));
        }
    }
    let Some((h, mask, count)) = best else {
        return RansacOutcome::none(n);
    };
    let (cs, cd): (Vec<[f64; 2]>, Vec<[f64; 2]>) = mask
        .iter()
        .zip(src.iter().zip(dst))
        .filter(|(m, _)| **m)
        .map(|(_, (p, q))| (*p, *q))
        .unzip();
    if let Some(refit) = dlt(&cs, &cd) {
        if let Some(m2) = inlier_mask(&refit, src, dst, threshold) {
            let c2 = m2.iter().filter(|&&m| m).count();
            if c2 >= count {
                return RansacOutcome {
                    homography: Some(refit),
                    inliers: c2,
                    mask: m2,
                };
            }
        }
    }
    RansacOutcome {
        homography: Some(h),
        inliers: count,
        mask,
    }
}

/// Seeded RANSAC homography between corresponding point lists.
pub fn ransac_homography(src: &[[f64; 2]], dst: &[[f64; 2]], cfg: &GvConfig) -> RansacOutcome {
    let n = src.len();
    if n < 4 {
        return RansacOutcome::none(n);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let schedule: Vec<[usize; 4]> = (0..cfg.iterations)
        .map(|_| {
            let idx = sample(&mut rng, n, 4);
            [idx.index(0), idx.index(1), idx.index(2), idx.index(3)]
        })
        .collect();
    ransac_with_schedule(src, dst, &schedule, cfg.threshold)
}

/// Inlier count of the verified homography between two images, 0 on failure.
pub fn gv_score(query: &ImageRecord, candidate: &ImageRecord, cfg: &GvConfig) -> usize {
    let matches = mutual_nn_matches(&query.locals, &candidate.locals, cfg.ratio);
    if matches.len() < 4 {
        return 0;
    }
    let pos = |l: &LocalDescriptor| [l.u as f64, l.v as f64];
    let src: Vec<[f64; 2]> = matches.iter().map(|m| pos(&query.locals[m.a])).collect();
    let dst: Vec<[f64; 2]> = matches.iter().map(|m| pos(&candidate.locals[m.b])).collect();
    ransac_homography(&src, &dst, cfg).inliers
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<[f64; 2]> {
        (0..25).map(|i| [100.0 + 37.0 * (i % 5) as f64, 80.0 + 41.0 * (i / 5) as f64 + (i % 3) as f64]).collect()
    }

    #[test]
    fn identity_is_recovered() {
        let p = grid();
        let out = ransac_homography(&p, &p, &GvConfig::default());
        assert_eq!(out.inliers, p.len());
        let h = out.homography.unwrap().0;
        assert!((h - Matrix3::identity()).norm() < 1e-4);
    }

    #[test]
    fn too_few_or_collinear_points_fail() {
        let p = grid();
        assert_eq!(ransac_homography(&p[..3], &p[..3], &GvConfig::default()).inliers, 0);
        let line: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, 2.0 * i as f64]).collect();
        let out = ransac_homography(&line, &line, &GvConfig::default());
        assert_eq!((out.inliers, out.homography.is_none()), (0, true));
    }

    #[test]
    fn dlt_fits_a_known_map() {
        let h = Matrix3::new(1.1, 0.05, 20.0, -0.03, 0.95, -10.0, 1e-4, -5e-5, 1.0);
        let src = grid();
        let dst: Vec<[f64; 2]> = src.iter().map(|p| transfer(&h, *p).unwrap()).collect();
        let corners = [0, 4, 20, 24];
        let fit = dlt(&corners.map(|i| src[i]), &corners.map(|i| dst[i])).unwrap();
        assert!((fit.0 - h).norm() < 1e-6);
        let fit = dlt(&src, &dst).unwrap();
        assert!((fit.0 - h).norm() < 1e-6);
    }
}
