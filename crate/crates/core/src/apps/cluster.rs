//! Clustering on individual features: split the samples into random groups,
//! remove the basis common to all groups, embed what is left with PCA and run
//! k-means.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, nmi, Nmi};
use crate::cobec::{cobec, CobecConfig, CobecInit};
use crate::error::{Error, Result};
use crate::linalg;
use crate::multiblock::validate;
use crate::preprocess::{preprocess, RankChoice};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Number of random groups `N`.
    pub n_groups: usize,
    /// Number of clusters `K`.
    pub k: usize,
    /// Common components removed before embedding; 0 skips removal.
    pub c: usize,
    pub embed_dim: usize,
    pub kmeans_replicates: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            n_groups: 2,
            k: 2,
            c: 2,
            embed_dim: 2,
            kmeans_replicates: 20,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn check(&self) -> Result<()> {
        if self.n_groups < 2 {
            return Err(Error::InvalidInput("at least 2 groups are required".into()));
        }
        if self.k == 0 || self.embed_dim == 0 || self.kmeans_replicates == 0 {
            return Err(Error::InvalidInput(
                "k, embed_dim and kmeans_replicates must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterReport {
    pub common_removed: usize,
    pub inertia: f64,
    /// `embed_dim` coordinates per sample, in input order.
    pub embedding: Vec<Vec<f64>>,
    pub accuracy: Option<f64>,
    pub nmi: Option<Nmi>,
}

/// Lexicographic order of the samples; ties keep input order.
fn canonical_order(samples: &[DVector<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| {
        samples[a]
            .iter()
            .zip(samples[b].iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx
}

/// Runs the pipeline and returns labels in input order.
pub fn cluster_pipeline(
    samples: &[DVector<f64>],
    truth: Option<&[usize]>,
    cfg: &ClusterConfig,
) -> Result<(Vec<usize>, ClusterReport)> {
    cfg.check()?;
    let t = samples.len();
    if t < 2 * cfg.k || t < 2 * cfg.n_groups {
        return Err(Error::InvalidInput(format!(
            "{t} samples are too few for {} clusters and {} groups",
            cfg.k, cfg.n_groups
        )));
    }
    if let Some(l) = truth {
        if l.len() != t {
            return Err(Error::LengthMismatch(t, l.len()));
        }
    }
    let dim = samples[0].len();
    if let Some(bad) = samples.iter().position(|s| s.len() != dim) {
        return Err(Error::InvalidInput(format!(
            "sample {bad} has length {}, expected {dim}",
            samples[bad].len()
        )));
    }
    // canonical order first so the split depends on content, not input order
    let canon = canonical_order(samples);
    let mut g = rng::stream(cfg.seed, 0);
    let perm = rng::permutation(t, &mut g);
    let order: Vec<usize> = perm.iter().map(|&i| canon[i]).collect();
    let y = DMatrix::from_fn(dim, t, |i, j| samples[order[j]][i]);

    let individual = if cfg.c == 0 {
        y
    } else {
        let mut blocks = Vec::with_capacity(cfg.n_groups);
        let mut start = 0;
        for n in 0..cfg.n_groups {
            let len = t / cfg.n_groups + usize::from(n < t % cfg.n_groups);
            blocks.push(y.columns(start, len).into_owned());
            start += len;
        }
        let factors = preprocess(&validate(blocks)?, &RankChoice::Revealing)?;
        let basis = cobec(&factors, &CobecConfig::new(cfg.c).with_seed(cfg.seed).with_init(CobecInit::Spectral))?;
        let a = &basis.a_bar;
        &y - a * a.tr_mul(&y)
    };
    let embedded = pca_scores(&individual, cfg.embed_dim);
    let points: Vec<DVector<f64>> = embedded.column_iter().map(|c| c.into_owned()).collect();
    let km = kmeans(&points, cfg.k, cfg.kmeans_replicates, cfg.seed)?;

    let mut labels = vec![0; t];
    let mut embedding = vec![Vec::new(); t];
    for (j, &orig) in order.iter().enumerate() {
        labels[orig] = km.labels[j];
        embedding[orig] = points[j].iter().copied().collect();
    }
    let (acc, nm) = match truth {
        Some(l) => (Some(accuracy(&labels, l)?), Some(nmi(&labels, l)?)),
        None => (None, None),
    };
    Ok((
        labels,
        ClusterReport {
            common_removed: cfg.c,
            inertia: km.inertia,
            embedding,
            accuracy: acc,
            nmi: nm,
        },
    ))
}

/// Scores of the columns of `x` on its leading `k` principal directions
/// (columns centred first), `k × T`.
pub fn pca_scores(x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut centered = x.clone();
    let mean = x.column_mean();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let svd = linalg::thin_svd(&centered);
    let k = k.min(svd.s.len());
    let mut u = svd.u.columns(0, k).into_owned();
    linalg::canonical_signs(&mut u);
    u.tr_mul(&centered)
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<DVector<f64>>,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
}

const LLOYD_MAX_ITER: usize = 300;

fn nearest(p: &DVector<f64>, centroids: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus<R: Rng + ?Sized>(points: &[DVector<f64>], k: usize, g: &mut R) -> Vec<DVector<f64>> {
    let mut centroids = vec![points[g.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - &centroids[0]).norm_squared()).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = g.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            g.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - &centroids[centroids.len() - 1]).norm_squared());
        }
    }
    centroids
}

fn lloyd(points: &[DVector<f64>], mut centroids: Vec<DVector<f64>>) -> KMeans {
    let k = centroids.len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..LLOYD_MAX_ITER {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let (best, _) = nearest(p, &centroids);
            if *l != best {
                *l = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![DVector::zeros(points[0].len()); k];
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            sums[l] += p;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = &sums[j] / counts[j] as f64;
                continue;
            }
            // empty cluster: move it to the point farthest from its centroid,
            // taken from a cluster that can spare one
            let far = (0..points.len())
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| {
                    let da = (&points[a] - &centroids[labels[a]]).norm_squared();
                    let db = (&points[b] - &centroids[labels[b]]).norm_squared();
                    da.total_cmp(&db).then(b.cmp(&a))
                });
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                labels[i] = j;
                counts[j] = 1;
                centroids[j] = points[i].clone();
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = labels
        .iter()
        .zip(points)
        .map(|(&l, p)| (p - &centroids[l]).norm_squared())
        .sum();
    KMeans {
        labels,
        centroids,
        inertia,
    }
}

/// k-means with k-means++ seeding; the replicate with the lowest inertia wins
/// (earliest on ties).
pub fn kmeans(points: &[DVector<f64>], k: usize, replicates: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || points.len() < k {
        return Err(Error::InvalidInput(format!(
            "k-means needs 1 <= k <= points, got k = {k} for {} points",
            points.len()
        )));
    }
    let mut best: Option<KMeans> = None;
    for rep in 0..replicates.max(1) {
        let mut g = rng::stream(seed, 1 + rep as u64);
        let fit = lloyd(points, plus_plus(points, k, &mut g));
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one replicate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiblock::scenarios::{cluster_samples, ClusterScenario};

    #[test]
    fn separated_clouds_are_recovered_exactly() {
        let mut g = rng::stream(5, 0);
        let centers = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0)];
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (k, &(x, y)) in centers.iter().enumerate() {
            for _ in 0..25 {
                let e = rng::gaussian_vector(2, &mut g) * 0.5;
                points.push(DVector::from_vec(vec![x + e[0], y + e[1]]));
                truth.push(k);
            }
        }
        let km = kmeans(&points, 4, 10, 1).unwrap();
        assert_eq!(accuracy(&km.labels, &truth).unwrap(), 100.0);
    }

    #[test]
    fn one_point_per_cluster_and_duplicates() {
        let points: Vec<DVector<f64>> = (0..5).map(|i| DVector::from_vec(vec![i as f64 * 3.0, 1.0])).collect();
        let km = kmeans(&points, 5, 3, 0).unwrap();
        assert_eq!(km.inertia, 0.0);
        let mut sorted = km.labels.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);

        let dup = vec![DVector::from_vec(vec![1.0, 1.0]); 6];
        let km = kmeans(&dup, 3, 5, 0).unwrap();
        let mut counts = [0; 3];
        for &l in &km.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
        assert_eq!(km.labels, kmeans(&dup, 3, 5, 0).unwrap().labels);
    }

    #[test]
    fn single_cluster_and_no_removal() {
        let data = cluster_samples(&ClusterScenario {
            per_cluster: 10,
            ..ClusterScenario::default()
        });
        let cfg = ClusterConfig {
            k: 1,
            ..ClusterConfig::default()
        };
        let (labels, _) = cluster_pipeline(&data.samples, None, &cfg).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
        let cfg = ClusterConfig {
            k: 4,
            c: 0,
            ..ClusterConfig::default()
        };
        let (_, report) = cluster_pipeline(&data.samples, Some(&data.labels), &cfg).unwrap();
        assert_eq!(report.common_removed, 0);
    }

    #[test]
    fn pipeline_is_invariant_to_input_order() {
        let data = cluster_samples(&ClusterScenario {
            per_cluster: 15,
            ..ClusterScenario::default()
        });
        let cfg = ClusterConfig {
            k: 4,
            ..ClusterConfig::default()
        };
        let (_, a) = cluster_pipeline(&data.samples, Some(&data.labels), &cfg).unwrap();
        let mut g = rng::stream(9, 0);
        let perm = rng::permutation(data.samples.len(), &mut g);
        let samples: Vec<DVector<f64>> = perm.iter().map(|&i| data.samples[i].clone()).collect();
        let labels: Vec<usize> = perm.iter().map(|&i| data.labels[i]).collect();
        let (_, b) = cluster_pipeline(&samples, Some(&labels), &cfg).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.nmi, b.nmi);
    }
}
