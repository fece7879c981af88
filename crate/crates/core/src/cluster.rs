//! Lloyd k-means with Euclidean or cosine distance.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::types::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    #[default]
    Euclidean,
    Cosine,
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(DistanceKind::Euclidean),
            "cosine" => Ok(DistanceKind::Cosine),
            other => Err(Error::invalid(format!("unknown cluster distance '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    /// D²-weighted seeding.
    #[default]
    PlusPlus,
    /// `m` distinct points chosen uniformly.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub m: usize,
    pub max_steps: usize,
    pub distance: DistanceKind,
    pub seed: u64,
    pub reseed_empty: bool,
    pub init: InitMethod,
    /// Independent restarts; the lowest-inertia run wins.
    pub n_init: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            m: 1,
            max_steps: 1000,
            distance: DistanceKind::Euclidean,
            seed: 0,
            reseed_empty: true,
            init: InitMethod::PlusPlus,
            n_init: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    /// Non-empty clusters of point positions, ordered by smallest member.
    pub partition: Vec<Vec<usize>>,
    /// One centroid per entry of `partition`.
    pub centroids: Vec<FeatureVector>,
    /// Fewer than `m` non-empty clusters could be formed.
    pub degenerate: bool,
    pub steps: usize,
    /// Sum of squared distances after each assignment step of the winning run.
    pub inertia_trace: Vec<f64>,
}

impl KmeansResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }
}

pub fn distance(a: &FeatureVector, b: &FeatureVector, kind: DistanceKind) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    match kind {
        DistanceKind::Euclidean => Ok(sq_euclidean(a.as_slice(), b.as_slice()).sqrt()),
        DistanceKind::Cosine => {
            let (na, nb) = (a.norm(), b.norm());
            if na == 0.0 || nb == 0.0 {
                return Err(Error::Cluster("cosine distance of a zero vector".into()));
            }
            Ok((1.0 - a.dot(b) / (na * nb)).max(0.0))
        }
    }
}

fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Distance on raw slices, with cosine inputs already unit-normalised.
fn raw_dist(a: &[f64], b: &[f64], kind: DistanceKind) -> f64 {
    match kind {
        DistanceKind::Euclidean => sq_euclidean(a, b).sqrt(),
        DistanceKind::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (1.0 - dot).max(0.0)
        }
    }
}

fn normalise(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

struct Run {
    assign: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    steps: usize,
    inertia_trace: Vec<f64>,
}

/// Clusters `points` into at most `config.m` groups.
pub fn kmeans(points: &[FeatureVector], config: &ClusterConfig) -> Result<KmeansResult> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Cluster("no points to cluster".into()));
    }
    if config.m == 0 || config.m > n {
        return Err(Error::Cluster(format!(
            "cluster count {} must be in 1..={n}",
            config.m
        )));
    }
    if config.max_steps == 0 {
        return Err(Error::Cluster("max_steps must be at least 1".into()));
    }
    let dim = points[0].dim();
    if let Some(p) = points.iter().find(|p| p.dim() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            got: p.dim(),
        });
    }
    let mut data: Vec<Vec<f64>> = points.iter().map(|p| p.as_slice().to_vec()).collect();
    if config.distance == DistanceKind::Cosine {
        if points.iter().any(|p| p.is_zero()) {
            return Err(Error::Cluster("cosine distance of a zero vector".into()));
        }
        data.iter_mut().for_each(|v| normalise(v));
    }

    let mut best: Option<Run> = None;
    for restart in 0..config.n_init.max(1) {
        let run = lloyd(&data, config, restart as u64);
        let better = match &best {
            None => true,
            Some(b) => run.inertia_trace.last() < b.inertia_trace.last(),
        };
        if better {
            best = Some(run);
        }
    }
    let run = best.unwrap();

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); config.m];
    for (i, &c) in run.assign.iter().enumerate() {
        groups[c].push(i);
    }
    let mut clusters: Vec<(Vec<usize>, Vec<f64>)> = groups
        .into_iter()
        .zip(run.centroids)
        .filter(|(g, _)| !g.is_empty())
        .collect();
    clusters.sort_by_key(|(g, _)| g[0]);
    let degenerate = clusters.len() < config.m;
    let (partition, centroids): (Vec<_>, Vec<_>) = clusters.into_iter().unzip();
    Ok(KmeansResult {
        partition,
        centroids: centroids
            .into_iter()
            .map(FeatureVector::new)
            .collect::<Result<_>>()?,
        degenerate,
        steps: run.steps,
        inertia_trace: run.inertia_trace,
    })
}

fn init_centroids(data: &[Vec<f64>], config: &ClusterConfig, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    match config.init {
        InitMethod::Random => rand::seq::index::sample(rng, n, config.m)
            .into_iter()
            .map(|i| data[i].clone())
            .collect(),
        InitMethod::PlusPlus => {
            let mut centroids = vec![data[rng.gen_range(0..n)].clone()];
            let mut d2: Vec<f64> = data
                .iter()
                .map(|x| raw_dist(x, &centroids[0], config.distance).powi(2))
                .collect();
            while centroids.len() < config.m {
                let total: f64 = d2.iter().sum();
                let pick = if total > 0.0 {
                    let mut r = rng.gen::<f64>() * total;
                    let mut idx = n - 1;
                    for (i, w) in d2.iter().enumerate() {
                        if *w > 0.0 && r < *w {
                            idx = i;
                            break;
                        }
                        r -= w;
                    }
                    idx
                } else {
                    rng.gen_range(0..n)
                };
                centroids.push(data[pick].clone());
                let c = centroids.last().unwrap();
                for (d, x) in d2.iter_mut().zip(data) {
                    *d = d.min(raw_dist(x, c, config.distance).powi(2));
                }
            }
            centroids
        }
    }
}

fn lloyd(data: &[Vec<f64>], config: &ClusterConfig, restart: u64) -> Run {
    let n = data.len();
    let m = config.m;
    let dim = data[0].len();
    let mut rng = rng_for(config.seed, "kmeans", restart);
    let mut centroids = init_centroids(data, config, &mut rng);
    let mut assign = vec![usize::MAX; n];
    let mut inertia_trace = Vec::new();
    let mut steps = 0;

    for _ in 0..config.max_steps {
        steps += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, x) in data.iter().enumerate() {
            let (best, d) = centroids
                .iter()
                .enumerate()
                .map(|(j, c)| (j, raw_dist(x, c, config.distance)))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
            inertia += d * d;
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        inertia_trace.push(inertia);

        let mut sums = vec![vec![0.0; dim]; m];
        let mut counts = vec![0usize; m];
        for (x, &c) in data.iter().zip(&assign) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut reseeded = false;
        for j in 0..m {
            if counts[j] > 0 {
                sums[j].iter_mut().for_each(|s| *s /= counts[j] as f64);
                if config.distance == DistanceKind::Cosine {
                    normalise(&mut sums[j]);
                }
                centroids[j] = std::mem::take(&mut sums[j]);
            }
        }
        if config.reseed_empty {
            for j in 0..m {
                if counts[j] > 0 {
                    continue;
                }
                // Move the point farthest from its centroid into the empty
                // cluster, never emptying a singleton.
                let far = (0..n)
                    .filter(|&i| counts[assign[i]] > 1)
                    .map(|i| (i, raw_dist(&data[i], &centroids[assign[i]], config.distance)))
                    .fold(None::<(usize, f64)>, |acc, cur| match acc {
                        Some(a) if a.1 >= cur.1 => Some(a),
                        _ => Some(cur),
                    });
                if let Some((i, d)) = far {
                    if d == 0.0 {
                        // All remaining points coincide with their centroids.
                        continue;
                    }
                    counts[assign[i]] -= 1;
                    assign[i] = j;
                    counts[j] = 1;
                    centroids[j] = data[i].clone();
                    reseeded = true;
                }
            }
        }
        if !changed && !reseeded {
            break;
        }
    }
    Run {
        assign,
        centroids,
        steps,
        inertia_trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pts(v: &[&[f64]]) -> Vec<FeatureVector> {
        v.iter().map(|x| FeatureVector::new(x.to_vec()).unwrap()).collect()
    }

    fn cfg(m: usize, seed: u64) -> ClusterConfig {
        ClusterConfig {
            m,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn distances() {
        let p = pts(&[&[0.0, 0.0], &[3.0, 4.0], &[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(distance(&p[1], &p[1], DistanceKind::Euclidean).unwrap(), 0.0);
        assert_eq!(distance(&p[2], &p[2], DistanceKind::Cosine).unwrap(), 0.0);
        assert_eq!(distance(&p[0], &p[1], DistanceKind::Euclidean).unwrap(), 5.0);
        assert_eq!(distance(&p[2], &p[3], DistanceKind::Cosine).unwrap(), 1.0);
        assert!(distance(&p[0], &p[1], DistanceKind::Cosine).is_err());
    }

    #[test]
    fn one_cluster_is_the_mean() {
        let p = pts(&[&[0.0, 2.0], &[2.0, 0.0], &[4.0, 4.0]]);
        let r = kmeans(&p, &cfg(1, 0)).unwrap();
        assert_eq!(r.partition, vec![vec![0, 1, 2]]);
        assert_abs_diff_eq!(r.centroids[0].as_slice()[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.centroids[0].as_slice()[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn well_separated_pairs_for_any_seed() {
        let p = pts(&[&[0.0], &[0.1], &[10.0], &[10.1]]);
        for seed in 0..50 {
            for init in [InitMethod::PlusPlus, InitMethod::Random] {
                let c = ClusterConfig {
                    init,
                    n_init: 1,
                    ..cfg(2, seed)
                };
                assert_eq!(kmeans(&p, &c).unwrap().partition, vec![vec![0, 1], vec![2, 3]]);
            }
        }
    }

    #[test]
    fn m_equals_n_gives_singletons() {
        let p = pts(&[&[0.0, 1.0], &[5.0, 1.0], &[2.0, 7.0], &[-3.0, 0.5]]);
        let r = kmeans(&p, &cfg(4, 3)).unwrap();
        assert_eq!(r.partition, vec![vec![0], vec![1], vec![2], vec![3]]);
        assert!(!r.degenerate);
    }

    #[test]
    fn identical_points_are_flagged_degenerate() {
        let p = pts(&[&[1.0, 1.0][..]; 5]);
        let r = kmeans(&p, &cfg(3, 0)).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.partition.iter().map(Vec::len).sum::<usize>(), 5);
    }

    #[test]
    fn bad_counts_are_errors() {
        let p = pts(&[&[1.0], &[2.0]]);
        assert!(kmeans(&p, &cfg(3, 0)).is_err());
        assert!(kmeans(&p, &cfg(0, 0)).is_err());
        assert!(kmeans(&[], &cfg(1, 0)).is_err());
    }

    #[test]
    fn cosine_clusters_by_direction() {
        let p = pts(&[&[1.0, 0.0], &[10.0, 0.5], &[0.0, 1.0], &[0.3, 9.0]]);
        let c = ClusterConfig {
            distance: DistanceKind::Cosine,
            ..cfg(2, 1)
        };
        let r = kmeans(&p, &c).unwrap();
        assert_eq!(r.partition, vec![vec![0, 1], vec![2, 3]]);
        for c in &r.centroids {
            assert_abs_diff_eq!(c.norm(), 1.0, epsilon = 1e-12);
        }
        let zero = pts(&[&[0.0, 0.0], &[1.0, 0.0]]);
        assert!(kmeans(&zero, &ClusterConfig { distance: DistanceKind::Cosine, ..cfg(1, 0) }).is_err());
    }

    #[test]
    fn inertia_never_increases_and_runs_are_reproducible() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for seed in 0..30 {
            let p: Vec<FeatureVector> = (0..40)
                .map(|_| FeatureVector::new((0..3).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap())
                .collect();
            let c = ClusterConfig { n_init: 1, ..cfg(5, seed) };
            let r = kmeans(&p, &c).unwrap();
            for w in r.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", r.inertia_trace);
            }
            let mut covered: Vec<usize> = r.partition.concat();
            covered.sort_unstable();
            assert_eq!(covered, (0..40).collect::<Vec<_>>());
            assert_eq!(kmeans(&p, &c).unwrap(), r);
        }
    }
}
