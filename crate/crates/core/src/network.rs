//! Network specification and its numeric matrices.
//!
//! A [`NetworkSpec`] holds the cluster partition and the grid of weight
//! expressions. [`snapshot`](NetworkSpec::snapshot) evaluates them at a
//! time `t` into a [`LaplacianSnapshot`]: the adjacency matrix `A`, the
//! degree diagonal `D`, the Laplacian `L = D - A`, and the split of `L`
//! into its block-diagonal intra-cluster part and the inter-cluster
//! remainder.
//!
//! Agents are relabeled once at load so each cluster occupies a
//! contiguous index range, cluster k strictly before cluster k+1; all
//! downstream math assumes that layout.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::Error;
use crate::expr::WeightExpr;
use crate::Result;

/// Ordered partition of `{0, .., n-1}` into contiguous clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterPartition {
    /// Start index of each cluster in canonical labels.
    starts: Vec<usize>,
    /// Size of each cluster.
    sizes: Vec<usize>,
    n: usize,
}

impl ClusterPartition {
    /// Build from cluster sizes. Fails on empty clusters or an empty
    /// partition.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Config("partition has no clusters".into()));
        }
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("cluster {} is empty", k + 1)));
        }
        let mut starts = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in sizes {
            starts.push(acc);
            acc += s;
        }
        Ok(ClusterPartition {
            starts,
            sizes: sizes.to_vec(),
            n: acc,
        })
    }

    /// Total number of agents.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of clusters.
    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }

    /// Size of cluster `k`.
    pub fn size(&self, k: usize) -> usize {
        self.sizes[k]
    }

    /// Smallest cluster size.
    pub fn min_size(&self) -> usize {
        *self.sizes.iter().min().unwrap()
    }

    /// Largest cluster size.
    pub fn max_size(&self) -> usize {
        *self.sizes.iter().max().unwrap()
    }

    /// Canonical index range of cluster `k`.
    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.starts[k]..self.starts[k] + self.sizes[k]
    }

    /// Cluster containing canonical agent `i`.
    pub fn cluster_of(&self, i: usize) -> usize {
        debug_assert!(i < self.n);
        match self.starts.binary_search(&i) {
            Ok(k) => k,
            Err(k) => k - 1,
        }
    }
}

/// Permutation applied at load time to make clusters contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relabeling {
    /// `to_canonical[original]` = canonical index.
    pub to_canonical: Vec<usize>,
    /// `to_original[canonical]` = original index.
    pub to_original: Vec<usize>,
}

impl Relabeling {
    fn from_cluster_lists(lists: &[Vec<usize>], n: usize) -> Result<Self> {
        let mut to_canonical = vec![usize::MAX; n];
        let mut to_original = Vec::with_capacity(n);
        for (k, members) in lists.iter().enumerate() {
            for &orig in members {
                if orig == 0 || orig > n {
                    return Err(Error::Config(format!(
                        "agent {orig} in cluster {} is outside 1..={n}",
                        k + 1
                    )));
                }
                let orig0 = orig - 1;
                if to_canonical[orig0] != usize::MAX {
                    return Err(Error::Config(format!("agent {orig} in two clusters")));
                }
                to_canonical[orig0] = to_original.len();
                to_original.push(orig0);
            }
        }
        if let Some(missing) = to_canonical.iter().position(|&c| c == usize::MAX) {
            return Err(Error::Config(format!(
                "agent {} not assigned to any cluster",
                missing + 1
            )));
        }
        Ok(Relabeling {
            to_canonical,
            to_original,
        })
    }
}

/// Validated network: partition, weight expressions, scale parameter and
/// simulation horizon. Immutable after load.
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    partition: ClusterPartition,
    /// Row-major n*n grid in canonical labels; `weights[i][j]` is the
    /// weight agent i places on agent j. Diagonal entries are `None`.
    weights: Vec<Vec<Option<WeightExpr>>>,
    eps: f64,
    horizon: f64,
    /// Optional common period of the weights in `t`, used to pick
    /// averaging windows.
    period: Option<f64>,
    /// Optional initial condition in canonical labels.
    x0: Option<Vec<f64>>,
}

/// Number of validation samples per unit-normalized horizon.
const VALIDATION_GRID: usize = 1000;

/// Raw TOML shape of a network config file.
#[derive(Debug, Deserialize)]
struct RawConfig {
    n: usize,
    eps: f64,
    horizon: f64,
    clusters: Vec<Vec<usize>>,
    #[serde(default)]
    period: Option<f64>,
    #[serde(default)]
    x0: Option<Vec<f64>>,
    /// `w.<i>.<j> = "<expr>"`, 1-based original agent labels.
    #[serde(default)]
    w: BTreeMap<String, BTreeMap<String, String>>,
}

impl NetworkSpec {
    /// Parse and validate a config file, applying canonical relabeling.
    /// Returns the spec together with the permutation that was applied.
    pub fn load(config_text: &str) -> Result<(NetworkSpec, Relabeling)> {
        let raw: RawConfig =
            toml::from_str(config_text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        if raw.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if !(raw.eps > 0.0 && raw.eps <= 1.0) {
            return Err(Error::Config(format!(
                "eps must lie in (0, 1], got {}",
                raw.eps
            )));
        }
        if !(raw.horizon > 0.0 && raw.horizon.is_finite()) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        let relabel = Relabeling::from_cluster_lists(&raw.clusters, raw.n)?;
        let sizes: Vec<usize> = raw.clusters.iter().map(Vec::len).collect();
        let partition = ClusterPartition::from_sizes(&sizes)?;

        let mut weights: Vec<Vec<Option<WeightExpr>>> = (0..raw.n)
            .map(|_| (0..raw.n).map(|_| None).collect())
            .collect();
        for (si, row) in &raw.w {
            let i: usize = si
                .parse()
                .map_err(|_| Error::Config(format!("bad agent index `w.{si}`")))?;
            for (sj, source) in row {
                let j: usize = sj
                    .parse()
                    .map_err(|_| Error::Config(format!("bad agent index `w.{si}.{sj}`")))?;
                if i == 0 || i > raw.n || j == 0 || j > raw.n {
                    return Err(Error::Config(format!(
                        "w.{i}.{j} is outside the agent range 1..={}",
                        raw.n
                    )));
                }
                if i == j {
                    return Err(Error::Config(format!(
                        "w.{i}.{j}: self-weights are not allowed"
                    )));
                }
                let expr = WeightExpr::parse(source).map_err(|e| match e {
                    Error::Parse { offset, message } => {
                        Error::Config(format!("w.{i}.{j}: {message} (byte {offset})"))
                    }
                    other => other,
                })?;
                let ci = relabel.to_canonical[i - 1];
                let cj = relabel.to_canonical[j - 1];
                weights[ci][cj] = Some(expr);
            }
        }

        let x0 = match raw.x0 {
            None => None,
            Some(orig) => {
                if orig.len() != raw.n {
                    return Err(Error::Config(format!(
                        "x0 has {} entries, expected n = {}",
                        orig.len(),
                        raw.n
                    )));
                }
                let mut canon = vec![0.0; raw.n];
                for (o, &v) in orig.iter().enumerate() {
                    canon[relabel.to_canonical[o]] = v;
                }
                Some(canon)
            }
        };

        let spec = NetworkSpec {
            partition,
            weights,
            eps: raw.eps,
            horizon: raw.horizon,
            period: raw.period,
            x0,
        };
        spec.validate_to(spec.horizon)?;
        Ok((spec, relabel))
    }

    /// Assemble a spec directly from parts (test fixtures, generators).
    /// Runs the same grid validation as [`load`](Self::load).
    pub fn from_parts(
        partition: ClusterPartition,
        weights: Vec<Vec<Option<WeightExpr>>>,
        eps: f64,
        horizon: f64,
        period: Option<f64>,
    ) -> Result<NetworkSpec> {
        let n = partition.n();
        if weights.len() != n || weights.iter().any(|row| row.len() != n) {
            return Err(Error::Config("weight grid does not match n".into()));
        }
        let spec = NetworkSpec {
            partition,
            weights,
            eps,
            horizon,
            period,
            x0: None,
        };
        spec.validate_to(spec.horizon)?;
        Ok(spec)
    }

    /// Check every weight for finiteness and nonnegativity on a sample
    /// grid over `[0, t_max]`. Called at load over the declared horizon;
    /// studies that integrate past the horizon call it again for the
    /// extended range.
    pub fn validate_to(&self, t_max: f64) -> Result<()> {
        let samples = VALIDATION_GRID.max((t_max * 20.0) as usize).min(200_000);
        let grid = crate::util::linspace(0.0, t_max, samples.max(2));
        for (i, row) in self.weights.iter().enumerate() {
            for (j, slot) in row.iter().enumerate() {
                let Some(expr) = slot else { continue };
                for &t in &grid {
                    let v = expr.eval(t, self.eps);
                    if !v.is_finite() {
                        return Err(Error::InvalidWeight {
                            i: i + 1,
                            j: j + 1,
                            t,
                            detail: format!("non-finite value {v}"),
                        });
                    }
                    if v < 0.0 {
                        return Err(Error::InvalidWeight {
                            i: i + 1,
                            j: j + 1,
                            t,
                            detail: format!("negative value {v}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn partition(&self) -> &ClusterPartition {
        &self.partition
    }

    pub fn n(&self) -> usize {
        self.partition.n()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    /// Initial condition from the config, if present (canonical labels).
    pub fn x0(&self) -> Option<&[f64]> {
        self.x0.as_deref()
    }

    /// Same network evaluated at a different scale parameter.
    pub fn with_eps(&self, eps: f64) -> NetworkSpec {
        NetworkSpec {
            eps,
            ..self.clone()
        }
    }

    /// Weight expression from agent `j` to agent `i` (canonical labels),
    /// if present.
    pub fn weight(&self, i: usize, j: usize) -> Option<&WeightExpr> {
        self.weights[i][j].as_ref()
    }

    /// Scale every inter-cluster weight by `factor` (test fixture for
    /// scaling properties).
    pub fn scale_external(&self, factor: f64) -> NetworkSpec {
        let part = self.partition.clone();
        let weights = self
            .weights
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, slot)| {
                        slot.as_ref().map(|expr| {
                            if part.cluster_of(i) != part.cluster_of(j) {
                                expr.scaled(factor)
                            } else {
                                expr.clone()
                            }
                        })
                    })
                    .collect()
            })
            .collect();
        NetworkSpec {
            weights,
            ..self.clone()
        }
    }

    /// Evaluate all matrices at time `t`.
    pub fn snapshot(&self, t: f64) -> LaplacianSnapshot {
        let n = self.n();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if let Some(expr) = &self.weights[i][j] {
                    a[(i, j)] = expr.eval(t, self.eps);
                }
            }
        }
        LaplacianSnapshot::from_adjacency(a, &self.partition, t)
    }
}

/// All matrices of the model at one time instant.
#[derive(Debug, Clone)]
pub struct LaplacianSnapshot {
    /// Adjacency matrix; `a[(i, j)]` is the weight agent i places on j.
    pub a: DMatrix<f64>,
    /// Diagonal of row sums of `a`.
    pub d: DMatrix<f64>,
    /// Laplacian `d - a`.
    pub l: DMatrix<f64>,
    /// Block-diagonal intra-cluster Laplacian.
    pub l_intra: DMatrix<f64>,
    /// Inter-cluster remainder `l - l_intra`.
    pub l_extra: DMatrix<f64>,
    /// Evaluation time.
    pub t: f64,
}

impl LaplacianSnapshot {
    /// Build the Laplacian family from an adjacency matrix. The intra
    /// and inter parts are each assembled as proper Laplacians (zero row
    /// sums) and the full Laplacian is their sum, so the split is exact.
    pub fn from_adjacency(a: DMatrix<f64>, partition: &ClusterPartition, t: f64) -> Self {
        let n = a.nrows();
        debug_assert_eq!(n, partition.n());
        let mut l_intra = DMatrix::zeros(n, n);
        let mut l_extra = DMatrix::zeros(n, n);
        for i in 0..n {
            let home = partition.cluster_of(i);
            let mut intra_sum = 0.0;
            let mut extra_sum = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                if partition.cluster_of(j) == home {
                    l_intra[(i, j)] = -a[(i, j)];
                    intra_sum += a[(i, j)];
                } else {
                    l_extra[(i, j)] = -a[(i, j)];
                    extra_sum += a[(i, j)];
                }
            }
            l_intra[(i, i)] = intra_sum;
            l_extra[(i, i)] = extra_sum;
        }
        let l = &l_intra + &l_extra;
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            d[(i, i)] = l[(i, i)];
        }
        LaplacianSnapshot {
            a,
            d,
            l,
            l_intra,
            l_extra,
            t,
        }
    }

    /// Intra-cluster Laplacian block of cluster `k` (size n_k x n_k).
    pub fn cluster_laplacian(&self, partition: &ClusterPartition, k: usize) -> DMatrix<f64> {
        let range = partition.range(k);
        self.l_intra
            .view((range.start, range.start), (range.len(), range.len()))
            .into()
    }
}
