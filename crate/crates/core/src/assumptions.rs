//! Cut quantities and numerical verification of the coupling assumptions.
//!
//! For a snapshot at time `t` the checker computes, by exhaustive
//! enumeration over nontrivial subsets:
//!
//! * the weakest internal cut over all clusters (the internal coupling
//!   strength),
//! * the largest total external inflow into any cluster,
//! * their ratio (the time-scale separation parameter).
//!
//! [`check_assumptions`] sweeps these over a time grid and reports
//! whether the intra-cluster reciprocity, inter-cluster reciprocity and
//! persistence, and bounded-ratio assumptions hold, together with the
//! estimated constants. The verdict is grid-based evidence, not a proof:
//! the report records the grid it used, and refines it locally where
//! sampled quantities jump.

use nalgebra::DMatrix;

use crate::error::Error;
use crate::exec;
use crate::network::{ClusterPartition, LaplacianSnapshot, NetworkSpec};
use crate::util::linspace;
use crate::Result;

/// Hard cap on exhaustive subset enumeration (2^15 - 2 subsets).
pub const SUBSET_CAP: usize = 15;

/// Relative jump between adjacent grid samples that triggers local
/// bisection, and the maximum bisection depth.
const REFINE_JUMP: f64 = 0.10;
const REFINE_DEPTH: usize = 4;

/// Total interaction weight received by `dst` from `src` at the
/// snapshot's time. The sets must be disjoint.
pub fn cut_weight(a: &DMatrix<f64>, dst: &[usize], src: &[usize]) -> Result<f64> {
    for &i in dst {
        if src.contains(&i) {
            return Err(Error::Config(format!(
                "cut sets overlap at agent {}",
                i + 1
            )));
        }
    }
    let mut sum = 0.0;
    for &i in dst {
        for &j in src {
            sum += a[(i, j)];
        }
    }
    Ok(sum)
}

/// Weakest internal cut: minimum over clusters and nontrivial subsets S
/// of the weight S receives from the rest of its cluster. Exhaustive;
/// errors if any cluster exceeds [`SUBSET_CAP`].
pub fn weakest_internal_cut(
    snapshot: &LaplacianSnapshot,
    partition: &ClusterPartition,
) -> Result<f64> {
    check_cap(partition)?;
    let mut min = f64::INFINITY;
    for k in 0..partition.cluster_count() {
        let local = local_block(&snapshot.a, partition, k);
        for (_, inflow, _) in subset_cuts(&local) {
            min = min.min(inflow);
        }
    }
    Ok(min)
}

/// Largest total external inflow into any cluster. Zero for a single
/// cluster.
pub fn peak_external_inflow(snapshot: &LaplacianSnapshot, partition: &ClusterPartition) -> f64 {
    let m = partition.cluster_count();
    if m < 2 {
        return 0.0;
    }
    let n = partition.n();
    let mut max = 0.0f64;
    for k in 0..m {
        let range = partition.range(k);
        let mut inflow = 0.0;
        for i in range.clone() {
            for j in 0..n {
                if !range.contains(&j) {
                    inflow += snapshot.a[(i, j)];
                }
            }
        }
        max = max.max(inflow);
    }
    max
}

/// The three cut quantities at one time.
#[derive(Debug, Clone, Copy)]
pub struct CutQuantities {
    /// Weakest internal cut across all clusters.
    pub internal: f64,
    /// Largest external inflow into any cluster.
    pub external: f64,
    /// `external / internal`; `None` when the internal cut vanishes.
    pub ratio: Option<f64>,
    pub t: f64,
}

impl CutQuantities {
    pub fn compute(snapshot: &LaplacianSnapshot, partition: &ClusterPartition) -> Result<Self> {
        let internal = weakest_internal_cut(snapshot, partition)?;
        let external = peak_external_inflow(snapshot, partition);
        let ratio = (internal > 0.0).then(|| external / internal);
        Ok(CutQuantities {
            internal,
            external,
            ratio,
            t: snapshot.t,
        })
    }
}

/// Location of an assumption failure.
#[derive(Debug, Clone)]
pub struct Witness {
    pub assumption: u8,
    pub t: f64,
    /// Cluster index for intra-cluster failures.
    pub cluster: Option<usize>,
    /// Offending subset: agent indices for assumption 1, cluster indices
    /// for assumption 2.
    pub subset: Vec<usize>,
    pub detail: String,
}

impl std::fmt::Display for Witness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "A{} at t = {:.6}", self.assumption, self.t)?;
        if let Some(k) = self.cluster {
            write!(f, ", cluster {}", k + 1)?;
        }
        if !self.subset.is_empty() {
            let ids: Vec<String> = self.subset.iter().map(|i| (i + 1).to_string()).collect();
            write!(f, ", subset {{{}}}", ids.join(","))?;
        }
        write!(f, ": {}", self.detail)
    }
}

/// Intra-cluster reciprocity: estimated ratio bound and internal-cut
/// floor over the grid.
#[derive(Debug, Clone, Copy)]
pub struct IntraRecord {
    pub holds: bool,
    /// Estimated bound on internal cut ratios (at least 1 when holding).
    pub ratio_bound: f64,
    /// Infimum of the internal cut over the grid.
    pub cut_floor: f64,
}

/// Inter-cluster reciprocity and persistence.
#[derive(Debug, Clone, Copy)]
pub struct InterRecord {
    pub holds: bool,
    /// Estimated bound on external cut ratios (at least 1 when holding).
    pub ratio_bound: f64,
    /// Largest persistence constant compatible with the grid, when
    /// defined (requires at least two clusters and a positive ratio
    /// peak).
    pub persistence_floor: Option<f64>,
}

/// Bounded time-scale ratio.
#[derive(Debug, Clone, Copy)]
pub struct RatioRecord {
    pub holds: bool,
    /// Supremum of external/internal over the grid.
    pub ratio_peak: f64,
    /// The bound it is compared against (the spec's declared scale).
    pub declared: f64,
}

/// Averaging residual, filled in by the reduced-model builder.
#[derive(Debug, Clone, Copy)]
pub struct AveragingRecord {
    pub holds: bool,
    /// Max discrepancy between window/anchor variants of the average.
    pub residual: f64,
    /// Infinity norm of the averaged matrix, for relative comparison.
    pub norm: f64,
}

/// Outcome of the grid verification.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub intra: IntraRecord,
    pub inter: InterRecord,
    pub ratio: RatioRecord,
    /// Populated by [`crate::reduce::averaged_model`]; `None` until the
    /// averaging step has run.
    pub averaging: Option<AveragingRecord>,
    /// The sampled times (after refinement).
    pub grid: Vec<f64>,
    pub witnesses: Vec<Witness>,
}

impl AssumptionReport {
    /// True when every verified assumption holds (the averaging record
    /// only counts once present).
    pub fn all_hold(&self) -> bool {
        self.intra.holds
            && self.inter.holds
            && self.ratio.holds
            && self.averaging.is_none_or(|a| a.holds)
    }

    /// Human-readable rendering, one block per assumption.
    pub fn render_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let flag = |b: bool| if b { "holds" } else { "FAILS" };
        let _ = writeln!(
            out,
            "assumption 1 (intra-cluster reciprocity): {}\n  ratio bound estimate: {:.6}\n  internal cut floor:   {:.6}",
            flag(self.intra.holds),
            self.intra.ratio_bound,
            self.intra.cut_floor
        );
        let _ = writeln!(
            out,
            "assumption 2 (inter-cluster reciprocity/persistence): {}\n  ratio bound estimate: {:.6}\n  persistence floor:    {}",
            flag(self.inter.holds),
            self.inter.ratio_bound,
            self.inter
                .persistence_floor
                .map_or("n/a".to_string(), |v| format!("{v:.6}"))
        );
        let _ = writeln!(
            out,
            "assumption 3 (bounded time-scale ratio): {}\n  ratio peak: {:.6}  declared scale: {:.6}",
            flag(self.ratio.holds),
            self.ratio.ratio_peak,
            self.ratio.declared
        );
        match self.averaging {
            Some(avg) => {
                let _ = writeln!(
                    out,
                    "assumption 4 (averaged slow coupling): {}\n  residual: {:.3e}  matrix norm: {:.6}",
                    flag(avg.holds),
                    avg.residual,
                    avg.norm
                );
            }
            None => {
                let _ = writeln!(out, "assumption 4 (averaged slow coupling): not evaluated");
            }
        }
        let _ = writeln!(out, "grid samples: {}", self.grid.len());
        if !self.witnesses.is_empty() {
            let _ = writeln!(out, "witnesses:");
            for w in &self.witnesses {
                let _ = writeln!(out, "  {w}");
            }
        }
        out
    }

    /// Machine-readable rendering: one JSON record per assumption.
    pub fn render_json(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"{{"assumption": 1, "holds": {}, "ratio_bound": {}, "cut_floor": {}}}"#,
            self.intra.holds, self.intra.ratio_bound, self.intra.cut_floor
        );
        let _ = writeln!(
            out,
            r#"{{"assumption": 2, "holds": {}, "ratio_bound": {}, "persistence_floor": {}}}"#,
            self.inter.holds,
            self.inter.ratio_bound,
            self.inter
                .persistence_floor
                .map_or("null".to_string(), |v| v.to_string())
        );
        let _ = writeln!(
            out,
            r#"{{"assumption": 3, "holds": {}, "ratio_peak": {}, "declared": {}}}"#,
            self.ratio.holds, self.ratio.ratio_peak, self.ratio.declared
        );
        match self.averaging {
            Some(avg) => {
                let _ = writeln!(
                    out,
                    r#"{{"assumption": 4, "holds": {}, "residual": {}, "norm": {}}}"#,
                    avg.holds, avg.residual, avg.norm
                );
            }
            None => {
                let _ = writeln!(out, r#"{{"assumption": 4, "holds": null}}"#);
            }
        }
        out
    }

    /// First witness of a failing assumption, if any.
    pub fn first_witness(&self) -> Option<&Witness> {
        self.witnesses.first()
    }
}

/// Per-sample measurements the sweep folds over.
#[derive(Debug, Clone)]
struct GridSample {
    t: f64,
    internal: f64,
    external: f64,
    intra_ratio_max: f64,
    inter_ratio_max: f64,
    /// min over cluster subsets S of (inflow into S from outside S) / internal cut
    persistence_min: f64,
    violations: Vec<Witness>,
}

fn check_cap(partition: &ClusterPartition) -> Result<()> {
    for k in 0..partition.cluster_count() {
        if partition.size(k) > SUBSET_CAP {
            return Err(Error::ClusterTooLarge {
                cluster: k + 1,
                size: partition.size(k),
                cap: SUBSET_CAP,
            });
        }
    }
    if partition.cluster_count() > SUBSET_CAP {
        return Err(Error::ClusterTooLarge {
            cluster: 0,
            size: partition.cluster_count(),
            cap: SUBSET_CAP,
        });
    }
    Ok(())
}

/// Dense local copy of a cluster's adjacency block.
fn local_block(a: &DMatrix<f64>, partition: &ClusterPartition, k: usize) -> DMatrix<f64> {
    let range = partition.range(k);
    a.view((range.start, range.start), (range.len(), range.len()))
        .into()
}

/// Iterate all nontrivial subsets (as bitmasks) of a cluster with their
/// inflow and outflow cuts. Sums run in ascending index order so results
/// are bit-identical to a naive re-summation.
fn subset_cuts(local: &DMatrix<f64>) -> impl Iterator<Item = (u32, f64, f64)> + '_ {
    let nk = local.nrows();
    debug_assert!(nk <= SUBSET_CAP);
    let full: u32 = (1u32 << nk) - 1;
    (1..full).map(move |mask| {
        let mut inflow = 0.0;
        let mut outflow = 0.0;
        for p in 0..nk {
            for q in 0..nk {
                if mask & (1 << p) != 0 && mask & (1 << q) == 0 {
                    inflow += local[(p, q)];
                } else if mask & (1 << p) == 0 && mask & (1 << q) != 0 {
                    outflow += local[(p, q)];
                }
            }
        }
        (mask, inflow, outflow)
    })
}

fn mask_to_indices(mask: u32, base: usize) -> Vec<usize> {
    (0..32)
        .filter(|b| mask & (1 << b) != 0)
        .map(|b| base + b)
        .collect()
}

/// Directed flow between clusters: `flow[(k, h)]` is the weight cluster
/// k receives from cluster h.
fn cluster_flows(snapshot: &LaplacianSnapshot, partition: &ClusterPartition) -> DMatrix<f64> {
    let m = partition.cluster_count();
    let mut flow = DMatrix::zeros(m, m);
    for k in 0..m {
        for h in 0..m {
            if k == h {
                continue;
            }
            let mut sum = 0.0;
            for i in partition.range(k) {
                for j in partition.range(h) {
                    sum += snapshot.a[(i, j)];
                }
            }
            flow[(k, h)] = sum;
        }
    }
    flow
}

fn eval_sample(spec: &NetworkSpec, t: f64) -> GridSample {
    let partition = spec.partition();
    let snapshot = spec.snapshot(t);
    let mut violations = Vec::new();

    let mut internal = f64::INFINITY;
    let mut intra_ratio_max = 1.0f64;
    for k in 0..partition.cluster_count() {
        let base = partition.range(k).start;
        let local = local_block(&snapshot.a, partition, k);
        for (mask, inflow, outflow) in subset_cuts(&local) {
            internal = internal.min(inflow);
            if outflow == 0.0 {
                if inflow > 0.0 {
                    violations.push(Witness {
                        assumption: 1,
                        t,
                        cluster: Some(k),
                        subset: mask_to_indices(mask, base),
                        detail: format!("subset receives {inflow} but sends nothing back"),
                    });
                }
                // 0/0 is vacuous: ratio 1.
            } else {
                intra_ratio_max = intra_ratio_max.max(inflow / outflow);
            }
        }
    }

    let m = partition.cluster_count();
    let mut external = 0.0f64;
    let mut inter_ratio_max = 1.0f64;
    let mut persistence_min = f64::INFINITY;
    if m >= 2 {
        let flow = cluster_flows(&snapshot, partition);
        let total_in: Vec<f64> = (0..m).map(|k| flow.row(k).sum()).collect();
        let total_out: Vec<f64> = (0..m).map(|k| flow.column(k).sum()).collect();
        external = total_in.iter().fold(0.0f64, |a, &b| a.max(b));

        let full: u32 = (1u32 << m) - 1;
        for mask in 1..full {
            let mut inflow_sum = 0.0;
            let mut outflow_sum = 0.0;
            let mut cut_in = 0.0;
            for k in 0..m {
                if mask & (1 << k) == 0 {
                    continue;
                }
                inflow_sum += total_in[k];
                outflow_sum += total_out[k];
                for h in 0..m {
                    if mask & (1 << h) == 0 {
                        cut_in += flow[(k, h)];
                    }
                }
            }
            if outflow_sum == 0.0 {
                if inflow_sum > 0.0 {
                    violations.push(Witness {
                        assumption: 2,
                        t,
                        cluster: None,
                        subset: mask_to_indices(mask, 0),
                        detail: format!("cluster set receives {inflow_sum} but sends nothing back"),
                    });
                }
            } else {
                inter_ratio_max = inter_ratio_max.max(inflow_sum / outflow_sum);
            }
            if cut_in == 0.0 && internal > 0.0 {
                violations.push(Witness {
                    assumption: 2,
                    t,
                    cluster: None,
                    subset: mask_to_indices(mask, 0),
                    detail: "no persistent inflow into this cluster set".into(),
                });
                persistence_min = 0.0;
            } else if internal > 0.0 {
                persistence_min = persistence_min.min(cut_in / internal);
            }
        }
    }

    if internal == 0.0 {
        // Locate one vanishing subset for the report.
        'outer: for k in 0..partition.cluster_count() {
            let base = partition.range(k).start;
            let local = local_block(&snapshot.a, partition, k);
            for (mask, inflow, _) in subset_cuts(&local) {
                if inflow == 0.0 {
                    violations.push(Witness {
                        assumption: 3,
                        t,
                        cluster: Some(k),
                        subset: mask_to_indices(mask, base),
                        detail: "internal cut vanishes; time-scale ratio undefined".into(),
                    });
                    break 'outer;
                }
            }
        }
    }

    GridSample {
        t,
        internal,
        external,
        intra_ratio_max,
        inter_ratio_max,
        persistence_min,
        violations,
    }
}

fn relative_jump(a: f64, b: f64) -> bool {
    let scale = a.abs().max(b.abs());
    scale > 0.0 && (a - b).abs() > REFINE_JUMP * scale
}

/// Verify the assumptions over `grid_size` uniform samples of
/// `[0, horizon]`, refining locally where the tracked quantities jump.
pub fn check_assumptions(spec: &NetworkSpec, grid_size: usize) -> Result<AssumptionReport> {
    check_assumptions_over(spec, grid_size, spec.horizon())
}

/// Same as [`check_assumptions`] but over an explicit time range
/// `[0, t_max]` (studies extend past the declared horizon).
pub fn check_assumptions_over(
    spec: &NetworkSpec,
    grid_size: usize,
    t_max: f64,
) -> Result<AssumptionReport> {
    if grid_size < 2 {
        return Err(Error::Config("grid size must be at least 2".into()));
    }
    check_cap(spec.partition())?;

    let times = linspace(0.0, t_max, grid_size);
    let mut samples: Vec<GridSample> = exec::map_collect(&times, |&t| eval_sample(spec, t));

    // Local bisection where internal or external inflow jumps by more
    // than the refinement threshold between neighbors.
    for _ in 0..REFINE_DEPTH {
        let mut midpoints = Vec::new();
        for pair in samples.windows(2) {
            if relative_jump(pair[0].internal, pair[1].internal)
                || relative_jump(pair[0].external, pair[1].external)
            {
                midpoints.push(0.5 * (pair[0].t + pair[1].t));
            }
        }
        if midpoints.is_empty() {
            break;
        }
        let extra = exec::map_collect(&midpoints, |&t| eval_sample(spec, t));
        samples.extend(extra);
        samples.sort_by(|a, b| a.t.total_cmp(&b.t));
    }

    let mut witnesses: Vec<Witness> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut cut_floor = f64::INFINITY;
    let mut intra_ratio = 1.0f64;
    let mut inter_ratio = 1.0f64;
    let mut ratio_peak = 0.0f64;
    let mut external_peak = 0.0f64;
    let mut persistence = f64::INFINITY;
    let mut internal_vanishes = false;
    for s in &samples {
        cut_floor = cut_floor.min(s.internal);
        intra_ratio = intra_ratio.max(s.intra_ratio_max);
        inter_ratio = inter_ratio.max(s.inter_ratio_max);
        persistence = persistence.min(s.persistence_min);
        external_peak = external_peak.max(s.external);
        if s.internal > 0.0 {
            ratio_peak = ratio_peak.max(s.external / s.internal);
        } else {
            internal_vanishes = true;
        }
        // One stored witness per (assumption, cluster, subset): extra
        // grid times add nothing.
        for w in &s.violations {
            if seen.insert((w.assumption, w.cluster, w.subset.clone())) {
                witnesses.push(w.clone());
            }
        }
    }

    let m = spec.partition().cluster_count();
    // A network with no external interaction at all has nothing to
    // reciprocate or keep persistent: the clusters evolve independently
    // and the inter-cluster condition is vacuous.
    if external_peak == 0.0 {
        witnesses.retain(|w| w.assumption != 2);
    }
    let intra_violated = witnesses.iter().any(|w| w.assumption == 1);
    let inter_violated = witnesses.iter().any(|w| w.assumption == 2);

    let intra = IntraRecord {
        holds: !intra_violated && cut_floor > 0.0,
        ratio_bound: intra_ratio,
        cut_floor,
    };
    let persistence_floor = if m < 2 || ratio_peak == 0.0 || !persistence.is_finite() {
        None
    } else {
        Some(persistence / ratio_peak)
    };
    let inter = InterRecord {
        holds: !inter_violated,
        ratio_bound: inter_ratio,
        persistence_floor,
    };
    let ratio = RatioRecord {
        holds: !internal_vanishes && ratio_peak <= spec.eps() * (1.0 + 1e-12),
        ratio_peak,
        declared: spec.eps(),
    };

    Ok(AssumptionReport {
        intra,
        inter,
        ratio,
        averaging: None,
        grid: samples.iter().map(|s| s.t).collect(),
        witnesses,
    })
}
