//! Spatial analysis: k-means over ground-truth locations, then per-cluster
//! error, density and DAE-selection statistics with their correlations.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{centroid, haversine, project_local, unproject_local, LatLon, PlanarPoint};
use crate::pipeline::EstimateRecord;
use crate::seed;
use crate::stats;

pub use crate::stats::pearson;

pub const KMEANS_MAX_ITERATIONS: usize = 300;
/// Lloyd iterations stop once no center moves more than this (meters).
pub const KMEANS_TOLERANCE_M: f64 = 0.1;
/// Above this many points, pairwise distances are computed on a seeded subsample.
pub const PAIRWISE_EXACT_LIMIT: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub centers: Vec<LatLon>,
    pub labels: Vec<usize>,
    /// Projection origin (centroid of the clustered points).
    pub origin: LatLon,
    /// Sum of squared planar distances to the assigned centers, m^2.
    pub inertia: f64,
    /// Cost after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    planar_centers: Vec<PlanarPoint>,
}

impl ClusterAssignment {
    /// Nearest center in the projected plane; ties go to the lower index.
    pub fn assign(&self, p: LatLon) -> Result<usize> {
        let q = project_local(p, self.origin)?;
        Ok(nearest(&q, &self.planar_centers).0)
    }

    pub fn member_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn nearest(p: &PlanarPoint, centers: &[PlanarPoint]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = p.distance_squared(c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations, in meters around the
/// centroid of `points`. A cluster that empties is re-seeded with the point
/// farthest from its current center.
pub fn kmeans(points: &[LatLon], k: usize, seed: u64) -> Result<ClusterAssignment> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let distinct: HashSet<(u64, u64)> = points.iter().map(|p| (p.lat().to_bits(), p.lon().to_bits())).collect();
    if k > distinct.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the {} distinct points",
            distinct.len()
        )));
    }
    let origin = centroid(points)?;
    let planar: Vec<PlanarPoint> = points
        .iter()
        .map(|&p| project_local(p, origin))
        .collect::<Result<_>>()?;

    let mut rng = seed::rng(seed);
    let mut centers = plus_plus_init(&planar, k, &mut rng);
    let mut labels = vec![0usize; planar.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut cost = 0.0;
        let mut dist = vec![0.0; planar.len()];
        for (i, p) in planar.iter().enumerate() {
            let (j, d) = nearest(p, &centers);
            labels[i] = j;
            dist[i] = d;
            cost += d;
        }
        history.push(cost);

        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (p, &l) in planar.iter().zip(&labels) {
            sums[l].0 += p.x;
            sums[l].1 += p.y;
            sums[l].2 += 1;
        }
        let mut next: Vec<PlanarPoint> = sums
            .iter()
            .zip(&centers)
            .map(|(&(sx, sy, n), old)| {
                if n == 0 {
                    *old
                } else {
                    PlanarPoint {
                        x: sx / n as f64,
                        y: sy / n as f64,
                    }
                }
            })
            .collect();
        let mut reseeded = false;
        let mut taken = HashSet::new();
        for j in 0..k {
            if sums[j].2 > 0 {
                continue;
            }
            reseeded = true;
            let far = (0..planar.len())
                .filter(|i| !taken.contains(i))
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                .expect("k <= distinct points");
            taken.insert(far);
            next[j] = planar[far];
        }
        let shift = next
            .iter()
            .zip(&centers)
            .map(|(a, b)| a.distance(b))
            .fold(0.0, f64::max);
        centers = next;
        if (!reseeded && shift < KMEANS_TOLERANCE_M) || iterations >= KMEANS_MAX_ITERATIONS {
            break;
        }
    }
    let inertia = planar
        .iter()
        .zip(&labels)
        .map(|(p, &l)| p.distance_squared(&centers[l]))
        .sum();
    let geo_centers = centers
        .iter()
        .map(|&c| unproject_local(c, origin))
        .collect::<Result<_>>()?;
    Ok(ClusterAssignment {
        k,
        centers: geo_centers,
        labels,
        origin,
        inertia,
        inertia_history: history,
        iterations,
        planar_centers: centers,
    })
}

fn plus_plus_init(points: &[PlanarPoint], k: usize, rng: &mut impl Rng) -> Vec<PlanarPoint> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| p.distance_squared(&centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut u = rng.random_range(0.0..total);
        let mut pick = d2
            .iter()
            .rposition(|&d| d > 0.0)
            .expect("a point away from all centers");
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && u < d {
                pick = i;
                break;
            }
            u -= d;
        }
        let c = points[pick];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.distance_squared(&c));
        }
    }
    centers
}

/// Mean haversine distance over all unordered pairs (0 for one point).
/// Beyond [`PAIRWISE_EXACT_LIMIT`] points a seeded subsample of that size is used.
pub fn mean_pairwise_distance(points: &[LatLon], seed: u64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Empty("point list"));
    }
    let sample: Vec<LatLon> = if points.len() > PAIRWISE_EXACT_LIMIT {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let (chosen, _) = idx.partial_shuffle(&mut seed::rng(seed), PAIRWISE_EXACT_LIMIT);
        chosen.iter().map(|&i| points[i]).collect()
    } else {
        points.to_vec()
    };
    let n = sample.len();
    if n == 1 {
        return Ok(0.0);
    }
    let row_sums: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| sample[i + 1..].iter().map(|&q| haversine(sample[i], q)).sum())
        .collect();
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(row_sums.iter().sum::<f64>() / pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub cluster: usize,
    pub count: usize,
    pub m1_mean: Option<f64>,
    pub m1_median: Option<f64>,
    pub mean_pairwise_distance: Option<f64>,
    pub dae_median: Option<f64>,
    /// Records with DAE strictly below the cluster's median DAE.
    pub selected_count: usize,
    pub selected_mean: Option<f64>,
    pub selected_median: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub m1_mean_vs_pairwise_distance: Option<f64>,
    pub count_vs_m1_mean: Option<f64>,
    pub count_vs_selected_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: Vec<ClusterStats>,
    pub correlations: Correlations,
    pub total: usize,
    pub pooled_selected_count: usize,
    pub pooled_selected_mean: Option<f64>,
    pub pooled_selected_median: Option<f64>,
}

impl ClusterReport {
    /// Clusters whose selected median error does not exceed the cluster's
    /// overall median error.
    pub fn clusters_with_lower_selected_median(&self) -> usize {
        self.clusters
            .iter()
            .filter(|c| matches!((c.selected_median, c.m1_median), (Some(s), Some(all)) if s <= all))
            .count()
    }
}

/// Maps each record to a cluster by its ground truth and summarises each
/// cluster. Clusters without records have absent metrics and take no part
/// in the correlations.
pub fn cluster_report(assignment: &ClusterAssignment, records: &[EstimateRecord], seed: u64) -> Result<ClusterReport> {
    let mut members: Vec<Vec<&EstimateRecord>> = vec![Vec::new(); assignment.k];
    for r in records {
        members[assignment.assign(r.truth)?].push(r);
    }
    let clusters: Vec<ClusterStats> = members
        .par_iter()
        .enumerate()
        .map(|(c, rs)| cluster_stats(c, rs, seed::derive_indexed(seed, "pairwise", c as u64)))
        .collect::<Result<_>>()?;

    let pooled: Vec<f64> = members
        .iter()
        .zip(&clusters)
        .flat_map(|(rs, s)| {
            let median = s.dae_median;
            rs.iter()
                .filter(move |r| median.is_some_and(|m| r.dae < m))
                .map(|r| r.error_pos)
        })
        .collect();

    let corr = |pairs: Vec<(f64, f64)>| {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        stats::pearson(&x, &y).ok()
    };
    let correlations = Correlations {
        m1_mean_vs_pairwise_distance: corr(
            clusters
                .iter()
                .filter_map(|c| Some((c.m1_mean?, c.mean_pairwise_distance?)))
                .collect(),
        ),
        count_vs_m1_mean: corr(
            clusters
                .iter()
                .filter_map(|c| Some((c.count as f64, c.m1_mean?)))
                .collect(),
        ),
        count_vs_selected_mean: corr(
            clusters
                .iter()
                .filter_map(|c| Some((c.count as f64, c.selected_mean?)))
                .collect(),
        ),
    };
    Ok(ClusterReport {
        total: records.len(),
        pooled_selected_count: pooled.len(),
        pooled_selected_mean: stats::mean(&pooled),
        pooled_selected_median: stats::median(&pooled),
        clusters,
        correlations,
    })
}

fn cluster_stats(cluster: usize, rs: &[&EstimateRecord], seed: u64) -> Result<ClusterStats> {
    let errors: Vec<f64> = rs.iter().map(|r| r.error_pos).collect();
    let daes: Vec<f64> = rs.iter().map(|r| r.dae).collect();
    let dae_median = stats::median(&daes);
    let selected: Vec<f64> = rs
        .iter()
        .filter(|r| dae_median.is_some_and(|m| r.dae < m))
        .map(|r| r.error_pos)
        .collect();
    let truths: Vec<LatLon> = rs.iter().map(|r| r.truth).collect();
    Ok(ClusterStats {
        cluster,
        count: rs.len(),
        m1_mean: stats::mean(&errors),
        m1_median: stats::median(&errors),
        mean_pairwise_distance: if truths.is_empty() {
            None
        } else {
            Some(mean_pairwise_distance(&truths, seed)?)
        },
        dae_median,
        selected_count: selected.len(),
        selected_mean: stats::mean(&selected),
        selected_median: stats::median(&selected),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per cluster; absent metrics are empty cells.
pub fn write_cluster_csv<W: Write>(report: &ClusterReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "cluster",
        "count",
        "m1_mean",
        "m1_median",
        "mean_pairwise_distance",
        "dae_median",
        "selected_count",
        "selected_mean",
        "selected_median",
    ])?;
    for c in &report.clusters {
        w.write_record([
            c.cluster.to_string(),
            c.count.to_string(),
            opt(c.m1_mean),
            opt(c.m1_median),
            opt(c.mean_pairwise_distance),
            opt(c.dae_median),
            c.selected_count.to_string(),
            opt(c.selected_mean),
            opt(c.selected_median),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

pub fn write_centers_csv<W: Write>(assignment: &ClusterAssignment, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cluster", "lat", "lon", "members"])?;
    for (c, (center, n)) in assignment.centers.iter().zip(assignment.member_counts()).enumerate() {
        w.write_record([
            c.to_string(),
            center.lat().to_string(),
            center.lon().to_string(),
            n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn ll(lat: f64, lon: f64) -> LatLon {
        LatLon::new(lat, lon).unwrap()
    }

    fn blobs(n: usize, s: u64) -> Vec<LatLon> {
        let centers = [
            (51.200, 4.390),
            (51.210, 4.410),
            (51.205, 4.425),
            (51.215, 4.395),
            (51.195, 4.405),
        ];
        let mut rng = seed::rng(s);
        let noise = Normal::new(0.0, 0.0015).unwrap();
        (0..n)
            .map(|i| {
                let (la, lo) = centers[i % centers.len()];
                ll(la + noise.sample(&mut rng), lo + noise.sample(&mut rng))
            })
            .collect()
    }

    /// Lloyd from random distinct starting points, best of `restarts`.
    fn restart_oracle(points: &[LatLon], k: usize, restarts: u64) -> f64 {
        let origin = centroid(points).unwrap();
        let p: Vec<(f64, f64)> = points
            .iter()
            .map(|&q| {
                let v = project_local(q, origin).unwrap();
                (v.x, v.y)
            })
            .collect();
        let mut best = f64::INFINITY;
        for r in 0..restarts {
            let mut rng = seed::rng(1000 + r);
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.shuffle(&mut rng);
            let mut c: Vec<(f64, f64)> = idx[..k].iter().map(|&i| p[i]).collect();
            let mut cost = f64::INFINITY;
            for _ in 0..500 {
                let mut sums = vec![(0.0, 0.0, 0usize); k];
                let mut new_cost = 0.0;
                for &(x, y) in &p {
                    let (j, d) = c
                        .iter()
                        .enumerate()
                        .map(|(j, &(cx, cy))| (j, (x - cx).powi(2) + (y - cy).powi(2)))
                        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                        .unwrap();
                    new_cost += d;
                    sums[j].0 += x;
                    sums[j].1 += y;
                    sums[j].2 += 1;
                }
                for (cj, s) in c.iter_mut().zip(&sums) {
                    if s.2 > 0 {
                        *cj = (s.0 / s.2 as f64, s.1 / s.2 as f64);
                    }
                }
                if (cost - new_cost).abs() < 1e-9 {
                    break;
                }
                cost = new_cost;
            }
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn single_cluster_center_is_centroid() {
        let pts = blobs(100, 1);
        let a = kmeans(&pts, 1, 1).unwrap();
        let c = centroid(&pts).unwrap();
        assert!(haversine(a.centers[0], c) < 1e-6);
        assert!(a.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn repeated_locations_give_zero_inertia() {
        let sites = [ll(51.20, 4.40), ll(51.21, 4.41), ll(51.22, 4.38)];
        let pts: Vec<LatLon> = (0..60).map(|i| sites[i % 3]).collect();
        let a = kmeans(&pts, 3, 2).unwrap();
        assert!(a.inertia < 1e-12, "{}", a.inertia);
        let mut counts = a.member_counts();
        counts.sort();
        assert_eq!(counts, vec![20, 20, 20]);
    }

    #[test]
    fn near_optimal_against_multi_restart_oracle() {
        let pts = blobs(500, 3);
        let oracle = restart_oracle(&pts, 5, 10);
        for s in [7, 8] {
            let a = kmeans(&pts, 5, s).unwrap();
            assert!(a.inertia <= 1.05 * oracle, "seed {s}: {} vs {oracle}", a.inertia);
        }
    }

    #[test]
    fn inertia_never_increases_and_centers_are_member_means() {
        let pts = blobs(400, 4);
        let a = kmeans(&pts, 6, 4).unwrap();
        for w in a.inertia_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", a.inertia_history);
        }
        assert!(a.inertia <= *a.inertia_history.last().unwrap() * (1.0 + 1e-12));
        let origin = a.origin;
        for (j, c) in a.planar_centers.iter().enumerate() {
            let m: Vec<PlanarPoint> = pts
                .iter()
                .zip(&a.labels)
                .filter(|(_, &l)| l == j)
                .map(|(&p, _)| project_local(p, origin).unwrap())
                .collect();
            let mx = m.iter().map(|p| p.x).sum::<f64>() / m.len() as f64;
            let my = m.iter().map(|p| p.y).sum::<f64>() / m.len() as f64;
            assert!((c.x - mx).abs() < 1e-6 && (c.y - my).abs() < 1e-6);
        }
        assert!(a.labels.iter().all(|&l| l < 6));
    }

    #[test]
    fn deterministic_under_seed_and_errors() {
        let pts = blobs(200, 5);
        assert_eq!(kmeans(&pts, 4, 9).unwrap(), kmeans(&pts, 4, 9).unwrap());
        assert!(kmeans(&pts, 0, 0).is_err());
        let same = vec![ll(51.2, 4.4); 5];
        assert!(kmeans(&same, 2, 0).is_err());
        assert!(kmeans(&[], 1, 0).is_err());
    }

    #[test]
    fn pairwise_distance_small_cases() {
        let a = ll(51.20, 4.40);
        let b = ll(51.21, 4.41);
        let c = ll(51.19, 4.43);
        assert_eq!(mean_pairwise_distance(&[a], 0).unwrap(), 0.0);
        assert_eq!(mean_pairwise_distance(&[a, b], 0).unwrap(), haversine(a, b));
        let hand = (haversine(a, b) + haversine(a, c) + haversine(b, c)) / 3.0;
        assert!((mean_pairwise_distance(&[a, b, c], 0).unwrap() - hand).abs() < 1e-9);
        assert!(mean_pairwise_distance(&[], 0).is_err());
    }

    #[test]
    fn pairwise_distance_subsamples_large_sets() {
        let pts = blobs(2500, 6);
        let a = mean_pairwise_distance(&pts, 1).unwrap();
        assert_eq!(a, mean_pairwise_distance(&pts, 1).unwrap());
        let exact = {
            let mut s = 0.0;
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    s += haversine(pts[i], pts[j]);
                }
            }
            s / (pts.len() * (pts.len() - 1) / 2) as f64
        };
        assert!((a - exact).abs() / exact < 0.03, "{a} vs {exact}");
    }

    fn record(id: usize, truth: LatLon, err_m: f64, dae: f64) -> EstimateRecord {
        let est = ll(
            truth.lat() + (err_m / crate::geo::EARTH_RADIUS_M).to_degrees(),
            truth.lon(),
        );
        EstimateRecord::new(id, truth, est, dae)
    }

    #[test]
    fn report_counts_selection_and_absent_clusters() {
        let sites = [ll(51.20, 4.40), ll(51.21, 4.41), ll(51.22, 4.38)];
        let pts: Vec<LatLon> = (0..30).map(|i| sites[i % 3]).collect();
        let a = kmeans(&pts, 3, 1).unwrap();
        // records only near the first two sites
        let mut rs = Vec::new();
        for i in 0..8 {
            rs.push(record(i, sites[0], 10.0 * (i + 1) as f64, i as f64));
        }
        for i in 0..5 {
            rs.push(record(100 + i, sites[1], 50.0, 3.0));
        }
        let rep = cluster_report(&a, &rs, 1).unwrap();
        assert_eq!(rep.clusters.iter().map(|c| c.count).sum::<usize>(), 13);
        let c0 = &rep.clusters[a.assign(sites[0]).unwrap()];
        // dae 0..7, median 3.5, dae < 3.5 selects 4 records
        assert_eq!(c0.selected_count, 4);
        assert!((c0.selected_mean.unwrap() - 25.0).abs() < 1e-6);
        let c1 = &rep.clusters[a.assign(sites[1]).unwrap()];
        // all DAE tied at the median: nothing is strictly below it
        assert_eq!(c1.selected_count, 0);
        assert_eq!(c1.selected_mean, None);
        let c2 = &rep.clusters[a.assign(sites[2]).unwrap()];
        assert_eq!(c2.count, 0);
        assert_eq!(c2.m1_mean, None);
        assert_eq!(c2.mean_pairwise_distance, None);
        assert_eq!(rep.pooled_selected_count, 4);
        for c in &rep.clusters {
            assert!(c.selected_count <= c.count.div_ceil(2));
        }
        // two populated clusters with identical pairwise distances (0)
        assert_eq!(rep.correlations.m1_mean_vs_pairwise_distance, None);
    }

    #[test]
    fn csv_writers_emit_one_row_per_cluster() {
        let pts = blobs(50, 7);
        let a = kmeans(&pts, 3, 7).unwrap();
        let rs: Vec<EstimateRecord> = pts
            .iter()
            .enumerate()
            .map(|(i, &p)| record(i, p, i as f64, i as f64))
            .collect();
        let rep = cluster_report(&a, &rs, 7).unwrap();
        let mut buf = Vec::new();
        write_cluster_csv(&rep, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
        let mut buf = Vec::new();
        write_centers_csv(&a, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
