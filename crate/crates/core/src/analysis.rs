//! Ensemble statistics: threshold ratios, contact counts, histograms, leakage
//! minima and trace summaries.

use serde::Serialize;

use crate::dynamics::{IdentityEnsemble, RunTrace};
use crate::error::{Error, Result};
use crate::geometry::{angle_with_norms, DistanceMatrix};
use crate::losses::{EmbeddedBatch, TrainingSetEmbeddings};
use crate::model::EmbeddingModel;

fn contact_count(distances: &DistanceMatrix, d_ict: f64) -> Result<usize> {
    if distances.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 identities, got {}",
            distances.len()
        )));
    }
    Ok(distances.pairs().filter(|&(_, _, d)| d < d_ict).count())
}

/// Fraction of unordered pairs strictly closer than `d_ict`.
pub fn rho_threshold(distances: &DistanceMatrix, d_ict: f64) -> Result<f64> {
    let c = contact_count(distances, d_ict)?;
    Ok(c as f64 / distances.pair_count() as f64)
}

/// `2·N_contacts / N_id`: mean number of contacts per identity.
pub fn contacts_per_identity(distances: &DistanceMatrix, d_ict: f64) -> Result<f64> {
    let c = contact_count(distances, d_ict)?;
    Ok(2.0 * c as f64 / distances.len() as f64)
}

/// Mean over unordered pairs; 0 for a single identity.
pub fn mean_pairwise_distance(distances: &DistanceMatrix) -> f64 {
    let n = distances.pair_count();
    if n == 0 {
        return 0.0;
    }
    distances.pairs().map(|(_, _, d)| d).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    /// `bin_left,bin_right,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.bin_edges[i], self.bin_edges[i + 1], c));
        }
        out
    }
}

/// Uniform bins on `[low, high]`; bins are left-closed except the last, which
/// also holds `high`.
pub fn histogram(values: &[f64], n_bins: usize, low: f64, high: f64) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if !(low < high && low.is_finite() && high.is_finite()) {
        return Err(Error::Config(format!("invalid histogram range [{low}, {high}]")));
    }
    let width = (high - low) / n_bins as f64;
    let mut bin_edges: Vec<f64> = (0..n_bins).map(|i| low + i as f64 * width).collect();
    bin_edges.push(high);
    let mut h = Histogram {
        counts: vec![0; n_bins],
        bin_edges,
        underflow: 0,
        overflow: 0,
    };
    for &v in values {
        if v.is_nan() || v > high {
            h.overflow += 1;
        } else if v < low {
            h.underflow += 1;
        } else {
            // The float estimate can land one bin off near an edge; the edge
            // array decides.
            let mut i = (((v - low) / width) as usize).min(n_bins - 1);
            while i > 0 && v < h.bin_edges[i] {
                i -= 1;
            }
            while i + 1 < n_bins && v >= h.bin_edges[i + 1] {
                i += 1;
            }
            h.counts[i] += 1;
        }
    }
    Ok(h)
}

/// Closest synthetic/training pair and the full `n_synthetic × n_training`
/// distance list (row-major by synthetic index).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Leakage {
    pub min_distance: f64,
    pub synthetic: usize,
    pub training: usize,
    pub distances: Vec<f64>,
}

pub fn leakage_minimum(
    ensemble: &IdentityEnsemble,
    model: &EmbeddingModel,
    training: &TrainingSetEmbeddings,
) -> Result<Leakage> {
    if training.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    if training.dim() != Some(model.d_e()) {
        return Err(Error::Shape(format!(
            "training embeddings have length {:?}, model has d_e = {}",
            training.dim(),
            model.d_e()
        )));
    }
    let batch = EmbeddedBatch::new(&ensemble.latents, model)?;
    let mut distances = Vec::with_capacity(ensemble.len() * training.len());
    let mut best = (f64::INFINITY, 0, 0);
    for (a, (e, ne)) in batch.embeddings.iter().zip(&batch.norms).enumerate() {
        for (t, (f, nf)) in training.embeddings().iter().zip(training.norms()).enumerate() {
            let d = angle_with_norms(e, f, *ne, *nf);
            if d < best.0 {
                best = (d, a, t);
            }
            distances.push(d);
        }
    }
    Ok(Leakage {
        min_distance: best.0,
        synthetic: best.1,
        training: best.2,
        distances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub iterations: usize,
    pub initial_embedding_distance: f64,
    pub final_embedding_distance: f64,
    /// `final - initial` of the mean embedding distance.
    pub embedding_distance_change: f64,
    pub initial_latent_distance: f64,
    pub final_latent_distance: f64,
    /// Relative change of the mean embedding distance across the last 20% of
    /// records.
    pub plateau_change: f64,
    pub dt_min: f64,
    pub dt_max: f64,
}

pub fn plateau_window(len: usize) -> usize {
    ((len as f64 * 0.2).round() as usize).max(1)
}

pub fn trace_summary(trace: &RunTrace) -> Result<TraceSummary> {
    let r = &trace.records;
    let (Some(first), Some(last)) = (r.first(), r.last()) else {
        return Err(Error::Domain("trace is empty".into()));
    };
    let start = &r[r.len().saturating_sub(plateau_window(r.len()) + 1)];
    let base = start.mean_embedding_distance;
    let plateau_change = if base == 0.0 {
        last.mean_embedding_distance - base
    } else {
        (last.mean_embedding_distance - base) / base.abs()
    };
    Ok(TraceSummary {
        iterations: r.len(),
        initial_embedding_distance: first.mean_embedding_distance,
        final_embedding_distance: last.mean_embedding_distance,
        embedding_distance_change: last.mean_embedding_distance - first.mean_embedding_distance,
        initial_latent_distance: first.mean_latent_distance,
        final_latent_distance: last.mean_latent_distance,
        plateau_change,
        dt_min: r.iter().map(|x| x.dt).fold(f64::INFINITY, f64::min),
        dt_max: r.iter().map(|x| x.dt).fold(f64::NEG_INFINITY, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{langevin_init, TraceRecord};
    use crate::geometry::{angular_distance, pairwise_distances, EmbeddingVector};
    use crate::model::{ModelKind, ModelSpec};
    use crate::rng::{NoiseDomain, NoiseStream};
    use proptest::prelude::*;

    fn matrix(n: usize, entries: &[f64]) -> DistanceMatrix {
        let mut it = entries.iter().copied();
        let rows = (0..n)
            .map(|a| ((a + 1)..n).map(|_| it.next().unwrap()).collect())
            .collect();
        DistanceMatrix::from_upper(n, rows)
    }

    fn gaussian_embeddings(n: usize, d: usize, seed: u64) -> Vec<EmbeddingVector> {
        let s = NoiseStream::new(seed, NoiseDomain::Custom(7));
        (0..n)
            .map(|i| EmbeddingVector(s.normal_vector(i as u64, 0, d)))
            .collect()
    }

    #[test]
    fn ratios_by_direct_count() {
        let d = matrix(3, &[1.0, 1.5, 2.0]);
        assert!((rho_threshold(&d, 1.4).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(rho_threshold(&d, 0.5).unwrap(), 0.0);
        assert_eq!(contacts_per_identity(&d, 0.5).unwrap(), 0.0);
        let full = matrix(4, &[0.1; 6]);
        assert_eq!(contacts_per_identity(&full, 1.0).unwrap(), 3.0);
        assert!(matches!(rho_threshold(&matrix(1, &[]), 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn orthonormal_rho_is_zero() {
        let e: Vec<EmbeddingVector> = vec![
            vec![1.0, 0.0, 0.0].into(),
            vec![0.0, 1.0, 0.0].into(),
            vec![0.0, 0.0, 1.0].into(),
        ];
        assert_eq!(rho_threshold(&pairwise_distances(&e).unwrap(), 1.4).unwrap(), 0.0);
    }

    #[test]
    fn contacts_match_degree_average() {
        let e = gaussian_embeddings(40, 5, 1);
        let d = pairwise_distances(&e).unwrap();
        let mut degree = vec![0usize; 40];
        for a in 0..40 {
            for b in 0..40 {
                if a != b && angular_distance(&e[a], &e[b]).unwrap() < 1.3 {
                    degree[a] += 1;
                }
            }
        }
        let avg = degree.iter().sum::<usize>() as f64 / 40.0;
        assert_eq!(contacts_per_identity(&d, 1.3).unwrap(), avg);
        let rho = rho_threshold(&d, 1.3).unwrap();
        assert!((contacts_per_identity(&d, 1.3).unwrap() - 2.0 * d.pair_count() as f64 * rho / 40.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_boundaries() {
        let h = histogram(&[0.5], 1, 0.0, 1.0).unwrap();
        assert_eq!(h.counts, vec![1]);
        let h = histogram(&[1.0, 0.0, -0.1, 1.1, 0.5], 2, 0.0, 1.0).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!((h.underflow, h.overflow), (1, 1));
        assert!(histogram(&[], 0, 0.0, 1.0).is_err());
        assert!(histogram(&[], 3, 1.0, 1.0).is_err());
        assert_eq!(h.to_csv(), "bin_left,bin_right,count\n0,0.5,1\n0.5,1,2\n");
    }

    #[test]
    fn histogram_matches_linear_scan() {
        let s = NoiseStream::new(4, NoiseDomain::Custom(7));
        let values: Vec<f64> = s.normal_vector(0, 0, 10_000).into_iter().map(|x| 1.5 + x).collect();
        let (lo, hi) = (0.0, std::f64::consts::PI);
        let h = histogram(&values, 64, lo, hi).unwrap();
        let mut counts = vec![0u64; 64];
        let (mut under, mut over) = (0, 0);
        for &v in &values {
            if v < lo {
                under += 1;
            } else if v > hi {
                over += 1;
            } else {
                let bin = (0..64)
                    .find(|&i| v >= h.bin_edges[i] && (v < h.bin_edges[i + 1] || i == 63))
                    .unwrap();
                counts[bin] += 1;
            }
        }
        assert_eq!(h.counts, counts);
        assert_eq!((h.underflow, h.overflow), (under, over));
        assert_eq!(h.total(), 10_000);
    }

    #[test]
    fn leakage_against_double_loop() {
        let spec = ModelSpec::new(ModelKind::Linear, 6, 6, 2);
        let model = spec.build().unwrap();
        let ens = langevin_init(20, &spec, 3, 1.0).unwrap();
        let train = gaussian_embeddings(50, 6, 5);
        let ts = TrainingSetEmbeddings::new(train.clone(), None).unwrap();
        let leak = leakage_minimum(&ens, &model, &ts).unwrap();
        let mut best = f64::INFINITY;
        for w in &ens.latents {
            let e = model.embed(w).unwrap();
            for t in &train {
                best = best.min(angular_distance(&e, t).unwrap());
            }
        }
        assert_eq!(leak.min_distance, best);
        assert_eq!(leak.distances.len(), 1000);
        assert_eq!(
            leak.min_distance,
            leak.distances.iter().copied().fold(f64::INFINITY, f64::min)
        );
        assert_eq!(leak.distances[leak.synthetic * 50 + leak.training], best);
    }

    #[test]
    fn leakage_trivial_cases() {
        let spec = ModelSpec::new(ModelKind::Identity, 2, 2, 0);
        let model = spec.build().unwrap();
        let mut ens = langevin_init(1, &spec, 0, 1.0).unwrap();
        ens.latents = vec![vec![1.0, 0.0].into()];
        let orth = TrainingSetEmbeddings::new(vec![vec![0.0, 3.0].into()], None).unwrap();
        assert!(
            (leakage_minimum(&ens, &model, &orth).unwrap().min_distance - std::f64::consts::FRAC_PI_2).abs() < 1e-12
        );
        let same = TrainingSetEmbeddings::new(vec![vec![2.0, 0.0].into()], None).unwrap();
        assert!(leakage_minimum(&ens, &model, &same).unwrap().min_distance < 4.5e-4);
        let empty = TrainingSetEmbeddings::new(vec![], None).unwrap();
        assert!(matches!(leakage_minimum(&ens, &model, &empty), Err(Error::Domain(_))));
    }

    fn trace(values: &[f64]) -> RunTrace {
        RunTrace {
            records: values
                .iter()
                .enumerate()
                .map(|(i, &v)| TraceRecord {
                    iteration: i as u64,
                    mean_embedding_distance: v,
                    mean_latent_distance: 2.0 * v,
                    mean_contact_force: 0.0,
                    mean_pullback_force: 0.0,
                    contact_ratio: 0.0,
                    dt: 0.1 + i as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn trace_summaries() {
        let s = trace_summary(&trace(&[1.0; 10])).unwrap();
        assert_eq!(s.plateau_change, 0.0);
        let s = trace_summary(&trace(&[1.0, 1.1, 1.2, 1.3, 1.4])).unwrap();
        assert!(s.embedding_distance_change > 0.0 && s.plateau_change > 0.0);
        assert_eq!((s.dt_min, s.dt_max), (0.1, 4.1));
        assert!(matches!(trace_summary(&RunTrace::default()), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn rho_monotone_in_threshold(seed in 0u64..500, t1 in 0.0f64..3.2, t2 in 0.0f64..3.2) {
            let e = gaussian_embeddings(12, 4, seed);
            let d = pairwise_distances(&e).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let r_lo = rho_threshold(&d, lo).unwrap();
            let r_hi = rho_threshold(&d, hi).unwrap();
            prop_assert!(r_lo <= r_hi);
            prop_assert!((0.0..=1.0).contains(&r_hi));
        }

        #[test]
        fn histogram_conserves(values in proptest::collection::vec(-1.0f64..5.0, 0..200), bins in 1usize..50) {
            let h = histogram(&values, bins, 0.0, 3.0).unwrap();
            prop_assert_eq!(h.total(), values.len() as u64);
        }
    }
}
