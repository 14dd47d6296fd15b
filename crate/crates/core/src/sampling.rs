//! Reject sampling and greedy erosion of contact graphs.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::dynamics::IdentityEnsemble;
use crate::error::{Error, Result};
use crate::geometry::{angle_with_norms, checked_norms, DistanceMatrix, EmbeddingVector, LatentVector};
use crate::losses::EmbeddedBatch;
use crate::model::EmbeddingModel;
use crate::params::HyperParams;
use crate::rng::{NoiseDomain, NoiseStream};

/// Pairs of identities whose embeddings are closer than a threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactGraph {
    n: usize,
    /// Sorted, `a < b`.
    edges: Vec<(usize, usize)>,
    degree: Vec<usize>,
    neighbours: Vec<Vec<usize>>,
}

impl ContactGraph {
    /// Builds a graph from arbitrary unordered pairs; duplicates collapse.
    pub fn from_edges(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::Domain(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::Shape(format!("edge ({a}, {b}) out of range for {n} nodes")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let mut degree = vec![0; n];
        let mut neighbours = vec![Vec::new(); n];
        for &(a, b) in &set {
            degree[a] += 1;
            degree[b] += 1;
            neighbours[a].push(b);
            neighbours[b].push(a);
        }
        for list in &mut neighbours {
            list.sort_unstable();
        }
        Ok(Self {
            n,
            edges: set.into_iter().collect(),
            degree,
            neighbours,
        })
    }

    /// Edge `(a, b)` iff `d_ab < threshold`.
    pub fn from_distances(distances: &DistanceMatrix, threshold: f64) -> Self {
        let n = distances.len();
        let rows: Vec<Vec<(usize, usize)>> = (0..n)
            .into_par_iter()
            .map(|a| {
                let row = distances.row(a);
                ((a + 1)..n).filter(|&b| row[b] < threshold).map(|b| (a, b)).collect()
            })
            .collect();
        Self::from_edges(n, rows.into_iter().flatten()).expect("pairs come from a square matrix")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self) -> &[usize] {
        &self.degree
    }

    pub fn neighbours(&self, a: usize) -> &[usize] {
        &self.neighbours[a]
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbours[a].binary_search(&b).is_ok()
    }
}

pub fn build_contact_graph(
    ensemble: &IdentityEnsemble,
    model: &EmbeddingModel,
    threshold: f64,
) -> Result<ContactGraph> {
    ensemble.validate()?;
    let batch = EmbeddedBatch::new(&ensemble.latents, model)?;
    Ok(ContactGraph::from_distances(&batch.distances(), threshold))
}

/// Greedy erosion: repeatedly drops the node with the most remaining contacts
/// (lowest index on ties) until no contact is left. Returns the survivors in
/// ascending order.
pub fn erode(graph: &ContactGraph) -> Vec<usize> {
    let mut degree = graph.degree.clone();
    let mut alive = vec![true; graph.n];
    loop {
        let mut worst = None;
        let mut worst_degree = 0;
        for (a, &d) in degree.iter().enumerate() {
            if alive[a] && d > worst_degree {
                worst = Some(a);
                worst_degree = d;
            }
        }
        let Some(a) = worst else { break };
        alive[a] = false;
        for &b in &graph.neighbours[a] {
            if alive[b] {
                degree[b] -= 1;
            }
        }
        degree[a] = 0;
    }
    (0..graph.n).filter(|&a| alive[a]).collect()
}

/// Result of a Reject run.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectOutcome {
    pub ensemble: IdentityEnsemble,
    /// Total draws made when each identity was accepted (1-based, ascending).
    pub attempts_at_acceptance: Vec<u64>,
    pub total_attempts: u64,
}

/// Draws candidates from `N(0, sigma_init² I)` and keeps each one whose
/// embedding is more than `ict` away from every identity kept so far.
///
/// Candidate `t` comes from the stream address `(t, 0)`, so the accepted set
/// depends on nothing but the arguments.
pub fn reject_sample(
    model: &EmbeddingModel,
    n_target: usize,
    ict: f64,
    max_attempts: u64,
    seed: u64,
    sigma_init: f64,
) -> Result<RejectOutcome> {
    if n_target == 0 {
        return Err(Error::Config("n_target must be at least 1".into()));
    }
    if max_attempts < n_target as u64 {
        return Err(Error::Config(format!(
            "max_attempts ({max_attempts}) is below n_target ({n_target})"
        )));
    }
    let stream = NoiseStream::new(seed, NoiseDomain::Reject);
    let d_w = model.d_w();
    let mut latents: Vec<LatentVector> = Vec::with_capacity(n_target);
    let mut accepted: Vec<(EmbeddingVector, f64)> = Vec::with_capacity(n_target);
    let mut at = Vec::with_capacity(n_target);
    let mut attempts = 0;
    while latents.len() < n_target {
        if attempts == max_attempts {
            return Err(Error::Saturation {
                accepted: latents.len(),
                target: n_target,
                attempts,
            });
        }
        let w = LatentVector(
            stream
                .normal_vector(attempts, 0, d_w)
                .into_iter()
                .map(|x| x * sigma_init)
                .collect(),
        );
        attempts += 1;
        let e = model.embed(&w)?;
        let ne = checked_norms(std::slice::from_ref(&e))?[0];
        let clear = accepted
            .par_iter()
            .all(|(f, nf)| angle_with_norms(&e, f, ne, *nf) > ict);
        if clear {
            latents.push(w);
            accepted.push((e, ne));
            at.push(attempts);
        }
    }
    let ensemble = IdentityEnsemble {
        latents,
        model_spec: model.spec().clone(),
        params: HyperParams::default(),
        seed,
        iterations_done: 0,
        w_avg: LatentVector::zeros(d_w),
    };
    Ok(RejectOutcome {
        ensemble,
        attempts_at_acceptance: at,
        total_attempts: attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::langevin_init;
    use crate::geometry::{angular_distance, pairwise_distances};
    use crate::model::{ModelKind, ModelSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_mis(g: &ContactGraph) -> usize {
        let n = g.n();
        let mut best = 0;
        for mask in 0u32..(1 << n) {
            let ok = g
                .edges()
                .iter()
                .all(|&(a, b)| mask & (1 << a) == 0 || mask & (1 << b) == 0);
            if ok {
                best = best.max(mask.count_ones() as usize);
            }
        }
        best
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> ContactGraph {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push((a, b));
                }
            }
        }
        ContactGraph::from_edges(n, edges).unwrap()
    }

    #[test]
    fn erode_trivial_graphs() {
        let empty = ContactGraph::from_edges(5, []).unwrap();
        assert_eq!(erode(&empty), vec![0, 1, 2, 3, 4]);
        let complete = ContactGraph::from_edges(6, (0..6).flat_map(|a| ((a + 1)..6).map(move |b| (a, b)))).unwrap();
        assert_eq!(erode(&complete).len(), 1);
        let path = ContactGraph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        assert_eq!(erode(&path), vec![0, 2]);
    }

    #[test]
    fn erode_breaks_ties_by_lowest_index() {
        // Square 0-1-2-3-0: all degree 2. Node 0 goes first, then 2 has degree 2.
        let square = ContactGraph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        assert_eq!(erode(&square), vec![1, 3]);
    }

    #[test]
    fn erode_bounded_by_mis() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=12 {
            for _ in 0..8 {
                let p = rng.random::<f64>();
                let g = random_graph(&mut rng, n, p);
                let s = erode(&g);
                assert!(s.len() <= brute_mis(&g));
                for (i, &a) in s.iter().enumerate() {
                    for &b in &s[i + 1..] {
                        assert!(!g.has_edge(a, b));
                    }
                }
            }
        }
    }

    #[test]
    fn graph_matches_double_loop() {
        let spec = ModelSpec::new(ModelKind::Linear, 6, 6, 4);
        let model = spec.build().unwrap();
        let ens = langevin_init(30, &spec, 9, 1.0).unwrap();
        let g = build_contact_graph(&ens, &model, 1.3).unwrap();
        let e: Vec<_> = ens.latents.iter().map(|w| model.embed(w).unwrap()).collect();
        let mut expected = Vec::new();
        for a in 0..e.len() {
            for b in (a + 1)..e.len() {
                if angular_distance(&e[a], &e[b]).unwrap() < 1.3 {
                    expected.push((a, b));
                }
            }
        }
        assert_eq!(g.edges(), expected.as_slice());
        for a in 0..g.n() {
            assert_eq!(
                g.degree()[a],
                expected.iter().filter(|&&(x, y)| x == a || y == a).count()
            );
        }
    }

    #[test]
    fn graph_extremes() {
        let spec = ModelSpec::new(ModelKind::Identity, 3, 3, 0);
        let model = spec.build().unwrap();
        let mut ens = langevin_init(3, &spec, 0, 1.0).unwrap();
        ens.latents = vec![
            vec![1.0, 0.0, 0.0].into(),
            vec![0.0, 1.0, 0.0].into(),
            vec![0.0, 0.0, 1.0].into(),
        ];
        assert_eq!(build_contact_graph(&ens, &model, 1.6).unwrap().edge_count(), 3);
        assert_eq!(build_contact_graph(&ens, &model, 1.5).unwrap().edge_count(), 0);
    }

    #[test]
    fn erosion_sound_against_distances() {
        let spec = ModelSpec::new(ModelKind::Identity, 4, 4, 0);
        let model = spec.build().unwrap();
        let ens = langevin_init(60, &spec, 3, 1.0).unwrap();
        let g = build_contact_graph(&ens, &model, 1.2).unwrap();
        let s = erode(&g);
        let e: Vec<_> = ens.latents.iter().map(|w| model.embed(w).unwrap()).collect();
        let d = pairwise_distances(&e).unwrap();
        for (i, &a) in s.iter().enumerate() {
            for &b in &s[i + 1..] {
                assert!(d.get(a, b) >= 1.2);
            }
        }
    }

    #[test]
    fn reject_vacuous_and_infeasible() {
        let spec = ModelSpec::new(ModelKind::Linear, 8, 8, 1);
        let model = spec.build().unwrap();
        let out = reject_sample(&model, 10, 0.0, 10, 5, 1.0).unwrap();
        assert_eq!(out.attempts_at_acceptance, (1..=10).collect::<Vec<u64>>());
        let err = reject_sample(&model, 2, std::f64::consts::PI, 200, 5, 1.0).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Saturation {
                    accepted: 1,
                    target: 2,
                    attempts: 200
                }
            ),
            "{err:?}"
        );
        assert!(matches!(
            reject_sample(&model, 5, 0.0, 4, 5, 1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn reject_replays_draw_for_draw() {
        let spec = ModelSpec::new(ModelKind::Linear, 8, 8, 2);
        let model = spec.build().unwrap();
        let ict = 1.45;
        let out = reject_sample(&model, 5, ict, 10_000, 17, 1.0).unwrap();

        let stream = NoiseStream::new(17, NoiseDomain::Reject);
        let mut kept: Vec<LatentVector> = Vec::new();
        let mut t = 0;
        while kept.len() < 5 {
            let w = LatentVector(stream.normal_vector(t, 0, 8));
            t += 1;
            let e = model.embed(&w).unwrap();
            let mut ok = true;
            for k in &kept {
                if angular_distance(&e, &model.embed(k).unwrap()).unwrap() <= ict {
                    ok = false;
                }
            }
            if ok {
                kept.push(w);
            }
        }
        assert_eq!(out.ensemble.latents, kept);
        assert_eq!(out.total_attempts, t);
    }

    proptest! {
        #[test]
        fn erosion_is_independent_set(n in 1usize..40, p in 0.0f64..1.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, n, p);
            let s = erode(&g);
            prop_assert!(!s.is_empty());
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
            for (i, &a) in s.iter().enumerate() {
                for &b in &s[i + 1..] {
                    prop_assert!(!g.has_edge(a, b));
                }
            }
            prop_assert_eq!(s, erode(&g.clone()));
        }
    }
}
