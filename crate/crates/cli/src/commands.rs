use std::fs;
use std::path::{Path, PathBuf};

use brownpack::analysis::{
    contacts_per_identity, histogram, leakage_minimum, mean_pairwise_distance, rho_threshold, trace_summary,
};
use brownpack::covariates::{fit_direction, CovariateBasis, LabeledLatents};
use brownpack::dynamics::{
    disco_init, init_variations, langevin_init, run_dispersion, run_langevin, IdentityEnsemble, RunTrace, VariationSet,
};
use brownpack::geometry::{angular_distance, pairwise_distances, DistanceMatrix};
use brownpack::io::{
    read_covariates, read_embeddings, read_ensemble, write_container, Artifact, ExperimentConfig, FitInfo,
};
use brownpack::losses::TrainingSetEmbeddings;
use brownpack::sampling::{build_contact_graph, erode as erode_graph, reject_sample};
use brownpack::{EmbeddingModel, Error, LatentVector, Result};
use serde::Deserialize;
use serde_json::{json, Value};

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Pretty JSON with sorted keys and a trailing newline.
fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialise");
    write_text(path, &(text + "\n"))
}

fn write_config(out: &Path, config: &ExperimentConfig) -> Result<PathBuf> {
    let path = out.join("config.json");
    write_text(&path, &(config.to_canonical_json() + "\n"))?;
    Ok(path)
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str, command: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("{command} needs `{key}`")))
}

fn outputs(paths: &[PathBuf]) -> Value {
    json!(paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>())
}

/// Training embeddings from `training`, or a synthetic set of `n_tr` when only that is given.
fn training_set(config: &ExperimentConfig, model: &EmbeddingModel) -> Result<Option<TrainingSetEmbeddings>> {
    if let Some(path) = &config.training {
        return read_embeddings(path).map(Some);
    }
    config
        .n_tr
        .map(|n| TrainingSetEmbeddings::synthetic(model, n, config.seed, config.sigma_init))
        .transpose()
}

fn embedding_distances(ensemble: &IdentityEnsemble, model: &EmbeddingModel) -> Result<DistanceMatrix> {
    let e = ensemble
        .latents
        .iter()
        .map(|w| model.embed(w))
        .collect::<Result<Vec<_>>>()?;
    pairwise_distances(&e)
}

fn ratio_or_null(distances: &DistanceMatrix, threshold: f64, f: fn(&DistanceMatrix, f64) -> Result<f64>) -> Value {
    if distances.len() < 2 {
        Value::Null
    } else {
        json!(f(distances, threshold).expect("at least two identities"))
    }
}

pub fn langevin(config: &ExperimentConfig, out: &Path) -> Result<Value> {
    let spec = config.model_spec();
    let mut ensemble = match &config.input {
        Some(path) => {
            let e = read_ensemble(path)?;
            if e.model_spec != spec {
                return Err(Error::Config(format!(
                    "config model {spec:?} differs from the input ensemble's {:?}",
                    e.model_spec
                )));
            }
            e
        }
        None => {
            let mut e = langevin_init(config.n_id, &spec, config.seed, config.sigma_init)?;
            e.w_avg = config.w_avg();
            e
        }
    };
    ensemble.params = config.params.clone();
    let model = spec.build()?;
    let training = training_set(config, &model)?;

    let before = embedding_distances(&ensemble, &model)?;
    let mut trace = RunTrace::default();
    run_langevin(&mut ensemble, &model, training.as_ref(), &mut trace)?;
    let after = embedding_distances(&ensemble, &model)?;

    let d0 = config.params.d0_e;
    let dt: Vec<f64> = trace.records.iter().map(|r| r.dt).collect();
    let mut stats = json!({
        "n_id": ensemble.len(),
        "iterations": trace.len(),
        "iterations_done": ensemble.iterations_done,
        "initial_mean_embedding_distance": mean_pairwise_distance(&before),
        "final_mean_embedding_distance": mean_pairwise_distance(&after),
        "initial_rho0": ratio_or_null(&before, d0, rho_threshold),
        "final_rho0": ratio_or_null(&after, d0, rho_threshold),
        "final_contacts_per_identity": ratio_or_null(&after, d0, contacts_per_identity),
        "dt_min": dt.iter().copied().reduce(f64::min),
        "dt_max": dt.iter().copied().reduce(f64::max),
        "plateau_change": trace_summary(&trace).ok().map(|s| s.plateau_change),
    });
    if let Some(t) = &training {
        stats["training_min_distance"] = json!(leakage_minimum(&ensemble, &model, t)?.min_distance);
    }

    let files = [
        out.join("ensemble.bide"),
        out.join("trace.bide"),
        out.join("stats.json"),
    ];
    write_container(&files[0], &Artifact::Identities(ensemble))?;
    write_container(&files[1], &Artifact::Trace(trace))?;
    write_json(&files[2], &stats)?;
    let cfg = write_config(out, config)?;
    let mut all = files.to_vec();
    all.push(cfg);
    Ok(json!({"outputs": outputs(&all), "stats": stats}))
}

/// Pooled intra-class statistics of a variation set.
pub fn variation_stats(set: &VariationSet, model: &EmbeddingModel) -> Result<Value> {
    let mut intra_sum = 0.0;
    let mut intra_pairs = 0usize;
    let mut ref_sum = 0.0;
    let mut ref_max: f64 = 0.0;
    for (vars, e_ref) in set.variations.iter().zip(&set.reference_embeddings) {
        let e = vars.iter().map(|w| model.embed(w)).collect::<Result<Vec<_>>>()?;
        let d = pairwise_distances(&e)?;
        intra_sum += d.pairs().map(|(_, _, x)| x).sum::<f64>();
        intra_pairs += d.pair_count();
        for v in &e {
            let r = angular_distance(v, e_ref)?;
            ref_sum += r;
            ref_max = ref_max.max(r);
        }
    }
    let n = (set.n_id() * set.n_var()) as f64;
    Ok(json!({
        "n_id": set.n_id(),
        "n_var": set.n_var(),
        "iterations_done": set.iterations_done,
        "mean_intra_class_distance": if intra_pairs == 0 { 0.0 } else { intra_sum / intra_pairs as f64 },
        "mean_distance_to_reference": ref_sum / n,
        "max_distance_to_reference": ref_max,
    }))
}

pub fn dispersion(config: &ExperimentConfig, out: &Path, disco: bool) -> Result<Value> {
    let command = if disco { "disco" } else { "dispersion" };
    let reference = read_ensemble(require(&config.reference, "reference", command)?)?;
    let model = reference.model_spec.build()?;
    let p = &config.params;
    let mut set = if disco {
        let basis = read_covariates(require(&config.covariates, "covariates", command)?)?;
        disco_init(&reference, config.n_var, p.xi0, p.lambda0, &basis, config.seed)?
    } else {
        init_variations(&reference, config.n_var, p.xi0, config.seed)?
    };
    set.params = p.clone();
    let initial = variation_stats(&set, &model)?;
    let mut trace = RunTrace::default();
    run_dispersion(&mut set, &model, &mut trace)?;
    let mut stats = variation_stats(&set, &model)?;
    stats["initial_mean_intra_class_distance"] = initial["mean_intra_class_distance"].clone();

    let files = [
        out.join("variations.bide"),
        out.join("trace.bide"),
        out.join("stats.json"),
    ];
    write_container(&files[0], &Artifact::Variations(set))?;
    write_container(&files[1], &Artifact::Trace(trace))?;
    write_json(&files[2], &stats)?;
    let cfg = write_config(out, config)?;
    let mut all = files.to_vec();
    all.push(cfg);
    Ok(json!({"outputs": outputs(&all), "stats": stats}))
}

pub fn reject(config: &ExperimentConfig, out: &Path) -> Result<Value> {
    let model = config.model_spec().build()?;
    let ict = config.ict.unwrap_or(config.params.d0_e);
    let outcome = reject_sample(
        &model,
        config.n_id,
        ict,
        config.max_attempts,
        config.seed,
        config.sigma_init,
    )?;
    let mut ensemble = outcome.ensemble;
    ensemble.params = config.params.clone();
    ensemble.w_avg = config.w_avg();
    let attempts = json!({
        "ict": ict,
        "accepted": ensemble.len(),
        "total_attempts": outcome.total_attempts,
        "attempts_at_acceptance": outcome.attempts_at_acceptance,
    });
    let files = [out.join("ensemble.bide"), out.join("attempts.json")];
    write_container(&files[0], &Artifact::Identities(ensemble))?;
    write_json(&files[1], &attempts)?;
    let cfg = write_config(out, config)?;
    Ok(json!({
        "outputs": outputs(&[files[0].clone(), files[1].clone(), cfg]),
        "accepted": config.n_id,
        "total_attempts": outcome.total_attempts,
    }))
}

pub fn erode(config: &ExperimentConfig, out: &Path) -> Result<Value> {
    let ensemble = read_ensemble(require(&config.input, "input", "erode")?)?;
    let model = ensemble.model_spec.build()?;
    let threshold = config.ict.unwrap_or(ensemble.params.d0_e / config.d0_factor);
    let graph = build_contact_graph(&ensemble, &model, threshold)?;
    let survivors = erode_graph(&graph);
    let kept = ensemble.select(&survivors);
    let listing = json!({
        "threshold": threshold,
        "n_input": ensemble.len(),
        "n_contacts": graph.edge_count(),
        "survivors": survivors,
    });
    let files = [out.join("ensemble.bide"), out.join("survivors.json")];
    write_container(&files[0], &Artifact::Identities(kept))?;
    write_json(&files[1], &listing)?;
    let cfg = write_config(out, config)?;
    Ok(json!({
        "outputs": outputs(&[files[0].clone(), files[1].clone(), cfg]),
        "threshold": threshold,
        "n_input": ensemble.len(),
        "n_survivors": survivors.len(),
    }))
}

pub fn stats(config: &ExperimentConfig, out: &Path) -> Result<Value> {
    let ensemble = read_ensemble(require(&config.input, "input", "stats")?)?;
    let model = ensemble.model_spec.build()?;
    let d = embedding_distances(&ensemble, &model)?;
    let threshold = config.ict.unwrap_or(config.params.d0_e);
    let (lo, hi) = (0.0, std::f64::consts::PI);
    let mut files = Vec::new();

    let inter: Vec<f64> = d.pairs().map(|(_, _, x)| x).collect();
    let path = out.join("inter_class_hist.csv");
    write_text(&path, &histogram(&inter, config.n_bins, lo, hi)?.to_csv())?;
    files.push(path);

    let mut summary = json!({
        "n_id": ensemble.len(),
        "threshold": threshold,
        "mean_inter_class_distance": mean_pairwise_distance(&d),
        "min_inter_class_distance": inter.iter().copied().reduce(f64::min),
        "rho_threshold": ratio_or_null(&d, threshold, rho_threshold),
        "contacts_per_identity": ratio_or_null(&d, threshold, contacts_per_identity),
        "rho0": ratio_or_null(&d, config.params.d0_e, rho_threshold),
    });

    if let Some(path) = &config.variations {
        let set = brownpack::io::read_variations(path)?;
        if set.reference.model_spec != ensemble.model_spec {
            return Err(Error::Config("variations were built on a different model".into()));
        }
        let mut intra = Vec::new();
        for vars in &set.variations {
            let e = vars.iter().map(|w| model.embed(w)).collect::<Result<Vec<_>>>()?;
            intra.extend(pairwise_distances(&e)?.pairs().map(|(_, _, x)| x));
        }
        let path = out.join("intra_class_hist.csv");
        write_text(&path, &histogram(&intra, config.n_bins, lo, hi)?.to_csv())?;
        files.push(path);
        summary["variations"] = variation_stats(&set, &model)?;
    }

    if let Some(training) = training_set(config, &model)? {
        let leak = leakage_minimum(&ensemble, &model, &training)?;
        let path = out.join("training_hist.csv");
        write_text(&path, &histogram(&leak.distances, config.n_bins, lo, hi)?.to_csv())?;
        files.push(path);
        summary["training"] = json!({
            "n_training": training.len(),
            "min_distance": leak.min_distance,
            "synthetic_index": leak.synthetic,
            "training_index": leak.training,
        });
    }

    let path = out.join("summary.json");
    write_json(&path, &summary)?;
    files.push(path);
    files.push(write_config(out, config)?);
    Ok(json!({"outputs": outputs(&files), "summary": summary}))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabeledFile {
    directions: Vec<LabeledDirection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabeledDirection {
    name: String,
    latents: Vec<Vec<f64>>,
    labels: Vec<i8>,
}

pub fn fit_directions(config: &ExperimentConfig, out: &Path) -> Result<Value> {
    let path = require(&config.labeled, "labeled", "fit-directions")?;
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let file: LabeledFile =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut names = Vec::new();
    let mut directions = Vec::new();
    for d in file.directions {
        let data = LabeledLatents::new(d.latents.into_iter().map(LatentVector).collect(), d.labels)?;
        directions.push(fit_direction(&data, config.ridge)?);
        names.push(d.name);
    }
    let basis = CovariateBasis::new(directions, names)?;
    let k = basis.len();
    let fit = FitInfo {
        method: "ridge_least_squares".into(),
        ridge: config.ridge,
    };
    let file = out.join("covariates.bide");
    write_container(&file, &Artifact::Covariates { basis, fit: Some(fit) })?;
    let cfg = write_config(out, config)?;
    Ok(json!({"outputs": outputs(&[file, cfg]), "directions": k}))
}
