//! The `BIDE` container: one binary layout for every persisted artifact.
//!
//! ```text
//! "BIDE" | version: u32 LE | header_len: u64 LE | header (JSON) | payload
//! ```
//!
//! The header is compact JSON with sorted keys. The payload is a run of
//! little-endian `f64` arrays whose offsets and byte lengths the header lists.
//! Identical content always serialises to identical bytes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateBasis;
use crate::dynamics::{IdentityEnsemble, RunTrace, TraceRecord, VariationSet};
use crate::error::{Error, Result};
use crate::geometry::{EmbeddingVector, LatentVector};
use crate::losses::TrainingSetEmbeddings;
use crate::model::ModelSpec;
use crate::params::HyperParams;

pub const MAGIC: [u8; 4] = *b"BIDE";
pub const VERSION: u32 = 1;
const PREFIX_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Identities,
    Variations,
    Embeddings,
    Covariates,
    Trace,
}

/// How a covariate basis was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitInfo {
    pub method: String,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Artifact {
    Identities(IdentityEnsemble),
    Variations(VariationSet),
    Embeddings(TrainingSetEmbeddings),
    Covariates {
        basis: CovariateBasis,
        fit: Option<FitInfo>,
    },
    Trace(RunTrace),
}

impl Artifact {
    pub fn kind(&self) -> ArtifactKind {
        match self {
            Artifact::Identities(_) => ArtifactKind::Identities,
            Artifact::Variations(_) => ArtifactKind::Variations,
            Artifact::Embeddings(_) => ArtifactKind::Embeddings,
            Artifact::Covariates { .. } => ArtifactKind::Covariates,
            Artifact::Trace(_) => ArtifactKind::Trace,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: ArtifactKind,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
    payload_bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentitiesMeta {
    n_id: usize,
    d_w: usize,
    seed: u64,
    iterations_done: u64,
    model_spec: ModelSpec,
    params: HyperParams,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariationsMeta {
    n_id: usize,
    n_var: usize,
    d_w: usize,
    d_e: usize,
    seed: u64,
    iterations_done: u64,
    identity_ids: Vec<u64>,
    params: HyperParams,
    reference: IdentitiesMeta,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingsMeta {
    n: usize,
    d_e: usize,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CovariatesMeta {
    k: usize,
    d_w: usize,
    names: Vec<String>,
    #[serde(default)]
    fit: Option<FitInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceMeta {
    records: usize,
    columns: Vec<String>,
}

struct Payload {
    arrays: Vec<(String, Vec<f64>)>,
}

impl Payload {
    fn new() -> Self {
        Self { arrays: Vec::new() }
    }

    fn push(&mut self, name: &str, data: Vec<f64>) {
        self.arrays.push((name.to_string(), data));
    }
}

fn flatten<V: AsRef<[f64]>>(rows: &[V]) -> Vec<f64> {
    rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect()
}

fn identities_meta(e: &IdentityEnsemble) -> IdentitiesMeta {
    IdentitiesMeta {
        n_id: e.len(),
        d_w: e.d_w(),
        seed: e.seed,
        iterations_done: e.iterations_done,
        model_spec: e.model_spec.clone(),
        params: e.params.clone(),
    }
}

fn encode(artifact: &Artifact) -> Result<(serde_json::Value, Payload)> {
    let mut p = Payload::new();
    let meta = match artifact {
        Artifact::Identities(e) => {
            e.validate()?;
            p.push("latents", flatten(&e.latents));
            p.push("w_avg", e.w_avg.to_vec());
            serde_json::to_value(identities_meta(e))
        }
        Artifact::Variations(v) => {
            v.validate()?;
            p.push(
                "variations",
                v.variations.iter().flat_map(|vars| flatten(vars)).collect(),
            );
            p.push("reference_latents", flatten(&v.reference.latents));
            p.push("reference_w_avg", v.reference.w_avg.to_vec());
            p.push("reference_embeddings", flatten(&v.reference_embeddings));
            serde_json::to_value(VariationsMeta {
                n_id: v.n_id(),
                n_var: v.n_var(),
                d_w: v.reference.d_w(),
                d_e: v.reference.model_spec.d_e,
                seed: v.seed,
                iterations_done: v.iterations_done,
                identity_ids: v.identity_ids.clone(),
                params: v.params.clone(),
                reference: identities_meta(&v.reference),
            })
        }
        Artifact::Embeddings(t) => {
            p.push("embeddings", flatten(t.embeddings()));
            serde_json::to_value(EmbeddingsMeta {
                n: t.len(),
                d_e: t.dim().unwrap_or(0),
                labels: t.labels().map(|l| l.to_vec()),
            })
        }
        Artifact::Covariates { basis, fit } => {
            p.push("directions", flatten(basis.directions()));
            serde_json::to_value(CovariatesMeta {
                k: basis.len(),
                d_w: basis.d_w(),
                names: basis.names().to_vec(),
                fit: fit.clone(),
            })
        }
        Artifact::Trace(t) => {
            for (c, name) in TraceRecord::COLUMNS.iter().enumerate() {
                p.push(name, t.records.iter().map(|r| r.to_row()[c]).collect());
            }
            serde_json::to_value(TraceMeta {
                records: t.len(),
                columns: TraceRecord::COLUMNS.iter().map(|s| s.to_string()).collect(),
            })
        }
    }
    .map_err(|e| Error::Header(e.to_string()))?;
    Ok((meta, p))
}

/// Serialises an artifact to container bytes. Refuses non-finite values.
pub fn to_bytes(artifact: &Artifact) -> Result<Vec<u8>> {
    let (meta, payload) = encode(artifact)?;
    let mut arrays = Vec::new();
    let mut offset = 0u64;
    for (name, data) in &payload.arrays {
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "array `{name}` element {i} is {}; refusing to write",
                data[i]
            )));
        }
        let len = 8 * data.len() as u64;
        arrays.push(ArrayEntry {
            name: name.clone(),
            offset,
            len,
        });
        offset += len;
    }
    let header = Header {
        kind: artifact.kind(),
        meta,
        arrays,
        payload_bytes: offset,
    };
    // Going through `Value` sorts every object's keys.
    let value = serde_json::to_value(&header).map_err(|e| Error::Header(e.to_string()))?;
    let json = serde_json::to_vec(&value).map_err(|e| Error::Header(e.to_string()))?;

    let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + offset as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, data) in &payload.arrays {
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_container(path: impl AsRef<Path>, artifact: &Artifact) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(artifact)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Arrays<'a> {
    entries: Vec<ArrayEntry>,
    payload: &'a [u8],
}

impl Arrays<'_> {
    fn take(&self, name: &str, expected: usize) -> Result<Vec<f64>> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Header(format!("missing array `{name}`")))?;
        if entry.len != 8 * expected as u64 {
            return Err(Error::Header(format!(
                "array `{name}` has {} bytes, expected {}",
                entry.len,
                8 * expected
            )));
        }
        let start = entry.offset as usize;
        let bytes = &self.payload[start..start + entry.len as usize];
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Corrupt(format!("array `{name}` holds non-finite values")));
        }
        Ok(data)
    }
}

fn rows<T: From<Vec<f64>>>(data: Vec<f64>, n: usize, d: usize) -> Vec<T> {
    debug_assert_eq!(data.len(), n * d);
    if d == 0 {
        return (0..n).map(|_| T::from(Vec::new())).collect();
    }
    data.chunks_exact(d).map(|c| T::from(c.to_vec())).collect()
}

fn meta<T: DeserializeOwned>(value: serde_json::Value) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::Header(format!("meta: {e}")))
}

/// Re-tags validation failures of a decoded object as header errors.
fn schema<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io { .. } | Error::Corrupt(_) | Error::Header(_) => e,
        other => Error::Header(other.to_string()),
    })
}

fn decode_identities(m: IdentitiesMeta, arrays: &Arrays, latents: &str, w_avg: &str) -> Result<IdentityEnsemble> {
    if m.model_spec.d_w != m.d_w {
        return Err(Error::Header(format!(
            "d_w {} disagrees with model_spec.d_w {}",
            m.d_w, m.model_spec.d_w
        )));
    }
    let e = IdentityEnsemble {
        latents: rows(arrays.take(latents, m.n_id * m.d_w)?, m.n_id, m.d_w),
        w_avg: LatentVector(arrays.take(w_avg, m.d_w)?),
        model_spec: m.model_spec,
        params: m.params,
        seed: m.seed,
        iterations_done: m.iterations_done,
    };
    schema(e.validate())?;
    Ok(e)
}

fn decode(header: Header, payload: &[u8]) -> Result<Artifact> {
    let arrays = Arrays {
        entries: header.arrays,
        payload,
    };
    Ok(match header.kind {
        ArtifactKind::Identities => {
            Artifact::Identities(decode_identities(meta(header.meta)?, &arrays, "latents", "w_avg")?)
        }
        ArtifactKind::Variations => {
            let m: VariationsMeta = meta(header.meta)?;
            let reference = decode_identities(m.reference, &arrays, "reference_latents", "reference_w_avg")?;
            if reference.len() != m.n_id || reference.d_w() != m.d_w || reference.model_spec.d_e != m.d_e {
                return Err(Error::Header("variation dimensions disagree with the reference".into()));
            }
            let flat = arrays.take("variations", m.n_id * m.n_var * m.d_w)?;
            let variations = if m.n_var == 0 {
                vec![Vec::new(); m.n_id]
            } else {
                flat.chunks_exact(m.n_var * m.d_w)
                    .map(|c| rows(c.to_vec(), m.n_var, m.d_w))
                    .collect()
            };
            let set = VariationSet {
                variations,
                reference_embeddings: rows(arrays.take("reference_embeddings", m.n_id * m.d_e)?, m.n_id, m.d_e),
                reference,
                identity_ids: m.identity_ids,
                params: m.params,
                seed: m.seed,
                iterations_done: m.iterations_done,
            };
            schema(set.validate())?;
            Artifact::Variations(set)
        }
        ArtifactKind::Embeddings => {
            let m: EmbeddingsMeta = meta(header.meta)?;
            let e: Vec<EmbeddingVector> = rows(arrays.take("embeddings", m.n * m.d_e)?, m.n, m.d_e);
            Artifact::Embeddings(schema(TrainingSetEmbeddings::new(e, m.labels))?)
        }
        ArtifactKind::Covariates => {
            let m: CovariatesMeta = meta(header.meta)?;
            let dirs = rows(arrays.take("directions", m.k * m.d_w)?, m.k, m.d_w);
            Artifact::Covariates {
                basis: schema(CovariateBasis::new(dirs, m.names))?,
                fit: m.fit,
            }
        }
        ArtifactKind::Trace => {
            let m: TraceMeta = meta(header.meta)?;
            if m.columns != TraceRecord::COLUMNS {
                return Err(Error::Header(format!("unexpected trace columns {:?}", m.columns)));
            }
            let cols = TraceRecord::COLUMNS
                .iter()
                .map(|c| arrays.take(c, m.records))
                .collect::<Result<Vec<_>>>()?;
            let records = (0..m.records)
                .map(|i| {
                    let mut row = [0.0; 7];
                    for (c, col) in cols.iter().enumerate() {
                        row[c] = col[i];
                    }
                    TraceRecord::from_row(row)
                })
                .collect();
            Artifact::Trace(RunTrace { records })
        }
    })
}

pub fn from_bytes(bytes: &[u8]) -> Result<Artifact> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::Format(format!("bad magic {found:?}, expected \"BIDE\"")));
    }
    if bytes.len() < PREFIX_LEN {
        return Err(Error::Corrupt(format!(
            "file is {} bytes, shorter than the fixed prefix",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let available = (bytes.len() - PREFIX_LEN) as u64;
    if header_len > available {
        return Err(Error::Corrupt(format!(
            "header declares {header_len} bytes, only {available} present"
        )));
    }
    let header_end = PREFIX_LEN + header_len as usize;
    let text = std::str::from_utf8(&bytes[PREFIX_LEN..header_end])
        .map_err(|e| Error::Header(format!("header is not UTF-8: {e}")))?;
    let header: Header = serde_json::from_str(text).map_err(|e| Error::Header(e.to_string()))?;

    let payload = &bytes[header_end..];
    if payload.len() as u64 != header.payload_bytes {
        return Err(Error::Corrupt(format!(
            "payload is {} bytes, header declares {}",
            payload.len(),
            header.payload_bytes
        )));
    }
    let mut expected = 0u64;
    for a in &header.arrays {
        if a.offset != expected || a.len % 8 != 0 {
            return Err(Error::Header(format!("array `{}` has a misaligned extent", a.name)));
        }
        expected += a.len;
    }
    if expected != header.payload_bytes {
        return Err(Error::Header(format!(
            "arrays cover {expected} bytes, payload_bytes is {}",
            header.payload_bytes
        )));
    }
    decode(header, payload)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Artifact> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

fn wrong_kind(path: &Path, expected: ArtifactKind, found: ArtifactKind) -> Error {
    Error::Header(format!(
        "{}: expected a {expected:?} container, found {found:?}",
        path.display()
    ))
}

pub fn read_ensemble(path: impl AsRef<Path>) -> Result<IdentityEnsemble> {
    match read_container(path.as_ref())? {
        Artifact::Identities(e) => Ok(e),
        other => Err(wrong_kind(path.as_ref(), ArtifactKind::Identities, other.kind())),
    }
}

pub fn read_variations(path: impl AsRef<Path>) -> Result<VariationSet> {
    match read_container(path.as_ref())? {
        Artifact::Variations(v) => Ok(v),
        other => Err(wrong_kind(path.as_ref(), ArtifactKind::Variations, other.kind())),
    }
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<TrainingSetEmbeddings> {
    match read_container(path.as_ref())? {
        Artifact::Embeddings(e) => Ok(e),
        other => Err(wrong_kind(path.as_ref(), ArtifactKind::Embeddings, other.kind())),
    }
}

pub fn read_covariates(path: impl AsRef<Path>) -> Result<CovariateBasis> {
    match read_container(path.as_ref())? {
        Artifact::Covariates { basis, .. } => Ok(basis),
        other => Err(wrong_kind(path.as_ref(), ArtifactKind::Covariates, other.kind())),
    }
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<RunTrace> {
    match read_container(path.as_ref())? {
        Artifact::Trace(t) => Ok(t),
        other => Err(wrong_kind(path.as_ref(), ArtifactKind::Trace, other.kind())),
    }
}
