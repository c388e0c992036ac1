//! The textile sample pool and the embedding store built from it.
//!
//! A catalog is a JSON document of samples, each carrying a fibre
//! meta-category and the fields of the description template. The store maps
//! every sample id to the unit-normalized embedding of its rendered
//! description; it is built once and shared by every session.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, EmbeddingBackend};
use crate::vector::{normalize_slice, UnitVector, Vector, VectorError};

const BUNDLED_CATALOG: &str = include_str!("../data/catalog.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TextileId(pub u32);

impl fmt::Display for TextileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for TextileId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(TextileId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FibreCategory {
    Natural,
    Animal,
    Regenerated,
    Synthetic,
}

impl FibreCategory {
    pub const ALL: [FibreCategory; 4] =
        [FibreCategory::Natural, FibreCategory::Animal, FibreCategory::Regenerated, FibreCategory::Synthetic];

    pub fn as_str(self) -> &'static str {
        match self {
            FibreCategory::Natural => "natural",
            FibreCategory::Animal => "animal",
            FibreCategory::Regenerated => "regenerated",
            FibreCategory::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for FibreCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FibreCategory {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FibreCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| CatalogError::UnknownCategory(s.to_owned()))
    }
}

/// Slots of the description template. `sample_book_info` may be absent;
/// every other slot is required.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateFields {
    pub characteristic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_book_info: Option<String>,
    pub composition: String,
    pub raw_material: String,
    pub fibre_characteristic: String,
    pub fabric: String,
    pub produce_method: String,
    pub fabric_characteristic: String,
    pub application: String,
}

impl TemplateFields {
    fn required(&self) -> [(&'static str, &str); 8] {
        [
            ("characteristic", &self.characteristic),
            ("composition", &self.composition),
            ("raw_material", &self.raw_material),
            ("fibre_characteristic", &self.fibre_characteristic),
            ("fabric", &self.fabric),
            ("produce_method", &self.produce_method),
            ("fabric_characteristic", &self.fabric_characteristic),
            ("application", &self.application),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextileSample {
    pub id: TextileId,
    pub name: String,
    pub fibre_category: FibreCategory,
    pub template_fields: TemplateFields,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("malformed catalog: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("failed to read catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("duplicate sample id {0}")]
    DuplicateId(TextileId),
    #[error("unknown fibre category {0:?}")]
    UnknownCategory(String),
    #[error("sample {id}: missing required field `{field}`")]
    MissingField { id: String, field: &'static str },
    #[error("sample {id}: field `{field}` is empty")]
    EmptyField { id: TextileId, field: &'static str },
    #[error("sample id must be positive")]
    ZeroId,
    #[error("catalog has no samples")]
    Empty,
}

/// An ordered, validated collection of samples with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Catalog {
    samples: Vec<TextileSample>,
}

impl Catalog {
    pub fn new(samples: Vec<TextileSample>) -> Result<Self, CatalogError> {
        if samples.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut seen = BTreeSet::new();
        for s in &samples {
            if s.id.0 == 0 {
                return Err(CatalogError::ZeroId);
            }
            if !seen.insert(s.id) {
                return Err(CatalogError::DuplicateId(s.id));
            }
            if s.name.trim().is_empty() {
                return Err(CatalogError::EmptyField { id: s.id, field: "name" });
            }
            if let Some((field, _)) = s.template_fields.required().into_iter().find(|(_, v)| v.trim().is_empty()) {
                return Err(CatalogError::EmptyField { id: s.id, field });
            }
        }
        Ok(Self { samples })
    }

    /// The 20-sample catalog shipped with the crate.
    pub fn bundled() -> Self {
        load_catalog(BUNDLED_CATALOG.as_bytes()).expect("bundled catalog is valid")
    }

    pub fn samples(&self) -> &[TextileSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: TextileId) -> Option<&TextileSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn contains(&self, id: TextileId) -> bool {
        self.get(id).is_some()
    }

    pub fn ids(&self) -> impl Iterator<Item = TextileId> + '_ {
        self.samples.iter().map(|s| s.id)
    }

    pub fn in_category(&self, category: FibreCategory) -> impl Iterator<Item = &TextileSample> {
        self.samples.iter().filter(move |s| s.fibre_category == category)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }
}

#[derive(Deserialize)]
struct RawCatalog {
    samples: Vec<RawSample>,
}

#[derive(Deserialize)]
struct RawSample {
    id: Option<u32>,
    name: Option<String>,
    fibre_category: Option<String>,
    template_fields: Option<RawFields>,
}

#[derive(Deserialize)]
struct RawFields {
    characteristic: Option<String>,
    sample_book_info: Option<String>,
    composition: Option<String>,
    raw_material: Option<String>,
    fibre_characteristic: Option<String>,
    fabric: Option<String>,
    produce_method: Option<String>,
    fabric_characteristic: Option<String>,
    application: Option<String>,
}

impl RawSample {
    fn validate(self, position: usize) -> Result<TextileSample, CatalogError> {
        let label = self.id.map_or_else(|| format!("#{position}"), |id| id.to_string());
        let missing = |field| CatalogError::MissingField { id: label.clone(), field };
        let id = TextileId(self.id.ok_or_else(|| missing("id"))?);
        let name = self.name.ok_or_else(|| missing("name"))?;
        let fibre_category = self.fibre_category.ok_or_else(|| missing("fibre_category"))?.parse()?;
        let f = self.template_fields.ok_or_else(|| missing("template_fields"))?;
        let template_fields = TemplateFields {
            characteristic: f.characteristic.ok_or_else(|| missing("characteristic"))?,
            sample_book_info: f.sample_book_info.filter(|s| !s.trim().is_empty()),
            composition: f.composition.ok_or_else(|| missing("composition"))?,
            raw_material: f.raw_material.ok_or_else(|| missing("raw_material"))?,
            fibre_characteristic: f.fibre_characteristic.ok_or_else(|| missing("fibre_characteristic"))?,
            fabric: f.fabric.ok_or_else(|| missing("fabric"))?,
            produce_method: f.produce_method.ok_or_else(|| missing("produce_method"))?,
            fabric_characteristic: f.fabric_characteristic.ok_or_else(|| missing("fabric_characteristic"))?,
            application: f.application.ok_or_else(|| missing("application"))?,
        };
        Ok(TextileSample { id, name, fibre_category, template_fields })
    }
}

/// Parses and validates a JSON catalog document.
pub fn load_catalog(source: impl Read) -> Result<Catalog, CatalogError> {
    let raw: RawCatalog = serde_json::from_reader(source)?;
    let samples = raw
        .samples
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.validate(i))
        .collect::<Result<Vec<_>, _>>()?;
    Catalog::new(samples)
}

/// Instantiates the description template for `sample`:
///
/// `{name} is {characteristic}. {sample_book_info}. {composition}, is a
/// {category} fibre produced by {raw_material}, {fibre_characteristic}.
/// {fabric} is {produce_method} and {fabric_characteristic}. {name} is
/// commonly used for {application}.`
///
/// The sample-book sentence is dropped when that slot is absent.
pub fn render_description(sample: &TextileSample) -> Result<String, CatalogError> {
    let f = &sample.template_fields;
    if sample.name.trim().is_empty() {
        return Err(CatalogError::EmptyField { id: sample.id, field: "name" });
    }
    if let Some((field, _)) = f.required().into_iter().find(|(_, v)| v.trim().is_empty()) {
        return Err(CatalogError::EmptyField { id: sample.id, field });
    }
    let name = &sample.name;
    let mut out = format!("{name} is {}.", f.characteristic);
    if let Some(info) = &f.sample_book_info {
        out.push_str(&format!(" {info}."));
    }
    out.push_str(&format!(
        " {}, is a {} fibre produced by {}, {}. {} is {} and {}. {name} is commonly used for {}.",
        f.composition,
        sample.fibre_category,
        f.raw_material,
        f.fibre_characteristic,
        f.fabric,
        f.produce_method,
        f.fabric_characteristic,
        f.application,
    ));
    Ok(out)
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("embedding backend failed for sample {id}: {source}")]
    Backend { id: TextileId, source: BackendError },
    #[error("sample {id}: embedding dimension {found} differs from {expected}")]
    DimensionDrift { id: TextileId, expected: usize, found: usize },
    #[error("sample {id}: {source}")]
    Vector { id: TextileId, source: VectorError },
    #[error("duplicate store entry {0}")]
    DuplicateId(TextileId),
    #[error("embedding store is empty")]
    Empty,
    #[error("store does not cover the catalog (missing {missing:?}, extra {extra:?})")]
    Coverage { missing: Vec<TextileId>, extra: Vec<TextileId> },
    #[error("malformed store file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("store file i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Unit-normalized embeddings keyed by catalog id, plus their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    backend: String,
    model: String,
    dim: usize,
    entries: BTreeMap<TextileId, UnitVector>,
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    backend: Option<String>,
    dim: usize,
    entries: BTreeMap<u32, Vec<f64>>,
}

impl EmbeddingStore {
    /// Builds a store from raw vectors, normalizing every entry.
    pub fn from_vectors(
        backend: impl Into<String>,
        model: impl Into<String>,
        vectors: impl IntoIterator<Item = (TextileId, Vector)>,
    ) -> Result<Self, StoreError> {
        let mut entries = BTreeMap::new();
        let mut dim = None;
        for (id, v) in vectors {
            let expected = *dim.get_or_insert(v.dim());
            if v.dim() != expected {
                return Err(StoreError::DimensionDrift { id, expected, found: v.dim() });
            }
            let unit = normalize_slice(v.as_slice()).map_err(|source| StoreError::Vector { id, source })?;
            if entries.insert(id, unit).is_some() {
                return Err(StoreError::DuplicateId(id));
            }
        }
        let dim = dim.ok_or(StoreError::Empty)?;
        Ok(Self { backend: backend.into(), model: model.into(), dim, entries })
    }

    pub fn backend(&self) -> &str {
        &self.backend
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: TextileId) -> Option<&UnitVector> {
        self.entries.get(&id)
    }

    pub fn contains(&self, id: TextileId) -> bool {
        self.entries.contains_key(&id)
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (TextileId, &UnitVector)> {
        self.entries.iter().map(|(id, v)| (*id, v))
    }

    pub fn ids(&self) -> BTreeSet<TextileId> {
        self.entries.keys().copied().collect()
    }

    /// Checks that the store has exactly one entry per catalog id.
    pub fn check_covers(&self, catalog: &Catalog) -> Result<(), StoreError> {
        let wanted: BTreeSet<_> = catalog.ids().collect();
        let have = self.ids();
        if wanted == have {
            return Ok(());
        }
        Err(StoreError::Coverage {
            missing: wanted.difference(&have).copied().collect(),
            extra: have.difference(&wanted).copied().collect(),
        })
    }

    /// Writes the cache file: `{"model", "backend", "dim", "entries": {"<id>": [..]}}`.
    pub fn write_json(&self, mut out: impl Write) -> Result<(), StoreError> {
        let file = StoreFile {
            model: self.model.clone(),
            backend: Some(self.backend.clone()),
            dim: self.dim,
            entries: self.entries.iter().map(|(id, v)| (id.0, v.as_slice().to_vec())).collect(),
        };
        serde_json::to_writer(&mut out, &file)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    /// Reads a cache file, re-normalizing every vector.
    pub fn read_json(source: impl Read) -> Result<Self, StoreError> {
        let file: StoreFile = serde_json::from_reader(source)?;
        let vectors = file
            .entries
            .into_iter()
            .map(|(id, raw)| {
                let id = TextileId(id);
                Vector::new(raw).map(|v| (id, v)).map_err(|source| StoreError::Vector { id, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let store = Self::from_vectors(file.backend.unwrap_or_else(|| "unknown".into()), file.model, vectors)?;
        if store.dim != file.dim {
            let id = *store.entries.keys().next().expect("non-empty");
            return Err(StoreError::DimensionDrift { id, expected: file.dim, found: store.dim });
        }
        Ok(store)
    }
}

/// Embeds every sample's rendered description and collects the results
/// into a store. Up to `backend.max_in_flight()` requests run at once; any
/// failure aborts the whole build.
pub fn build_embedding_store(catalog: &Catalog, backend: &dyn EmbeddingBackend) -> Result<EmbeddingStore, StoreError> {
    let texts = catalog
        .samples()
        .iter()
        .map(|s| render_description(s).map(|t| (s.id, t)))
        .collect::<Result<Vec<_>, _>>()?;

    let results: Vec<Mutex<Option<Result<Vector, BackendError>>>> = texts.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = backend.max_in_flight().clamp(1, texts.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((_, text)) = texts.get(i) else { break };
                let r = backend.embed(text);
                let failed = r.is_err();
                *results[i].lock().expect("result slot") = Some(r);
                if failed {
                    // Stop handing out work; the build is already lost.
                    next.store(texts.len(), Ordering::Relaxed);
                }
            });
        }
    });

    let mut vectors = Vec::with_capacity(texts.len());
    let mut first_failure = None;
    for ((id, _), slot) in texts.iter().zip(results) {
        match slot.into_inner().expect("result slot") {
            Some(Ok(v)) => vectors.push((*id, v)),
            Some(Err(source)) => {
                first_failure.get_or_insert(StoreError::Backend { id: *id, source });
            }
            None => {}
        }
    }
    if let Some(err) = first_failure {
        return Err(err);
    }
    EmbeddingStore::from_vectors(backend.kind(), backend.model_name(), vectors)
}
