//! Loading the catalog, the embedding store and a backend that matches it.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use texhand_core::{
    build_embedding_store, load_catalog, BackendConfig, BackendError, BackendKind, Catalog, CatalogError,
    EmbeddingBackend, EmbeddingStore, MockBackend, StoreError,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SetupError {
    #[error("cannot open {path}: {source}")]
    Open { path: String, source: std::io::Error },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("store was embedded with {store_kind}/{store_model}, backend is {kind}/{model}")]
    Mismatch { store_kind: String, store_model: String, kind: String, model: String },
}

fn open(path: &Path) -> Result<BufReader<File>, SetupError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| SetupError::Open { path: path.display().to_string(), source })
}

/// The catalog at `path`, or the bundled one.
pub fn catalog_from(path: Option<&Path>) -> Result<Catalog, SetupError> {
    match path {
        Some(p) => Ok(load_catalog(open(p)?)?),
        None => Ok(Catalog::bundled()),
    }
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore, SetupError> {
    Ok(EmbeddingStore::read_json(open(path)?)?)
}

/// A backend able to embed queries into the store's space. With no config
/// a mock store gets a mock of the same dimension; a configured backend
/// must match the store's provenance (the backend kind is not checked
/// for caches that do not record it).
pub fn backend_for(store: &EmbeddingStore, config: Option<&BackendConfig>) -> Result<Arc<dyn EmbeddingBackend>, SetupError> {
    let backend: Arc<dyn EmbeddingBackend> = match config {
        Some(c) if c.kind == BackendKind::Mock => Arc::new(MockBackend::new(store.dim())),
        Some(c) => Arc::from(c.build()?),
        None if store.backend() == "mock" => Arc::new(MockBackend::new(store.dim())),
        None => {
            return Err(BackendError::Config(format!(
                "store was built with the {} backend; pass a config describing it",
                store.backend()
            ))
            .into())
        }
    };
    let kind_known = store.backend() != "unknown";
    if (kind_known && backend.kind() != store.backend()) || backend.model_name() != store.model() {
        return Err(SetupError::Mismatch {
            store_kind: store.backend().into(),
            store_model: store.model().into(),
            kind: backend.kind().into(),
            model: backend.model_name().into(),
        });
    }
    Ok(backend)
}

/// Everything a game needs.
pub struct Setup {
    pub catalog: Arc<Catalog>,
    pub store: Arc<EmbeddingStore>,
    pub backend: Arc<dyn EmbeddingBackend>,
}

impl Setup {
    /// Loads `store` when given (checking it covers the catalog), otherwise
    /// embeds the catalog with `backend`.
    pub fn load(catalog: Option<&Path>, store: Option<&Path>, backend: Option<&BackendConfig>) -> Result<Self, SetupError> {
        let catalog = catalog_from(catalog)?;
        let (store, backend) = match store {
            Some(path) => {
                let store = read_store(path)?;
                store.check_covers(&catalog)?;
                let backend = backend_for(&store, backend)?;
                (store, backend)
            }
            None => {
                let backend: Arc<dyn EmbeddingBackend> = Arc::from(backend.cloned().unwrap_or_default().build()?);
                (build_embedding_store(&catalog, backend.as_ref())?, backend)
            }
        };
        Ok(Self { catalog: Arc::new(catalog), store: Arc::new(store), backend })
    }
}
