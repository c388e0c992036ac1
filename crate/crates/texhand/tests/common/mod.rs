#![allow(dead_code)]

//! Fixtures and brute-force oracles shared by the integration tests. The
//! oracles are written from the mock construction directly and share no
//! code with the crates under test.

use std::collections::BTreeMap;
use std::path::PathBuf;

use texhand_core::{load_catalog, Catalog};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Three samples whose field words never overlap.
pub fn disjoint_catalog() -> Catalog {
    load_catalog(std::fs::File::open(fixture("disjoint_catalog.json")).unwrap()).unwrap()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Unit-norm bag-of-tokens hash embedding.
pub fn oracle_embed(text: &str, dim: usize) -> Vec<f64> {
    let lower = text.to_lowercase();
    let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
    for tok in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        *counts.entry(tok).or_default() += 1.0;
    }
    let mut v = vec![0.0; dim];
    for (tok, n) in counts {
        let mut state = fnv1a(tok.as_bytes());
        for x in v.iter_mut() {
            let u = splitmix(&mut state);
            *x += n * (2.0 * (u as f64 / 18446744073709551616.0) - 1.0);
        }
    }
    unit(&v)
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Every candidate's cosine against `normalize(anchor + query)`, best first
/// (ties to the lower id), excluded ids dropped.
pub fn oracle_ranking(anchor: &[f64], query: &[f64], store: &BTreeMap<u32, Vec<f64>>, excluded: &[u32]) -> Vec<(u32, f64)> {
    let probe = unit(&anchor.iter().zip(query).map(|(a, q)| a + q).collect::<Vec<_>>());
    let mut all: Vec<(u32, f64)> = store
        .iter()
        .filter(|(id, _)| !excluded.contains(id))
        .map(|(id, v)| (*id, cos(&probe, v)))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all
}

/// Oracle store: each sample's rendered description embedded from scratch.
pub fn oracle_store(catalog: &Catalog, dim: usize) -> BTreeMap<u32, Vec<f64>> {
    catalog
        .samples()
        .iter()
        .map(|s| (s.id.0, oracle_embed(&texhand_core::render_description(s).unwrap(), dim)))
        .collect()
}
