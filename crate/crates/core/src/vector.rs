//! Vector math for the guessing pipeline: normalization, cosine similarity,
//! the reference/query blend, and exact top-k retrieval.
//!
//! All arithmetic is `f64`. Vectors are small (one per catalog item) so
//! retrieval is an exhaustive scan.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{EmbeddingStore, TextileId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("vector has no components")]
    Empty,
    #[error("component {index} is not finite")]
    NonFinite { index: usize },
    #[error("cannot normalize a zero vector")]
    ZeroNorm,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("degenerate blend: start and query vectors cancel out")]
    DegenerateBlend,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no candidates left after exclusion")]
    NoCandidates,
}

/// A finite, non-empty vector of reals.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(components: Vec<f64>) -> Result<Self, VectorError> {
        if components.is_empty() {
            return Err(VectorError::Empty);
        }
        if let Some(index) = components.iter().position(|c| !c.is_finite()) {
            return Err(VectorError::NonFinite { index });
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = VectorError;

    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        Vector::new(value)
    }
}

impl<'de> Deserialize<'de> for Vector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(deserializer)?;
        Vector::new(raw).map_err(serde::de::Error::custom)
    }
}

/// A vector with Euclidean norm 1 (within 1e-9). Only obtainable through
/// [`normalize`] or [`blend`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_vector(&self) -> Vector {
        Vector(self.0.clone())
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// One entry of a retrieval ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedMatch {
    pub id: TextileId,
    pub score: f64,
}

fn check_components(v: &[f64]) -> Result<(), VectorError> {
    if v.is_empty() {
        return Err(VectorError::Empty);
    }
    if let Some(index) = v.iter().position(|c| !c.is_finite()) {
        return Err(VectorError::NonFinite { index });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit Euclidean length.
pub fn normalize(v: &Vector) -> Result<UnitVector, VectorError> {
    normalize_slice(v.as_slice())
}

pub(crate) fn normalize_slice(v: &[f64]) -> Result<UnitVector, VectorError> {
    check_components(v)?;
    let n = norm(v);
    if n == 0.0 {
        return Err(VectorError::ZeroNorm);
    }
    if !n.is_finite() {
        // Overflowing squares; rescale by the largest magnitude first.
        let max = v.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        let scaled: Vec<f64> = v.iter().map(|c| c / max).collect();
        return normalize_slice(&scaled);
    }
    Ok(UnitVector(v.iter().map(|c| c / n).collect()))
}

/// Cosine similarity `(a·b) / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine(a: &impl AsRef<[f64]>, b: &impl AsRef<[f64]>) -> Result<f64, VectorError> {
    let (a, b) = (a.as_ref(), b.as_ref());
    check_components(a)?;
    check_components(b)?;
    if a.len() != b.len() {
        return Err(VectorError::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Combines the start (reference) embedding with the query embedding:
/// `normalize(start + query)`.
pub fn blend(start: &UnitVector, query: &Vector) -> Result<UnitVector, VectorError> {
    if start.dim() != query.dim() {
        return Err(VectorError::DimensionMismatch { expected: start.dim(), found: query.dim() });
    }
    let sum: Vec<f64> = start.as_slice().iter().zip(query.as_slice()).map(|(s, q)| s + q).collect();
    normalize_slice(&sum).map_err(|e| match e {
        VectorError::ZeroNorm => VectorError::DegenerateBlend,
        other => other,
    })
}

/// Ranking order: descending score, then ascending id.
pub(crate) fn rank_order(a: &RankedMatch, b: &RankedMatch) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// Exact top-k retrieval over `store`, skipping `excluded` ids.
pub fn top_k(
    probe: &UnitVector,
    store: &EmbeddingStore,
    k: usize,
    excluded: &BTreeSet<TextileId>,
) -> Result<Vec<RankedMatch>, VectorError> {
    if k == 0 {
        return Err(VectorError::ZeroK);
    }
    if probe.dim() != store.dim() {
        return Err(VectorError::DimensionMismatch { expected: store.dim(), found: probe.dim() });
    }
    let mut ranked = store
        .iter()
        .filter(|(id, _)| !excluded.contains(id))
        .map(|(id, v)| Ok(RankedMatch { id, score: cosine(probe, v)? }))
        .collect::<Result<Vec<_>, VectorError>>()?;
    if ranked.is_empty() {
        return Err(VectorError::NoCandidates);
    }
    ranked.sort_by(rank_order);
    ranked.truncate(k);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn v(c: &[f64]) -> Vector {
        Vector::new(c.to_vec()).unwrap()
    }

    fn u(c: &[f64]) -> UnitVector {
        normalize(&v(c)).unwrap()
    }

    fn store(entries: &[(u32, &[f64])]) -> EmbeddingStore {
        EmbeddingStore::from_vectors(
            "test",
            "fixture",
            entries.iter().map(|(id, c)| (TextileId(*id), v(c))),
        )
        .unwrap()
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn normalize_examples() {
        let n = normalize(&v(&[3.0, 4.0])).unwrap();
        assert_close(n.as_slice()[0], 0.6, 1e-12);
        assert_close(n.as_slice()[1], 0.8, 1e-12);
        assert_eq!(normalize(&v(&[1.0, 0.0, 0.0])).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        let n = normalize(&v(&[2.0, 2.0])).unwrap();
        assert_close(n.as_slice()[0], 0.70710678, 1e-8);
        assert_close(n.as_slice()[1], 0.70710678, 1e-8);
    }

    #[test]
    fn normalize_rejects_degenerate_input() {
        assert_eq!(normalize(&v(&[0.0, 0.0])), Err(VectorError::ZeroNorm));
        assert_eq!(Vector::new(vec![]), Err(VectorError::Empty));
        assert_eq!(Vector::new(vec![1.0, f64::NAN]), Err(VectorError::NonFinite { index: 1 }));
    }

    #[test]
    fn normalize_survives_huge_components() {
        let n = normalize(&v(&[1e300, 1e300])).unwrap();
        assert_close(n.as_slice()[0], std::f64::consts::FRAC_1_SQRT_2, 1e-12);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let expected = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        assert_close(cosine(&v(&[1.0, 2.0, 3.0]), &v(&[4.0, 5.0, 6.0])).unwrap(), expected, 1e-12);
        assert_close(expected, 0.97463185, 1e-8);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(VectorError::DimensionMismatch { .. })
        ));
        assert_eq!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(VectorError::ZeroNorm));
    }

    #[test]
    fn blend_examples() {
        let b = blend(&u(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap();
        assert_close(b.as_slice()[0], std::f64::consts::FRAC_1_SQRT_2, 1e-12);
        assert_close(b.as_slice()[1], std::f64::consts::FRAC_1_SQRT_2, 1e-12);
        assert_eq!(blend(&u(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap().as_slice(), &[1.0, 0.0]);
        let b = blend(&u(&[1.0, 0.0]), &v(&[0.6, 0.8])).unwrap();
        // |(1.6, 0.8)| = sqrt(3.2)
        assert_close(b.as_slice()[0], 1.6 / 3.2f64.sqrt(), 1e-12);
        assert_close(b.as_slice()[0], 0.89442719, 1e-8);
        assert_close(b.as_slice()[1], 0.44721360, 1e-8);
    }

    #[test]
    fn blend_of_opposites_is_degenerate() {
        assert_eq!(blend(&u(&[1.0, 0.0]), &v(&[-1.0, 0.0])), Err(VectorError::DegenerateBlend));
    }

    #[test]
    fn top_k_examples() {
        let s = store(&[(1, &[1.0, 0.0]), (2, &[0.0, 1.0]), (3, &[-1.0, 0.0])]);
        let r = top_k(&u(&[1.0, 0.0]), &s, 1, &BTreeSet::new()).unwrap();
        assert_eq!(r, vec![RankedMatch { id: TextileId(1), score: 1.0 }]);

        let s = store(&[(1, &[1.0, 0.0]), (2, &[0.6, 0.8])]);
        let r = top_k(&u(&[1.0, 0.0]), &s, 1, &BTreeSet::from([TextileId(1)])).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].id, TextileId(2));
        assert_close(r[0].score, 0.6, 1e-12);

        let s = store(&[(1, &[1.0, 0.0]), (2, &[0.0, 1.0])]);
        let r = top_k(&u(&[1.0, 1.0]), &s, 1, &BTreeSet::new()).unwrap();
        assert_eq!(r[0].id, TextileId(1));
        assert_close(r[0].score, std::f64::consts::FRAC_1_SQRT_2, 1e-12);
    }

    #[test]
    fn top_k_errors() {
        let s = store(&[(1, &[1.0, 0.0])]);
        assert_eq!(
            top_k(&u(&[1.0, 0.0]), &s, 1, &BTreeSet::from([TextileId(1)])),
            Err(VectorError::NoCandidates)
        );
        assert_eq!(top_k(&u(&[1.0, 0.0]), &s, 0, &BTreeSet::new()), Err(VectorError::ZeroK));
        assert!(matches!(
            top_k(&u(&[1.0, 0.0, 0.0]), &s, 1, &BTreeSet::new()),
            Err(VectorError::DimensionMismatch { .. })
        ));
    }

    fn nonzero_vec(max_dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 1..=max_dim)
            .prop_filter("nonzero", |c| c.iter().any(|x| x.abs() > 1e-6))
    }

    fn vec_pair(max_dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1..=max_dim).prop_flat_map(|d| {
            let one = prop::collection::vec(-100.0f64..100.0, d)
                .prop_filter("nonzero", |c| c.iter().any(|x| x.abs() > 1e-6));
            (one.clone(), one)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn normalized_vectors_have_unit_norm(c in nonzero_vec(64)) {
            let n = normalize(&v(&c)).unwrap();
            prop_assert!((norm(n.as_slice()) - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn cosine_is_symmetric_and_scale_invariant((a, b) in vec_pair(64), scale in 1e-3f64..1e3) {
            let (va, vb) = (v(&a), v(&b));
            let ab = cosine(&va, &vb).unwrap();
            prop_assert_eq!(ab.to_bits(), cosine(&vb, &va).unwrap().to_bits());
            let scaled = v(&a.iter().map(|x| x * scale).collect::<Vec<_>>());
            prop_assert!((cosine(&scaled, &vb).unwrap() - ab).abs() <= 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn blend_is_normalized_sum((a, b) in vec_pair(64)) {
            let start = normalize(&v(&a)).unwrap();
            let query = v(&b);
            let sum: Vec<f64> = start.as_slice().iter().zip(&b).map(|(x, y)| x + y).collect();
            match (blend(&start, &query), normalize(&v(&sum))) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
                (Err(VectorError::DegenerateBlend), Err(VectorError::ZeroNorm)) => {}
                (x, y) => prop_assert!(false, "{:?} vs {:?}", x, y),
            }
        }
    }
}
