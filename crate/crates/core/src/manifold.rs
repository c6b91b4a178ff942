//! Exact k-nearest-neighbor search, Gram-Schmidt bases and in-manifold noise.
//!
//! In-manifold noise for a point `x` is drawn in the span of the
//! orthonormalized differences `x⁽ʲ⁾ − x` to its `k` nearest neighbors:
//! `ε = Σⱼ εⱼ ďⱼ` with `εⱼ ~ N(0, σ²)`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::noise::{self, NoiseSpec};
use crate::numerics::Tensor;
use crate::rng::{self, Rng};

/// Residual norm (relative to the input norm) below which a vector is
/// considered linearly dependent on the basis built so far.
pub const DEPENDENCE_TOL: f64 = 1e-8;

/// Brute-force index over the rows of a matrix, squared Euclidean metric.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    vectors: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    /// Squared Euclidean distance to the query.
    pub distance: f64,
}

impl NeighborIndex {
    pub fn build(vectors: Tensor) -> Result<Self> {
        if vectors.ndim() != 2 || vectors.dims2().0 < 2 {
            return Err(contract("neighbor index needs at least two row vectors"));
        }
        Ok(Self { vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.dims2().0
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.vectors.dims2().1
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if query.len() != self.dim() {
            return Err(Error::Shape {
                op: "knn query",
                lhs: vec![self.dim()],
                rhs: vec![query.len()],
            });
        }
        Ok(())
    }

    fn select(&self, query: &[f64], k: usize, skip: impl Fn(usize, f64) -> bool) -> Result<Vec<Neighbor>> {
        let mut cands: Vec<Neighbor> = (0..self.len())
            .map(|i| Neighbor {
                index: i,
                distance: sq_dist(self.row(i), query),
            })
            .filter(|n| !skip(n.index, n.distance))
            .collect();
        if k == 0 || k > cands.len() {
            return Err(contract(alloc::format!(
                "k = {k} but only {} candidate rows are available",
                cands.len()
            )));
        }
        let order = |a: &Neighbor, b: &Neighbor| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index));
        if k < cands.len() {
            cands.select_nth_unstable_by(k - 1, order);
            cands.truncate(k);
        }
        cands.sort_by(order);
        Ok(cands)
    }

    /// The `k` nearest rows sorted by ascending distance, ties by row index.
    /// With `exclude_exact_match`, rows identical to the query are skipped.
    pub fn knn(&self, query: &[f64], k: usize, exclude_exact_match: bool) -> Result<Vec<Neighbor>> {
        self.check_query(query)?;
        self.select(query, k, |i, dist| {
            exclude_exact_match && dist == 0.0 && self.row(i) == query
        })
    }

    /// Neighbors of stored row `row`, excluding that row itself.
    pub fn knn_of_row(&self, row: usize, k: usize) -> Result<Vec<Neighbor>> {
        if row >= self.len() {
            return Err(Error::Index {
                what: "row",
                index: row,
                limit: self.len(),
            });
        }
        let query = self.row(row);
        self.select(query, k, |i, _| i == row)
    }

    /// Orthonormal basis of the neighbor differences around stored row `row`.
    pub fn local_basis(&self, row: usize, k: usize) -> Result<OrthoBasis> {
        let nbrs = self.knn_of_row(row, k)?;
        let origin = self.row(row);
        let diffs: Vec<Vec<f64>> = nbrs
            .iter()
            .map(|n| self.row(n.index).iter().zip(origin).map(|(a, b)| a - b).collect())
            .collect();
        let mut basis = gram_schmidt(&diffs)?;
        basis.origin = origin.to_vec();
        Ok(basis)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal vectors spanning a local patch.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoBasis {
    pub basis: Vec<Vec<f64>>,
    pub origin: Vec<f64>,
    /// Number of difference vectors the basis was built from.
    pub source_count: usize,
}

impl OrthoBasis {
    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> usize {
        self.basis.first().map_or(self.origin.len(), Vec::len)
    }

    /// Coordinates of `v` along each basis vector.
    pub fn coordinates(&self, v: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|q| dot(q, v)).collect()
    }

    /// Orthogonal projection of `v` onto the span.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for q in &self.basis {
            let c = dot(q, v);
            for (o, qi) in out.iter_mut().zip(q) {
                *o += c * qi;
            }
        }
        out
    }
}

/// Modified Gram-Schmidt with one re-orthogonalization pass and
/// normalization. Vectors whose residual falls below
/// [`DEPENDENCE_TOL`] times their original norm are dropped.
pub fn gram_schmidt(diffs: &[Vec<f64>]) -> Result<OrthoBasis> {
    let dim = diffs.first().map_or(0, Vec::len);
    if diffs.iter().any(|v| v.len() != dim) {
        return Err(contract("difference vectors must share one dimension"));
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in diffs {
        let norm0 = libm::sqrt(dot(v, v));
        if norm0 == 0.0 {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let nw = libm::sqrt(dot(&w, &w));
        if nw < DEPENDENCE_TOL * norm0 {
            continue;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        basis.push(w);
    }
    if basis.is_empty() {
        return Err(Error::DegenerateNeighborhood);
    }
    Ok(OrthoBasis {
        basis,
        origin: vec![0.0; dim],
        source_count: diffs.len(),
    })
}

/// `ε = Σⱼ εⱼ ďⱼ`, `εⱼ ~ N(0, σ²)`; with `mix_ratio`, rescaled to `‖ε‖ = ρ‖x‖`.
pub fn sample_inmanifold_noise(
    x: &[f64],
    basis: &OrthoBasis,
    sigma: f64,
    rng: &mut Rng,
    mix_ratio: Option<f64>,
) -> Result<Vec<f64>> {
    if basis.basis.is_empty() {
        return Err(contract("in-manifold sampling needs a non-empty basis"));
    }
    if x.len() != basis.dim() {
        return Err(Error::Shape {
            op: "sample_inmanifold_noise",
            lhs: vec![basis.dim()],
            rhs: vec![x.len()],
        });
    }
    let mut eps = vec![0.0; x.len()];
    for q in &basis.basis {
        let c = sigma * rng::standard_normal(rng);
        for (e, qi) in eps.iter_mut().zip(q) {
            *e += c * qi;
        }
    }
    match mix_ratio {
        None => Ok(eps),
        Some(rho) => {
            let t = noise::rescale_relative(&Tensor::vector(eps), &Tensor::vector(x.to_vec()), rho)?;
            Ok(t.into_data())
        }
    }
}

/// Residual `min_w ‖x − Σⱼ wⱼ x⁽ʲ⁾‖²` of the unconstrained least-squares
/// reconstruction of `x` from its neighbors.
pub fn lle_reconstruction_error(x: &[f64], neighbors: &[Vec<f64>]) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(contract("reconstruction needs at least one neighbor"));
    }
    let basis = match gram_schmidt(neighbors) {
        Ok(b) => b,
        Err(Error::DegenerateNeighborhood) => return Ok(dot(x, x)),
        Err(e) => return Err(e),
    };
    if basis.dim() != x.len() {
        return Err(Error::Shape {
            op: "lle_reconstruction_error",
            lhs: vec![basis.dim()],
            rhs: vec![x.len()],
        });
    }
    let p = basis.project(x);
    Ok(x.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Result of drawing in-manifold injection noise for one sequence.
#[derive(Debug, Clone)]
pub struct InjectionSample {
    pub noise: Tensor,
    /// Positions whose neighborhood was degenerate and fell back to
    /// standard Gaussian noise.
    pub fallbacks: usize,
}

/// In-manifold noise for every valid position of an activation `[M×d]`.
///
/// Neighbors come from `table` (the token-embedding rows), queried with the
/// row of each position's token. Bases are cached per token id.
pub fn inmanifold_injection_noise(
    spec: &NoiseSpec,
    table: &NeighborIndex,
    tokens: &[usize],
    x: &Tensor,
    rng: &mut Rng,
) -> Result<InjectionSample> {
    let (m, d) = x.dims2();
    if table.dim() != d {
        return Err(Error::Shape {
            op: "in-manifold table",
            lhs: vec![table.len(), table.dim()],
            rhs: x.shape().to_vec(),
        });
    }
    let mut cache: BTreeMap<usize, Option<OrthoBasis>> = BTreeMap::new();
    let mut out = vec![0.0; m * d];
    let mut fallbacks = 0;
    for (pos, &tok) in tokens.iter().enumerate().take(m) {
        let entry = match cache.get(&tok) {
            Some(b) => b.clone(),
            None => {
                let b = match table.local_basis(tok, spec.neighbors) {
                    Ok(b) => Some(b),
                    Err(Error::DegenerateNeighborhood) => None,
                    Err(e) => return Err(e),
                };
                cache.insert(tok, b.clone());
                b
            }
        };
        let xr = x.row(pos);
        let row: Vec<f64> = match entry {
            Some(basis) => {
                let raw = sample_inmanifold_noise(xr, &basis, spec.sigma, rng, None)?;
                scale_row(raw, xr, spec)?
            }
            None => {
                fallbacks += 1;
                let raw = (0..d).map(|_| spec.sigma * rng::standard_normal(rng)).collect();
                scale_row(raw, xr, spec)?
            }
        };
        out[pos * d..(pos + 1) * d].copy_from_slice(&row);
    }
    Ok(InjectionSample {
        noise: Tensor::new(vec![m, d], out)?,
        fallbacks,
    })
}

fn scale_row(raw: Vec<f64>, x: &[f64], spec: &NoiseSpec) -> Result<Vec<f64>> {
    match spec.rel_magnitude {
        None => Ok(raw),
        Some(rho) => {
            let t = noise::rescale_with(&Tensor::vector(raw), &Tensor::vector(x.to_vec()), rho, spec.rule)?;
            Ok(t.into_data())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_index() -> NeighborIndex {
        NeighborIndex::build(Tensor::new(vec![4, 1], vec![0.0, 1.0, 2.0, 10.0]).unwrap()).unwrap()
    }

    #[test]
    fn build_requires_two_rows() {
        assert_eq!(line_index().len(), 4);
        assert!(NeighborIndex::build(Tensor::zeros(&[1, 3])).is_err());
        let dup = NeighborIndex::build(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap()).unwrap();
        let n = dup.knn(&[1.0], 2, false).unwrap();
        assert_eq!(n.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn knn_sorted_with_ties_by_index() {
        let idx = line_index();
        let n = idx.knn(&[1.5], 2, false).unwrap();
        assert_eq!(n.iter().map(|n| n.index).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(n[0].distance, 0.25);
    }

    #[test]
    fn knn_exclusion_and_k_limits() {
        let idx = line_index();
        let n = idx.knn(&[2.0], 3, true).unwrap();
        assert!(n.iter().all(|n| n.index != 2));
        assert!(idx.knn(&[2.0], 4, true).is_err());
        assert!(idx.knn(&[2.0], 4, false).is_ok());
        assert!(idx.knn(&[2.0], 5, false).is_err());
        assert_eq!(
            idx.knn_of_row(0, 2)
                .unwrap()
                .iter()
                .map(|n| n.index)
                .collect::<Vec<_>>(),
            vec![1, 2]
        );
    }

    #[test]
    fn gram_schmidt_axis_aligned() {
        let b = gram_schmidt(&[vec![2.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(b.basis, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
    }

    #[test]
    fn gram_schmidt_drops_dependent() {
        let b = gram_schmidt(&[vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]]).unwrap();
        assert_eq!(b.basis, vec![vec![1.0, 0.0, 0.0]]);
        assert_eq!(b.source_count, 2);
        assert_eq!(
            gram_schmidt(&[vec![0.0; 3], vec![0.0; 3]]),
            Err(Error::DegenerateNeighborhood)
        );
    }

    #[test]
    fn inmanifold_noise_stays_on_axis() {
        let b = gram_schmidt(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let mut rng = rng::seeded(3);
        for _ in 0..100 {
            let e = sample_inmanifold_noise(&[1.0, 2.0, 3.0], &b, 0.5, &mut rng, None).unwrap();
            assert_eq!(&e[1..], &[0.0, 0.0]);
        }
        let e = sample_inmanifold_noise(&[3.0, 4.0, 0.0], &b, 0.5, &mut rng, Some(0.1)).unwrap();
        assert!((libm::sqrt(dot(&e, &e)) - 0.5).abs() < 1e-12);
        let empty = OrthoBasis {
            basis: vec![],
            origin: vec![0.0; 3],
            source_count: 0,
        };
        assert!(sample_inmanifold_noise(&[0.0; 3], &empty, 1.0, &mut rng, None).is_err());
    }

    #[test]
    fn lle_examples() {
        let a = vec![1.0, 2.0, 0.0];
        let b = vec![3.0, -2.0, 0.0];
        let mid = [2.0, 0.0, 0.0];
        assert!(lle_reconstruction_error(&mid, &[a.clone(), b.clone()]).unwrap() < 1e-12);
        let x = [0.0, 0.0, 3.0];
        assert!((lle_reconstruction_error(&x, &[a, b]).unwrap() - 9.0).abs() < 1e-12);
        assert!(lle_reconstruction_error(&x, &[]).is_err());
    }

    #[test]
    fn injection_noise_uses_embedding_neighbors() {
        // Rows 2..6 lie on the x-axis, so each basis is e₁.
        let mut rows = vec![vec![0.0, 5.0], vec![0.0, -5.0]];
        rows.extend((0..4).map(|i| vec![i as f64, 0.0]));
        let table = NeighborIndex::build(Tensor::from_rows(&rows).unwrap()).unwrap();
        let spec = NoiseSpec {
            mode: crate::noise::NoiseMode::InManifold,
            neighbors: 2,
            ..NoiseSpec::default()
        };
        let x = Tensor::new(vec![3, 2], vec![1.0, 1.0, 2.0, 0.0, 7.0, 7.0]).unwrap();
        let s = inmanifold_injection_noise(&spec, &table, &[3, 4], &x, &mut rng::seeded(0)).unwrap();
        assert_eq!(s.fallbacks, 0);
        assert_eq!(s.noise.row(0)[1], 0.0);
        assert_eq!(s.noise.row(1)[1], 0.0);
        assert!((s.noise.row(0)[0].abs() - 0.05 * 2f64.sqrt()).abs() < 1e-12);
        assert!(s.noise.row(2).iter().all(|&v| v == 0.0));
    }
}
