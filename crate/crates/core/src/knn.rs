//! Exact and IVF (k-means inverted file) nearest-neighbor search over
//! reduced sentence vectors. Distances are squared Euclidean; ties are
//! broken by ascending id everywhere.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INDEX_MAGIC: &[u8; 5] = b"NESI1";

#[derive(Debug, Error)]
pub enum KnnError {
    #[error("DimensionMismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("TooFewPoints: {points} distinct points for {cells} cells")]
    TooFewPoints { points: usize, cells: usize },
    #[error("InvalidNprobe: {nprobe} not in 1..={cells}")]
    InvalidNprobe { nprobe: usize, cells: usize },
    #[error("FormatError: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl KnnError {
    pub fn code(&self) -> &'static str {
        match self {
            KnnError::DimensionMismatch { .. } => "DimensionMismatch",
            KnnError::TooFewPoints { .. } => "TooFewPoints",
            KnnError::InvalidNprobe { .. } => "InvalidNprobe",
            KnnError::Format(_) => "FormatError",
            KnnError::Io(_) => "IoError",
        }
    }
}

pub type Result<T, E = KnnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u64,
    /// Squared Euclidean distance.
    pub distance: f32,
}

fn by_distance_then_id(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id))
}

/// Squared L2 distance, accumulated left to right in `f32`.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f32 {
    let mut sum = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        sum += d * d;
    }
    sum
}

fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Keep the `k` best neighbors in ascending (distance, id) order.
fn top_k(mut all: Vec<Neighbor>, k: usize) -> Vec<Neighbor> {
    if k == 0 {
        return Vec::new();
    }
    if all.len() > k {
        all.select_nth_unstable_by(k - 1, by_distance_then_id);
        all.truncate(k);
    }
    all.sort_by(by_distance_then_id);
    all
}

/// Flat index scanned in full on every query.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactIndex {
    ids: Vec<u64>,
    dim: usize,
    data: Vec<f32>,
    /// Vectors were L2-normalized at build time (cosine ranking).
    normalized: bool,
}

impl ExactIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, pos: usize) -> &[f32] {
        &self.data[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Stored vector for `id`, if indexed.
    pub fn vector(&self, id: u64) -> Option<&[f32]> {
        self.ids.iter().position(|&x| x == id).map(|p| self.row(p))
    }

    fn prepare_query(&self, query: &[f32]) -> Result<Vec<f32>> {
        if query.len() != self.dim {
            return Err(KnnError::DimensionMismatch { expected: self.dim, found: query.len() });
        }
        let mut q = query.to_vec();
        if self.normalized {
            normalize(&mut q);
        }
        Ok(q)
    }

    fn scan(&self, query: &[f32], rows: impl Iterator<Item = usize>) -> Vec<Neighbor> {
        rows.map(|p| Neighbor { id: self.ids[p], distance: squared_l2(query, self.row(p)) })
            .collect()
    }

    /// The `min(k, n)` nearest vectors, ascending distance, ties by id.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.prepare_query(query)?;
        Ok(top_k(self.scan(&q, 0..self.len()), k))
    }
}

pub fn build_exact(ids: &[u64], vectors: &[Vec<f32>]) -> Result<ExactIndex> {
    build_exact_with(ids, vectors, false)
}

/// Build a flat index; with `normalize` every vector (and later every
/// query) is scaled to unit length so squared L2 ranks by cosine.
pub fn build_exact_with(ids: &[u64], vectors: &[Vec<f32>], normalize_vectors: bool) -> Result<ExactIndex> {
    if ids.len() != vectors.len() {
        return Err(KnnError::DimensionMismatch { expected: ids.len(), found: vectors.len() });
    }
    let dim = vectors.first().map(Vec::len).unwrap_or(0);
    let mut data = Vec::with_capacity(dim * vectors.len());
    for v in vectors {
        if v.len() != dim {
            return Err(KnnError::DimensionMismatch { expected: dim, found: v.len() });
        }
        let start = data.len();
        data.extend_from_slice(v);
        if normalize_vectors {
            normalize(&mut data[start..]);
        }
    }
    Ok(ExactIndex { ids: ids.to_vec(), dim, data, normalized: normalize_vectors })
}

pub fn search_exact(index: &ExactIndex, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
    index.search(query, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IvfParams {
    pub cells: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
    pub default_nprobe: usize,
}

/// Inverted-file index: k-means cells, each holding the row positions of
/// the vectors assigned to it.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    base: ExactIndex,
    centroids: Vec<f32>,
    lists: Vec<Vec<usize>>,
    params: IvfParams,
}

fn nearest_centroid(centroids: &[f32], dim: usize, v: &[f32]) -> usize {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_l2(v, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

impl IvfIndex {
    pub fn exact(&self) -> &ExactIndex {
        &self.base
    }

    pub fn params(&self) -> IvfParams {
        self.params
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.base.dim..(c + 1) * self.base.dim]
    }

    /// Ids in each cell, in cell order.
    pub fn lists(&self) -> Vec<Vec<u64>> {
        self.lists.iter().map(|l| l.iter().map(|&p| self.base.ids[p]).collect()).collect()
    }

    /// Exact search restricted to the `nprobe` cells nearest to the query.
    pub fn search(&self, query: &[f32], k: usize, nprobe: usize) -> Result<Vec<Neighbor>> {
        let cells = self.lists.len();
        if nprobe == 0 || nprobe > cells {
            return Err(KnnError::InvalidNprobe { nprobe, cells });
        }
        let q = self.base.prepare_query(query)?;
        let mut order: Vec<(f32, usize)> = (0..cells).map(|c| (squared_l2(&q, self.centroid(c)), c)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let rows = order[..nprobe].iter().flat_map(|&(_, c)| self.lists[c].iter().copied());
        Ok(top_k(self.base.scan(&q, rows), k))
    }
}

/// k-means (Lloyd) clustering with seeded initialization: the first `cells`
/// distinct vectors of a seeded shuffle seed the centroids.
pub fn build_ivf(ids: &[u64], vectors: &[Vec<f32>], cells: usize, iters: usize, seed: u64) -> Result<IvfIndex> {
    build_ivf_from(build_exact(ids, vectors)?, cells, iters, seed)
}

pub fn build_ivf_from(base: ExactIndex, cells: usize, iters: usize, seed: u64) -> Result<IvfIndex> {
    let n = base.len();
    if cells == 0 || n < cells {
        return Err(KnnError::TooFewPoints { points: n, cells });
    }
    let dim = base.dim;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    let mut centroids = Vec::with_capacity(cells * dim);
    for &p in &order {
        let bits: Vec<u32> = base.row(p).iter().map(|x| x.to_bits()).collect();
        if seen.insert(bits) {
            centroids.extend_from_slice(base.row(p));
            if seen.len() == cells {
                break;
            }
        }
    }
    if seen.len() < cells {
        return Err(KnnError::TooFewPoints { points: seen.len(), cells });
    }

    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        for (p, a) in assign.iter_mut().enumerate() {
            *a = nearest_centroid(&centroids, dim, base.row(p));
        }
        let mut sums = vec![0.0f64; cells * dim];
        let mut counts = vec![0usize; cells];
        for (p, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(base.row(p)) {
                *s += *x as f64;
            }
        }
        for c in 0..cells {
            // empty cells keep their previous centroid
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
                }
            }
        }
    }
    let mut lists = vec![Vec::new(); cells];
    for p in 0..n {
        lists[nearest_centroid(&centroids, dim, base.row(p))].push(p);
    }
    let params = IvfParams { cells, kmeans_iters: iters, seed, default_nprobe: cells.min(8) };
    Ok(IvfIndex { base, centroids, lists, params })
}

pub fn search_ivf(index: &IvfIndex, query: &[f32], k: usize, nprobe: usize) -> Result<Vec<Neighbor>> {
    index.search(query, k, nprobe)
}

/// Either tier, as stored in a `NESI1` snapshot.
#[derive(Debug, Clone, PartialEq)]
pub enum SearchIndex {
    Exact(ExactIndex),
    Ivf(IvfIndex),
}

impl SearchIndex {
    pub fn exact(&self) -> &ExactIndex {
        match self {
            SearchIndex::Exact(e) => e,
            SearchIndex::Ivf(i) => &i.base,
        }
    }

    /// IVF search when available and `nprobe` is given (or defaulted by the
    /// index); exact search otherwise.
    pub fn search(&self, query: &[f32], k: usize, nprobe: Option<usize>) -> Result<Vec<Neighbor>> {
        match self {
            SearchIndex::Exact(e) => e.search(query, k),
            SearchIndex::Ivf(i) => i.search(query, k, nprobe.unwrap_or(i.params.default_nprobe)),
        }
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let base = self.exact();
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&(base.dim as u32).to_le_bytes())?;
        w.write_all(&(base.len() as u64).to_le_bytes())?;
        let (params, centroids, lists): (IvfParams, &[f32], &[Vec<usize>]) = match self {
            SearchIndex::Exact(_) => (IvfParams { cells: 0, kmeans_iters: 0, seed: 0, default_nprobe: 0 }, &[], &[]),
            SearchIndex::Ivf(i) => (i.params, &i.centroids, &i.lists),
        };
        w.write_all(&(params.cells as u32).to_le_bytes())?;
        w.write_all(&(params.kmeans_iters as u32).to_le_bytes())?;
        w.write_all(&params.seed.to_le_bytes())?;
        w.write_all(&(params.default_nprobe as u32).to_le_bytes())?;
        w.write_all(&[base.normalized as u8])?;
        for x in centroids {
            w.write_all(&x.to_le_bytes())?;
        }
        for list in lists {
            w.write_all(&(list.len() as u64).to_le_bytes())?;
            for &p in list {
                w.write_all(&(p as u64).to_le_bytes())?;
            }
        }
        for id in &base.ids {
            w.write_all(&id.to_le_bytes())?;
        }
        for x in &base.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let short = |_| KnnError::Format("truncated index snapshot".into());
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(short)?;
        if &magic != INDEX_MAGIC {
            return Err(KnnError::Format("bad index magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        let mut u32_ = |r: &mut R| -> Result<usize> {
            r.read_exact(&mut b4).map_err(short)?;
            Ok(u32::from_le_bytes(b4) as usize)
        };
        let dim = u32_(&mut r)?;
        r.read_exact(&mut b8).map_err(short)?;
        let n = u64::from_le_bytes(b8) as usize;
        let cells = u32_(&mut r)?;
        let kmeans_iters = u32_(&mut r)?;
        r.read_exact(&mut b8).map_err(short)?;
        let seed = u64::from_le_bytes(b8);
        let default_nprobe = u32_(&mut r)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(short)?;

        let read_f32s = |r: &mut R, len: usize| -> Result<Vec<f32>> {
            let mut buf = vec![0u8; len * 4];
            r.read_exact(&mut buf).map_err(short)?;
            Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let read_u64s = |r: &mut R, len: usize| -> Result<Vec<u64>> {
            let mut buf = vec![0u8; len * 8];
            r.read_exact(&mut buf).map_err(short)?;
            Ok(buf.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let centroids = read_f32s(&mut r, cells * dim)?;
        let mut lists = Vec::with_capacity(cells);
        for _ in 0..cells {
            let len = read_u64s(&mut r, 1)?[0] as usize;
            if len > n {
                return Err(KnnError::Format("list longer than index".into()));
            }
            let list: Vec<usize> = read_u64s(&mut r, len)?.into_iter().map(|p| p as usize).collect();
            if list.iter().any(|&p| p >= n) {
                return Err(KnnError::Format("list entry out of range".into()));
            }
            lists.push(list);
        }
        let ids = read_u64s(&mut r, n)?;
        let data = read_f32s(&mut r, n * dim)?;
        let base = ExactIndex { ids, dim, data, normalized: flag[0] != 0 };
        if cells == 0 {
            Ok(SearchIndex::Exact(base))
        } else {
            let params = IvfParams { cells, kmeans_iters, seed, default_nprobe };
            Ok(SearchIndex::Ivf(IvfIndex { base, centroids, lists, params }))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_snapshot(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        SearchIndex::read_snapshot(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
