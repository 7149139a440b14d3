use std::io::{Read, Write};

use super::{EmbedError, Result};

pub const PCA_MAGIC: &[u8; 5] = b"NESP1";

/// Principal components fitted on a set of vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `d_raw`.
    pub components: Vec<Vec<f64>>,
    /// Fraction of total variance per component, descending.
    pub explained_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    /// `mean + componentsᵀ · reduced`
    pub fn reconstruct(&self, reduced: &[f64]) -> Result<Vec<f64>> {
        if reduced.len() != self.components.len() {
            return Err(EmbedError::DimensionMismatch { expected: self.components.len(), found: reduced.len() });
        }
        let mut out = self.mean.clone();
        for (c, &r) in self.components.iter().zip(reduced) {
            for (o, x) in out.iter_mut().zip(c) {
                *o += r * x;
            }
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PCA_MAGIC)?;
        w.write_all(&(self.input_dim() as u32).to_le_bytes())?;
        w.write_all(&(self.output_dim() as u32).to_le_bytes())?;
        let all = self.mean.iter().chain(self.components.iter().flatten()).chain(&self.explained_ratio);
        for x in all {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let short = |_| EmbedError::Format("truncated PCA file".into());
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(short)?;
        if &magic != PCA_MAGIC {
            return Err(EmbedError::Format("bad PCA magic".into()));
        }
        let mut u = [0u8; 4];
        r.read_exact(&mut u).map_err(short)?;
        let d = u32::from_le_bytes(u) as usize;
        r.read_exact(&mut u).map_err(short)?;
        let k = u32::from_le_bytes(u) as usize;
        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; len * 8];
            r.read_exact(&mut buf).map_err(short)?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let mean = read_vec(d)?;
        let flat = read_vec(k * d)?;
        let explained_ratio = read_vec(k)?;
        let components = if d == 0 { vec![Vec::new(); k] } else { flat.chunks(d).map(<[f64]>::to_vec).collect() };
        Ok(PcaModel { mean, components, explained_ratio })
    }
}

/// Eigen-decomposition of a symmetric matrix (row-major `n × n`) by cyclic
/// Jacobi rotations. Returns eigenvalues and matching unit eigenvectors,
/// sorted by descending eigenvalue (ties keep column order).
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    // v holds eigenvectors as columns
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum();
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (values, vectors)
}

/// Fit PCA on the rows of `vectors`, keeping the smallest number of leading
/// components whose cumulative explained-variance ratio reaches
/// `target_variance`.
pub fn fit_pca(vectors: &[Vec<f64>], target_variance: f64) -> Result<PcaModel> {
    if vectors.len() < 2 {
        return Err(EmbedError::DegenerateData(format!("need at least 2 rows, got {}", vectors.len())));
    }
    if !(target_variance > 0.0 && target_variance <= 1.0) {
        return Err(EmbedError::InvalidConfig(format!("target variance {target_variance} not in (0, 1]")));
    }
    let d = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(EmbedError::DimensionMismatch { expected: d, found: bad.len() });
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for v in vectors {
        for ((c, x), m) in centered.iter_mut().zip(v).zip(&mean) {
            *c = x - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let row = &mut cov[i * d..(i + 1) * d];
            for j in i..d {
                row[j] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let x = cov[i * d + j] / (n - 1.0);
            cov[i * d + j] = x;
            cov[j * d + i] = x;
        }
    }
    let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(EmbedError::DegenerateData("zero total variance".into()));
    }

    let (values, vectors_) = symmetric_eigen(&cov, d);
    let ratios: Vec<f64> = values.iter().map(|&l| (l.max(0.0) / total).min(1.0)).collect();
    let mut cumulative = 0.0;
    let mut k = d;
    for (i, r) in ratios.iter().enumerate() {
        cumulative += r;
        if cumulative >= target_variance {
            k = i + 1;
            break;
        }
    }
    let components = vectors_
        .into_iter()
        .take(k)
        .map(|mut c| {
            // largest-magnitude entry positive; first index wins ties
            let mut pivot = 0;
            for (i, x) in c.iter().enumerate() {
                if x.abs() > c[pivot].abs() {
                    pivot = i;
                }
            }
            if c[pivot] < 0.0 {
                c.iter_mut().for_each(|x| *x = -*x);
            }
            c
        })
        .collect();
    Ok(PcaModel { mean, components, explained_ratio: ratios[..k].to_vec() })
}

/// `components · (vector − mean)`
pub fn apply_pca(model: &PcaModel, vector: &[f64]) -> Result<Vec<f64>> {
    if vector.len() != model.mean.len() {
        return Err(EmbedError::DimensionMismatch { expected: model.mean.len(), found: vector.len() });
    }
    Ok(model
        .components
        .iter()
        .map(|c| c.iter().zip(vector).zip(&model.mean).map(|((w, x), m)| w * (x - m)).sum())
        .collect())
}
