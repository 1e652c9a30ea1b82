//! Principal component analysis of flattened meshes.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};

/// Which mesh a model compresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshKind {
    Power,
    Flux,
}

impl MeshKind {
    pub fn name(self) -> &'static str {
        match self {
            MeshKind::Power => "power",
            MeshKind::Flux => "flux",
        }
    }
}

/// Mean-centred PCA model. `components` holds `n_components` orthonormal
/// rows of length `dim`, row-major, in order of decreasing variance.
/// `explained_variance_ratio` covers the full spectrum of the fit data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub kind: MeshKind,
    pub dim: usize,
    pub n_components: usize,
    pub mean: Vec<f64>,
    pub components: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Result of [`select_components`]: the count and an optional warning when
/// the requested floor was out of reach.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub count: usize,
    pub warning: Option<String>,
}

impl PcaModel {
    /// Fits on `samples` (each of length `dim`) and keeps the leading
    /// `n_components` directions.
    pub fn fit(kind: MeshKind, samples: &[Vec<f64>], n_components: usize) -> Result<Self> {
        let n = samples.len();
        if n_components == 0 {
            return Err(invalid_input!("n_components must be positive"));
        }
        if n < n_components + 1 {
            return Err(invalid_input!(
                "need at least {} samples for {n_components} components, got {n}",
                n_components + 1
            ));
        }
        let dim = samples[0].len();
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        if n_components > dim {
            return Err(invalid_input!("n_components {n_components} exceeds dimension {dim}"));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid_input!("samples contain non-finite values"));
        }

        let mut mean = vec![0.0; dim];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let centred = DMatrix::from_fn(n, dim, |i, j| samples[i][j] - mean[j]);
        // Thin SVD of the smaller Gram side keeps the cost at min(n, dim)^3.
        let svd = centred.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| invalid_input!("SVD did not converge"))?;
        let sv = svd.singular_values;

        let mut order: Vec<usize> = (0..sv.len()).collect();
        order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
        let total: f64 = sv.iter().map(|s| s * s).sum();
        let explained_variance_ratio: Vec<f64> = if total > 0.0 {
            order.iter().map(|&i| sv[i] * sv[i] / total).collect()
        } else {
            let mut r = vec![0.0; order.len()];
            r[0] = 1.0;
            r
        };

        let mut components = Vec::with_capacity(n_components * dim);
        for &i in order.iter().take(n_components) {
            let mut row: Vec<f64> = v_t.row(i).iter().copied().collect();
            let pivot = row
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (j, v)| if v.abs() > best.1 { (j, v.abs()) } else { best })
                .0;
            if row[pivot] < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
            components.extend(row);
        }
        Ok(Self {
            kind,
            dim,
            n_components,
            mean,
            components,
            explained_variance_ratio,
        })
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.dim..(i + 1) * self.dim]
    }

    /// `components * (mesh - mean)`.
    pub fn transform(&self, mesh: &[f64]) -> Result<Vec<f64>> {
        if mesh.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: mesh.len(),
            });
        }
        let centred: Vec<f64> = mesh.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok((0..self.n_components)
            .map(|i| crate::math::dot(self.component(i), &centred))
            .collect())
    }

    /// `mean + sum over kept i of scores[i] * component_i`; `mask = None`
    /// keeps every component.
    pub fn inverse_transform(&self, scores: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
        if scores.len() != self.n_components {
            return Err(Error::DimensionMismatch {
                expected: self.n_components,
                got: scores.len(),
            });
        }
        if let Some(m) = mask {
            if m.len() != self.n_components {
                return Err(Error::DimensionMismatch {
                    expected: self.n_components,
                    got: m.len(),
                });
            }
        }
        let mut out = self.mean.clone();
        for (i, &s) in scores.iter().enumerate() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            crate::math::axpy(s, self.component(i), &mut out);
        }
        Ok(out)
    }

    pub fn cumulative_ratio(&self, k: usize) -> f64 {
        self.explained_variance_ratio.iter().take(k).sum()
    }

    /// Largest deviation of `components * components^T` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n_components {
            for j in i..self.n_components {
                let d = crate::math::dot(self.component(i), self.component(j));
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        worst
    }
}

/// Smallest `k` whose cumulative explained-variance ratio reaches `floor`.
pub fn select_components(model: &PcaModel, floor: f64) -> Result<Selection> {
    select_from_ratios(&model.explained_variance_ratio, floor)
}

pub fn select_from_ratios(ratios: &[f64], floor: f64) -> Result<Selection> {
    if !(floor > 0.0 && floor < 1.0) {
        return Err(invalid_input!("variance floor must lie in (0, 1), got {floor}"));
    }
    let mut acc = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        acc += r;
        if acc >= floor {
            return Ok(Selection {
                count: i + 1,
                warning: None,
            });
        }
    }
    Ok(Selection {
        count: ratios.len(),
        warning: Some(alloc::format!(
            "cumulative ratio {acc} never reaches {floor}; keeping all {} components",
            ratios.len()
        )),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cumulative_selection() {
        let s = select_from_ratios(&[0.9, 0.08, 0.02], 0.95).unwrap();
        assert_eq!(s.count, 2);
        assert!(s.warning.is_none());
        assert_eq!(select_from_ratios(&[0.9, 0.08, 0.02], 1e-9).unwrap().count, 1);
        let s = select_from_ratios(&[0.5, 0.3], 0.99).unwrap();
        assert_eq!(s.count, 2);
        assert!(s.warning.is_some());
        assert!(select_from_ratios(&[1.0], 1.0).is_err());
    }

    fn plane_data() -> Vec<Vec<f64>> {
        let dim = 160;
        let u: Vec<f64> = (0..dim).map(|j| libm::sin(j as f64 * 0.1)).collect();
        let v: Vec<f64> = (0..dim).map(|j| libm::cos(j as f64 * 0.37) + 0.01 * j as f64).collect();
        (0..40)
            .map(|i| {
                let a = libm::sin(i as f64 * 1.3) * 3.0;
                let b = libm::cos(i as f64 * 0.7) - 0.2;
                (0..dim).map(|j| 5.0 + a * u[j] + b * v[j]).collect()
            })
            .collect()
    }

    #[test]
    fn affine_plane_has_two_components() {
        let data = plane_data();
        let m = PcaModel::fit(MeshKind::Power, &data, 5).unwrap();
        assert_relative_eq!(m.cumulative_ratio(2), 1.0, epsilon = 1e-10);
        assert!(m.orthonormality_error() < 1e-10);
        for w in m.explained_variance_ratio.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let again = PcaModel::fit(MeshKind::Power, &data, 5).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn transform_and_masks() {
        let data = plane_data();
        let m = PcaModel::fit(MeshKind::Power, &data, 3).unwrap();
        assert!(m.transform(&m.mean).unwrap().iter().all(|s| s.abs() < 1e-12));
        let shifted: Vec<f64> = m.mean.iter().zip(m.component(0)).map(|(a, c)| a + 2.0 * c).collect();
        let s = m.transform(&shifted).unwrap();
        assert_relative_eq!(s[0], 2.0, epsilon = 1e-12);
        assert!(s[1].abs() < 1e-12 && s[2].abs() < 1e-12);
        assert_eq!(m.inverse_transform(&[0.0; 3], None).unwrap(), m.mean);
        let a = m.inverse_transform(&[1.0, 2.0, 3.0], Some(&[true, true, false])).unwrap();
        let b = m.inverse_transform(&[1.0, 2.0, -7.0], Some(&[true, true, false])).unwrap();
        assert_eq!(a, b);
        for x in &data {
            let back = m.inverse_transform(&m.transform(x).unwrap(), None).unwrap();
            for (p, q) in back.iter().zip(x) {
                assert!((p - q).abs() < 1e-10);
            }
        }
        assert!(m.transform(&[1.0; 3]).is_err());
    }
}
