use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::Surrogate;
use crate::error::{invalid_input, Error, Result};
use crate::pca::{MeshKind, PcaModel};
use crate::sequence::{MeshPcas, OperationSequence, Split, Target, WindowedDataset};

/// Where reconstruction scores come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    /// Projection of the true mesh.
    Truth,
    /// Surrogate predictions.
    Model,
}

/// Component subset (zero-based) used to rebuild one mesh kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshMask {
    pub kind: MeshKind,
    pub components: Vec<usize>,
    pub source: ScoreSource,
}

impl MeshMask {
    pub fn new(kind: MeshKind, components: &[usize], source: ScoreSource) -> Self {
        Self {
            kind,
            components: components.to_vec(),
            source,
        }
    }

    pub fn label(&self) -> alloc::string::String {
        let c: Vec<alloc::string::String> = self.components.iter().map(|i| format!("{}", i + 1)).collect();
        format!(
            "{} pc[{}] {}",
            self.kind.name(),
            c.join(","),
            match self.source {
                ScoreSource::Truth => "truth",
                ScoreSource::Model => "model",
            }
        )
    }
}

/// Cell-wise absolute percent error summary for one mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRow {
    pub mask: MeshMask,
    pub mean_abs_pct_error: f64,
    pub max_abs_pct_error: f64,
    /// Mean absolute cell error as a percent of the mean absolute cell
    /// value of the same mesh, averaged over samples. Stays meaningful
    /// when some cells are nearly zero.
    pub mean_abs_pct_of_mesh: f64,
    pub n_samples: usize,
    /// Cells compared; cells whose true value is zero are skipped.
    pub n_cells: usize,
}

fn target_for(kind: MeshKind, i: usize) -> Target {
    match kind {
        MeshKind::Power => Target::PowerPc(i),
        MeshKind::Flux => Target::FluxPc(i),
    }
}

/// Rebuilds meshes of the `split` samples from masked component scores and
/// compares them with the recorded meshes. `models` is required only for
/// masks with [`ScoreSource::Model`].
pub fn mesh_reconstruction_report<S: Surrogate + ?Sized>(
    models: Option<&S>,
    pcas: &MeshPcas,
    sequences: &[OperationSequence],
    dataset: &WindowedDataset,
    split: Split,
    masks: &[MeshMask],
) -> Result<Vec<ReconstructionRow>> {
    let samples = dataset.indices(split);
    if samples.is_empty() {
        return Err(invalid_input!("split {split:?} is empty"));
    }
    let mut rows = Vec::with_capacity(masks.len());
    for mask in masks {
        let pca: &PcaModel = match mask.kind {
            MeshKind::Power => &pcas.power,
            MeshKind::Flux => &pcas.flux,
        };
        let mut keep = vec![false; pca.n_components];
        for &c in &mask.components {
            *keep
                .get_mut(c)
                .ok_or_else(|| invalid_input!("component {} beyond the {} fitted", c + 1, pca.n_components))? = true;
        }
        let model = match mask.source {
            ScoreSource::Model => {
                let m = models.ok_or_else(|| Error::ModelsUnavailable(format!("mask `{}` needs models", mask.label())))?;
                if let Some(&c) = mask.components.iter().find(|&&c| !m.supports(target_for(mask.kind, c))) {
                    return Err(Error::ModelsUnavailable(format!(
                        "no model for `{}`",
                        target_for(mask.kind, c).name()
                    )));
                }
                Some(m)
            }
            ScoreSource::Truth => None,
        };
        let (mut sum, mut worst, mut cells) = (0.0, 0.0f64, 0usize);
        let mut relative = 0.0;
        for &i in &samples {
            let o = dataset.origins[i];
            let rec = sequences
                .get(o.sequence)
                .and_then(|s| s.records.get(o.end_step))
                .ok_or_else(|| invalid_input!("sample {i} does not match the given sequences"))?;
            let truth = match mask.kind {
                MeshKind::Power => &rec.power_mesh,
                MeshKind::Flux => &rec.flux_mesh,
            };
            let mut scores = pca.transform(truth)?;
            if let Some(m) = model {
                for &c in &mask.components {
                    scores[c] = m.predict(target_for(mask.kind, c), dataset.sample(i))?;
                }
            }
            let rebuilt = pca.inverse_transform(&scores, Some(&keep))?;
            let scale = truth.iter().map(|v| v.abs()).sum::<f64>();
            let abs_err = truth.iter().zip(&rebuilt).map(|(t, r)| (r - t).abs()).sum::<f64>();
            if scale > 0.0 {
                relative += 100.0 * abs_err / scale;
            }
            for (t, r) in truth.iter().zip(&rebuilt) {
                if *t != 0.0 {
                    let e = 100.0 * ((r - t) / t).abs();
                    sum += e;
                    worst = worst.max(e);
                    cells += 1;
                }
            }
        }
        rows.push(ReconstructionRow {
            mask: mask.clone(),
            mean_abs_pct_error: if cells > 0 { sum / cells as f64 } else { 0.0 },
            max_abs_pct_error: worst,
            mean_abs_pct_of_mesh: relative / samples.len() as f64,
            n_samples: samples.len(),
            n_cells: cells,
        });
    }
    Ok(rows)
}
