//! Regression targets.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::OperationSequence;
use crate::error::{invalid_input, Result};
use crate::features::{FEATURE_NAMES, FIRST_DEPENDENT, N_DEPENDENT, N_FEATURES};
use crate::pca::PcaModel;

pub const N_MESH_COMPONENTS: usize = 5;
pub const N_TARGETS: usize = 1 + 2 * N_MESH_COMPONENTS + N_DEPENDENT;

/// One model output. A window ending at step `t` predicts reactivity and
/// mesh scores at `t` and dependent features at `t + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Target {
    /// pcm
    Reactivity,
    /// Zero-based component index.
    PowerPc(usize),
    FluxPc(usize),
    /// Feature index into [`FEATURE_NAMES`]; always a dependent feature.
    NextFeature(usize),
}

impl Target {
    pub fn all() -> Vec<Target> {
        let mut out = Vec::with_capacity(N_TARGETS);
        out.push(Target::Reactivity);
        out.extend((0..N_MESH_COMPONENTS).map(Target::PowerPc));
        out.extend((0..N_MESH_COMPONENTS).map(Target::FluxPc));
        out.extend((FIRST_DEPENDENT..N_FEATURES).map(Target::NextFeature));
        out
    }

    pub fn dependent() -> Vec<Target> {
        (FIRST_DEPENDENT..N_FEATURES).map(Target::NextFeature).collect()
    }

    pub fn name(&self) -> String {
        match self {
            Target::Reactivity => String::from("reactivity"),
            Target::PowerPc(i) => format!("power_pc{}", i + 1),
            Target::FluxPc(i) => format!("flux_pc{}", i + 1),
            Target::NextFeature(j) => format!("next_{}", FEATURE_NAMES[*j]),
        }
    }

    pub fn from_name(name: &str) -> Result<Target> {
        Target::all()
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| invalid_input!("unknown target `{name}`"))
    }

    pub fn needs_pca(&self) -> bool {
        matches!(self, Target::PowerPc(_) | Target::FluxPc(_))
    }
}

/// Power and flux PCA models used to derive mesh targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshPcas {
    pub power: PcaModel,
    pub flux: PcaModel,
}

/// Value of `target` for the window ending at `t`, or `None` when the
/// sequence has no step `t + 1` for a next-step target.
pub fn target_value(seq: &OperationSequence, t: usize, target: Target, pcas: Option<&MeshPcas>) -> Result<Option<f64>> {
    let rec = &seq.records[t];
    Ok(match target {
        Target::Reactivity => Some(rec.reactivity * 1e5),
        Target::PowerPc(i) => {
            let p = pcas.ok_or_else(|| invalid_input!("mesh targets need PCA models"))?;
            Some(p.power.transform(&rec.power_mesh)?[i])
        }
        Target::FluxPc(i) => {
            let p = pcas.ok_or_else(|| invalid_input!("mesh targets need PCA models"))?;
            Some(p.flux.transform(&rec.flux_mesh)?[i])
        }
        Target::NextFeature(j) => seq.records.get(t + 1).map(|r| r.features.to_array()[j]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_seven_named_targets() {
        let all = Target::all();
        assert_eq!(all.len(), 27);
        assert_eq!(N_TARGETS, 27);
        for t in &all {
            assert_eq!(Target::from_name(&t.name()).unwrap(), *t);
        }
        assert_eq!(all[0].name(), "reactivity");
        assert_eq!(all[1].name(), "power_pc1");
        assert_eq!(all[26].name(), "next_discarded_count");
    }
}
