//! On-disk formats: sequences, control plans, feature series, PCA models,
//! checkpoints and corpus manifests.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value reads back bit-identically. Meshes are flattened row-major: power
//! cell `(a, r)` sits at `a * 8 + r`, flux cell `(a, r, g)` at
//! `(a * 8 + r) * 3 + g`, with `a` counted from the top of the core.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pebble_core::features::{FeatureVector, FEATURE_NAMES, N_FEATURES};
use pebble_core::lstm::{LstmModel, ModelSet};
use pebble_core::pca::{MeshKind, PcaModel};
use pebble_core::sequence::{MeshPcas, OperationSequence, Provenance, StepRecord, Target};
use pebble_core::sim::kernel::{ENERGY_GROUPS, FLUX_CELLS, MESH_AXIAL, MESH_RADIAL, POWER_CELLS};
use pebble_core::sim::{ControlKind, ControlVector};
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{OpsError, Result};

pub const SEQUENCE_KIND: &str = "sequence";
pub const PLAN_KIND: &str = "plan";
pub const FEATURES_KIND: &str = "features";
pub const PCA_KIND: &str = "pca";
pub const CHECKPOINT_KIND: &str = "checkpoint";
pub const DATASET_KIND: &str = "dataset";
pub const FORMAT_VERSION: u32 = 1;

fn csv_body(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Vec<u8> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out.into_bytes()
}

/// Parses a numeric CSV body whose header must equal `header`.
fn parse_csv(path: &Path, body: &[u8], header: &[String]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(body);
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| OpsError::format(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        let first_diff = found.iter().zip(header).position(|(a, b)| a != b).unwrap_or(found.len().min(header.len()));
        return Err(OpsError::format(
            path,
            format!(
                "unexpected columns: {} columns, expected {}; first difference at column {}",
                found.len(),
                header.len(),
                first_diff + 1
            ),
        ));
    }
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| OpsError::format(path, e))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(col, s)| {
                s.trim().parse::<f64>().map_err(|_| {
                    OpsError::format(path, format!("row {}, column `{}`: `{s}` is not a number", line + 1, header[col]))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn control_columns() -> Vec<String> {
    FEATURE_NAMES[..5].iter().map(|s| s.to_string()).collect()
}

pub fn feature_columns() -> Vec<String> {
    std::iter::once("step_index".to_string())
        .chain(FEATURE_NAMES.iter().map(|s| s.to_string()))
        .collect()
}

/// `step_index, elapsed_days`, the features, `k_eff, reactivity`, then the
/// power and flux meshes.
pub fn sequence_columns() -> Vec<String> {
    let mut cols = vec!["step_index".to_string(), "elapsed_days".to_string()];
    cols.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    cols.push("k_eff".into());
    cols.push("reactivity".into());
    for a in 0..MESH_AXIAL {
        for r in 0..MESH_RADIAL {
            cols.push(format!("power_a{a:02}_r{r}"));
        }
    }
    for a in 0..MESH_AXIAL {
        for r in 0..MESH_RADIAL {
            for g in 0..ENERGY_GROUPS {
                cols.push(format!("flux_a{a:02}_r{r}_g{g}"));
            }
        }
    }
    cols
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c == '=' || c == ',') {
        return Err(OpsError::Invalid(format!(
            "sequence name `{name}` must be non-empty without whitespace, `=` or `,`"
        )));
    }
    Ok(())
}

pub fn encode_sequence(seq: &OperationSequence) -> Result<Vec<u8>> {
    check_name(&seq.name)?;
    for r in &seq.records {
        if r.power_mesh.len() != POWER_CELLS || r.flux_mesh.len() != FLUX_CELLS {
            return Err(OpsError::Invalid(format!(
                "sequence `{}` step {} has mesh sizes {}/{}, expected {POWER_CELLS}/{FLUX_CELLS}",
                seq.name,
                r.step_index,
                r.power_mesh.len(),
                r.flux_mesh.len()
            )));
        }
    }
    let meta = format!(
        "# name={} provenance={} seed={} held_out={}\n",
        seq.name,
        seq.provenance.name(),
        seq.seed,
        seq.held_out
    );
    let rows = seq.records.iter().map(|r| {
        let mut row = vec![r.step_index as f64, r.elapsed_days];
        row.extend(r.features.to_array());
        row.push(r.k_eff);
        row.push(r.reactivity);
        row.extend(&r.power_mesh);
        row.extend(&r.flux_mesh);
        row
    });
    let mut body = meta.into_bytes();
    body.extend(csv_body(&sequence_columns(), rows));
    Ok(body)
}

pub fn write_sequence(path: &Path, seq: &OperationSequence) -> Result<()> {
    artifact::write(path, SEQUENCE_KIND, FORMAT_VERSION, &encode_sequence(seq)?)
}

fn parse_provenance(path: &Path, s: &str) -> Result<Provenance> {
    match s {
        "handcrafted" => Ok(Provenance::Handcrafted),
        "random" => Ok(Provenance::Random),
        "runin" => Ok(Provenance::Runin),
        _ => Err(OpsError::format(path, format!("unknown provenance `{s}`"))),
    }
}

pub fn read_sequence(path: &Path) -> Result<OperationSequence> {
    let body = artifact::read(path, SEQUENCE_KIND, FORMAT_VERSION)?;
    let text = std::str::from_utf8(&body).map_err(|e| OpsError::format(path, e))?;
    let meta_line = text.lines().next().filter(|l| l.starts_with('#')).ok_or_else(|| {
        OpsError::format(path, "missing `# name=... provenance=... seed=... held_out=...` line")
    })?;
    let mut seq = OperationSequence {
        name: String::new(),
        provenance: Provenance::Handcrafted,
        seed: 0,
        held_out: false,
        records: Vec::new(),
    };
    for field in meta_line.trim_start_matches('#').split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| OpsError::format(path, format!("bad metadata field `{field}`")))?;
        let bad = |_| OpsError::format(path, format!("bad value for `{k}`: `{v}`"));
        match k {
            "name" => seq.name = v.to_string(),
            "provenance" => seq.provenance = parse_provenance(path, v)?,
            "seed" => seq.seed = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "held_out" => seq.held_out = v.parse().map_err(|e: std::str::ParseBoolError| bad(e.to_string()))?,
            _ => return Err(OpsError::format(path, format!("unknown metadata field `{k}`"))),
        }
    }
    let rows = parse_csv(path, &body, &sequence_columns())?;
    let f0 = 2;
    let k0 = f0 + N_FEATURES;
    let p0 = k0 + 2;
    let x0 = p0 + POWER_CELLS;
    for row in rows {
        seq.records.push(StepRecord {
            step_index: row[0] as u64,
            elapsed_days: row[1],
            features: FeatureVector::from_array(&row[f0..k0])?,
            k_eff: row[k0],
            reactivity: row[k0 + 1],
            power_mesh: row[p0..x0].to_vec(),
            flux_mesh: row[x0..].to_vec(),
        });
    }
    Ok(seq)
}

pub fn write_plan(path: &Path, plan: &[ControlVector]) -> Result<()> {
    let body = csv_body(&control_columns(), plan.iter().map(|c| c.as_array().to_vec()));
    artifact::write(path, PLAN_KIND, FORMAT_VERSION, &body)
}

/// Reads a control plan. Plans are hand-edited, so the header line is
/// optional here; when present it is verified.
pub fn read_plan(path: &Path) -> Result<Vec<ControlVector>> {
    let bytes = fs::read(path).map_err(|e| OpsError::io(path, e))?;
    let body = if bytes.starts_with(b"# pebble:") {
        artifact::decode(path, PLAN_KIND, FORMAT_VERSION, &bytes)?
    } else {
        &bytes[..]
    };
    let rows = parse_csv(path, body, &control_columns())?;
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut c = ControlVector::benchmark();
            for (kind, v) in ControlKind::ALL.iter().zip(&row) {
                c.set(*kind, *v);
            }
            c.validate()
                .map_err(|e| OpsError::format(path, format!("row {}: {e}", i + 1)))?;
            Ok(c)
        })
        .collect()
}

pub fn encode_features(records: &[StepRecord]) -> Vec<u8> {
    csv_body(
        &feature_columns(),
        records.iter().map(|r| {
            let mut row = vec![r.step_index as f64];
            row.extend(r.features.to_array());
            row
        }),
    )
}

pub fn write_features(path: &Path, records: &[StepRecord]) -> Result<()> {
    artifact::write(path, FEATURES_KIND, FORMAT_VERSION, &encode_features(records))
}

/// Feature rows with their step indices.
pub fn read_features(path: &Path) -> Result<Vec<(u64, FeatureVector)>> {
    let body = artifact::read(path, FEATURES_KIND, FORMAT_VERSION)?;
    parse_csv(path, &body, &feature_columns())?
        .into_iter()
        .map(|row| Ok((row[0] as u64, FeatureVector::from_array(&row[1..])?)))
        .collect()
}

fn kind_name(kind: MeshKind) -> &'static str {
    match kind {
        MeshKind::Power => "power",
        MeshKind::Flux => "flux",
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
}

/// Text matrix: `kind`, `dim`, `n_components`, the explained variance
/// ratios, the mean and one `component` line per kept direction.
pub fn encode_pca(pca: &PcaModel) -> Vec<u8> {
    let mut out = String::new();
    writeln!(out, "kind {}", kind_name(pca.kind)).ok();
    writeln!(out, "dim {}", pca.dim).ok();
    writeln!(out, "n_components {}", pca.n_components).ok();
    writeln!(out, "explained_variance_ratio {}", join(&pca.explained_variance_ratio)).ok();
    writeln!(out, "mean {}", join(&pca.mean)).ok();
    for c in pca.components.chunks(pca.dim.max(1)) {
        writeln!(out, "component {}", join(c)).ok();
    }
    out.into_bytes()
}

pub fn write_pca(path: &Path, pca: &PcaModel) -> Result<()> {
    artifact::write(path, PCA_KIND, FORMAT_VERSION, &encode_pca(pca))
}

pub fn read_pca(path: &Path) -> Result<PcaModel> {
    let body = artifact::read(path, PCA_KIND, FORMAT_VERSION)?;
    let text = String::from_utf8(body).map_err(|e| OpsError::format(path, e))?;
    let mut kind = None;
    let mut dim = None;
    let mut n = None;
    let mut evr = Vec::new();
    let mut mean = Vec::new();
    let mut components = Vec::new();
    let floats = |rest: &str| -> Result<Vec<f64>> {
        rest.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| OpsError::format(path, format!("`{t}` is not a number"))))
            .collect()
    };
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "kind" => {
                kind = Some(match rest.trim() {
                    "power" => MeshKind::Power,
                    "flux" => MeshKind::Flux,
                    other => return Err(OpsError::format(path, format!("unknown mesh kind `{other}`"))),
                })
            }
            "dim" => dim = rest.trim().parse::<usize>().ok(),
            "n_components" => n = rest.trim().parse::<usize>().ok(),
            "explained_variance_ratio" => evr = floats(rest)?,
            "mean" => mean = floats(rest)?,
            "component" => components.extend(floats(rest)?),
            other => return Err(OpsError::format(path, format!("unknown key `{other}`"))),
        }
    }
    let (kind, dim, n) = match (kind, dim, n) {
        (Some(k), Some(d), Some(n)) => (k, d, n),
        _ => return Err(OpsError::format(path, "missing kind, dim or n_components")),
    };
    if mean.len() != dim || components.len() != n * dim || evr.len() < n {
        return Err(OpsError::format(
            path,
            format!(
                "inconsistent sizes: dim {dim}, {n} components, mean {}, component values {}, ratios {}",
                mean.len(),
                components.len(),
                evr.len()
            ),
        ));
    }
    Ok(PcaModel {
        kind,
        dim,
        n_components: n,
        mean,
        components,
        explained_variance_ratio: evr,
    })
}

pub fn write_pcas(dir: &Path, pcas: &MeshPcas) -> Result<()> {
    write_pca(&dir.join("power.pca"), &pcas.power)?;
    write_pca(&dir.join("flux.pca"), &pcas.flux)
}

pub fn read_pcas(dir: &Path) -> Result<MeshPcas> {
    Ok(MeshPcas {
        power: read_pca(&dir.join("power.pca"))?,
        flux: read_pca(&dir.join("flux.pca"))?,
    })
}

/// A checkpoint is the full model as JSON: architecture, weights, input
/// and target normalisation and training history.
pub fn write_checkpoint(path: &Path, model: &LstmModel) -> Result<()> {
    artifact::write_json(path, CHECKPOINT_KIND, FORMAT_VERSION, model)
}

pub fn read_checkpoint(path: &Path) -> Result<LstmModel> {
    artifact::read_json(path, CHECKPOINT_KIND, FORMAT_VERSION)
}

pub fn checkpoint_path(dir: &Path, target: Target) -> PathBuf {
    dir.join(format!("{}.ckpt", target.name()))
}

pub fn save_models(dir: &Path, models: &ModelSet) -> Result<Vec<PathBuf>> {
    models
        .models
        .iter()
        .map(|m| {
            let p = checkpoint_path(dir, m.target);
            write_checkpoint(&p, m)?;
            Ok(p)
        })
        .collect()
}

/// Loads every `*.ckpt` in `dir`; an empty or missing directory gives an
/// empty set.
pub fn load_models(dir: &Path) -> Result<ModelSet> {
    let mut set = ModelSet::default();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(set),
        Err(e) => return Err(OpsError::io(dir, e)),
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    paths.sort();
    for p in paths {
        set.insert(read_checkpoint(&p)?);
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    /// Relative to the manifest's directory.
    pub file: String,
    pub name: String,
    pub provenance: Provenance,
    pub seed: u64,
    pub held_out: bool,
    pub steps: usize,
    pub sha256: String,
}

/// Index of a corpus directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default, rename = "sequence")]
    pub sequences: Vec<DatasetEntry>,
}

pub const DATASET_FILE: &str = "dataset.toml";

fn write_sequence_file(dir: &Path, seq: &OperationSequence) -> Result<DatasetEntry> {
    let file = format!("{}.csv", seq.name);
    let bytes = artifact::encode(SEQUENCE_KIND, FORMAT_VERSION, &encode_sequence(seq)?);
    fs::create_dir_all(dir).map_err(|e| OpsError::io(dir, e))?;
    let path = dir.join(&file);
    fs::write(&path, &bytes).map_err(|e| OpsError::io(&path, e))?;
    Ok(DatasetEntry {
        file,
        name: seq.name.clone(),
        provenance: seq.provenance,
        seed: seq.seed,
        held_out: seq.held_out,
        steps: seq.len(),
        sha256: artifact::sha256_hex(&bytes),
    })
}

/// Writes every sequence as `<name>.csv` plus `dataset.toml`.
pub fn save_corpus(dir: &Path, sequences: &[OperationSequence]) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest::default();
    for seq in sequences {
        if manifest.sequences.iter().any(|e| e.name == seq.name) {
            return Err(OpsError::Invalid(format!("duplicate sequence name `{}`", seq.name)));
        }
        manifest.sequences.push(write_sequence_file(dir, seq)?);
    }
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let path = dir.join(DATASET_FILE);
    let body = toml::to_string_pretty(manifest).map_err(|e| OpsError::format(&path, e))?;
    artifact::write(&path, DATASET_KIND, FORMAT_VERSION, body.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(DATASET_FILE);
    let body = artifact::read(&path, DATASET_KIND, FORMAT_VERSION)?;
    let text = String::from_utf8(body).map_err(|e| OpsError::format(&path, e))?;
    toml::from_str(&text).map_err(|e| OpsError::format(&path, e))
}

/// Adds one sequence to an existing corpus directory.
pub fn append_to_corpus(dir: &Path, seq: &OperationSequence) -> Result<DatasetManifest> {
    let mut manifest = read_manifest(dir)?;
    if manifest.sequences.iter().any(|e| e.name == seq.name) {
        return Err(OpsError::Invalid(format!("corpus already has a sequence named `{}`", seq.name)));
    }
    manifest.sequences.push(write_sequence_file(dir, seq)?);
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Loads every sequence listed in `dataset.toml`, verifying each file's
/// digest against the manifest.
pub fn load_corpus(dir: &Path) -> Result<Vec<OperationSequence>> {
    let manifest = read_manifest(dir)?;
    manifest
        .sequences
        .iter()
        .map(|e| {
            let path = dir.join(&e.file);
            let bytes = fs::read(&path).map_err(|err| OpsError::io(&path, err))?;
            let actual = artifact::sha256_hex(&bytes);
            if actual != e.sha256 {
                return Err(OpsError::Checksum {
                    path,
                    expected: e.sha256.clone(),
                    actual,
                });
            }
            let mut seq = read_sequence(&path)?;
            seq.held_out = e.held_out;
            Ok(seq)
        })
        .collect()
}
