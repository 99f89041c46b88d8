//! Model persistence: a text manifest for the descriptor plus a
//! little-endian binary blob for the flat vector. Round-trips are bit-exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::manifest::{join_list, split_list, Manifest};
use crate::model::{param_count, Activation, ArchDescriptor, ModelParams, TaskKind};

/// Writes `values` as consecutive little-endian 64-bit reals.
pub fn write_params_blob(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_params_blob(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::parse(path, "blob length is not a multiple of 8"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn arch_to_manifest(arch: &ArchDescriptor, m: &mut Manifest) {
    m.set("input_dim", arch.input_dim);
    m.set("hidden_dims", join_list(arch.hidden_dims.iter()));
    m.set("output_dim", arch.output_dim);
    match arch.task {
        TaskKind::Classification { classes } => {
            m.set("task", "classification");
            m.set("classes", classes);
        }
        TaskKind::Regression => {
            m.set("task", "regression");
        }
    }
    m.set(
        "activation",
        match arch.activation {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        },
    );
}

pub(crate) fn arch_from_manifest(m: &Manifest, origin: &Path) -> Result<ArchDescriptor> {
    let input_dim: usize = m.get_parsed("input_dim")?;
    let hidden_dims: Vec<usize> = split_list(m.get("hidden_dims")?)
        .map_err(|_| Error::parse(origin, "bad hidden_dims"))?;
    let output_dim: usize = m.get_parsed("output_dim")?;
    let task = match m.get("task")? {
        "classification" => TaskKind::Classification {
            classes: m.get_parsed("classes")?,
        },
        "regression" => TaskKind::Regression,
        other => return Err(Error::parse(origin, format!("unknown task {other:?}"))),
    };
    let activation = match m.get("activation")? {
        "relu" => Activation::Relu,
        "tanh" => Activation::Tanh,
        other => {
            return Err(Error::parse(origin, format!("unknown activation {other:?}")));
        }
    };
    let arch = ArchDescriptor::new(input_dim, hidden_dims, task, activation)?;
    if arch.output_dim != output_dim {
        return Err(Error::parse(
            origin,
            format!(
                "output_dim {output_dim} inconsistent with task (expected {})",
                arch.output_dim
            ),
        ));
    }
    Ok(arch)
}

/// Writes `<stem>.manifest` and `<stem>.bin` next to each other.
pub fn write_model(dir: &Path, stem: &str, model: &ModelParams) -> Result<()> {
    let mut m = Manifest::new();
    arch_to_manifest(&model.arch, &mut m);
    m.set("param_count", model.params.len());
    m.save(&dir.join(format!("{stem}.manifest")))?;
    write_params_blob(&dir.join(format!("{stem}.bin")), &model.params)
}

pub fn read_model(dir: &Path, stem: &str) -> Result<ModelParams> {
    let manifest_path = dir.join(format!("{stem}.manifest"));
    let m = Manifest::load(&manifest_path)?;
    let arch = arch_from_manifest(&m, &manifest_path)?;
    let declared: usize = m.get_parsed("param_count")?;
    if declared != param_count(&arch) {
        return Err(Error::parse(
            &manifest_path,
            "param_count disagrees with the descriptor",
        ));
    }
    let params = read_params_blob(&dir.join(format!("{stem}.bin")))?;
    ModelParams::new(arch, params)
}
