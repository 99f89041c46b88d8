//! Seeded synthetic datasets: Gaussian class blobs or a noisy linear
//! regression target, with users owning contiguous blocks of points.

use crate::data::{DataPoint, Dataset, Target};
use crate::error::{Error, Result};
use crate::model::TaskKind;
use crate::rng::{RngPath, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthTask {
    /// `classes` Gaussian blobs with unit noise; blob centers sit
    /// `separation` apart (orthogonal directions while `classes <= dim`).
    Classification { classes: usize, separation: f64 },
    /// Targets `w . x` plus Gaussian noise of the given scale.
    Regression { noise_std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub task: SynthTask,
    pub n_points: usize,
    pub n_users: usize,
    pub dim: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Parses a compact spec string such as
    /// `task=cls,n=600,users=40,d=16,classes=6,sep=4,seed=7` or
    /// `task=reg,n=500,users=25,d=8,noise=0.1,seed=3`.
    pub fn parse(raw: &str) -> Result<Self> {
        let mut task_name = None;
        let mut n = None;
        let mut users = None;
        let mut dim = None;
        let mut classes = 6usize;
        let mut separation = 4.0;
        let mut noise = 0.1;
        let mut seed = 0u64;
        for field in raw.split(',') {
            let (key, value) = field.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("bad synth field {field:?} (expected key=value)"))
            })?;
            let bad = || Error::InvalidConfig(format!("bad synth value for {key:?}: {value:?}"));
            match key.trim() {
                "task" => task_name = Some(value.trim().to_string()),
                "n" => n = Some(value.parse().map_err(|_| bad())?),
                "users" => users = Some(value.parse().map_err(|_| bad())?),
                "d" => dim = Some(value.parse().map_err(|_| bad())?),
                "classes" => classes = value.parse().map_err(|_| bad())?,
                "sep" => separation = value.parse().map_err(|_| bad())?,
                "noise" => noise = value.parse().map_err(|_| bad())?,
                "seed" => seed = value.parse().map_err(|_| bad())?,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown synth key {other:?}"
                    )))
                }
            }
        }
        let task = match task_name.as_deref() {
            Some("cls") => SynthTask::Classification {
                classes,
                separation,
            },
            Some("reg") => SynthTask::Regression { noise_std: noise },
            Some(other) => {
                return Err(Error::InvalidConfig(format!("unknown synth task {other:?}")))
            }
            None => return Err(Error::InvalidConfig("synth spec missing task=".into())),
        };
        Ok(SynthSpec {
            task,
            n_points: n.ok_or_else(|| Error::InvalidConfig("synth spec missing n=".into()))?,
            n_users: users
                .ok_or_else(|| Error::InvalidConfig("synth spec missing users=".into()))?,
            dim: dim.ok_or_else(|| Error::InvalidConfig("synth spec missing d=".into()))?,
            seed,
        })
    }
}

/// User id for block `i`, zero-padded for stable lexicographic order.
fn user_name(i: usize) -> String {
    format!("user_{i:04}")
}

/// Blob centers: seeded Gaussian directions, orthonormalized while the
/// class count fits the dimension, scaled to `separation`.
fn blob_centers(classes: usize, dim: usize, separation: f64, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        if c < dim {
            // Gram-Schmidt against the previous centers.
            for prev in &centers {
                let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                let norm2: f64 = prev.iter().map(|x| x * x).sum();
                for (vi, pi) in v.iter_mut().zip(prev) {
                    *vi -= dot / norm2 * pi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for vi in v.iter_mut() {
            *vi *= separation / norm;
        }
        centers.push(v);
    }
    centers
}

/// Fully deterministic in the spec: replaying a seed regenerates identical
/// points and, via the feature-file writer, identical bytes.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    if spec.dim == 0 || spec.n_points == 0 {
        return Err(Error::InvalidConfig(
            "synthetic data needs positive n and d".into(),
        ));
    }
    if spec.n_users == 0 || spec.n_users > spec.n_points {
        return Err(Error::InvalidConfig(
            "need 1 <= users <= points for block assignment".into(),
        ));
    }
    if let SynthTask::Classification { classes, .. } = spec.task {
        if classes < 2 {
            return Err(Error::InvalidConfig("classification needs >= 2 classes".into()));
        }
    }
    let mut rng = RngStream::new(RngPath::purpose(spec.seed, "synth"));

    // Contiguous user blocks; the first n % users blocks get one extra.
    let base = spec.n_points / spec.n_users;
    let extra = spec.n_points % spec.n_users;
    let mut owner = Vec::with_capacity(spec.n_points);
    for u in 0..spec.n_users {
        let size = base + usize::from(u < extra);
        owner.extend(std::iter::repeat_n(u, size));
    }

    let mut points = Vec::with_capacity(spec.n_points);
    match spec.task {
        SynthTask::Classification {
            classes,
            separation,
        } => {
            let centers = blob_centers(classes, spec.dim, separation, &mut rng);
            for (i, &owner_idx) in owner.iter().enumerate() {
                let class = (rng.next_u64() % classes as u64) as usize;
                let features: Vec<f64> = centers[class]
                    .iter()
                    .map(|&c| c + rng.standard_normal())
                    .collect();
                points.push(DataPoint {
                    point_id: i as u64,
                    user_id: user_name(owner_idx),
                    features,
                    target: Target::Class(class),
                });
            }
            Dataset::new(points, spec.dim, TaskKind::Classification { classes })
        }
        SynthTask::Regression { noise_std } => {
            let w: Vec<f64> = (0..spec.dim).map(|_| rng.standard_normal()).collect();
            for (i, &owner_idx) in owner.iter().enumerate() {
                let features: Vec<f64> =
                    (0..spec.dim).map(|_| rng.standard_normal()).collect();
                let clean: f64 = w.iter().zip(&features).map(|(a, b)| a * b).sum();
                let target = clean + noise_std * rng.standard_normal();
                points.push(DataPoint {
                    point_id: i as u64,
                    user_id: user_name(owner_idx),
                    features,
                    target: Target::Value(target),
                });
            }
            Dataset::new(points, spec.dim, TaskKind::Regression)
        }
    }
}
