//! Feature vectors with user ownership and a supervised target.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::TaskKind;

/// Supervised target: a class index or a real value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

impl Target {
    pub fn class(&self) -> Option<usize> {
        match self {
            Target::Class(c) => Some(*c),
            Target::Value(_) => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Target::Class(_) => None,
            Target::Value(v) => Some(*v),
        }
    }
}

/// One labeled example owned by a user.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub point_id: u64,
    pub user_id: String,
    pub features: Vec<f64>,
    pub target: Target,
}

/// An ordered collection of points sharing one feature width and task kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<DataPoint>,
    feature_dim: usize,
    task: TaskKind,
}

impl Dataset {
    pub fn new(points: Vec<DataPoint>, feature_dim: usize, task: TaskKind) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidDataset("feature_dim must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        for p in &points {
            if p.features.len() != feature_dim {
                return Err(Error::InvalidDataset(format!(
                    "point {} has {} features, expected {feature_dim}",
                    p.point_id,
                    p.features.len()
                )));
            }
            if !seen.insert(p.point_id) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate point id {}",
                    p.point_id
                )));
            }
            if p.user_id.is_empty()
                || p.user_id
                    .chars()
                    .any(|c| c == ',' || c.is_whitespace())
            {
                return Err(Error::InvalidDataset(format!(
                    "point {} has an invalid user id {:?}",
                    p.point_id, p.user_id
                )));
            }
            match (task, p.target) {
                (TaskKind::Classification { classes }, Target::Class(c)) => {
                    if c >= classes {
                        return Err(Error::InvalidDataset(format!(
                            "point {} has class {c}, expected < {classes}",
                            p.point_id
                        )));
                    }
                }
                (TaskKind::Regression, Target::Value(_)) => {}
                _ => {
                    return Err(Error::InvalidDataset(format!(
                        "point {} target does not match the dataset task",
                        p.point_id
                    )));
                }
            }
        }
        Ok(Dataset {
            points,
            feature_dim,
            task,
        })
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn contains_point(&self, point_id: u64) -> bool {
        self.points.iter().any(|p| p.point_id == point_id)
    }

    /// Distinct user ids in first-appearance order.
    pub fn user_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for p in &self.points {
            if seen.insert(p.user_id.as_str()) {
                out.push(p.user_id.clone());
            }
        }
        out
    }

    /// Sub-dataset keeping only the given point ids, original order intact.
    pub fn subset(&self, keep: &BTreeSet<u64>) -> Result<Dataset> {
        let points: Vec<DataPoint> = self
            .points
            .iter()
            .filter(|p| keep.contains(&p.point_id))
            .cloned()
            .collect();
        if points.is_empty() {
            return Err(Error::InvalidDataset("subset keeps no points".into()));
        }
        Ok(Dataset {
            points,
            feature_dim: self.feature_dim,
            task: self.task,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(id: u64, user: &str, class: usize) -> DataPoint {
        DataPoint {
            point_id: id,
            user_id: user.into(),
            features: vec![0.0, 1.0],
            target: Target::Class(class),
        }
    }

    #[test]
    fn rejects_duplicate_ids() {
        let task = TaskKind::Classification { classes: 2 };
        let err = Dataset::new(vec![point(1, "u", 0), point(1, "u", 1)], 2, task);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_target_task_mismatch() {
        let p = DataPoint {
            point_id: 0,
            user_id: "u".into(),
            features: vec![0.0],
            target: Target::Value(1.5),
        };
        assert!(Dataset::new(vec![p], 1, TaskKind::Classification { classes: 2 }).is_err());
    }

    #[test]
    fn rejects_out_of_range_class() {
        let task = TaskKind::Classification { classes: 2 };
        assert!(Dataset::new(vec![point(0, "u", 2)], 2, task).is_err());
    }

    #[test]
    fn rejects_user_id_with_separator_characters() {
        let task = TaskKind::Classification { classes: 2 };
        assert!(Dataset::new(vec![point(0, "a,b", 0)], 2, task).is_err());
        assert!(Dataset::new(vec![point(0, "a b", 0)], 2, task).is_err());
    }

    #[test]
    fn user_ids_in_first_appearance_order() {
        let task = TaskKind::Classification { classes: 2 };
        let ds = Dataset::new(
            vec![point(0, "b", 0), point(1, "a", 1), point(2, "b", 0)],
            2,
            task,
        )
        .unwrap();
        assert_eq!(ds.user_ids(), vec!["b".to_string(), "a".to_string()]);
    }
}
