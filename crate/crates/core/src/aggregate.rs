//! Turning N shard models into one predictor.
//!
//! Two families: classic ensembling (majority vote for classification, mean
//! output for regression), and the merged model obtained by elementwise
//! weight averaging of merge-compatible members. The merged model answers a
//! query with exactly one forward pass no matter how many shards fed it.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{argmax, forward, ModelParams, TaskKind};

/// How an ensemble turns member outputs into one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMode {
    MajorityVote,
    MeanPrediction,
    WeightAverage,
}

impl AggregationMode {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "vote" => Ok(AggregationMode::MajorityVote),
            "mean" => Ok(AggregationMode::MeanPrediction),
            "merge" => Ok(AggregationMode::WeightAverage),
            other => Err(Error::ModeMismatch(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Class(usize),
    Value(f64),
}

/// Elementwise mean of the members' parameter vectors, summed in ascending
/// member order. A single member is returned bit-identically.
pub fn weight_average(members: &[ModelParams]) -> Result<ModelParams> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidRequest("weight_average over zero members".into()))?;
    for (i, m) in members.iter().enumerate().skip(1) {
        if !first.merge_compatible(m) {
            return Err(Error::IncompatibleArch {
                left: 0,
                right: i,
                detail: format!("{:?} vs {:?}", first.arch, m.arch),
            });
        }
    }
    if members.len() == 1 {
        return Ok(first.clone());
    }
    let n = first.params.len();
    let inv = 1.0 / members.len() as f64;
    let mut params = vec![0.0; n];
    for m in members {
        for (acc, &p) in params.iter_mut().zip(m.params.iter()) {
            *acc += p;
        }
    }
    for p in params.iter_mut() {
        *p *= inv;
    }
    Ok(ModelParams {
        arch: first.arch.clone(),
        params,
    })
}

/// Winner of a vote multiset; ties break to the lowest class index.
pub fn majority_vote(votes: &[usize], classes: usize) -> Result<usize> {
    if votes.is_empty() {
        return Err(Error::InvalidRequest("no votes".into()));
    }
    let mut tally = vec![0usize; classes];
    for &v in votes {
        if v >= classes {
            return Err(Error::InvalidRequest(format!(
                "vote {v} out of range for {classes} classes"
            )));
        }
        tally[v] += 1;
    }
    let mut best = 0;
    for (c, &count) in tally.iter().enumerate().skip(1) {
        if count > tally[best] {
            best = c;
        }
    }
    Ok(best)
}

/// N shard models plus an aggregation mode. Members are ordered by shard
/// index; for weight averaging the merged model is computed once at
/// construction and cached for the ensemble's lifetime.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    members: Vec<ModelParams>,
    mode: AggregationMode,
    merged: Option<ModelParams>,
}

impl EnsembleModel {
    pub fn new(members: Vec<ModelParams>, mode: AggregationMode) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidRequest("ensemble needs at least one member".into()))?;
        let task = first.arch.task;
        match mode {
            AggregationMode::MajorityVote => {
                if !task.is_classification() {
                    return Err(Error::ModeMismatch(
                        "majority vote requires a classification task".into(),
                    ));
                }
            }
            AggregationMode::MeanPrediction => {
                if task.is_classification() {
                    return Err(Error::ModeMismatch(
                        "mean prediction requires a regression task".into(),
                    ));
                }
            }
            AggregationMode::WeightAverage => {}
        }
        let merged = match mode {
            AggregationMode::WeightAverage => Some(weight_average(&members)?),
            _ => {
                for (i, m) in members.iter().enumerate().skip(1) {
                    if m.arch.task != task {
                        return Err(Error::IncompatibleArch {
                            left: 0,
                            right: i,
                            detail: "members disagree on the task".into(),
                        });
                    }
                }
                None
            }
        };
        Ok(EnsembleModel {
            members,
            mode,
            merged,
        })
    }

    pub fn members(&self) -> &[ModelParams] {
        &self.members
    }

    pub fn mode(&self) -> AggregationMode {
        self.mode
    }

    pub fn merged(&self) -> Option<&ModelParams> {
        self.merged.as_ref()
    }

    pub fn task(&self) -> TaskKind {
        self.members[0].arch.task
    }

    pub fn predict(&self, features: &[f64]) -> Result<Prediction> {
        match self.mode {
            AggregationMode::MajorityVote => {
                let classes = match self.task() {
                    TaskKind::Classification { classes } => classes,
                    TaskKind::Regression => unreachable!("checked at construction"),
                };
                let mut votes = Vec::with_capacity(self.members.len());
                for m in &self.members {
                    votes.push(argmax(&forward(m, features)?));
                }
                Ok(Prediction::Class(majority_vote(&votes, classes)?))
            }
            AggregationMode::MeanPrediction => {
                let mut sum = 0.0;
                for m in &self.members {
                    sum += forward(m, features)?[0];
                }
                Ok(Prediction::Value(sum / self.members.len() as f64))
            }
            AggregationMode::WeightAverage => {
                let merged = self.merged.as_ref().expect("cached at construction");
                let out = forward(merged, features)?;
                Ok(match merged.arch.task {
                    TaskKind::Classification { .. } => Prediction::Class(argmax(&out)),
                    TaskKind::Regression => Prediction::Value(out[0]),
                })
            }
        }
    }

    /// Predictions for every point of a dataset, in dataset order.
    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<Prediction>> {
        dataset
            .points()
            .iter()
            .map(|p| self.predict(&p.features))
            .collect()
    }
}
