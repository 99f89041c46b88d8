//! K-shard, R-slice partitioning of a dataset.
//!
//! A plan assigns every point to exactly one (shard, slice) cell. In
//! user-aware mode a user's points all land in one shard (hash of the user
//! id and the master seed), so an erasure request touches a bounded set of
//! cells. Plans are deterministic in their inputs and immutable once built;
//! unlearning reuses the original assignment for every retained point.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{RngPath, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanMode {
    /// Hash each user to a shard; a user's points never straddle shards.
    UserAware,
    /// Seeded shuffle, then round-robin deal to shards.
    Random,
}

impl fmt::Display for PlanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanMode::UserAware => "user_aware",
            PlanMode::Random => "random",
        })
    }
}

/// The K x R partition: point -> (shard, slice), plus the user -> shard map
/// in user-aware mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardPlan {
    pub k: usize,
    pub r: usize,
    pub master_seed: u64,
    pub mode: PlanMode,
    assignment: BTreeMap<u64, (usize, usize)>,
    user_map: BTreeMap<String, usize>,
}

/// An erasure demand naming users or points (exactly one of the two forms).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnlearnRequest {
    Users(BTreeSet<String>),
    Points(BTreeSet<u64>),
}

impl UnlearnRequest {
    pub fn users(ids: impl IntoIterator<Item = String>) -> Result<Self> {
        let set: BTreeSet<String> = ids.into_iter().collect();
        if set.is_empty() {
            return Err(Error::InvalidRequest("no user ids given".into()));
        }
        Ok(UnlearnRequest::Users(set))
    }

    pub fn points(ids: impl IntoIterator<Item = u64>) -> Result<Self> {
        let set: BTreeSet<u64> = ids.into_iter().collect();
        if set.is_empty() {
            return Err(Error::InvalidRequest("no point ids given".into()));
        }
        Ok(UnlearnRequest::Points(set))
    }

    /// Expands the request to the point ids it removes, validating that
    /// every referenced id exists in the dataset.
    pub fn resolve(&self, dataset: &Dataset) -> Result<BTreeSet<u64>> {
        match self {
            UnlearnRequest::Users(users) => {
                let mut out = BTreeSet::new();
                for user in users {
                    let mut found = false;
                    for p in dataset.points() {
                        if &p.user_id == user {
                            out.insert(p.point_id);
                            found = true;
                        }
                    }
                    if !found {
                        return Err(Error::UnknownUserId(user.clone()));
                    }
                }
                Ok(out)
            }
            UnlearnRequest::Points(ids) => {
                for &id in ids {
                    if !dataset.contains_point(id) {
                        return Err(Error::UnknownPointId(id));
                    }
                }
                Ok(ids.clone())
            }
        }
    }
}

fn user_shard(user_id: &str, master_seed: u64, k: usize) -> usize {
    let mut h = Sha256::new();
    h.update(b"sisa.user-shard.v1");
    h.update(master_seed.to_le_bytes());
    h.update(user_id.as_bytes());
    let digest = h.finalize();
    let raw = u64::from_le_bytes(digest[..8].try_into().unwrap());
    (raw % k as u64) as usize
}

/// Builds the partition. Every shard must end up with at least one point;
/// in user-aware mode that is impossible when there are fewer users than
/// shards, and hash collisions can empty a shard even when there are more.
pub fn make_shard_plan(
    dataset: &Dataset,
    k: usize,
    r: usize,
    master_seed: u64,
    mode: PlanMode,
) -> Result<ShardPlan> {
    if k == 0 || r == 0 {
        return Err(Error::InvalidPlan("k and r must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidPlan("dataset is empty".into()));
    }

    let mut assignment = BTreeMap::new();
    let mut user_map = BTreeMap::new();
    // Arrival counter per shard keeps within-shard slice sizes within 1.
    let mut arrivals = vec![0usize; k];

    match mode {
        PlanMode::UserAware => {
            for p in dataset.points() {
                let shard = *user_map
                    .entry(p.user_id.clone())
                    .or_insert_with(|| user_shard(&p.user_id, master_seed, k));
                let slice = arrivals[shard] % r;
                arrivals[shard] += 1;
                assignment.insert(p.point_id, (shard, slice));
            }
        }
        PlanMode::Random => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            RngStream::new(RngPath::purpose(master_seed, "plan")).shuffle(&mut order);
            for (j, &idx) in order.iter().enumerate() {
                let shard = j % k;
                let slice = arrivals[shard] % r;
                arrivals[shard] += 1;
                assignment.insert(dataset.points()[idx].point_id, (shard, slice));
            }
        }
    }

    if let Some(shard) = arrivals.iter().position(|&n| n == 0) {
        let detail = match mode {
            PlanMode::UserAware => {
                let users = user_map.len();
                if users < k {
                    format!("{users} users for {k} shards; user-aware mode needs at least one user per shard")
                } else {
                    format!("user hashing left shard {shard} empty; try another master_seed")
                }
            }
            PlanMode::Random => "fewer points than shards".to_string(),
        };
        return Err(Error::EmptyShard { shard, detail });
    }

    Ok(ShardPlan {
        k,
        r,
        master_seed,
        mode,
        assignment,
        user_map,
    })
}

impl ShardPlan {
    pub fn cell_of(&self, point_id: u64) -> Result<(usize, usize)> {
        self.assignment
            .get(&point_id)
            .copied()
            .ok_or(Error::UnknownPointId(point_id))
    }

    pub fn shard_of_user(&self, user_id: &str) -> Option<usize> {
        self.user_map.get(user_id).copied()
    }

    pub fn n_points(&self) -> usize {
        self.assignment.len()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &(shard, _) in self.assignment.values() {
            sizes[shard] += 1;
        }
        sizes
    }

    pub fn slice_sizes(&self, shard: usize) -> Vec<usize> {
        let mut sizes = vec![0; self.r];
        for &(s, slice) in self.assignment.values() {
            if s == shard {
                sizes[slice] += 1;
            }
        }
        sizes
    }

    /// Point ids assigned to `(shard, slice)` in ascending id order.
    pub fn cell_points(&self, shard: usize, slice: usize) -> Vec<u64> {
        self.assignment
            .iter()
            .filter(|(_, &(s, sl))| s == shard && sl == slice)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("k={}\n", self.k));
        out.push_str(&format!("r={}\n", self.r));
        out.push_str(&format!("master_seed={}\n", self.master_seed));
        out.push_str(&format!("mode={}\n", self.mode));
        out.push_str(&format!("n_points={}\n", self.assignment.len()));
        for (user, shard) in &self.user_map {
            out.push_str(&format!("u {user} {shard}\n"));
        }
        for (id, (shard, slice)) in &self.assignment {
            out.push_str(&format!("p {id} {shard} {slice}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut header = BTreeMap::new();
        let mut assignment = BTreeMap::new();
        let mut user_map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::parse(path, format!("line {}: {msg}", lineno + 1));
            if let Some(rest) = line.strip_prefix("p ") {
                let mut it = rest.split_whitespace();
                let id: u64 = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad point id"))?;
                let shard: usize = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad shard"))?;
                let slice: usize = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad slice"))?;
                if assignment.insert(id, (shard, slice)).is_some() {
                    return Err(bad("duplicate point id"));
                }
            } else if let Some(rest) = line.strip_prefix("u ") {
                let mut it = rest.split_whitespace();
                let user = it.next().ok_or_else(|| bad("bad user id"))?.to_string();
                let shard: usize = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad shard"))?;
                user_map.insert(user, shard);
            } else if let Some((key, value)) = line.split_once('=') {
                header.insert(key.to_string(), value.to_string());
            } else {
                return Err(bad("unrecognized line"));
            }
        }
        let get = |key: &str| {
            header
                .get(key)
                .ok_or_else(|| Error::parse(path, format!("missing header {key:?}")))
        };
        let k: usize = get("k")?
            .parse()
            .map_err(|_| Error::parse(path, "bad k"))?;
        let r: usize = get("r")?
            .parse()
            .map_err(|_| Error::parse(path, "bad r"))?;
        let master_seed: u64 = get("master_seed")?
            .parse()
            .map_err(|_| Error::parse(path, "bad master_seed"))?;
        let mode = match get("mode")?.as_str() {
            "user_aware" => PlanMode::UserAware,
            "random" => PlanMode::Random,
            other => return Err(Error::parse(path, format!("unknown mode {other:?}"))),
        };
        let n_points: usize = get("n_points")?
            .parse()
            .map_err(|_| Error::parse(path, "bad n_points"))?;
        if assignment.len() != n_points {
            return Err(Error::parse(path, "n_points disagrees with the table"));
        }
        for (&id, &(shard, slice)) in &assignment {
            if shard >= k || slice >= r {
                return Err(Error::parse(path, format!("point {id} cell out of range")));
            }
        }
        Ok(ShardPlan {
            k,
            r,
            master_seed,
            mode,
            assignment,
            user_map,
        })
    }

    /// Checks that the plan covers exactly the dataset's points.
    pub fn validate_against(&self, dataset: &Dataset) -> Result<()> {
        if self.assignment.len() != dataset.len() {
            return Err(Error::InvalidPlan(format!(
                "plan covers {} points, dataset has {}",
                self.assignment.len(),
                dataset.len()
            )));
        }
        for p in dataset.points() {
            if !self.assignment.contains_key(&p.point_id) {
                return Err(Error::InvalidPlan(format!(
                    "point {} missing from the plan",
                    p.point_id
                )));
            }
        }
        Ok(())
    }
}

/// For each shard containing at least one removed point, the earliest
/// affected slice. Shards absent from the map are untouched.
pub fn affected_cells(
    plan: &ShardPlan,
    request: &UnlearnRequest,
    dataset: &Dataset,
) -> Result<BTreeMap<usize, usize>> {
    let removed = request.resolve(dataset)?;
    let mut out: BTreeMap<usize, usize> = BTreeMap::new();
    for id in removed {
        let (shard, slice) = plan.cell_of(id)?;
        out.entry(shard)
            .and_modify(|s| *s = (*s).min(slice))
            .or_insert(slice);
    }
    Ok(out)
}

/// The dataset minus all removed points; relative order and point ids are
/// preserved. Removing every point is rejected.
pub fn retained_view(dataset: &Dataset, request: &UnlearnRequest) -> Result<Dataset> {
    let removed = request.resolve(dataset)?;
    if removed.len() == dataset.len() {
        return Err(Error::InvalidRequest(
            "request removes every point; nothing left to train on".into(),
        ));
    }
    let keep: BTreeSet<u64> = dataset
        .points()
        .iter()
        .map(|p| p.point_id)
        .filter(|id| !removed.contains(id))
        .collect();
    dataset.subset(&keep)
}
