use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::LabeledPatch;

/// Shape of an N-way K-shot episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            n_way: 10,
            k_shot: 5,
            n_query: 5,
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 || self.k_shot < 1 || self.n_query < 1 {
            return Err(Error::Config(format!(
                "episode needs n_way >= 2, k_shot >= 1, n_query >= 1 (got {}, {}, {})",
                self.n_way, self.k_shot, self.n_query
            )));
        }
        Ok(())
    }

    pub fn per_class(&self) -> usize {
        self.k_shot + self.n_query
    }

    pub fn episode_size(&self) -> usize {
        self.n_way * self.per_class()
    }
}

/// One feature vector tagged with its class index inside an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeItem {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: Vec<EpisodeItem>,
    pub query: Vec<EpisodeItem>,
    /// Episode class index -> global class id.
    pub class_map: Vec<u32>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.class_map.len()
    }
}

fn group_by_class(pool: &[LabeledPatch]) -> BTreeMap<u32, Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, p) in pool.iter().enumerate() {
        groups.entry(p.class_id).or_default().push(i);
    }
    groups
}

/// Duplicates patches of each minority event class (uniformly, with
/// replacement) until every event class matches the largest one. Background
/// is left alone. Originals keep their positions; copies are appended in
/// class-id order.
pub fn balance_oversample(pool: &[LabeledPatch], rng: &mut Rng) -> Result<Vec<LabeledPatch>> {
    if pool.is_empty() {
        return Err(Error::Episode("cannot oversample an empty pool".into()));
    }
    let groups = group_by_class(pool);
    let target = groups
        .iter()
        .filter(|(&c, _)| c != 0)
        .map(|(_, v)| v.len())
        .max()
        .unwrap_or(0);
    let mut out = pool.to_vec();
    for (_, members) in groups.iter().filter(|(&c, _)| c != 0) {
        for _ in members.len()..target {
            let pick = members[rng.gen_range(0..members.len())];
            out.push(pool[pick].clone());
        }
    }
    Ok(out)
}

/// Per-class holdout: `ceil(val_frac * count)` patches of each class go to
/// validation. Singleton classes stay in training. Both outputs keep pool
/// order.
pub fn split_train_val(
    pool: &[LabeledPatch],
    val_frac: f64,
    rng: &mut Rng,
) -> Result<(Vec<LabeledPatch>, Vec<LabeledPatch>)> {
    if !(val_frac > 0.0 && val_frac < 1.0) {
        return Err(Error::Config(format!("val_frac must lie in (0, 1), got {val_frac}")));
    }
    let mut to_val = vec![false; pool.len()];
    for (class, mut members) in group_by_class(pool) {
        if members.len() == 1 {
            log::warn!("class {class} has a single patch; keeping it in the training pool");
            continue;
        }
        let n_val = (val_frac * members.len() as f64).ceil() as usize;
        members.shuffle(rng);
        for &i in &members[..n_val] {
            to_val[i] = true;
        }
    }
    let (val, train): (Vec<_>, Vec<_>) = pool
        .iter()
        .zip(&to_val)
        .partition(|(_, &v)| v);
    Ok((
        train.into_iter().map(|(p, _)| p.clone()).collect(),
        val.into_iter().map(|(p, _)| p.clone()).collect(),
    ))
}

/// Indexes a pool by class for repeated episode draws.
#[derive(Debug, Clone)]
pub struct EpisodeSampler<'a> {
    pool: &'a [LabeledPatch],
    groups: BTreeMap<u32, Vec<usize>>,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(pool: &'a [LabeledPatch]) -> Self {
        Self {
            pool,
            groups: group_by_class(pool),
        }
    }

    /// Classes holding at least `min_count` patches, ascending.
    pub fn eligible_classes(&self, min_count: usize) -> Vec<u32> {
        self.groups
            .iter()
            .filter(|(_, v)| v.len() >= min_count)
            .map(|(&c, _)| c)
            .collect()
    }

    fn deficit_message(&self, spec: &EpisodeSpec, eligible: usize) -> String {
        let short: Vec<String> = self
            .groups
            .iter()
            .filter(|(_, v)| v.len() < spec.per_class())
            .map(|(c, v)| format!("class {c} has {}", v.len()))
            .collect();
        let mut msg = format!(
            "{}-way episode needs {} classes with at least {} patches each, only {eligible} qualify",
            spec.n_way,
            spec.n_way,
            spec.per_class()
        );
        if !short.is_empty() {
            msg.push_str(&format!(" ({})", short.join(", ")));
        }
        msg
    }

    pub fn sample(&self, spec: &EpisodeSpec, rng: &mut Rng) -> Result<Episode> {
        spec.validate()?;
        let eligible = self.eligible_classes(spec.per_class());
        if eligible.len() < spec.n_way {
            return Err(Error::Episode(self.deficit_message(spec, eligible.len())));
        }
        let chosen: Vec<u32> = sample(rng, eligible.len(), spec.n_way)
            .into_iter()
            .map(|i| eligible[i])
            .collect();

        let mut support = Vec::with_capacity(spec.n_way * spec.k_shot);
        let mut query = Vec::with_capacity(spec.n_way * spec.n_query);
        for (label, class) in chosen.iter().enumerate() {
            let members = &self.groups[class];
            let picks = sample(rng, members.len(), spec.per_class());
            for (j, i) in picks.into_iter().enumerate() {
                let item = EpisodeItem {
                    features: self.pool[members[i]].features.clone(),
                    label,
                };
                if j < spec.k_shot {
                    support.push(item);
                } else {
                    query.push(item);
                }
            }
        }
        Ok(Episode {
            support,
            query,
            class_map: chosen,
        })
    }
}

/// Draws one episode: `n_way` classes without replacement, then
/// `k_shot + n_query` distinct patches per class, the first `k_shot` as support.
pub fn sample_episode(pool: &[LabeledPatch], spec: &EpisodeSpec, rng: &mut Rng) -> Result<Episode> {
    EpisodeSampler::new(pool).sample(spec, rng)
}
