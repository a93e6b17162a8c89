//! Hierarchical navigable small-world graph.
//!
//! Node levels are drawn from a ChaCha8 stream seeded with
//! [`HnswParams::seed`] (`level = floor(-ln(1 - u) / ln(m))`, `u` uniform in
//! `[0, 1)`), so a build over the same records in the same order always
//! yields the same graph. Neighbors are chosen with the diversity heuristic
//! and topped up with the pruned candidates when the heuristic leaves slots
//! free; upper layers keep at most `m` links per node, layer 0 keeps `2 * m`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{IndexError, Metric, SearchHit, VectorStore};

pub(crate) const MAX_LEVEL: u8 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 64,
            seed: 0x5eed,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.m < 2 {
            return Err(IndexError::InvalidParam("hnsw m must be at least 2".into()));
        }
        if self.ef_construction == 0 || self.ef_search == 0 {
            return Err(IndexError::InvalidParam("hnsw ef values must be positive".into()));
        }
        Ok(())
    }

    fn max_links(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.m
        } else {
            self.m
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Scored {
    dist: f32,
    idx: u32,
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.idx.cmp(&other.idx))
    }
}

/// Epoch-stamped visited set, reset in O(1).
struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.fill(0);
            self.epoch = 1;
        }
    }

    /// Returns true the first time `idx` is seen in this epoch.
    fn insert(&mut self, idx: u32) -> bool {
        let slot = &mut self.marks[idx as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex {
    pub(crate) store: VectorStore,
    pub(crate) metric: Metric,
    pub(crate) params: HnswParams,
    pub(crate) levels: Vec<u8>,
    /// `links[node][level]` holds neighbor positions.
    pub(crate) links: Vec<Vec<Vec<u32>>>,
    pub(crate) entry: Option<u32>,
}

impl HnswIndex {
    pub(crate) fn build(store: VectorStore, metric: Metric, params: HnswParams) -> Self {
        let n = store.len();
        let mut index = Self {
            store,
            metric,
            params,
            levels: Vec::with_capacity(n),
            links: Vec::with_capacity(n),
            entry: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let scale = 1.0 / (params.m as f64).ln();
        let mut visited = Visited::new(n);
        for idx in 0..n {
            let u: f64 = rng.random();
            let level = ((-(1.0 - u).ln()) * scale).floor().min(f64::from(MAX_LEVEL)) as u8;
            index.insert(idx as u32, level, &mut visited);
        }
        index
    }

    /// Reassembles a graph read from disk. The entry point is the first
    /// node on the top level, which is where insertion leaves it.
    pub(crate) fn from_parts(
        store: VectorStore,
        metric: Metric,
        params: HnswParams,
        levels: Vec<u8>,
        links: Vec<Vec<Vec<u32>>>,
    ) -> Self {
        let entry = levels
            .iter()
            .enumerate()
            .fold(None::<(u32, u8)>, |best, (i, &l)| match best {
                Some((_, bl)) if bl >= l => best,
                _ => Some((i as u32, l)),
            })
            .map(|(i, _)| i);
        Self {
            store,
            metric,
            params,
            levels,
            links,
            entry,
        }
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn set_ef_search(&mut self, ef_search: usize) {
        self.params.ef_search = ef_search.max(1);
    }

    /// Level of the node at insertion position `idx`.
    pub fn node_level(&self, idx: usize) -> u8 {
        self.levels[idx]
    }

    #[inline]
    fn dist_to(&self, query: &[f32], idx: u32) -> f32 {
        self.metric.distance(query, self.store.vector(idx as usize))
    }

    fn top_level(&self) -> u8 {
        self.entry.map_or(0, |e| self.levels[e as usize])
    }

    fn insert(&mut self, idx: u32, level: u8, visited: &mut Visited) {
        self.levels.push(level);
        self.links.push(vec![Vec::new(); level as usize + 1]);
        let Some(entry) = self.entry else {
            self.entry = Some(idx);
            return;
        };

        let query = self.store.vector(idx as usize).to_vec();
        let top = self.top_level();
        let mut eps = vec![Scored {
            dist: self.dist_to(&query, entry),
            idx: entry,
        }];
        for l in ((level as usize + 1)..=(top as usize)).rev() {
            eps = self.search_layer(&query, &eps, 1, l, visited);
        }
        for l in (0..=(level.min(top) as usize)).rev() {
            let found = self.search_layer(&query, &eps, self.params.ef_construction, l, visited);
            let chosen = self.select_neighbors(&found, self.params.m);
            self.links[idx as usize][l] = chosen.iter().map(|s| s.idx).collect();
            for nb in &chosen {
                self.link_back(nb.idx, idx, l);
            }
            eps = found;
        }
        if level > top {
            self.entry = Some(idx);
        }
    }

    fn link_back(&mut self, from: u32, to: u32, level: usize) {
        let cap = self.params.max_links(level);
        let list = &mut self.links[from as usize][level];
        list.push(to);
        if list.len() <= cap {
            return;
        }
        let base = self.store.vector(from as usize);
        let mut cands: Vec<Scored> = self.links[from as usize][level]
            .iter()
            .map(|&j| Scored {
                dist: self.metric.distance(base, self.store.vector(j as usize)),
                idx: j,
            })
            .collect();
        cands.sort();
        let kept = self.select_neighbors(&cands, cap);
        self.links[from as usize][level] = kept.iter().map(|s| s.idx).collect();
    }

    /// Diversity heuristic: walk candidates nearest first and keep one only
    /// if it is closer to the base point than to every neighbor kept so far,
    /// then fill remaining slots with the rejected ones, nearest first.
    /// `cands` must be sorted ascending.
    fn select_neighbors(&self, cands: &[Scored], m: usize) -> Vec<Scored> {
        if cands.len() <= m {
            return cands.to_vec();
        }
        let mut kept: Vec<Scored> = Vec::with_capacity(m);
        let mut pruned: Vec<Scored> = Vec::new();
        for c in cands {
            if kept.len() >= m {
                break;
            }
            let cv = self.store.vector(c.idx as usize);
            let diverse = kept.iter().all(|r| {
                self.metric.distance(cv, self.store.vector(r.idx as usize)) >= c.dist
            });
            if diverse {
                kept.push(*c);
            } else {
                pruned.push(*c);
            }
        }
        for c in pruned {
            if kept.len() >= m {
                break;
            }
            kept.push(c);
        }
        kept
    }

    /// Beam search on one layer; returns up to `ef` nodes sorted ascending.
    fn search_layer(
        &self,
        query: &[f32],
        entry_points: &[Scored],
        ef: usize,
        level: usize,
        visited: &mut Visited,
    ) -> Vec<Scored> {
        visited.reset();
        let mut candidates: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        let mut best: BinaryHeap<Scored> = BinaryHeap::new();
        for &ep in entry_points {
            if visited.insert(ep.idx) {
                candidates.push(Reverse(ep));
                best.push(ep);
                if best.len() > ef {
                    best.pop();
                }
            }
        }
        while let Some(Reverse(cur)) = candidates.pop() {
            let worst = best.peek().map_or(f32::INFINITY, |s| s.dist);
            if cur.dist > worst && best.len() >= ef {
                break;
            }
            let Some(neighbors) = self.links[cur.idx as usize].get(level) else {
                continue;
            };
            for &nb in neighbors {
                if !visited.insert(nb) {
                    continue;
                }
                let d = self.dist_to(query, nb);
                let worst = best.peek().map_or(f32::INFINITY, |s| s.dist);
                if best.len() < ef || d < worst {
                    let s = Scored { dist: d, idx: nb };
                    candidates.push(Reverse(s));
                    best.push(s);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    pub(crate) fn search(&self, query: &[f32], k: usize, ef_search: usize) -> Vec<SearchHit> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        let mut visited = Visited::new(self.store.len());
        let mut eps = vec![Scored {
            dist: self.dist_to(query, entry),
            idx: entry,
        }];
        for l in (1..=(self.top_level() as usize)).rev() {
            eps = self.search_layer(query, &eps, 1, l, &mut visited);
        }
        let found = self.search_layer(query, &eps, ef_search.max(k), 0, &mut visited);
        let mut hits: Vec<SearchHit> = found
            .into_iter()
            .map(|s| SearchHit {
                record_id: self.store.ids[s.idx as usize],
                distance: s.dist,
            })
            .collect();
        hits.sort_by(SearchHit::cmp_rank);
        hits.truncate(k);
        hits
    }
}
