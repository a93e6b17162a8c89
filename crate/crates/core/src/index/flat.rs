use super::{Metric, SearchHit, VectorStore};

/// Exact search by full scan.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    pub(crate) store: VectorStore,
    pub(crate) metric: Metric,
}

impl FlatIndex {
    pub(crate) fn new(store: VectorStore, metric: Metric) -> Self {
        Self { store, metric }
    }

    pub(crate) fn search(&self, query: &[f32], k: usize) -> Vec<SearchHit> {
        let mut hits: Vec<SearchHit> = self
            .store
            .ids
            .iter()
            .enumerate()
            .map(|(i, &record_id)| SearchHit {
                record_id,
                distance: self.metric.distance(query, self.store.vector(i)),
            })
            .collect();
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, SearchHit::cmp_rank);
            hits.truncate(k);
        }
        hits.sort_by(SearchHit::cmp_rank);
        hits
    }
}
