use ndarray::{Array2, Axis};

use super::SubModule;

/// One cached residual branch.
#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    /// Gated branch output `gate ⊙ f(·)`, added to the residual on replay.
    pub branch: Array2<f64>,
    /// Ungated `f(·)`, used when replays are re-gated.
    pub raw: Array2<f64>,
    /// Step at which each row was last computed.
    pub last_refresh: Vec<usize>,
}

/// Per-layer, per-sub-module residual caches. Layers are 1-based.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BlockCache {
    entries: Vec<[Option<CacheEntry>; 3]>,
    value_norms: Vec<Option<Vec<f64>>>,
}

impl BlockCache {
    pub fn new(layers: usize) -> Self {
        Self {
            entries: vec![[None, None, None]; layers],
            value_norms: vec![None; layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, layer: usize, sub: SubModule) -> Option<&CacheEntry> {
        self.entries[layer - 1][sub.index()].as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().flatten().all(Option::is_none)
    }

    pub(crate) fn store(
        &mut self,
        layer: usize,
        sub: SubModule,
        branch: Array2<f64>,
        raw: Array2<f64>,
        step: usize,
    ) {
        let rows = branch.nrows();
        self.entries[layer - 1][sub.index()] = Some(CacheEntry {
            branch,
            raw,
            last_refresh: vec![step; rows],
        });
    }

    /// Overwrites `rows` of an existing entry. Returns `false` when the entry
    /// is absent.
    pub(crate) fn scatter(
        &mut self,
        layer: usize,
        sub: SubModule,
        rows: &[usize],
        branch: &Array2<f64>,
        raw: &Array2<f64>,
        step: usize,
    ) -> bool {
        let Some(entry) = self.entries[layer - 1][sub.index()].as_mut() else {
            return false;
        };
        for (k, &row) in rows.iter().enumerate() {
            entry
                .branch
                .index_axis_mut(Axis(0), row)
                .assign(&branch.index_axis(Axis(0), k));
            entry
                .raw
                .index_axis_mut(Axis(0), row)
                .assign(&raw.index_axis(Axis(0), k));
            entry.last_refresh[row] = step;
        }
        true
    }

    /// Self-attention value norms from the last time the layer's attention ran.
    pub fn value_norms(&self, layer: usize) -> Option<&[f64]> {
        self.value_norms[layer - 1].as_deref()
    }

    pub(crate) fn set_value_norms(&mut self, layer: usize, norms: Vec<f64>) {
        self.value_norms[layer - 1] = Some(norms);
    }
}
