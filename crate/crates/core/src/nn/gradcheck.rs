use super::params::{Gradients, ParameterStore};

/// One evaluation of a scalar objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub loss: f64,
    /// Fingerprint of every discrete branch taken (ReLU gates, max-pool
    /// winners). Perturbations that change it straddle a kink.
    pub kinks: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Below this reference magnitude errors are measured in absolute terms.
    /// Central differences carry roundoff of order `ε·|L|/h`, so a
    /// structurally zero gradient (a bias feeding batch norm) can only be
    /// judged against a floor.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            abs_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.blocks.iter().map(|b| b.checked).sum()
    }

    pub fn excluded(&self) -> usize {
        self.blocks.iter().map(|b| b.excluded).sum()
    }

    pub fn block(&self, name: &str) -> Option<&BlockReport> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Compares `analytic` against central differences of `forward` for every
/// trainable entry of `store`.
///
/// The per-entry error is `|a − n| / max(|n|, abs_floor)` with `n` the
/// numerical derivative. Entries whose ± perturbation changes the kink
/// fingerprint are skipped and counted as excluded.
pub fn finite_difference_check<F>(
    store: &ParameterStore,
    analytic: &Gradients,
    forward: F,
    config: GradCheckConfig,
) -> GradCheckReport
where
    F: Fn(&ParameterStore) -> Probe,
{
    let base = forward(store);
    let mut work = store.clone();
    let h = config.step;
    let mut blocks = Vec::new();
    for id in store.ids() {
        let Some(grad) = analytic.get(id) else { continue };
        let mut block = BlockReport {
            name: store.param(id).name.clone(),
            max_rel_error: 0.0,
            checked: 0,
            excluded: 0,
        };
        for (k, &analytic) in grad.iter().enumerate() {
            let orig = store.values(id)[k];
            work.values_mut(id)[k] = orig + h;
            let plus = forward(&work);
            work.values_mut(id)[k] = orig - h;
            let minus = forward(&work);
            work.values_mut(id)[k] = orig;
            if plus.kinks != base.kinks || minus.kinks != base.kinks {
                block.excluded += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * h);
            let err = (analytic - numeric).abs() / numeric.abs().max(config.abs_floor);
            block.max_rel_error = block.max_rel_error.max(err);
            block.checked += 1;
        }
        blocks.push(block);
    }
    GradCheckReport { blocks }
}
