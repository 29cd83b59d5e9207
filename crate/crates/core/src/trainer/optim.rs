use crate::autodiff::Array;
use crate::error::{Error, Result};

/// Polynomial decay `lr_base · (1 − iteration/total)^power`.
pub fn poly_lr(iteration: usize, total: usize, lr_base: f64, power: f64) -> Result<f64> {
    if total == 0 || iteration > total {
        return Err(Error::Contract(format!("poly_lr needs 0 <= iteration <= total > 0, got {iteration}/{total}")));
    }
    Ok(lr_base * (1.0 - iteration as f64 / total as f64).powf(power))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    /// Updates applied to this block; drives bias correction.
    t: u64,
}

/// Optimizer state with an independent step counter per parameter block,
/// so blocks that sit out a step (inactive sub-ensemble heads) keep
/// correctly bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    blocks: Vec<Moments>,
    names: Vec<String>,
}

impl AdamWState {
    pub fn new(params: &[Array], names: Vec<String>) -> Self {
        assert_eq!(params.len(), names.len(), "one name per parameter block");
        let blocks = params
            .iter()
            .map(|p| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
                t: 0,
            })
            .collect();
        AdamWState { blocks, names }
    }

    pub fn steps(&self, block: usize) -> u64 {
        self.blocks[block].t
    }
}

/// One decoupled-decay Adam update. Blocks whose gradient is `None` are left
/// untouched: no decay and no moment update. Every gradient is checked for
/// finiteness before any parameter changes.
pub fn adamw_step(params: &mut [Array], grads: &[Option<Array>], state: &mut AdamWState, hp: &AdamWHyper) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.blocks.len() {
        return Err(Error::Contract(format!(
            "adamw_step got {} params, {} grads, {} state blocks",
            params.len(),
            grads.len(),
            state.blocks.len()
        )));
    }
    for (b, (p, g)) in params.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(Error::shape(format!("gradient of {}", state.names[b]), g.shape(), p.shape()));
            }
            if !g.all_finite() {
                return Err(Error::Numerical(format!("non-finite gradient in parameter block {}", state.names[b])));
            }
        }
    }
    for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut state.blocks) {
        let Some(g) = g else { continue };
        s.t += 1;
        let c1 = 1.0 - hp.beta1.powi(s.t as i32);
        let c2 = 1.0 - hp.beta2.powi(s.t as i32);
        for (((th, &gi), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut s.m).zip(&mut s.v) {
            *m = hp.beta1 * *m + (1.0 - hp.beta1) * gi;
            *v = hp.beta2 * *v + (1.0 - hp.beta2) * gi * gi;
            let (mh, vh) = (*m / c1, *v / c2);
            *th -= hp.lr * (mh / (vh.sqrt() + hp.eps) + hp.weight_decay * *th);
        }
    }
    Ok(())
}
