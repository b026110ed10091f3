//! Parameter update shared by every agent.
//!
//! Order per update: EWC bookkeeping and penalty, frozen-layer masking,
//! Adam on the plastic parameters (and on the injected fresh layer), CBP
//! resets, then one Euler step of the consolidation chain whose first
//! variable is the freshly updated parameter vector.

use rand_chacha::ChaCha8Rng;

use crate::consolidation::{init_chain, ChainConfig, ChainState};
use crate::error::Result;
use crate::nn::Mlp;
use crate::optim::AdamState;
use crate::rng::{stream, Stream};

use super::cbp::{cbp_update_and_reset, CbpState};
use super::ewc::{ewc_penalty_grad, EwcState};
use super::injection::PInjectState;
use super::Mechanisms;

#[derive(Clone, Debug)]
pub(crate) struct Learner {
    pub adam: AdamState,
    pub lr: f64,
    pub ewc: Option<EwcState>,
    pub chain: Option<(ChainConfig, ChainState)>,
    pub cbp: Option<CbpState>,
    /// Offset of the CBP-tracked network inside the flat parameter vector.
    pub cbp_offset: usize,
    pub mech_rng: ChaCha8Rng,
    pub updates: u64,
}

impl Learner {
    pub fn new(theta: &[f64], lr: f64, mech: &Mechanisms, cbp_net: Option<(&Mlp, usize)>, seed: u64) -> Result<Self> {
        let chain = match mech.active_chain() {
            Some(cfg) => Some((cfg.clone(), init_chain(cfg, theta)?)),
            None => None,
        };
        let (cbp, cbp_offset) = match (&mech.cbp, cbp_net) {
            (Some(cfg), Some((net, offset))) => (Some(CbpState::for_mlp(cfg.clone(), net)), offset),
            _ => (None, 0),
        };
        Ok(Self {
            adam: AdamState::new(theta.len()),
            lr,
            ewc: mech.ewc.clone().map(|cfg| EwcState::new(cfg, theta)),
            chain,
            cbp,
            cbp_offset,
            mech_rng: stream(seed, Stream::Mechanism),
            updates: 0,
        })
    }

    /// Applies one update to `theta` given the task gradient `grads`.
    /// `plast` is the injection state of the network stored at the given
    /// offset. Returns the number of CBP unit resets.
    pub fn apply(
        &mut self,
        theta: &mut [f64],
        grads: &mut [f64],
        plast: Option<(&mut PInjectState, usize)>,
        fresh_grads: &[f64],
    ) -> Result<usize> {
        if let Some(ewc) = &mut self.ewc {
            ewc.accumulate(grads);
            if ewc.cfg.lambda != 0.0 {
                let pen = ewc_penalty_grad(ewc, theta)?;
                grads.iter_mut().zip(&pen).for_each(|(g, p)| *g += p);
            }
        }
        let plast = plast.filter(|(p, _)| p.injected);
        if let Some((p, off)) = &plast {
            p.mask_grads(&mut grads[*off..]);
        }
        self.adam.step(theta, grads, self.lr)?;
        if let Some((p, off)) = plast {
            p.step_fresh(fresh_grads, self.lr)?;
            p.restore_frozen(&mut theta[off..]);
        }

        let mut resets = 0;
        if let Some(cbp) = &mut self.cbp {
            let off = self.cbp_offset;
            let done = cbp_update_and_reset(cbp, &mut theta[off..], &mut self.mech_rng);
            for r in &done {
                self.adam.reset_coords(cbp.reset_indices(*r).into_iter().map(|i| i + off));
            }
            resets = done.len();
        }

        if let Some((cfg, chain)) = &mut self.chain {
            chain.plastic_mut().copy_from_slice(theta);
            chain.euler_step_in_place(cfg);
            theta.copy_from_slice(chain.plastic());
        }

        if let Some(ewc) = &mut self.ewc {
            ewc.maybe_refresh(theta);
        }
        self.updates += 1;
        Ok(resets)
    }
}
