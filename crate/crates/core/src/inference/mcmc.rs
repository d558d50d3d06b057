//! Shared machinery for the random-walk samplers: per-coordinate adaptive
//! proposals, chain orchestration, the ESS gate and thinning.

use super::diagnostics::chain_diagnostics;
use super::{FaultMode, McmcConfig, ParamDiagnostics, PosteriorMatrix};
use crate::error::{Error, Result};
use crate::models::ParamId;
use crate::rngdist::SeedStream;

/// Proposal scales and acceptance counters, one per updated coordinate.
#[derive(Debug, Clone)]
pub(crate) struct Adapter {
    log_step: Vec<f64>,
    warmup_proposals: Vec<u64>,
    proposed: Vec<u64>,
    accepted: Vec<u64>,
}

impl Adapter {
    pub(crate) fn new(steps: &[f64]) -> Self {
        let n = steps.len();
        Adapter {
            log_step: steps.iter().map(|s| s.max(1e-12).ln()).collect(),
            warmup_proposals: vec![0; n],
            proposed: vec![0; n],
            accepted: vec![0; n],
        }
    }

    pub(crate) fn acceptance(&self, coord: usize) -> Option<f64> {
        (self.proposed[coord] > 0).then(|| self.accepted[coord] as f64 / self.proposed[coord] as f64)
    }
}

/// Per-sweep context handed to a model.
pub(crate) struct Sweep<'a> {
    pub adapter: &'a mut Adapter,
    pub warmup: bool,
    pub target: f64,
    pub fault: FaultMode,
    pub stream: &'a mut SeedStream,
}

impl Sweep<'_> {
    /// Random-walk proposal for `coord` around `current`.
    pub(crate) fn propose(&mut self, coord: usize, current: f64) -> f64 {
        let sd = self.adapter.log_step[coord].exp();
        let z = self.stream.std_normal();
        if !self.warmup && self.fault == FaultMode::AsymmetricProposal {
            current + 0.5 * sd * (z + 0.5)
        } else {
            current + sd * z
        }
    }

    /// Metropolis accept/reject; also adapts the step during warmup.
    pub(crate) fn accept(&mut self, coord: usize, log_ratio: f64) -> bool {
        let u = self.stream.open01();
        let ok = u.ln() < log_ratio;
        if self.warmup {
            let t = self.adapter.warmup_proposals[coord] as f64;
            self.adapter.warmup_proposals[coord] += 1;
            let gain = (t + 1.0).powf(-0.6);
            let a = if ok { 1.0 } else { 0.0 };
            self.adapter.log_step[coord] = (self.adapter.log_step[coord] + gain * (a - self.target)).clamp(-30.0, 10.0);
        } else {
            self.adapter.proposed[coord] += 1;
            if ok {
                self.adapter.accepted[coord] += 1;
            }
        }
        ok
    }
}

pub(crate) trait ChainModel {
    type State: Clone;

    fn schema(&self) -> Vec<ParamId>;
    /// Initial proposal sd for each adaptable coordinate.
    fn initial_steps(&self) -> Vec<f64>;
    fn init(&self, stream: &mut SeedStream) -> Result<Self::State>;
    fn sweep(&self, state: &mut Self::State, sweep: &mut Sweep<'_>) -> Result<()>;
    /// Current values on the natural scale, in schema order.
    fn output(&self, state: &Self::State) -> Vec<f64>;
    /// Post-warmup acceptance rate per schema entry.
    fn acceptance(&self, adapter: &Adapter) -> Vec<Option<f64>>;
}

struct Chain<S> {
    state: S,
    adapter: Adapter,
    stream: SeedStream,
    draws: Vec<Vec<f64>>,
}

/// Runs `cfg.chains` chains, doubling the post-warmup length until every
/// non-degenerate parameter reaches `ess_floor_fraction · target_S`
/// effective draws, then thins the pooled draws to exactly `target_S`.
pub(crate) fn run_chains<M: ChainModel>(model: &M, cfg: &McmcConfig, stream: &SeedStream) -> Result<PosteriorMatrix> {
    cfg.validate()?;
    let schema = model.schema();
    let mut chains = Vec::with_capacity(cfg.chains);
    for c in 0..cfg.chains {
        let mut cs = stream.derive(c as u64 + 1);
        let mut state = model.init(&mut cs)?;
        let mut adapter = Adapter::new(&model.initial_steps());
        for _ in 0..cfg.warmup {
            let mut sw = Sweep {
                adapter: &mut adapter,
                warmup: true,
                target: cfg.rw_target_acceptance,
                fault: cfg.fault,
                stream: &mut cs,
            };
            model.sweep(&mut state, &mut sw)?;
        }
        chains.push(Chain { state, adapter, stream: cs, draws: Vec::new() });
    }

    let floor = cfg.ess_floor_fraction * cfg.target_s as f64;
    let mut extra = cfg.post_warmup;
    for round in 1..=cfg.max_attempts {
        for ch in &mut chains {
            for _ in 0..extra {
                let mut sw = Sweep {
                    adapter: &mut ch.adapter,
                    warmup: false,
                    target: cfg.rw_target_acceptance,
                    fault: cfg.fault,
                    stream: &mut ch.stream,
                };
                model.sweep(&mut ch.state, &mut sw)?;
                ch.draws.push(model.output(&ch.state));
            }
        }
        let diag = summarize(model, &schema, &chains)?;
        let weakest = diag
            .iter()
            .filter_map(|d| d.ess.map(|e| (e, d.param.as_str())))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match weakest {
            Some((e, _)) if e < floor => {}
            _ => return thin(schema, &chains, diag, cfg.target_s),
        }
        if round == cfg.max_attempts {
            let (e, p) = weakest.expect("checked above");
            return Err(Error::Quality {
                rounds: round,
                message: format!("ESS of {p} is {e:.1}, below the floor {floor:.1}"),
                diagnostics: diag,
            });
        }
        extra = chains[0].draws.len();
    }
    unreachable!("the final round either returns draws or an error")
}

fn summarize<M: ChainModel>(model: &M, schema: &[ParamId], chains: &[Chain<M::State>]) -> Result<Vec<ParamDiagnostics>> {
    let n_chains = chains.len() as f64;
    let mut acc = vec![None; schema.len()];
    for ch in chains {
        for (slot, a) in acc.iter_mut().zip(model.acceptance(&ch.adapter)) {
            if let Some(a) = a {
                *slot = Some(slot.unwrap_or(0.0) + a / n_chains);
            }
        }
    }
    schema
        .iter()
        .enumerate()
        .map(|(j, id)| {
            let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.draws.iter().map(|r| r[j]).collect()).collect();
            let s = chain_diagnostics(&cols)?;
            Ok(ParamDiagnostics { param: id.to_string(), ess: s.ess, split_rhat: s.split_rhat, acceptance_rate: acc[j] })
        })
        .collect()
}

/// Evenly spaced rows of the chain-concatenated draws.
fn thin<S>(schema: Vec<ParamId>, chains: &[Chain<S>], diag: Vec<ParamDiagnostics>, s: usize) -> Result<PosteriorMatrix> {
    let n = chains[0].draws.len();
    let total = n * chains.len();
    let (mut draws, mut chain, mut iteration) = (Vec::with_capacity(s), Vec::with_capacity(s), Vec::with_capacity(s));
    for t in 0..s {
        let j = ((t as f64 + 0.5) * total as f64 / s as f64) as usize;
        let (c, i) = (j / n, j % n);
        draws.push(chains[c].draws[i].clone());
        chain.push(c);
        iteration.push(i);
    }
    let mut pm = PosteriorMatrix::new(schema, draws, chain, iteration)?;
    pm.diagnostics = diag;
    pm.thinning = (total / s).max(1);
    Ok(pm)
}

/// `log p(v)` for a scale parameter updated on the log scale, including the
/// Jacobian `log v`.
pub(crate) fn log_scale_prior(prior: &crate::models::PriorDist, v: f64) -> f64 {
    prior.log_density(v) + v.ln()
}
