use std::cmp::Ordering;


use super::policy::{actor_surrogate, boltzmann_value};
use super::replay::TransitionRecord;
use super::{Algo, LearnerConfig};
use crate::error::{BmfError, Result};
use crate::grouping::{AttentionGrads, FmSample, ForwardModel, GroupAttention};
use crate::meanfield::{inter_mean_action, MeanAction, MeanFieldActions};
use crate::nn::{argmax, softmax, Activation, Adam, AdamConfig, GradTape, NetDef, NetParams};
use crate::par::{map_chunks, Execution};
use crate::rng::{substream, Stream};

/// Samples per parallel work item. Fixed so that the summation order, and
/// hence every bit of the result, does not depend on the thread count.
const CHUNK: usize = 32;

/// What the inter-group mean of one sample is rebuilt from, so that the
/// attention projections receive gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct InterCtx<'a> {
    pub group: usize,
    pub embeddings: &'a [Vec<f64>],
    pub group_means: &'a [MeanAction],
    pub usable: Vec<bool>,
}

/// One agent's view of one stored transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<'a> {
    pub obs: &'a [f64],
    pub action: usize,
    pub reward: f64,
    /// Episode ended or the agent died: no bootstrap.
    pub terminal: bool,
    pub intra: &'a MeanAction,
    pub inter: &'a MeanAction,
    pub next_obs: &'a [f64],
    pub next_intra: &'a MeanAction,
    pub next_inter: &'a MeanAction,
    pub ctx: Option<InterCtx<'a>>,
}

impl<'a> Sample<'a> {
    pub fn from_record(rec: &'a TransitionRecord, agent: usize, with_ctx: bool) -> Result<Self> {
        let action = rec.actions.get(agent).copied().flatten().ok_or(BmfError::MissingAction(agent))?;
        let ctx = match (&rec.groups, with_ctx) {
            (Some(g), true) if rec.means.group_means.len() == g.group_team.len() => g.assignment[agent].map(|m| InterCtx {
                group: m,
                embeddings: &g.centroids,
                group_means: &rec.means.group_means,
                usable: (0..g.group_team.len())
                    .map(|n| n != m && g.group_team[n] == g.group_team[m] && !rec.means.group_means[n].degenerate)
                    .collect(),
            }),
            _ => None,
        };
        Ok(Sample {
            obs: &rec.obs[agent],
            action,
            reward: rec.rewards[agent],
            terminal: rec.done || !rec.next_alive[agent],
            intra: &rec.means.intra[agent],
            inter: &rec.means.inter[agent],
            next_obs: &rec.next_obs[agent],
            next_intra: &rec.next_means.intra[agent],
            next_inter: &rec.next_means.inter[agent],
            ctx,
        })
    }

    /// Total order used to make updates independent of sample order.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        fn lex(a: &[f64], b: &[f64]) -> Ordering {
            for (x, y) in a.iter().zip(b) {
                match x.total_cmp(y) {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            a.len().cmp(&b.len())
        }
        lex(self.obs, other.obs)
            .then(self.action.cmp(&other.action))
            .then(self.reward.total_cmp(&other.reward))
            .then(self.terminal.cmp(&other.terminal))
            .then_with(|| lex(&self.intra.value, &other.intra.value))
            .then_with(|| lex(&self.inter.value, &other.inter.value))
            .then_with(|| lex(self.next_obs, other.next_obs))
            .then_with(|| lex(&self.next_intra.value, &other.next_intra.value))
            .then_with(|| lex(&self.next_inter.value, &other.next_inter.value))
            .then(self.intra.degenerate.cmp(&other.intra.degenerate))
            .then(self.inter.degenerate.cmp(&other.inter.degenerate))
            .then(self.ctx.as_ref().map(|c| c.group).cmp(&other.ctx.as_ref().map(|c| c.group)))
    }
}

/// `[obs, intra, inter, intra_flag, inter_flag]`, or just `obs` when
/// `mean_field` is false.
pub(crate) fn critic_input(obs: &[f64], intra: &MeanAction, inter: &MeanAction, mean_field: bool) -> Vec<f64> {
    let mut x = obs.to_vec();
    if mean_field {
        x.extend_from_slice(&intra.value);
        x.extend_from_slice(&inter.value);
        x.push(intra.flag());
        x.push(inter.flag());
    }
    x
}

fn rebuilt_inter(ctx: &InterCtx<'_>, att: &GroupAttention, dim: usize) -> MeanAction {
    let row = att.row(ctx.group, ctx.embeddings, &ctx.usable);
    inter_mean_action(ctx.group, &row, ctx.group_means, |n| ctx.usable[n], dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLoss {
    pub loss: f64,
    pub critic: GradTape,
    pub attention: Option<AttentionGrads>,
}

/// Mean squared TD error `(Q(s, a, ã_j, ã_m) - y)^2` over the batch, with
/// gradients for the critic and, when samples carry an [`InterCtx`], for
/// the attention projections.
pub fn q_loss(
    critic: &NetParams,
    attention: Option<&GroupAttention>,
    samples: &[Sample<'_>],
    targets: &[f64],
    mean_field: bool,
    exec: Execution,
) -> Result<QLoss> {
    if samples.is_empty() || samples.len() != targets.len() {
        return Err(BmfError::dims("loss targets", samples.len(), targets.len()));
    }
    let inv = 1.0 / samples.len() as f64;
    let idx: Vec<usize> = (0..samples.len()).collect();
    let parts = map_chunks(exec, &idx, CHUNK, |chunk| -> Result<QLoss> {
        let mut tape = GradTape::zeros(critic.values.len());
        let mut att_g = attention.map(|a| AttentionGrads::zeros(a.dim));
        let mut loss = 0.0;
        for &i in chunk {
            let s = &samples[i];
            let dim = s.intra.value.len();
            let rebuilt = match (&s.ctx, attention) {
                (Some(ctx), Some(att)) if mean_field => Some(rebuilt_inter(ctx, att, dim)),
                _ => None,
            };
            let inter = rebuilt.as_ref().unwrap_or(s.inter);
            let x = critic_input(s.obs, s.intra, inter, mean_field);
            let trace = critic.forward_trace(&x)?;
            let q = *trace.output().get(s.action).ok_or(BmfError::ActionOutOfRange {
                agent: i,
                action: s.action,
                n_actions: critic.output_size(),
            })?;
            let err = q - targets[i];
            if !err.is_finite() {
                return Err(BmfError::NonFinite { what: "critic loss", index: i });
            }
            loss += err * err * inv;
            let mut og = vec![0.0; critic.output_size()];
            og[s.action] = 2.0 * err * inv;
            let gin = critic.backward_trace(&trace, &og, &mut tape)?;
            if let (Some(ctx), Some(att), Some(g), Some(_)) = (&s.ctx, attention, att_g.as_mut(), &rebuilt) {
                let off = s.obs.len() + dim;
                let d_inter = &gin[off..off + dim];
                let dw: Vec<f64> = ctx
                    .group_means
                    .iter()
                    .enumerate()
                    .map(|(n, gm)| if ctx.usable[n] { d_inter.iter().zip(&gm.value).map(|(a, b)| a * b).sum() } else { 0.0 })
                    .collect();
                att.backward_row(ctx.group, ctx.embeddings, &ctx.usable, &dw, g);
            }
        }
        Ok(QLoss { loss, critic: tape, attention: att_g })
    });
    let mut total = QLoss {
        loss: 0.0,
        critic: GradTape::zeros(critic.values.len()),
        attention: attention.map(|a| AttentionGrads::zeros(a.dim)),
    };
    for p in parts {
        let p = p?;
        total.loss += p.loss;
        total.critic.add_assign(&p.critic);
        if let (Some(t), Some(g)) = (total.attention.as_mut(), p.attention.as_ref()) {
            t.add_assign(g);
        }
    }
    Ok(total)
}

/// Losses reported by one gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_objective: f64,
    pub forward_model_loss: f64,
}

/// Shared-parameter learner for every algorithm family.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub config: LearnerConfig,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub critic: NetParams,
    pub target_critic: NetParams,
    pub critic_opt: Adam,
    pub actor: Option<NetParams>,
    pub actor_opt: Option<Adam>,
    pub attention: Option<GroupAttention>,
    pub attention_opt: Option<Adam>,
    pub forward_model: Option<ForwardModel>,
    pub fm_opts: Option<Vec<Adam>>,
    pub updates: u64,
}

impl Learner {
    pub fn new(config: LearnerConfig, obs_dim: usize, n_actions: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let algo = config.algo;
        let input = obs_dim + if algo.uses_mean_field() { 2 * n_actions + 2 } else { 0 };
        let cdef = NetDef::mlp(input, &config.hidden, n_actions, Activation::Relu, Activation::Identity)?;
        let critic = NetParams::init(&cdef, &mut substream(seed, Stream::Init, 0));
        let adam = |lr: f64, len: usize| {
            Adam::new(
                AdamConfig {
                    lr,
                    clip_norm: config.grad_clip,
                    ..AdamConfig::default()
                },
                len,
            )
        };
        let critic_opt = adam(config.lr_critic, critic.values.len());
        let (actor, actor_opt) = if algo.has_actor() {
            let adef = NetDef::mlp(obs_dim, &config.hidden, n_actions, Activation::Relu, Activation::Identity)?;
            let a = NetParams::init(&adef, &mut substream(seed, Stream::Init, 1));
            let o = adam(config.lr_actor, a.values.len());
            (Some(a), Some(o))
        } else {
            (None, None)
        };
        Ok(Learner {
            target_critic: critic.clone(),
            critic,
            critic_opt,
            actor,
            actor_opt,
            attention: None,
            attention_opt: None,
            forward_model: None,
            fm_opts: None,
            updates: 0,
            obs_dim,
            n_actions,
            config,
        })
    }

    /// Attaches the grouping components used by the bi-level algorithms.
    pub fn with_grouping(mut self, attention: Option<GroupAttention>, forward_model: Option<ForwardModel>) -> Self {
        let adam = |lr: f64, len: usize| {
            Adam::new(
                AdamConfig {
                    lr,
                    clip_norm: self.config.grad_clip,
                    ..AdamConfig::default()
                },
                len,
            )
        };
        self.attention_opt = attention.as_ref().map(|a| adam(self.config.lr_attention, 2 * a.dim * a.dim));
        self.fm_opts = forward_model
            .as_ref()
            .map(|fm| fm.nets().iter().map(|n| adam(self.config.lr_forward_model, n.values.len())).collect());
        self.attention = attention;
        self.forward_model = forward_model;
        self
    }

    pub fn algo(&self) -> Algo {
        self.config.algo
    }

    pub fn q_values(&self, obs: &[f64], intra: &MeanAction, inter: &MeanAction) -> Result<Vec<f64>> {
        self.critic.forward(&critic_input(obs, intra, inter, self.algo().uses_mean_field()))
    }

    pub fn policy(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let actor = self.actor.as_ref().ok_or_else(|| BmfError::config("algorithm has no actor"))?;
        Ok(softmax(&actor.forward(obs)?, 1.0))
    }

    /// Joint action for the alive agents. `epsilon = None` acts greedily;
    /// otherwise Q learners explore epsilon-greedily and actor learners
    /// sample from their policy.
    pub fn act<R: rand::Rng + ?Sized>(
        &self,
        obs: &[Vec<f64>],
        means: &MeanFieldActions,
        alive: &[bool],
        epsilon: Option<f64>,
        rng: &mut R,
    ) -> Result<Vec<Option<usize>>> {
        let mut out = vec![None; obs.len()];
        for j in (0..obs.len()).filter(|&j| alive[j]) {
            let a = if self.algo().is_q() {
                match epsilon {
                    Some(eps) if rng.random::<f64>() < eps => rng.random_range(0..self.n_actions),
                    _ => argmax(&self.q_values(&obs[j], &means.intra[j], &means.inter[j])?),
                }
            } else {
                let p = self.policy(&obs[j])?;
                match epsilon {
                    Some(_) => {
                        let mut u = rng.random::<f64>();
                        let mut pick = self.n_actions - 1;
                        for (i, pi) in p.iter().enumerate() {
                            if u < *pi {
                                pick = i;
                                break;
                            }
                            u -= pi;
                        }
                        pick
                    }
                    None => argmax(&p),
                }
            };
            out[j] = Some(a);
        }
        Ok(out)
    }

    /// Bootstrapped value of the sample's next state from the target critic.
    pub fn next_value(&self, s: &Sample<'_>) -> Result<f64> {
        if s.terminal {
            return Ok(0.0);
        }
        let x = critic_input(s.next_obs, s.next_intra, s.next_inter, self.algo().uses_mean_field());
        let q = self.target_critic.forward(&x)?;
        if self.algo().is_q() {
            Ok(boltzmann_value(&q, self.config.temperature))
        } else {
            Ok(self.policy(s.next_obs)?.iter().zip(&q).map(|(p, v)| p * v).sum())
        }
    }

    pub fn targets(&self, samples: &[Sample<'_>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let vals: Result<Vec<f64>> = map_chunks(self.config.execution, samples, CHUNK, |c| {
            c.iter().map(|s| self.next_value(s)).collect::<Result<Vec<f64>>>()
        })
        .into_iter()
        .collect::<Result<Vec<Vec<f64>>>>()
        .map(|v| v.concat());
        let vals = vals?;
        let c = self.config.reward_scale;
        let y = samples.iter().zip(&vals).map(|(s, v)| c * s.reward + self.config.gamma * v).collect();
        Ok((y, vals))
    }

    /// Mean policy objective on the batch with the critic held fixed, and
    /// the gradient of its negation for the actor parameters.
    pub fn actor_objective(&self, samples: &[Sample<'_>]) -> Result<(f64, GradTape)> {
        let actor = self.actor.as_ref().ok_or_else(|| BmfError::config("algorithm has no actor"))?;
        let inv = 1.0 / samples.len() as f64;
        let mf = self.algo().uses_mean_field();
        let parts = map_chunks(self.config.execution, samples, CHUNK, |chunk| -> Result<(f64, GradTape)> {
            let mut tape = GradTape::zeros(actor.values.len());
            let mut total = 0.0;
            for s in chunk {
                let dim = s.intra.value.len();
                let rebuilt = match (&s.ctx, &self.attention) {
                    (Some(ctx), Some(att)) if mf => Some(rebuilt_inter(ctx, att, dim)),
                    _ => None,
                };
                let q = self.critic.forward(&critic_input(s.obs, s.intra, rebuilt.as_ref().unwrap_or(s.inter), mf))?;
                let trace = actor.forward_trace(s.obs)?;
                let (j, g) = actor_surrogate(trace.output(), &q, self.config.entropy_coef);
                total += j * inv;
                let og: Vec<f64> = g.iter().map(|v| -v * inv).collect();
                actor.backward_trace(&trace, &og, &mut tape)?;
            }
            Ok((total, tape))
        });
        let mut tape = GradTape::zeros(actor.values.len());
        let mut total = 0.0;
        for p in parts {
            let (j, t) = p?;
            total += j;
            tape.add_assign(&t);
        }
        Ok((total, tape))
    }

    /// One gradient step on every trained component. Samples are sorted
    /// into canonical order first.
    pub fn update<R: rand::Rng + ?Sized>(&mut self, samples: &mut [Sample<'_>], rng: &mut R) -> Result<UpdateStats> {
        if samples.is_empty() {
            return Err(BmfError::config("empty update batch"));
        }
        samples.sort_by(|a, b| a.canonical_cmp(b));
        let (y, next_v) = self.targets(samples)?;
        let mf = self.algo().uses_mean_field();
        let use_att = self.algo().is_bilevel();
        let ql = q_loss(
            &self.critic,
            if use_att { self.attention.as_ref() } else { None },
            samples,
            &y,
            mf,
            self.config.execution,
        )?;
        self.critic_opt.step(&mut self.critic, &ql.critic)?;
        if let (Some(att), Some(opt), Some(g)) = (self.attention.as_mut(), self.attention_opt.as_mut(), ql.attention.as_ref()) {
            if g.wq.iter().chain(&g.wk).any(|v| *v != 0.0) {
                let mut flat = att.flat();
                let mut grad = g.wq.clone();
                grad.extend_from_slice(&g.wk);
                opt.step_slice(&mut flat, &grad)?;
                att.set_flat(&flat);
            }
        }
        let mut stats = UpdateStats {
            critic_loss: ql.loss,
            ..Default::default()
        };
        if self.actor.is_some() {
            let (j, tape) = self.actor_objective(samples)?;
            if let (Some(actor), Some(opt)) = (self.actor.as_mut(), self.actor_opt.as_mut()) {
                opt.step(actor, &tape)?;
            }
            stats.actor_objective = j;
        }
        if let (Some(fm), Some(opts)) = (self.forward_model.as_mut(), self.fm_opts.as_mut()) {
            let batch: Vec<FmSample> = samples
                .iter()
                .zip(&next_v)
                .map(|(s, v)| {
                    let mut a = vec![0.0; self.n_actions];
                    a[s.action] = 1.0;
                    FmSample {
                        obs: s.obs.to_vec(),
                        action: a,
                        reward: self.config.reward_scale * s.reward,
                        next_value: *v,
                    }
                })
                .collect();
            let out = fm.loss_sampled(&batch, self.config.gamma, rng)?;
            let n = batch.len() as f64;
            let tapes = [out.grads.encoder, out.grads.decoder, out.grads.predictor];
            for ((net, opt), mut tape) in fm.nets_mut().into_iter().zip(opts.iter_mut()).zip(tapes) {
                tape.scale(1.0 / n);
                opt.step(net, &tape)?;
            }
            stats.forward_model_loss = out.loss / n;
        }
        self.updates += 1;
        self.sync_target();
        Ok(stats)
    }

    /// Hard copy at the sync interval, or Polyak mixing every update.
    pub fn sync_target(&mut self) {
        let tau = self.config.polyak;
        if tau > 0.0 {
            polyak(&mut self.target_critic, &self.critic, tau);
        } else if self.updates.is_multiple_of(self.config.sync_every) {
            self.target_critic.values.copy_from_slice(&self.critic.values);
        }
    }
}

/// `target <- (1 - tau) * target + tau * online`.
pub fn polyak(target: &mut NetParams, online: &NetParams, tau: f64) {
    if tau == 1.0 {
        target.values.copy_from_slice(&online.values);
        return;
    }
    for (t, o) in target.values.iter_mut().zip(&online.values) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use crate::meanfield::ActionRepr;
    use crate::rng::stream;

    struct Owned {
        obs: Vec<Vec<f64>>,
        next_obs: Vec<Vec<f64>>,
        intra: Vec<MeanAction>,
        inter: Vec<MeanAction>,
        emb: Vec<Vec<f64>>,
        gm: Vec<MeanAction>,
        actions: Vec<usize>,
        rewards: Vec<f64>,
    }

    fn toy(n: usize, seed: u64) -> Owned {
        let mut rng = stream(seed, Stream::Theory);
        let mut v = |d: usize| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let mean = |x: Vec<f64>| {
            let s: f64 = x.iter().map(|a| a.abs()).sum();
            MeanAction {
                value: x.iter().map(|a| a.abs() / s).collect(),
                degenerate: false,
            }
        };
        Owned {
            obs: (0..n).map(|_| v(4)).collect(),
            next_obs: (0..n).map(|_| v(4)).collect(),
            intra: (0..n).map(|_| mean(v(3))).collect(),
            inter: (0..n).map(|_| mean(v(3))).collect(),
            emb: (0..3).map(|_| v(2)).collect(),
            gm: (0..3).map(|_| mean(v(3))).collect(),
            actions: (0..n).map(|i| i % 3).collect(),
            rewards: v(n),
        }
    }

    fn samples(o: &Owned, ctx: bool) -> Vec<Sample<'_>> {
        (0..o.obs.len())
            .map(|i| Sample {
                obs: &o.obs[i],
                action: o.actions[i],
                reward: o.rewards[i],
                terminal: i == 0,
                intra: &o.intra[i],
                inter: &o.inter[i],
                next_obs: &o.next_obs[i],
                next_intra: &o.intra[i],
                next_inter: &o.inter[i],
                ctx: ctx.then(|| InterCtx {
                    group: i % 3,
                    embeddings: &o.emb,
                    group_means: &o.gm,
                    usable: (0..3).map(|n| n != i % 3).collect(),
                }),
            })
            .collect()
    }

    fn config(algo: Algo) -> LearnerConfig {
        LearnerConfig {
            algo,
            hidden: vec![8],
            ..Default::default()
        }
    }

    #[test]
    fn critic_input_layout() {
        let l = Learner::new(config(Algo::BmfQ), 4, 3, 1).unwrap();
        assert_eq!(l.critic.input_size(), 4 + 3 + 3 + 2);
        let l = Learner::new(config(Algo::Iql), 4, 3, 1).unwrap();
        assert_eq!(l.critic.input_size(), 4);
    }

    #[test]
    fn zero_critic_gives_zero_q() {
        let mut l = Learner::new(config(Algo::Mfq), 4, 3, 1).unwrap();
        l.critic.values.iter_mut().for_each(|v| *v = 0.0);
        let z = MeanAction::zero(3);
        assert_eq!(l.q_values(&[1.0, 2.0, 3.0, 4.0], &z, &z).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn loss_zero_when_on_target() {
        let o = toy(3, 1);
        let s = samples(&o, false);
        let l = Learner::new(config(Algo::Mfq), 4, 3, 2).unwrap();
        let y: Vec<f64> = s.iter().map(|s| l.q_values(s.obs, s.intra, s.inter).unwrap()[s.action]).collect();
        let out = q_loss(&l.critic, None, &s, &y, true, Execution::Sequential).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.critic.values.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_transition_unit_loss() {
        let o = toy(1, 2);
        let s = samples(&o, false);
        let mut l = Learner::new(config(Algo::Mfq), 4, 3, 2).unwrap();
        l.critic.values.iter_mut().for_each(|v| *v = 0.0);
        let n = l.critic.values.len();
        l.critic.values[n - 3 + s[0].action] = 1.0;
        let out = q_loss(&l.critic, None, &s, &[0.0], true, Execution::Sequential).unwrap();
        assert_eq!(out.loss, 1.0);
    }

    #[test]
    fn q_loss_gradient_matches_finite_differences() {
        let o = toy(3, 3);
        let s = samples(&o, true);
        let l = Learner::new(config(Algo::BmfQ), 4, 3, 3).unwrap();
        let att = GroupAttention::init(2, &mut stream(3, Stream::Attention));
        let y = [0.3, -0.7, 1.1];
        let f = |c: &NetParams, a: &GroupAttention| q_loss(c, Some(a), &s, &y, true, Execution::Sequential).unwrap().loss;
        let out = q_loss(&l.critic, Some(&att), &s, &y, true, Execution::Sequential).unwrap();
        let h = 1e-6;
        for i in 0..l.critic.values.len() {
            let mut up = l.critic.clone();
            up.values[i] += h;
            let mut dn = l.critic.clone();
            dn.values[i] -= h;
            let fd = (f(&up, &att) - f(&dn, &att)) / (2.0 * h);
            assert!((fd - out.critic.values[i]).abs() <= 1e-4 * fd.abs().max(1.0), "critic {i}");
        }
        let g = out.attention.unwrap();
        let analytic: Vec<f64> = g.wq.iter().chain(&g.wk).copied().collect();
        let base = att.flat();
        for i in 0..base.len() {
            let mut v = base.clone();
            v[i] += h;
            let mut up = att.clone();
            up.set_flat(&v);
            v[i] -= 2.0 * h;
            let mut dn = att.clone();
            dn.set_flat(&v);
            let fd = (f(&l.critic, &up) - f(&l.critic, &dn)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() <= 1e-4 * fd.abs().max(1.0), "attention {i}");
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let o = toy(4, 4);
        let s = samples(&o, false);
        let l = Learner::new(config(Algo::Mfac), 4, 3, 4).unwrap();
        let (_, tape) = l.actor_objective(&s).unwrap();
        let h = 1e-6;
        for i in 0..tape.len() {
            let mut up = l.clone();
            up.actor.as_mut().unwrap().values[i] += h;
            let mut dn = l.clone();
            dn.actor.as_mut().unwrap().values[i] -= h;
            let fd = (up.actor_objective(&s).unwrap().0 - dn.actor_objective(&s).unwrap().0) / (2.0 * h);
            // tape holds the gradient of the negated objective
            assert!((fd + tape.values[i]).abs() <= 1e-4 * fd.abs().max(1.0), "{i}");
        }
    }

    #[test]
    fn zero_q_zero_actor_gradient() {
        let o = toy(3, 5);
        let s = samples(&o, false);
        let mut l = Learner::new(config(Algo::Ac), 4, 3, 5).unwrap();
        l.critic.values.iter_mut().for_each(|v| *v = 0.0);
        let (_, tape) = l.actor_objective(&s).unwrap();
        assert!(tape.values.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn acting_rules() {
        let mut l = Learner::new(config(Algo::Iql), 1, 3, 6).unwrap();
        l.critic.values.iter_mut().for_each(|v| *v = 0.0);
        let n = l.critic.values.len();
        l.critic.values[n - 3..].copy_from_slice(&[0.1, 0.9, 0.3]);
        let means = MeanFieldActions::zeros(ActionRepr::OneHot(3), 1, 0);
        let mut rng = stream(6, Stream::Act);
        assert_eq!(l.act(&[vec![0.0]], &means, &[true], Some(0.0), &mut rng).unwrap(), vec![Some(1)]);
        assert_eq!(l.act(&[vec![0.0]], &means, &[false], None, &mut rng).unwrap(), vec![None]);
        let mut counts = [0; 3];
        for _ in 0..3000 {
            counts[l.act(&[vec![0.0]], &means, &[true], Some(1.0), &mut rng).unwrap()[0].unwrap()] += 1;
        }
        assert!(counts.iter().all(|&c| c > 900), "{counts:?}");
        let obs = vec![vec![0.0]; 4];
        let m4 = MeanFieldActions::zeros(ActionRepr::OneHot(3), 4, 0);
        let a = l.act(&obs, &m4, &[true; 4], Some(0.5), &mut stream(1, Stream::Act)).unwrap();
        let b = l.act(&obs, &m4, &[true; 4], Some(0.5), &mut stream(1, Stream::Act)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn target_sync_modes() {
        let mut l = Learner::new(config(Algo::Mfq), 2, 2, 7).unwrap();
        l.critic.values.iter_mut().for_each(|v| *v += 1.0);
        let before = l.target_critic.clone();
        l.config.polyak = 0.0;
        l.updates = 1;
        l.sync_target();
        assert_eq!(l.target_critic, before);
        l.updates = l.config.sync_every;
        l.sync_target();
        assert_eq!(l.target_critic.values, l.critic.values);
        let mut t = before.clone();
        polyak(&mut t, &l.critic, 0.0);
        assert_eq!(t, before);
        polyak(&mut t, &l.critic, 1.0);
        assert_eq!(t.values, l.critic.values);
    }

    #[test]
    fn permutation_leaves_update_bit_identical() {
        let o = toy(40, 8);
        for algo in [Algo::BmfQ, Algo::Mfac] {
            let base = Learner::new(config(algo), 4, 3, 8)
                .unwrap()
                .with_grouping(Some(GroupAttention::init(2, &mut stream(8, Stream::Attention))), None);
            let mut a = base.clone();
            let mut s1 = samples(&o, algo.is_bilevel());
            a.update(&mut s1, &mut stream(0, Stream::Grouping)).unwrap();
            let mut b = base.clone();
            let mut s2 = samples(&o, algo.is_bilevel());
            s2.reverse();
            s2.swap(3, 17);
            b.update(&mut s2, &mut stream(0, Stream::Grouping)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let o = toy(100, 9);
        let mut seq = Learner::new(config(Algo::Mfq), 4, 3, 9).unwrap();
        seq.config.execution = Execution::Sequential;
        let mut par = seq.clone();
        par.config.execution = Execution::best();
        let mut r = stream(0, Stream::Grouping);
        seq.update(&mut samples(&o, false), &mut r).unwrap();
        par.update(&mut samples(&o, false), &mut r).unwrap();
        assert_eq!(seq.critic, par.critic);
    }
}
