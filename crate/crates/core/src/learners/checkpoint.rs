//! Binary checkpoint: a versioned header followed by named sections.
//!
//! ```text
//! magic "BMFCKPT\0" | version u32 | algo str | obs_dim u32 | n_actions u32
//! section count u32, then per section: name str | kind u8 | payload
//!   kind 0 net:   hidden act u8 | output act u8 | n sizes u32 | sizes u32.. | n u64 | f64..
//!   kind 1 f64s:  n u64 | f64..
//!   kind 2 u64s:  n u64 | u64..
//! ```
//! Strings are a u32 byte length followed by UTF-8. Everything is
//! little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::learner::Learner;
use super::replay::{GroupSnapshot, ReplayBuffer, TransitionRecord};
use super::{Algo, LearnerConfig};
use crate::error::{BmfError, Result};
use crate::grouping::{ForwardModel, GroupAttention};
use crate::meanfield::{ActionRepr, MeanAction, MeanFieldActions};
use crate::nn::{Activation, Adam, NetDef, NetParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BMFCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Net(NetParams),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub algo: String,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub sections: Vec<(String, Section)>,
}

fn bad(msg: impl Into<String>) -> BmfError {
    BmfError::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(bad("truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("invalid utf-8 in checkpoint"))
    }
    fn count(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(bad("section length exceeds file size"));
        }
        Ok(n)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new(algo: &str, obs_dim: usize, n_actions: usize) -> Self {
        Checkpoint {
            algo: algo.to_string(),
            obs_dim,
            n_actions,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, section: Section) {
        self.sections.push((name.to_string(), section));
    }

    pub fn get(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn net(&self, name: &str) -> Result<&NetParams> {
        match self.get(name) {
            Some(Section::Net(n)) => Ok(n),
            _ => Err(bad(format!("missing network section '{name}'"))),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match self.get(name) {
            Some(Section::F64(v)) => Ok(v),
            _ => Err(bad(format!("missing f64 section '{name}'"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.get(name) {
            Some(Section::U64(v)) => Ok(v),
            _ => Err(bad(format!("missing u64 section '{name}'"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.algo);
        out.extend_from_slice(&(self.obs_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_actions as u32).to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, sec) in &self.sections {
            put_str(&mut out, name);
            match sec {
                Section::Net(p) => {
                    out.push(0);
                    out.push(p.def.hidden.code());
                    out.push(p.def.output.code());
                    out.extend_from_slice(&(p.def.layer_sizes.len() as u32).to_le_bytes());
                    for s in &p.def.layer_sizes {
                        out.extend_from_slice(&(*s as u32).to_le_bytes());
                    }
                    out.extend_from_slice(&(p.values.len() as u64).to_le_bytes());
                    p.values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
                }
                Section::F64(v) => {
                    out.push(1);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                }
                Section::U64(v) => {
                    out.push(2);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let algo = r.str()?;
        let obs_dim = r.u32()? as usize;
        let n_actions = r.u32()? as usize;
        let n = r.u32()?;
        let mut sections = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = r.str()?;
            let sec = match r.u8()? {
                0 => {
                    let hidden = Activation::from_code(r.u8()?).ok_or_else(|| bad("bad activation code"))?;
                    let output = Activation::from_code(r.u8()?).ok_or_else(|| bad("bad activation code"))?;
                    let ns = r.u32()? as usize;
                    let sizes = (0..ns).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
                    let def = NetDef::new(sizes, hidden, output)?;
                    let len = r.count(8)?;
                    let values = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                    Section::Net(NetParams::from_values(&def, values)?)
                }
                1 => {
                    let len = r.count(8)?;
                    Section::F64((0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?)
                }
                2 => {
                    let len = r.count(8)?;
                    Section::U64((0..len).map(|_| r.u64()).collect::<Result<Vec<_>>>()?)
                }
                k => return Err(bad(format!("unknown section kind {k}"))),
            };
            sections.push((name, sec));
        }
        if r.pos != buf.len() {
            return Err(bad("trailing bytes after checkpoint"));
        }
        Ok(Checkpoint {
            algo,
            obs_dim,
            n_actions,
            sections,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn push_adam(ck: &mut Checkpoint, name: &str, a: &Adam) {
    let mut v = a.m.clone();
    v.extend_from_slice(&a.v);
    ck.push(&format!("{name}.moments"), Section::F64(v));
    ck.push(&format!("{name}.t"), Section::U64(vec![a.t]));
}

fn load_adam(ck: &Checkpoint, name: &str, a: &mut Adam) -> Result<()> {
    let v = ck.f64s(&format!("{name}.moments"))?;
    if v.len() != 2 * a.m.len() {
        return Err(BmfError::dims("optimizer moments", 2 * a.m.len(), v.len()));
    }
    let n = a.m.len();
    a.m.copy_from_slice(&v[..n]);
    a.v.copy_from_slice(&v[n..]);
    a.t = ck.u64s(&format!("{name}.t"))?[0];
    Ok(())
}

const FM_NETS: [&str; 3] = ["fm.encoder", "fm.decoder", "fm.predictor"];

impl Learner {
    /// Parameters, target network and optimizer state.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.algo().name(), self.obs_dim, self.n_actions);
        ck.push("critic", Section::Net(self.critic.clone()));
        ck.push("target_critic", Section::Net(self.target_critic.clone()));
        push_adam(&mut ck, "critic_opt", &self.critic_opt);
        if let (Some(a), Some(o)) = (&self.actor, &self.actor_opt) {
            ck.push("actor", Section::Net(a.clone()));
            push_adam(&mut ck, "actor_opt", o);
        }
        if let (Some(att), Some(o)) = (&self.attention, &self.attention_opt) {
            ck.push("attention", Section::F64(att.flat()));
            push_adam(&mut ck, "attention_opt", o);
        }
        if let (Some(fm), Some(opts)) = (&self.forward_model, &self.fm_opts) {
            for ((name, net), o) in FM_NETS.iter().zip(fm.nets()).zip(opts) {
                ck.push(name, Section::Net(net.clone()));
                push_adam(&mut ck, &format!("{name}_opt"), o);
            }
            ck.push(
                "fm.hyper",
                Section::F64(vec![fm.lambda_p, fm.lambda_e, fm.beta, fm.latent_dim as f64, if fm.variational { 1.0 } else { 0.0 }]),
            );
        }
        ck.push("updates", Section::U64(vec![self.updates]));
        ck
    }

    /// Rebuilds a learner; `config.algo` must match the checkpoint.
    pub fn from_checkpoint(config: LearnerConfig, ck: &Checkpoint) -> Result<Self> {
        let algo: Algo = ck.algo.parse()?;
        if algo != config.algo {
            return Err(BmfError::Incompatible(format!("checkpoint holds {algo}, config asks for {}", config.algo)));
        }
        let mut l = Learner::new(config, ck.obs_dim, ck.n_actions, 0)?;
        let critic = ck.net("critic")?;
        if critic.def != l.critic.def {
            l.critic_opt = Adam::new(l.critic_opt.config, critic.values.len());
        }
        l.critic = critic.clone();
        l.target_critic = ck.net("target_critic")?.clone();
        load_adam(ck, "critic_opt", &mut l.critic_opt)?;
        if algo.has_actor() {
            let a = ck.net("actor")?.clone();
            let mut o = Adam::new(l.actor_opt.as_ref().unwrap().config, a.values.len());
            load_adam(ck, "actor_opt", &mut o)?;
            l.actor = Some(a);
            l.actor_opt = Some(o);
        }
        let attention = match ck.f64s("attention") {
            Ok(v) => {
                let dim = ((v.len() / 2) as f64).sqrt().round() as usize;
                if 2 * dim * dim != v.len() {
                    return Err(bad("attention section has a non-square size"));
                }
                let mut a = GroupAttention::identity(dim);
                a.set_flat(v);
                Some(a)
            }
            Err(_) => None,
        };
        let fm = match ck.f64s("fm.hyper") {
            Ok(h) => {
                let [encoder, decoder, predictor] = FM_NETS.map(|n| ck.net(n).cloned());
                Some(ForwardModel {
                    encoder: encoder?,
                    decoder: decoder?,
                    predictor: predictor?,
                    lambda_p: h[0],
                    lambda_e: h[1],
                    beta: h[2],
                    latent_dim: h[3] as usize,
                    variational: h[4] != 0.0,
                })
            }
            Err(_) => None,
        };
        let mut l = l.with_grouping(attention, fm);
        if let Some(o) = l.attention_opt.as_mut() {
            load_adam(ck, "attention_opt", o)?;
        }
        if let Some(opts) = l.fm_opts.as_mut() {
            for (name, o) in FM_NETS.iter().zip(opts.iter_mut()) {
                load_adam(ck, &format!("{name}_opt"), o)?;
            }
        }
        l.updates = ck.u64s("updates")?[0];
        Ok(l)
    }
}

/// Flat f64 encoding of replay records for resume checkpoints.
#[derive(Default)]
struct Enc(Vec<f64>);

impl Enc {
    fn n(&mut self, v: usize) {
        self.0.push(v as f64);
    }
    fn vec(&mut self, v: &[f64]) {
        self.n(v.len());
        self.0.extend_from_slice(v);
    }
    fn mean(&mut self, m: &MeanAction) {
        self.vec(&m.value);
        self.0.push(if m.degenerate { 1.0 } else { 0.0 });
    }
    fn means(&mut self, m: &MeanFieldActions) {
        let (kind, d) = match m.repr {
            ActionRepr::OneHot(d) => (0, d),
            ActionRepr::Raw(d) => (1, d),
        };
        self.n(kind);
        self.n(d);
        for list in [&m.intra, &m.inter, &m.group_means] {
            self.n(list.len());
            list.iter().for_each(|x| self.mean(x));
        }
    }
}

struct Dec<'a>(&'a [f64], usize);

impl Dec<'_> {
    fn f(&mut self) -> Result<f64> {
        let v = *self.0.get(self.1).ok_or_else(|| bad("truncated replay section"))?;
        self.1 += 1;
        Ok(v)
    }
    fn n(&mut self) -> Result<usize> {
        let v = self.f()?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(bad("corrupt replay section"));
        }
        Ok(v as usize)
    }
    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.n()?;
        (0..n).map(|_| self.f()).collect()
    }
    fn mean(&mut self) -> Result<MeanAction> {
        Ok(MeanAction {
            value: self.vec()?,
            degenerate: self.f()? != 0.0,
        })
    }
    fn means(&mut self) -> Result<MeanFieldActions> {
        let kind = self.n()?;
        let d = self.n()?;
        let repr = if kind == 0 { ActionRepr::OneHot(d) } else { ActionRepr::Raw(d) };
        let mut lists = Vec::new();
        for _ in 0..3 {
            let n = self.n()?;
            lists.push((0..n).map(|_| self.mean()).collect::<Result<Vec<_>>>()?);
        }
        let group_means = lists.pop().unwrap();
        let inter = lists.pop().unwrap();
        let intra = lists.pop().unwrap();
        Ok(MeanFieldActions {
            repr,
            intra,
            inter,
            group_means,
        })
    }
}

/// Serializes the replay buffer into checkpoint sections under `prefix`.
pub fn push_replay(ck: &mut Checkpoint, prefix: &str, buf: &ReplayBuffer) {
    let mut e = Enc::default();
    for r in buf.records() {
        e.n(r.actions.len());
        r.obs.iter().for_each(|o| e.vec(o));
        r.actions.iter().for_each(|a| e.0.push(a.map_or(-1.0, |a| a as f64)));
        e.0.extend_from_slice(&r.rewards);
        r.next_obs.iter().for_each(|o| e.vec(o));
        e.0.push(if r.done { 1.0 } else { 0.0 });
        r.next_alive.iter().for_each(|&a| e.0.push(if a { 1.0 } else { 0.0 }));
        e.means(&r.means);
        e.means(&r.next_means);
        match &r.groups {
            None => e.n(0),
            Some(g) => {
                e.n(1);
                g.assignment.iter().for_each(|a| e.0.push(a.map_or(-1.0, |a| a as f64)));
                e.n(g.group_team.len());
                g.group_team.iter().for_each(|&t| e.n(t));
                g.centroids.iter().for_each(|c| e.vec(c));
            }
        }
    }
    ck.push(&format!("{prefix}.records"), Section::F64(e.0));
    ck.push(
        &format!("{prefix}.meta"),
        Section::U64(vec![buf.capacity() as u64, buf.len() as u64, buf.cursor() as u64]),
    );
}

pub fn load_replay(ck: &Checkpoint, prefix: &str) -> Result<ReplayBuffer> {
    let meta = ck.u64s(&format!("{prefix}.meta"))?;
    let (capacity, len, cursor) = (meta[0] as usize, meta[1] as usize, meta[2] as usize);
    let mut d = Dec(ck.f64s(&format!("{prefix}.records"))?, 0);
    let opt_idx = |v: f64| if v < 0.0 { None } else { Some(v as usize) };
    let mut records = Vec::with_capacity(len);
    for _ in 0..len {
        let n = d.n()?;
        let obs = (0..n).map(|_| d.vec()).collect::<Result<Vec<_>>>()?;
        let actions = (0..n).map(|_| d.f().map(opt_idx)).collect::<Result<Vec<_>>>()?;
        let rewards = (0..n).map(|_| d.f()).collect::<Result<Vec<_>>>()?;
        let next_obs = (0..n).map(|_| d.vec()).collect::<Result<Vec<_>>>()?;
        let done = d.f()? != 0.0;
        let next_alive = (0..n).map(|_| d.f().map(|v| v != 0.0)).collect::<Result<Vec<_>>>()?;
        let means = d.means()?;
        let next_means = d.means()?;
        let groups = if d.n()? == 1 {
            let assignment = (0..n).map(|_| d.f().map(opt_idx)).collect::<Result<Vec<_>>>()?;
            let k = d.n()?;
            let group_team = (0..k).map(|_| d.n()).collect::<Result<Vec<_>>>()?;
            let centroids = (0..k).map(|_| d.vec()).collect::<Result<Vec<_>>>()?;
            Some(GroupSnapshot {
                assignment,
                centroids,
                group_team,
            })
        } else {
            None
        };
        records.push(TransitionRecord {
            obs,
            actions,
            rewards,
            next_obs,
            done,
            next_alive,
            means,
            next_means,
            groups,
        });
    }
    ReplayBuffer::from_parts(capacity, records, cursor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::ForwardModel;
    use crate::rng::{stream, Stream};

    fn config(algo: Algo) -> LearnerConfig {
        LearnerConfig {
            algo,
            hidden: vec![6],
            ..Default::default()
        }
    }

    #[test]
    fn learner_roundtrip_all_algos() {
        for algo in Algo::ALL {
            let mut l = Learner::new(config(algo), 3, 4, 11).unwrap();
            if algo.is_bilevel() {
                let fm = ForwardModel::new(3, 4, 2, 5, &mut stream(1, Stream::Init)).unwrap();
                l = l.with_grouping(Some(GroupAttention::init(2, &mut stream(1, Stream::Attention))), Some(fm));
            }
            l.updates = 17;
            l.critic_opt.t = 5;
            l.critic_opt.m[0] = 0.25;
            let ck = l.to_checkpoint();
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            assert_eq!(back, ck);
            let restored = Learner::from_checkpoint(config(algo), &back).unwrap();
            assert_eq!(restored, l);
        }
    }

    #[test]
    fn header_layout() {
        let l = Learner::new(config(Algo::Mfq), 3, 4, 1).unwrap();
        let bytes = l.to_checkpoint().to_bytes();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), CHECKPOINT_VERSION);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(&bytes[16..19], b"mfq");
    }

    #[test]
    fn rejects_corruption() {
        let l = Learner::new(config(Algo::Mfq), 3, 4, 1).unwrap();
        let bytes = l.to_checkpoint().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(Checkpoint::from_bytes(&b).is_err());
        let mut b = bytes.clone();
        b[8] = 9;
        assert!(Checkpoint::from_bytes(&b).is_err());
        let mut b = bytes;
        b.push(0);
        assert!(Checkpoint::from_bytes(&b).is_err());
        let ck = l.to_checkpoint();
        assert!(matches!(Learner::from_checkpoint(config(Algo::Iql), &ck), Err(BmfError::Incompatible(_))));
    }

    #[test]
    fn replay_roundtrip() {
        let repr = ActionRepr::OneHot(2);
        let mut buf = ReplayBuffer::new(3);
        for i in 0..4 {
            let mut means = MeanFieldActions::zeros(repr, 2, 2);
            means.intra[0] = MeanAction {
                value: vec![0.25, 0.75],
                degenerate: false,
            };
            buf.push(TransitionRecord {
                obs: vec![vec![i as f64, 0.5], vec![1.0, -2.0]],
                actions: vec![Some(1), None],
                rewards: vec![0.1 * i as f64, 0.0],
                next_obs: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
                done: i == 3,
                next_alive: vec![true, false],
                means: means.clone(),
                next_means: means,
                groups: (i % 2 == 0).then(|| GroupSnapshot {
                    assignment: vec![Some(1), None],
                    centroids: vec![vec![0.0, 1.0], vec![2.0, 3.0]],
                    group_team: vec![0, 0],
                }),
            })
            .unwrap();
        }
        let mut ck = Checkpoint::new("mfq", 2, 2);
        push_replay(&mut ck, "replay", &buf);
        let back = load_replay(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), "replay").unwrap();
        assert_eq!(back.records(), buf.records());
        assert_eq!(back.cursor(), buf.cursor());
        assert_eq!(back.agent_samples(), buf.agent_samples());
    }
}
