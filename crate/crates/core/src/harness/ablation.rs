//! Matched-config comparison suites.
//!
//! - `delay`: one-step delayed means against two-pass fresh means
//! - `k_sweep`: groups per team in {1, 2, 4, 8}, plus the plain MF baseline
//! - `grouping`: random fixed groups, deterministic AE, VAE

use std::path::{Path, PathBuf};

use crate::error::{BmfError, Result};
use crate::grouping::GroupingMode;
use crate::learners::Algo;

use super::config::RunConfig;
use super::metrics::mean_std;
use super::train::{final_return, train, TrainReport};

pub const ABLATION_PRESETS: [&str; 3] = ["delay", "k_sweep", "grouping"];

/// The named variants of a suite, derived from `base`.
pub fn ablation_variants(name: &str, base: &RunConfig) -> Result<Vec<(String, RunConfig)>> {
    let bilevel = if base.learner.algo.is_bilevel() { base.learner.algo } else { Algo::BmfQ };
    let plain = if bilevel.is_q() { Algo::Mfq } else { Algo::Mfac };
    let variant = |label: &str, f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        c.learner.algo = bilevel;
        f(&mut c);
        c.name = format!("{}/{label}", base.name);
        (label.to_string(), c)
    };
    Ok(match name {
        "delay" => vec![
            variant("delay", &|c| c.group.delay = true),
            variant("no_delay", &|c| c.group.delay = false),
        ],
        "k_sweep" => {
            let mut v: Vec<(String, RunConfig)> =
                [1, 2, 4, 8].iter().map(|&k| variant(&format!("k{k}"), &|c| c.group.k = k)).collect();
            v.push(variant(plain.name(), &|c| c.learner.algo = plain));
            v
        }
        "grouping" => vec![
            variant("rc", &|c| c.group.mode = GroupingMode::Random),
            variant("ae", &|c| c.group.mode = GroupingMode::Ae),
            variant("vae", &|c| c.group.mode = GroupingMode::Vae),
        ],
        other => return Err(BmfError::UnknownPreset(other.to_string())),
    })
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub name: String,
    pub dir: PathBuf,
    pub variants: Vec<(String, TrainReport)>,
}

impl AblationReport {
    /// Mean and std over seeds of the final return of each variant.
    pub fn finals(&self) -> Vec<(String, f64, f64)> {
        self.variants
            .iter()
            .map(|(l, r)| {
                let (m, s) = r.final_mean_std();
                (l.clone(), m, s)
            })
            .collect()
    }

    /// `(a - b) / |b|` between the final means of two variants.
    pub fn relative_gap(&self, a: &str, b: &str) -> Option<f64> {
        let f = self.finals();
        let get = |l: &str| f.iter().find(|(x, _, _)| x == l).map(|(_, m, _)| *m);
        let (a, b) = (get(a)?, get(b)?);
        Some((a - b) / b.abs().max(f64::MIN_POSITIVE))
    }
}

/// Trains every variant and writes `curves.csv` (variant, seed, episode,
/// return) and `finals.csv` under `out_root/<base.name>/`.
pub fn ablation_suite(name: &str, base: &RunConfig, out_root: &Path) -> Result<AblationReport> {
    let variants = ablation_variants(name, base)?;
    let dir = out_root.join(&base.name);
    std::fs::create_dir_all(&dir)?;
    let mut out = Vec::new();
    let mut curves = String::from("variant,seed,episode,return_total\n");
    for (label, cfg) in variants {
        let rep = train(&cfg, out_root, false)?;
        for (seed, rows) in rep.seeds.iter().zip(&rep.metrics) {
            for r in rows {
                curves.push_str(&format!("{label},{seed},{},{:?}\n", r.episode, r.return_total()));
            }
        }
        out.push((label, rep));
    }
    std::fs::write(dir.join("curves.csv"), curves)?;
    let report = AblationReport {
        name: name.to_string(),
        dir: dir.clone(),
        variants: out,
    };
    let mut finals = String::from("variant,final_mean,final_std\n");
    for (l, m, s) in report.finals() {
        finals.push_str(&format!("{l},{m:?},{s:?}\n"));
    }
    if name == "delay" {
        if let Some(g) = report.relative_gap("delay", "no_delay") {
            finals.push_str(&format!("relative_gap,{g:?},\n"));
        }
    }
    std::fs::write(dir.join("finals.csv"), finals)?;
    Ok(report)
}

/// Final returns per seed for a set of metrics histories.
pub fn finals_of(metrics: &[Vec<super::metrics::MetricsRow>]) -> (f64, f64) {
    mean_std(&metrics.iter().map(|m| final_return(m)).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_per_preset() {
        let base = RunConfig::preset("firefighter").unwrap();
        let d = ablation_variants("delay", &base).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d[0].1.group.delay && !d[1].1.group.delay);
        let k = ablation_variants("k_sweep", &base).unwrap();
        let ks: Vec<usize> = k.iter().take(4).map(|(_, c)| c.group.k).collect();
        assert_eq!(ks, vec![1, 2, 4, 8]);
        assert_eq!(k[4].1.learner.algo, Algo::Mfq);
        let g = ablation_variants("grouping", &base).unwrap();
        assert_eq!(g.iter().map(|(l, _)| l.as_str()).collect::<Vec<_>>(), vec!["rc", "ae", "vae"]);
        assert!(matches!(ablation_variants("nope", &base), Err(BmfError::UnknownPreset(_))));
        let battle = RunConfig::preset("battle").unwrap();
        assert_eq!(ablation_variants("k_sweep", &battle).unwrap()[4].1.learner.algo, Algo::Mfac);
    }
}
