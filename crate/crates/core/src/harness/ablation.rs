use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::config::ModelConfig;
use super::metrics::{EvalReport, TrainFactIndex};
use super::run::train;
use crate::data::Document;
use crate::encoder::{BiasTerms, TransformKind};
use crate::error::{Error, Result};
use crate::structure::DependencyType;

/// One trained-and-evaluated configuration.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub config: ModelConfig,
    pub report: EvalReport,
}

/// Corpora shared by every run of a suite.
#[derive(Debug, Clone, Copy)]
pub struct Corpora<'a> {
    pub train: &'a [Document],
    pub dev: &'a [Document],
}

/// Trains each configuration (in parallel) and evaluates its best
/// checkpoint on dev, with Ign computed against the training facts.
pub fn run_configs(configs: Vec<(String, ModelConfig)>, corpora: Corpora) -> Result<Vec<AblationRow>> {
    let index = TrainFactIndex::new(corpora.train);
    configs
        .into_par_iter()
        .map(|(label, config)| {
            let outcome = train(&config, corpora.train, corpora.dev)?;
            let best = &outcome.best;
            let dev = best.prepare(corpora.dev)?;
            let report = best.evaluate(&dev, &index, best.threshold)?;
            log::info!("{label}: dev F1 {:.4}", report.f1);
            Ok(AblationRow { label, config, report })
        })
        .collect()
}

/// Full model, each single exclusion, and every type excluded.
pub fn dependency_configs(base: &ModelConfig) -> Result<Vec<(String, ModelConfig)>> {
    if base.mode == TransformKind::None {
        return Err(Error::Config("dependency ablation needs a structured mode".into()));
    }
    let mut out = vec![("full".to_string(), base.clone())];
    for d in DependencyType::STRUCTURED {
        let mut c = base.clone();
        c.excluded = BTreeSet::from([d]);
        out.push((format!("-{}", d.name()), c));
    }
    let mut all = base.clone();
    all.excluded = DependencyType::STRUCTURED.into_iter().collect();
    out.push(("-all".to_string(), all));
    Ok(out)
}

pub fn ablate_dependencies(base: &ModelConfig, corpora: Corpora) -> Result<Vec<AblationRow>> {
    run_configs(dependency_configs(base)?, corpora)
}

/// Baseline plus the six term combinations of the two transformation modes.
pub fn term_configs(base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let with = |label: &str, mode, terms: Option<BiasTerms>| {
        let mut c = base.clone();
        c.mode = mode;
        c.terms = terms;
        c.excluded.clear();
        (label.to_string(), c)
    };
    let t = |q, k, p, core| BiasTerms {
        query_conditioned: q,
        key_conditioned: k,
        prior: p,
        biaffine_core: core,
    };
    vec![
        with("baseline", TransformKind::None, None),
        with("decomp:prior", TransformKind::Decomp, Some(t(false, false, true, false))),
        with("decomp:key", TransformKind::Decomp, Some(t(false, true, false, false))),
        with("decomp:query", TransformKind::Decomp, Some(t(true, false, false, false))),
        with("decomp:full", TransformKind::Decomp, Some(t(true, true, true, false))),
        with("biaffine:core", TransformKind::Biaffine, Some(t(false, false, false, true))),
        with("biaffine:core+prior", TransformKind::Biaffine, Some(t(false, false, true, true))),
    ]
}

pub fn ablate_bias_terms(base: &ModelConfig, corpora: Corpora) -> Result<Vec<AblationRow>> {
    run_configs(term_configs(base), corpora)
}

/// Structures the top `k` attention blocks for each `k` in `ks`.
pub fn layer_configs(base: &ModelConfig, ks: &[usize]) -> Result<Vec<(String, ModelConfig)>> {
    ks.iter()
        .map(|&k| {
            if k > base.layers {
                return Err(Error::Config(format!("cannot structure {k} of {} layers", base.layers)));
            }
            let mut c = base.clone();
            c.structured_layers = Some(base.layers - k..base.layers);
            Ok((k.to_string(), c))
        })
        .collect()
}

/// `(k, dev F1)` for each top-`k` structured range.
pub fn ablate_layers(base: &ModelConfig, corpora: Corpora, ks: &[usize]) -> Result<Vec<(usize, AblationRow)>> {
    let rows = run_configs(layer_configs(base, ks)?, corpora)?;
    Ok(ks.iter().copied().zip(rows).collect())
}

/// Cartesian product of `key = [values]` settings over `base`.
pub fn sweep_configs(base: &ModelConfig, grid: &[(String, Vec<String>)]) -> Result<Vec<(String, ModelConfig)>> {
    let mut out = vec![(String::new(), base.clone())];
    for (key, values) in grid {
        let mut next = Vec::with_capacity(out.len() * values.len());
        for (label, cfg) in &out {
            for v in values {
                let mut c = cfg.clone();
                c.set(key, v)?;
                let l = if label.is_empty() {
                    format!("{key}={v}")
                } else {
                    format!("{label},{key}={v}")
                };
                next.push((l, c));
            }
        }
        out = next;
    }
    for (_, c) in &out {
        c.validate()?;
    }
    Ok(out)
}

/// Table with overall and Ign metrics plus recall per relation.
pub fn rows_to_tsv(rows: &[AblationRow], relations: &[String]) -> String {
    let mut s = String::from("row\tseed\tprecision\trecall\tf1\tign_f1");
    for r in relations {
        write!(s, "\trecall_{r}").unwrap();
    }
    s.push('\n');
    for row in rows {
        write!(
            s,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            row.label, row.config.seed, row.report.precision, row.report.recall, row.report.f1, row.report.ign_f1
        )
        .unwrap();
        for r in relations {
            write!(s, "\t{:.6}", row.report.relation_recall(r)).unwrap();
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dependency_rows() {
        let rows = dependency_configs(&ModelConfig::default()).unwrap();
        let labels: Vec<_> = rows.iter().map(|r| r.0.as_str()).collect();
        assert_eq!(labels.len(), 7);
        assert_eq!(labels[0], "full");
        assert_eq!(labels[6], "-all");
        assert_eq!(rows[6].1.excluded.len(), 5);
        let none = ModelConfig {
            mode: TransformKind::None,
            ..ModelConfig::default()
        };
        assert!(dependency_configs(&none).is_err());
    }

    #[test]
    fn term_rows_are_valid() {
        for (label, c) in term_configs(&ModelConfig::default()) {
            c.validate().unwrap_or_else(|e| panic!("{label}: {e}"));
        }
    }

    #[test]
    fn layer_suffixes() {
        let base = ModelConfig {
            layers: 3,
            heads: 1,
            ..ModelConfig::default()
        };
        let rows = layer_configs(&base, &[0, 1, 3]).unwrap();
        let ranges: Vec<_> = rows.iter().map(|r| r.1.structured_layers.clone().unwrap()).collect();
        assert_eq!(ranges, vec![3..3, 2..3, 0..3]);
        assert!(layer_configs(&base, &[4]).is_err());
    }

    #[test]
    fn sweep_is_cartesian() {
        let grid = vec![
            ("lr".to_string(), vec!["0.01".to_string(), "0.001".to_string()]),
            ("layers".to_string(), vec!["1".to_string(), "2".to_string(), "3".to_string()]),
        ];
        let rows = sweep_configs(&ModelConfig::default(), &grid).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[5].0, "lr=0.001,layers=3");
        assert_eq!(rows[5].1.layers, 3);
    }
}
