use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::PathBuf;

use crate::encoder::{BiasTerms, EncoderConfig, TransformKind, Transformation};
use crate::error::{Error, Result};
use crate::rehead::ModelSpec;
use crate::structure::DependencyType;
use crate::tensor::AdamConfig;

/// Every setting of a run. Serialized as flat `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn_mult: usize,
    pub max_len: usize,
    pub mode: TransformKind,
    /// `None` selects every term of the mode.
    pub terms: Option<BiasTerms>,
    pub excluded: BTreeSet<DependencyType>,
    /// `None` structures every layer.
    pub structured_layers: Option<Range<usize>>,
    pub schema: Option<PathBuf>,
    pub min_count: usize,
    pub threshold: f64,
    pub auto_threshold: bool,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub coref_table: usize,
    pub dist_dim: usize,
    /// Stop once dev F1 reaches this value; 0 disables.
    pub early_stop_f1: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            d_model: 32,
            ffn_mult: 4,
            max_len: 128,
            mode: TransformKind::Biaffine,
            terms: None,
            excluded: BTreeSet::new(),
            structured_layers: None,
            schema: None,
            min_count: 1,
            threshold: 0.5,
            auto_threshold: false,
            seed: 0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 30,
            batch_size: 4,
            coref_table: 64,
            dist_dim: 8,
            early_stop_f1: 0.0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{v}`")))
}

fn parse_range(v: &str) -> Result<Option<Range<usize>>> {
    if v == "all" {
        return Ok(None);
    }
    let (a, b) = v
        .split_once("..")
        .ok_or_else(|| Error::Config(format!("structured_layers expects `all` or `a..b`, got `{v}`")))?;
    Ok(Some(parse_num("structured_layers", a)?..parse_num("structured_layers", b)?))
}

impl ModelConfig {
    /// Sets one field from its textual form. Dashes in `key` are accepted.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "layers" => self.layers = parse_num(&key, v)?,
            "heads" => self.heads = parse_num(&key, v)?,
            "d_model" => self.d_model = parse_num(&key, v)?,
            "ffn_mult" => self.ffn_mult = parse_num(&key, v)?,
            "max_len" => self.max_len = parse_num(&key, v)?,
            "mode" => self.mode = v.parse()?,
            "terms" => {
                self.terms = if v.is_empty() || v == "default" {
                    None
                } else {
                    Some(BiasTerms::parse_list(v)?)
                }
            }
            "excluded" => {
                self.excluded = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        let d = DependencyType::parse(s)
                            .ok_or_else(|| Error::Config(format!("unknown dependency type `{s}`")))?;
                        if d == DependencyType::Na {
                            return Err(Error::InvalidDependency(d));
                        }
                        Ok(d)
                    })
                    .collect::<Result<_>>()?
            }
            "structured_layers" => self.structured_layers = parse_range(v)?,
            "schema" => self.schema = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "min_count" => self.min_count = parse_num(&key, v)?,
            "threshold" => self.threshold = parse_num(&key, v)?,
            "auto_threshold" => {
                self.auto_threshold = v
                    .parse()
                    .map_err(|_| Error::Config(format!("`auto_threshold` expects true/false, got `{v}`")))?
            }
            "seed" => self.seed = parse_num(&key, v)?,
            "lr" => self.lr = parse_num(&key, v)?,
            "beta1" => self.beta1 = parse_num(&key, v)?,
            "beta2" => self.beta2 = parse_num(&key, v)?,
            "eps" => self.eps = parse_num(&key, v)?,
            "epochs" => self.epochs = parse_num(&key, v)?,
            "batch_size" => self.batch_size = parse_num(&key, v)?,
            "coref_table" => self.coref_table = parse_num(&key, v)?,
            "dist_dim" => self.dist_dim = parse_num(&key, v)?,
            "early_stop_f1" => self.early_stop_f1 = parse_num(&key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let terms = self.terms.map_or("default".to_string(), |t| t.to_list());
        let excluded: Vec<&str> = self.excluded.iter().map(|d| d.name()).collect();
        let range = self
            .structured_layers
            .as_ref()
            .map_or("all".to_string(), |r| format!("{}..{}", r.start, r.end));
        let schema = self
            .schema
            .as_ref()
            .map_or(String::new(), |p| p.display().to_string());
        let lines: [(&str, String); 23] = [
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("d_model", self.d_model.to_string()),
            ("ffn_mult", self.ffn_mult.to_string()),
            ("max_len", self.max_len.to_string()),
            ("mode", self.mode.to_string()),
            ("terms", terms),
            ("excluded", excluded.join(",")),
            ("structured_layers", range),
            ("schema", schema),
            ("min_count", self.min_count.to_string()),
            ("threshold", format!("{:?}", self.threshold)),
            ("auto_threshold", self.auto_threshold.to_string()),
            ("seed", self.seed.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("beta1", format!("{:?}", self.beta1)),
            ("beta2", format!("{:?}", self.beta2)),
            ("eps", format!("{:?}", self.eps)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("coref_table", self.coref_table.to_string()),
            ("dist_dim", self.dist_dim.to_string()),
            ("early_stop_f1", format!("{:?}", self.early_stop_f1)),
        ];
        for (k, v) in lines {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    pub fn transformation(&self) -> Result<Transformation> {
        match self.terms {
            None => Ok(Transformation::full(self.mode)),
            Some(t) => Transformation::new(self.mode, t),
        }
    }

    pub fn layer_range(&self) -> Range<usize> {
        self.structured_layers.clone().unwrap_or(0..self.layers)
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        Ok(EncoderConfig {
            layers: self.layers,
            heads: self.heads,
            d_model: self.d_model,
            ffn_mult: self.ffn_mult,
            transformation: self.transformation()?,
            structured_layers: self.layer_range(),
        })
    }

    pub fn model_spec(&self, vocab_size: usize, type_count: usize, relations: usize) -> Result<ModelSpec> {
        Ok(ModelSpec {
            encoder: self.encoder_config()?,
            max_len: self.max_len,
            vocab_size,
            type_count,
            coref_table: self.coref_table,
            dist_dim: self.dist_dim,
            relations,
            excluded: self.excluded.clone(),
        })
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder_config()?.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers == 0 || self.d_model == 0 || self.ffn_mult == 0 {
            return bad("layers, d_model and ffn_mult must be positive");
        }
        if self.max_len == 0 || self.batch_size == 0 {
            return bad("max_len and batch_size must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        Ok(())
    }
}
