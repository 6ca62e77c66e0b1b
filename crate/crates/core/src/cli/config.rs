//! Flat `key = value` run configuration with dotted section prefixes.
//!
//! Values are merged in order: built-in defaults, then the config file, then
//! command-line overrides. Unknown keys are rejected, and every value is
//! parsed and validated before any command starts work.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::channel::{ChannelConfig, ChannelKind};
use crate::codec::{CodecConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::mss::PairMode;
use crate::pipeline::Masking;
use crate::scene::{BackgroundFamily, SceneConfig};
use crate::training::{Phase, TrainConfig};

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("out", "results"),
    ("data.dir", ""),
    ("scene.size", "32"),
    ("scene.channels", "3"),
    ("scene.patch", "4"),
    ("scene.min_objects", "1"),
    ("scene.max_objects", "2"),
    ("scene.min_object_size", "8"),
    ("scene.max_object_size", "14"),
    ("scene.background", "mixed"),
    ("codec.d_s", "64"),
    ("codec.enc_layers", "4"),
    ("codec.dec_layers", "2"),
    ("codec.heads", "4"),
    ("codec.d_c", "8"),
    ("channel.kind", "awgn"),
    ("channel.rician_r", "1"),
    ("channel.n_t", "1"),
    ("channel.n_r", "1"),
    ("channel.snr_db", "10"),
    ("channel.csi_error_var", "0"),
    ("channel.p_s", "1"),
    ("mask.p_r", "0.3"),
    ("train.phase", "all"),
    ("train.lr", "2e-4"),
    ("train.epochs", "10"),
    ("train.batch_size", "8"),
    ("train.scenes", "512"),
    ("train.snr_min_db", "0"),
    ("train.snr_max_db", "20"),
    ("train.init", ""),
    ("eval.checkpoint", ""),
    ("eval.trials", "200"),
    ("eval.snr_db", ""),
    ("eval.channels", "awgn,rayleigh"),
    ("eval.maskings", "adaptive,random"),
    ("eval.dump", "false"),
    ("sweep.trials", "1000"),
    ("sweep.p_r", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"),
    ("sweep.channels", "awgn,rayleigh"),
    ("sweep.retrain", "false"),
    ("mss.trials", "1000"),
    ("mss.k", "2..10"),
    ("mss.epsilon", "0.05,0.2"),
    ("mss.pairs", "consecutive"),
    ("mss.features", "patch"),
    ("mss.count_side_info", "false"),
    ("mss.share_base", "0.8"),
    ("mss.share_decay", "0.08"),
    ("mss.jitter", "0.005"),
    ("mss.log", "false"),
    ("bench.trials", "1000"),
    ("bench.snr_db", "0,10,20,30,40"),
    ("bench.csi_var", "0,0.01,0.05,0.1"),
    ("bench.kinds", "awgn,rayleigh,rician"),
    ("bench.symbols", "64"),
    ("gen.count", "16"),
];

/// Semantic features compared by the user sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Centered, scaled raw patches: `(patch − 0.5)·4`.
    Patch,
    /// Encoder output over all patches of the configured checkpoint.
    Encoder,
}

/// Which training phases to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseSel {
    All,
    One(Phase),
}

impl PhaseSel {
    pub fn phases(self) -> Vec<Phase> {
        match self {
            PhaseSel::All => Phase::ALL.to_vec(),
            PhaseSel::One(p) => vec![p],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub phase: PhaseSel,
    pub scenes: usize,
    /// Starting checkpoint for the first requested phase.
    pub init: Option<PathBuf>,
    pub cfg: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
    pub trials: usize,
    pub snr_db: Vec<f64>,
    pub channels: Vec<ChannelKind>,
    pub maskings: Vec<Masking>,
    pub dump: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub trials: usize,
    pub p_r: Vec<f64>,
    pub channels: Vec<ChannelKind>,
    pub retrain: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MssSection {
    pub trials: usize,
    pub k: Vec<usize>,
    pub epsilon: Vec<f64>,
    pub pairs: PairMode,
    pub features: FeatureMode,
    pub count_side_info: bool,
    pub share_base: f64,
    pub share_decay: f64,
    pub jitter: f64,
    pub log: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSection {
    pub trials: usize,
    pub snr_db: Vec<f64>,
    pub csi_var: Vec<f64>,
    pub kinds: Vec<ChannelKind>,
    pub symbols: usize,
}

/// Fully parsed and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data_dir: Option<PathBuf>,
    pub scene: SceneConfig,
    pub model: ModelConfig,
    pub channel: ChannelConfig,
    pub p_r: f64,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub mss: MssSection,
    pub bench: BenchSection,
    pub gen_count: usize,
    resolved: BTreeMap<String, String>,
}

/// Raw key/value layers before typing.
#[derive(Debug, Clone)]
pub struct ConfigBuilder {
    values: BTreeMap<String, String>,
}

impl Default for ConfigBuilder {
    fn default() -> Self {
        Self::new()
    }
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        match self.values.get_mut(&key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
    }

    pub fn merge_text(&mut self, origin: &str, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{origin}:{}: expected `key = value`, got `{line}`",
                    n + 1
                )));
            };
            self.set(k, v)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.merge_text(&path.display().to_string(), &text)
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    pub fn build(self) -> Result<RunConfig> {
        RunConfig::from_map(self.values)
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("`{key}` = `{value}`: expected {what}"))
}

struct Reader<'a>(&'a BTreeMap<String, String>);

impl Reader<'_> {
    fn raw(&self, key: &str) -> &str {
        &self.0[key]
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse().map_err(|_| bad(key, v, what))
    }

    fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key, "a non-negative integer")
    }

    fn f64(&self, key: &str) -> Result<f64> {
        let x: f64 = self.parse(key, "a number")?;
        if !x.is_finite() {
            return Err(bad(key, self.raw(key), "a finite number"));
        }
        Ok(x)
    }

    fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            v => Err(bad(key, v, "a boolean")),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    fn items(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }

    fn list<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Vec<T>> {
        self.items(key)
            .iter()
            .map(|s| s.parse().map_err(|_| bad(key, s, what)))
            .collect()
    }

    fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let xs: Vec<f64> = self.list(key, "a comma-separated list of numbers")?;
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(bad(key, self.raw(key), "finite numbers"));
        }
        Ok(xs)
    }

    /// Comma list whose items may be inclusive ranges `a..b`.
    fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for item in self.items(key) {
            match item.split_once("..") {
                Some((a, b)) => {
                    let a: usize = a.trim().parse().map_err(|_| bad(key, &item, "an integer range"))?;
                    let b: usize = b.trim().parse().map_err(|_| bad(key, &item, "an integer range"))?;
                    if a > b {
                        return Err(bad(key, &item, "an ascending range"));
                    }
                    out.extend(a..=b);
                }
                None => out.push(item.parse().map_err(|_| bad(key, &item, "an integer"))?),
            }
        }
        Ok(out)
    }
}

fn nonempty<T>(key: &str, v: Vec<T>) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::Config(format!("`{key}` must list at least one value")));
    }
    Ok(v)
}

fn positive(key: &str, v: usize) -> Result<usize> {
    if v == 0 {
        return Err(Error::Config(format!("`{key}` must be at least 1")));
    }
    Ok(v)
}

fn check_p_r(key: &str, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("`{key}`: p_r must lie in [0, 1], got {p}")));
    }
    Ok(p)
}

impl RunConfig {
    fn from_map(values: BTreeMap<String, String>) -> Result<Self> {
        let r = Reader(&values);
        let scene = SceneConfig {
            size: r.usize("scene.size")?,
            channels: r.usize("scene.channels")?,
            patch: r.usize("scene.patch")?,
            min_objects: r.usize("scene.min_objects")?,
            max_objects: r.usize("scene.max_objects")?,
            min_object_size: r.usize("scene.min_object_size")?,
            max_object_size: r.usize("scene.max_object_size")?,
            background: r.parse::<BackgroundFamily>("scene.background", "flat|stripes|checker|noise|mixed")?,
        };
        scene.validate()?;
        let grid = scene.grid()?;
        let model = ModelConfig {
            codec: CodecConfig {
                d_s: r.usize("codec.d_s")?,
                enc_layers: r.usize("codec.enc_layers")?,
                dec_layers: r.usize("codec.dec_layers")?,
                num_heads: r.usize("codec.heads")?,
                patch_dim: grid.patch_dim(),
                num_patches: grid.num_patches(),
            },
            d_c: positive("codec.d_c", r.usize("codec.d_c")?)?,
        };
        model.codec.validate()?;
        let channel = ChannelConfig {
            kind: r.parse("channel.kind", "awgn|rayleigh|rician")?,
            rician_r: r.f64("channel.rician_r")?,
            n_t: r.usize("channel.n_t")?,
            n_r: r.usize("channel.n_r")?,
            snr_db: r.f64("channel.snr_db")?,
            csi_error_var: r.f64("channel.csi_error_var")?,
            p_s: r.f64("channel.p_s")?,
        };
        channel.validate()?;
        let p_r = check_p_r("mask.p_r", r.f64("mask.p_r")?)?;
        let seed: u64 = r.parse("seed", "a non-negative integer")?;

        let phase = match r.raw("train.phase") {
            "all" => PhaseSel::All,
            other => PhaseSel::One(other.parse()?),
        };
        let train_cfg = TrainConfig {
            lr: r.f64("train.lr")?,
            epochs: r.usize("train.epochs")?,
            batch_size: r.usize("train.batch_size")?,
            seed,
            p_r,
            snr_min_db: r.f64("train.snr_min_db")?,
            snr_max_db: r.f64("train.snr_max_db")?,
            channel,
        };
        train_cfg.validate()?;
        let train = TrainSection {
            phase,
            scenes: positive("train.scenes", r.usize("train.scenes")?)?,
            init: r.path("train.init"),
            cfg: train_cfg,
        };

        let eval_snr = r.f64_list("eval.snr_db")?;
        let eval = EvalSection {
            checkpoint: r.path("eval.checkpoint"),
            trials: positive("eval.trials", r.usize("eval.trials")?)?,
            snr_db: if eval_snr.is_empty() {
                vec![channel.snr_db]
            } else {
                eval_snr
            },
            channels: nonempty("eval.channels", r.list("eval.channels", "channel kinds")?)?,
            maskings: nonempty("eval.maskings", r.list("eval.maskings", "adaptive|random")?)?,
            dump: r.bool("eval.dump")?,
        };

        let sweep_p_r = nonempty("sweep.p_r", r.f64_list("sweep.p_r")?)?;
        for &p in &sweep_p_r {
            check_p_r("sweep.p_r", p)?;
        }
        let sweep = SweepSection {
            trials: positive("sweep.trials", r.usize("sweep.trials")?)?,
            p_r: sweep_p_r,
            channels: nonempty("sweep.channels", r.list("sweep.channels", "channel kinds")?)?,
            retrain: r.bool("sweep.retrain")?,
        };

        let k = nonempty("mss.k", r.usize_list("mss.k")?)?;
        if let Some(&bad_k) = k.iter().find(|&&k| k < 2) {
            return Err(Error::Config(format!("`mss.k`: K must be at least 2, got {bad_k}")));
        }
        let epsilon = nonempty("mss.epsilon", r.f64_list("mss.epsilon")?)?;
        if let Some(&e) = epsilon.iter().find(|&&e| e < 0.0) {
            return Err(Error::Config(format!("`mss.epsilon`: epsilon must be >= 0, got {e}")));
        }
        let features = match r.raw("mss.features") {
            "patch" => FeatureMode::Patch,
            "encoder" => FeatureMode::Encoder,
            v => return Err(bad("mss.features", v, "patch|encoder")),
        };
        let jitter = r.f64("mss.jitter")?;
        let share_base = r.f64("mss.share_base")?;
        let share_decay = r.f64("mss.share_decay")?;
        if jitter < 0.0 || !(0.0..=1.0).contains(&share_base) || share_decay < 0.0 {
            return Err(Error::Config(
                "mss.jitter and mss.share_decay must be >= 0, mss.share_base in [0, 1]".into(),
            ));
        }
        let mss = MssSection {
            trials: positive("mss.trials", r.usize("mss.trials")?)?,
            k,
            epsilon,
            pairs: r.parse("mss.pairs", "consecutive|all-pairs")?,
            features,
            count_side_info: r.bool("mss.count_side_info")?,
            share_base,
            share_decay,
            jitter,
            log: r.bool("mss.log")?,
        };

        let csi_var = r.f64_list("bench.csi_var")?;
        if csi_var.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("`bench.csi_var` entries must be >= 0".into()));
        }
        let bench = BenchSection {
            trials: positive("bench.trials", r.usize("bench.trials")?)?,
            snr_db: nonempty("bench.snr_db", r.f64_list("bench.snr_db")?)?,
            csi_var: nonempty("bench.csi_var", csi_var)?,
            kinds: nonempty("bench.kinds", r.list("bench.kinds", "channel kinds")?)?,
            symbols: positive("bench.symbols", r.usize("bench.symbols")?)?,
        };

        Ok(Self {
            seed,
            out: PathBuf::from(r.raw("out")),
            data_dir: r.path("data.dir"),
            scene,
            model,
            channel,
            p_r,
            train,
            eval,
            sweep,
            mss,
            bench,
            gen_count: r.usize("gen.count")?,
            resolved: values,
        })
    }

    /// Every key with its final value, sorted by key.
    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}
