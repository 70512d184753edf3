//! Run configuration (flat `key=value` files) and the named ablation variants.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cge::FpMode;
use crate::error::{Error, Result};
use crate::graph_ops::{check_ratio, UnpoolFill};
use crate::heads::LossMode;

/// One row of the ablation matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Variant {
    Full,
    Baseline,
    BaselineCge,
    BaselineAgr,
    NoDepth,
    SimpleFusion,
    UniformGraph,
    NoGraphPoolCge,
    HgaStack(usize),
    NoHga,
    RgbRatios([f64; 4]),
    NoSsag,
    NoGraphPoolAgr,
    NoAttention,
    NoCsp,
    NoEdge,
    Direct,
    SsagRatio(f64),
}

impl Variant {
    /// Every named variant, grouped by the component it changes.
    pub fn matrix() -> Vec<Variant> {
        use Variant::*;
        vec![
            Full,
            Baseline,
            BaselineCge,
            BaselineAgr,
            NoDepth,
            SimpleFusion,
            UniformGraph,
            NoGraphPoolCge,
            NoHga,
            HgaStack(1),
            HgaStack(2),
            HgaStack(3),
            RgbRatios([0.2; 4]),
            RgbRatios([0.5; 4]),
            RgbRatios([0.8, 0.6, 0.4, 0.2]),
            RgbRatios([0.8; 4]),
            NoSsag,
            NoGraphPoolAgr,
            NoAttention,
            NoCsp,
            NoEdge,
            Direct,
            SsagRatio(0.3),
            SsagRatio(0.5),
            SsagRatio(0.7),
            SsagRatio(0.9),
        ]
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Variant::*;
        match self {
            Full => f.write_str("full"),
            Baseline => f.write_str("B"),
            BaselineCge => f.write_str("B+CGE"),
            BaselineAgr => f.write_str("B+AGR"),
            NoDepth => f.write_str("w/o Depth"),
            SimpleFusion => f.write_str("w/SF"),
            UniformGraph => f.write_str("w/UG"),
            NoGraphPoolCge => f.write_str("w/o GP&UP(cge)"),
            HgaStack(n) => write!(f, "HGA_n={n}"),
            NoHga => f.write_str("w/o HGA"),
            RgbRatios(r) => write!(f, "r_i=[{},{},{},{}]", r[0], r[1], r[2], r[3]),
            NoSsag => f.write_str("w/o SSAG"),
            NoGraphPoolAgr => f.write_str("w/o GP&UP(agr)"),
            NoAttention => f.write_str("w/o Att"),
            NoCsp => f.write_str("w/o CSP"),
            NoEdge => f.write_str("w/o Edge"),
            Direct => f.write_str("w Direct"),
            SsagRatio(r) => write!(f, "ssag_r={r}"),
        }
    }
}

fn parse_ratio(s: &str) -> Result<f64> {
    let r: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad ratio `{s}`")))?;
    check_ratio(r)?;
    Ok(r)
}

fn parse_ratio_list(s: &str) -> Result<[f64; 4]> {
    let inner = s
        .trim()
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| Error::Config(format!("expected `[a,b,c,d]`, got `{s}`")))?;
    let v = inner.split(',').map(parse_ratio).collect::<Result<Vec<_>>>()?;
    v.try_into()
        .map_err(|_| Error::Config(format!("expected four ratios in `{s}`")))
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use Variant::*;
        let s = s.trim();
        let v = match s {
            "full" | "Ours" => Full,
            "B" => Baseline,
            "B+CGE" => BaselineCge,
            "B+AGR" => BaselineAgr,
            "w/o Depth" => NoDepth,
            "w/SF" | "w/ SF" | "w SF" => SimpleFusion,
            "w/UG" | "w/ UG" | "w UG" => UniformGraph,
            "w/o GP&UP(cge)" => NoGraphPoolCge,
            "w/o HGA" => NoHga,
            "w/o SSAG" => NoSsag,
            "w/o GP&UP(agr)" => NoGraphPoolAgr,
            "w/o Att" => NoAttention,
            "w/o CSP" => NoCsp,
            "w/o Edge" => NoEdge,
            "w Direct" | "w/ Direct" => Direct,
            _ => {
                if let Some(n) = s.strip_prefix("HGA_n=") {
                    match n.parse() {
                        Ok(n @ 1..=3) => HgaStack(n),
                        _ => return Err(Error::Config(format!("unknown variant `{s}`"))),
                    }
                } else if let Some(r) = s.strip_prefix("r_i=") {
                    RgbRatios(parse_ratio_list(r)?)
                } else if let Some(r) = s.strip_prefix("ssag_r=") {
                    SsagRatio(parse_ratio(r)?)
                } else {
                    return Err(Error::Config(format!("unknown variant `{s}`")));
                }
            }
        };
        Ok(v)
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Splits a variant list on commas outside brackets: `full,r_i=[0.2,0.2,0.2,0.2]`.
pub fn parse_variant_list(s: &str) -> Result<Vec<Variant>> {
    let mut items = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                items.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    items.push(cur);
    let items: Vec<_> = items.into_iter().filter(|i| !i.trim().is_empty()).collect();
    if items.is_empty() {
        return Err(Error::Config("empty variant list".into()));
    }
    items.iter().map(|i| i.parse()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub input_size: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub hga_stack: usize,
    pub rgb_ratios: [f64; 4],
    pub depth_ratio: f64,
    pub ssag_ratio: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub unpool_fill: UnpoolFill,
    pub loss_mode: LossMode,
    pub fp_mode: FpMode,
    pub freeze_sam: bool,
    pub augment: bool,
    /// Stop after this many optimizer steps (0 = no limit).
    pub max_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::Full,
            input_size: 128,
            embed_dim: 64,
            heads: 4,
            hga_stack: 1,
            rgb_ratios: [0.2, 0.4, 0.6, 0.8],
            depth_ratio: 0.5,
            ssag_ratio: 0.7,
            lr: 5e-5,
            batch: 4,
            epochs: 5,
            seed: 0,
            unpool_fill: UnpoolFill::Passthrough,
            loss_mode: LossMode::Weighted,
            fp_mode: FpMode::Aggregate,
            freeze_sam: false,
            augment: false,
            max_steps: 0,
        }
    }
}

fn parse_field<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad value `{v}` for `{key}`"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key.trim() {
            "variant" => self.variant = v.parse()?,
            "input_size" => self.input_size = parse_field(key, v)?,
            "embed_dim" => self.embed_dim = parse_field(key, v)?,
            "heads" => self.heads = parse_field(key, v)?,
            "hga_stack" => self.hga_stack = parse_field(key, v)?,
            "rgb_ratios" => self.rgb_ratios = parse_ratio_list(v)?,
            "depth_ratio" => self.depth_ratio = parse_ratio(v)?,
            "ssag_ratio" => self.ssag_ratio = parse_ratio(v)?,
            "lr" => self.lr = parse_field(key, v)?,
            "batch" => self.batch = parse_field(key, v)?,
            "epochs" => self.epochs = parse_field(key, v)?,
            "seed" => self.seed = parse_field(key, v)?,
            "unpool_fill" => {
                self.unpool_fill = match v {
                    "passthrough" => UnpoolFill::Passthrough,
                    "zero" => UnpoolFill::Zero,
                    _ => return Err(Error::Config(format!("bad unpool_fill `{v}`"))),
                }
            }
            "loss_mode" => {
                self.loss_mode = match v {
                    "weighted" => LossMode::Weighted,
                    "plain" => LossMode::Plain,
                    _ => return Err(Error::Config(format!("bad loss_mode `{v}`"))),
                }
            }
            "fp_mode" => {
                self.fp_mode = match v {
                    "aggregate" => FpMode::Aggregate,
                    "level4" => FpMode::Level4,
                    _ => return Err(Error::Config(format!("bad fp_mode `{v}`"))),
                }
            }
            "freeze_sam" => self.freeze_sam = parse_bool(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "max_steps" => self.max_steps = parse_field(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_kv(&self) -> String {
        let fill = match self.unpool_fill {
            UnpoolFill::Passthrough => "passthrough",
            UnpoolFill::Zero => "zero",
        };
        let loss = match self.loss_mode {
            LossMode::Weighted => "weighted",
            LossMode::Plain => "plain",
        };
        let fp = match self.fp_mode {
            FpMode::Aggregate => "aggregate",
            FpMode::Level4 => "level4",
        };
        let r = self.rgb_ratios;
        format!(
            "variant={}\ninput_size={}\nembed_dim={}\nheads={}\nhga_stack={}\n\
             rgb_ratios=[{},{},{},{}]\ndepth_ratio={}\nssag_ratio={}\nlr={}\nbatch={}\n\
             epochs={}\nseed={}\nunpool_fill={fill}\nloss_mode={loss}\nfp_mode={fp}\n\
             freeze_sam={}\naugment={}\nmax_steps={}\n",
            self.variant,
            self.input_size,
            self.embed_dim,
            self.heads,
            self.hga_stack,
            r[0],
            r[1],
            r[2],
            r[3],
            self.depth_ratio,
            self.ssag_ratio,
            self.lr,
            self.batch,
            self.epochs,
            self.seed,
            self.freeze_sam,
            self.augment,
            self.max_steps
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "input_size {} is not a positive multiple of 32",
                self.input_size
            )));
        }
        if self.embed_dim < 4 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed_dim {} must be at least 4 and divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be finite and non-negative", self.lr)));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch must be at least 1".into()));
        }
        for r in self.rgb_ratios.iter().chain([&self.depth_ratio, &self.ssag_ratio]) {
            check_ratio(*r)?;
        }
        Ok(())
    }

    /// Copy with the variant's overrides applied to the numeric fields.
    pub fn effective(&self) -> RunConfig {
        let mut c = self.clone();
        match &self.variant {
            Variant::HgaStack(n) => c.hga_stack = *n,
            Variant::NoHga => c.hga_stack = 0,
            Variant::RgbRatios(r) => c.rgb_ratios = *r,
            Variant::SsagRatio(r) => c.ssag_ratio = *r,
            _ => {}
        }
        c
    }
}
