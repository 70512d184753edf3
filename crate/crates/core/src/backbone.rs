//! Small convolutional encoders with the stride layout of a four-stage
//! hierarchical backbone (strides 4, 8, 16, 32).

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct StubConfig {
    pub input_size: usize,
    pub embed_dim: usize,
    /// Channel width of each pyramid level, finest first.
    pub widths: [usize; 4],
}

impl StubConfig {
    /// Widths `[d/4, d/2, 3d/4, d]`.
    pub fn new(input_size: usize, embed_dim: usize) -> Result<Self> {
        let d = embed_dim;
        let cfg = StubConfig {
            input_size,
            embed_dim: d,
            widths: [(d / 4).max(1), (d / 2).max(1), (3 * d / 4).max(1), d],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_size(self.input_size)?;
        if self.embed_dim == 0 || self.widths.contains(&0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        Ok(())
    }

    /// Spatial side of level `i` (0-based).
    pub fn level_size(&self, i: usize) -> usize {
        self.input_size >> (i + 2)
    }
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 || !n.is_multiple_of(32) {
        return Err(Error::Config(format!("input size {n} is not a positive multiple of 32")));
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct Stage {
    down: Conv2d,
    refine: Conv2d,
}

impl Stage {
    fn forward(&self, g: &Graph, x: Var) -> Var {
        let y = g.silu(self.down.forward(g, x));
        g.silu(self.refine.forward(g, y))
    }
}

/// Four downsampling stages. Stage 1 is a 7×7 stride-4 patch embedding, the
/// rest are 3×3 stride-2 convolutions; each is followed by a 3×3 refinement.
#[derive(Clone, Debug)]
pub struct StubEncoder {
    stages: Vec<Stage>,
    pub prefix: String,
    pub in_channels: usize,
}

impl StubEncoder {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        widths: [usize; 4],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut stages = Vec::with_capacity(4);
        let mut cin = in_channels;
        for (i, &w) in widths.iter().enumerate() {
            let down = if i == 0 {
                Conv2d::new(ps, &format!("{prefix}.stage1.down"), cin, w, 7, 4, 3, rng)
            } else {
                Conv2d::new(ps, &format!("{prefix}.stage{}.down", i + 1), cin, w, 3, 2, 1, rng)
            };
            let refine = Conv2d::same3(ps, &format!("{prefix}.stage{}.refine", i + 1), w, w, rng);
            stages.push(Stage { down, refine });
            cin = w;
        }
        StubEncoder {
            stages,
            prefix: prefix.to_string(),
            in_channels,
        }
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != self.in_channels {
            return Err(Error::Input(format!(
                "{} expects [b, {}, h, w], got {s:?}",
                self.prefix, self.in_channels
            )));
        }
        check_size(s[2])?;
        check_size(s[3])?;
        Ok(())
    }

    /// Returns the four levels, finest first.
    pub fn pyramid(&self, g: &Graph, x: Var) -> Result<Vec<Var>> {
        self.check_input(g, x)?;
        let mut out = Vec::with_capacity(4);
        let mut h = x;
        for st in &self.stages {
            h = st.forward(g, h);
            out.push(h);
        }
        Ok(out)
    }
}

/// RGB branch, SAM-like branch, and depth prompt encoder.
#[derive(Clone, Debug)]
pub struct Backbones {
    pub rgb: Option<StubEncoder>,
    pub sam: StubEncoder,
    pub depth: Option<StubEncoder>,
}

pub const SAM_PREFIX: &str = "sam";

impl Backbones {
    pub fn new(
        ps: &mut ParamStore,
        cfg: &StubConfig,
        with_rgb: bool,
        with_depth: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let rgb = with_rgb.then(|| StubEncoder::new(ps, "pvt", 3, cfg.widths, rng));
        let sam = StubEncoder::new(ps, SAM_PREFIX, 3, cfg.widths, rng);
        let depth = with_depth.then(|| {
            StubEncoder::new(ps, "prompt", 1, [(d / 4).max(1), (d / 2).max(1), (3 * d / 4).max(1), d], rng)
        });
        Ok(Backbones { rgb, sam, depth })
    }

    pub fn encode_rgb(&self, g: &Graph, image: Var) -> Result<Vec<Var>> {
        self.rgb
            .as_ref()
            .ok_or_else(|| Error::Config("model has no RGB encoder".into()))?
            .pyramid(g, image)
    }

    pub fn encode_sam(&self, g: &Graph, image: Var) -> Result<Vec<Var>> {
        self.sam.pyramid(g, image)
    }

    /// Depth feature at stride 32 with `d` channels.
    pub fn encode_depth(&self, g: &Graph, depth: Var, image_hw: (usize, usize)) -> Result<Var> {
        let enc = self
            .depth
            .as_ref()
            .ok_or_else(|| Error::Config("model has no depth encoder".into()))?;
        let s = g.shape(depth);
        if s.len() == 4 && (s[2], s[3]) != image_hw {
            return Err(Error::Input(format!(
                "depth is {}x{} but image is {}x{}",
                s[2], s[3], image_hw.0, image_hw.1
            )));
        }
        Ok(enc.pyramid(g, depth)?.pop().expect("four stages"))
    }
}
