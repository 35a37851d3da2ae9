use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tape, Var};

use super::layers::{pool_len, BatchNorm, Builder, Conv, ConvShape, Dense};
use super::residual::{ResidualBlock, StageSpec};

/// Layer widths of one residual path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathConfig {
    pub conv1_kernels: usize,
    pub conv1_size: usize,
    pub pool: usize,
    pub stages: Vec<StageSpec>,
    pub fc: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self::table()
    }
}

fn stages(widths: [(usize, usize); 4]) -> Vec<StageSpec> {
    widths
        .iter()
        .zip([3, 4, 6, 3])
        .map(|(&(c_mid, c_out), repeats)| StageSpec { c_mid, c_out, repeats })
        .collect()
}

impl PathConfig {
    /// The published layer table: res2 is the widest stage.
    pub fn table() -> Self {
        Self {
            conv1_kernels: 64,
            conv1_size: 5,
            pool: 2,
            stages: stages([(64, 256), (512, 2048), (256, 1024), (128, 512)]),
            fc: 512,
        }
    }

    /// Conventional ResNet-50 ordering with widths doubling per stage.
    pub fn resnet50_order() -> Self {
        Self {
            stages: stages([(64, 256), (128, 512), (256, 1024), (512, 2048)]),
            ..Self::table()
        }
    }

    /// Divides every channel width by `divisor` (rounding up), keeping
    /// depth, kernel sizes and pooling.
    pub fn with_width_divisor(mut self, divisor: usize) -> Self {
        let div = |c: usize| c.div_ceil(divisor.max(1));
        self.conv1_kernels = div(self.conv1_kernels);
        self.fc = div(self.fc);
        for s in &mut self.stages {
            s.c_mid = div(s.c_mid);
            s.c_out = div(s.c_out);
        }
        self
    }

    pub fn parse_preset(name: &str) -> Result<Self> {
        match name {
            "table" | "paper" => Ok(Self::table()),
            "resnet50-order" => Ok(Self::resnet50_order()),
            other => Err(Error::Config(format!("unknown path preset `{other}`"))),
        }
    }

    /// Checks widths and that every stage keeps at least one time step for
    /// an input of `t` steps.
    pub fn validate(&self, t: usize) -> Result<()> {
        let fail = |stage: &str, reason: String| Error::Build {
            stage: stage.into(),
            reason,
        };
        if self.conv1_kernels == 0 || self.conv1_size == 0 || self.pool == 0 || self.fc == 0 {
            return Err(fail("path", "widths, kernel size and pool must be positive".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.c_mid == 0 || s.c_out == 0 || s.repeats == 0 {
                return Err(fail(&format!("res{}", i + 1), format!("invalid stage {s:?}")));
            }
        }
        let after_conv = (t + 1)
            .checked_sub(self.conv1_size)
            .filter(|&l| l >= 1)
            .ok_or_else(|| fail("conv1", format!("{t} steps are shorter than the {}-step kernel", self.conv1_size)))?;
        pool_len(after_conv, self.pool, self.pool)
            .filter(|&l| l >= 1)
            .ok_or_else(|| fail("maxpool", format!("{after_conv} steps cannot be pooled by {}", self.pool)))?;
        Ok(())
    }

    /// Time steps entering the residual stages.
    pub fn pooled_len(&self, t: usize) -> usize {
        (t + 1 - self.conv1_size - self.pool) / self.pool + 1
    }
}

/// conv1 → batch norm → relu → max-pool → residual stages → global average
/// pool → dense → relu.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub pool: usize,
    pub blocks: Vec<ResidualBlock>,
    pub fc: Dense,
    pub window: usize,
}

impl Path {
    pub(crate) fn build(b: &mut Builder, cfg: &PathConfig, channels: usize, window: usize) -> Result<Self> {
        cfg.validate(window)?;
        let conv1 = b.conv(
            "conv1",
            ConvShape {
                kernels: cfg.conv1_kernels,
                size: cfg.conv1_size,
                channels,
                stride: 1,
                pad: 0,
            },
            false,
        );
        let bn1 = b.batchnorm("bn1", cfg.conv1_kernels);
        let mut blocks = Vec::new();
        let mut c_in = cfg.conv1_kernels;
        for (i, s) in cfg.stages.iter().enumerate() {
            for r in 0..s.repeats {
                let mut scope = b.scope(&format!("res{}.{r}", i + 1));
                blocks.push(ResidualBlock::build(&mut scope, c_in, s.c_mid, s.c_out));
                c_in = s.c_out;
            }
        }
        let fc = b.dense("fc", c_in, cfg.fc);
        Ok(Self {
            conv1,
            bn1,
            pool: cfg.pool,
            blocks,
            fc,
            window,
        })
    }

    /// `[N, window, D]` to `[N, fc]`.
    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let mut h = self.conv1.forward(store, tape, x)?;
        h = self.bn1.forward(store, tape, h)?;
        h = tape.relu(h)?;
        h = tape.maxpool1d(h, self.pool, self.pool)?;
        for block in &self.blocks {
            h = block.forward(store, tape, h)?;
        }
        let pooled = tape.global_avg_pool(h)?;
        let z = self.fc.forward(store, tape, pooled)?;
        tape.relu(z)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArnConfig {
    pub t_narrow: usize,
    pub t_wide: usize,
    pub path: PathConfig,
}

impl Default for ArnConfig {
    fn default() -> Self {
        Self {
            t_narrow: 32,
            t_wide: 96,
            path: PathConfig::table(),
        }
    }
}

impl ArnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_narrow > self.t_wide {
            return Err(Error::Config(format!(
                "narrow window {} is longer than wide window {}",
                self.t_narrow, self.t_wide
            )));
        }
        self.path.validate(self.t_narrow)
    }
}

/// Two residual paths over the narrow and wide windows whose outputs are
/// concatenated before the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Arn {
    pub narrow: Path,
    pub wide: Path,
    pub head: Dense,
}

impl Arn {
    pub(crate) fn build(b: &mut Builder, cfg: &ArnConfig, channels: usize, classes: usize) -> Result<Self> {
        cfg.validate()?;
        let narrow = Path::build(&mut b.scope("narrow"), &cfg.path, channels, cfg.t_narrow)?;
        let wide = Path::build(&mut b.scope("wide"), &cfg.path, channels, cfg.t_wide)?;
        let head = b.dense("head", 2 * cfg.path.fc, classes);
        Ok(Self { narrow, wide, head })
    }

    /// Concatenated path features, `[N, 2·fc]`.
    pub fn features<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        narrow: Var,
        wide: Var,
    ) -> Result<Var> {
        let a = self.narrow.forward(store, tape, narrow)?;
        let b = self.wide.forward(store, tape, wide)?;
        tape.concat(a, b)
    }
}
