//! TOML run configuration. Unknown keys are rejected everywhere.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use qlink::engine::EvolveOptions;
use qlink::{Boundary, GaugeSpin, LatticeSpec};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeBlock,
    #[serde(default)]
    pub couplings: CouplingBlock,
    pub protocol: ProtocolBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub tolerance: EvolveOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qmm: Option<QmmBlock>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeBlock {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "S", default = "half")]
    pub s: f64,
    #[serde(default = "obc")]
    pub boundary: String,
}

fn half() -> f64 {
    0.5
}

fn obc() -> String {
    "obc".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingBlock {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub h: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl Default for CouplingBlock {
    fn default() -> Self {
        CouplingBlock { j: 1.0, k: 4.0, h: 0.5, eps1: 1.0, eps2: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Simple,
    Full,
    Quench,
    Effective,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolBlock {
    pub kind: ProtocolKind,
    /// `1 / (K T_F)`; exclusive with `T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    /// Base step `T`.
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Drive whose expansion an effective run uses.
    #[serde(default = "full_kind")]
    pub base: ProtocolKind,
    #[serde(default = "all_orders")]
    pub orders: Vec<usize>,
}

fn full_kind() -> ProtocolKind {
    ProtocolKind::Full
}

fn all_orders() -> Vec<usize> {
    vec![0, 1, 2]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub n_periods: usize,
    /// Interleaved lattice pattern, e.g. `"uduudddd"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    /// Kink/defect configuration over `{., k, d}`, e.g. `"dk......"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qmm: Option<String>,
    #[serde(default)]
    pub observables: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    /// Evolve inside the zero-momentum block of this translation (sites).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<usize>,
    /// Output directory; `--out` takes precedence.
    #[serde(default = "default_out")]
    pub out: String,
}

fn default_out() -> String {
    "out".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// `frequency`, `h`, `J`, `K` or `T`.
    pub parameter: String,
    pub values: Vec<f64>,
    /// Column whose lifetime is tabulated.
    pub column: String,
    /// Absolute threshold; default `e^-0.4` times the initial value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmmBlock {
    #[serde(default = "first")]
    pub order: qlink::qmm::QmmOrder,
    /// Reduced-model-only evolution (no lattice run).
    #[serde(default)]
    pub reduced_only: bool,
}

fn first() -> qlink::qmm::QmmOrder {
    qlink::qmm::QmmOrder::First
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Checks that need no allocation beyond the config itself.
    pub fn validate(&self) -> Result<()> {
        self.spec()?;
        let p = &self.protocol;
        match (p.frequency, p.t) {
            (Some(_), Some(_)) => bail!("give either protocol.frequency or protocol.T, not both"),
            (None, None) => bail!("protocol.frequency or protocol.T is required"),
            (Some(f), None) if !(f > 0.0 && f.is_finite()) => bail!("frequency must be positive"),
            (None, Some(t)) if !(t > 0.0 && t.is_finite()) => bail!("T must be positive"),
            _ => {}
        }
        if p.kind == ProtocolKind::Effective {
            if p.base == ProtocolKind::Effective || p.base == ProtocolKind::Quench {
                bail!("protocol.base must be simple or full");
            }
            if p.orders.is_empty() || p.orders.iter().any(|&o| o > 2) {
                bail!("protocol.orders must be a non-empty subset of 0, 1, 2");
            }
        }
        match (&self.run.pattern, &self.run.qmm) {
            (Some(_), Some(_)) => bail!("give either run.pattern or run.qmm, not both"),
            (None, None) => bail!("run.pattern or run.qmm is required"),
            _ => {}
        }
        if self.run.stride == Some(0) {
            bail!("run.stride must be at least 1");
        }
        if !(self.tolerance.tol > 0.0) {
            bail!("tolerance.tol must be positive");
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<LatticeSpec> {
        let spin = GaugeSpin::try_from(self.lattice.s)?;
        let boundary: Boundary = self.lattice.boundary.parse()?;
        Ok(LatticeSpec::new(self.lattice.l, spin, boundary)?)
    }

    pub fn couplings(&self) -> qlink::operators::Couplings {
        let c = &self.couplings;
        qlink::operators::Couplings { j: c.j, k: c.k, h: c.h, eps1: c.eps1, eps2: c.eps2 }
    }

    /// `T_F` from the frequency axis, or from `T` and the protocol's period.
    pub fn period(&self) -> f64 {
        match (self.protocol.frequency, self.protocol.t) {
            (Some(f), _) => 1.0 / (self.couplings.k * f),
            (None, Some(t)) => t * self.steps_per_period(),
            _ => unreachable!("validated"),
        }
    }

    /// `T_F / T` of the drive in use.
    pub fn steps_per_period(&self) -> f64 {
        let r = 2.0 + self.couplings.j / self.couplings.k;
        let kind = match self.protocol.kind {
            ProtocolKind::Effective => self.protocol.base,
            k => k,
        };
        match kind {
            ProtocolKind::Simple => r,
            ProtocolKind::Full => 4.0 * r,
            _ => 1.0,
        }
    }

    pub fn base_step(&self) -> f64 {
        self.period() / self.steps_per_period()
    }

    /// Set a swept parameter.
    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self> {
        let mut c = self.clone();
        match name {
            "frequency" => {
                c.protocol.frequency = Some(value);
                c.protocol.t = None;
            }
            "T" => {
                c.protocol.t = Some(value);
                c.protocol.frequency = None;
            }
            "h" => c.couplings.h = value,
            "J" => c.couplings.j = value,
            "K" => c.couplings.k = value,
            _ => bail!("cannot sweep {name:?}; use frequency, T, h, J or K"),
        }
        c.sweep = None;
        c.validate()?;
        Ok(c)
    }
}
