//! Scenario files.
//!
//! A scenario is a TOML document. Every table except `potential` and
//! `energy` may be omitted; omitted values come from [`defaults`].
//!
//! ```toml
//! schema_version = 1
//! name = "double-bump"
//! commands = ["flow", "resolvent-scan"]
//!
//! [potential]
//! family = "double-bump"
//! amplitude = 2.0
//! offset = 2.0
//! v2 = [{ kind = "gaussian", amplitude = 1.0, center = [0.0], widths = [1.0] }]
//!
//! [energy]
//! e0 = 1.0
//! ```

use std::fmt;
use std::path::Path;

use scl_core::cutoff::Plateau;
use scl_core::helmholtz::{Gamma, Profile, SourceSpec};
use scl_core::measure::FourierConvention;
use scl_core::operator::CapProfile;
use scl_core::potentials::{Family, Field, PotentialModel, Term};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Physical and numerical defaults, in one place.
pub mod defaults {
    /// Cone opening of the incoming and outgoing regions.
    pub const SIGMA: f64 = 0.5;
    /// Cone opening used by the escape function, which needs `σ² sup J < inf J`.
    pub const ESCAPE_SIGMA: f64 = 0.25;
    /// Weight exponent of the resolvent and radiation norms.
    pub const DELTA: f64 = 1.0;
    /// Width of the eigenvalue-free strip in units of `h`.
    pub const BETA: f64 = 1.0;
    /// `Im z = ε₀ h` for resolvent scans.
    pub const EPS0: f64 = 1e-2;
    /// Decay rate of the potentials; Gaussians admit any value.
    pub const RHO: f64 = 2.0;
    pub const H_LADDER: [f64; 4] = [0.2, 0.1, 0.05, 0.025];
    pub const FLOW_RTOL: f64 = 1e-12;
    pub const ENERGY_TOL: f64 = 1e-8;
    pub const SHELL_TOL: f64 = 1e-10;
    pub const FD_STEP: f64 = 1e-2;
    pub const ESCAPE_RESIDUAL: f64 = 1e-3;
    pub const RADIATION_RATIO: f64 = 0.05;
    pub const MEASURE_GAP: f64 = 0.1;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Flow,
    Damping,
    Escape,
    ResolventScan,
    EigFree,
    Incoming,
    Helmholtz,
    MeasureCompare,
    Report,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Flow,
        Command::Damping,
        Command::Escape,
        Command::ResolventScan,
        Command::EigFree,
        Command::Incoming,
        Command::Helmholtz,
        Command::MeasureCompare,
        Command::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Flow => "flow",
            Command::Damping => "damping",
            Command::Escape => "escape",
            Command::ResolventScan => "resolvent-scan",
            Command::EigFree => "eig-free",
            Command::Incoming => "incoming",
            Command::Helmholtz => "helmholtz",
            Command::MeasureCompare => "measure-compare",
            Command::Report => "report",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Free,
    DoubleBump,
    RingBump,
    GaussianSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub family: FamilyName,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub amplitude: Option<f64>,
    /// Bump centres at `±offset` for `double-bump`.
    #[serde(default)]
    pub offset: Option<f64>,
    #[serde(default)]
    pub radius: Option<f64>,
    /// Terms of `V1` for `gaussian-sum`.
    #[serde(default)]
    pub v1: Vec<Term>,
    #[serde(default)]
    pub v2: Vec<Term>,
    #[serde(default = "rho")]
    pub rho: f64,
}

fn rho() -> f64 {
    defaults::RHO
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    pub e0: f64,
    /// `E_h = E₀ + h E₁` with `E₁ = e1[0] + i e1[1]`.
    #[serde(default)]
    pub e1: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub half_width: f64,
    /// Derived from the resolution rule when absent.
    pub points_per_axis: Option<usize>,
    pub cap_width: f64,
    pub cap_strength: f64,
    pub cap_profile: CapProfile,
    pub order: usize,
    pub xi_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            half_width: 12.0,
            points_per_axis: None,
            cap_width: 3.0,
            cap_strength: 1.0,
            cap_profile: CapProfile::Cubic,
            order: 2,
            xi_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub gamma: Gamma,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "unit_gaussian")]
    pub profile: Profile,
}

fn one() -> f64 {
    1.0
}

fn unit_gaussian() -> Profile {
    Profile::Gaussian { width: 1.0 }
}

impl SourceConfig {
    pub fn spec(&self) -> SourceSpec {
        SourceSpec { gamma: self.gamma.clone(), amplitude: self.amplitude, profile: self.profile }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionConfig {
    /// Region radius; the escape radius of the model when absent.
    pub r: Option<f64>,
    pub d: f64,
    pub sigma: f64,
    pub escape_sigma: f64,
    pub delta: f64,
    pub beta: f64,
    pub eps0: f64,
    /// Energy window `I` for strip and peak searches; `E₀ (1 ± 0.1)` when absent.
    pub interval: Option<[f64; 2]>,
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig {
            r: None,
            d: 0.0,
            sigma: defaults::SIGMA,
            escape_sigma: defaults::ESCAPE_SIGMA,
            delta: defaults::DELTA,
            beta: defaults::BETA,
            eps0: defaults::EPS0,
            interval: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub flow_rtol: f64,
    pub energy_tol: f64,
    pub shell_tol: f64,
    pub fd_step: f64,
    pub escape_residual: f64,
    pub radiation_ratio: f64,
    pub measure_gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            flow_rtol: defaults::FLOW_RTOL,
            energy_tol: defaults::ENERGY_TOL,
            shell_tol: defaults::SHELL_TOL,
            fd_step: defaults::FD_STEP,
            escape_residual: defaults::ESCAPE_RESIDUAL,
            radiation_ratio: defaults::RADIATION_RATIO,
            measure_gap: defaults::MEASURE_GAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Start {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub horizon: f64,
    pub sample_dt: f64,
    /// One start at the origin moving along the first axis when empty.
    pub starts: Vec<Start>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { horizon: 100.0, sample_dt: 0.5, starts: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DampingConfig {
    pub t_max: f64,
    /// Horizon of the averaged-damping fit.
    pub horizon: f64,
    pub points_per_axis: usize,
    pub directions: usize,
    /// Horizon used to decide that a sample is trapped.
    pub classify_horizon: f64,
    /// Random samples for the escape-function check.
    pub escape_samples: usize,
}

impl Default for DampingConfig {
    fn default() -> Self {
        DampingConfig {
            t_max: 102.4,
            horizon: 200.0,
            points_per_axis: 64,
            directions: 16,
            classify_horizon: 50.0,
            escape_samples: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    pub horizon: f64,
    pub dt: f64,
    pub resolution: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub convention: FourierConvention,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            horizon: 0.6,
            dt: 1e-3,
            resolution: 128,
            r_min: 0.3,
            r_max: 0.7,
            convention: FourierConvention::Plain,
        }
    }
}

/// Plateau `[outer_lo, inner_lo, inner_hi, outer_hi]`.
pub type PlateauSpec = [f64; 4];

pub fn plateau(p: &PlateauSpec) -> Plateau {
    Plateau::new(p[0], p[1], p[2], p[3])
}

/// Product symbols for the incoming block norm. `ω₋` is a plateau in `|x|`
/// times a plateau in the radial momentum `ξ·x/|x|`; `ω` is a plateau in
/// `|x|` times a plateau in `|ξ|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IncomingConfig {
    pub minus_position: PlateauSpec,
    pub minus_momentum: PlateauSpec,
    pub omega_position: PlateauSpec,
    pub omega_momentum: PlateauSpec,
    /// Radius of the region that `ω` must avoid.
    pub omega_radius: f64,
}

impl Default for IncomingConfig {
    fn default() -> Self {
        IncomingConfig {
            minus_position: [4.0, 5.5, 6.0, 7.5],
            minus_momentum: [-2.5, -1.05, -0.95, -0.05],
            omega_position: [-1.5, -0.5, 0.5, 1.5],
            omega_momentum: [-3.5, -1.2, 1.2, 3.5],
            omega_radius: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub commands: Vec<Command>,
    pub potential: PotentialConfig,
    pub energy: EnergyConfig,
    #[serde(default = "h_ladder")]
    pub h_ladder: Vec<f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub source: Option<SourceConfig>,
    #[serde(default)]
    pub regions: RegionConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub damping: DampingConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub incoming: IncomingConfig,
}

fn h_ladder() -> Vec<f64> {
    defaults::H_LADDER.to_vec()
}

/// A schema violation, naming the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        ConfigError { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "field `{}`: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ConfigError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| {
            let field = missing_field(e.message()).unwrap_or_default();
            ConfigError { field, message: e.to_string().trim_end().to_string() }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        Scenario::from_toml(&text)
    }

    pub fn dim(&self) -> usize {
        match self.potential.family {
            FamilyName::DoubleBump => 1,
            FamilyName::RingBump => 2,
            _ => self.potential.dim.unwrap_or(1),
        }
    }

    pub fn model(&self) -> Result<PotentialModel, ConfigError> {
        let p = &self.potential;
        let need = |v: Option<f64>, field: &str| v.ok_or_else(|| ConfigError::new(field, "required by this family"));
        let base = match p.family {
            FamilyName::Free => PotentialModel::free(self.dim()),
            FamilyName::DoubleBump => PotentialModel::double_bump(
                need(p.amplitude, "potential.amplitude")?,
                need(p.offset, "potential.offset")?,
            ),
            FamilyName::RingBump => PotentialModel::ring_bump(
                need(p.amplitude, "potential.amplitude")?,
                need(p.radius, "potential.radius")?,
            ),
            FamilyName::GaussianSum => {
                PotentialModel::new(self.dim(), Family::CustomSum, Field::new(p.v1.clone()), Field::zero(), 1.0)
                    .map_err(|e| ConfigError::new("potential.v1", e.to_string()))?
            }
        };
        let mut model = base.with_v2(Field::new(p.v2.clone()));
        model.rho = p.rho;
        PotentialModel::new(model.dim, model.family, model.v1.clone(), model.v2.clone(), model.rho)
            .map_err(|e| ConfigError::new("potential.v2", e.to_string()))?;
        Ok(model)
    }

    /// The window `I` around `E₀`.
    pub fn interval(&self) -> (f64, f64) {
        match self.regions.interval {
            Some([lo, hi]) => (lo, hi),
            None => (0.9 * self.energy.e0, 1.1 * self.energy.e0),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::new(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let dim = self.dim();
        if !(dim == 1 || dim == 2) {
            return Err(ConfigError::new("potential.dim", "only 1 and 2 dimensions are supported"));
        }
        if let (Some(d), FamilyName::DoubleBump | FamilyName::RingBump) = (self.potential.dim, self.potential.family) {
            if d != dim {
                return Err(ConfigError::new("potential.dim", format!("family fixes the dimension to {dim}")));
            }
        }
        if !(self.energy.e0 > 0.0) {
            return Err(ConfigError::new("energy.e0", "must be positive"));
        }
        if self.h_ladder.is_empty() || self.h_ladder.iter().any(|h| !(*h > 0.0 && *h < 1.0)) {
            return Err(ConfigError::new("h_ladder", "needs at least one value in (0, 1)"));
        }
        if self.h_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ConfigError::new("h_ladder", "must be strictly decreasing"));
        }
        let rho = self.potential.rho;
        if !(rho > 0.0) {
            return Err(ConfigError::new("potential.rho", "must be positive"));
        }
        let delta = self.regions.delta;
        if !(delta > 0.5 && delta < 0.5 * (1.0 + rho)) {
            return Err(ConfigError::new(
                "regions.delta",
                format!("δ = {delta} must lie in (1/2, (1+ρ)/2) = (0.5, {})", 0.5 * (1.0 + rho)),
            ));
        }
        if !(-1.0..=1.0).contains(&self.regions.sigma) {
            return Err(ConfigError::new("regions.sigma", "cosine threshold must lie in [-1, 1]"));
        }
        if !(self.regions.escape_sigma > 0.0 && self.regions.escape_sigma < 0.5) {
            return Err(ConfigError::new("regions.escape_sigma", "must lie in (0, 1/2)"));
        }
        if self.regions.beta < 0.0 || !(self.regions.eps0 > 0.0) {
            return Err(ConfigError::new("regions", "β must be non-negative and ε₀ positive"));
        }
        let (lo, hi) = self.interval();
        if !(hi > lo) {
            return Err(ConfigError::new("regions.interval", "must be a nonempty interval"));
        }
        let g = &self.grid;
        if !(g.order == 2 || g.order == 4) {
            return Err(ConfigError::new("grid.order", "stencil order must be 2 or 4"));
        }
        if !(g.half_width > 0.0) || !(g.cap_width >= 0.0 && g.cap_width < g.half_width) || g.cap_strength < 0.0 {
            return Err(ConfigError::new("grid", "absorbing layer must lie strictly inside the box"));
        }
        if let Some(src) = &self.source {
            if src.gamma.ambient_dim() != dim {
                return Err(ConfigError::new("source.gamma", format!("points must have dimension {dim}")));
            }
        }
        for (k, s) in self.flow.starts.iter().enumerate() {
            if s.x.len() != dim || s.xi.len() != dim {
                return Err(ConfigError::new(
                    &format!("flow.starts[{k}]"),
                    format!("x and xi must have dimension {dim}"),
                ));
            }
        }
        if !(self.measure.dt > 0.0 && self.measure.horizon > self.measure.dt) {
            return Err(ConfigError::new("measure", "needs 0 < dt < horizon"));
        }
        self.model()?;
        Ok(())
    }
}

fn missing_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("missing field `")?;
    Some(rest.split('`').next()?.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
name = "free"
[potential]
family = "free"
[energy]
e0 = 1.0
"#;

    #[test]
    fn defaults_fill_in() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.regions.sigma, 0.5);
        assert_eq!(s.regions.delta, 1.0);
        assert_eq!(s.regions.beta, 1.0);
        assert_eq!(s.regions.eps0, 1e-2);
        assert!(s.commands.is_empty());
        assert_eq!(s.h_ladder, vec![0.2, 0.1, 0.05, 0.025]);
        assert_eq!(s.interval(), (0.9, 1.1));
    }

    #[test]
    fn missing_energy_names_the_field() {
        let text = MINIMAL.replace("[energy]\ne0 = 1.0\n", "");
        let e = Scenario::from_toml(&text).unwrap_err();
        assert_eq!(e.field, "energy");
    }

    #[test]
    fn delta_outside_window_is_rejected() {
        let text = format!("{MINIMAL}[regions]\ndelta = 0.4\n");
        assert_eq!(Scenario::from_toml(&text).unwrap_err().field, "regions.delta");
        let text = MINIMAL.replace("family = \"free\"", "family = \"free\"\nrho = 1.0");
        assert_eq!(Scenario::from_toml(&text).unwrap_err().field, "regions.delta");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("e0 = 1.0", "e0 = 1.0\nenergy_typo = 2");
        assert!(Scenario::from_toml(&text).unwrap_err().message.contains("energy_typo"));
    }

    #[test]
    fn family_parameters_are_required() {
        let text = MINIMAL.replace("family = \"free\"", "family = \"double-bump\"\namplitude = 2.0");
        assert_eq!(Scenario::from_toml(&text).unwrap_err().field, "potential.offset");
    }
}
