//! Run configuration, read from TOML. Unknown keys are rejected; unset
//! optional values fall back to the scenario preset.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptivity::MarkingPolicy;
use crate::boussinesq::IndicatorKind;
use crate::error::{Error, Result};
use crate::fitting::{DeltaPolicy, PotentialSign};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    Case1,
    Case2,
    Case3,
    Case4,
    VanKeken,
    Manufactured,
    Custom,
}

impl ScenarioId {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "case1" => ScenarioId::Case1,
            "case2" => ScenarioId::Case2,
            "case3" => ScenarioId::Case3,
            "case4" => ScenarioId::Case4,
            "van_keken" => ScenarioId::VanKeken,
            "manufactured" => ScenarioId::Manufactured,
            "custom" => ScenarioId::Custom,
            _ => return Err(Error::Config(format!("unknown scenario `{s}`"))),
        })
    }

    pub fn case_number(self) -> Option<u8> {
        match self {
            ScenarioId::Case1 => Some(1),
            ScenarioId::Case2 => Some(2),
            ScenarioId::Case3 => Some(3),
            ScenarioId::Case4 => Some(4),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    /// `[x0, x1, y0, y1]`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<[f64; 4]>,
    pub levels: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretisationSection {
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// interior penalty; `10 k^2` when unset
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    /// points per direction for estimator quadrature
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<usize>,
}

fn default_degree() -> usize {
    2
}

impl Default for DiscretisationSection {
    fn default() -> Self {
        DiscretisationSection {
            degree: default_degree(),
            penalty: None,
            quadrature: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittingSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<DeltaPolicy>,
    #[serde(default)]
    pub sign: PotentialSign,
    /// lower bound on the diffusivity seen by the estimator weights
    #[serde(default = "default_floor")]
    pub epsilon_floor: f64,
}

fn default_floor() -> f64 {
    1e-6
}

impl Default for FittingSection {
    fn default() -> Self {
        FittingSection {
            alpha: None,
            delta: None,
            sign: PotentialSign::Standard,
            epsilon_floor: default_floor(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    pub end: f64,
    /// Courant cap on the step, `dt <= cfl h_min / |v|_max`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptivitySection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_every")]
    pub every: usize,
    #[serde(default = "default_indicator")]
    pub indicator: IndicatorKind,
    #[serde(default)]
    pub marking: MarkingPolicy,
}

fn default_every() -> usize {
    1
}

fn default_indicator() -> IndicatorKind {
    IndicatorKind::Fitted
}

impl Default for AdaptivitySection {
    fn default() -> Self {
        AdaptivitySection {
            enabled: false,
            every: default_every(),
            indicator: default_indicator(),
            marking: MarkingPolicy::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// snapshot stride in steps, 0 for none
    #[serde(default)]
    pub vtk_every: usize,
}

fn default_dir() -> PathBuf {
    PathBuf::from("output")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            vtk_every: 0,
        }
    }
}

/// Linear flow `b = (a11 x + a12 y + c1, a21 x + a22 y + c2)` with the
/// standard initial and boundary data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSection {
    /// `[a11, a12, c1, a21, a22, c2]`
    pub convection: [f64; 6],
    #[serde(default)]
    pub source: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManufacturedKind {
    Smooth,
    Peak,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManufacturedSection {
    pub kind: ManufacturedKind,
    /// number of uniform refinements, starting at `mesh.levels`
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    /// also run the adaptive sequence with `adaptivity.marking`
    #[serde(default)]
    pub adaptive: bool,
}

fn default_cycles() -> usize {
    4
}

impl Default for ManufacturedSection {
    fn default() -> Self {
        ManufacturedSection {
            kind: ManufacturedKind::Smooth,
            cycles: default_cycles(),
            adaptive: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioId,
    #[serde(default)]
    pub seed: u64,
    pub mesh: MeshSection,
    #[serde(default)]
    pub discretisation: DiscretisationSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub fitting: FittingSection,
    pub time: TimeSection,
    #[serde(default)]
    pub adaptivity: AdaptivitySection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manufactured: Option<ManufacturedSection>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Preset for a scenario with its standard parameters.
    pub fn preset(scenario: ScenarioId) -> Self {
        let (levels, dt, end, cfl) = match scenario {
            ScenarioId::VanKeken => (4, 1.0, 2000.0, Some(0.5)),
            ScenarioId::Manufactured => (1, 1.0, 1.0, None),
            _ => (5, 0.01, 2.5, None),
        };
        RunConfig {
            scenario,
            seed: 0,
            mesh: MeshSection { domain: None, levels },
            discretisation: DiscretisationSection::default(),
            physics: PhysicsSection::default(),
            fitting: FittingSection::default(),
            time: TimeSection {
                dt,
                end,
                cfl,
                max_steps: None,
            },
            adaptivity: AdaptivitySection {
                enabled: scenario == ScenarioId::VanKeken,
                ..Default::default()
            },
            output: OutputSection::default(),
            custom: (scenario == ScenarioId::Custom).then(|| CustomSection {
                convection: [0.0, 1.0, 0.0, -1.0, 0.0, 0.0],
                source: 0.0,
            }),
            manufactured: (scenario == ScenarioId::Manufactured).then(ManufacturedSection::default),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.time.dt > 0.0 && self.time.dt.is_finite()) {
            return bad(format!("time.dt must be positive, got {}", self.time.dt));
        }
        if !(self.time.end > 0.0 && self.time.end.is_finite()) {
            return bad(format!("time.end must be positive, got {}", self.time.end));
        }
        if let Some(c) = self.time.cfl {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("time.cfl must be positive, got {c}"));
            }
        }
        if self.discretisation.degree == 0 {
            return bad("discretisation.degree must be at least 1".into());
        }
        if let Some(p) = self.discretisation.penalty {
            if !(p > 0.0 && p.is_finite()) {
                return bad(format!("discretisation.penalty must be positive, got {p}"));
            }
        }
        if self.discretisation.quadrature == Some(0) {
            return bad("discretisation.quadrature must be at least 1".into());
        }
        if let Some(e) = self.physics.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return bad(format!("physics.epsilon must be nonnegative, got {e}"));
            }
        }
        if !(self.fitting.epsilon_floor > 0.0 && self.fitting.epsilon_floor.is_finite()) {
            return bad("fitting.epsilon_floor must be positive".into());
        }
        if let Some(a) = self.fitting.alpha {
            if !a.is_finite() {
                return bad("fitting.alpha must be finite".into());
            }
        }
        if let Some(DeltaPolicy::Fixed(d)) = self.fitting.delta {
            if !(d >= 0.0 && d.is_finite()) {
                return bad(format!("fitting.delta value must be nonnegative, got {d}"));
            }
        }
        if let Some([x0, x1, y0, y1]) = self.mesh.domain {
            if !(x1 > x0 && y1 > y0) {
                return bad("mesh.domain must be [x0, x1, y0, y1] with x0 < x1, y0 < y1".into());
            }
        }
        self.adaptivity.marking.validate()?;
        if self.adaptivity.enabled && self.adaptivity.every == 0 {
            return bad("adaptivity.every must be at least 1".into());
        }
        match self.scenario {
            ScenarioId::Custom if self.custom.is_none() => bad("scenario `custom` needs a [custom] section".into()),
            ScenarioId::Manufactured if self.manufactured.is_none() => {
                bad("scenario `manufactured` needs a [manufactured] section".into())
            }
            s if s != ScenarioId::Custom && self.custom.is_some() => {
                bad("[custom] is only valid with scenario `custom`".into())
            }
            s if s != ScenarioId::Manufactured && self.manufactured.is_some() => {
                bad("[manufactured] is only valid with scenario `manufactured`".into())
            }
            ScenarioId::Manufactured if self.manufactured.as_ref().is_some_and(|m| m.cycles < 2) => {
                bad("manufactured.cycles must be at least 2".into())
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
scenario = "case1"

[mesh]
levels = 3

[fitting]
delta = { kind = "fixed", value = 0.1 }

[time]
dt = 0.01
end = 0.1

[adaptivity]
enabled = true
[adaptivity.marking]
strategy = "fraction_of_error"
refine_fraction = 0.3
"#;

    #[test]
    fn round_trip_is_identity() {
        let c = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.fitting.delta, Some(DeltaPolicy::Fixed(0.1)));
        let again = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        for s in [
            ScenarioId::Case2,
            ScenarioId::VanKeken,
            ScenarioId::Manufactured,
            ScenarioId::Custom,
        ] {
            let p = RunConfig::preset(s);
            assert_eq!(RunConfig::parse(&p.to_toml()).unwrap(), p);
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let bad = SAMPLE.replace("levels = 3", "levels = 3\nlevel = 4");
        let e = RunConfig::parse(&bad).unwrap_err();
        assert!(e.to_string().contains("level"), "{e}");
    }

    #[test]
    fn nonpositive_time_is_rejected() {
        assert!(RunConfig::parse(&SAMPLE.replace("dt = 0.01", "dt = 0.0")).is_err());
        assert!(RunConfig::parse(&SAMPLE.replace("end = 0.1", "end = -1.0")).is_err());
    }

    #[test]
    fn custom_needs_its_section() {
        let s = SAMPLE.replace("\"case1\"", "\"custom\"");
        assert!(RunConfig::parse(&s).is_err());
    }
}
