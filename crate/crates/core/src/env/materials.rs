//! Built-in material presets and the cube layouts for each task.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical and acoustic description of a cube material.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialPreset {
    pub name: String,
    /// Hz.
    pub modal_freqs: Vec<f64>,
    /// 1/s.
    pub modal_dampings: Vec<f64>,
    pub modal_gains: Vec<f64>,
    /// kg/m² (planar).
    pub density: f64,
    pub restitution: f64,
}

impl MaterialPreset {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        let n = self.modal_freqs.len();
        if n == 0 || self.modal_dampings.len() != n || self.modal_gains.len() != n {
            return Err(Error::Config(format!("material `{}`: modal lists must be nonempty and equal length", self.name)));
        }
        if self.modal_freqs.iter().any(|&f| !(f > 0.0 && f < nyquist)) {
            return Err(Error::Config(format!("material `{}`: modal frequency outside (0, {nyquist})", self.name)));
        }
        if self.modal_dampings.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config(format!("material `{}`: dampings must be positive", self.name)));
        }
        if self.modal_gains.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::Config(format!("material `{}`: gains must be non-negative", self.name)));
        }
        if !(self.density > 0.0) {
            return Err(Error::Config(format!("material `{}`: density must be positive", self.name)));
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return Err(Error::Config(format!("material `{}`: restitution must be in [0, 1]", self.name)));
        }
        Ok(())
    }

    pub fn color(&self) -> [u8; 3] {
        match self.name.as_str() {
            "ceramic" => [40, 90, 220],
            "wood" => [150, 100, 50],
            "metal" => [120, 125, 135],
            _ => [60, 160, 60],
        }
    }
}

/// High, sparse modes with little damping.
pub fn ceramic() -> MaterialPreset {
    MaterialPreset {
        name: "ceramic".into(),
        modal_freqs: vec![2400.0, 3900.0, 6100.0, 7400.0],
        modal_dampings: vec![18.0, 24.0, 30.0, 40.0],
        modal_gains: vec![1.0, 0.6, 0.4, 0.25],
        density: 30.0,
        restitution: 0.5,
    }
}

/// Mid-range modes that die out quickly.
pub fn wood() -> MaterialPreset {
    MaterialPreset {
        name: "wood".into(),
        modal_freqs: vec![420.0, 980.0, 1650.0],
        modal_dampings: vec![90.0, 120.0, 160.0],
        modal_gains: vec![1.0, 0.5, 0.3],
        density: 15.0,
        restitution: 0.3,
    }
}

/// Dense high modes that ring for a long time.
pub fn metal() -> MaterialPreset {
    MaterialPreset {
        name: "metal".into(),
        modal_freqs: vec![1800.0, 2350.0, 3100.0, 4200.0, 5300.0],
        modal_dampings: vec![3.0, 4.0, 5.0, 6.0, 8.0],
        modal_gains: vec![1.0, 0.8, 0.7, 0.5, 0.4],
        density: 60.0,
        restitution: 0.6,
    }
}

/// Cube description used to populate a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeSpec {
    pub material: Arc<MaterialPreset>,
    /// m.
    pub side: f64,
    /// kg.
    pub mass: f64,
    pub color: [u8; 3],
}

impl CubeSpec {
    pub fn from_material(material: MaterialPreset, side: f64) -> Self {
        let mass = material.density * side * side;
        let color = material.color();
        Self {
            material: Arc::new(material),
            side,
            mass,
            color,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.side > 0.0) || !(self.mass > 0.0) {
            return Err(Error::Config("cube side and mass must be positive".into()));
        }
        Ok(())
    }
}

/// Scene variants: three mixed cubes for exploration, one cube per
/// material for adaptation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    ThreeCubes,
    Ceramic,
    Wood,
    Metal,
}

impl Task {
    pub fn cube_specs(self, side: f64) -> Vec<CubeSpec> {
        match self {
            Task::ThreeCubes => vec![
                CubeSpec::from_material(ceramic(), side),
                CubeSpec::from_material(wood(), side),
                CubeSpec::from_material(metal(), side),
            ],
            Task::Ceramic => vec![CubeSpec::from_material(ceramic(), side)],
            Task::Wood => vec![CubeSpec::from_material(wood(), side)],
            Task::Metal => vec![CubeSpec::from_material(metal(), side)],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::ThreeCubes => "three-cubes",
            Task::Ceramic => "ceramic",
            Task::Wood => "wood",
            Task::Metal => "metal",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "three-cubes" => Ok(Task::ThreeCubes),
            "ceramic" => Ok(Task::Ceramic),
            "wood" => Ok(Task::Wood),
            "metal" => Ok(Task::Metal),
            other => Err(Error::Usage(format!(
                "unknown task `{other}` (expected three-cubes, ceramic, wood, metal)"
            ))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_at_16k() {
        for m in [ceramic(), wood(), metal()] {
            m.validate(16_000).unwrap();
            assert!((3..=5).contains(&m.modal_freqs.len()));
        }
    }

    #[test]
    fn nyquist_enforced() {
        let mut m = ceramic();
        m.modal_freqs[0] = 8000.0;
        assert!(m.validate(16_000).is_err());
    }

    #[test]
    fn task_round_trips_through_str() {
        for t in [Task::ThreeCubes, Task::Ceramic, Task::Wood, Task::Metal] {
            assert_eq!(t.as_str().parse::<Task>().unwrap(), t);
        }
        assert_eq!(Task::ThreeCubes.cube_specs(0.08).len(), 3);
    }
}
