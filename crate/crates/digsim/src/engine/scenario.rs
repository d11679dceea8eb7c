//! Scenario schema: YAML parsing, validation, and resolution into runtime
//! configuration.
//!
//! The file describes the seed, timestep, terrain, soil materials, and the
//! excavators with their sensor suites. Everything except the excavator list
//! has defaults, and unknown keys anywhere are rejected.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::Deserialize;

use super::EngineError;
use crate::excavator::{ExcavatorModel, JointDynamicsParams, Link, ShovelGeometry};
use crate::sensors::{SensorKind, SensorSpec};
use crate::soil::{SoilMaterial, DEFAULT_SLIP_MODULUS, DEFAULT_SWELL_FACTOR};
use crate::terrain::TerrainParams;

fn default_dt() -> f64 {
    0.01
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default)]
    terrain: TerrainSection,
    #[serde(default)]
    materials: Vec<MaterialSection>,
    #[serde(rename = "Excavator", alias = "excavators", default)]
    excavators: Vec<ExcavatorSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TerrainSection {
    width_m: f64,
    length_m: f64,
    resolution_m: f64,
    cell_height_m: f64,
    initial_height_m: f64,
    material: String,
}

impl Default for TerrainSection {
    fn default() -> Self {
        let p = TerrainParams::default();
        Self {
            width_m: p.width_m,
            length_m: p.length_m,
            resolution_m: p.resolution_m,
            cell_height_m: p.cell_height_m,
            initial_height_m: p.initial_height_m,
            material: p.material,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialSection {
    name: String,
    young_modulus_pa: f64,
    friction_angle_deg: f64,
    cohesion_pa: f64,
    density_kg_m3: f64,
    #[serde(default = "default_swell")]
    swell_factor: f64,
    #[serde(default = "default_slip")]
    slip_modulus: f64,
}

fn default_swell() -> f64 {
    DEFAULT_SWELL_FACTOR
}

fn default_slip() -> f64 {
    DEFAULT_SLIP_MODULUS
}

fn default_location() -> String {
    "CHASSIS".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExcavatorSection {
    id: String,
    #[serde(rename = "type")]
    kind: String,
    offset: Vec<f64>,
    #[serde(default)]
    rotation: Vec<f64>,
    /// Optional YAML file with the same schema as `model`; inline `model`
    /// values win on conflicts.
    #[serde(default)]
    model_file: Option<String>,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    sensors: Vec<SensorSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModelSection {
    boom_length_m: Option<f64>,
    arm_length_m: Option<f64>,
    bucket_length_m: Option<f64>,
    boom_mass_kg: Option<f64>,
    arm_mass_kg: Option<f64>,
    bucket_link_mass_kg: Option<f64>,
    machine_mass_kg: Option<f64>,
    slew_axis_height_m: Option<f64>,
    track_gauge_m: Option<f64>,
    track_length_m: Option<f64>,
    track_width_m: Option<f64>,
    track_speed_max_m_s: Option<f64>,
    bucket_width_m: Option<f64>,
    bucket_capacity_m3: Option<f64>,
    plow_width_m: Option<f64>,
    plow_max_depth_m: Option<f64>,
    slew_rate_max_rad_s: Option<f64>,
    boom_rate_max_rad_s: Option<f64>,
    arm_rate_max_rad_s: Option<f64>,
    bucket_rate_max_rad_s: Option<f64>,
    boom_limits_rad: Option<[f64; 2]>,
    arm_limits_rad: Option<[f64; 2]>,
    bucket_limits_rad: Option<[f64; 2]>,
    rolling_resistance: Option<f64>,
    joint_dynamics: Option<JointDynamicsParams>,
}

impl ModelSection {
    /// Overlay `self` on top of `base`: inline values win.
    fn merged_over(&self, base: &ModelSection) -> ModelSection {
        macro_rules! pick {
            ($field:ident) => {
                self.$field.or(base.$field)
            };
        }
        ModelSection {
            boom_length_m: pick!(boom_length_m),
            arm_length_m: pick!(arm_length_m),
            bucket_length_m: pick!(bucket_length_m),
            boom_mass_kg: pick!(boom_mass_kg),
            arm_mass_kg: pick!(arm_mass_kg),
            bucket_link_mass_kg: pick!(bucket_link_mass_kg),
            machine_mass_kg: pick!(machine_mass_kg),
            slew_axis_height_m: pick!(slew_axis_height_m),
            track_gauge_m: pick!(track_gauge_m),
            track_length_m: pick!(track_length_m),
            track_width_m: pick!(track_width_m),
            track_speed_max_m_s: pick!(track_speed_max_m_s),
            bucket_width_m: pick!(bucket_width_m),
            bucket_capacity_m3: pick!(bucket_capacity_m3),
            plow_width_m: pick!(plow_width_m),
            plow_max_depth_m: pick!(plow_max_depth_m),
            slew_rate_max_rad_s: pick!(slew_rate_max_rad_s),
            boom_rate_max_rad_s: pick!(boom_rate_max_rad_s),
            arm_rate_max_rad_s: pick!(arm_rate_max_rad_s),
            bucket_rate_max_rad_s: pick!(bucket_rate_max_rad_s),
            boom_limits_rad: pick!(boom_limits_rad),
            arm_limits_rad: pick!(arm_limits_rad),
            bucket_limits_rad: pick!(bucket_limits_rad),
            rolling_resistance: pick!(rolling_resistance),
            joint_dynamics: self.joint_dynamics.or(base.joint_dynamics),
        }
    }

    fn build(&self) -> ExcavatorModel {
        let mut m = ExcavatorModel::default();
        let set = |dst: &mut f64, src: &Option<f64>| {
            if let Some(v) = src {
                *dst = *v;
            }
        };
        set(&mut m.link_lengths[0], &self.boom_length_m);
        set(&mut m.link_lengths[1], &self.arm_length_m);
        set(&mut m.link_lengths[2], &self.bucket_length_m);
        set(&mut m.link_masses[0], &self.boom_mass_kg);
        set(&mut m.link_masses[1], &self.arm_mass_kg);
        set(&mut m.link_masses[2], &self.bucket_link_mass_kg);
        set(&mut m.machine_mass, &self.machine_mass_kg);
        set(&mut m.slew_axis_height, &self.slew_axis_height_m);
        set(&mut m.track_gauge, &self.track_gauge_m);
        set(&mut m.track_length, &self.track_length_m);
        set(&mut m.track_width, &self.track_width_m);
        set(&mut m.track_speed_max, &self.track_speed_max_m_s);
        set(&mut m.plow_width, &self.plow_width_m);
        set(&mut m.plow_max_depth, &self.plow_max_depth_m);
        set(&mut m.omega_max[0], &self.slew_rate_max_rad_s);
        set(&mut m.omega_max[1], &self.boom_rate_max_rad_s);
        set(&mut m.omega_max[2], &self.arm_rate_max_rad_s);
        set(&mut m.omega_max[3], &self.bucket_rate_max_rad_s);
        set(&mut m.rolling_resistance, &self.rolling_resistance);
        if let Some(l) = self.boom_limits_rad {
            m.joint_limits[1] = (l[0], l[1]);
        }
        if let Some(l) = self.arm_limits_rad {
            m.joint_limits[2] = (l[0], l[1]);
        }
        if let Some(l) = self.bucket_limits_rad {
            m.joint_limits[3] = (l[0], l[1]);
        }
        if let Some(d) = self.joint_dynamics {
            m.joint_dynamics = d;
        }
        let width = self.bucket_width_m.unwrap_or(m.shovel.width);
        let capacity = self.bucket_capacity_m3.unwrap_or(m.shovel.capacity);
        m.shovel = ShovelGeometry::standard(width, m.link_lengths[2], capacity);
        m
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorSection {
    id: String,
    #[serde(rename = "type")]
    kind: SensorKind,
    topic: String,
    #[serde(default = "default_location")]
    location: String,
    #[serde(default)]
    noise: Vec<f64>,
    #[serde(default)]
    offset: Vec<f64>,
    #[serde(default)]
    rotation: Vec<f64>,
    rate_hz: Option<f64>,
    n_beams: Option<usize>,
    fov_deg: Option<f64>,
    max_range_m: Option<f64>,
}

/// A fully validated scenario, ready to build a world from.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub dt: f64,
    pub terrain: TerrainParams,
    pub materials: Vec<SoilMaterial>,
    pub excavators: Vec<ExcavatorConfig>,
}

#[derive(Debug, Clone)]
pub struct ExcavatorConfig {
    pub id: String,
    pub offset: Vector3<f64>,
    /// Spawn yaw, rad (the z component of the rotation field).
    pub yaw: f64,
    pub model: ExcavatorModel,
    pub sensors: Vec<SensorSpec>,
}

fn vec3(
    values: &[f64],
    owner: &str,
    field: &'static str,
    default: Vector3<f64>,
) -> Result<Vector3<f64>, EngineError> {
    match values.len() {
        0 => Ok(default),
        3 => Ok(Vector3::new(values[0], values[1], values[2])),
        n => Err(EngineError::FieldArity {
            owner: owner.to_string(),
            field,
            expected: 3,
            got: n,
        }),
    }
}

/// Parse and validate a scenario from YAML text.
///
/// Any `model_file` reference is resolved relative to the working directory;
/// use [`load_scenario_file`] to resolve relative to the scenario file.
pub fn load_scenario(yaml: &str) -> Result<ScenarioConfig, EngineError> {
    load_scenario_with_base(yaml, None)
}

fn load_scenario_with_base(yaml: &str, base: Option<&Path>) -> Result<ScenarioConfig, EngineError> {
    let file: ScenarioFile =
        serde_yaml::from_str(yaml).map_err(|e| EngineError::Parse(e.to_string()))?;

    if !(file.dt > 0.0) {
        return Err(EngineError::Invalid(format!(
            "dt must be > 0, got {}",
            file.dt
        )));
    }

    // Stock presets, overridable / extendable by name.
    let mut materials = SoilMaterial::presets();
    for section in &file.materials {
        let mat = SoilMaterial {
            name: section.name.clone(),
            young_modulus: section.young_modulus_pa,
            friction_angle: section.friction_angle_deg.to_radians(),
            cohesion: section.cohesion_pa,
            density: section.density_kg_m3,
            swell_factor: section.swell_factor,
            slip_modulus: section.slip_modulus,
        };
        mat.validate().map_err(|e| EngineError::Invalid(e.to_string()))?;
        match materials.iter_mut().find(|m| m.name == mat.name) {
            Some(existing) => *existing = mat,
            None => materials.push(mat),
        }
    }

    let terrain = TerrainParams {
        width_m: file.terrain.width_m,
        length_m: file.terrain.length_m,
        resolution_m: file.terrain.resolution_m,
        cell_height_m: file.terrain.cell_height_m,
        initial_height_m: file.terrain.initial_height_m,
        material: file.terrain.material.clone(),
        origin: (0.0, 0.0),
    };
    if !materials.iter().any(|m| m.name == terrain.material) {
        return Err(EngineError::UnknownMaterial(terrain.material));
    }

    let mut excavators = Vec::with_capacity(file.excavators.len());
    for section in &file.excavators {
        if section.kind != "excavator" {
            return Err(EngineError::UnknownExcavatorType {
                id: section.id.clone(),
                kind: section.kind.clone(),
            });
        }
        if excavators.iter().any(|e: &ExcavatorConfig| e.id == section.id) {
            return Err(EngineError::DuplicateExcavatorId(section.id.clone()));
        }
        let offset = vec3(&section.offset, &section.id, "offset", Vector3::zeros())?;
        let rotation = vec3(&section.rotation, &section.id, "rotation", Vector3::zeros())?;
        let (x0, y0, x1, y1) = (
            0.0,
            0.0,
            terrain.width_m,
            terrain.length_m,
        );
        if offset.x < x0 || offset.x > x1 || offset.y < y0 || offset.y > y1 {
            return Err(EngineError::SpawnOutOfBounds {
                id: section.id.clone(),
                x: offset.x,
                y: offset.y,
            });
        }

        let mut sensors = Vec::with_capacity(section.sensors.len());
        for s in &section.sensors {
            let location = Link::parse(&s.location).ok_or_else(|| EngineError::UnknownLink {
                sensor: s.id.clone(),
                location: s.location.clone(),
            })?;
            let noise = match s.noise.len() {
                0 => [0.0, 0.0],
                2 => [s.noise[0], s.noise[1]],
                n => {
                    return Err(EngineError::FieldArity {
                        owner: s.id.clone(),
                        field: "noise",
                        expected: 2,
                        got: n,
                    })
                }
            };
            if noise[0] < 0.0 {
                return Err(EngineError::Invalid(format!(
                    "sensor `{}`: noise stddev must be >= 0",
                    s.id
                )));
            }
            let rate = s.rate_hz.unwrap_or_else(|| s.kind.default_rate_hz());
            if !(rate > 0.0) {
                return Err(EngineError::Invalid(format!(
                    "sensor `{}`: rate must be > 0",
                    s.id
                )));
            }
            let mut topic = s.topic.clone();
            if !topic.starts_with('/') {
                topic.insert(0, '/');
            }
            if sensors.iter().any(|e: &SensorSpec| e.topic == topic) {
                return Err(EngineError::DuplicateTopic {
                    excavator: section.id.clone(),
                    topic,
                });
            }
            sensors.push(SensorSpec {
                id: s.id.clone(),
                kind: s.kind,
                topic,
                location,
                noise,
                offset: vec3(&s.offset, &s.id, "offset", Vector3::zeros())?,
                rotation_deg: vec3(&s.rotation, &s.id, "rotation", Vector3::zeros())?,
                rate_hz: rate,
                n_beams: s.n_beams.unwrap_or(16).max(1),
                fov_deg: s.fov_deg.unwrap_or(60.0),
                max_range_m: s.max_range_m.unwrap_or(10.0),
            });
        }

        let model_section = match &section.model_file {
            Some(rel) => {
                let path = match base {
                    Some(dir) => dir.join(rel),
                    None => std::path::PathBuf::from(rel),
                };
                let text = fs::read_to_string(&path).map_err(|source| EngineError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                let from_file: ModelSection = serde_yaml::from_str(&text)
                    .map_err(|e| EngineError::Parse(format!("model file `{rel}`: {e}")))?;
                section.model.merged_over(&from_file)
            }
            None => section.model.clone(),
        };
        excavators.push(ExcavatorConfig {
            id: section.id.clone(),
            offset,
            yaw: rotation.z.to_radians(),
            model: model_section.build(),
            sensors,
        });
    }

    Ok(ScenarioConfig {
        seed: file.seed,
        dt: file.dt,
        terrain,
        materials,
        excavators,
    })
}

pub fn load_scenario_file<P: AsRef<Path>>(path: P) -> Result<ScenarioConfig, EngineError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EngineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_scenario_with_base(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The one-IMU single-excavator configuration, field for field.
    const ONE_IMU_YAML: &str = r#"
Excavator:
  - id: excavator1
    type: excavator
    offset: [1,1,1]
    rotation: [0,0,0]
    sensors:
      - id: Chassis_IMU
        type: IMU
        topic: /imu_chassis
        location: CHASSIS
        noise: [0.1, 0.01]
        offset: [0.3436, 0.15, -0.2921]
        rotation: [0,-90,90]
"#;

    #[test]
    fn parses_single_imu_excavator_verbatim() {
        let cfg = load_scenario(ONE_IMU_YAML).unwrap();
        assert_eq!(cfg.excavators.len(), 1);
        let e = &cfg.excavators[0];
        assert_eq!(e.id, "excavator1");
        assert_eq!(e.offset, Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(e.yaw, 0.0);
        assert_eq!(e.sensors.len(), 1);
        let s = &e.sensors[0];
        assert_eq!(s.id, "Chassis_IMU");
        assert_eq!(s.kind, SensorKind::Imu);
        assert_eq!(s.topic, "/imu_chassis");
        assert_eq!(s.location, Link::Chassis);
        assert_eq!(s.noise, [0.1, 0.01]);
        assert_eq!(s.offset, Vector3::new(0.3436, 0.15, -0.2921));
        assert_eq!(s.rotation_deg, Vector3::new(0.0, -90.0, 90.0));
        assert_eq!(s.rate_hz, 100.0);
        // Defaults fill in the rest.
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.dt, 0.01);
        assert_eq!(cfg.terrain.material, "dirt");
    }

    #[test]
    fn empty_excavator_list_is_valid() {
        let cfg = load_scenario("seed: 3\ndt: 0.02\n").unwrap();
        assert!(cfg.excavators.is_empty());
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.dt, 0.02);
    }

    #[test]
    fn duplicate_excavator_ids_are_rejected() {
        let yaml = r#"
Excavator:
  - id: same
    type: excavator
    offset: [1,1,0]
  - id: same
    type: excavator
    offset: [2,2,0]
"#;
        match load_scenario(yaml) {
            Err(EngineError::DuplicateExcavatorId(id)) => assert_eq!(id, "same"),
            other => panic!("expected duplicate-id error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            load_scenario("seed: 1\nbogus_key: 2\n"),
            Err(EngineError::Parse(_))
        ));
        let yaml = r#"
Excavator:
  - id: a
    type: excavator
    offset: [1,1,0]
    sensors:
      - id: s
        type: IMU
        topic: /t
        location: CHASSIS
        wat: 1
"#;
        assert!(matches!(load_scenario(yaml), Err(EngineError::Parse(_))));
    }

    #[test]
    fn bad_noise_arity_is_rejected() {
        let yaml = r#"
Excavator:
  - id: a
    type: excavator
    offset: [1,1,0]
    sensors:
      - id: s
        type: IMU
        topic: /t
        location: CHASSIS
        noise: [0.1, 0.01, 5]
"#;
        match load_scenario(yaml) {
            Err(EngineError::FieldArity { field, got, .. }) => {
                assert_eq!(field, "noise");
                assert_eq!(got, 3);
            }
            other => panic!("expected arity error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_link_is_rejected() {
        let yaml = r#"
Excavator:
  - id: a
    type: excavator
    offset: [1,1,0]
    sensors:
      - id: s
        type: IMU
        topic: /t
        location: TURRET
"#;
        assert!(matches!(
            load_scenario(yaml),
            Err(EngineError::UnknownLink { .. })
        ));
    }

    #[test]
    fn unknown_terrain_material_is_rejected() {
        let yaml = "terrain:\n  material: moondust\n";
        match load_scenario(yaml) {
            Err(EngineError::UnknownMaterial(name)) => assert_eq!(name, "moondust"),
            other => panic!("expected unknown-material error, got {other:?}"),
        }
    }

    #[test]
    fn spawn_outside_terrain_is_rejected() {
        let yaml = r#"
terrain:
  width_m: 10
  length_m: 10
Excavator:
  - id: a
    type: excavator
    offset: [40, 1, 0]
"#;
        assert!(matches!(
            load_scenario(yaml),
            Err(EngineError::SpawnOutOfBounds { .. })
        ));
    }

    #[test]
    fn materials_override_presets_by_name() {
        let yaml = r#"
materials:
  - name: dirt
    young_modulus_pa: 9.0e6
    friction_angle_deg: 28
    cohesion_pa: 4000
    density_kg_m3: 1550
"#;
        let cfg = load_scenario(yaml).unwrap();
        let dirt = cfg.materials.iter().find(|m| m.name == "dirt").unwrap();
        assert_eq!(dirt.young_modulus, 9.0e6);
        assert_eq!(dirt.swell_factor, DEFAULT_SWELL_FACTOR);
        // Presets stay available.
        assert!(cfg.materials.iter().any(|m| m.name == "sand"));
    }

    #[test]
    fn model_file_merges_under_inline_overrides() {
        let dir = std::env::temp_dir().join(format!("digsim-model-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let model_path = dir.join("machine.yaml");
        std::fs::write(&model_path, "boom_length_m: 2.8\ntrack_gauge_m: 1.6\n").unwrap();
        let yaml = format!(
            r#"
Excavator:
  - id: a
    type: excavator
    offset: [1, 1, 0]
    model_file: {}
    model:
      boom_length_m: 3.1
"#,
            model_path.display()
        );
        let cfg = load_scenario(&yaml).unwrap();
        let m = &cfg.excavators[0].model;
        assert_eq!(m.link_lengths[0], 3.1); // inline wins
        assert_eq!(m.track_gauge, 1.6); // file value survives
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn model_overrides_apply() {
        let yaml = r#"
Excavator:
  - id: a
    type: excavator
    offset: [1, 1, 0]
    model:
      boom_length_m: 3.0
      bucket_width_m: 0.7
      track_speed_max_m_s: 2.0
"#;
        let cfg = load_scenario(yaml).unwrap();
        let m = &cfg.excavators[0].model;
        assert_eq!(m.link_lengths[0], 3.0);
        assert_eq!(m.shovel.width, 0.7);
        assert_eq!(m.track_speed_max, 2.0);
    }
}
