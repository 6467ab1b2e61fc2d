//! Experiment configuration: a sectioned `key = value` document with a fixed schema, named
//! presets and builders for the domain objects.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::assess::{Region, TimeReversal};
use crate::data::PipelineOptions;
use crate::error::{Error, Result};
use crate::grid::{homogeneous_medium, ArrayGeometry, Grid2D, Medium};
use crate::inversion::{GaussNewtonConfig, SearchModel};
use crate::io::read_grid;
use crate::models::{camembert, random_medium, SlantedLayer};
use crate::objective::{Acquisition, ObjectiveKind};
use crate::passive::NoiseModel;
use crate::signal::SignalSpec;

/// Sections and the keys each accepts.
pub const SCHEMA: &[(&str, &[&str])] = &[
    ("grid", &["width_m", "depth_m", "h_m"]),
    (
        "medium",
        &[
            "model",
            "c_ref_m_per_s",
            "file",
            "center_x_m",
            "center_y_m",
            "radius_m",
            "c_inclusion_m_per_s",
            "interface_depth_m",
            "slope",
            "thickness_m",
            "contrast",
            "corr_len_m",
            "collar_m",
            "seed",
        ],
    ),
    ("signal", &["f0_hz", "bandwidth_hz"]),
    ("array", &["m", "aperture_m", "depth_m"]),
    (
        "rom",
        &["tau_s", "n", "subsample", "taper_steps", "cutoff_bandwidths", "trunc_tol"],
    ),
    (
        "inversion",
        &[
            "objective",
            "windows",
            "iters_per_window",
            "mu0",
            "eps_fd",
            "c_max_m_per_s",
            "basis_nx",
            "basis_ny",
            "sigma_x_m",
            "sigma_y_m",
            "region_x0_m",
            "region_x1_m",
            "region_y0_m",
            "region_y1_m",
        ],
    ),
    (
        "passive",
        &[
            "t_a_seconds",
            "averaging_t_seconds",
            "burn_in_seconds",
            "seed",
            "support_mask_file",
            "amplitude",
        ],
    ),
    (
        "sweep",
        &[
            "family",
            "objectives",
            "p1_min",
            "p1_max",
            "p1_count",
            "p2_min",
            "p2_max",
            "p2_count",
            "c_fwi_file",
        ],
    ),
    (
        "time_reversal",
        &["source_x_m", "source_y_m", "duration_s", "exclusion_radius_m"],
    ),
];

const PRESETS: &[(&str, &str)] = &[
    ("camembert", CAMEMBERT),
    ("salt", SALT),
    ("random", RANDOM),
    ("layered-desk", LAYERED_DESK),
    ("camembert-desk", CAMEMBERT_DESK),
    ("random-desk", RANDOM_DESK),
];

const CAMEMBERT: &str = "
[grid]
width_m = 2000
depth_m = 2500
h_m = 20
[medium]
model = camembert
c_ref_m_per_s = 3000
center_x_m = 1000
center_y_m = 1450
radius_m = 400
c_inclusion_m_per_s = 3600
[signal]
f0_hz = 6
bandwidth_hz = 4
[array]
m = 10
aperture_m = 1400
depth_m = 300
[rom]
tau_s = 0.0435
n = 16
subsample = 20
[inversion]
objective = chol
windows = 6
iters_per_window = 10
c_max_m_per_s = 3600
basis_nx = 20
basis_ny = 20
sigma_x_m = 55.5
sigma_y_m = 69.4
region_x0_m = 95
region_x1_m = 1905
region_y0_m = 119
region_y1_m = 2381
[sweep]
family = camembert
objectives = fwi,chol,rom_op,prop
p1_min = -0.21
p1_max = 0.2
p1_count = 11
p2_min = 0.8
p2_max = 1.2
p2_count = 11
";

const SALT: &str = "
[grid]
width_m = 6000
depth_m = 5250
h_m = 18.75
[medium]
model = file
c_ref_m_per_s = 1500
[signal]
f0_hz = 6
bandwidth_hz = 4
[array]
m = 40
aperture_m = 5550
depth_m = 150
[rom]
tau_s = 0.0333
n = 49
subsample = 20
[inversion]
objective = chol
windows = 6
iters_per_window = 6
c_max_m_per_s = 4500
basis_nx = 55
basis_ny = 55
sigma_x_m = 61.2
sigma_y_m = 53.6
region_x0_m = 105
region_x1_m = 5895
region_y0_m = 92
region_y1_m = 5158
";

const RANDOM: &str = "
[grid]
width_m = 6500
depth_m = 6500
h_m = 25
[medium]
model = random
c_ref_m_per_s = 1500
contrast = 0.25
corr_len_m = 150
collar_m = 100
seed = 1
[signal]
f0_hz = 6
bandwidth_hz = 4
[array]
m = 40
aperture_m = 4500
depth_m = 150
[rom]
tau_s = 0.0333
n = 49
subsample = 20
[inversion]
objective = rom_op
windows = 9
iters_per_window = 15
c_max_m_per_s = 1875
basis_nx = 55
basis_ny = 55
sigma_x_m = 66.6
sigma_y_m = 63.4
region_x0_m = 114
region_x1_m = 6386
region_y0_m = 300
region_y1_m = 6392
[time_reversal]
source_x_m = 3000
source_y_m = 4500
duration_s = 5.8
exclusion_radius_m = 150
";

const LAYERED_DESK: &str = "
[grid]
width_m = 2000
depth_m = 1600
h_m = 25
[medium]
model = layered
c_ref_m_per_s = 3000
interface_depth_m = 700
slope = 0.15
thickness_m = 200
contrast = 1.25
[signal]
f0_hz = 6
bandwidth_hz = 4
[array]
m = 6
aperture_m = 1000
depth_m = 100
[rom]
tau_s = 0.0435
n = 10
subsample = 20
[sweep]
family = layered
objectives = fwi,chol,rom_op,prop
p1_min = 300
p1_max = 1100
p1_count = 17
p2_min = 1.05
p2_max = 1.45
p2_count = 9
";

const CAMEMBERT_DESK: &str = "
[grid]
width_m = 2000
depth_m = 2500
h_m = 40
[medium]
model = camembert
c_ref_m_per_s = 3000
center_x_m = 1000
center_y_m = 1450
radius_m = 400
c_inclusion_m_per_s = 3600
[signal]
f0_hz = 6
bandwidth_hz = 4
[array]
m = 10
aperture_m = 1400
depth_m = 500
[rom]
tau_s = 0.0435
n = 16
subsample = 10
[inversion]
objective = chol
windows = 6
iters_per_window = 10
c_max_m_per_s = 3600
basis_nx = 8
basis_ny = 8
region_x0_m = 95
region_x1_m = 1905
region_y0_m = 619
region_y1_m = 2381
[sweep]
family = camembert
objectives = fwi,chol,rom_op,prop
p1_min = -1
p1_max = 1.5
p1_count = 11
p2_min = 0.8
p2_max = 1.2
p2_count = 11
";

const RANDOM_DESK: &str = "
[grid]
width_m = 3000
depth_m = 1400
h_m = 25
[medium]
model = random
c_ref_m_per_s = 1500
contrast = 0.25
corr_len_m = 150
collar_m = 100
seed = 1
[signal]
f0_hz = 6
bandwidth_hz = 4
[array]
m = 10
aperture_m = 2250
depth_m = 250
[rom]
tau_s = 0.0333
n = 16
subsample = 10
trunc_tol = 1e-6
[inversion]
objective = rom_op
windows = 4
iters_per_window = 4
c_max_m_per_s = 1875
basis_nx = 12
basis_ny = 6
region_x0_m = 114
region_x1_m = 2886
region_y0_m = 50
region_y1_m = 1250
[time_reversal]
source_x_m = 1500
source_y_m = 1000
duration_s = 1.6
exclusion_radius_m = 250
";

/// Parsed configuration document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

fn allowed(section: &str, key: &str) -> Result<()> {
    let keys = SCHEMA
        .iter()
        .find(|(s, _)| *s == section)
        .map(|(_, k)| *k)
        .ok_or_else(|| Error::Config(format!("unknown section [{section}]")))?;
    if keys.contains(&key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown key '{key}' in [{section}]")))
    }
}

impl Config {
    /// Parses `[section]` headers and `key = value` lines; `#` and `;` start comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Config::default();
        let mut section: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("malformed section header '{line}'")))?
                    .trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    return Err(at(format!("unknown section [{name}]")));
                }
                section = Some(name.to_owned());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got '{line}'")))?;
            let sec = section
                .as_deref()
                .ok_or_else(|| at("key outside of any section".into()))?;
            let (key, value) = (key.trim(), value.trim());
            allowed(sec, key).map_err(|e| at(e.to_string()))?;
            let entries = config.sections.entry(sec.to_owned()).or_default();
            if entries.insert(key.to_owned(), value.to_owned()).is_some() {
                return Err(at(format!("duplicate key '{key}' in [{sec}]")));
            }
        }
        Ok(config)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))?;
        Self::parse(text)
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    /// Overrides one key, validated against the schema.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        allowed(section, key)?;
        self.sections
            .entry(section.to_owned())
            .or_default()
            .insert(key.to_owned(), value.trim().to_owned());
        Ok(())
    }

    /// Applies `section.key=value`.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected section.key=value, got '{assignment}'")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("expected section.key, got '{path}'")))?;
        self.set(section, key, value)
    }

    /// Keys of `other` replace keys of `self`.
    pub fn merge(&mut self, other: &Config) {
        for (section, entries) in &other.sections {
            let mine = self.sections.entry(section.clone()).or_default();
            for (k, v) in entries {
                mine.insert(k.clone(), v.clone());
            }
        }
    }

    /// Canonical text: sections in schema order, keys in schema order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (section, keys) in SCHEMA {
            let Some(entries) = self.sections.get(*section) else {
                continue;
            };
            if entries.is_empty() {
                continue;
            }
            let _ = writeln!(out, "[{section}]");
            for key in keys.iter() {
                if let Some(v) = entries.get(*key) {
                    let _ = writeln!(out, "{key} = {v}");
                }
            }
        }
        out
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn has(&self, section: &str, key: &str) -> bool {
        self.raw(section, key).is_some()
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<T> {
        let raw = self
            .raw(section, key)
            .ok_or_else(|| Error::Config(format!("missing required key '{key}' in [{section}]")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("invalid value '{raw}' for '{key}' in [{section}]")))
    }

    pub fn get_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        if self.has(section, key) {
            self.get(section, key)
        } else {
            Ok(default)
        }
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::covering(
            self.get("grid", "width_m")?,
            self.get("grid", "depth_m")?,
            self.get("grid", "h_m")?,
        )
    }

    pub fn c_ref(&self) -> Result<f64> {
        self.get("medium", "c_ref_m_per_s")
    }

    pub fn array(&self, grid: &Grid2D) -> Result<ArrayGeometry> {
        ArrayGeometry::linear(
            grid,
            self.get("array", "m")?,
            self.get("array", "aperture_m")?,
            self.get("array", "depth_m")?,
        )
    }

    pub fn signal(&self) -> Result<SignalSpec> {
        SignalSpec::new(
            self.get("signal", "f0_hz")?,
            self.get("signal", "bandwidth_hz")?,
            1.0,
        )
    }

    pub fn layer(&self) -> Result<SlantedLayer> {
        let thickness: f64 = self.get_or("medium", "thickness_m", 0.0)?;
        Ok(SlantedLayer {
            interface_depth: self.get("medium", "interface_depth_m")?,
            slope: self.get_or("medium", "slope", 0.0)?,
            thickness: (thickness > 0.0).then_some(thickness),
            contrast: self.get("medium", "contrast")?,
        })
    }

    /// The true medium described by `[medium]`.
    pub fn medium(&self, grid: &Grid2D) -> Result<Medium> {
        let c_ref = self.c_ref()?;
        let model: String = self.get("medium", "model")?;
        match model.as_str() {
            "homogeneous" => homogeneous_medium(*grid, c_ref),
            "camembert" => camembert(
                grid,
                c_ref,
                (self.get("medium", "center_x_m")?, self.get("medium", "center_y_m")?),
                self.get("medium", "radius_m")?,
                self.get("medium", "c_inclusion_m_per_s")?,
            ),
            "layered" => self.layer()?.medium(grid, c_ref),
            "random" => random_medium(
                grid,
                c_ref,
                self.get("medium", "contrast")?,
                self.get("medium", "corr_len_m")?,
                &self.array(grid)?,
                self.get_or("medium", "collar_m", 0.0)?,
                self.get_or("medium", "seed", 1u64)?,
            ),
            "file" => {
                let path: PathBuf = self.get("medium", "file")?;
                let medium = read_grid(&path, c_ref)?;
                if medium.grid() != grid {
                    return Err(Error::Config(format!(
                        "{} does not match the [grid] section",
                        path.display()
                    )));
                }
                Ok(medium)
            }
            other => Err(Error::Config(format!("unknown medium model '{other}'"))),
        }
    }

    pub fn pipeline_options(&self) -> Result<PipelineOptions> {
        let d = PipelineOptions::default();
        Ok(PipelineOptions {
            subsample: self.get_or("rom", "subsample", d.subsample)?,
            taper_steps: self.get_or("rom", "taper_steps", d.taper_steps)?,
            cutoff_bandwidths: self.get_or("rom", "cutoff_bandwidths", d.cutoff_bandwidths)?,
        })
    }

    pub fn acquisition(&self, grid: &Grid2D) -> Result<Acquisition> {
        let mut acq = Acquisition::new(
            self.array(grid)?,
            self.signal()?,
            self.get("rom", "tau_s")?,
            self.get("rom", "n")?,
            self.pipeline_options()?,
        )?;
        acq.trunc_tol = self.get_or("rom", "trunc_tol", acq.trunc_tol)?;
        Ok(acq)
    }

    pub fn region(&self) -> Result<Region> {
        Ok(Region {
            x: (self.get("inversion", "region_x0_m")?, self.get("inversion", "region_x1_m")?),
            y: (self.get("inversion", "region_y0_m")?, self.get("inversion", "region_y1_m")?),
        })
    }

    /// Gaussian search basis over the inversion region; widths default to 0.6 of the center
    /// spacing.
    pub fn search_model(&self) -> Result<SearchModel> {
        let r = self.region()?;
        let nx: usize = self.get("inversion", "basis_nx")?;
        let ny: usize = self.get("inversion", "basis_ny")?;
        let spacing = |span: f64, k: usize| if k > 1 { span / (k - 1) as f64 } else { span };
        let sx = self.get_or("inversion", "sigma_x_m", 0.6 * spacing(r.x.1 - r.x.0, nx))?;
        let sy = self.get_or("inversion", "sigma_y_m", 0.6 * spacing(r.y.1 - r.y.0, ny))?;
        SearchModel::uniform([r.x.0, r.x.1, r.y.0, r.y.1], nx, ny, sx, sy, self.c_ref()?)
    }

    pub fn gauss_newton(&self) -> Result<GaussNewtonConfig> {
        let objective: ObjectiveKind = self.get("inversion", "objective")?;
        let mut cfg = GaussNewtonConfig::new(
            objective,
            self.get("inversion", "c_max_m_per_s")?,
            self.get("array", "depth_m")?,
        );
        cfg.windows = self.get_or("inversion", "windows", cfg.windows)?;
        cfg.iters_per_window = self.get_or("inversion", "iters_per_window", cfg.iters_per_window)?;
        cfg.mu0 = self.get_or("inversion", "mu0", cfg.mu0)?;
        cfg.eps_fd = self.get_or("inversion", "eps_fd", cfg.eps_fd)?;
        Ok(cfg)
    }

    pub fn objectives(&self) -> Result<Vec<ObjectiveKind>> {
        let list: String = self.get_or("sweep", "objectives", "fwi,chol,rom_op,prop".to_owned())?;
        list.split(',').map(|s| s.trim().parse()).collect()
    }

    /// `(p1, p2)` axes of the sweep.
    pub fn sweep_axes(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let axis = |p: &str| -> Result<Vec<f64>> {
            let lo: f64 = self.get("sweep", &format!("{p}_min"))?;
            let hi: f64 = self.get("sweep", &format!("{p}_max"))?;
            let count: usize = self.get("sweep", &format!("{p}_count"))?;
            if count == 0 {
                return Err(Error::Config(format!("{p}_count must be positive")));
            }
            Ok((0..count)
                .map(|i| if count == 1 { lo } else { lo + (hi - lo) * i as f64 / (count - 1) as f64 })
                .collect())
        };
        Ok((axis("p1")?, axis("p2")?))
    }

    pub fn noise_model(&self, grid: &Grid2D, spec: SignalSpec) -> Result<NoiseModel> {
        let mut model = NoiseModel::uniform(
            grid,
            spec,
            self.get("passive", "t_a_seconds")?,
            self.get_or("passive", "seed", 1u64)?,
        );
        model.amplitude = self.get_or("passive", "amplitude", 1.0)?;
        if let Some(path) = self.raw("passive", "support_mask_file") {
            let mask = read_grid(std::path::Path::new(path), 1.0)?;
            if mask.grid() != grid {
                return Err(Error::Config(format!("{path} does not match the [grid] section")));
            }
            model.support = mask.speed().iter().map(|v| *v > 0.5).collect();
        }
        Ok(model)
    }

    pub fn time_reversal(&self, spec: SignalSpec, dt: f64) -> Result<TimeReversal> {
        let default_radius = spec.central_wavelength(self.c_ref()?);
        Ok(TimeReversal {
            source: (
                self.get("time_reversal", "source_x_m")?,
                self.get("time_reversal", "source_y_m")?,
            ),
            duration: self.get("time_reversal", "duration_s")?,
            dt,
            spec,
            exclusion_radius: self.get_or("time_reversal", "exclusion_radius_m", default_radius)?,
        })
    }
}
