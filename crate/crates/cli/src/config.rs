//! Scenario configuration: TOML in, validated core types out.
//!
//! Unknown keys are rejected. Every diagnostic names the offending key path
//! (`scene.emitters[1].rho`). [`ScenarioConfig::canonical`] re-emits the
//! config with all defaults filled in.

use std::fmt;
use std::path::Path;

use qsips_core::frame_sim::Allocation;
use qsips_core::photon_models::{EmitterStatModel, PhotonDistribution};
use qsips_core::reconstruction::Method;
use qsips_core::scene::{abbe_frequency, standard_phases, standard_thetas, Emitter, IlluminationPattern, PsfModel, Scene};
use qsips_core::sim_fusion::{Apodization, BandModel, FusionParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

fn err(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneConfig>,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default)]
    pub reconstruction: ReconstructionConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub psf_sigma: f64,
    #[serde(default)]
    pub psf_peak: PsfPeak,
    #[serde(default)]
    pub readout_rms: f64,
    #[serde(default)]
    pub emitters: Vec<EmitterConfig>,
}

/// `unit` puts all loss in `rho`; `normalized` uses an area-normalized PSF.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsfPeak {
    #[default]
    Unit,
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Blinking,
    SinglePhoton,
    Poisson,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterConfig {
    pub x: f64,
    pub y: f64,
    pub rho: f64,
    pub model: ModelTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Photon-number probabilities for `custom`, starting at 0 photons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Illumination {
    #[default]
    Uniform,
    Sim,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationConfig {
    #[default]
    IndependentPixels,
    Multinomial,
}

/// Either a number in cycles per pixel or `"abbe"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PMag {
    Named(AbbeTag),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbbeTag {
    Abbe,
}

impl Default for PMag {
    fn default() -> Self {
        PMag::Named(AbbeTag::Abbe)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionConfig {
    #[serde(default = "default_frames")]
    pub n_frames: usize,
    /// Seeds above `i64::MAX` are written as decimal strings.
    #[serde(default, with = "seed_repr")]
    pub seed: u64,
    #[serde(default)]
    pub allocation: AllocationConfig,
    #[serde(default)]
    pub illumination: Illumination,
    /// Orientations in radians; defaults to four angles offset by pi/8.
    #[serde(default = "standard_thetas")]
    pub thetas: Vec<f64>,
    /// Phases in radians; defaults to five equally spaced phases.
    #[serde(default = "standard_phases")]
    pub phases: Vec<f64>,
    #[serde(default)]
    pub p_mag: PMag,
}

mod seed_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(|_| de::Error::custom(format!("seed {t:?} is not a u64"))),
        }
    }
}

fn default_frames() -> usize {
    1000
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            n_frames: default_frames(),
            seed: 0,
            allocation: AllocationConfig::default(),
            illumination: Illumination::default(),
            thetas: standard_thetas(),
            phases: standard_phases(),
            p_mag: PMag::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Qsips,
    Sofi,
    SrG,
}

impl MethodName {
    pub fn method(self) -> Method {
        match self {
            MethodName::Qsips => Method::Qsips,
            MethodName::Sofi => Method::Sofi,
            MethodName::SrG => Method::SrG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionConfig {
    #[serde(default = "default_j_max")]
    pub j_max: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodName>,
    /// k-statistics for orders 2 and 3.
    #[serde(default)]
    pub unbiased: bool,
}

fn default_j_max() -> usize {
    4
}

fn default_methods() -> Vec<MethodName> {
    vec![MethodName::Qsips, MethodName::Sofi]
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            j_max: default_j_max(),
            methods: default_methods(),
            unbiased: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApodizationName {
    None,
    RaisedCosine,
    #[default]
    GaussianTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    #[serde(default = "default_fusion_order")]
    pub order: usize,
    #[serde(default = "default_w")]
    pub w: f64,
    #[serde(default)]
    pub apodization: ApodizationName,
    #[serde(default = "default_bands")]
    pub bands: u32,
    #[serde(default = "default_upsample")]
    pub upsample: usize,
    /// Take `p_mag` from the order-1 maps instead of the manifest.
    #[serde(default)]
    pub estimate_pattern: bool,
}

fn default_fusion_order() -> usize {
    2
}

fn default_w() -> f64 {
    FusionParams::default().wiener_w
}

fn default_bands() -> u32 {
    5
}

fn default_upsample() -> usize {
    FusionParams::default().upsample
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            order: default_fusion_order(),
            w: default_w(),
            apodization: ApodizationName::default(),
            bands: default_bands(),
            upsample: default_upsample(),
            estimate_pattern: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWindow {
    pub x: f64,
    pub y: f64,
    #[serde(default = "default_half")]
    pub half: f64,
}

fn default_half() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default = "yes")]
    pub pgm: bool,
    #[serde(default = "yes")]
    pub csv: bool,
    /// Fourier interpolation factor applied by `analyze`.
    #[serde(default = "one")]
    pub interpolation: usize,
    /// Gaussian blur sigma (detector pixels) applied by `analyze`; 0 disables.
    #[serde(default)]
    pub blur_sigma: f64,
    /// Fit window; defaults to the brightest pixel of the intensity map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitWindow>,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self {
            pgm: true,
            csv: true,
            interpolation: 1,
            blur_sigma: 0.0,
            fit: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<VisibilityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_cut: Option<LineCutConfig>,
}

/// Sweep of the photon number `M` for a two-emitter scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisibilityConfig {
    pub b: f64,
    pub m_values: Vec<u32>,
    /// Exact pixel laws instead of simulated frames.
    #[serde(default)]
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineCutConfig {
    pub from: [f64; 2],
    pub to: [f64; 2],
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    200
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            err(if path == "." { String::new() } else { path }, inner.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err("", format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config types always serialize")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(s) = &self.scene {
            s.to_scene()?;
        }
        let a = &self.acquisition;
        if a.n_frames == 0 {
            return Err(err("acquisition.n_frames", "must be at least 1"));
        }
        if a.illumination == Illumination::Sim {
            if a.thetas.is_empty() {
                return Err(err("acquisition.thetas", "needs at least one orientation"));
            }
            if a.phases.len() < 3 {
                return Err(err("acquisition.phases", "needs at least three phases"));
            }
        }
        if let PMag::Value(p) = a.p_mag {
            if !(p.is_finite() && p >= 0.0) {
                return Err(err("acquisition.p_mag", format!("{p} must be >= 0 or \"abbe\"")));
            }
        }
        let r = &self.reconstruction;
        if !(1..=qsips_core::photon_models::MAX_CUMULANT_ORDER).contains(&r.j_max) {
            return Err(err(
                "reconstruction.j_max",
                format!("{} outside 1..={}", r.j_max, qsips_core::photon_models::MAX_CUMULANT_ORDER),
            ));
        }
        if r.methods.is_empty() {
            return Err(err("reconstruction.methods", "needs at least one method"));
        }
        for (i, m) in r.methods.iter().enumerate() {
            if r.methods[..i].contains(m) {
                return Err(err(format!("reconstruction.methods[{i}]"), "listed twice"));
            }
        }
        let f = &self.fusion;
        if f.order == 0 || f.order > r.j_max {
            return Err(err("fusion.order", format!("{} outside 1..=reconstruction.j_max", f.order)));
        }
        if !(f.w.is_finite() && f.w > 0.0) {
            return Err(err("fusion.w", "must be positive"));
        }
        if f.bands != 3 && f.bands != 5 {
            return Err(err("fusion.bands", "must be 3 or 5"));
        }
        if f.bands == 5 && a.illumination == Illumination::Sim && a.phases.len() < 5 {
            return Err(err("fusion.bands", "5 bands need at least five phases"));
        }
        if f.upsample == 0 {
            return Err(err("fusion.upsample", "must be at least 1"));
        }
        let o = &self.outputs;
        if o.interpolation == 0 {
            return Err(err("outputs.interpolation", "must be at least 1"));
        }
        if !(o.blur_sigma.is_finite() && o.blur_sigma >= 0.0) {
            return Err(err("outputs.blur_sigma", "must be >= 0"));
        }
        if let Some(fit) = o.fit {
            if !(fit.half.is_finite() && fit.half >= 1.0) {
                return Err(err("outputs.fit.half", "must be >= 1"));
            }
        }
        if let Some(v) = &self.analysis.visibility {
            if !(0.0..1.0).contains(&v.b) {
                return Err(err("analysis.visibility.b", "must lie in [0, 1)"));
            }
            if v.m_values.is_empty() || v.m_values.contains(&0) {
                return Err(err("analysis.visibility.m_values", "needs positive photon numbers"));
            }
            match &self.scene {
                Some(s) if s.emitters.len() == 2 => {}
                _ => return Err(err("scene.emitters", "visibility sweep needs exactly two emitters")),
            }
        }
        if let Some(c) = &self.analysis.line_cut {
            if c.samples < 2 {
                return Err(err("analysis.line_cut.samples", "must be at least 2"));
            }
        }
        Ok(())
    }

    pub fn scene(&self) -> Result<Scene, ConfigError> {
        self.scene
            .as_ref()
            .ok_or_else(|| err("scene", "missing [scene] block"))?
            .to_scene()
    }

    pub fn allocation(&self) -> Allocation {
        match self.acquisition.allocation {
            AllocationConfig::IndependentPixels => Allocation::IndependentPixels,
            AllocationConfig::Multinomial => Allocation::Multinomial,
        }
    }

    /// Illumination patterns in stream order (theta-major).
    pub fn patterns(&self, psf: &PsfModel) -> Vec<IlluminationPattern> {
        let a = &self.acquisition;
        match a.illumination {
            Illumination::Uniform => vec![IlluminationPattern::UNIFORM],
            Illumination::Sim => {
                let p = match a.p_mag {
                    PMag::Named(AbbeTag::Abbe) => abbe_frequency(psf),
                    PMag::Value(v) => v,
                };
                a.thetas
                    .iter()
                    .flat_map(|&t| a.phases.iter().map(move |&f| IlluminationPattern::sinusoid(t, f, p)))
                    .collect()
            }
        }
    }

    pub fn fusion_params(&self, psf_sigma: f64) -> FusionParams {
        let f = &self.fusion;
        FusionParams {
            wiener_w: f.w,
            apodization: match f.apodization {
                ApodizationName::None => Apodization::None,
                ApodizationName::RaisedCosine => Apodization::RaisedCosine,
                ApodizationName::GaussianTarget => Apodization::GaussianTarget,
            },
            bands: if f.bands == 3 { BandModel::Three } else { BandModel::Five },
            psf_sigma,
            upsample: f.upsample,
        }
    }
}

impl SceneConfig {
    pub fn to_scene(&self) -> Result<Scene, ConfigError> {
        let psf = match self.psf_peak {
            PsfPeak::Unit => PsfModel::new(self.psf_sigma),
            PsfPeak::Normalized => PsfModel::normalized(self.psf_sigma),
        };
        let emitters = self
            .emitters
            .iter()
            .enumerate()
            .map(|(i, e)| e.to_emitter(&format!("scene.emitters[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let scene = Scene {
            emitters,
            psf,
            width: self.width,
            height: self.height,
            readout_rms: self.readout_rms,
        };
        scene.validate().map_err(|e| err("scene", e.to_string()))?;
        Ok(scene)
    }
}

impl EmitterConfig {
    fn to_emitter(&self, path: &str) -> Result<Emitter, ConfigError> {
        let allowed: &[&str] = match self.model {
            ModelTag::Blinking => &["b", "m"],
            ModelTag::SinglePhoton => &[],
            ModelTag::Poisson => &["lambda"],
            ModelTag::Custom => &["probs"],
        };
        let present = [
            ("b", self.b.is_some()),
            ("m", self.m.is_some()),
            ("lambda", self.lambda.is_some()),
            ("probs", self.probs.is_some()),
        ];
        for (key, set) in present {
            if set != allowed.contains(&key) {
                let why = if set { "not used by" } else { "required for" };
                return Err(err(format!("{path}.{key}"), format!("{why} model {:?}", self.model)));
            }
        }
        let model = match self.model {
            ModelTag::Blinking => EmitterStatModel::Blinking {
                b: self.b.unwrap_or_default(),
                m: self.m.unwrap_or_default(),
            },
            ModelTag::SinglePhoton => EmitterStatModel::SinglePhoton,
            ModelTag::Poisson => EmitterStatModel::Poisson {
                lambda: self.lambda.unwrap_or_default(),
            },
            ModelTag::Custom => EmitterStatModel::Custom(
                PhotonDistribution::new(self.probs.clone().unwrap_or_default())
                    .map_err(|e| err(format!("{path}.probs"), e.to_string()))?,
            ),
        };
        model.validate().map_err(|e| err(path, e.to_string()))?;
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(err(format!("{path}.rho"), format!("{} outside (0, 1]", self.rho)));
        }
        Ok(Emitter {
            x: self.x,
            y: self.y,
            model,
            rho: self.rho,
        })
    }
}
