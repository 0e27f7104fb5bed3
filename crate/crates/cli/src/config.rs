//! Strict JSON run configuration. Every knob of the pipeline lives here
//! with its default; unknown keys are rejected so silent drift between a
//! config file and the binary cannot happen.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crowdmask::field::gaussian_kernel_1d;
use crowdmask::losses::{DiscriminativeConfig, EmaConfig, ForegroundConfig};
use crowdmask::segment::{EnergyConfig, PseudoMaskFilter};
use crowdmask::toy::OptimizeConfig;

use crate::{CliError, CliResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub size: usize,
    pub sigma: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { size: 7, sigma: 3.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminativeSection {
    pub tau: f64,
    pub delta: f64,
    pub kernel: KernelSection,
}

impl Default for DiscriminativeSection {
    fn default() -> Self {
        Self {
            tau: 0.6,
            delta: 0.1,
            kernel: KernelSection::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    pub lambda_geo: f64,
    pub tau_g: f64,
    pub epsilon: f64,
    pub nnec_fallback: bool,
    pub fallback_scale: f64,
}

impl Default for EnergySection {
    fn default() -> Self {
        let d = EnergyConfig::default();
        Self {
            lambda_geo: d.lambda_geo,
            tau_g: d.tau_g,
            epsilon: d.epsilon,
            nnec_fallback: d.nnec_fallback,
            fallback_scale: d.fallback_scale,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForegroundSection {
    pub lambda_fg: f64,
}

impl Default for ForegroundSection {
    fn default() -> Self {
        Self { lambda_fg: 1.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub low_threshold: f64,
    pub high_threshold: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            low_threshold: 0.1,
            high_threshold: 0.95,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmaSection {
    pub momentum: f64,
}

impl Default for EmaSection {
    fn default() -> Self {
        Self { momentum: 0.999 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicSection {
    pub n_segments: usize,
    pub compactness: f64,
    pub iters: usize,
}

impl Default for SlicSection {
    fn default() -> Self {
        Self {
            n_segments: 1000,
            compactness: 10.0,
            iters: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeSection {
    pub steps: usize,
    pub learning_rate: f64,
    pub channels: usize,
    pub init_scale: f64,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        let d = OptimizeConfig::default();
        Self {
            steps: d.steps,
            learning_rate: d.learning_rate,
            channels: d.channels,
            init_scale: d.init_scale,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stride: StrideSection,
    pub discriminative: DiscriminativeSection,
    pub energy: EnergySection,
    pub foreground: ForegroundSection,
    pub filter: FilterSection,
    pub ema: EmaSection,
    pub slic: SlicSection,
    pub optimize: OptimizeSection,
}

/// Stride of the feature grid relative to image coordinates; point
/// coordinates are divided by it before touching the feature field.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrideSection(pub u32);

impl Default for StrideSection {
    fn default() -> Self {
        Self(1)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.stride.0 == 0 {
            return Err(CliError::input("config: stride must be >= 1"));
        }
        if !(self.ema.momentum > 0.0 && self.ema.momentum < 1.0) {
            return Err(CliError::input(format!(
                "config: ema.momentum must lie in (0, 1), got {}",
                self.ema.momentum
            )));
        }
        // Construction performs the remaining range checks.
        self.discriminative()?;
        self.energy().validate()?;
        self.filter().validate()?;
        self.optimize_config()?.validate()?;
        Ok(())
    }

    pub fn discriminative(&self) -> CliResult<DiscriminativeConfig> {
        let kernel =
            gaussian_kernel_1d(self.discriminative.kernel.size, self.discriminative.kernel.sigma)?;
        Ok(DiscriminativeConfig::new(
            self.discriminative.tau,
            self.discriminative.delta,
            kernel,
        )?)
    }

    pub fn energy(&self) -> EnergyConfig {
        EnergyConfig {
            lambda_geo: self.energy.lambda_geo,
            tau_g: self.energy.tau_g,
            epsilon: self.energy.epsilon,
            nnec_fallback: self.energy.nnec_fallback,
            fallback_scale: self.energy.fallback_scale,
        }
    }

    pub fn foreground(&self) -> ForegroundConfig {
        ForegroundConfig {
            lambda_fg: self.foreground.lambda_fg,
        }
    }

    pub fn filter(&self) -> PseudoMaskFilter {
        PseudoMaskFilter {
            low_threshold: self.filter.low_threshold,
            high_threshold: self.filter.high_threshold,
        }
    }

    pub fn ema(&self) -> EmaConfig {
        EmaConfig {
            momentum: self.ema.momentum,
        }
    }

    pub fn optimize_config(&self) -> CliResult<OptimizeConfig> {
        Ok(OptimizeConfig {
            steps: self.optimize.steps,
            learning_rate: self.optimize.learning_rate,
            channels: self.optimize.channels,
            init_scale: self.optimize.init_scale,
            disc: self.discriminative()?,
            energy: self.energy(),
        })
    }

    pub fn stride(&self) -> f64 {
        self.stride.0 as f64
    }
}
