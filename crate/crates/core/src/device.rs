//! FeFET threshold-voltage and cell-capacitor models.
//!
//! A cell stores one bit as a threshold state: `1` is the low-threshold
//! (LVT) state and `0` the high-threshold (HVT) state. The transistor is
//! treated as an ideal switch that conducts only when the gate voltage is
//! strictly above the sampled threshold.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Capacitance samples are redrawn until they exceed this fraction of the mean.
pub const CAP_TRUNCATION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    /// Mean threshold of the LVT ('1') state, volts.
    pub vth_lvt_mean: f64,
    /// Mean threshold of the HVT ('0') state, volts.
    pub vth_hvt_mean: f64,
    /// Threshold-voltage standard deviation, volts.
    pub sigma_vth: f64,
    /// Mean cell capacitance, farads.
    pub c_m_mean: f64,
    /// Capacitance standard deviation relative to `c_m_mean`.
    pub sigma_cm_rel: f64,
    /// Informational only; the switch model is ideal.
    pub on_off_ratio: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            vth_lvt_mean: 0.3,
            vth_hvt_mean: 1.3,
            sigma_vth: 0.0,
            c_m_mean: 1e-15,
            sigma_cm_rel: 0.0,
            on_off_ratio: 1e6,
        }
    }
}

impl DeviceParams {
    pub fn memory_window(&self) -> f64 {
        self.vth_hvt_mean - self.vth_lvt_mean
    }

    pub fn with_sigmas(mut self, sigma_vth: f64, sigma_cm_rel: f64) -> Self {
        self.sigma_vth = sigma_vth;
        self.sigma_cm_rel = sigma_cm_rel;
        self
    }

    /// Every violated invariant, one message each.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let finite = [
            self.vth_lvt_mean,
            self.vth_hvt_mean,
            self.sigma_vth,
            self.c_m_mean,
            self.sigma_cm_rel,
            self.on_off_ratio,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            out.push("device parameters must be finite".to_string());
            return out;
        }
        if self.memory_window() <= 0.0 {
            out.push(format!(
                "vth_hvt_mean ({}) must exceed vth_lvt_mean ({})",
                self.vth_hvt_mean, self.vth_lvt_mean
            ));
        }
        if self.sigma_vth < 0.0 {
            out.push(format!("sigma_vth must be >= 0, got {}", self.sigma_vth));
        }
        if self.sigma_cm_rel < 0.0 {
            out.push(format!("sigma_cm_rel must be >= 0, got {}", self.sigma_cm_rel));
        }
        if self.c_m_mean <= 0.0 {
            out.push(format!("c_m_mean must be > 0, got {}", self.c_m_mean));
        }
        if self.on_off_ratio <= 0.0 {
            out.push(format!("on_off_ratio must be > 0, got {}", self.on_off_ratio));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.diagnostics().into_iter().next() {
            None => Ok(()),
            Some(msg) => Err(Error::InvalidParams(msg)),
        }
    }

    /// Parses a flat `key = value` file. Missing keys take their defaults.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let params: DeviceParams = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn from_config_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }

    fn vth_mean(&self, bit: bool) -> f64 {
        if bit {
            self.vth_lvt_mean
        } else {
            self.vth_hvt_mean
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeFetCell {
    pub stored_bit: bool,
    pub vth_sampled: f64,
    pub c_m_sampled: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchState {
    On,
    Off,
}

/// Three wordline levels that bracket the two threshold states:
/// `v_wl0 < vth_lvt < v_wl1 < vth_hvt < v_wl2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordlineLevels {
    pub v_wl0: f64,
    pub v_wl1: f64,
    pub v_wl2: f64,
}

impl Default for WordlineLevels {
    fn default() -> Self {
        Self {
            v_wl0: 0.0,
            v_wl1: 1.0,
            v_wl2: 2.0,
        }
    }
}

impl WordlineLevels {
    pub fn diagnostics(&self, device: &DeviceParams) -> Vec<String> {
        let ok = self.v_wl0 < device.vth_lvt_mean
            && device.vth_lvt_mean < self.v_wl1
            && self.v_wl1 < device.vth_hvt_mean
            && device.vth_hvt_mean < self.v_wl2;
        if ok {
            Vec::new()
        } else {
            vec![format!(
                "wordline levels must bracket the thresholds: v_wl0 ({}) < vth_lvt ({}) < v_wl1 ({}) < vth_hvt ({}) < v_wl2 ({})",
                self.v_wl0, device.vth_lvt_mean, self.v_wl1, device.vth_hvt_mean, self.v_wl2
            )]
        }
    }
}

/// Draws one cell. Consumes exactly one normal sample for the threshold,
/// then one or more for the capacitance (rejection below the truncation
/// floor), so threshold draws stay paired across `sigma_vth` values.
pub fn sample_cell<R: Rng + ?Sized>(params: &DeviceParams, bit: bool, rng: &mut R) -> FeFetCell {
    let z_vth: f64 = rng.sample(StandardNormal);
    let vth_sampled = params.vth_mean(bit) + params.sigma_vth * z_vth;
    FeFetCell {
        stored_bit: bit,
        vth_sampled,
        c_m_sampled: sample_capacitance(params, rng),
    }
}

/// Truncated Gaussian capacitance draw, redrawn below `CAP_TRUNCATION · c_m_mean`.
pub fn sample_capacitance<R: Rng + ?Sized>(params: &DeviceParams, rng: &mut R) -> f64 {
    let floor = CAP_TRUNCATION * params.c_m_mean;
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let c = params.c_m_mean * (1.0 + params.sigma_cm_rel * z);
        if c > floor {
            return c;
        }
    }
}

/// Validating wrapper around [`sample_cell`].
pub fn try_sample_cell<R: Rng + ?Sized>(
    params: &DeviceParams,
    bit: bool,
    rng: &mut R,
) -> Result<FeFetCell> {
    params.validate()?;
    Ok(sample_cell(params, bit, rng))
}

pub fn switch_state(cell: &FeFetCell, v_wl: f64) -> SwitchState {
    if v_wl > cell.vth_sampled {
        SwitchState::On
    } else {
        SwitchState::Off
    }
}

/// Voltage a conducting cell passes from a driven bitline onto its capacitor.
/// Source-follower clamp: at most `v_wl - vth`.
pub fn pass_voltage(cell: &FeFetCell, v_wl: f64, v_drive: f64) -> f64 {
    match switch_state(cell, v_wl) {
        SwitchState::Off => 0.0,
        SwitchState::On => v_drive.min((v_wl - cell.vth_sampled).max(0.0)),
    }
}
