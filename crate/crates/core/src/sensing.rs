//! Column readout: ADC quantization and sense-margin accounting.

use serde::{Deserialize, Serialize};

use crate::array::ArrayConfig;
use crate::stats::Running;
use crate::{Error, Result};

/// Default separation criterion for [`sense_margin`], in standard deviations.
pub const DEFAULT_K_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdcConfig {
    pub resolution_bits: u32,
    pub v_ref_low: f64,
    pub v_ref_high: f64,
    /// Columns sharing one converter.
    pub mux_ratio: usize,
}

impl AdcConfig {
    /// References aligned to the zero-variance output ramp of `array`:
    /// `v_ref_low = Δ`, `v_ref_high = Δ + v_work·N·C_M/(N·C_M + C_para)`.
    /// With `2^bits = N` every code is exactly one charged cell.
    pub fn aligned(array: &ArrayConfig, resolution_bits: u32) -> Self {
        Self {
            resolution_bits,
            v_ref_low: array.delta_offset,
            v_ref_high: array.delta_offset + array.full_swing(),
            mux_ratio: 1,
        }
    }

    /// `ceil(log2(n_rows))` bits, aligned to `array`.
    pub fn log2_aligned(array: &ArrayConfig) -> Self {
        Self::aligned(array, bits_for(array.n_rows))
    }

    pub fn levels(&self) -> u64 {
        1u64 << self.resolution_bits
    }

    pub fn max_code(&self) -> u64 {
        self.levels() - 1
    }

    pub fn lsb(&self) -> f64 {
        (self.v_ref_high - self.v_ref_low) / self.levels() as f64
    }

    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(1..=32).contains(&self.resolution_bits) {
            out.push(format!("resolution_bits must be in 1..=32, got {}", self.resolution_bits));
        }
        if !(self.v_ref_high > self.v_ref_low) {
            out.push(format!(
                "v_ref_high ({}) must exceed v_ref_low ({})",
                self.v_ref_high, self.v_ref_low
            ));
        }
        if self.mux_ratio < 1 {
            out.push("mux_ratio must be >= 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.diagnostics().into_iter().next() {
            None => Ok(()),
            Some(msg) => Err(Error::InvalidParams(msg)),
        }
    }
}

/// Smallest `b` with `2^b >= n` (at least 1).
pub fn bits_for(n: usize) -> u32 {
    (usize::BITS - n.saturating_sub(1).leading_zeros()).max(1)
}

/// Mid-tread quantizer, ties round half up, clamped to the code range.
pub fn quantize(v_bl: f64, adc: &AdcConfig) -> u64 {
    let x = ((v_bl - adc.v_ref_low) / adc.lsb() + 0.5).floor();
    if x.is_nan() || x <= 0.0 {
        0
    } else {
        (x as u64).min(adc.max_code())
    }
}

/// Readout samples for one theoretical output code.
#[derive(Debug, Clone, PartialEq)]
pub struct CodePopulation {
    pub code: u64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub code_pair: String,
    pub gap: f64,
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub k_sigma: f64,
    pub rows: Vec<MarginRow>,
    /// Minimum margin over all adjacent pairs; positive means separable.
    pub margin: f64,
}

impl MarginReport {
    pub fn worst(&self) -> &MarginRow {
        self.rows
            .iter()
            .min_by(|a, b| a.margin.total_cmp(&b.margin))
            .expect("a report always has at least one row")
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wr.serialize(row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub const MIN_POPULATION: usize = 100;

/// For every pair of populations with consecutive codes, computes
/// `gap − k_sigma·(σ_low + σ_high)` and reports the minimum.
pub fn sense_margin(populations: &[CodePopulation], k_sigma: f64) -> Result<MarginReport> {
    if let Some(p) = populations.iter().find(|p| p.samples.len() < MIN_POPULATION) {
        return Err(Error::InsufficientSamples(format!(
            "code {} has {} samples, need at least {MIN_POPULATION}",
            p.code,
            p.samples.len()
        )));
    }
    let mut stats: Vec<(u64, Running)> = populations
        .iter()
        .map(|p| (p.code, p.samples.iter().copied().collect()))
        .collect();
    stats.sort_by_key(|(code, _)| *code);
    let rows: Vec<MarginRow> = stats
        .windows(2)
        .filter(|w| w[1].0 == w[0].0 + 1)
        .map(|w| {
            let (lo, hi) = (&w[0].1, &w[1].1);
            let gap = hi.mean() - lo.mean();
            MarginRow {
                code_pair: format!("{}-{}", w[0].0, w[1].0),
                gap,
                sigma_low: lo.std(),
                sigma_high: hi.std(),
                margin: gap - k_sigma * (lo.std() + hi.std()),
            }
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::InsufficientSamples(
            "need at least two populations with adjacent codes".into(),
        ));
    }
    let margin = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    Ok(MarginReport {
        k_sigma,
        rows,
        margin,
    })
}
