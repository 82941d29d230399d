//! The 1FeFET-1C array core and its operation schedules.
//!
//! Operations are modeled at settled state: each schedule step drives the
//! bitline (or floats it), applies one wordline level per row, and updates
//! every cell capacitor that is switched on. The final step floats the
//! bitline and shares charge among all connected capacitors in a column.
//!
//! CAM search (XNOR per cell) runs in three steps:
//!
//! | step | bitline  | WL for query '1' | WL for query '0' |
//! |------|----------|------------------|------------------|
//! | 1    | `v_work` | `v_wl1`          | `v_wl2`          |
//! | 2    | ground   | `v_wl0`          | `v_wl1`          |
//! | 3    | floating | `v_wl2`          | `v_wl2`          |
//!
//! MAC (AND per cell) runs in two:
//!
//! | step | bitline  | WL for input '1' | WL for input '0' |
//! |------|----------|------------------|------------------|
//! | 1    | `v_work` | `v_wl1`          | `v_wl0`          |
//! | 2    | floating | `v_wl2`          | `v_wl2`          |

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::device::{self, DeviceParams, FeFetCell, SwitchState, WordlineLevels};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_rows: usize,
    pub m_cols: usize,
    /// Bitline parasitic capacitance per column, farads.
    pub c_para: f64,
    pub v_work: f64,
    pub wl_levels: WordlineLevels,
    pub device: DeviceParams,
    /// Residual bitline offset added after charge sharing, volts.
    pub delta_offset: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            n_rows: 64,
            m_cols: 8,
            c_para: 5e-15,
            v_work: 0.5,
            wl_levels: WordlineLevels::default(),
            device: DeviceParams::default(),
            delta_offset: 0.02,
        }
    }
}

impl ArrayConfig {
    pub fn with_shape(mut self, n_rows: usize, m_cols: usize) -> Self {
        self.n_rows = n_rows;
        self.m_cols = m_cols;
        self
    }

    pub fn with_sigmas(mut self, sigma_vth: f64, sigma_cm_rel: f64) -> Self {
        self.device = self.device.with_sigmas(sigma_vth, sigma_cm_rel);
        self
    }

    /// Re-centers the HVT state and wordline levels so that every threshold
    /// within `k_sigma · sigma_vth_max` of its mean switches as intended and
    /// charges to the full `v_work`. The LVT mean is kept.
    pub fn clear_of_tails(mut self, sigma_vth_max: f64, k_sigma: f64) -> Self {
        let guard = k_sigma * sigma_vth_max + 0.05;
        let lvt = self.device.vth_lvt_mean;
        let v_wl0 = lvt - guard;
        let v_wl1 = lvt + guard + self.v_work;
        let hvt = v_wl1 + guard;
        let v_wl2 = hvt + guard + self.v_work;
        self.device.vth_hvt_mean = hvt;
        self.wl_levels = WordlineLevels { v_wl0, v_wl1, v_wl2 };
        self
    }

    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = self.device.diagnostics();
        if self.n_rows < 1 {
            out.push("n_rows must be >= 1".into());
        }
        if self.m_cols < 1 {
            out.push("m_cols must be >= 1".into());
        }
        if !(self.c_para >= 0.0) {
            out.push(format!("c_para must be >= 0, got {}", self.c_para));
        }
        if !(self.v_work > 0.0) {
            out.push(format!("v_work must be > 0, got {}", self.v_work));
        }
        if !(self.delta_offset >= 0.0) {
            out.push(format!("delta_offset must be >= 0, got {}", self.delta_offset));
        }
        if out.is_empty() {
            out.extend(self.wl_levels.diagnostics(&self.device));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.diagnostics().into_iter().next() {
            None => Ok(()),
            Some(msg) => Err(Error::InvalidParams(msg)),
        }
    }

    /// Nominal bitline step per charged cell (zero variance), volts.
    pub fn unit_step(&self) -> f64 {
        let c = self.device.c_m_mean;
        self.v_work * c / (self.n_rows as f64 * c + self.c_para)
    }

    /// Nominal bitline swing with every cell charged, excluding the offset.
    pub fn full_swing(&self) -> f64 {
        self.unit_step() * self.n_rows as f64
    }
}

/// Read bias for the current-domain baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurrentReadParams {
    /// Transconductance per volt of overdrive, siemens.
    pub g0: f64,
    /// Gate voltage applied to rows with input '1', volts.
    pub v_read: f64,
}

impl Default for CurrentReadParams {
    fn default() -> Self {
        Self {
            g0: 1e-5,
            v_read: 0.7,
        }
    }
}

impl CurrentReadParams {
    /// Nominal ON current of one LVT cell.
    pub fn unit_current(&self, device: &DeviceParams) -> f64 {
        self.g0 * (self.v_read - device.vth_lvt_mean).max(0.0)
    }
}

/// Row-major grid of bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl BitMatrix {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: bits.len(),
            });
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        Self {
            rows,
            cols,
            bits: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                bits.push(f(i, j));
            }
        }
        Self { rows, cols, bits }
    }

    /// Builds an N×M matrix whose column `j` is `columns[j]`.
    pub fn from_columns(columns: &[Vec<bool>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != rows) {
            return Err(Error::DimensionMismatch {
                expected: rows,
                found: bad.len(),
            });
        }
        Ok(Self::from_fn(rows, cols, |i, j| columns[j][i]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn column(&self, col: usize) -> Vec<bool> {
        (0..self.rows).map(|i| self.get(i, col)).collect()
    }

    /// Parses one row per non-empty line; `0`/`1` separated by commas,
    /// whitespace, or nothing. Lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            rows.push(parse_bits(line)?);
        }
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: cols,
                found: bad.len(),
            });
        }
        let n = rows.len();
        Self::new(n, cols, rows.into_iter().flatten().collect())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl fmt::Display for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let line: Vec<&str> = (0..self.cols)
                .map(|j| if self.get(i, j) { "1" } else { "0" })
                .collect();
            writeln!(f, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Parses a bit vector such as `1,0,1`, `1 0 1` or `101`.
pub fn parse_bits(text: &str) -> Result<Vec<bool>> {
    text.chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Parse(format!("unexpected character `{other}` in bit vector"))),
        })
        .collect()
}

/// Settled bitline voltages of one operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogReadout {
    pub v_bl: Vec<f64>,
    pub step_count: usize,
    /// Cells per column holding charge just before the sharing step.
    pub charged_cells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutRow {
    pub column: usize,
    pub v_bl: f64,
    pub charged_cells: usize,
}

impl AnalogReadout {
    pub fn rows(&self) -> Vec<ReadoutRow> {
        self.v_bl
            .iter()
            .zip(&self.charged_cells)
            .enumerate()
            .map(|(column, (&v_bl, &charged_cells))| ReadoutRow {
                column,
                v_bl,
                charged_cells,
            })
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for row in self.rows() {
            wr.serialize(row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.rows())?)
    }
}

/// Charge-conservation mixer: `Σ v_i·C_i / (Σ C_i + c_para)`.
pub fn charge_share(cap_voltages: &[f64], caps: &[f64], c_para: f64) -> Result<f64> {
    if cap_voltages.len() != caps.len() {
        return Err(Error::DimensionMismatch {
            expected: cap_voltages.len(),
            found: caps.len(),
        });
    }
    if let Some(c) = caps.iter().find(|c| !(**c > 0.0)) {
        return Err(Error::invalid(format!("capacitances must be > 0, got {c}")));
    }
    Ok(share(cap_voltages.iter().copied().zip(caps.iter().copied()), c_para))
}

fn share(cells: impl Iterator<Item = (f64, f64)>, c_para: f64) -> f64 {
    let (mut charge, mut cap) = (0.0, 0.0);
    for (v, c) in cells {
        charge += v * c;
        cap += c;
    }
    let total = cap + c_para;
    if total > 0.0 {
        charge / total
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CimArray {
    config: ArrayConfig,
    cells: Vec<FeFetCell>,
    cap_voltage: Vec<f64>,
}

impl CimArray {
    /// Samples every cell of `weights` in row-major order from one stream.
    pub fn build(config: ArrayConfig, weights: &BitMatrix, seed: u64) -> Result<Self> {
        config.validate()?;
        if weights.rows() != config.n_rows {
            return Err(Error::DimensionMismatch {
                expected: config.n_rows,
                found: weights.rows(),
            });
        }
        if weights.cols() != config.m_cols {
            return Err(Error::DimensionMismatch {
                expected: config.m_cols,
                found: weights.cols(),
            });
        }
        let mut r = rng::stream(seed, &[]);
        let cells = weights
            .bits
            .iter()
            .map(|&bit| device::sample_cell(&config.device, bit, &mut r))
            .collect();
        Ok(Self::from_parts(config, cells))
    }

    /// Wraps explicitly constructed cells (row-major, `n_rows × m_cols`).
    pub fn from_cells(config: ArrayConfig, cells: Vec<FeFetCell>) -> Result<Self> {
        config.validate()?;
        if cells.len() != config.n_rows * config.m_cols {
            return Err(Error::DimensionMismatch {
                expected: config.n_rows * config.m_cols,
                found: cells.len(),
            });
        }
        if let Some(c) = cells.iter().find(|c| !(c.c_m_sampled > 0.0)) {
            return Err(Error::invalid(format!(
                "cell capacitance must be > 0, got {}",
                c.c_m_sampled
            )));
        }
        Ok(Self::from_parts(config, cells))
    }

    fn from_parts(config: ArrayConfig, cells: Vec<FeFetCell>) -> Self {
        let n = cells.len();
        Self {
            config,
            cells,
            cap_voltage: vec![0.0; n],
        }
    }

    pub fn config(&self) -> &ArrayConfig {
        &self.config
    }

    pub fn cell(&self, row: usize, col: usize) -> &FeFetCell {
        &self.cells[self.idx(row, col)]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut FeFetCell {
        let i = self.idx(row, col);
        &mut self.cells[i]
    }

    pub fn cap_voltage(&self, row: usize, col: usize) -> f64 {
        self.cap_voltage[self.idx(row, col)]
    }

    pub fn is_reset(&self) -> bool {
        self.cap_voltage.iter().all(|&v| v == 0.0)
    }

    /// Grounds the bitlines with every wordline high, discharging all capacitors.
    pub fn reset(&mut self) {
        self.cap_voltage.fill(0.0);
    }

    fn idx(&self, row: usize, col: usize) -> usize {
        row * self.config.m_cols + col
    }

    fn check_ready(&self, vector: &[bool]) -> Result<()> {
        if vector.len() != self.config.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.config.n_rows,
                found: vector.len(),
            });
        }
        if !self.is_reset() {
            return Err(Error::NotReset);
        }
        Ok(())
    }

    fn drive_step(&mut self, bitline: f64, wl_of_row: impl Fn(usize) -> f64) {
        let m = self.config.m_cols;
        for i in 0..self.config.n_rows {
            let v_wl = wl_of_row(i);
            for j in 0..m {
                let k = i * m + j;
                let cell = &self.cells[k];
                if device::switch_state(cell, v_wl) == SwitchState::On {
                    self.cap_voltage[k] = device::pass_voltage(cell, v_wl, bitline);
                }
            }
        }
    }

    fn share_step(&mut self) -> (Vec<f64>, Vec<usize>) {
        let (n, m) = (self.config.n_rows, self.config.m_cols);
        let v_wl2 = self.config.wl_levels.v_wl2;
        let mut v_bl = Vec::with_capacity(m);
        let mut charged = Vec::with_capacity(m);
        for j in 0..m {
            charged.push((0..n).filter(|&i| self.cap_voltage[i * m + j] > 0.0).count());
            let connected = (0..n)
                .map(|i| i * m + j)
                .filter(|&k| device::switch_state(&self.cells[k], v_wl2) == SwitchState::On);
            let shared = share(
                connected.clone().map(|k| (self.cap_voltage[k], self.cells[k].c_m_sampled)),
                self.config.c_para,
            );
            let v = (shared + self.config.delta_offset).clamp(0.0, self.config.v_work);
            for k in connected {
                self.cap_voltage[k] = v;
            }
            v_bl.push(v);
        }
        (v_bl, charged)
    }

    /// Driven steps `(bitline, [WL for '1', WL for '0'])`, then the share.
    fn schedule(&mut self, steps: &[(f64, [f64; 2])], vector: &[bool]) -> AnalogReadout {
        for &(bitline, [wl_one, wl_zero]) in steps {
            self.drive_step(bitline, |i| if vector[i] { wl_one } else { wl_zero });
        }
        let (v_bl, charged_cells) = self.share_step();
        AnalogReadout {
            v_bl,
            step_count: steps.len() + 1,
            charged_cells,
        }
    }

    /// Three-step associative search; each column's voltage tracks the
    /// number of rows where `query` equals the stored bit.
    pub fn cam_search(&mut self, query: &[bool]) -> Result<AnalogReadout> {
        self.check_ready(query)?;
        let WordlineLevels { v_wl0, v_wl1, v_wl2 } = self.config.wl_levels;
        let steps = [
            (self.config.v_work, [v_wl1, v_wl2]),
            (0.0, [v_wl0, v_wl1]),
        ];
        Ok(self.schedule(&steps, query))
    }

    /// Two-step multiply-accumulate; each column's voltage tracks the
    /// bitwise dot product of `input` and the stored column.
    pub fn mac(&mut self, input: &[bool]) -> Result<AnalogReadout> {
        self.check_ready(input)?;
        let WordlineLevels { v_wl0, v_wl1, .. } = self.config.wl_levels;
        let steps = [(self.config.v_work, [v_wl1, v_wl0])];
        Ok(self.schedule(&steps, input))
    }

    /// Current-summing baseline: `I_j = Σ_i g0 · max(0, v_gate_i − vth_ij)`,
    /// with `v_gate = v_read` for input '1' and `v_wl0` for input '0'.
    pub fn current_domain_mac(&self, input: &[bool], read: &CurrentReadParams) -> Result<Vec<f64>> {
        if input.len() != self.config.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.config.n_rows,
                found: input.len(),
            });
        }
        let m = self.config.m_cols;
        let mut current = vec![0.0; m];
        for (i, &bit) in input.iter().enumerate() {
            let v_gate = if bit {
                read.v_read
            } else {
                self.config.wl_levels.v_wl0
            };
            for (j, acc) in current.iter_mut().enumerate() {
                let vth = self.cells[i * m + j].vth_sampled;
                if v_gate > vth {
                    *acc += read.g0 * (v_gate - vth);
                }
            }
        }
        Ok(current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_bits(n: usize, seed: u64) -> Vec<bool> {
        let mut r = rng::stream(seed, &[77]);
        (0..n).map(|_| r.random()).collect()
    }

    #[test]
    fn build_all_ones_zero_variance() {
        let cfg = ArrayConfig::default().with_shape(2, 2);
        let a = CimArray::build(cfg, &BitMatrix::filled(2, 2, true), 1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(a.cell(i, j), a.cell(0, 0));
                assert_eq!(a.cell(i, j).vth_sampled, cfg.device.vth_lvt_mean);
            }
        }
        assert!(a.is_reset());
    }

    #[test]
    fn build_is_reproducible() {
        let cfg = ArrayConfig::default().with_sigmas(0.054, 0.05);
        let w = BitMatrix::from_fn(64, 8, |i, j| (i + j) % 3 == 0);
        assert_eq!(
            CimArray::build(cfg, &w, 11).unwrap(),
            CimArray::build(cfg, &w, 11).unwrap()
        );
        assert_ne!(
            CimArray::build(cfg, &w, 11).unwrap(),
            CimArray::build(cfg, &w, 12).unwrap()
        );
    }

    #[test]
    fn build_rejects_wrong_shape() {
        let cfg = ArrayConfig::default();
        let err = CimArray::build(cfg, &BitMatrix::filled(63, 8, true), 0).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 64, found: 63 }));
    }

    #[test]
    fn sampled_population_matches_device_moments() {
        let cfg = ArrayConfig::default().with_sigmas(0.054, 0.0);
        let w = BitMatrix::from_fn(64, 8, |i, _| i % 2 == 0);
        let mut lvt = crate::stats::Running::new();
        let mut hvt = crate::stats::Running::new();
        for seed in 0..40 {
            let a = CimArray::build(cfg, &w, seed).unwrap();
            for i in 0..64 {
                for j in 0..8 {
                    let c = a.cell(i, j);
                    if c.stored_bit { lvt.push(c.vth_sampled) } else { hvt.push(c.vth_sampled) }
                }
            }
        }
        // 10240 samples per state: mean within 5 SE, std within 5%.
        assert!((lvt.mean() - 0.3).abs() < 5.0 * lvt.sem());
        assert!((hvt.mean() - 1.3).abs() < 5.0 * hvt.sem());
        assert!((lvt.std() / 0.054 - 1.0).abs() < 0.05);
        assert!((hvt.std() / 0.054 - 1.0).abs() < 0.05);
    }

    #[test]
    fn charge_share_examples() {
        assert_eq!(charge_share(&[0.5, 0.5], &[1e-15, 1e-15], 0.0).unwrap(), 0.5);
        assert_eq!(charge_share(&[0.5, 0.0], &[1e-15, 1e-15], 0.0).unwrap(), 0.25);
        let v = charge_share(&[0.5, 0.5, 0.0], &[1.0e-15, 1.1e-15, 0.9e-15], 0.5e-15).unwrap();
        assert!((v - 0.3).abs() < 1e-15, "{v}");
        assert!(charge_share(&[0.5], &[1e-15, 1e-15], 0.0).is_err());
        assert!(charge_share(&[0.5], &[0.0], 0.0).is_err());
    }

    #[test]
    fn full_match_without_parasitics_reaches_v_work() {
        let cfg = ArrayConfig {
            c_para: 0.0,
            delta_offset: 0.0,
            ..ArrayConfig::default().with_shape(8, 1)
        };
        let stored = BitMatrix::from_fn(8, 1, |i, _| i % 3 == 0);
        let mut a = CimArray::build(cfg, &stored, 0).unwrap();
        let r = a.cam_search(&stored.column(0)).unwrap();
        assert_eq!(r.v_bl[0], cfg.v_work);
        assert_eq!(r.charged_cells[0], 8);
        assert_eq!(r.step_count, 3);
    }

    #[test]
    fn cam_is_linear_in_matches() {
        let cfg = ArrayConfig::default().with_shape(8, 1);
        let stored = vec![true, false, true, true, false, false, true, false];
        let w = BitMatrix::from_columns(&[stored.clone()]).unwrap();
        let mut a = CimArray::build(cfg, &w, 3).unwrap();
        let slope = cfg.unit_step();
        for k in 0..=8 {
            // flip the last 8-k bits to get exactly k matches
            let q: Vec<bool> = stored.iter().enumerate().map(|(i, &b)| if i < k { b } else { !b }).collect();
            a.reset();
            let r = a.cam_search(&q).unwrap();
            assert_eq!(r.charged_cells[0], k);
            let expect = slope * k as f64 + cfg.delta_offset;
            assert!((r.v_bl[0] - expect).abs() < 1e-15, "k={k}");
        }
    }

    #[test]
    fn complement_query_charges_nothing() {
        let cfg = ArrayConfig::default().with_shape(16, 2);
        let w = BitMatrix::from_fn(16, 2, |i, j| (i * 7 + j) % 5 < 2);
        let mut a = CimArray::build(cfg, &w, 0).unwrap();
        let q: Vec<bool> = w.column(1).iter().map(|b| !b).collect();
        let r = a.cam_search(&q).unwrap();
        assert_eq!(r.charged_cells[1], 0);
        assert_eq!(r.v_bl[1], cfg.delta_offset);
    }

    #[test]
    fn mac_all_zero_input_reads_delta() {
        let cfg = ArrayConfig::default();
        let w = BitMatrix::filled(64, 8, true);
        let mut a = CimArray::build(cfg, &w, 0).unwrap();
        let r = a.mac(&vec![false; 64]).unwrap();
        assert!(r.charged_cells.iter().all(|&c| c == 0));
        assert!(r.v_bl.iter().all(|&v| v == cfg.delta_offset));
        assert_eq!(r.step_count, 2);
    }

    #[test]
    fn mac_matches_closed_form() {
        let cfg = ArrayConfig::default().with_shape(32, 4);
        let w = BitMatrix::from_fn(32, 4, |i, j| (i + 3 * j) % 4 != 0);
        let x = random_bits(32, 5);
        let mut a = CimArray::build(cfg, &w, 0).unwrap();
        let r = a.mac(&x).unwrap();
        for j in 0..4 {
            let dot = (0..32).filter(|&i| x[i] && w.get(i, j)).count();
            assert_eq!(r.charged_cells[j], dot);
            let expect = cfg.unit_step() * dot as f64 + cfg.delta_offset;
            assert!((r.v_bl[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn operations_require_reset() {
        let cfg = ArrayConfig::default().with_shape(4, 1);
        let mut a = CimArray::build(cfg, &BitMatrix::filled(4, 1, true), 0).unwrap();
        a.cam_search(&[true; 4]).unwrap();
        assert!(matches!(a.mac(&[true; 4]), Err(Error::NotReset)));
        assert!(matches!(a.cam_search(&[true; 4]), Err(Error::NotReset)));
        a.reset();
        assert!(a.is_reset());
        a.reset();
        assert!(a.is_reset());
        let r = a.mac(&[false; 4]).unwrap();
        assert_eq!(r.v_bl[0], cfg.delta_offset);
    }

    #[test]
    fn wrong_query_length_is_rejected() {
        let cfg = ArrayConfig::default().with_shape(4, 1);
        let mut a = CimArray::build(cfg, &BitMatrix::filled(4, 1, true), 0).unwrap();
        assert!(matches!(
            a.cam_search(&[true; 3]),
            Err(Error::DimensionMismatch { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn current_domain_zero_variance_is_proportional() {
        let cfg = ArrayConfig::default().with_shape(16, 3);
        let w = BitMatrix::from_fn(16, 3, |i, j| (i + j) % 2 == 0 || j == 2);
        let a = CimArray::build(cfg, &w, 0).unwrap();
        let read = CurrentReadParams::default();
        let unit = read.unit_current(&cfg.device);
        let x = random_bits(16, 9);
        let i_bl = a.current_domain_mac(&x, &read).unwrap();
        for j in 0..3 {
            let dot = (0..16).filter(|&i| x[i] && w.get(i, j)).count();
            assert!((i_bl[j] - unit * dot as f64).abs() < 1e-18);
        }
        assert_eq!(a.current_domain_mac(&[false; 16], &read).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn mis_switching_is_visible() {
        // An LVT sample above v_wl1 fails to charge.
        let cfg = ArrayConfig::default().with_shape(2, 1);
        let mut a = CimArray::build(cfg, &BitMatrix::filled(2, 1, true), 0).unwrap();
        a.cell_mut(1, 0).vth_sampled = 1.05;
        let r = a.mac(&[true, true]).unwrap();
        assert_eq!(r.charged_cells[0], 1);
    }

    #[test]
    fn readout_serializes_rows() {
        let r = AnalogReadout {
            v_bl: vec![0.1, 0.2],
            step_count: 2,
            charged_cells: vec![3, 4],
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "column,v_bl,charged_cells\n0,0.1,3\n1,0.2,4\n");
        assert!(r.to_json().unwrap().contains("\"charged_cells\": 4"));
    }

    #[test]
    fn bit_matrix_parse_round_trips() {
        let m = BitMatrix::parse("# weights\n1,0,1\n0 1 1\n110\n").unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 3));
        assert_eq!(BitMatrix::parse(&m.to_string()).unwrap(), m);
        assert!(BitMatrix::parse("10\n1\n").is_err());
        assert!(BitMatrix::parse("1x\n").is_err());
    }

    proptest! {
        #[test]
        fn cam_counts_equal_n_minus_hamming(seed in any::<u64>()) {
            let cfg = ArrayConfig::default().with_shape(24, 3);
            let w = BitMatrix::from_fn(24, 3, |i, j| random_bits(72, seed)[i * 3 + j]);
            let q = random_bits(24, seed ^ 1);
            let mut a = CimArray::build(cfg, &w, seed).unwrap();
            let r = a.cam_search(&q).unwrap();
            for j in 0..3 {
                let hd = (0..24).filter(|&i| q[i] != w.get(i, j)).count();
                prop_assert_eq!(r.charged_cells[j], 24 - hd);
            }
            a.reset();
            let r = a.mac(&q).unwrap();
            for j in 0..3 {
                let dot = (0..24).filter(|&i| q[i] && w.get(i, j)).count();
                prop_assert_eq!(r.charged_cells[j], dot);
            }
        }

        #[test]
        fn charge_share_conserves_charge(
            cells in proptest::collection::vec((0.0f64..1.0, 0.1e-15f64..3e-15), 1..40),
            c_para in 0.0f64..20e-15,
        ) {
            let (v, c): (Vec<f64>, Vec<f64>) = cells.into_iter().unzip();
            let out = charge_share(&v, &c, c_para).unwrap();
            let q: f64 = v.iter().zip(&c).map(|(a, b)| a * b).sum();
            let total: f64 = c.iter().sum::<f64>() + c_para;
            prop_assert!((out * total - q).abs() <= 1e-12 * q.abs().max(1e-30));
            let vmax = v.iter().cloned().fold(0.0, f64::max);
            prop_assert!(out <= vmax * (1.0 + 1e-12));
        }

        #[test]
        fn columns_are_independent(seed in any::<u64>(), col in 1usize..4, row in 0usize..16, vth in -0.5f64..2.5) {
            let cfg = ArrayConfig::default().with_shape(16, 4).with_sigmas(0.05, 0.05);
            let w = BitMatrix::from_fn(16, 4, |i, j| random_bits(64, seed)[i * 4 + j]);
            let q = random_bits(16, seed ^ 3);
            let mut a = CimArray::build(cfg, &w, seed).unwrap();
            let before = a.cam_search(&q).unwrap();
            a.reset();
            a.cell_mut(row, col).vth_sampled = vth;
            a.cell_mut(row, col).stored_bit ^= true;
            let after = a.cam_search(&q).unwrap();
            prop_assert_eq!(before.v_bl[0], after.v_bl[0]);
        }

        #[test]
        fn cap_voltages_stay_in_range(seed in any::<u64>()) {
            let cfg = ArrayConfig::default().with_shape(16, 2).with_sigmas(0.2, 0.3);
            let w = BitMatrix::from_fn(16, 2, |i, j| random_bits(32, seed)[i * 2 + j]);
            let mut a = CimArray::build(cfg, &w, seed).unwrap();
            let r = a.cam_search(&random_bits(16, seed ^ 5)).unwrap();
            for i in 0..16 { for j in 0..2 {
                let v = a.cap_voltage(i, j);
                prop_assert!((0.0..=cfg.v_work).contains(&v));
            }}
            for v in r.v_bl { prop_assert!((0.0..=cfg.v_work).contains(&v)); }
        }
    }
}
