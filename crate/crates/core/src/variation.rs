//! Monte-Carlo studies: transfer curves, worst-case activation, sense
//! margin and associative-retrieval quality loss.
//!
//! Every trial draws from its own stream, `rng::stream(plan.seed, path)`,
//! where `path` names the study and the trial's coordinates but never the
//! variation level. Threshold and capacitance draws are therefore paired
//! across sigma values, and a parallel schedule returns the same numbers
//! as a serial one.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{ArrayConfig, BitMatrix, CimArray, CurrentReadParams};
use crate::device;
use crate::hdc::{AssociativeMemory, Hypervector, ReadoutDomain, ReadoutNoise, RetrievalTask, RetrievalTaskSpec};
use crate::rng;
use crate::sensing::{self, AdcConfig, CodePopulation, MarginReport};
use crate::stats::{self, Running};
use crate::{Error, Result};

const TRANSFER: u64 = 1;
const WORST_CASE: u64 = 2;
const QUALITY: u64 = 3;
const NOISE: u64 = 4;

/// Samples per work item in [`worst_case_activation`].
const BLOCK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Charge,
    Current,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Charge => "charge",
            Domain::Current => "current",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "charge" => Ok(Domain::Charge),
            "current" => Ok(Domain::Current),
            other => Err(Error::Parse(format!("unknown domain `{other}` (expected charge or current)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McPlan {
    pub trials: usize,
    pub sigma_vth_list: Vec<f64>,
    pub sigma_cm_list: Vec<f64>,
    pub n_rows: usize,
    pub activation_grid: Vec<f64>,
    #[serde(skip)]
    pub seed: u64,
    /// Array template; its shape and sigmas are overridden per study.
    pub base: ArrayConfig,
    /// When set, the HVT mean and wordline levels are re-centered so both
    /// threshold tails stay clear up to this many sigmas of the largest
    /// `sigma_vth_list` entry.
    pub tail_clearance_k_sigma: Option<f64>,
    pub current_read: CurrentReadParams,
}

impl Default for McPlan {
    fn default() -> Self {
        Self {
            trials: 1000,
            sigma_vth_list: vec![0.03, 0.054, 0.11, 0.17],
            sigma_cm_list: vec![0.0],
            n_rows: 64,
            activation_grid: (1..20).map(|i| i as f64 * 0.05).collect(),
            seed: 0,
            base: ArrayConfig::default(),
            tail_clearance_k_sigma: Some(8.0),
            current_read: CurrentReadParams::default(),
        }
    }
}

impl McPlan {
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.trials < 1 {
            out.push("trials must be >= 1".into());
        }
        if self.n_rows < 1 {
            out.push("n_rows must be >= 1".into());
        }
        if self.sigma_vth_list.is_empty() {
            out.push("sigma_vth_list must not be empty".into());
        }
        if self.sigma_cm_list.is_empty() {
            out.push("sigma_cm_list must not be empty".into());
        }
        for &s in &self.sigma_vth_list {
            if !(s >= 0.0) {
                out.push(format!("sigma_vth_list entries must be >= 0, got {s}"));
            }
        }
        for &s in &self.sigma_cm_list {
            if !(0.0..=1.0).contains(&s) {
                out.push(format!("sigma_cm_list entries must be in [0, 1], got {s}"));
            }
        }
        for &p in &self.activation_grid {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("activation_grid entries must be in [0, 1], got {p}"));
            }
        }
        if let Some(k) = self.tail_clearance_k_sigma {
            if !(k >= 0.0) {
                out.push(format!("tail_clearance_k_sigma must be >= 0, got {k}"));
            }
        }
        if !(self.current_read.g0 > 0.0) {
            out.push(format!("current_read.g0 must be > 0, got {}", self.current_read.g0));
        }
        if out.is_empty() {
            out.extend(self.array_config(0.0, 0.0, 1).diagnostics());
            if self.current_read.unit_current(&self.base.device) <= 0.0 {
                out.push("current_read.v_read must exceed the LVT mean threshold".into());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.diagnostics().into_iter().next() {
            None => Ok(()),
            Some(msg) => Err(Error::InvalidParams(msg)),
        }
    }

    fn max_sigma_vth(&self) -> f64 {
        self.sigma_vth_list.iter().copied().fold(0.0, f64::max)
    }

    /// `n_rows × m_cols` array at the given variation levels.
    pub fn array_config(&self, sigma_vth: f64, sigma_cm: f64, m_cols: usize) -> ArrayConfig {
        let mut cfg = self.base.with_shape(self.n_rows, m_cols);
        if let Some(k) = self.tail_clearance_k_sigma {
            cfg = cfg.clear_of_tails(self.max_sigma_vth(), k);
        }
        cfg.with_sigmas(sigma_vth, sigma_cm)
    }
}

/// Rows where both the stored bit and the input are '1' for the first `k`
/// rows of a random order; every other row gets one of the three remaining
/// combinations uniformly.
fn code_pattern<R: Rng + ?Sized>(n: usize, k: usize, r: &mut R) -> (Vec<bool>, Vec<bool>) {
    let mut stored = vec![false; n];
    let mut input = vec![false; n];
    let active = index::sample(r, n, k).into_vec();
    let mut is_active = vec![false; n];
    for &i in &active {
        is_active[i] = true;
    }
    for i in 0..n {
        if is_active[i] {
            stored[i] = true;
            input[i] = true;
        } else {
            match r.random_range(0..3) {
                0 => {}
                1 => stored[i] = true,
                _ => input[i] = true,
            }
        }
    }
    (stored, input)
}

/// One fresh single-column array and input achieving exactly `k` active
/// cells. Charge domain returns the MAC `v_bl`; current domain returns the
/// column current normalized by the nominal unit current.
fn sample_code(plan: &McPlan, cfg: &ArrayConfig, domain: Domain, k: usize, trial: usize) -> Result<f64> {
    let n = cfg.n_rows;
    let (stored, input) = code_pattern(n, k, &mut rng::stream(plan.seed, &[TRANSFER, k as u64, trial as u64, 1]));
    let weights = BitMatrix::new(n, 1, stored)?;
    let device_seed = rng::derive_seed(plan.seed, &[TRANSFER, k as u64, trial as u64, 0]);
    let mut array = CimArray::build(*cfg, &weights, device_seed)?;
    match domain {
        Domain::Charge => Ok(array.mac(&input)?.v_bl[0]),
        Domain::Current => {
            let i = array.current_domain_mac(&input, &plan.current_read)?[0];
            Ok(i / plan.current_read.unit_current(&cfg.device))
        }
    }
}

fn sample_population(plan: &McPlan, cfg: &ArrayConfig, domain: Domain, k: usize) -> Result<Vec<f64>> {
    (0..plan.trials)
        .into_par_iter()
        .map(|t| sample_code(plan, cfg, domain, k, t))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPoint {
    pub code: usize,
    pub mean: f64,
    pub std: f64,
    pub samples: u64,
}

/// Output statistics per theoretical code `0..=n_rows`. Charge-domain values
/// are bitline volts; current-domain values are in unit-cell currents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCurve {
    pub domain: Domain,
    pub sigma_vth: f64,
    pub sigma_cm: f64,
    pub points: Vec<TransferPoint>,
}

impl TransferCurve {
    pub fn max_std(&self) -> f64 {
        self.points.iter().map(|p| p.std).fold(0.0, f64::max)
    }
}

pub fn transfer_curve(plan: &McPlan, domain: Domain, sigma_vth: f64, sigma_cm: f64) -> Result<TransferCurve> {
    plan.validate()?;
    let cfg = plan.array_config(sigma_vth, sigma_cm, 1);
    let points = (0..=plan.n_rows)
        .map(|k| {
            let r: Running = sample_population(plan, &cfg, domain, k)?.into_iter().collect();
            Ok(TransferPoint {
                code: k,
                mean: r.mean(),
                std: r.std(),
                samples: r.count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferCurve {
        domain,
        sigma_vth,
        sigma_cm,
        points,
    })
}

/// One curve per `(sigma_vth, sigma_cm)` in plan order.
pub fn run_transfer_curves(plan: &McPlan, domain: Domain) -> Result<Vec<TransferCurve>> {
    let mut out = Vec::new();
    for &cm in &plan.sigma_cm_list {
        for &vth in &plan.sigma_vth_list {
            out.push(transfer_curve(plan, domain, vth, cm)?);
        }
    }
    Ok(out)
}

pub fn write_transfer_csv<W: Write>(curves: &[TransferCurve], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["domain", "sigma_vth", "sigma_cm", "code", "mean", "std", "samples"])?;
    for c in curves {
        for p in &c.points {
            wr.write_record([
                c.domain.as_str().to_string(),
                c.sigma_vth.to_string(),
                c.sigma_cm.to_string(),
                p.code.to_string(),
                p.mean.to_string(),
                p.std.to_string(),
                p.samples.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationPoint {
    pub activation: f64,
    pub mean: f64,
    pub std: f64,
    /// Standard error of `std`.
    pub std_se: f64,
    /// Standard error of `mean`.
    pub mean_se: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseProfile {
    pub sigma_cm: f64,
    pub points: Vec<ActivationPoint>,
    pub argmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryRow {
    pub activation_low: f64,
    pub activation_high: f64,
    pub std_low: f64,
    pub std_high: f64,
    /// Combined standard error of `std_high − std_low`.
    pub se: f64,
}

impl SymmetryRow {
    pub fn z(&self) -> f64 {
        if self.se > 0.0 {
            (self.std_high - self.std_low).abs() / self.se
        } else if self.std_high == self.std_low {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

impl WorstCaseProfile {
    /// Grid points `p` and `1 − p` matched up (within 1e-9).
    pub fn symmetry(&self) -> Vec<SymmetryRow> {
        let mut out = Vec::new();
        for (i, a) in self.points.iter().enumerate() {
            if a.activation >= 0.5 {
                continue;
            }
            if let Some(b) = self.points[i + 1..]
                .iter()
                .find(|b| (a.activation + b.activation - 1.0).abs() < 1e-9)
            {
                out.push(SymmetryRow {
                    activation_low: a.activation,
                    activation_high: b.activation,
                    std_low: a.std,
                    std_high: b.std,
                    se: a.std_se.hypot(b.std_se),
                });
            }
        }
        out
    }
}

/// `v_work · Σ v_i·C_i / (Σ C_i + C_para)` with `v_i ~ Bernoulli(p)`.
///
/// Activations for `p` and `1 − p` come from the same uniforms (one is the
/// complement of the other) and share the capacitance draws.
fn bernoulli_block(cfg: &ArrayConfig, p: f64, seed: u64, block: usize, len: usize) -> Vec<f64> {
    let q = p.min(1.0 - p);
    let flip = p > 0.5;
    let key = (q * 1e6).round() as u64;
    let mut r = rng::stream(seed, &[WORST_CASE, key, block as u64]);
    let n = cfg.n_rows;
    (0..len)
        .map(|_| {
            let mut num = 0.0;
            let mut den = cfg.c_para;
            for _ in 0..n {
                let c = device::sample_capacitance(&cfg.device, &mut r);
                let u: f64 = r.random();
                if (u < q) != flip {
                    num += c;
                }
                den += c;
            }
            cfg.v_work * num / den
        })
        .collect()
}

/// Bitline spread versus activation fraction, one profile per `sigma_cm`.
/// `plan.trials` samples per grid point.
pub fn worst_case_activation(plan: &McPlan) -> Result<Vec<WorstCaseProfile>> {
    plan.validate()?;
    if plan.activation_grid.is_empty() {
        return Err(Error::invalid("activation_grid must not be empty"));
    }
    let blocks = plan.trials.div_ceil(BLOCK);
    plan.sigma_cm_list
        .iter()
        .map(|&cm| {
            let cfg = plan.array_config(0.0, cm, 1);
            let points: Vec<ActivationPoint> = plan
                .activation_grid
                .iter()
                .map(|&p| {
                    let samples: Vec<f64> = (0..blocks)
                        .into_par_iter()
                        .flat_map_iter(|b| {
                            let len = BLOCK.min(plan.trials - b * BLOCK);
                            bernoulli_block(&cfg, p, plan.seed, b, len)
                        })
                        .collect();
                    let r: Running = samples.iter().copied().collect();
                    ActivationPoint {
                        activation: p,
                        mean: r.mean(),
                        std: r.std(),
                        std_se: stats::std_standard_error(&samples),
                        mean_se: r.sem(),
                        samples: r.count(),
                    }
                })
                .collect();
            let argmax = points
                .iter()
                .fold(&points[0], |best, x| if x.std > best.std { x } else { best })
                .activation;
            Ok(WorstCaseProfile {
                sigma_cm: cm,
                points,
                argmax,
            })
        })
        .collect()
}

/// Expected bitline voltage at activation `p`, to first order in the
/// capacitance spread.
pub fn expected_activation_mean(cfg: &ArrayConfig, p: f64) -> f64 {
    let n = cfg.n_rows as f64;
    let c = cfg.device.c_m_mean;
    cfg.v_work * p * n * c / (n * c + cfg.c_para)
}

pub fn write_worst_case_csv<W: Write>(profiles: &[WorstCaseProfile], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["sigma_cm", "activation", "mean", "std", "std_se", "samples", "is_argmax"])?;
    for prof in profiles {
        for p in &prof.points {
            wr.write_record([
                prof.sigma_cm.to_string(),
                p.activation.to_string(),
                p.mean.to_string(),
                p.std.to_string(),
                p.std_se.to_string(),
                p.samples.to_string(),
                (p.activation == prof.argmax).to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Charge-domain MAC populations for the codes `N/2 − half_width ..= N/2 +
/// half_width` at one variation point, `plan.trials` fresh arrays each,
/// reduced to the adjacent-code margin.
pub fn sense_margin_study(
    plan: &McPlan,
    sigma_vth: f64,
    sigma_cm: f64,
    half_width: usize,
    k_sigma: f64,
) -> Result<MarginReport> {
    plan.validate()?;
    let cfg = plan.array_config(sigma_vth, sigma_cm, 1);
    let mid = plan.n_rows / 2;
    let lo = mid.saturating_sub(half_width);
    let hi = (mid + half_width).min(plan.n_rows);
    let populations = (lo..=hi)
        .map(|k| {
            Ok(CodePopulation {
                code: k as u64,
                samples: sample_population(plan, &cfg, Domain::Charge, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sensing::sense_margin(&populations, k_sigma)
}

/// Parameters of [`quality_loss_study`] beyond the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityStudy {
    pub dims: Vec<usize>,
    pub domains: Vec<Domain>,
    pub task: RetrievalTaskSpec,
    /// Independent task instances (codebook, queries, devices) per dimension.
    pub instances: usize,
}

impl Default for QualityStudy {
    fn default() -> Self {
        Self {
            dims: vec![512, 1024, 2048],
            domains: vec![Domain::Charge, Domain::Current],
            task: RetrievalTaskSpec::default(),
            instances: 8,
        }
    }
}

impl QualityStudy {
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = self.task.diagnostics();
        if self.dims.is_empty() {
            out.push("dims must not be empty".into());
        }
        if self.dims.contains(&0) {
            out.push("dims entries must be >= 1".into());
        }
        if self.domains.is_empty() {
            out.push("domains must not be empty".into());
        }
        if self.instances < 1 {
            out.push("instances must be >= 1".into());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub domain: Domain,
    pub sigma_vth: f64,
    pub sigma_cm: f64,
    pub dim: usize,
    pub ideal_accuracy: f64,
    pub noisy_accuracy: f64,
    /// `(ideal − noisy) · 100`, percentage points.
    pub loss_pct: f64,
    pub queries: usize,
}

fn readout_domain(plan: &McPlan, domain: Domain) -> ReadoutDomain {
    match domain {
        Domain::Charge => ReadoutDomain::Charge,
        Domain::Current => ReadoutDomain::Current(plan.current_read),
    }
}

/// Correct-decision counts for one task instance: exact backing first,
/// then one entry per `(domain, sigma_cm, sigma_vth)` in row order.
fn quality_instance(plan: &McPlan, study: &QualityStudy, dim: usize, inst: usize) -> Result<(usize, Vec<usize>)> {
    let task = RetrievalTask::generate(
        dim,
        &study.task,
        &mut rng::stream(plan.seed, &[QUALITY, dim as u64, inst as u64, 0]),
    );
    let mut exact = AssociativeMemory::from_vectors(task.codebook.clone())?;
    let mut ideal = 0;
    for (probe, target) in &task.queries {
        if exact.query(probe)?.index == *target {
            ideal += 1;
        }
    }
    let device_seed = rng::derive_seed(plan.seed, &[QUALITY, dim as u64, inst as u64, 1]);
    let mut noisy = Vec::new();
    for &domain in &study.domains {
        for &cm in &plan.sigma_cm_list {
            for &vth in &plan.sigma_vth_list {
                let cfg = plan.array_config(vth, cm, 1);
                let adc = AdcConfig::log2_aligned(&cfg);
                let mut mem = AssociativeMemory::from_vectors(task.codebook.clone())?.with_cim(
                    cfg,
                    adc,
                    readout_domain(plan, domain),
                    device_seed,
                )?;
                let mut correct = 0;
                for (probe, target) in &task.queries {
                    if mem.query(probe)?.index == *target {
                        correct += 1;
                    }
                }
                noisy.push(correct);
            }
        }
    }
    Ok((ideal, noisy))
}

/// Associative retrieval through both array domains at every
/// `(sigma, dim)`. Codebooks, queries and device draws are shared across
/// sigma values and domains.
pub fn quality_loss_study(plan: &McPlan, study: &QualityStudy) -> Result<Vec<QualityRow>> {
    plan.validate()?;
    if let Some(msg) = study.diagnostics().into_iter().next() {
        return Err(Error::InvalidParams(msg));
    }
    let mut rows = Vec::new();
    for &dim in &study.dims {
        let results = (0..study.instances)
            .into_par_iter()
            .map(|inst| quality_instance(plan, study, dim, inst))
            .collect::<Result<Vec<_>>>()?;
        let queries = study.instances * study.task.queries;
        let ideal: usize = results.iter().map(|r| r.0).sum();
        let ideal_accuracy = ideal as f64 / queries as f64;
        let mut slot = 0;
        for &domain in &study.domains {
            for &cm in &plan.sigma_cm_list {
                for &vth in &plan.sigma_vth_list {
                    let correct: usize = results.iter().map(|r| r.1[slot]).sum();
                    let noisy_accuracy = correct as f64 / queries as f64;
                    rows.push(QualityRow {
                        domain,
                        sigma_vth: vth,
                        sigma_cm: cm,
                        dim,
                        ideal_accuracy,
                        noisy_accuracy,
                        loss_pct: (ideal as f64 - correct as f64) * 100.0 / queries as f64,
                        queries,
                    });
                    slot += 1;
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_quality_csv<W: Write>(rows: &[QualityRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "domain",
        "sigma_vth",
        "sigma_cm",
        "dim",
        "ideal_accuracy",
        "noisy_accuracy",
        "loss_pct",
        "queries",
    ])?;
    for r in rows {
        wr.write_record([
            r.domain.as_str().to_string(),
            r.sigma_vth.to_string(),
            r.sigma_cm.to_string(),
            r.dim.to_string(),
            r.ideal_accuracy.to_string(),
            r.noisy_accuracy.to_string(),
            r.loss_pct.to_string(),
            r.queries.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Per-tile readout noise for the PMF model: the standard deviation of
/// (estimated − exact) single-tile Hamming distance over random stored
/// columns and probes.
pub fn calibrate_readout_noise(
    plan: &McPlan,
    domain: Domain,
    sigma_vth: f64,
    sigma_cm: f64,
    columns: usize,
) -> Result<ReadoutNoise> {
    plan.validate()?;
    let cfg = plan.array_config(sigma_vth, sigma_cm, 1);
    let adc = AdcConfig::log2_aligned(&cfg);
    let data_rows = crate::hdc::TileLayout::new(cfg.n_rows, cfg.n_rows, adc.levels())?.data_rows;
    let errors: Vec<f64> = (0..plan.trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(plan.seed, &[NOISE, t as u64]);
            let vs: Vec<Hypervector> = (0..columns.max(1)).map(|_| Hypervector::random(data_rows, &mut r)).collect();
            let probe = Hypervector::random(data_rows, &mut r);
            let mut mem = AssociativeMemory::from_vectors(vs.clone())?.with_cim(
                cfg,
                adc,
                readout_domain(plan, domain),
                rng::derive_seed(plan.seed, &[NOISE, t as u64, 1]),
            )?;
            let res = mem.query(&probe)?;
            vs.iter()
                .zip(&res.distances)
                .map(|(v, d)| Ok(d - crate::hdc::hamming(v, &probe)? as f64))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let r: Running = errors.into_iter().collect();
    Ok(ReadoutNoise {
        sigma_counts_per_tile: r.variance().sqrt().hypot(r.mean()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan() -> McPlan {
        McPlan {
            trials: 200,
            n_rows: 16,
            seed: 11,
            ..McPlan::default()
        }
    }

    #[test]
    fn default_plan_is_valid() {
        assert!(McPlan::default().diagnostics().is_empty());
    }

    #[test]
    fn diagnostics_report_every_violation() {
        let plan = McPlan {
            trials: 0,
            sigma_vth_list: vec![],
            activation_grid: vec![1.5],
            ..McPlan::default()
        };
        assert_eq!(plan.diagnostics().len(), 3);
    }

    #[test]
    fn code_pattern_has_exactly_k_active_cells() {
        let mut r = rng::stream(3, &[]);
        for k in 0..=32 {
            let (s, i) = code_pattern(32, k, &mut r);
            assert_eq!(s.iter().zip(&i).filter(|(a, b)| **a && **b).count(), k);
        }
    }

    #[test]
    fn zero_variance_charge_curve_is_the_ideal_line() {
        let plan = McPlan {
            sigma_vth_list: vec![0.0],
            tail_clearance_k_sigma: None,
            ..small_plan()
        };
        let curve = transfer_curve(&plan, Domain::Charge, 0.0, 0.0).unwrap();
        let cfg = plan.array_config(0.0, 0.0, 1);
        assert_eq!(curve.points.len(), 17);
        for p in &curve.points {
            let ideal = cfg.unit_step() * p.code as f64 + cfg.delta_offset;
            assert!((p.mean - ideal).abs() <= 1e-12 * ideal.max(1e-3), "{p:?}");
            assert_eq!(p.std, 0.0);
        }
    }

    #[test]
    fn charge_curve_is_immune_to_threshold_spread() {
        let plan = small_plan();
        let curve = transfer_curve(&plan, Domain::Charge, 0.17, 0.0).unwrap();
        assert_eq!(curve.max_std(), 0.0);
    }

    #[test]
    fn current_spread_grows_with_sigma() {
        let plan = small_plan();
        let curves = run_transfer_curves(&plan, Domain::Current).unwrap();
        for w in curves.windows(2) {
            for (a, b) in w[0].points.iter().zip(&w[1].points).skip(1) {
                assert!(b.std > a.std, "code {}: {} !< {}", a.code, a.std, b.std);
            }
        }
    }

    #[test]
    fn transfer_curve_is_reproducible() {
        let plan = small_plan();
        let a = transfer_curve(&plan, Domain::Current, 0.054, 0.0).unwrap();
        let b = transfer_curve(&plan, Domain::Current, 0.054, 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_cap_spread_gives_binomial_only_profile() {
        // With identical capacitors the spread is pure binomial:
        // v_work·C/(N·C + Cp) · sqrt(N·p·(1−p)).
        let plan = McPlan {
            trials: 20_000,
            sigma_cm_list: vec![0.0],
            activation_grid: vec![0.25, 0.5],
            ..small_plan()
        };
        let prof = &worst_case_activation(&plan).unwrap()[0];
        let cfg = plan.array_config(0.0, 0.0, 1);
        for p in &prof.points {
            let expected = cfg.unit_step() * (16.0 * p.activation * (1.0 - p.activation)).sqrt();
            assert!((p.std - expected).abs() < 4.0 * p.std_se, "{p:?} vs {expected}");
        }
    }

    #[test]
    fn fixed_activation_has_zero_spread_without_cap_variation() {
        let plan = McPlan {
            trials: 500,
            sigma_cm_list: vec![0.0],
            activation_grid: vec![0.0, 1.0],
            ..small_plan()
        };
        for p in &worst_case_activation(&plan).unwrap()[0].points {
            assert_eq!(p.std, 0.0);
        }
    }

    #[test]
    fn complementary_activations_share_draws() {
        // Complementary activations over shared capacitors add up to the
        // all-active voltage, which barely varies at 5% spread.
        let cfg = McPlan::default().array_config(0.0, 0.05, 1);
        let a = bernoulli_block(&cfg, 0.3, 5, 0, 200);
        let b = bernoulli_block(&cfg, 0.7, 5, 0, 200);
        let s: Running = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        assert!(s.std() < 1e-3, "{}", s.std());
        assert!((s.mean() - expected_activation_mean(&cfg, 1.0)).abs() < 1e-3);
    }

    #[test]
    fn margin_study_separates_codes_without_variation() {
        let plan = McPlan {
            trials: 100,
            ..small_plan()
        };
        let rep = sense_margin_study(&plan, 0.0, 0.0, 1, 3.0).unwrap();
        let cfg = plan.array_config(0.0, 0.0, 1);
        assert!((rep.margin - cfg.unit_step()).abs() < 1e-12);
    }

    #[test]
    fn large_cap_spread_closes_the_margin() {
        let plan = McPlan {
            trials: 200,
            ..small_plan()
        };
        assert!(sense_margin_study(&plan, 0.0, 0.3, 1, 3.0).unwrap().margin < 0.0);
    }

    #[test]
    fn quality_study_without_variation_has_zero_loss() {
        let plan = McPlan {
            sigma_vth_list: vec![0.0],
            seed: 5,
            ..McPlan::default()
        };
        let study = QualityStudy {
            dims: vec![128],
            instances: 2,
            task: RetrievalTaskSpec {
                queries: 20,
                ..RetrievalTaskSpec::default()
            },
            ..QualityStudy::default()
        };
        let rows = quality_loss_study(&plan, &study).unwrap();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert_eq!(r.loss_pct, 0.0);
            assert_eq!(r.queries, 40);
        }
    }

    #[test]
    fn calibrated_noise_is_zero_without_variation() {
        let plan = McPlan {
            trials: 20,
            sigma_vth_list: vec![0.0],
            ..McPlan::default()
        };
        let n = calibrate_readout_noise(&plan, Domain::Current, 0.0, 0.0, 4).unwrap();
        assert_eq!(n.sigma_counts_per_tile, 0.0);
        let plan = McPlan { trials: 50, ..plan };
        let plan = McPlan {
            sigma_vth_list: vec![0.11],
            ..plan
        };
        let n = calibrate_readout_noise(&plan, Domain::Current, 0.11, 0.0, 4).unwrap();
        assert!(n.sigma_counts_per_tile > 0.5, "{n:?}");
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_transfer_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "domain,sigma_vth,sigma_cm,code,mean,std,samples\n");
        let mut buf = Vec::new();
        write_worst_case_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "sigma_cm,activation,mean,std,std_se,samples,is_argmax\n"
        );
        let mut buf = Vec::new();
        write_quality_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "domain,sigma_vth,sigma_cm,dim,ideal_accuracy,noisy_accuracy,loss_pct,queries\n"
        );
    }
}
