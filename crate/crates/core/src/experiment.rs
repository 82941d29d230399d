//! Reproducible experiment runs: configuration, validation and output files.
//!
//! A run writes `<experiment>_<seed>.csv` (or `.json`) and
//! `<experiment>_<seed>.manifest.json` holding the tool version and the
//! fully resolved configuration. Nothing depends on the clock, so identical
//! configuration, seed and version give byte-identical files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::array::ArrayConfig;
use crate::cost::{self, CostParams, DesignParams, Mode};
use crate::mapper::{self, MapperOptions, WorkloadSpec};
use crate::variation::{self, Domain, McPlan, QualityStudy};
use crate::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    TransferCurve,
    WorstCase,
    SenseMargin,
    Scaling,
    EdpTable,
    HdcQuality,
    MapWorkload,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::TransferCurve,
        ExperimentId::WorstCase,
        ExperimentId::SenseMargin,
        ExperimentId::Scaling,
        ExperimentId::EdpTable,
        ExperimentId::HdcQuality,
        ExperimentId::MapWorkload,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::TransferCurve => "transfer-curve",
            ExperimentId::WorstCase => "worst-case",
            ExperimentId::SenseMargin => "sense-margin",
            ExperimentId::Scaling => "scaling",
            ExperimentId::EdpTable => "edp-table",
            ExperimentId::HdcQuality => "hdc-quality",
            ExperimentId::MapWorkload => "map-workload",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|id| id.as_str() == s).ok_or_else(|| {
            let known: Vec<_> = Self::ALL.iter().map(|id| id.as_str()).collect();
            Error::Parse(format!("unknown experiment `{s}` (expected one of {})", known.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Parse(format!("unknown format `{other}` (expected csv or json)"))),
        }
    }
}

/// Parses `0.17`, `0.17V` or `170mV` into volts.
pub fn parse_voltage(s: &str) -> Result<f64> {
    let t = s.trim();
    let (num, scale) = if let Some(n) = t.strip_suffix("mV").or_else(|| t.strip_suffix("mv")) {
        (n, 1e-3)
    } else if let Some(n) = t.strip_suffix('V').or_else(|| t.strip_suffix('v')) {
        (n, 1.0)
    } else {
        (t, 1.0)
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("invalid voltage `{s}`")))?;
    Ok(v * scale)
}

/// Parses a fraction such as `0.05` or `5%`.
pub fn parse_fraction(s: &str) -> Result<f64> {
    let t = s.trim();
    let (num, scale) = match t.strip_suffix('%') {
        Some(n) => (n, 0.01),
        None => (t, 1.0),
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("invalid fraction `{s}`")))?;
    Ok(v * scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferOptions {
    pub domains: Vec<Domain>,
}

impl Default for TransferOptions {
    fn default() -> Self {
        Self {
            domains: vec![Domain::Charge, Domain::Current],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorstCaseOptions {
    pub sigma_cm_list: Vec<f64>,
    pub trials: usize,
}

impl Default for WorstCaseOptions {
    fn default() -> Self {
        Self {
            sigma_cm_list: vec![0.05],
            trials: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SenseMarginOptions {
    pub sigma_vth: f64,
    pub sigma_cm: f64,
    /// Codes within this distance of `n_rows / 2` are sampled.
    pub half_width: usize,
    pub k_sigma: f64,
    pub trials: usize,
}

impl Default for SenseMarginOptions {
    fn default() -> Self {
        Self {
            sigma_vth: 0.054,
            sigma_cm: 0.05,
            half_width: 2,
            k_sigma: crate::sensing::DEFAULT_K_SIGMA,
            trials: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingOptions {
    pub n_list: Vec<usize>,
    pub m_list: Vec<usize>,
    pub mode: Mode,
    pub include_adc: bool,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self {
            n_list: vec![16, 32, 64, 128, 256],
            m_list: vec![8, 16, 32, 64],
            mode: Mode::Mac,
            include_adc: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdpOptions {
    pub n: usize,
    pub m: usize,
    pub include_adc: bool,
    /// Adds the built-in 1FeFET-1C and current-domain FeFET designs.
    pub include_builtin: bool,
    pub designs: Vec<DesignParams>,
    /// TOML files holding one design each, relative to the working directory.
    pub design_files: Vec<PathBuf>,
}

impl Default for EdpOptions {
    fn default() -> Self {
        Self {
            n: 64,
            m: 64,
            include_adc: false,
            include_builtin: true,
            designs: Vec::new(),
            design_files: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InventoryOptions {
    pub count: usize,
    pub array: ArrayConfig,
}

impl Default for InventoryOptions {
    fn default() -> Self {
        Self {
            count: 8,
            array: ArrayConfig::default().with_shape(64, 64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentId>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub plan: McPlan,
    #[serde(default)]
    pub transfer: TransferOptions,
    #[serde(default)]
    pub worst_case: WorstCaseOptions,
    #[serde(default)]
    pub sense_margin: SenseMarginOptions,
    #[serde(default)]
    pub scaling: ScalingOptions,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub edp: EdpOptions,
    #[serde(default)]
    pub hdc: QualityStudy,
    #[serde(default = "WorkloadSpec::neuro_symbolic_example")]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub mapper: MapperOptions,
    #[serde(default)]
    pub inventory: InventoryOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: None,
            out_dir: None,
            format: OutputFormat::default(),
            plan: McPlan::default(),
            transfer: TransferOptions::default(),
            worst_case: WorstCaseOptions::default(),
            sense_margin: SenseMarginOptions::default(),
            scaling: ScalingOptions::default(),
            cost: CostParams::default(),
            edp: EdpOptions::default(),
            hdc: QualityStudy::default(),
            workload: WorkloadSpec::neuro_symbolic_example(),
            mapper: MapperOptions::default(),
            inventory: InventoryOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId, seed: u64) -> Self {
        Self {
            experiment: Some(experiment),
            seed: Some(seed),
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Every problem with the configuration, each prefixed with its block.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.experiment.is_none() {
            out.push("experiment: an experiment id is required".into());
        }
        if self.seed.is_none() {
            out.push("seed: an explicit seed is required".into());
        }
        let mut block = |name: &str, diags: Vec<String>| out.extend(diags.into_iter().map(|d| format!("{name}: {d}")));
        block("plan", self.plan.diagnostics());
        if self.transfer.domains.is_empty() {
            block("transfer", vec!["domains must not be empty".into()]);
        }
        let mut wc = Vec::new();
        if self.worst_case.sigma_cm_list.is_empty() {
            wc.push("sigma_cm_list must not be empty".into());
        }
        for &s in &self.worst_case.sigma_cm_list {
            if !(0.0..=1.0).contains(&s) {
                wc.push(format!("sigma_cm_list entries must be in [0, 1], got {s}"));
            }
        }
        if self.worst_case.trials < 1 {
            wc.push("trials must be >= 1".into());
        }
        block("worst_case", wc);
        let sm = &self.sense_margin;
        let mut smd = Vec::new();
        if !(sm.sigma_vth >= 0.0) {
            smd.push(format!("sigma_vth must be >= 0, got {}", sm.sigma_vth));
        }
        if !(0.0..=1.0).contains(&sm.sigma_cm) {
            smd.push(format!("sigma_cm must be in [0, 1], got {}", sm.sigma_cm));
        }
        if sm.half_width < 1 {
            smd.push("half_width must be >= 1".into());
        }
        if !(sm.k_sigma >= 0.0) {
            smd.push(format!("k_sigma must be >= 0, got {}", sm.k_sigma));
        }
        if sm.trials < crate::sensing::MIN_POPULATION {
            smd.push(format!("trials must be >= {}", crate::sensing::MIN_POPULATION));
        }
        block("sense_margin", smd);
        let mut sc = Vec::new();
        if self.scaling.n_list.is_empty() || self.scaling.n_list.contains(&0) {
            sc.push("n_list must be non-empty with entries >= 1".into());
        }
        if self.scaling.m_list.is_empty() || self.scaling.m_list.contains(&0) {
            sc.push("m_list must be non-empty with entries >= 1".into());
        }
        block("scaling", sc);
        block("cost", self.cost.diagnostics());
        let mut ed = Vec::new();
        if self.edp.n < 1 || self.edp.m < 1 {
            ed.push("n and m must be >= 1".into());
        }
        let designs = self.edp.designs.len()
            + self.edp.design_files.len()
            + if self.edp.include_builtin { 2 } else { 0 };
        if designs < 2 {
            ed.push("at least two designs are required".into());
        }
        for d in &self.edp.designs {
            ed.extend(d.params.diagnostics().into_iter().map(|m| format!("design `{}`: {m}", d.name)));
        }
        block("edp", ed);
        block("hdc", self.hdc.diagnostics());
        block("workload", self.workload.diagnostics());
        let mut inv = Vec::new();
        if self.inventory.count < 1 {
            inv.push("count must be >= 1".into());
        }
        inv.extend(self.inventory.array.diagnostics());
        block("inventory", inv);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Manifest<'a> {
    experiment: ExperimentId,
    seed: u64,
    tool: &'static str,
    version: &'static str,
    output: String,
    config: &'a ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub data: PathBuf,
    pub manifest: PathBuf,
    /// One or two human-readable lines about the result.
    pub summary: String,
}

enum Table {
    Csv(Vec<u8>),
    Json(serde_json::Value),
}

fn emit<T: Serialize>(format: OutputFormat, json: &T, csv: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Table> {
    match format {
        OutputFormat::Csv => {
            let mut buf = Vec::new();
            csv(&mut buf)?;
            Ok(Table::Csv(buf))
        }
        OutputFormat::Json => Ok(Table::Json(serde_json::to_value(json)?)),
    }
}

fn compute(cfg: &ExperimentConfig, id: ExperimentId, seed: u64) -> Result<(Table, String)> {
    let fmt = cfg.format;
    let mut plan = cfg.plan.clone();
    plan.seed = seed;
    match id {
        ExperimentId::TransferCurve => {
            let mut curves = Vec::new();
            for &d in &cfg.transfer.domains {
                curves.extend(variation::run_transfer_curves(&plan, d)?);
            }
            let summary = curves
                .iter()
                .map(|c| {
                    format!(
                        "{} sigma_vth={} sigma_cm={}: max std {:.6e}",
                        c.domain.as_str(),
                        c.sigma_vth,
                        c.sigma_cm,
                        c.max_std()
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            Ok((emit(fmt, &curves, |w| variation::write_transfer_csv(&curves, w))?, summary))
        }
        ExperimentId::WorstCase => {
            plan.sigma_cm_list = cfg.worst_case.sigma_cm_list.clone();
            plan.trials = cfg.worst_case.trials;
            let profiles = variation::worst_case_activation(&plan)?;
            #[derive(Serialize)]
            struct Out<'a> {
                profile: &'a variation::WorstCaseProfile,
                symmetry: Vec<variation::SymmetryRow>,
            }
            let json: Vec<Out> = profiles
                .iter()
                .map(|p| Out {
                    profile: p,
                    symmetry: p.symmetry(),
                })
                .collect();
            let summary = profiles
                .iter()
                .map(|p| format!("sigma_cm={}: std peaks at activation {}", p.sigma_cm, p.argmax))
                .collect::<Vec<_>>()
                .join("\n");
            Ok((emit(fmt, &json, |w| variation::write_worst_case_csv(&profiles, w))?, summary))
        }
        ExperimentId::SenseMargin => {
            let sm = &cfg.sense_margin;
            plan.trials = sm.trials;
            if !plan.sigma_vth_list.contains(&sm.sigma_vth) {
                plan.sigma_vth_list.push(sm.sigma_vth);
            }
            let report = variation::sense_margin_study(&plan, sm.sigma_vth, sm.sigma_cm, sm.half_width, sm.k_sigma)?;
            let worst = report.worst();
            let summary = format!(
                "worst pair {}: gap {:.4e} V, margin {:.4e} V at {} sigma",
                worst.code_pair, worst.gap, worst.margin, report.k_sigma
            );
            Ok((emit(fmt, &report, |w| report.write_csv(w))?, summary))
        }
        ExperimentId::Scaling => {
            let s = &cfg.scaling;
            let rows = cost::scaling_table(&s.n_list, &s.m_list, s.mode, s.include_adc, &cfg.cost);
            let summary = format!("{} operating points", rows.len());
            Ok((emit(fmt, &rows, |w| cost::write_scaling_csv(&rows, w))?, summary))
        }
        ExperimentId::EdpTable => {
            let e = &cfg.edp;
            let mut designs = Vec::new();
            if e.include_builtin {
                designs.push(DesignParams::one_fefet_one_c());
                designs.push(DesignParams::current_fefet());
            }
            designs.extend(e.designs.iter().cloned());
            for f in &e.design_files {
                designs.push(DesignParams::from_file(f)?);
            }
            let rows = cost::edp_compare(&designs, e.n, e.m, e.include_adc)?;
            let summary = format!("lowest EDP: {} ({:.4e} J*s)", rows[0].design, rows[0].edp);
            Ok((emit(fmt, &rows, |w| cost::write_edp_csv(&rows, w))?, summary))
        }
        ExperimentId::HdcQuality => {
            let rows = variation::quality_loss_study(&plan, &cfg.hdc)?;
            let summary = rows
                .iter()
                .map(|r| format!("{} sigma_vth={} dim={}: loss {:.2}%", r.domain.as_str(), r.sigma_vth, r.dim, r.loss_pct))
                .collect::<Vec<_>>()
                .join("\n");
            Ok((emit(fmt, &rows, |w| variation::write_quality_csv(&rows, w))?, summary))
        }
        ExperimentId::MapWorkload => {
            let inventory = vec![cfg.inventory.array; cfg.inventory.count];
            let alloc = mapper::allocate(&cfg.workload, &inventory, &cfg.cost, &cfg.mapper)?;
            alloc.check(&cfg.workload)?;
            let run = mapper::simulate_workload(&alloc, &cfg.workload, &inventory, &cfg.cost, seed)?;
            let table = alloc.summary();
            #[derive(Serialize)]
            struct Out<'a> {
                allocation: &'a mapper::TileAllocation,
                summary: &'a str,
                run: &'a mapper::WorkloadRun,
            }
            let json = Out {
                allocation: &alloc,
                summary: &table,
                run: &run,
            };
            let summary = format!(
                "{}energy {:.4e} J, latency {:.4e} s, CAM/exact agreement {:.1}%",
                table,
                run.system.cost.energy,
                run.system.cost.latency,
                run.agreement() * 100.0
            );
            Ok((emit(fmt, &json, |w| alloc.write_csv(w))?, summary))
        }
    }
}

/// Validates, runs and writes the output and manifest into `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    let diags = cfg.validate();
    if !diags.is_empty() {
        return Err(Error::InvalidParams(diags.join("; ")));
    }
    let (id, seed) = match (cfg.experiment, cfg.seed) {
        (Some(id), Some(seed)) => (id, seed),
        _ => unreachable!("validated above"),
    };
    let (table, summary) = compute(cfg, id, seed)?;
    fs::create_dir_all(out_dir)?;
    let stem = format!("{id}_{seed}");
    let data = out_dir.join(format!("{stem}.{}", cfg.format.extension()));
    match table {
        Table::Csv(bytes) => fs::write(&data, bytes)?,
        Table::Json(v) => fs::write(&data, serde_json::to_string_pretty(&v)? + "\n")?,
    }
    let manifest = out_dir.join(format!("{stem}.manifest.json"));
    let m = Manifest {
        experiment: id,
        seed,
        tool: "fecim",
        version: VERSION,
        output: data.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        config: cfg,
    };
    fs::write(&manifest, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(RunOutput {
        data,
        manifest,
        summary,
    })
}
