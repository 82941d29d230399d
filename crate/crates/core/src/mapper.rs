//! Placement of a neuro-symbolic workload on dual-mode arrays.
//!
//! Neural layers run as bit-serial inputs against bit-sliced weights on
//! MAC-mode arrays, with the partial sums recombined by digital shift-add.
//! Symbolic stages tile their codebooks over CAM-mode arrays exactly as
//! [`AssociativeMemory`] does. Time is divided into slots; within a slot
//! every array runs at most one tile and therefore holds one mode.
//!
//! The heuristic is greedy. Each stage picks the array shape that gives it
//! the lowest standalone EDP, neural stages are placed before symbolic ones,
//! costlier stages go first within each group, and every tile takes the
//! earliest free array of its shape.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::ArrayConfig;
use crate::cost::{self, CostParams, CostReport, Mode, PhaseCost, SystemReport, TileWork};
use crate::hdc::{AssociativeMemory, ReadoutDomain, RetrievalTask, RetrievalTaskSpec, TileLayout};
use crate::rng;
use crate::sensing::AdcConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuralStage {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Weight and activation precision.
    pub bits: u32,
    pub invocations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolicStage {
    pub name: String,
    pub dim: usize,
    pub codebook_size: usize,
    /// Queries per run before reuse.
    pub queries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub neural: Vec<NeuralStage>,
    pub symbolic: Vec<SymbolicStage>,
    /// Symbolic queries issued per neural invocation.
    pub reuse_factor: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            neural: Vec::new(),
            symbolic: Vec::new(),
            reuse_factor: 1,
        }
    }
}

impl WorkloadSpec {
    /// A small front-end network feeding an HDC back-end.
    pub fn neuro_symbolic_example() -> Self {
        Self {
            neural: vec![
                NeuralStage {
                    name: "conv1".into(),
                    rows: 27,
                    cols: 64,
                    bits: 8,
                    invocations: 16,
                },
                NeuralStage {
                    name: "conv2".into(),
                    rows: 576,
                    cols: 64,
                    bits: 8,
                    invocations: 16,
                },
                NeuralStage {
                    name: "fc".into(),
                    rows: 256,
                    cols: 512,
                    bits: 8,
                    invocations: 1,
                },
            ],
            symbolic: vec![
                SymbolicStage {
                    name: "attribute-search".into(),
                    dim: 512,
                    codebook_size: 16,
                    queries: 8,
                },
                SymbolicStage {
                    name: "rule-search".into(),
                    dim: 1024,
                    codebook_size: 32,
                    queries: 4,
                },
            ],
            reuse_factor: 4,
        }
    }

    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut names = HashSet::new();
        for s in &self.neural {
            if s.rows < 1 || s.cols < 1 {
                out.push(format!("neural stage `{}` must have positive rows and cols", s.name));
            }
            if !(1..=8).contains(&s.bits) {
                out.push(format!("neural stage `{}` bits must be in 1..=8, got {}", s.name, s.bits));
            }
            if !names.insert(s.name.as_str()) {
                out.push(format!("duplicate stage name `{}`", s.name));
            }
        }
        for s in &self.symbolic {
            if s.dim < 1 || s.codebook_size < 1 {
                out.push(format!("symbolic stage `{}` must have positive dim and codebook_size", s.name));
            }
            if !names.insert(s.name.as_str()) {
                out.push(format!("duplicate stage name `{}`", s.name));
            }
        }
        if self.reuse_factor < 1 {
            out.push("reuse_factor must be >= 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.diagnostics().into_iter().next() {
            None => Ok(()),
            Some(msg) => Err(Error::InvalidParams(msg)),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Neural,
    Symbolic,
}

/// A stage broken into tiles for one array shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: String,
    pub kind: StageKind,
    pub n_rows: usize,
    pub m_cols: usize,
    pub row_tiles: usize,
    pub col_tiles: usize,
    /// Operations each tile performs per stage invocation.
    pub cycles: u64,
    /// Stage invocations over the workload.
    pub invocations: u64,
    /// Cost of one stage invocation on one tile.
    pub per_invocation: CostReport,
}

impl StagePlan {
    pub fn tiles(&self) -> usize {
        self.row_tiles * self.col_tiles
    }

    pub fn mode(&self) -> Mode {
        match self.kind {
            StageKind::Neural => Mode::Mac,
            StageKind::Symbolic => Mode::Cam,
        }
    }

    fn standalone_edp(&self, arrays: usize) -> f64 {
        let energy = self.tiles() as f64 * self.invocations as f64 * self.per_invocation.energy;
        let waves = self.tiles().div_ceil(arrays.max(1)) as f64;
        energy * waves * self.invocations as f64 * self.per_invocation.latency
    }
}

/// Bit-serial inputs on bit-sliced weights: every output column takes
/// `bits` physical columns and each invocation takes `bits` MAC cycles.
/// Slice recombination costs one shift-add per physical column per cycle;
/// the digital adders are pipelined behind the array and add no latency.
pub fn plan_neural(stage: &NeuralStage, n_rows: usize, m_cols: usize, params: &CostParams) -> StagePlan {
    let bits = stage.bits as u64;
    let row_tiles = stage.rows.div_ceil(n_rows);
    let col_tiles = (stage.cols * stage.bits as usize).div_ceil(m_cols);
    let mac = cost::array_cost(n_rows, m_cols, Mode::Mac, true, params);
    let shift_adds = (m_cols as u64 * bits) as f64;
    let per_invocation = CostReport::from_phases(vec![
        PhaseCost {
            phase: "mac".into(),
            energy: bits as f64 * mac.energy,
            latency: bits as f64 * mac.latency,
        },
        PhaseCost {
            phase: "shift_add".into(),
            energy: shift_adds * params.e_shift_add,
            latency: 0.0,
        },
    ]);
    StagePlan {
        stage: stage.name.clone(),
        kind: StageKind::Neural,
        n_rows,
        m_cols,
        row_tiles,
        col_tiles,
        cycles: bits,
        invocations: stage.invocations,
        per_invocation,
    }
}

/// Rows per CAM tile that hold data, for a `log2(n)`-bit aligned ADC.
pub fn cam_data_rows(dim: usize, n_rows: usize) -> Result<usize> {
    let levels = 1u64 << crate::sensing::bits_for(n_rows);
    Ok(TileLayout::new(dim, n_rows, levels)?.data_rows)
}

pub fn plan_symbolic(
    stage: &SymbolicStage,
    reuse_factor: u64,
    n_rows: usize,
    m_cols: usize,
    params: &CostParams,
) -> Result<StagePlan> {
    let data_rows = cam_data_rows(stage.dim, n_rows)?;
    Ok(StagePlan {
        stage: stage.name.clone(),
        kind: StageKind::Symbolic,
        n_rows,
        m_cols,
        row_tiles: stage.dim.div_ceil(data_rows),
        col_tiles: stage.codebook_size.div_ceil(m_cols),
        cycles: 1,
        invocations: stage.queries * reuse_factor,
        per_invocation: cost::array_cost(n_rows, m_cols, Mode::Cam, true, params),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub stage: String,
    pub kind: StageKind,
    pub tile: usize,
    pub array: usize,
    pub slot: usize,
    pub mode: Mode,
    pub invocations: u64,
    pub per_invocation: CostReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileAllocation {
    pub arrays: usize,
    /// `modes[slot][array]`.
    pub modes: Vec<Vec<Mode>>,
    pub stages: Vec<StagePlan>,
    pub assignments: Vec<Assignment>,
    /// Fraction of slots in which each array runs a tile.
    pub utilization: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapperOptions {
    /// Upper bound on schedule length; `None` allows full serialization.
    pub max_slots: Option<usize>,
}

/// Greedy minimum-EDP allocation.
pub fn allocate(
    spec: &WorkloadSpec,
    inventory: &[ArrayConfig],
    params: &CostParams,
    options: &MapperOptions,
) -> Result<TileAllocation> {
    spec.validate()?;
    params.validate()?;
    if inventory.is_empty() {
        return Err(Error::Infeasible("the array inventory is empty".into()));
    }
    // Shape classes in first-seen order.
    let mut classes: Vec<((usize, usize), Vec<usize>)> = Vec::new();
    for (i, a) in inventory.iter().enumerate() {
        let key = (a.n_rows, a.m_cols);
        match classes.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(i),
            None => classes.push((key, vec![i])),
        }
    }

    let best = |plans: Vec<(StagePlan, usize)>, name: &str| -> Result<(StagePlan, usize)> {
        plans
            .into_iter()
            .min_by(|a, b| a.0.standalone_edp(classes[a.1].1.len()).total_cmp(&b.0.standalone_edp(classes[b.1].1.len())))
            .ok_or_else(|| Error::Infeasible(format!("no array shape can host stage `{name}`")))
    };

    let mut neural = Vec::new();
    for s in &spec.neural {
        let plans = classes
            .iter()
            .enumerate()
            .map(|(c, ((n, m), _))| (plan_neural(s, *n, *m, params), c))
            .collect();
        neural.push(best(plans, &s.name)?);
    }
    let mut symbolic = Vec::new();
    for s in &spec.symbolic {
        let plans = classes
            .iter()
            .enumerate()
            .filter_map(|(c, ((n, m), _))| plan_symbolic(s, spec.reuse_factor, *n, *m, params).ok().map(|p| (p, c)))
            .collect();
        symbolic.push(best(plans, &s.name)?);
    }
    let by_cost = |v: &mut Vec<(StagePlan, usize)>| {
        v.sort_by(|a, b| {
            b.0.standalone_edp(classes[b.1].1.len())
                .total_cmp(&a.0.standalone_edp(classes[a.1].1.len()))
        })
    };
    by_cost(&mut neural);
    by_cost(&mut symbolic);

    let arrays = inventory.len();
    let mut busy: Vec<Vec<Option<Mode>>> = Vec::new();
    let mut assignments = Vec::new();
    let mut stages = Vec::new();
    for (plan, class) in neural.into_iter().chain(symbolic) {
        let members = &classes[class].1;
        for tile in 0..plan.tiles() {
            let mut slot = 0;
            let array = loop {
                if slot == busy.len() {
                    busy.push(vec![None; arrays]);
                }
                if let Some(&a) = members.iter().find(|&&a| busy[slot][a].is_none()) {
                    break a;
                }
                slot += 1;
            };
            busy[slot][array] = Some(plan.mode());
            assignments.push(Assignment {
                stage: plan.stage.clone(),
                kind: plan.kind,
                tile,
                array,
                slot,
                mode: plan.mode(),
                invocations: plan.invocations,
                per_invocation: plan.per_invocation.clone(),
            });
        }
        stages.push(plan);
    }
    if let Some(max) = options.max_slots {
        if busy.len() > max {
            return Err(Error::Infeasible(format!(
                "the workload needs {} slots, more than the {max} allowed",
                busy.len()
            )));
        }
    }

    // Idle arrays keep their previous mode; before their first tile they
    // take the mode of that tile.
    let fallback = if spec.symbolic.is_empty() { Mode::Mac } else { Mode::Cam };
    let mut modes = vec![vec![fallback; arrays]; busy.len()];
    for a in 0..arrays {
        let first = busy.iter().find_map(|slot| slot[a]).unwrap_or(fallback);
        let mut current = first;
        for (s, slot) in busy.iter().enumerate() {
            if let Some(m) = slot[a] {
                current = m;
            }
            modes[s][a] = current;
        }
    }
    let slots = busy.len().max(1) as f64;
    let utilization = (0..arrays)
        .map(|a| busy.iter().filter(|s| s[a].is_some()).count() as f64 / slots)
        .collect();
    Ok(TileAllocation {
        arrays,
        modes,
        stages,
        assignments,
        utilization,
    })
}

impl TileAllocation {
    pub fn slots(&self) -> usize {
        self.modes.len()
    }

    /// Coverage, exclusivity and mode consistency.
    pub fn check(&self, spec: &WorkloadSpec) -> Result<()> {
        let mut seen = HashSet::new();
        for a in &self.assignments {
            if !seen.insert((a.slot, a.array)) {
                return Err(Error::Infeasible(format!("array {} is double-booked in slot {}", a.array, a.slot)));
            }
            if self.modes[a.slot][a.array] != a.mode {
                return Err(Error::Infeasible(format!("array {} has the wrong mode in slot {}", a.array, a.slot)));
            }
        }
        let names = spec
            .neural
            .iter()
            .map(|s| s.name.as_str())
            .chain(spec.symbolic.iter().map(|s| s.name.as_str()));
        for name in names {
            let plan = self
                .stages
                .iter()
                .find(|p| p.stage == name)
                .ok_or_else(|| Error::Infeasible(format!("stage `{name}` is not allocated")))?;
            let tiles: HashSet<usize> = self.assignments.iter().filter(|a| a.stage == name).map(|a| a.tile).collect();
            if tiles.len() != plan.tiles() || tiles.iter().any(|&t| t >= plan.tiles()) {
                return Err(Error::Infeasible(format!("stage `{name}` is not fully covered")));
            }
        }
        Ok(())
    }

    /// Tile work grouped by slot, for [`cost::system_cost`].
    pub fn slot_work(&self) -> Vec<Vec<TileWork>> {
        let mut out = vec![Vec::new(); self.slots()];
        for a in &self.assignments {
            out[a.slot].push(TileWork {
                array: a.array,
                stage: a.stage.clone(),
                invocations: a.invocations,
                per_invocation: a.per_invocation.clone(),
            });
        }
        out
    }

    /// Total operations issued to arrays in each mode.
    pub fn invocations_by_mode(&self) -> BTreeMap<&'static str, u64> {
        let mut out = BTreeMap::new();
        for a in &self.assignments {
            *out.entry(a.mode.as_str()).or_insert(0) += a.invocations;
        }
        out
    }

    /// Fixed-width table: one row per array, one column per slot.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:>5} {:>6}", "array", "util");
        for slot in 0..self.slots() {
            let _ = write!(s, " {:>4}", format!("s{slot}"));
        }
        s.push('\n');
        for a in 0..self.arrays {
            let _ = write!(s, "{a:>5} {:>5.1}%", self.utilization[a] * 100.0);
            for slot in 0..self.slots() {
                let busy = self.assignments.iter().any(|x| x.slot == slot && x.array == a);
                let m = self.modes[slot][a].as_str().to_uppercase();
                let cell = if busy { m } else { m.to_lowercase() };
                let _ = write!(s, " {cell:>4}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["stage", "kind", "tile", "array", "slot", "mode", "invocations", "energy", "latency"])?;
        for a in &self.assignments {
            wr.write_record([
                a.stage.clone(),
                match a.kind {
                    StageKind::Neural => "neural".into(),
                    StageKind::Symbolic => "symbolic".into(),
                },
                a.tile.to_string(),
                a.array.to_string(),
                a.slot.to_string(),
                a.mode.as_str().to_string(),
                a.invocations.to_string(),
                (a.invocations as f64 * a.per_invocation.energy).to_string(),
                (a.invocations as f64 * a.per_invocation.latency).to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub stage: String,
    pub query: usize,
    pub target: usize,
    pub cim_index: usize,
    pub exact_index: usize,
    pub cim_distance: f64,
    pub exact_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadRun {
    pub system: SystemReport,
    pub neural_energy: f64,
    pub symbolic_energy: f64,
    pub trace: Vec<TraceRow>,
}

impl WorkloadRun {
    pub fn agreement(&self) -> f64 {
        if self.trace.is_empty() {
            return 1.0;
        }
        let same = self.trace.iter().filter(|t| t.cim_index == t.exact_index).count();
        same as f64 / self.trace.len() as f64
    }
}

/// Costs the allocation and runs every symbolic stage's queries through a
/// CAM-backed memory on the stage's array configuration, next to an exact
/// oracle. Neural stages are costed only.
pub fn simulate_workload(
    alloc: &TileAllocation,
    spec: &WorkloadSpec,
    inventory: &[ArrayConfig],
    params: &CostParams,
    seed: u64,
) -> Result<WorkloadRun> {
    let system = cost::system_cost(&alloc.slot_work(), params);
    let energy_of = |kind| {
        alloc
            .assignments
            .iter()
            .filter(|a| a.kind == kind)
            .map(|a| a.invocations as f64 * a.per_invocation.energy)
            .sum()
    };
    let mut trace = Vec::new();
    for (i, stage) in spec.symbolic.iter().enumerate() {
        let plan = alloc
            .stages
            .iter()
            .find(|p| p.stage == stage.name)
            .ok_or_else(|| Error::Infeasible(format!("stage `{}` is not allocated", stage.name)))?;
        let config = *inventory
            .iter()
            .find(|c| c.n_rows == plan.n_rows && c.m_cols == plan.m_cols)
            .ok_or_else(|| Error::Infeasible(format!("no array matches stage `{}`", stage.name)))?;
        let task_spec = RetrievalTaskSpec {
            codebook_size: stage.codebook_size,
            queries: stage.queries as usize,
            ..RetrievalTaskSpec::default()
        };
        let task = RetrievalTask::generate(stage.dim, &task_spec, &mut rng::stream(seed, &[i as u64, 0]));
        let mut exact = AssociativeMemory::from_vectors(task.codebook.clone())?;
        let mut cim = AssociativeMemory::from_vectors(task.codebook)?.with_cim(
            config,
            AdcConfig::log2_aligned(&config),
            ReadoutDomain::Charge,
            rng::derive_seed(seed, &[i as u64, 1]),
        )?;
        for (q, (probe, target)) in task.queries.iter().enumerate() {
            let e = exact.query(probe)?;
            let c = cim.query(probe)?;
            trace.push(TraceRow {
                stage: stage.name.clone(),
                query: q,
                target: *target,
                cim_index: c.index,
                exact_index: e.index,
                cim_distance: c.distance,
                exact_distance: e.distance,
            });
        }
    }
    Ok(WorkloadRun {
        system,
        neural_energy: energy_of(StageKind::Neural),
        symbolic_energy: energy_of(StageKind::Symbolic),
        trace,
    })
}
