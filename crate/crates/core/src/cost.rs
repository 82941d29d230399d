//! Energy, latency and energy-delay-product estimates.
//!
//! The working voltage is held at `v_work0` up to `n_knee` rows and then
//! grows linearly with the column height; a higher working voltage also
//! stretches every schedule step in proportion. Column energy is the
//! charge drawn to fill every cell capacitor once.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Published GPU comparison figures, kept for context only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpuReference {
    pub gpu_speedup_resnet18: f64,
    pub gpu_speedup_resnet34: f64,
    pub gpu_energy_ratio_resnet18: f64,
    pub gpu_energy_ratio_resnet34: f64,
}

impl Default for GpuReference {
    fn default() -> Self {
        Self {
            gpu_speedup_resnet18: 2.5,
            gpu_speedup_resnet34: 4.0,
            gpu_energy_ratio_resnet18: 5000.0,
            gpu_energy_ratio_resnet34: 4000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub v_work0: f64,
    pub n_knee: usize,
    /// Cell capacitance, farads.
    pub c_m: f64,
    /// Charging efficiency factor.
    pub alpha: f64,
    /// Energy per ADC conversion, joules.
    pub e_adc: f64,
    /// Duration of one schedule step at `v_work0`, seconds.
    pub t_step: f64,
    /// Duration of one ADC conversion, seconds.
    pub t_adc: f64,
    /// Columns sharing one ADC.
    pub mux_ratio: usize,
    /// Current-domain transconductance, siemens.
    pub g0: f64,
    /// Current-domain gate overdrive during a read, volts.
    pub v_overdrive: f64,
    /// Energy of one digital shift-add, joules.
    pub e_shift_add: f64,
    pub reference: GpuReference,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            v_work0: 0.5,
            n_knee: 64,
            c_m: 1e-15,
            alpha: 1.0,
            e_adc: 2e-12,
            t_step: 1e-9,
            t_adc: 5e-9,
            mux_ratio: 8,
            g0: 1e-5,
            v_overdrive: 0.4,
            e_shift_add: 5e-14,
            reference: GpuReference::default(),
        }
    }
}

impl CostParams {
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = [
            ("v_work0", self.v_work0),
            ("c_m", self.c_m),
            ("alpha", self.alpha),
            ("e_adc", self.e_adc),
            ("t_step", self.t_step),
            ("t_adc", self.t_adc),
            ("g0", self.g0),
            ("v_overdrive", self.v_overdrive),
            ("e_shift_add", self.e_shift_add),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                out.push(format!("{name} must be > 0, got {v}"));
            }
        }
        if self.n_knee < 1 {
            out.push("n_knee must be >= 1".into());
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

/// `v_work0 · max(1, n / n_knee)`.
pub fn v_work_of(n: usize, params: &CostParams) -> f64 {
    params.v_work0 * (n as f64 / params.n_knee as f64).max(1.0)
}

/// Schedule-step duration at column height `n`.
pub fn t_step_of(n: usize, params: &CostParams) -> f64 {
    params.t_step * v_work_of(n, params) / params.v_work0
}

/// `α · n · C_M · v_work(n)²`.
pub fn column_energy(n: usize, params: &CostParams) -> f64 {
    let v = v_work_of(n, params);
    params.alpha * n as f64 * params.c_m * v * v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mac,
    Cam,
}

impl Mode {
    pub fn steps(self) -> usize {
        match self {
            Mode::Mac => 2,
            Mode::Cam => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Mac => "mac",
            Mode::Cam => "cam",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCost {
    pub phase: String,
    pub energy: f64,
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub energy: f64,
    pub latency: f64,
    pub edp: f64,
    pub breakdown: Vec<PhaseCost>,
}

impl CostReport {
    pub fn zero() -> Self {
        Self::from_phases(Vec::new())
    }

    /// Phases run back to back: energies and latencies both add.
    pub fn from_phases(breakdown: Vec<PhaseCost>) -> Self {
        let energy = breakdown.iter().map(|p| p.energy).sum();
        let latency = breakdown.iter().map(|p| p.latency).sum();
        Self {
            energy,
            latency,
            edp: energy * latency,
            breakdown,
        }
    }

    pub fn phase(&self, name: &str) -> Option<&PhaseCost> {
        self.breakdown.iter().find(|p| p.phase == name)
    }
}

fn adc_phase(m: usize, params: &CostParams) -> PhaseCost {
    PhaseCost {
        phase: "adc".into(),
        energy: m as f64 * params.e_adc,
        latency: m.div_ceil(params.mux_ratio) as f64 * params.t_adc,
    }
}

/// One operation on an `n × m` charge-domain array.
pub fn array_cost(n: usize, m: usize, mode: Mode, include_adc: bool, params: &CostParams) -> CostReport {
    let mut phases = vec![PhaseCost {
        phase: "array".into(),
        energy: m as f64 * column_energy(n, params),
        latency: mode.steps() as f64 * t_step_of(n, params),
    }];
    if include_adc {
        phases.push(adc_phase(m, params));
    }
    CostReport::from_phases(phases)
}

/// One MAC on an `n × m` current-summing array: every cell conducts
/// `g0 · v_overdrive` from `v_work(n)` for one read step.
pub fn current_array_cost(n: usize, m: usize, include_adc: bool, params: &CostParams) -> CostReport {
    let t = t_step_of(n, params);
    let i_cell = params.g0 * params.v_overdrive;
    let mut phases = vec![PhaseCost {
        phase: "array".into(),
        energy: (n * m) as f64 * i_cell * v_work_of(n, params) * t,
        latency: t,
    }];
    if include_adc {
        phases.push(adc_phase(m, params));
    }
    CostReport::from_phases(phases)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ChargeDomain,
    CurrentDomain,
}

/// One compared design: a cost parameter set plus its cell area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignParams {
    pub name: String,
    /// Cell area in units of F².
    pub cell_area_f2: f64,
    pub scheme: Scheme,
    #[serde(default)]
    pub params: CostParams,
}

impl DesignParams {
    pub fn one_fefet_one_c() -> Self {
        Self {
            name: "1FeFET-1C".into(),
            cell_area_f2: 6.0,
            scheme: Scheme::ChargeDomain,
            params: CostParams::default(),
        }
    }

    pub fn current_fefet() -> Self {
        Self {
            name: "FeFET current-domain".into(),
            cell_area_f2: 8.0,
            scheme: Scheme::CurrentDomain,
            params: CostParams::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let d: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        d.params.validate()?;
        Ok(d)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// One `n × m` MAC.
    pub fn mac_cost(&self, n: usize, m: usize, include_adc: bool) -> CostReport {
        match self.scheme {
            Scheme::ChargeDomain => array_cost(n, m, Mode::Mac, include_adc, &self.params),
            Scheme::CurrentDomain => current_array_cost(n, m, include_adc, &self.params),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdpRow {
    pub rank: usize,
    pub design: String,
    pub cell_area_f2: f64,
    pub energy: f64,
    pub latency: f64,
    pub edp: f64,
}

/// Designs ranked by the EDP of one `n × m` MAC, lowest first. Ties keep
/// input order.
pub fn edp_compare(designs: &[DesignParams], n: usize, m: usize, include_adc: bool) -> Result<Vec<EdpRow>> {
    if designs.len() < 2 {
        return Err(Error::invalid("edp_compare needs at least two designs"));
    }
    for d in designs {
        d.params.validate()?;
    }
    let mut rows: Vec<EdpRow> = designs
        .iter()
        .map(|d| {
            let c = d.mac_cost(n, m, include_adc);
            EdpRow {
                rank: 0,
                design: d.name.clone(),
                cell_area_f2: d.cell_area_f2,
                energy: c.energy,
                latency: c.latency,
                edp: c.edp,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.edp.total_cmp(&b.edp));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(rows)
}

pub fn write_edp_csv<W: Write>(rows: &[EdpRow], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(["rank", "design", "cell_area_f2", "energy", "latency", "edp"])?;
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub m: usize,
    pub mode: Mode,
    pub include_adc: bool,
    pub v_work: f64,
    pub energy: f64,
    pub latency: f64,
    pub edp: f64,
}

/// `array_cost` over every `(n, m)` pair.
pub fn scaling_table(ns: &[usize], ms: &[usize], mode: Mode, include_adc: bool, params: &CostParams) -> Vec<ScalingRow> {
    let mut rows = Vec::new();
    for &n in ns {
        for &m in ms {
            let c = array_cost(n, m, mode, include_adc, params);
            rows.push(ScalingRow {
                n,
                m,
                mode,
                include_adc,
                v_work: v_work_of(n, params),
                energy: c.energy,
                latency: c.latency,
                edp: c.edp,
            });
        }
    }
    rows
}

pub fn write_scaling_csv<W: Write>(rows: &[ScalingRow], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(["n", "m", "mode", "include_adc", "v_work", "energy", "latency", "edp"])?;
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Work for one tile: `invocations` back-to-back operations, each costing
/// `per_invocation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileWork {
    pub array: usize,
    pub stage: String,
    pub invocations: u64,
    pub per_invocation: CostReport,
}

impl TileWork {
    pub fn energy(&self) -> f64 {
        self.invocations as f64 * self.per_invocation.energy
    }

    pub fn latency(&self) -> f64 {
        self.invocations as f64 * self.per_invocation.latency
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub cost: CostReport,
    /// Published GPU ratios, for context only.
    pub reference: GpuReference,
}

/// Tiles in one slot run in parallel; slots run one after another.
pub fn system_cost(slots: &[Vec<TileWork>], params: &CostParams) -> SystemReport {
    let phases = slots
        .iter()
        .enumerate()
        .map(|(i, slot)| PhaseCost {
            phase: format!("slot{i}"),
            energy: slot.iter().map(TileWork::energy).sum(),
            latency: slot.iter().map(TileWork::latency).fold(0.0, f64::max),
        })
        .collect();
    SystemReport {
        cost: CostReport::from_phases(phases),
        reference: params.reference,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> CostParams {
        CostParams::default()
    }

    #[test]
    fn v_work_rule() {
        assert_eq!(v_work_of(32, &p()), 0.5);
        assert_eq!(v_work_of(64, &p()), 0.5);
        assert_eq!(v_work_of(128, &p()), 1.0);
    }

    #[test]
    fn below_knee_energy_is_linear_and_latency_flat() {
        let e = |n| array_cost(n, 8, Mode::Mac, false, &p());
        for n in [16, 32] {
            let r = e(2 * n).energy / e(n).energy;
            assert!((r - 2.0).abs() < 1e-12);
            assert_eq!(e(2 * n).latency, e(n).latency);
        }
    }

    #[test]
    fn above_knee_energy_grows_eightfold_per_doubling() {
        let e = |n| array_cost(n, 8, Mode::Cam, false, &p());
        let r = e(256).energy / e(128).energy;
        assert!((r - 8.0).abs() < 1e-12);
        assert!(e(256).latency > e(128).latency);
    }

    #[test]
    fn columns_add_energy_not_latency() {
        let a = array_cost(64, 8, Mode::Mac, false, &p());
        let b = array_cost(64, 16, Mode::Mac, false, &p());
        assert!((b.energy / a.energy - 2.0).abs() < 1e-12);
        assert_eq!(a.latency, b.latency);
    }

    #[test]
    fn adc_terms() {
        let params = p();
        let with = array_cost(64, 16, Mode::Mac, true, &params);
        let without = array_cost(64, 16, Mode::Mac, false, &params);
        assert!((with.energy - without.energy - 16.0 * params.e_adc).abs() < 1e-24);
        assert!((with.latency - without.latency - 2.0 * params.t_adc).abs() < 1e-21);
        assert!(with.phase("adc").is_some());
    }

    #[test]
    fn default_charge_design_beats_current_domain() {
        let rows = edp_compare(&[DesignParams::current_fefet(), DesignParams::one_fefet_one_c()], 64, 64, false).unwrap();
        assert_eq!(rows[0].design, "1FeFET-1C");
        assert_eq!(rows[0].cell_area_f2, 6.0);
        assert_eq!(rows[0].rank, 1);
    }

    #[test]
    fn identical_designs_tie_and_halved_step_halves_edp() {
        let a = DesignParams::one_fefet_one_c();
        let rows = edp_compare(&[a.clone(), a.clone()], 64, 8, false).unwrap();
        assert_eq!(rows[0].edp, rows[1].edp);
        let mut fast = a.clone();
        fast.name = "fast".into();
        fast.params.t_step /= 2.0;
        let rows = edp_compare(&[a, fast], 64, 8, false).unwrap();
        assert_eq!(rows[0].design, "fast");
        assert!((rows[1].edp / rows[0].edp - 2.0).abs() < 1e-12);
    }

    #[test]
    fn edp_compare_needs_two_designs() {
        assert!(edp_compare(&[DesignParams::one_fefet_one_c()], 64, 8, false).is_err());
    }

    #[test]
    fn design_from_toml() {
        let d = DesignParams::from_toml_str(
            "name = \"SRAM\"\ncell_area_f2 = 120.0\nscheme = \"current-domain\"\n[params]\ng0 = 2e-5\n",
        )
        .unwrap();
        assert_eq!(d.scheme, Scheme::CurrentDomain);
        assert_eq!(d.params.g0, 2e-5);
        assert_eq!(d.params.t_step, CostParams::default().t_step);
        assert!(DesignParams::from_toml_str("name = \"x\"\ncell_area_f2 = 1\nscheme = \"charge-domain\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn system_cost_composition() {
        assert_eq!(system_cost(&[], &p()).cost, CostReport::zero());
        let tile = TileWork {
            array: 0,
            stage: "s".into(),
            invocations: 3,
            per_invocation: array_cost(64, 8, Mode::Cam, true, &p()),
        };
        let one = system_cost(&[vec![tile.clone()]], &p()).cost;
        let par = system_cost(&[vec![tile.clone(), TileWork { array: 1, ..tile.clone() }]], &p()).cost;
        assert_eq!(par.latency, one.latency);
        assert!((par.energy - 2.0 * one.energy).abs() < 1e-24);
        let ser = system_cost(&[vec![tile.clone()], vec![tile]], &p()).cost;
        assert!((ser.latency - 2.0 * one.latency).abs() < 1e-18);
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_scaling_csv(&scaling_table(&[64], &[8], Mode::Mac, false, &p()), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,m,mode,include_adc,v_work,energy,latency,edp\n64,8,mac,false,0.5,"));
        let mut buf = Vec::new();
        write_edp_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "rank,design,cell_area_f2,energy,latency,edp\n");
    }

    proptest! {
        #[test]
        fn edp_is_energy_times_latency(n in 1usize..1024, m in 1usize..256, adc: bool, cam: bool) {
            let mode = if cam { Mode::Cam } else { Mode::Mac };
            let c = array_cost(n, m, mode, adc, &p());
            prop_assert_eq!(c.edp, c.energy * c.latency);
        }

        #[test]
        fn costs_are_monotone(n in 1usize..1024, m in 1usize..256, adc: bool) {
            let base = array_cost(n, m, Mode::Mac, adc, &p());
            let taller = array_cost(n + 1, m, Mode::Mac, adc, &p());
            let wider = array_cost(n, m + 1, Mode::Mac, adc, &p());
            prop_assert!(taller.energy >= base.energy && taller.latency >= base.latency);
            prop_assert!(wider.energy >= base.energy && wider.latency >= base.latency);
        }

        #[test]
        fn energy_is_additive_over_columns(n in 1usize..512, a in 1usize..128, b in 1usize..128) {
            let ea = array_cost(n, a, Mode::Cam, false, &p()).energy;
            let eb = array_cost(n, b, Mode::Cam, false, &p()).energy;
            let eab = array_cost(n, a + b, Mode::Cam, false, &p()).energy;
            prop_assert!((eab - ea - eb).abs() <= 1e-12 * eab);
        }
    }
}
