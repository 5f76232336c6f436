//! Scenario time series: per-bus consumption and PV production in physical
//! units (kW / kVAr), with CSV load/save, train/validation splitting, and a
//! seeded synthetic generator.
//!
//! Values are stored in kilowatts exactly as read, and converted to per-unit
//! only when injections are materialized; save(load(x)) is byte-identical.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::feeder::{power_kw_to_pu, BusKind, FeederModel};
use crate::powerflow::Injections;

pub const TIMESTAMP_FMT: &str = "%Y-%m-%dT%H:%M:%S";

/// Time-major storage: index (t, b) maps to t * n_buses + b, with buses in
/// feeder-model order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub timestamps: Vec<NaiveDateTime>,
    pub bus_ids: Vec<String>,
    pub p_c_kw: Vec<f64>,
    pub q_c_kvar: Vec<f64>,
    pub p_g_kw: Vec<f64>,
    pub base_mva: f64,
    pub resolution_minutes: i64,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_buses(&self) -> usize {
        self.bus_ids.len()
    }

    fn idx(&self, t: usize, b: usize) -> usize {
        t * self.n_buses() + b
    }

    /// Per-unit injections for one timestep (q_g zero; controllers or the
    /// OPF fill it in).
    pub fn injections_at(&self, t: usize) -> Injections {
        let nb = self.n_buses();
        let mut inj = Injections::zeros(nb);
        for b in 0..nb {
            let k = self.idx(t, b);
            inj.p_c[b] = power_kw_to_pu(self.p_c_kw[k], self.base_mva);
            inj.q_c[b] = power_kw_to_pu(self.q_c_kvar[k], self.base_mva);
            inj.p_g[b] = power_kw_to_pu(self.p_g_kw[k], self.base_mva);
        }
        inj
    }

    pub fn p_g_kw_at(&self, t: usize, b: usize) -> f64 {
        self.p_g_kw[self.idx(t, b)]
    }

    pub fn p_c_kw_at(&self, t: usize, b: usize) -> f64 {
        self.p_c_kw[self.idx(t, b)]
    }

    pub fn q_c_kvar_at(&self, t: usize, b: usize) -> f64 {
        self.q_c_kvar[self.idx(t, b)]
    }

    /// Errors unless the bus axis matches the model exactly.
    pub fn check_model(&self, model: &FeederModel) -> Result<()> {
        let ids: Vec<&str> = model.buses.iter().map(|b| b.id.as_str()).collect();
        let ours: Vec<&str> = self.bus_ids.iter().map(|s| s.as_str()).collect();
        if ids != ours {
            return Err(Error::ScenarioData(
                "scenario bus axis does not match the feeder model".into(),
            ));
        }
        Ok(())
    }

    /// Rows with `from <= timestamp < to`; either side may be open.
    pub fn slice(&self, from: Option<NaiveDateTime>, to: Option<NaiveDateTime>) -> ScenarioSet {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&t| {
                let ts = self.timestamps[t];
                from.is_none_or(|f| ts >= f) && to.is_none_or(|e| ts < e)
            })
            .collect();
        self.take(&keep)
    }

    fn take(&self, rows: &[usize]) -> ScenarioSet {
        let nb = self.n_buses();
        let mut out = ScenarioSet {
            timestamps: Vec::with_capacity(rows.len()),
            bus_ids: self.bus_ids.clone(),
            p_c_kw: Vec::with_capacity(rows.len() * nb),
            q_c_kvar: Vec::with_capacity(rows.len() * nb),
            p_g_kw: Vec::with_capacity(rows.len() * nb),
            base_mva: self.base_mva,
            resolution_minutes: self.resolution_minutes,
        };
        for &t in rows {
            out.timestamps.push(self.timestamps[t]);
            for b in 0..nb {
                let k = self.idx(t, b);
                out.p_c_kw.push(self.p_c_kw[k]);
                out.q_c_kvar.push(self.q_c_kvar[k]);
                out.p_g_kw.push(self.p_g_kw[k]);
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Parses scenario CSV (`timestamp,bus,p_c_kw,q_c_kvar,p_g_kw`). Rows are
/// grouped by strictly increasing timestamps; every model bus must appear
/// exactly once per group. An empty q_c cell falls back to `default_pf`
/// lagging at that bus's consumption.
pub fn load_scenarios(
    text: &str,
    model: &FeederModel,
    default_pf: f64,
) -> Result<ScenarioSet> {
    if !(default_pf > 0.0 && default_pf <= 1.0) {
        return Err(Error::ScenarioData(format!(
            "default power factor must be in (0, 1], got {default_pf}"
        )));
    }
    let tan_phi = (1.0 / (default_pf * default_pf) - 1.0).sqrt();
    let nb = model.n_buses();
    let bus_ids: Vec<String> = model.buses.iter().map(|b| b.id.clone()).collect();
    let bus_of = |id: &str| bus_ids.iter().position(|b| b == id);
    let inverter_bus: Vec<bool> = {
        let mut v = vec![false; nb];
        for inv in &model.inverters {
            if let Some(b) = bus_of(&inv.bus) {
                v[b] = true;
            }
        }
        v
    };

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    {
        let headers = rdr.headers()?;
        let expect = ["timestamp", "bus", "p_c_kw", "q_c_kvar", "p_g_kw"];
        if headers.len() != expect.len()
            || headers.iter().zip(expect).any(|(a, b)| a.trim() != b)
        {
            return Err(Error::ScenarioData(format!(
                "unexpected header {:?}, want {:?}",
                headers, expect
            )));
        }
    }

    let mut set = ScenarioSet {
        timestamps: Vec::new(),
        bus_ids: bus_ids.clone(),
        p_c_kw: Vec::new(),
        q_c_kvar: Vec::new(),
        p_g_kw: Vec::new(),
        base_mva: model.base_mva,
        resolution_minutes: 15,
    };
    let mut group_seen: Vec<bool> = vec![false; nb];
    let mut group_count = 0usize;

    let close_group = |seen: &mut Vec<bool>, count: &mut usize, ts: &NaiveDateTime| -> Result<()> {
        if *count != nb {
            let missing = seen.iter().position(|&s| !s).unwrap_or(0);
            return Err(Error::ScenarioData(format!(
                "timestep {ts} is missing bus {}",
                // index is valid because count < nb here
                &model.buses[missing].id
            )));
        }
        for s in seen.iter_mut() {
            *s = false;
        }
        *count = 0;
        Ok(())
    };

    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2; // header is line 1
        let ts = NaiveDateTime::parse_from_str(rec[0].trim(), TIMESTAMP_FMT).map_err(|e| {
            Error::ScenarioData(format!("row {row}: bad timestamp {:?}: {e}", &rec[0]))
        })?;
        let bus = bus_of(rec[1].trim()).ok_or_else(|| {
            Error::ScenarioData(format!("row {row}: unknown bus {:?}", &rec[1]))
        })?;
        let parse = |field: usize, name: &str| -> Result<f64> {
            let cell = rec[field].trim();
            if cell.is_empty() {
                return Err(Error::ScenarioData(format!(
                    "row {row}: missing {name} cell"
                )));
            }
            cell.parse::<f64>().map_err(|e| {
                Error::ScenarioData(format!("row {row}: bad {name} {cell:?}: {e}"))
            })
        };
        let p_c = parse(2, "p_c_kw")?;
        let q_c = match rec[3].trim() {
            "" => p_c * tan_phi,
            cell => cell.parse::<f64>().map_err(|e| {
                Error::ScenarioData(format!("row {row}: bad q_c_kvar {cell:?}: {e}"))
            })?,
        };
        let p_g = parse(4, "p_g_kw")?;
        if !(p_c.is_finite() && q_c.is_finite() && p_g.is_finite()) {
            return Err(Error::ScenarioData(format!("row {row}: non-finite value")));
        }
        if p_g != 0.0 && !inverter_bus[bus] {
            return Err(Error::ScenarioData(format!(
                "row {row}: nonzero p_g at bus {} which has no inverter",
                set.bus_ids[bus]
            )));
        }

        match set.timestamps.last().copied() {
            None => {
                set.timestamps.push(ts);
                set.p_c_kw.resize(nb, 0.0);
                set.q_c_kvar.resize(nb, 0.0);
                set.p_g_kw.resize(nb, 0.0);
            }
            Some(cur) if ts == cur => {}
            Some(cur) if ts > cur => {
                close_group(&mut group_seen, &mut group_count, &cur)?;
                set.timestamps.push(ts);
                let n = set.timestamps.len() * nb;
                set.p_c_kw.resize(n, 0.0);
                set.q_c_kvar.resize(n, 0.0);
                set.p_g_kw.resize(n, 0.0);
            }
            Some(cur) => {
                return Err(Error::ScenarioData(format!(
                    "row {row}: timestamp {ts} not increasing (current group {cur})"
                )));
            }
        }
        if group_seen[bus] {
            return Err(Error::ScenarioData(format!(
                "row {row}: duplicate bus {} at {ts}",
                set.bus_ids[bus]
            )));
        }
        group_seen[bus] = true;
        group_count += 1;
        let t = set.timestamps.len() - 1;
        let k = t * nb + bus;
        set.p_c_kw[k] = p_c;
        set.q_c_kvar[k] = q_c;
        set.p_g_kw[k] = p_g;
    }
    if let Some(last) = set.timestamps.last().copied() {
        close_group(&mut group_seen, &mut group_count, &last)?;
    } else {
        return Err(Error::ScenarioData("no data rows".into()));
    }

    if set.timestamps.len() >= 2 {
        let step = set.timestamps[1] - set.timestamps[0];
        for w in set.timestamps.windows(2) {
            if w[1] - w[0] != step {
                return Err(Error::ScenarioData(format!(
                    "irregular timestamp spacing between {} and {}",
                    w[0], w[1]
                )));
            }
        }
        set.resolution_minutes = step.num_minutes();
    }
    Ok(set)
}

/// CSV serialization; floats use shortest round-trip formatting, so loading
/// the output reproduces the set bit for bit.
pub fn serialize_scenarios(set: &ScenarioSet) -> String {
    let mut out = String::from("timestamp,bus,p_c_kw,q_c_kvar,p_g_kw\n");
    let nb = set.n_buses();
    for t in 0..set.len() {
        let ts = set.timestamps[t].format(TIMESTAMP_FMT);
        for b in 0..nb {
            let k = t * nb + b;
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                ts, set.bus_ids[b], set.p_c_kw[k], set.q_c_kvar[k], set.p_g_kw[k]
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Splitting and aggregation
// ---------------------------------------------------------------------------

/// Half-open timestamp windows for train/validation separation.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_start: NaiveDateTime,
    pub train_end: NaiveDateTime,
    pub val_start: NaiveDateTime,
    pub val_end: NaiveDateTime,
}

pub fn split(set: &ScenarioSet, spec: &SplitSpec) -> Result<(ScenarioSet, ScenarioSet)> {
    if spec.train_start >= spec.train_end || spec.val_start >= spec.val_end {
        return Err(Error::ScenarioData("empty split window".into()));
    }
    if spec.train_start < spec.val_end && spec.val_start < spec.train_end {
        return Err(Error::ScenarioData(format!(
            "train window [{}, {}) overlaps validation window [{}, {})",
            spec.train_start, spec.train_end, spec.val_start, spec.val_end
        )));
    }
    let train = set.slice(Some(spec.train_start), Some(spec.train_end));
    let val = set.slice(Some(spec.val_start), Some(spec.val_end));
    if train.is_empty() || val.is_empty() {
        return Err(Error::ScenarioData(
            "split produced an empty train or validation set".into(),
        ));
    }
    Ok((train, val))
}

/// Sums residence-level profiles and rescales so the aggregate peaks at
/// `target_peak` (same units as the profiles).
pub fn aggregate_residences(profiles: &[Vec<f64>], target_peak: f64) -> Result<Vec<f64>> {
    let first = profiles
        .first()
        .ok_or_else(|| Error::ScenarioData("no residence profiles".into()))?;
    let len = first.len();
    for (i, p) in profiles.iter().enumerate() {
        if p.len() != len {
            return Err(Error::ScenarioData(format!(
                "residence profile {i} has length {} but expected {len}",
                p.len()
            )));
        }
    }
    let mut sum = vec![0.0; len];
    for p in profiles {
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
    }
    let peak = sum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::ScenarioData(format!(
            "aggregate peak {peak} is not positive; cannot scale"
        )));
    }
    let scale = target_peak / peak;
    for s in &mut sum {
        *s *= scale;
    }
    Ok(sum)
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub days: u32,
    pub start: NaiveDate,
    pub resolution_minutes: i64,
    pub seed: u64,
    /// Mean per-bus peak apparent power (kVA).
    pub peak_kva: f64,
    /// Mean consumption power factor.
    pub power_factor: f64,
    /// Drop PV output 60% for the step starting at 14:00 each day.
    pub cloud_dip: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            days: 28,
            start: NaiveDate::from_ymd_opt(2014, 7, 4).unwrap(),
            resolution_minutes: 15,
            seed: 1,
            peak_kva: 26.0,
            power_factor: 0.92,
            cloud_dip: true,
        }
    }
}

fn gauss_bump(h: f64, mu: f64, sigma: f64) -> f64 {
    (-0.5 * ((h - mu) / sigma).powi(2)).exp()
}

/// Demand profile for a hot-climate summer: overnight base, afternoon
/// cooling plateau, evening peak near 1.0. Midday demand runs at roughly
/// two thirds of peak so that strong PV mostly offsets rather than
/// reverses the feeder load.
fn load_shape(h: f64) -> f64 {
    0.32 + 0.38 * gauss_bump(h, 14.5, 3.4) + 0.55 * gauss_bump(h, 19.5, 2.4)
}

/// Clear-sky PV profile peaking at 13:00, zero outside 06:00-20:00.
fn pv_shape(h: f64) -> f64 {
    if !(6.0..=20.0).contains(&h) {
        return 0.0;
    }
    gauss_bump(h, 13.0, 3.2)
}

/// Deterministic synthetic scenario set: per-bus scaled daily shapes with
/// multiplicative noise, per-day PV clearness, and an optional midafternoon
/// cloud transient. All draws come from one seeded generator.
pub fn generate_synthetic(model: &FeederModel, cfg: &SynthConfig) -> Result<ScenarioSet> {
    if cfg.days == 0 {
        return Err(Error::ScenarioData("days must be positive".into()));
    }
    if !(cfg.resolution_minutes > 0 && 1440 % cfg.resolution_minutes == 0) {
        return Err(Error::ScenarioData(format!(
            "resolution {} must divide a day",
            cfg.resolution_minutes
        )));
    }
    if !(cfg.power_factor > 0.0 && cfg.power_factor <= 1.0) {
        return Err(Error::ScenarioData(format!(
            "power factor {} out of (0, 1]",
            cfg.power_factor
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit_normal = Normal::new(0.0, 1.0).expect("valid normal");

    let nb = model.n_buses();
    let mut scale = vec![0.0; nb];
    let mut tan_phi = vec![0.0; nb];
    for (b, bus) in model.buses.iter().enumerate() {
        if bus.kind == BusKind::Slack || !bus.has_load {
            continue;
        }
        scale[b] = cfg.peak_kva * rng.random_range(0.6..1.4);
        let pf = (cfg.power_factor + 0.015 * unit_normal.sample(&mut rng)).clamp(0.85, 0.98);
        tan_phi[b] = (1.0 / (pf * pf) - 1.0).sqrt();
    }
    let mut pv_kw = vec![0.0; nb];
    for inv in &model.inverters {
        let b = model.bus_index(&inv.bus).ok_or_else(|| {
            Error::ScenarioData(format!("inverter bus {} not in model", inv.bus))
        })?;
        pv_kw[b] = inv.p_max * model.base_mva * 1000.0;
    }
    // high-insolation summer days; haze trims output, overcast is rare
    let clearness: Vec<f64> = (0..cfg.days)
        .map(|_| rng.random_range(0.85..1.0))
        .collect();

    let steps_per_day = (1440 / cfg.resolution_minutes) as usize;
    let total = steps_per_day * cfg.days as usize;
    let t0 = cfg.start.and_hms_opt(0, 0, 0).expect("midnight");
    let mut set = ScenarioSet {
        timestamps: Vec::with_capacity(total),
        bus_ids: model.buses.iter().map(|b| b.id.clone()).collect(),
        p_c_kw: Vec::with_capacity(total * nb),
        q_c_kvar: Vec::with_capacity(total * nb),
        p_g_kw: Vec::with_capacity(total * nb),
        base_mva: model.base_mva,
        resolution_minutes: cfg.resolution_minutes,
    };

    for step in 0..total {
        let minutes = step as i64 * cfg.resolution_minutes;
        set.timestamps.push(t0 + Duration::minutes(minutes));
        let day = step / steps_per_day;
        let h = (minutes % 1440) as f64 / 60.0;
        let dip = cfg.cloud_dip && h == 14.0;
        for b in 0..nb {
            let (p_c, q_c) = if scale[b] > 0.0 {
                let noise = (1.0 + 0.08 * unit_normal.sample(&mut rng).clamp(-3.0, 3.0)).max(0.0);
                let p = scale[b] * cfg.power_factor * load_shape(h) * noise;
                (p, p * tan_phi[b])
            } else {
                (0.0, 0.0)
            };
            let p_g = if pv_kw[b] > 0.0 {
                let noise = (1.0 + 0.05 * unit_normal.sample(&mut rng).clamp(-3.0, 3.0)).max(0.0);
                let mut p = pv_kw[b] * clearness[day] * pv_shape(h) * noise;
                if dip {
                    p *= 0.4;
                }
                p.clamp(0.0, pv_kw[b])
            } else {
                0.0
            };
            set.p_c_kw.push(p_c);
            set.q_c_kvar.push(q_c);
            set.p_g_kw.push(p_g);
        }
    }
    Ok(set)
}
