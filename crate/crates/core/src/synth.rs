//! Seeded random radial feeder generation for testing and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feeder::{impedance_to_pu, Bus, BusKind, FeederModel, InverterSpec, Line};

#[derive(Debug, Clone)]
pub struct SynthFeederConfig {
    /// Total bus count including the substation.
    pub n_buses: usize,
    /// Fraction of non-slack buses that carry load.
    pub load_fraction: f64,
    /// Fraction of load buses hosting a PV inverter.
    pub inverter_fraction: f64,
    /// Probability that a new bus extends the current lateral rather than
    /// branching off an arbitrary upstream bus.
    pub chain_bias: f64,
    pub seed: u64,
    pub base_mva: f64,
    pub base_kv: f64,
    /// Line resistance range (ohm); reactance is drawn below resistance,
    /// as on low-voltage distribution conductors.
    pub r_ohm: (f64, f64),
    /// Inverter rated active power range (kW).
    pub pv_kw: (f64, f64),
}

impl Default for SynthFeederConfig {
    fn default() -> Self {
        SynthFeederConfig {
            n_buses: 129,
            load_fraction: 53.0 / 128.0,
            inverter_fraction: 27.0 / 53.0,
            chain_bias: 0.7,
            seed: 1,
            base_mva: 1.0,
            base_kv: 12.47,
            r_ohm: (0.05, 0.15),
            pv_kw: (16.0, 32.0),
        }
    }
}

/// Zero-padded ids keep lexicographic and numeric bus order identical.
fn bus_id(k: usize) -> String {
    format!("b{k:04}")
}

/// Builds a random radial feeder. The tree grows bus by bus; each new bus
/// attaches to the previous one with probability `chain_bias`, otherwise to
/// a uniformly chosen existing bus, giving long laterals with side branches.
pub fn generate_feeder(cfg: &SynthFeederConfig) -> Result<FeederModel> {
    if cfg.n_buses < 2 {
        return Err(Error::Config(format!(
            "feeder needs at least 2 buses, got {}",
            cfg.n_buses
        )));
    }
    for (name, f) in [
        ("load_fraction", cfg.load_fraction),
        ("inverter_fraction", cfg.inverter_fraction),
        ("chain_bias", cfg.chain_bias),
    ] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Config(format!("{name} {f} out of [0, 1]")));
        }
    }
    if !(cfg.base_mva > 0.0 && cfg.base_kv > 0.0) {
        return Err(Error::Config("bases must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut buses = vec![Bus {
        id: "sub".into(),
        kind: BusKind::Slack,
        has_load: false,
    }];
    let mut lines = Vec::with_capacity(cfg.n_buses - 1);
    for k in 1..cfg.n_buses {
        let parent = if k == 1 || rng.random_bool(cfg.chain_bias) {
            k - 1
        } else {
            rng.random_range(0..k)
        };
        let r_ohm = rng.random_range(cfg.r_ohm.0..=cfg.r_ohm.1);
        let x_ohm = r_ohm * rng.random_range(0.5..0.9);
        lines.push(Line {
            from: buses[parent].id.clone(),
            to: bus_id(k),
            r: impedance_to_pu(r_ohm, cfg.base_mva, cfg.base_kv),
            x: impedance_to_pu(x_ohm, cfg.base_mva, cfg.base_kv),
        });
        buses.push(Bus {
            id: bus_id(k),
            kind: BusKind::Load,
            has_load: false,
        });
    }

    let n_load = ((cfg.n_buses - 1) as f64 * cfg.load_fraction).round() as usize;
    let load_buses = sample_indices(&mut rng, 1..cfg.n_buses, n_load);
    for &b in &load_buses {
        buses[b].has_load = true;
    }
    let n_inv = (n_load as f64 * cfg.inverter_fraction).round() as usize;
    let inv_positions = sample_indices(&mut rng, 0..load_buses.len(), n_inv);
    let mut inverters = Vec::with_capacity(n_inv);
    for &pos in &inv_positions {
        let kw = rng.random_range(cfg.pv_kw.0..=cfg.pv_kw.1);
        let p_max = kw / (cfg.base_mva * 1000.0);
        inverters.push(InverterSpec::new(&buses[load_buses[pos]].id, p_max));
    }

    Ok(FeederModel {
        buses,
        lines,
        inverters,
        base_mva: cfg.base_mva,
        base_kv: cfg.base_kv,
    })
}

/// k distinct draws from the range, returned sorted.
fn sample_indices(
    rng: &mut ChaCha8Rng,
    range: std::ops::Range<usize>,
    k: usize,
) -> Vec<usize> {
    let mut pool: Vec<usize> = range.collect();
    let k = k.min(pool.len());
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    pool
}
