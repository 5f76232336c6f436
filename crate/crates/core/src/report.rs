//! Machine-readable outputs: batch optimization CSV, per-step report CSV,
//! and the human-readable summaries printed by the front end.

use std::fmt::Write as _;

use crate::control::{GapReport, SimulationReport};
use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::opf::OpfSolution;
use crate::regression::ModelSet;
use crate::scenario::TIMESTAMP_FMT;

fn csv_string(records: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in records {
        w.write_record(&rec)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::ScenarioData(format!("csv write: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// One row per (solved step, bus). Steps whose solve failed contribute no
/// rows; `q_g_opt` is empty at buses without an inverter.
pub fn opf_csv(model: &FeederModel, solutions: &[Result<OpfSolution>]) -> Result<String> {
    let mut inverter_at = vec![None; model.n_buses()];
    for (i, inv) in model.inverters.iter().enumerate() {
        let b = model
            .bus_index(&inv.bus)
            .ok_or_else(|| Error::BadProblem(format!("inverter bus {} unknown", inv.bus)))?;
        inverter_at[b] = Some(i);
    }
    let mut rows = vec![vec![
        "scenario_index".to_string(),
        "bus".to_string(),
        "q_g_opt".to_string(),
        "v".to_string(),
        "objective".to_string(),
        "exact".to_string(),
    ]];
    for (t, res) in solutions.iter().enumerate() {
        let sol = match res {
            Ok(s) => s,
            Err(_) => continue,
        };
        for (b, bus) in model.buses.iter().enumerate() {
            rows.push(vec![
                t.to_string(),
                bus.id.clone(),
                inverter_at[b].map(|i| num(sol.q_g[i])).unwrap_or_default(),
                num(sol.v[b]),
                num(sol.objective),
                sol.exact.to_string(),
            ]);
        }
    }
    csv_string(rows)
}

/// One row per (timestep, approach) with realized metrics. Gap and tap are
/// empty where unavailable; failed steps are omitted (the summary carries
/// their count). Substation powers are reported in kW/kvar.
pub fn report_csv(sim: &SimulationReport, gaps: &GapReport, base_mva: f64) -> Result<String> {
    if gaps.approaches.len() != sim.runs.len() {
        return Err(Error::Simulation(
            "gap report does not match the simulation".into(),
        ));
    }
    let to_kw = base_mva * 1000.0;
    let mut rows = vec![vec![
        "timestep".to_string(),
        "approach".to_string(),
        "objective".to_string(),
        "gap".to_string(),
        "v_min".to_string(),
        "v_max".to_string(),
        "sub_p_kw".to_string(),
        "sub_q_kvar".to_string(),
        "tap".to_string(),
    ]];
    for (run, summary) in sim.runs.iter().zip(&gaps.approaches) {
        for (t, step) in run.steps.iter().enumerate() {
            let step = match step {
                Ok(s) => s,
                Err(_) => continue,
            };
            rows.push(vec![
                sim.timestamps[t].format(TIMESTAMP_FMT).to_string(),
                run.label.clone(),
                num(step.objective),
                summary.gaps[t].map(num).unwrap_or_default(),
                num(step.v_min()),
                num(step.v_max()),
                num(step.sub_p * to_kw),
                num(step.sub_q * to_kw),
                step.tap.map(|t| t.to_string()).unwrap_or_default(),
            ]);
        }
    }
    csv_string(rows)
}

/// Human-readable digest of a gap report.
pub fn summary_text(gaps: &GapReport, base_mva: f64) -> String {
    let to_kvar = base_mva * 1000.0;
    let mut out = String::new();
    for a in &gaps.approaches {
        let _ = writeln!(out, "approach {}", a.label);
        let _ = writeln!(
            out,
            "  steps: {} ({} failed, {} without usable optimum)",
            a.n_steps, a.n_failed, a.n_excluded
        );
        if let Some(s) = &a.gap_stats {
            let _ = writeln!(
                out,
                "  gap vs optimum: mean {:.4}%  p50 {:.4}%  p90 {:.4}%  p99 {:.4}%  max {:.4}%",
                s.mean * 100.0,
                s.p50 * 100.0,
                s.p90 * 100.0,
                s.p99 * 100.0,
                s.max * 100.0
            );
        }
        if a.v_min.is_finite() {
            let _ = writeln!(
                out,
                "  voltage envelope: [{:.6}, {:.6}] p.u.^2",
                a.v_min, a.v_max
            );
        }
        if a.sub_p_range.0.is_finite() {
            let _ = writeln!(
                out,
                "  substation P: [{:.1}, {:.1}] kW  Q: [{:.1}, {:.1}] kvar",
                a.sub_p_range.0 * to_kvar,
                a.sub_p_range.1 * to_kvar,
                a.sub_q_range.0 * to_kvar,
            a.sub_q_range.1 * to_kvar
            );
        }
        if let Some((lo, hi)) = a.q_reduction_vs_none {
            let _ = writeln!(
                out,
                "  substation Q reduction vs none: {:.1} to {:.1} kvar",
                lo * to_kvar,
                hi * to_kvar
            );
        }
    }
    for note in &gaps.notes {
        let _ = writeln!(out, "note: {note}");
    }
    out
}

/// Per-inverter coefficient table in the style of a regression summary:
/// one block per inverter, one line per selected feature with the
/// normalized coefficient, standard error, and p-value.
pub fn model_table(set: &ModelSet) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "trained on {} steps, {} .. {}, gamma {}",
        set.n_timesteps, set.trained_from, set.trained_to, set.gamma
    );
    for m in &set.models {
        let _ = writeln!(
            out,
            "inverter {}: {} samples, BIC {:.2}",
            m.inverter, m.n_samples, m.bic
        );
        let _ = writeln!(
            out,
            "  {:<14} {:>10} {:>10} {:>10}",
            "feature", "coef", "se", "p"
        );
        let _ = writeln!(
            out,
            "  {:<14} {:>10.4} {:>10.4} {:>10.4}",
            "(intercept)", m.intercept_std, m.se[0], m.p_values[0]
        );
        for (j, name) in m.feature_names.iter().enumerate() {
            let _ = writeln!(
                out,
                "  {:<14} {:>10.4} {:>10.4} {:>10.4}",
                name,
                m.beta_std[j],
                m.se[j + 1],
                m.p_values[j + 1]
            );
        }
    }
    out
}
