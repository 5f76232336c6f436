//! Per-inverter controller training: local feature construction, z-score
//! standardization, least squares via Householder QR, and hybrid
//! forward/backward subset selection scored by BIC.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::opf::{inverter_capacity, OpfConfig, OpfSolution};
use crate::scenario::ScenarioSet;
use crate::stats::t_two_sided_p;

pub const N_FEATURES: usize = 9;

/// Column order is fixed: three local measurements, their pairwise
/// products, then their squares.
pub const FEATURE_NAMES: [&str; 9] = [
    "net_p",
    "q_c",
    "q_cap",
    "net_p*q_c",
    "net_p*q_cap",
    "q_c*q_cap",
    "net_p^2",
    "q_c^2",
    "q_cap^2",
];

pub fn feature_row(p_c: f64, q_c: f64, p_g: f64, q_cap: f64) -> [f64; N_FEATURES] {
    let f1 = p_c - p_g;
    let f2 = q_c;
    let f3 = q_cap;
    [
        f1,
        f2,
        f3,
        f1 * f2,
        f1 * f3,
        f2 * f3,
        f1 * f1,
        f2 * f2,
        f3 * f3,
    ]
}

/// Row-major observation matrix with aligned targets.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub phi: Vec<f64>,
    pub y: Vec<f64>,
    pub n_samples: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.phi[row * self.n_features + col]
    }

    fn column_stats(&self, col: usize) -> (f64, f64) {
        let n = self.n_samples as f64;
        let mean = (0..self.n_samples).map(|r| self.at(r, col)).sum::<f64>() / n;
        let var = (0..self.n_samples)
            .map(|r| (self.at(r, col) - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (mean, var.sqrt())
    }
}

/// Builds the training set for one inverter from scenarios and their batch
/// optimization results. Steps whose solve failed or whose relaxation was
/// not exact are skipped; the targets are the optimal setpoints.
pub fn build_features(
    scen: &ScenarioSet,
    opf: &[Result<OpfSolution>],
    model: &FeederModel,
    inverter: usize,
) -> Result<FeatureMatrix> {
    if opf.len() != scen.len() {
        return Err(Error::Regression(format!(
            "{} optimization results for {} scenario steps",
            opf.len(),
            scen.len()
        )));
    }
    let spec = model
        .inverters
        .get(inverter)
        .ok_or_else(|| Error::Regression(format!("no inverter {inverter}")))?;
    let bus = model
        .bus_index(&spec.bus)
        .ok_or_else(|| Error::Regression(format!("inverter bus {} not in model", spec.bus)))?;

    let mut fm = FeatureMatrix {
        phi: Vec::new(),
        y: Vec::new(),
        n_samples: 0,
        n_features: N_FEATURES,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    for (t, res) in opf.iter().enumerate() {
        let sol = match res {
            Ok(s) if s.exact => s,
            _ => continue,
        };
        let inj = scen.injections_at(t);
        let cap = inverter_capacity(inj.p_g[bus], spec.s_rated)?;
        fm.phi
            .extend_from_slice(&feature_row(inj.p_c[bus], inj.q_c[bus], inj.p_g[bus], cap));
        fm.y.push(sol.q_g[inverter]);
        fm.n_samples += 1;
    }
    if fm.n_samples == 0 {
        return Err(Error::Regression(format!(
            "no usable training samples for inverter {} (all steps failed or inexact)",
            spec.bus
        )));
    }
    Ok(fm)
}

/// Column statistics of the training set; constant columns are dropped and
/// remembered so prediction can reconstruct the full pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scaler {
    /// Indices into the canonical feature columns that survived.
    pub kept: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

pub fn standardize(fm: &FeatureMatrix) -> Result<(FeatureMatrix, Scaler)> {
    if fm.n_samples < 2 {
        return Err(Error::Regression(format!(
            "need at least 2 samples to standardize, got {}",
            fm.n_samples
        )));
    }
    let mut scaler = Scaler {
        kept: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
        y_mean: 0.0,
        y_std: 1.0,
    };
    for col in 0..fm.n_features {
        let (mean, std) = fm.column_stats(col);
        if std < 1e-12 * (1.0 + mean.abs()) {
            continue;
        }
        scaler.kept.push(col);
        scaler.mean.push(mean);
        scaler.std.push(std);
    }
    if scaler.kept.is_empty() {
        return Err(Error::Regression("all feature columns are constant".into()));
    }
    let n = fm.n_samples as f64;
    scaler.y_mean = fm.y.iter().sum::<f64>() / n;
    let y_var = fm.y.iter().map(|v| (v - scaler.y_mean).powi(2)).sum::<f64>() / (n - 1.0);
    let y_std = y_var.sqrt();
    // a constant target is legal: it standardizes to zero and the model
    // degenerates to the intercept
    scaler.y_std = if y_std < 1e-12 * (1.0 + scaler.y_mean.abs()) {
        1.0
    } else {
        y_std
    };

    let k = scaler.kept.len();
    let mut out = FeatureMatrix {
        phi: Vec::with_capacity(fm.n_samples * k),
        y: Vec::with_capacity(fm.n_samples),
        n_samples: fm.n_samples,
        n_features: k,
        feature_names: scaler
            .kept
            .iter()
            .map(|&c| fm.feature_names[c].clone())
            .collect(),
    };
    for r in 0..fm.n_samples {
        for (j, &c) in scaler.kept.iter().enumerate() {
            out.phi
                .push((fm.at(r, c) - scaler.mean[j]) / scaler.std[j]);
        }
        out.y.push((fm.y[r] - scaler.y_mean) / scaler.y_std);
    }
    Ok((out, scaler))
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    /// Intercept first, then one coefficient per entry of `selected`.
    pub beta: Vec<f64>,
    pub rss: f64,
    pub se: Vec<f64>,
    pub p_values: Vec<f64>,
    pub bic: f64,
    pub selected: Vec<usize>,
}

/// Gaussian-likelihood BIC; `k` counts every estimated coefficient
/// including the intercept. The floor keeps exact fits finite.
pub fn bic(rss: f64, n: usize, k: usize) -> f64 {
    let n = n as f64;
    n * (rss.max(1e-12) / n).ln() + k as f64 * n.ln()
}

/// Least squares of y on an intercept plus the chosen columns, via
/// Householder QR. Rank loss surfaces as an error naming the offending
/// column rather than producing a garbage fit.
pub fn ols_fit(fm: &FeatureMatrix, cols: &[usize]) -> Result<OlsFit> {
    let n = fm.n_samples;
    let p = cols.len() + 1;
    if n <= p {
        return Err(Error::Regression(format!(
            "{n} samples cannot support {p} coefficients"
        )));
    }
    for &c in cols {
        if c >= fm.n_features {
            return Err(Error::Regression(format!("column {c} out of range")));
        }
    }

    // design matrix, column-major for the factorization
    let mut a = vec![0.0; n * p];
    for r in 0..n {
        a[r] = 1.0;
    }
    for (j, &c) in cols.iter().enumerate() {
        for r in 0..n {
            a[(j + 1) * n + r] = fm.at(r, c);
        }
    }
    let mut qty = fm.y.clone();

    // Householder QR, overwriting `a` with the reflectors and R.
    let mut r_diag = vec![0.0; p];
    for j in 0..p {
        let col = &a[j * n..(j + 1) * n];
        let norm = col[j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::RankDeficient {
                column: if j == 0 { usize::MAX } else { cols[j - 1] },
            });
        }
        let alpha = if col[j] >= 0.0 { -norm } else { norm };
        r_diag[j] = alpha;
        let mut v0 = col[j] - alpha;
        // reflector v normalized so v[j] = 1
        let scale = v0;
        v0 = 1.0;
        let vtail_scale = 1.0 / scale;
        // store v in place of the eliminated column
        a[j * n + j] = v0;
        for r in j + 1..n {
            a[j * n + r] *= vtail_scale;
        }
        let vtv = 1.0 + a[j * n + j + 1..(j + 1) * n]
            .iter()
            .map(|v| v * v)
            .sum::<f64>();
        let tau = 2.0 / vtv;
        for jj in j + 1..p {
            let dot = a[j * n + j..(j + 1) * n]
                .iter()
                .zip(&a[jj * n + j..])
                .map(|(v, x)| v * x)
                .sum::<f64>();
            let f = tau * dot;
            for r in j..n {
                a[jj * n + r] -= f * a[j * n + r];
            }
        }
        let dot = a[j * n + j..(j + 1) * n]
            .iter()
            .zip(&qty[j..])
            .map(|(v, x)| v * x)
            .sum::<f64>();
        let f = tau * dot;
        for r in j..n {
            qty[r] -= f * a[j * n + r];
        }
    }

    let max_diag = r_diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (j, d) in r_diag.iter().enumerate() {
        if d.abs() <= 1e-10 * max_diag {
            return Err(Error::RankDeficient {
                column: if j == 0 { usize::MAX } else { cols[j - 1] },
            });
        }
    }

    // R is stored in the upper triangle of `a` except the diagonal.
    let r_at = |i: usize, j: usize| -> f64 {
        if i == j {
            r_diag[i]
        } else {
            a[j * n + i]
        }
    };
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let mut v = qty[i];
        for j in i + 1..p {
            v -= r_at(i, j) * beta[j];
        }
        beta[i] = v / r_at(i, i);
    }
    let rss: f64 = qty[p..].iter().map(|v| v * v).sum();

    // diag((A'A)^{-1}) from the rows of R^{-1}
    let mut rinv = vec![0.0; p * p];
    for j in (0..p).rev() {
        rinv[j * p + j] = 1.0 / r_at(j, j);
        for i in (0..j).rev() {
            let mut v = 0.0;
            for k in i + 1..=j {
                v -= r_at(i, k) * rinv[j * p + k];
            }
            rinv[j * p + i] = v / r_at(i, i);
        }
    }
    let df = (n - p) as f64;
    let sigma2 = rss / df;
    let mut se = vec![0.0; p];
    let mut p_values = vec![0.0; p];
    for i in 0..p {
        let mut d = 0.0;
        for j in i..p {
            d += rinv[j * p + i] * rinv[j * p + i];
        }
        se[i] = (sigma2 * d).sqrt();
        p_values[i] = if se[i] > 0.0 {
            t_two_sided_p(beta[i] / se[i], df)
        } else {
            0.0
        };
    }

    Ok(OlsFit {
        bic: bic(rss, n, p),
        beta,
        rss,
        se,
        p_values,
        selected: cols.to_vec(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct StepwiseConfig {
    /// Minimum BIC improvement for a candidate to enter.
    pub tau_add: f64,
    /// Minimum BIC improvement for a variable to leave; at the default of
    /// zero any strictly improving removal fires.
    pub tau_remove: f64,
}

impl Default for StepwiseConfig {
    fn default() -> Self {
        StepwiseConfig {
            tau_add: 2.0,
            tau_remove: 0.0,
        }
    }
}

/// Hybrid forward/backward subset selection on a standardized matrix.
/// Starts from the three measurement columns; each sweep first adds the
/// best candidate clearing `tau_add`, then drops the best removal that
/// strictly improves BIC. Every fired step lowers BIC, so sweeps cannot
/// cycle; selection settles well within two sweeps per candidate.
pub fn stepwise_select(fm: &FeatureMatrix, cfg: &StepwiseConfig) -> Result<OlsFit> {
    let base: Vec<usize> = (0..fm.n_features)
        .filter(|&c| FEATURE_NAMES[..3].contains(&fm.feature_names[c].as_str()))
        .collect();
    let mut selected = if base.is_empty() {
        (0..fm.n_features.min(1)).collect()
    } else {
        base
    };
    // degenerate data can make the starting set collinear (a reactive
    // load exactly proportional to the real one, say); prune the named
    // column and carry on rather than refusing to train
    let mut cur = loop {
        match ols_fit(fm, &selected) {
            Ok(fit) => break fit,
            Err(Error::RankDeficient { column }) if selected.len() > 1 && column != usize::MAX => {
                selected.retain(|&c| c != column);
            }
            Err(e) => return Err(e),
        }
    };

    for _sweep in 0..2 * N_FEATURES {
        let mut fired = false;

        let mut best: Option<(f64, usize, OlsFit)> = None;
        for c in 0..fm.n_features {
            if selected.contains(&c) {
                continue;
            }
            let mut trial = selected.clone();
            trial.push(c);
            trial.sort_unstable();
            // rank-deficient candidates are simply not eligible
            if let Ok(fit) = ols_fit(fm, &trial) {
                let gain = cur.bic - fit.bic;
                if best.as_ref().is_none_or(|(g, _, _)| gain > *g) {
                    best = Some((gain, c, fit));
                }
            }
        }
        if let Some((gain, _, fit)) = best {
            if gain >= cfg.tau_add {
                selected = fit.selected.clone();
                cur = fit;
                fired = true;
            }
        }

        let mut best: Option<(f64, usize, OlsFit)> = None;
        for &c in &selected {
            let trial: Vec<usize> = selected.iter().copied().filter(|&x| x != c).collect();
            if trial.is_empty() {
                continue;
            }
            if let Ok(fit) = ols_fit(fm, &trial) {
                let gain = cur.bic - fit.bic;
                if best.as_ref().is_none_or(|(g, _, _)| gain > *g) {
                    best = Some((gain, c, fit));
                }
            }
        }
        if let Some((gain, _, fit)) = best {
            if gain >= cfg.tau_remove && gain > 0.0 {
                selected = fit.selected.clone();
                cur = fit;
                fired = true;
            }
        }

        if !fired {
            break;
        }
    }
    Ok(cur)
}

/// Deployable controller for one inverter: selected features, coefficients
/// in both standardized and physical units, fit diagnostics, and the
/// scaler needed to replay the pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionModel {
    /// Bus id of the inverter this model controls.
    pub inverter: String,
    /// Canonical indices of the selected features.
    pub feature_index: Vec<usize>,
    pub feature_names: Vec<String>,
    /// Standardized-space coefficients (model operates on z-scores).
    pub intercept_std: f64,
    pub beta_std: Vec<f64>,
    /// Physical-unit equivalents: q = intercept_phys + sum beta_phys * phi.
    pub intercept_phys: f64,
    pub beta_phys: Vec<f64>,
    /// Standard errors and two-sided p-values, intercept first.
    pub se: Vec<f64>,
    pub p_values: Vec<f64>,
    pub bic: f64,
    pub rss: f64,
    pub n_samples: usize,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl RegressionModel {
    /// Raw (unclipped) reactive setpoint from the local measurements.
    pub fn predict(&self, p_c: f64, q_c: f64, p_g: f64, q_cap: f64) -> f64 {
        let row = feature_row(p_c, q_c, p_g, q_cap);
        let mut acc = self.intercept_std;
        for (j, &idx) in self.feature_index.iter().enumerate() {
            let z = (row[idx] - self.feature_mean[j]) / self.feature_std[j];
            acc += self.beta_std[j] * z;
        }
        self.target_mean + self.target_std * acc
    }
}

fn package(
    inverter: &str,
    fit: &OlsFit,
    scaler: &Scaler,
    n_samples: usize,
) -> RegressionModel {
    let k = fit.selected.len();
    let mut m = RegressionModel {
        inverter: inverter.to_string(),
        feature_index: Vec::with_capacity(k),
        feature_names: Vec::with_capacity(k),
        intercept_std: fit.beta[0],
        beta_std: fit.beta[1..].to_vec(),
        intercept_phys: 0.0,
        beta_phys: Vec::with_capacity(k),
        se: fit.se.clone(),
        p_values: fit.p_values.clone(),
        bic: fit.bic,
        rss: fit.rss,
        n_samples,
        feature_mean: Vec::with_capacity(k),
        feature_std: Vec::with_capacity(k),
        target_mean: scaler.y_mean,
        target_std: scaler.y_std,
    };
    let mut intercept = fit.beta[0];
    for (j, &col) in fit.selected.iter().enumerate() {
        let canon = scaler.kept[col];
        let (mean, std) = (scaler.mean[col], scaler.std[col]);
        m.feature_index.push(canon);
        m.feature_names.push(FEATURE_NAMES[canon].to_string());
        m.feature_mean.push(mean);
        m.feature_std.push(std);
        let b = fit.beta[j + 1];
        m.beta_phys.push(scaler.y_std * b / std);
        intercept -= b * mean / std;
    }
    m.intercept_phys = scaler.y_mean + scaler.y_std * intercept;
    m
}

/// Full single-inverter pipeline: standardize, select, package.
pub fn train_inverter(
    fm: &FeatureMatrix,
    inverter: &str,
    cfg: &StepwiseConfig,
) -> Result<RegressionModel> {
    let (std_fm, scaler) = standardize(fm)?;
    let fit = stepwise_select(&std_fm, cfg)?;
    Ok(package(inverter, &fit, &scaler, fm.n_samples))
}

/// Serialized bundle of one model per inverter with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSet {
    pub gamma: f64,
    pub trained_from: String,
    pub trained_to: String,
    pub n_timesteps: usize,
    pub models: Vec<RegressionModel>,
}

impl ModelSet {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization")
    }

    pub fn from_json(text: &str) -> Result<ModelSet> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn model_for(&self, bus: &str) -> Option<&RegressionModel> {
        self.models.iter().find(|m| m.inverter == bus)
    }
}

/// Trains every inverter in parallel from a scenario set and its batch
/// optimization results.
pub fn train_models(
    model: &FeederModel,
    scen: &ScenarioSet,
    opf: &[Result<OpfSolution>],
    opf_cfg: &OpfConfig,
    cfg: &StepwiseConfig,
) -> Result<ModelSet> {
    scen.check_model(model)?;
    let models: Result<Vec<RegressionModel>> = (0..model.inverters.len())
        .into_par_iter()
        .map(|i| {
            let fm = build_features(scen, opf, model, i)?;
            train_inverter(&fm, &model.inverters[i].bus, cfg)
        })
        .collect();
    let fmt = |t: &chrono::NaiveDateTime| t.format(crate::scenario::TIMESTAMP_FMT).to_string();
    Ok(ModelSet {
        gamma: opf_cfg.gamma,
        trained_from: scen.timestamps.first().map(fmt).unwrap_or_default(),
        trained_to: scen.timestamps.last().map(fmt).unwrap_or_default(),
        n_timesteps: scen.len(),
        models: models?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn synthetic_matrix(seed: u64, n: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fm = FeatureMatrix {
            phi: Vec::with_capacity(n * N_FEATURES),
            y: vec![0.0; n],
            n_samples: n,
            n_features: N_FEATURES,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        };
        for _ in 0..n {
            let p_c = rng.random_range(0.0..0.03);
            let q_c = rng.random_range(0.0..0.012);
            let p_g = rng.random_range(0.0..0.025);
            let cap = rng.random_range(0.005..0.02);
            fm.phi.extend_from_slice(&feature_row(p_c, q_c, p_g, cap));
        }
        fm
    }

    #[test]
    fn feature_row_definitions_hold() {
        let row = feature_row(0.3, 0.1, 0.2, 0.5);
        assert_eq!(row[0], 0.3 - 0.2);
        assert_eq!(row[1], 0.1);
        assert_eq!(row[2], 0.5);
        assert_eq!(row[3], row[0] * row[1]);
        assert_eq!(row[4], row[0] * row[2]);
        assert_eq!(row[5], row[1] * row[2]);
        assert_eq!(row[6], row[0] * row[0]);
        assert_eq!(row[7], row[1] * row[1]);
        assert_eq!(row[8], row[2] * row[2]);
    }

    #[test]
    fn two_point_standardization_matches_reference() {
        let mut fm = synthetic_matrix(1, 2);
        fm.phi[0] = 1.0;
        fm.phi[N_FEATURES] = 3.0;
        fm.y = vec![5.0, 7.0];
        let (std_fm, scaler) = standardize(&fm).unwrap();
        let col = std_fm
            .feature_names
            .iter()
            .position(|n| n == "net_p")
            .unwrap();
        assert!((std_fm.at(0, col) + 0.7071067811865475).abs() < 1e-15);
        assert!((std_fm.at(1, col) - 0.7071067811865475).abs() < 1e-15);
        assert!((std_fm.y[0] + 0.7071067811865475).abs() < 1e-15);
        assert_eq!(scaler.y_mean, 6.0);
    }

    #[test]
    fn constant_columns_are_dropped() {
        let mut fm = synthetic_matrix(2, 50);
        for r in 0..fm.n_samples {
            fm.phi[r * N_FEATURES + 1] = 0.0; // no reactive load anywhere
            fm.phi[r * N_FEATURES + 3] = 0.0;
            fm.phi[r * N_FEATURES + 5] = 0.0;
            fm.phi[r * N_FEATURES + 7] = 0.0;
        }
        let (std_fm, scaler) = standardize(&fm).unwrap();
        assert_eq!(std_fm.n_features, 5);
        assert!(!scaler.kept.contains(&1));
        assert!(!std_fm.feature_names.iter().any(|n| n == "q_c"));

        let flat = FeatureMatrix {
            phi: vec![1.0; 4 * N_FEATURES],
            y: vec![0.0; 4],
            n_samples: 4,
            n_features: N_FEATURES,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        };
        assert!(standardize(&flat).is_err());
    }

    #[test]
    fn noiseless_fit_recovers_exactly() {
        let mut fm = synthetic_matrix(3, 120);
        for r in 0..fm.n_samples {
            fm.y[r] = 1.0 + 2.0 * fm.at(r, 0);
        }
        let fit = ols_fit(&fm, &[0]).unwrap();
        assert!((fit.beta[0] - 1.0).abs() < 1e-10);
        assert!((fit.beta[1] - 2.0).abs() < 1e-10);
        assert!(fit.rss < 1e-18);

        // a column the target never touches gets a ~zero coefficient
        let fit = ols_fit(&fm, &[0, 2]).unwrap();
        assert!(fit.beta[2].abs() < 1e-10);
    }

    #[test]
    fn duplicate_column_reports_rank_deficiency() {
        let mut fm = synthetic_matrix(4, 60);
        for r in 0..fm.n_samples {
            let v = fm.at(r, 0);
            fm.phi[r * N_FEATURES + 5] = v;
        }
        match ols_fit(&fm, &[0, 5]) {
            Err(Error::RankDeficient { column }) => assert_eq!(column, 5),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn bic_matches_reference_and_scalings() {
        let b = bic(1.0, 100, 4);
        assert!((b - -442.09633785485676).abs() < 1e-10, "{b}");
        let n = 250;
        assert!((bic(0.7, n, 6) - bic(0.7, n, 5) - (n as f64).ln()).abs() < 1e-10);
        assert!(
            (bic(0.5, n, 5) - (bic(1.0, n, 5) - n as f64 * 2.0f64.ln())).abs() < 1e-9
        );
    }

    #[test]
    fn residuals_are_orthogonal_to_the_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut fm = synthetic_matrix(5, 200);
        let noise = Normal::new(0.0, 0.05).unwrap();
        for r in 0..fm.n_samples {
            fm.y[r] = 0.4 * fm.at(r, 0) - 0.2 * fm.at(r, 2) + noise.sample(&mut rng);
        }
        let cols = [0usize, 2, 4];
        let fit = ols_fit(&fm, &cols).unwrap();
        let resid: Vec<f64> = (0..fm.n_samples)
            .map(|r| {
                let pred: f64 = fit.beta[0]
                    + cols
                        .iter()
                        .zip(&fit.beta[1..])
                        .map(|(&c, b)| b * fm.at(r, c))
                        .sum::<f64>();
                fm.y[r] - pred
            })
            .collect();
        assert!(resid.iter().sum::<f64>().abs() < 1e-8);
        for &c in &cols {
            let dot: f64 = (0..fm.n_samples).map(|r| resid[r] * fm.at(r, c)).sum();
            assert!(dot.abs() < 1e-8, "column {c}: {dot}");
        }
    }

    #[test]
    fn adding_columns_never_increases_rss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut fm = synthetic_matrix(6, 150);
        for r in 0..fm.n_samples {
            fm.y[r] = rng.random_range(-1.0..1.0);
        }
        let mut prev = f64::INFINITY;
        for k in 1..=6 {
            let cols: Vec<usize> = (0..k).collect();
            let fit = ols_fit(&fm, &cols).unwrap();
            assert!(fit.rss <= prev + 1e-12);
            prev = fit.rss;
        }
    }

    #[test]
    fn coefficients_land_within_three_standard_errors() {
        let mut hits = 0;
        let trials = 100;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut fm = synthetic_matrix(100 + seed, 100);
            let noise = Normal::new(0.0, 0.01).unwrap();
            let truth = [0.05, 0.8, -0.3];
            for r in 0..fm.n_samples {
                fm.y[r] = truth[0]
                    + truth[1] * fm.at(r, 0)
                    + truth[2] * fm.at(r, 2)
                    + noise.sample(&mut rng);
            }
            let fit = ols_fit(&fm, &[0, 2]).unwrap();
            let ok = (0..3).all(|i| (fit.beta[i] - truth[i]).abs() <= 3.0 * fit.se[i]);
            hits += ok as usize;
        }
        assert!(hits >= 99, "only {hits}/{trials} trials within 3 SE");
    }

    fn standardized_from(fm: &FeatureMatrix) -> FeatureMatrix {
        standardize(fm).unwrap().0
    }

    /// Selection tests need feature spreads of order one, otherwise the
    /// quadratic columns are indistinguishable from their linear parents
    /// at realistic noise levels.
    fn wide_matrix(seed: u64, n: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fm = FeatureMatrix {
            phi: Vec::with_capacity(n * N_FEATURES),
            y: vec![0.0; n],
            n_samples: n,
            n_features: N_FEATURES,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        };
        for _ in 0..n {
            let p_c = rng.random_range(0.0..2.0);
            let q_c = rng.random_range(0.0..1.0);
            let p_g = rng.random_range(0.0..1.5);
            let cap = rng.random_range(0.3..1.5);
            fm.phi.extend_from_slice(&feature_row(p_c, q_c, p_g, cap));
        }
        fm
    }

    #[test]
    fn stepwise_recovers_a_sparse_quadratic_structure() {
        // target built from net_p, q_cap, their product and squares only
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut fm = wide_matrix(7, 600);
        let noise = Normal::new(0.0, 1e-3).unwrap();
        for r in 0..fm.n_samples {
            fm.y[r] = 0.3 * fm.at(r, 0) + 0.9 * fm.at(r, 2) - 0.5 * fm.at(r, 4)
                + 0.7 * fm.at(r, 6)
                - 0.4 * fm.at(r, 8)
                + noise.sample(&mut rng);
        }
        let fit = stepwise_select(&standardized_from(&fm), &StepwiseConfig::default()).unwrap();
        let mut names: Vec<&str> = fit
            .selected
            .iter()
            .map(|&c| FEATURE_NAMES[c])
            .collect();
        names.sort_unstable();
        assert_eq!(
            names,
            vec!["net_p", "net_p*q_cap", "net_p^2", "q_cap", "q_cap^2"]
        );
    }

    #[test]
    fn stepwise_on_noise_keeps_bic_from_growing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut fm = synthetic_matrix(8, 300);
        for r in 0..fm.n_samples {
            fm.y[r] = rng.random_range(-1.0..1.0);
        }
        let std_fm = standardized_from(&fm);
        let base: Vec<usize> = (0..std_fm.n_features)
            .filter(|&c| FEATURE_NAMES[..3].contains(&std_fm.feature_names[c].as_str()))
            .collect();
        let initial = ols_fit(&std_fm, &base).unwrap();
        let fit = stepwise_select(&std_fm, &StepwiseConfig::default()).unwrap();
        assert!(fit.bic <= initial.bic + 1e-12);
        // nothing left whose removal improves BIC
        for &c in &fit.selected {
            let trial: Vec<usize> = fit.selected.iter().copied().filter(|&x| x != c).collect();
            if trial.is_empty() {
                continue;
            }
            let alt = ols_fit(&std_fm, &trial).unwrap();
            assert!(alt.bic >= fit.bic - 1e-9);
        }
    }

    #[test]
    fn full_model_is_recovered_when_everything_matters() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut fm = wide_matrix(9, 4000);
        let noise = Normal::new(0.0, 1e-5).unwrap();
        for r in 0..fm.n_samples {
            let mut v = 0.2;
            for c in 0..N_FEATURES {
                v += (0.5 + 0.1 * c as f64) * fm.at(r, c);
            }
            fm.y[r] = v + noise.sample(&mut rng);
        }
        let fit = stepwise_select(&standardized_from(&fm), &StepwiseConfig::default()).unwrap();
        assert_eq!(fit.selected.len(), N_FEATURES);
    }

    #[test]
    fn collinear_base_columns_are_pruned_not_fatal() {
        // reactive load locked to twice the net real power: after
        // standardization the two base columns coincide
        let mut fm = wide_matrix(13, 300);
        for r in 0..fm.n_samples {
            let v = fm.at(r, 0);
            let cap = fm.at(r, 2);
            fm.phi[r * N_FEATURES + 1] = 2.0 * v;
            fm.phi[r * N_FEATURES + 3] = v * (2.0 * v);
            fm.phi[r * N_FEATURES + 5] = (2.0 * v) * cap;
            fm.phi[r * N_FEATURES + 7] = (2.0 * v) * (2.0 * v);
            fm.y[r] = 0.5 * v + 0.2 * cap;
        }
        let fit = stepwise_select(&standardized_from(&fm), &StepwiseConfig::default()).unwrap();
        assert!(!fit.selected.is_empty());
        assert!(fit.rss < 1e-10);
    }

    #[test]
    fn prediction_at_training_means_returns_target_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut fm = synthetic_matrix(10, 400);
        let noise = Normal::new(0.0, 0.01).unwrap();
        for r in 0..fm.n_samples {
            fm.y[r] = 0.01 + 0.6 * fm.at(r, 0) + noise.sample(&mut rng);
        }
        let model = train_inverter(&fm, "b1", &StepwiseConfig::default()).unwrap();
        // the model runs on transformed features, so evaluate at a point
        // whose transformed row hits the training means: recover it by
        // averaging predictions instead, which the intercept property pins
        let mean_pred: f64 = (0..fm.n_samples)
            .map(|r| {
                let p_c = 0.0;
                let q_c = fm.at(r, 1);
                let p_g = -fm.at(r, 0);
                let cap = fm.at(r, 2);
                model.predict(p_c, q_c, p_g, cap)
            })
            .sum::<f64>()
            / fm.n_samples as f64;
        let y_mean = fm.y.iter().sum::<f64>() / fm.n_samples as f64;
        assert!(
            (mean_pred - y_mean).abs() < 1e-8,
            "{mean_pred} vs {y_mean}"
        );
        assert!(model.intercept_std.abs() < 1e-10);
    }

    #[test]
    fn normalized_coefficient_sum_matches_published_shape() {
        // six selected features with the published normalized estimates;
        // a standardized all-ones input sums them
        let model = RegressionModel {
            inverter: "a".into(),
            feature_index: vec![0, 1, 2, 3, 6, 8],
            feature_names: vec![
                "net_p".into(),
                "q_c".into(),
                "q_cap".into(),
                "net_p*q_c".into(),
                "net_p^2".into(),
                "q_cap^2".into(),
            ],
            intercept_std: 0.0,
            beta_std: vec![0.02, 0.37, 0.77, -0.21, 0.17, -0.06],
            intercept_phys: 0.0,
            beta_phys: vec![],
            se: vec![],
            p_values: vec![],
            bic: 0.0,
            rss: 0.0,
            n_samples: 0,
            feature_mean: vec![0.0; 6],
            feature_std: vec![1.0; 6],
            target_mean: 0.0,
            target_std: 1.0,
        };
        // choose raw inputs whose feature row is 1 in every selected slot
        let q = model.predict(2.0, 1.0, 1.0, 1.0);
        assert!((q - 1.06).abs() < 1e-12, "{q}");
    }

    #[test]
    fn physical_coefficients_reproduce_the_standardized_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut fm = synthetic_matrix(11, 500);
        let noise = Normal::new(0.0, 0.005).unwrap();
        for r in 0..fm.n_samples {
            fm.y[r] = 0.004 + 0.5 * fm.at(r, 2) - 0.8 * fm.at(r, 4) + noise.sample(&mut rng);
        }
        let model = train_inverter(&fm, "b2", &StepwiseConfig::default()).unwrap();
        for r in (0..fm.n_samples).step_by(97) {
            let p_c = 0.0;
            let q_c = fm.at(r, 1);
            let p_g = -fm.at(r, 0);
            let cap = fm.at(r, 2);
            let via_std = model.predict(p_c, q_c, p_g, cap);
            let row = feature_row(p_c, q_c, p_g, cap);
            let via_phys: f64 = model.intercept_phys
                + model
                    .feature_index
                    .iter()
                    .zip(&model.beta_phys)
                    .map(|(&c, b)| b * row[c])
                    .sum::<f64>();
            assert!((via_std - via_phys).abs() < 1e-10);
        }
    }

    #[test]
    fn model_set_round_trips_through_json() {
        let mut fm = synthetic_matrix(12, 300);
        for r in 0..fm.n_samples {
            fm.y[r] = 0.3 * fm.at(r, 0);
        }
        let m = train_inverter(&fm, "b7", &StepwiseConfig::default()).unwrap();
        let set = ModelSet {
            gamma: 1.0,
            trained_from: "2014-07-04T00:00:00".into(),
            trained_to: "2014-07-31T23:45:00".into(),
            n_timesteps: 2688,
            models: vec![m],
        };
        let text = set.to_json();
        let back = ModelSet::from_json(&text).unwrap();
        assert_eq!(back.models[0].inverter, "b7");
        assert_eq!(text, back.to_json());
        assert!(set.model_for("b7").is_some());
        assert!(set.model_for("b9").is_none());
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

            /// Consumption and generation enter every feature through
            /// their difference only: folding the pair into one net value
            /// leaves the prediction bit-identical.
            #[test]
            fn prediction_sees_only_net_real_power(
                seed in 0u64..500,
                p_c in 0.0f64..0.05,
                q_c in 0.0f64..0.02,
                p_g in 0.0f64..0.04,
                cap in 0.001f64..0.03,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut fm = synthetic_matrix(seed.wrapping_add(77), 250);
                let noise = Normal::new(0.0, 0.01).unwrap();
                for r in 0..fm.n_samples {
                    fm.y[r] = 0.4 * fm.at(r, 0) + 0.2 * fm.at(r, 5) + noise.sample(&mut rng);
                }
                let model = train_inverter(&fm, "x", &StepwiseConfig::default()).unwrap();
                let a = model.predict(p_c, q_c, p_g, cap);
                let b = model.predict(p_c - p_g, q_c, 0.0, cap);
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
