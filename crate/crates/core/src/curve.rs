//! Constant-maturity futures, roll yields and the curve state vector.

use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::ingest::FuturesPanel;
use crate::StateVector;

/// Number of constant-maturity horizons (one to five months).
pub const N_CMF: usize = 5;
/// `[log VIX, log V¹..log V⁵, Roll¹..Roll⁵]`.
pub const STATE_DIM: usize = 1 + 2 * N_CMF;
pub const TRADING_DAYS: f64 = 252.0;
pub const DT: f64 = 1.0 / TRADING_DAYS;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    pub dates: Vec<NaiveDate>,
    /// Weight on the nearer contract of each adjacent pair, shared by all horizons.
    pub omega: Vec<f64>,
    /// `V⁰..V⁵`, with `V⁰` the spot index.
    pub cmf: Vec<[f64; N_CMF + 1]>,
    /// Annualised roll yields `Roll¹..Roll⁵`; absent on the first date.
    pub roll: Vec<Option<[f64; N_CMF]>>,
}

impl CurveSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// Calendar-day weight on the front contract: 1 the day the prior contract
/// expires, 0 on the front contract's own expiry.
pub fn roll_weight(t: NaiveDate, t_prev: NaiveDate, t_front: NaiveDate) -> Result<f64> {
    if t < t_prev || t > t_front || t_prev >= t_front {
        return Err(Error::BadInterval {
            date: t,
            prev: t_prev,
            front: t_front,
        });
    }
    let remaining = (t_front - t).num_days() as f64;
    let span = (t_front - t_prev).num_days() as f64;
    Ok(remaining / span)
}

/// Linear interpolation between adjacent contracts.
pub fn interpolate(omega: f64, near: f64, far: f64) -> f64 {
    omega * near + (1.0 - omega) * far
}

pub fn build_cmfs(panel: &FuturesPanel) -> Result<CurveSeries> {
    let mut omega = Vec::with_capacity(panel.len());
    let mut cmf = Vec::with_capacity(panel.len());
    for i in 0..panel.len() {
        let w = roll_weight(panel.dates[i], panel.prev_expiry[i], panel.expiries[i][0])?;
        let f = &panel.futures[i];
        let mut v = [0.0; N_CMF + 1];
        v[0] = panel.vix[i];
        for h in 1..=N_CMF {
            v[h] = interpolate(w, f[h - 1], f[h]);
        }
        omega.push(w);
        cmf.push(v);
    }
    Ok(CurveSeries {
        dates: panel.dates.clone(),
        omega,
        roll: vec![None; panel.len()],
        cmf,
    })
}

/// Rate of change of the roll weight between rows `t` and `t + 1`.
///
/// Within a cycle this is the realised weight change over `dt`, whatever the
/// calendar gap. When the front contract changes the jump back towards one is
/// a relabelling of contracts, so the one-day decay rate of the new cycle is
/// used instead.
pub fn omega_rate(panel: &FuturesPanel, curves: &CurveSeries, t: usize, dt: f64) -> f64 {
    if panel.expiries[t][0] == panel.expiries[t + 1][0] {
        (curves.omega[t + 1] - curves.omega[t]) / dt
    } else {
        let span = (panel.expiries[t + 1][0] - panel.prev_expiry[t + 1]).num_days() as f64;
        -1.0 / span / dt
    }
}

/// `Roll_{t+1} = ω̇_t (F_{t+1}^{i+1} − F_{t+1}^i) / V_t^i`.
pub fn roll_yield(omega_rate: f64, near_next: f64, far_next: f64, cmf_t: f64) -> f64 {
    omega_rate * (far_next - near_next) / cmf_t
}

pub fn roll_yields(panel: &FuturesPanel, curves: &CurveSeries, dt: f64) -> Result<CurveSeries> {
    if curves.len() < 2 || panel.len() != curves.len() {
        return Err(Error::InsufficientHistory {
            needed: 2,
            got: curves.len().min(panel.len()),
        });
    }
    let mut out = curves.clone();
    out.roll[0] = None;
    for t in 0..curves.len() - 1 {
        let rate = omega_rate(panel, curves, t, dt);
        let f = &panel.futures[t + 1];
        let mut roll = [0.0; N_CMF];
        for i in 1..=N_CMF {
            roll[i - 1] = roll_yield(rate, f[i - 1], f[i], curves.cmf[t][i]);
        }
        out.roll[t + 1] = Some(roll);
    }
    Ok(out)
}

/// Curves plus roll yields for a whole panel.
pub fn build_curves(panel: &FuturesPanel, dt: f64) -> Result<CurveSeries> {
    roll_yields(panel, &build_cmfs(panel)?, dt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSeries {
    pub dates: Vec<NaiveDate>,
    /// Row of each state in the source curve series.
    pub rows: Vec<usize>,
    pub states: Vec<StateVector>,
}

impl StateSeries {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

pub fn state_vector(cmf: &[f64; N_CMF + 1], roll: &[f64; N_CMF]) -> Option<StateVector> {
    if cmf.iter().any(|&v| v <= 0.0) {
        return None;
    }
    Some(DVector::from_iterator(
        STATE_DIM,
        cmf.iter().map(|v| v.ln()).chain(roll.iter().copied()),
    ))
}

/// State vectors for every date carrying a roll yield.
pub fn state_vectors(curves: &CurveSeries) -> Result<StateSeries> {
    let mut out = StateSeries {
        dates: Vec::new(),
        rows: Vec::new(),
        states: Vec::new(),
    };
    for (t, roll) in curves.roll.iter().enumerate() {
        let Some(roll) = roll else { continue };
        let x = state_vector(&curves.cmf[t], roll).ok_or(Error::NonPositiveCmf {
            date: curves.dates[t],
        })?;
        out.dates.push(curves.dates[t]);
        out.rows.push(t);
        out.states.push(x);
    }
    Ok(out)
}

pub const MODE_GRID: usize = 512;
pub const MODE_MIN_SAMPLES: usize = 100;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mode of one coordinate: Gaussian KDE with Silverman's bandwidth, maximised
/// over an evenly spaced grid spanning the sample.
pub fn kde_mode(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    if hi <= lo {
        return lo;
    }
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sd =
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0)).sqrt();
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);

    let step = (hi - lo) / (MODE_GRID - 1) as f64;
    let cutoff = 8.0 * h;
    let mut best = (f64::NEG_INFINITY, lo);
    for k in 0..MODE_GRID {
        let g = lo + k as f64 * step;
        let a = sorted.partition_point(|&v| v < g - cutoff);
        let b = sorted.partition_point(|&v| v <= g + cutoff);
        let density: f64 = sorted[a..b]
            .iter()
            .map(|&v| {
                let z = (g - v) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        if density > best.0 {
            best = (density, g);
        }
    }
    best.1
}

/// Coordinate-wise modal state.
pub fn estimate_mode(states: &[StateVector], min_samples: usize) -> Result<StateVector> {
    if states.len() < min_samples.max(1) {
        return Err(Error::TooFewSamples {
            needed: min_samples.max(1),
            got: states.len(),
        });
    }
    let dim = states[0].len();
    if let Some(bad) = states.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let mode = (0..dim)
        .map(|j| {
            let column: Vec<f64> = states.iter().map(|s| s[j]).collect();
            kde_mode(&column)
        })
        .collect::<Vec<_>>();
    Ok(DVector::from_vec(mode))
}

/// Rolling-strategy return from contract prices:
/// `(ω ΔF^i + (1−ω) ΔF^{i+1}) / V_t + r Δt`.
pub fn rolling_return_from_futures(
    omega_t: f64,
    pair_t: [f64; 2],
    pair_next: [f64; 2],
    r: f64,
    dt: f64,
) -> f64 {
    let v_t = interpolate(omega_t, pair_t[0], pair_t[1]);
    let dv = omega_t * (pair_next[0] - pair_t[0]) + (1.0 - omega_t) * (pair_next[1] - pair_t[1]);
    dv / v_t + r * dt
}

/// The same return written through constant-maturity prices and roll yield:
/// `(r + Roll_{t+1}) Δt + ΔV / V_t`.
pub fn rolling_return_from_cmf(cmf_t: f64, cmf_next: f64, roll_next: f64, r: f64, dt: f64) -> f64 {
    (r + roll_next) * dt + (cmf_next - cmf_t) / cmf_t
}

const CURVE_HEADER: [&str; 13] = [
    "date", "omega", "v0", "v1", "v2", "v3", "v4", "v5", "roll1", "roll2", "roll3", "roll4",
    "roll5",
];

/// Export as `date,omega,v0..v5,roll1..roll5`; an optional leading `#` line
/// carries provenance.
pub fn write_curves(curves: &CurveSeries, path: &Path, comment: Option<&str>) -> Result<()> {
    let mut buf = Vec::new();
    if let Some(c) = comment {
        buf.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(CURVE_HEADER)?;
        for t in 0..curves.len() {
            let mut rec = vec![curves.dates[t].to_string(), curves.omega[t].to_string()];
            rec.extend(curves.cmf[t].iter().map(|v| v.to_string()));
            match &curves.roll[t] {
                Some(r) => rec.extend(r.iter().map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), N_CMF)),
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_curves(path: &Path) -> Result<CurveSeries> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(file);
    let mut out = CurveSeries {
        dates: Vec::new(),
        omega: Vec::new(),
        cmf: Vec::new(),
        roll: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |reason: String| Error::MalformedRow {
            file: name.clone(),
            line,
            reason,
        };
        if rec.len() != CURVE_HEADER.len() {
            return Err(bad(format!(
                "expected {} fields, got {}",
                CURVE_HEADER.len(),
                rec.len()
            )));
        }
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("bad number {:?}", &rec[j])))
        };
        let date =
            NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| bad(e.to_string()))?;
        let omega = num(1)?;
        let mut cmf = [0.0; N_CMF + 1];
        for (h, slot) in cmf.iter_mut().enumerate() {
            *slot = num(2 + h)?;
        }
        let roll = if rec[8].trim().is_empty() {
            None
        } else {
            let mut r = [0.0; N_CMF];
            for (h, slot) in r.iter_mut().enumerate() {
                *slot = num(8 + h)?;
            }
            Some(r)
        };
        out.dates.push(date);
        out.omega.push(omega);
        out.cmf.push(cmf);
        out.roll.push(roll);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn roll_weight_matches_published_values() {
        let w = roll_weight(d("2020-12-28"), d("2020-12-16"), d("2021-01-20")).unwrap();
        assert_relative_eq!(w, 23.0 / 35.0);
        assert!((w - 0.65714).abs() < 5e-6);
        let w = roll_weight(d("2021-02-18"), d("2021-02-17"), d("2021-03-17")).unwrap();
        assert_relative_eq!(w, 27.0 / 28.0);
        assert!((w - 0.96429).abs() < 5e-6);
    }

    #[test]
    fn roll_weight_boundaries() {
        assert_eq!(
            roll_weight(d("2020-12-16"), d("2020-12-16"), d("2021-01-20")).unwrap(),
            1.0
        );
        assert_eq!(
            roll_weight(d("2021-01-20"), d("2020-12-16"), d("2021-01-20")).unwrap(),
            0.0
        );
        assert!(matches!(
            roll_weight(d("2021-01-21"), d("2020-12-16"), d("2021-01-20")),
            Err(Error::BadInterval { .. })
        ));
        assert!(roll_weight(d("2020-12-15"), d("2020-12-16"), d("2021-01-20")).is_err());
    }

    #[test]
    fn interpolation_examples() {
        assert_eq!(interpolate(0.5, 20.0, 22.0), 21.0);
        assert_eq!(interpolate(1.0, 20.0, 22.0), 20.0);
        assert_relative_eq!(interpolate(0.65714, 21.0, 23.0), 21.68572, epsilon = 1e-12);
    }

    #[test]
    fn roll_yield_examples() {
        assert_relative_eq!(
            roll_yield(-252.0 / 35.0, 20.0, 22.0, 21.0),
            -0.685_714_285_714,
            epsilon = 1e-9
        );
        assert_eq!(roll_yield(-7.2, 20.0, 20.0, 21.0), 0.0);
        assert!(roll_yield(-7.2, 20.0, 21.0, 20.5) < 0.0);
    }

    #[test]
    fn state_vector_layout() {
        let x = state_vector(&[1.0; 6], &[0.0; 5]).unwrap();
        assert_eq!(x, DVector::zeros(STATE_DIM));
        let mut cmf = [1.0; 6];
        cmf[1] = std::f64::consts::E;
        let x = state_vector(&cmf, &[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_relative_eq!(x[1], 1.0);
        assert_eq!(x[10], 0.5);
        assert!(state_vector(&[1.0, 0.0, 1.0, 1.0, 1.0, 1.0], &[0.0; 5]).is_none());
    }

    #[test]
    fn mode_of_identical_states_is_that_state() {
        let s = DVector::from_vec((0..STATE_DIM).map(|i| i as f64 * 0.3 - 1.0).collect());
        let states = vec![s.clone(); 120];
        assert_eq!(estimate_mode(&states, MODE_MIN_SAMPLES).unwrap(), s);
    }

    #[test]
    fn mode_needs_enough_samples() {
        let states = vec![DVector::zeros(3); 10];
        assert!(matches!(
            estimate_mode(&states, MODE_MIN_SAMPLES),
            Err(Error::TooFewSamples {
                needed: 100,
                got: 10
            })
        ));
    }
}
