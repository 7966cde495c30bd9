//! Synthetic futures panels for tests and demos.
//!
//! A latent log constant-maturity curve at whole-month horizons follows a
//! mean-reverting VAR. Each listed contract is priced by interpolating that
//! curve at the contract's time to expiry, on a VIX-style monthly calendar.

use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{stream_rng, VarModel};
use crate::error::{Error, Result};
use crate::ingest::{write_panel, FuturesPanel, N_CONTRACTS};

/// Latent horizons 0..=7 months.
pub const LATENT_HORIZONS: usize = 8;
pub const DAYS_PER_MONTH: f64 = 30.4375;

/// Wednesday thirty days before the third Friday of the following month.
pub fn monthly_expiry(year: i32, month: u32) -> NaiveDate {
    let (y, m) = if month == 12 {
        (year + 1, 1)
    } else {
        (year, month + 1)
    };
    let third_friday =
        NaiveDate::from_weekday_of_month_opt(y, m, Weekday::Fri, 3).expect("valid month");
    third_friday - Duration::days(30)
}

/// Expiries from the one preceding `from` through `count` more months.
pub fn expiry_calendar(from: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut y = from.year();
    let mut m = from.month();
    // Start two months back so the expiry before `from` is included.
    for _ in 0..2 {
        if m == 1 {
            y -= 1;
            m = 12;
        } else {
            m -= 1;
        }
    }
    let mut out = Vec::new();
    while out.len() < count + 4 {
        let e = monthly_expiry(y, m);
        out.push(e);
        if m == 12 {
            y += 1;
            m = 1;
        } else {
            m += 1;
        }
    }
    let first_after = out
        .iter()
        .position(|e| *e >= from)
        .expect("calendar reaches past start");
    out.drain(..first_after - 1);
    out
}

pub fn weekdays(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    /// Contango on average, mean-reverting, spot most volatile.
    Standard,
    /// Log curve steeper at the front than the back, near-unit-root level
    /// with tiny idiosyncratic noise; short front / long back is the best
    /// trade on almost every day.
    FrontContango,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureSpec {
    pub start: NaiveDate,
    pub days: usize,
    pub seed: u64,
    pub kind: FixtureKind,
}

impl FixtureSpec {
    pub fn bundled() -> Self {
        FixtureSpec {
            start: NaiveDate::from_ymd_opt(2019, 1, 2).expect("valid date"),
            days: 200,
            seed: 20190102,
            kind: FixtureKind::Standard,
        }
    }
}

/// The latent log-curve model for a fixture kind.
pub fn latent_model(kind: FixtureKind) -> VarModel {
    let n = LATENT_HORIZONS;
    // Log curve: level + slope ln(1 + h) + tilt h + front (1 − e^{−h}).
    let (level, slope, tilt, front, persistence, common, idio): (
        f64,
        f64,
        f64,
        f64,
        f64,
        f64,
        f64,
    ) = match kind {
        FixtureKind::Standard => (18.0f64.ln(), 0.12, 0.0, 0.0, 0.96, 0.045, 0.006),
        FixtureKind::FrontContango => (20.0f64.ln(), 0.0, 0.15, 0.4, 0.999, 0.005, 0.0002),
    };
    let mode = DVector::from_fn(n, |h, _| {
        let h = h as f64;
        level + slope * (1.0 + h).ln() + tilt * h + front * (1.0 - (-h).exp())
    });
    let loading = DVector::from_fn(n, |h, _| match kind {
        FixtureKind::Standard => (-(h as f64) / 4.0).exp(),
        FixtureKind::FrontContango => 1.0,
    });
    let sigma =
        &loading * loading.transpose() * common.powi(2) + DMatrix::identity(n, n) * idio.powi(2);
    VarModel::new(
        mode,
        DVector::zeros(n),
        DMatrix::identity(n, n) * persistence,
        sigma,
    )
    .expect("stable latent model")
}

fn interpolate_curve(log_curve: &DVector<f64>, months: f64) -> f64 {
    let last = (LATENT_HORIZONS - 1) as f64;
    let m = months.clamp(0.0, last);
    let lo = (m.floor() as usize).min(LATENT_HORIZONS - 2);
    let w = m - lo as f64;
    ((1.0 - w) * log_curve[lo] + w * log_curve[lo + 1]).exp()
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

pub fn generate_panel(spec: &FixtureSpec) -> Result<FuturesPanel> {
    if spec.days < 2 {
        return Err(Error::Config("a fixture needs at least two days".into()));
    }
    let model = latent_model(spec.kind);
    let dates = weekdays(spec.start, spec.days);
    let months = (spec.days / 15 + 10).max(12);
    let calendar = expiry_calendar(spec.start, months);
    let mut rng = stream_rng(spec.seed, 0);
    let mut x = model.draw_stationary(&mut rng)?;

    let mut panel = FuturesPanel {
        dates: Vec::with_capacity(spec.days),
        vix: Vec::with_capacity(spec.days),
        futures: Vec::with_capacity(spec.days),
        expiries: Vec::with_capacity(spec.days),
        prev_expiry: Vec::with_capacity(spec.days),
    };
    for (i, &date) in dates.iter().enumerate() {
        if i > 0 {
            x = model.draw_step(&x, &mut rng);
        }
        let front = calendar.partition_point(|e| *e < date);
        if front == 0 || front + N_CONTRACTS > calendar.len() {
            return Err(Error::CalendarInconsistent {
                date,
                reason: "synthetic calendar too short".into(),
            });
        }
        let mut expiries = [date; N_CONTRACTS];
        let mut futures = [0.0; N_CONTRACTS];
        for k in 0..N_CONTRACTS {
            expiries[k] = calendar[front + k];
            let tau = (expiries[k] - date).num_days() as f64 / DAYS_PER_MONTH;
            futures[k] = round4(interpolate_curve(&x, tau));
        }
        panel.dates.push(date);
        panel.vix.push(round4(x[0].exp()));
        panel.futures.push(futures);
        panel.expiries.push(expiries);
        panel.prev_expiry.push(calendar[front - 1]);
    }
    Ok(panel)
}

pub const FUTURES_FILE: &str = "futures.csv";
pub const VIX_FILE: &str = "vix.csv";
pub const CALENDAR_FILE: &str = "calendar.csv";

/// Write `futures.csv`, `vix.csv` and `calendar.csv` into `dir`.
pub fn write_fixture(spec: &FixtureSpec, dir: &Path) -> Result<FuturesPanel> {
    let panel = generate_panel(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_panel(
        &panel,
        &dir.join(FUTURES_FILE),
        &dir.join(VIX_FILE),
        &dir.join(CALENDAR_FILE),
    )?;
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::build_curves;
    use crate::ingest::parse_panel;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn known_expiries() {
        assert_eq!(monthly_expiry(2020, 12), d("2020-12-16"));
        assert_eq!(monthly_expiry(2021, 1), d("2021-01-20"));
        assert_eq!(monthly_expiry(2021, 2), d("2021-02-17"));
        assert_eq!(monthly_expiry(2021, 3), d("2021-03-17"));
        assert!(expiry_calendar(d("2021-01-04"), 6)
            .iter()
            .all(|e| e.weekday() == Weekday::Wed));
    }

    #[test]
    fn calendar_starts_before_the_first_date() {
        let cal = expiry_calendar(d("2021-01-04"), 8);
        assert_eq!(cal[0], d("2020-12-16"));
        assert_eq!(cal[1], d("2021-01-20"));
        let cal = expiry_calendar(d("2021-01-20"), 8);
        assert_eq!(cal[0], d("2020-12-16"));
        assert_eq!(cal[1], d("2021-01-20"));
    }

    #[test]
    fn weekdays_skip_weekends() {
        let w = weekdays(d("2021-01-01"), 5);
        assert_eq!(
            w,
            vec![
                d("2021-01-01"),
                d("2021-01-04"),
                d("2021-01-05"),
                d("2021-01-06"),
                d("2021-01-07")
            ]
        );
    }

    #[test]
    fn generated_panel_round_trips_through_ingest() {
        let spec = FixtureSpec {
            days: 60,
            ..FixtureSpec::bundled()
        };
        let dir = tempfile::tempdir().unwrap();
        let panel = write_fixture(&spec, dir.path()).unwrap();
        let parsed = parse_panel(
            &dir.path().join(FUTURES_FILE),
            &dir.path().join(VIX_FILE),
            Some(&dir.path().join(CALENDAR_FILE)),
        )
        .unwrap();
        assert!(parsed.dropped.is_empty());
        assert_eq!(parsed.panel, panel);
        let curves = build_curves(&panel, crate::curve::DT).unwrap();
        assert!(curves.omega.iter().all(|w| (0.0..=1.0).contains(w)));
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = FixtureSpec {
            days: 30,
            ..FixtureSpec::bundled()
        };
        assert_eq!(
            generate_panel(&spec).unwrap(),
            generate_panel(&spec).unwrap()
        );
        let other = FixtureSpec {
            seed: 1,
            ..spec.clone()
        };
        assert_ne!(
            generate_panel(&spec).unwrap(),
            generate_panel(&other).unwrap()
        );
    }

    #[test]
    fn front_contango_is_upward_sloping_at_the_front() {
        let spec = FixtureSpec {
            days: 100,
            kind: FixtureKind::FrontContango,
            ..FixtureSpec::bundled()
        };
        let panel = generate_panel(&spec).unwrap();
        let steep = panel
            .futures
            .iter()
            .filter(|f| (f[1] / f[0]).ln() > (f[5] / f[4]).ln())
            .count();
        assert!(steep > 95, "{steep}");
    }
}
