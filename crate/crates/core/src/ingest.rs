//! Loading and validating daily VIX spot and futures settlements.
//!
//! Futures arrive in long format (`trade_date,expiry_date,settle`), one row
//! per listed contract. The expiry calendar is the union of every expiry seen
//! in the futures file plus an optional `calendar.csv` that supplies the
//! expiries preceding the sample. A date is kept only when the six nearest
//! expiries on or after it all carry a settlement, spot VIX is present, and
//! the expiry before the front contract is known.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of monthly contracts retained per date (F¹..F⁶).
pub const N_CONTRACTS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuturesPanel {
    pub dates: Vec<NaiveDate>,
    /// Spot VIX per date, index points.
    pub vix: Vec<f64>,
    /// Settlements ordered by expiry, index points.
    pub futures: Vec<[f64; N_CONTRACTS]>,
    pub expiries: Vec<[NaiveDate; N_CONTRACTS]>,
    /// Expiry immediately preceding the front contract.
    pub prev_expiry: Vec<NaiveDate>,
}

impl FuturesPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Restrict the panel to the rows in `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> FuturesPanel {
        FuturesPanel {
            dates: self.dates[range.clone()].to_vec(),
            vix: self.vix[range.clone()].to_vec(),
            futures: self.futures[range.clone()].to_vec(),
            expiries: self.expiries[range.clone()].to_vec(),
            prev_expiry: self.prev_expiry[range].to_vec(),
        }
    }

    /// Every expiry referenced by the panel, ascending.
    pub fn calendar(&self) -> Vec<NaiveDate> {
        let mut set = BTreeSet::new();
        for (exp, prev) in self.expiries.iter().zip(&self.prev_expiry) {
            set.extend(exp.iter().copied());
            set.insert(*prev);
        }
        set.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DropReason {
    MissingContract,
    MissingSpot,
    NoPriorExpiry,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedDate {
    pub date: NaiveDate,
    pub reason: DropReason,
}

#[derive(Debug, Clone)]
pub struct ParsedPanel {
    pub panel: FuturesPanel,
    /// Common dates rejected for incomplete data, in date order.
    pub dropped: Vec<DroppedDate>,
}

fn parse_date(file: &str, line: usize, field: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(field.trim(), "%Y-%m-%d").map_err(|e| Error::MalformedRow {
        file: file.to_string(),
        line,
        reason: format!("bad date {field:?}: {e}"),
    })
}

/// Empty fields are reported as `None`; anything else must parse.
fn parse_price(file: &str, line: usize, field: &str) -> Result<Option<f64>> {
    let field = field.trim();
    if field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    let v: f64 = field.parse().map_err(|_| Error::MalformedRow {
        file: file.to_string(),
        line,
        reason: format!("bad number {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::MalformedRow {
            file: file.to_string(),
            line,
            reason: format!("non-finite number {field:?}"),
        });
    }
    Ok(Some(v))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, file: &str, line: usize) -> Result<&'a str> {
    rec.get(idx).ok_or_else(|| Error::MalformedRow {
        file: file.to_string(),
        line,
        reason: format!("missing column {idx}"),
    })
}

type FuturesRows = BTreeMap<NaiveDate, Vec<(NaiveDate, Option<f64>)>>;

fn read_futures(path: &Path) -> Result<(FuturesRows, BTreeSet<NaiveDate>)> {
    let name = path.display().to_string();
    let mut rdr = reader(path)?;
    let mut rows: FuturesRows = BTreeMap::new();
    let mut calendar = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let trade = parse_date(&name, line, field(&rec, 0, &name, line)?)?;
        let expiry = parse_date(&name, line, field(&rec, 1, &name, line)?)?;
        let settle = parse_price(&name, line, rec.get(2).unwrap_or(""))?;
        if expiry < trade {
            return Err(Error::CalendarInconsistent {
                date: trade,
                reason: format!("contract expiring {expiry} quoted after expiry"),
            });
        }
        let listed = rows.entry(trade).or_default();
        if let Some(&(last, _)) = listed.last() {
            if expiry <= last {
                return Err(Error::CalendarInconsistent {
                    date: trade,
                    reason: format!("expiry {expiry} listed after {last}"),
                });
            }
        }
        listed.push((expiry, settle));
        calendar.insert(expiry);
    }
    Ok((rows, calendar))
}

fn read_vix(path: &Path) -> Result<BTreeMap<NaiveDate, Option<f64>>> {
    let name = path.display().to_string();
    let mut rdr = reader(path)?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let date = parse_date(&name, line, field(&rec, 0, &name, line)?)?;
        let v = parse_price(&name, line, rec.get(1).unwrap_or(""))?;
        if out.insert(date, v).is_some() {
            return Err(Error::MalformedRow {
                file: name,
                line,
                reason: format!("duplicate date {date}"),
            });
        }
    }
    Ok(out)
}

fn read_calendar(path: &Path) -> Result<BTreeSet<NaiveDate>> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') || text == "expiry_date" {
            continue;
        }
        out.insert(parse_date(&name, i + 1, text)?);
    }
    Ok(out)
}

/// Parse and align the futures and spot files into a panel.
pub fn parse_panel(
    futures_file: &Path,
    vix_file: &Path,
    calendar_file: Option<&Path>,
) -> Result<ParsedPanel> {
    let (rows, mut calendar) = read_futures(futures_file)?;
    let vix = read_vix(vix_file)?;
    if let Some(path) = calendar_file {
        calendar.extend(read_calendar(path)?);
    }
    let calendar: Vec<NaiveDate> = calendar.into_iter().collect();

    let mut panel = FuturesPanel {
        dates: Vec::new(),
        vix: Vec::new(),
        futures: Vec::new(),
        expiries: Vec::new(),
        prev_expiry: Vec::new(),
    };
    let mut dropped = Vec::new();

    for (date, listed) in &rows {
        let Some(spot) = vix.get(date) else { continue };
        let Some(spot) = *spot else {
            dropped.push(DroppedDate {
                date: *date,
                reason: DropReason::MissingSpot,
            });
            continue;
        };

        let first = calendar.partition_point(|e| e < date);
        if first + N_CONTRACTS > calendar.len() {
            dropped.push(DroppedDate {
                date: *date,
                reason: DropReason::MissingContract,
            });
            continue;
        }
        let wanted = &calendar[first..first + N_CONTRACTS];
        let mut prices = [0.0; N_CONTRACTS];
        let mut complete = true;
        for (slot, expiry) in wanted.iter().enumerate() {
            match listed.iter().find(|(e, _)| e == expiry) {
                Some((_, Some(p))) => prices[slot] = *p,
                _ => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete {
            dropped.push(DroppedDate {
                date: *date,
                reason: DropReason::MissingContract,
            });
            continue;
        }
        if first == 0 {
            log::warn!("{date}: no expiry before the front contract, dropping");
            dropped.push(DroppedDate {
                date: *date,
                reason: DropReason::NoPriorExpiry,
            });
            continue;
        }

        let mut expiries = [*date; N_CONTRACTS];
        expiries.copy_from_slice(wanted);
        panel.dates.push(*date);
        panel.vix.push(spot);
        panel.futures.push(prices);
        panel.expiries.push(expiries);
        panel.prev_expiry.push(calendar[first - 1]);
    }

    if !dropped.is_empty() {
        log::warn!("dropped {} incomplete dates", dropped.len());
    }
    if panel.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    Ok(ParsedPanel { panel, dropped })
}

/// Write the panel back out in the same three-file layout `parse_panel` reads.
pub fn write_panel(
    panel: &FuturesPanel,
    futures_file: &Path,
    vix_file: &Path,
    calendar_file: &Path,
) -> Result<()> {
    let mut fut = csv::Writer::from_path(futures_file)?;
    fut.write_record(["trade_date", "expiry_date", "settle"])?;
    for i in 0..panel.len() {
        for j in 0..N_CONTRACTS {
            fut.write_record(&[
                panel.dates[i].to_string(),
                panel.expiries[i][j].to_string(),
                panel.futures[i][j].to_string(),
            ])?;
        }
    }
    fut.flush().map_err(|e| Error::io(futures_file, e))?;

    let mut vix = csv::Writer::from_path(vix_file)?;
    vix.write_record(["trade_date", "vix"])?;
    for (d, v) in panel.dates.iter().zip(&panel.vix) {
        vix.write_record(&[d.to_string(), v.to_string()])?;
    }
    vix.flush().map_err(|e| Error::io(vix_file, e))?;

    let mut cal = File::create(calendar_file).map_err(|e| Error::io(calendar_file, e))?;
    let mut text = String::from("expiry_date\n");
    for d in panel.calendar() {
        text.push_str(&d.to_string());
        text.push('\n');
    }
    cal.write_all(text.as_bytes())
        .map_err(|e| Error::io(calendar_file, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: usize,
    pub failed: usize,
    pub offenders: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.checks.iter().all(|c| c.failed == 0)
    }

    pub fn offenders(&self) -> BTreeSet<NaiveDate> {
        self.checks
            .iter()
            .flat_map(|c| c.offenders.iter().copied())
            .collect()
    }
}

struct Check {
    result: CheckResult,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Check {
            result: CheckResult {
                name,
                passed: 0,
                failed: 0,
                offenders: Vec::new(),
            },
        }
    }

    fn record(&mut self, ok: bool, date: NaiveDate) {
        if ok {
            self.result.passed += 1;
        } else {
            self.result.failed += 1;
            self.result.offenders.push(date);
        }
    }
}

/// Check every panel invariant and report per-check counts. Gaps between
/// trading dates are not violations.
pub fn validate_panel(panel: &FuturesPanel) -> ValidationReport {
    let mut increasing = Check::new("dates_strictly_increasing");
    let mut ordering = Check::new("expiry_ordering");
    let mut positive = Check::new("positive_prices");
    let mut prev = Check::new("prior_expiry_consistent");
    let mut shape = Check::new("row_complete");

    let n = panel.dates.len();
    for i in 0..n {
        let date = panel.dates[i];
        shape.record(
            panel.vix.len() == n
                && panel.futures.len() == n
                && panel.expiries.len() == n
                && panel.prev_expiry.len() == n,
            date,
        );
        if i > 0 {
            increasing.record(panel.dates[i - 1] < date, date);
        }
        let (Some(exp), Some(fut), Some(spot), Some(&p)) = (
            panel.expiries.get(i),
            panel.futures.get(i),
            panel.vix.get(i),
            panel.prev_expiry.get(i),
        ) else {
            continue;
        };
        ordering.record(date <= exp[0] && exp.windows(2).all(|w| w[0] < w[1]), date);
        positive.record(*spot > 0.0 && fut.iter().all(|&f| f > 0.0), date);

        let mut ok = p < exp[0] && p < date;
        if i > 0 {
            if let (Some(prev_exp), Some(&prev_p)) =
                (panel.expiries.get(i - 1), panel.prev_expiry.get(i - 1))
            {
                if prev_exp[0] == exp[0] {
                    ok &= prev_p == p;
                } else {
                    ok &= p >= prev_exp[0];
                }
            }
        }
        prev.record(ok, date);
    }

    ValidationReport {
        checks: vec![
            increasing.result,
            ordering.result,
            positive.result,
            prev.result,
            shape.result,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    const EXPIRIES: [&str; 8] = [
        "2020-12-16",
        "2021-01-20",
        "2021-02-17",
        "2021-03-17",
        "2021-04-21",
        "2021-05-19",
        "2021-06-16",
        "2021-07-21",
    ];

    fn write_fixture(dir: &Path, dates: &[&str], skip: Option<(&str, usize)>) {
        let mut fut = String::from("trade_date,expiry_date,settle\n");
        let mut vix = String::from("trade_date,vix\n");
        for (k, date) in dates.iter().enumerate() {
            let first = EXPIRIES.iter().position(|e| d(e) >= d(date)).unwrap();
            for (j, e) in EXPIRIES[first..first + 6].iter().enumerate() {
                if skip == Some((date, j)) {
                    continue;
                }
                fut.push_str(&format!(
                    "{date},{e},{}\n",
                    21.0 + j as f64 + 0.1 * k as f64
                ));
            }
            vix.push_str(&format!("{date},{}\n", 20.0 + 0.1 * k as f64));
        }
        fs::write(dir.join("futures.csv"), fut).unwrap();
        fs::write(dir.join("vix.csv"), vix).unwrap();
        fs::write(
            dir.join("calendar.csv"),
            format!("expiry_date\n{}\n", EXPIRIES[0]),
        )
        .unwrap();
    }

    fn parse_dir(dir: &Path) -> Result<ParsedPanel> {
        parse_panel(
            &dir.join("futures.csv"),
            &dir.join("vix.csv"),
            Some(&dir.join("calendar.csv")),
        )
    }

    #[test]
    fn aligns_common_dates() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            &["2020-12-28", "2020-12-29", "2020-12-30"],
            None,
        );
        let parsed = parse_dir(dir.path()).unwrap();
        assert_eq!(parsed.panel.len(), 3);
        assert!(parsed.dropped.is_empty());
        assert_eq!(parsed.panel.expiries[0][0], d("2021-01-20"));
        assert_eq!(parsed.panel.prev_expiry[0], d("2020-12-16"));
        assert_eq!(parsed.panel.futures[1][2], 23.1);
        assert!(validate_panel(&parsed.panel).is_clean());
    }

    #[test]
    fn missing_middle_contract_drops_the_date() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            &["2020-12-28", "2020-12-29", "2020-12-30"],
            Some(("2020-12-29", 2)),
        );
        let parsed = parse_dir(dir.path()).unwrap();
        assert_eq!(parsed.panel.dates, vec![d("2020-12-28"), d("2020-12-30")]);
        assert_eq!(
            parsed.dropped,
            vec![DroppedDate {
                date: d("2020-12-29"),
                reason: DropReason::MissingContract
            }]
        );
    }

    #[test]
    fn empty_settle_counts_as_missing() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &["2020-12-28", "2020-12-29"], None);
        let path = dir.path().join("futures.csv");
        let text = fs::read_to_string(&path).unwrap().replacen(
            "2020-12-29,2021-03-17,23.1",
            "2020-12-29,2021-03-17,",
            1,
        );
        fs::write(&path, text).unwrap();
        let parsed = parse_dir(dir.path()).unwrap();
        assert_eq!(parsed.panel.len(), 1);
        assert_eq!(parsed.dropped.len(), 1);
    }

    #[test]
    fn decreasing_expiries_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let fut = "trade_date,expiry_date,settle\n\
                   2020-12-28,2021-02-17,22\n\
                   2020-12-28,2021-01-20,21\n";
        fs::write(dir.path().join("futures.csv"), fut).unwrap();
        fs::write(
            dir.path().join("vix.csv"),
            "trade_date,vix\n2020-12-28,20\n",
        )
        .unwrap();
        let err = parse_dir(dir.path()).unwrap_err();
        assert!(matches!(err, Error::CalendarInconsistent { .. }), "{err}");
    }

    #[test]
    fn malformed_number_and_date() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &["2020-12-28"], None);
        fs::write(
            dir.path().join("vix.csv"),
            "trade_date,vix\n2020-12-28,abc\n",
        )
        .unwrap();
        let err = parse_dir(dir.path()).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 2, .. }), "{err}");

        fs::write(
            dir.path().join("vix.csv"),
            "trade_date,vix\n2020-13-28,20\n",
        )
        .unwrap();
        let err = parse_dir(dir.path()).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { .. }));
    }

    #[test]
    fn disjoint_dates_give_empty_intersection() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &["2020-12-28"], None);
        fs::write(
            dir.path().join("vix.csv"),
            "trade_date,vix\n2020-12-29,20\n",
        )
        .unwrap();
        let err = parse_dir(dir.path()).unwrap_err();
        assert!(matches!(err, Error::EmptyIntersection));
    }

    #[test]
    fn prior_expiry_from_calendar_file() {
        let dir = tempfile::tempdir().unwrap();
        // Only the calendar file can provide the expiry ahead of the front
        // contract.
        let mut fut = String::from("trade_date,expiry_date,settle\n");
        for (j, e) in EXPIRIES[1..7].iter().enumerate() {
            fut.push_str(&format!("2020-12-28,{e},{}\n", 21 + j));
        }
        fs::write(dir.path().join("futures.csv"), fut).unwrap();
        fs::write(
            dir.path().join("vix.csv"),
            "trade_date,vix\n2020-12-28,20\n",
        )
        .unwrap();
        let err = parse_panel(
            &dir.path().join("futures.csv"),
            &dir.path().join("vix.csv"),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyIntersection));

        fs::write(dir.path().join("calendar.csv"), "expiry_date\n2020-12-16\n").unwrap();
        let parsed = parse_panel(
            &dir.path().join("futures.csv"),
            &dir.path().join("vix.csv"),
            Some(&dir.path().join("calendar.csv")),
        )
        .unwrap();
        assert_eq!(parsed.panel.prev_expiry, vec![d("2020-12-16")]);
    }

    #[test]
    fn validation_flags_non_positive_price() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            &["2020-12-28", "2020-12-29", "2020-12-30"],
            None,
        );
        let mut panel = parse_dir(dir.path()).unwrap().panel;
        panel.futures[1][4] = 0.0;
        let report = validate_panel(&panel);
        assert!(!report.is_clean());
        assert_eq!(
            report.offenders().into_iter().collect::<Vec<_>>(),
            vec![d("2020-12-29")]
        );
    }

    #[test]
    fn holiday_gap_is_not_a_violation() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            &["2020-12-24", "2020-12-28", "2021-01-04"],
            None,
        );
        let panel = parse_dir(dir.path()).unwrap().panel;
        let report = validate_panel(&panel);
        assert!(report.is_clean(), "{report:?}");
    }
}
