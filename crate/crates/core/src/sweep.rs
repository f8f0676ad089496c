//! Parameter sweeps: one run per (axis value, variant, seed), gathered into
//! long-format rows.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::config::SimConfig;
use crate::engine::{run, RunReport};
use crate::error::{Error, Result};
use crate::grant::Variant;
use crate::traffic::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Aggregate fresh rate of the asynchronous classes.
    ArrivalRate,
    /// Simulated devices in every alarm class.
    AlarmCount,
    Variant,
}

impl SweepAxis {
    /// Name of the axis column, unit included.
    pub fn column(self) -> &'static str {
        match self {
            SweepAxis::ArrivalRate => "arrival_rate_per_s",
            SweepAxis::AlarmCount => "alarm_devices_count",
            SweepAxis::Variant => "variant_axis",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::ArrivalRate => "arrival_rate",
            SweepAxis::AlarmCount => "alarm_count",
            SweepAxis::Variant => "variant",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arrival_rate" | "lambda" => Ok(SweepAxis::ArrivalRate),
            "alarm_count" => Ok(SweepAxis::AlarmCount),
            "variant" => Ok(SweepAxis::Variant),
            other => Err(Error::config(format!(
                "`{other}` is not sweepable (expected arrival_rate, alarm_count or variant)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum AxisValue {
    Number(f64),
    Variant(Variant),
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisValue::Number(x) => write!(f, "{x}"),
            AxisValue::Variant(v) => write!(f, "{v}"),
        }
    }
}

/// Parses axis values written as a comma-separated list; numeric axes also
/// accept `start:stop:step` (inclusive).
pub fn parse_axis_values(axis: SweepAxis, text: &str) -> Result<Vec<AxisValue>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if axis == SweepAxis::Variant {
            out.push(AxisValue::Variant(part.parse()?));
            continue;
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("`{s}` is not a number")))
        };
        let pieces: Vec<&str> = part.split(':').collect();
        match pieces.as_slice() {
            [x] => out.push(AxisValue::Number(num(x)?)),
            [a, b, s] => {
                let (a, b, s) = (num(a)?, num(b)?, num(s)?);
                if !(s > 0.0) {
                    return Err(Error::config("range step must be positive"));
                }
                let n = ((b - a) / s + 1e-9).floor() as i64;
                out.extend((0..=n).map(|i| AxisValue::Number(a + i as f64 * s)));
            }
            _ => return Err(Error::config(format!("bad axis value `{part}`"))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub axis_value: AxisValue,
    pub seed: u64,
    pub variant: Variant,
    pub report: RunReport,
    /// Outage of the synchronous (alarm) classes, if any are present.
    pub sync_outage: Option<f64>,
    /// Outage of the asynchronous classes.
    pub async_outage: Option<f64>,
}

fn class_outage(report: &RunReport, scenario: &Scenario, synchronous: bool) -> Option<f64> {
    let (mut out, mut acc) = (0, 0);
    for (c, s) in scenario.classes.iter().zip(&report.stats.per_class) {
        if c.distribution.is_synchronous() == synchronous {
            out += s.outages;
            acc += s.accessing;
        }
    }
    (acc > 0).then(|| out as f64 / acc as f64)
}

/// Scenario and config of one sweep point.
pub fn apply_point(
    config: &SimConfig,
    scenario: &Scenario,
    axis: SweepAxis,
    value: AxisValue,
    variant: Variant,
    seed: u64,
) -> Result<(SimConfig, Scenario)> {
    let mut cfg = config.clone();
    cfg.seed = seed;
    cfg.variant = variant;
    let mut sc = scenario.clone();
    match (axis, value) {
        (SweepAxis::ArrivalRate, AxisValue::Number(l)) => sc.scale_async_rate(l)?,
        (SweepAxis::AlarmCount, AxisValue::Number(n)) => {
            if !(n >= 0.0) {
                return Err(Error::config("alarm count must be non-negative"));
            }
            if !sc.classes.iter().any(|c| c.distribution.is_synchronous()) {
                return Err(Error::config("scenario has no alarm class to resize"));
            }
            sc.set_alarm_count(n.round() as u64);
        }
        (SweepAxis::Variant, AxisValue::Variant(v)) => cfg.variant = v,
        _ => return Err(Error::config(format!("value {value} does not fit axis {axis}"))),
    }
    Ok((cfg, sc))
}

/// Runs every point. With the variant axis, `variants` is ignored.
pub fn sweep(
    config: &SimConfig,
    scenario: &Scenario,
    axis: SweepAxis,
    values: &[AxisValue],
    variants: &[Variant],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    let mut points = Vec::new();
    for &value in values {
        let vs: Vec<Variant> = match (axis, value) {
            (SweepAxis::Variant, AxisValue::Variant(v)) => vec![v],
            _ => variants.to_vec(),
        };
        for &variant in &vs {
            for &seed in seeds {
                let (cfg, sc) = apply_point(config, scenario, axis, value, variant, seed)?;
                points.push((value, cfg, sc));
            }
        }
    }
    let one = |(_, cfg, sc): &(AxisValue, SimConfig, Scenario)| -> Result<(RunReport, Option<f64>, Option<f64>)> {
        let r = run(cfg, sc)?;
        let sync = class_outage(&r, sc, true);
        let asy = class_outage(&r, sc, false);
        Ok((r, sync, asy))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        points.par_iter().map(one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = points.iter().map(one).collect::<Result<_>>()?;

    Ok(points
        .into_iter()
        .zip(results)
        .map(|((axis_value, cfg, _), (report, sync_outage, async_outage))| SweepRow {
            axis,
            axis_value,
            seed: cfg.seed,
            variant: cfg.variant,
            report,
            sync_outage,
            async_outage,
        })
        .collect())
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.6}"))
}

pub fn csv_header(axis: SweepAxis) -> Vec<&'static str> {
    vec![
        axis.column(),
        "seed",
        "variant",
        "lambda_fresh_per_s",
        "lambda_rach_per_s",
        "lambda_agch_per_s",
        "lambda_usf_per_s",
        "p_b_agch_fraction",
        "p_b_data_fraction",
        "outage_fraction",
        "sync_outage_fraction",
        "async_outage_fraction",
        "delivered_count",
        "delivered_bytes",
        "latency_p50_s",
        "latency_p95_s",
        "latency_p99_s",
    ]
}

/// Writes rows as CSV; an empty slice still produces the header.
pub fn write_csv<W: Write>(axis: SweepAxis, rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(axis))?;
    for row in rows {
        let r = &row.report;
        w.write_record([
            row.axis_value.to_string(),
            row.seed.to_string(),
            row.variant.to_string(),
            format!("{:.6}", r.rates.lambda),
            format!("{:.6}", r.rates.lambda_rach),
            format!("{:.6}", r.rates.lambda_agch),
            format!("{:.6}", r.rates.lambda_usf),
            opt(r.blocking.p_b_agch),
            opt(r.blocking.p_b_data),
            opt(r.blocking.outage),
            opt(row.sync_outage),
            opt(row.async_outage),
            r.stats.delivered.to_string(),
            r.stats.delivered_bytes.to_string(),
            opt(r.latency_p50_s),
            opt(r.latency_p95_s),
            opt(r.latency_p99_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        assert_eq!("arrival_rate".parse::<SweepAxis>().unwrap(), SweepAxis::ArrivalRate);
        assert!("payload".parse::<SweepAxis>().unwrap_err().is_config_error());
        let v = parse_axis_values(SweepAxis::ArrivalRate, "10:100:10").unwrap();
        assert_eq!(v.len(), 10);
        assert_eq!(v[9], AxisValue::Number(100.0));
        let v = parse_axis_values(SweepAxis::Variant, "legacy, agch+eusf").unwrap();
        assert_eq!(v[1], AxisValue::Variant(Variant::AgchEusf));
        assert!(parse_axis_values(SweepAxis::AlarmCount, "x").is_err());
    }

    #[test]
    fn empty_values_give_header_only() {
        let rows = sweep(
            &SimConfig::default(),
            &Scenario::poisson_population(1.0, 10, 22),
            SweepAxis::ArrivalRate,
            &[],
            &Variant::ALL,
            &[1],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(SweepAxis::ArrivalRate, &rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("arrival_rate_per_s,seed,variant"));
    }

    #[test]
    fn one_row_per_point() {
        let cfg = SimConfig {
            warmup_s: 5.0,
            measure_s: 20.0,
            ..SimConfig::default()
        };
        let values = parse_axis_values(SweepAxis::ArrivalRate, "5,10").unwrap();
        let rows = sweep(&cfg, &Scenario::poisson_population(1.0, 100, 22), SweepAxis::ArrivalRate, &values, &Variant::ALL, &[1, 2]).unwrap();
        assert_eq!(rows.len(), 12);
        assert_eq!(rows[0].axis_value, AxisValue::Number(5.0));
        assert_eq!((rows[1].variant, rows[1].seed), (Variant::Legacy, 2));
        assert_eq!(rows[11].variant, Variant::AgchEusf);
    }

    #[test]
    fn alarm_axis_needs_alarm_class() {
        let err = apply_point(
            &SimConfig::default(),
            &Scenario::poisson_population(1.0, 10, 22),
            SweepAxis::AlarmCount,
            AxisValue::Number(100.0),
            Variant::Legacy,
            1,
        )
        .unwrap_err();
        assert!(err.is_config_error());
    }
}
