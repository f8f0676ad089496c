//! Pinned experiment recipes behind `sim reproduce`: the rate distributions
//! at λ = 40/s, stage blocking against the isolated-stage method, outage
//! against λ, and outage against the number of alarm devices.
//!
//! Every recipe returns its CSV files and a text summary whose lines mark
//! each headline check as PASS or FAIL.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analytics::{arrival_histogram, independent_stage_run, truncated_poisson, tv_distance, Stage};
use crate::config::SimConfig;
use crate::engine::run;
use crate::error::{Error, Result};
use crate::grant::Variant;
use crate::sweep::{parse_axis_values, sweep, write_csv, AxisValue, SweepAxis, SweepRow};
use crate::traffic::{table1_async, DeviceClass, Scenario};

/// Async payload in the blocking and outage experiments.
pub const ASYNC_PAYLOAD: u32 = 152;
/// Smart-meter report size.
pub const METER_PAYLOAD: u32 = 100;
/// Background async rate of the alarm experiment.
pub const ALARM_BACKGROUND_RATE: f64 = 42.0;
pub const ALARM_PERIOD_S: f64 = 120.0;
/// Blocking and outage target.
pub const TARGET: f64 = 0.02;
/// Per-second cap of the truncated model at the λ = 40/s operating point.
pub const AGCH_CAP: u32 = 29;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Fig4,
    Fig6a,
    Fig6b,
    Fig6c,
}

impl Figure {
    pub const ALL: [Figure; 4] = [Figure::Fig4, Figure::Fig6a, Figure::Fig6b, Figure::Fig6c];
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Figure::Fig4 => "fig4",
            Figure::Fig6a => "fig6a",
            Figure::Fig6b => "fig6b",
            Figure::Fig6c => "fig6c",
        })
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.to_string() == s)
            .ok_or_else(|| Error::config(format!("unknown figure `{s}` (expected fig4, fig6a, fig6b or fig6c)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecipeOptions {
    pub seeds: Vec<u64>,
    pub warmup_s: f64,
    pub measure_s: f64,
    /// Measurement window of the alarm experiment (activation plus drain).
    pub alarm_measure_s: f64,
    /// Devices sharing the Poisson load.
    pub population: u64,
    /// λ grid of the blocking and outage sweeps.
    pub rates: Vec<f64>,
    /// Alarm device counts of the alarm experiment.
    pub alarm_counts: Vec<u64>,
}

impl Default for RecipeOptions {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            warmup_s: 300.0,
            measure_s: 3600.0,
            alarm_measure_s: 600.0,
            population: 20_000,
            rates: (1..=20).map(|i| i as f64 * 5.0).collect(),
            alarm_counts: vec![500, 1000, 1500, 2000, 2300, 2500, 3000],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: String,
    pub target: String,
    pub pass: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: measured {} (target {})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.target
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecipeOutput {
    pub figure: Figure,
    /// (file name, contents).
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

impl RecipeOutput {
    pub fn summary(&self, options: &RecipeOptions) -> String {
        let mut s = format!(
            "{}\nseeds {:?}, warmup {} s, measurement {} s\n\n",
            self.figure, options.seeds, options.warmup_s, options.measure_s
        );
        for c in &self.checks {
            s.push_str(&c.to_string());
            s.push('\n');
        }
        let passed = self.checks.iter().filter(|c| c.pass).count();
        s.push_str(&format!("\n{passed}/{} checks passed\n", self.checks.len()));
        s
    }

    /// Writes every CSV plus `<figure>_summary.txt` into `dir`.
    pub fn write(&self, dir: &Path, options: &RecipeOptions) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, body) in &self.files {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            written.push(p);
        }
        let p = dir.join(format!("{}_summary.txt", self.figure));
        std::fs::write(&p, self.summary(options))?;
        written.push(p);
        Ok(written)
    }
}

fn base_config(options: &RecipeOptions, variant: Variant) -> SimConfig {
    SimConfig {
        warmup_s: options.warmup_s,
        measure_s: options.measure_s,
        variant,
        ..SimConfig::default()
    }
}

/// Background async population plus one alarm class of `alarms` devices.
pub fn alarm_scenario(alarms: u64) -> Result<Scenario> {
    let mut s = table1_async();
    s.set_async_payload(ASYNC_PAYLOAD);
    s.scale_async_rate(ALARM_BACKGROUND_RATE)?;
    s.classes
        .push(DeviceClass::alarm("smart_meter_alarm", 0, ALARM_PERIOD_S, METER_PAYLOAD));
    s.set_alarm_count(alarms);
    Ok(s)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

/// Seed-mean of `metric` per (axis value, variant), in axis order.
pub fn mean_curve<F>(rows: &[SweepRow], variant: Variant, metric: F) -> Vec<(f64, Option<f64>)>
where
    F: Fn(&SweepRow) -> Option<f64>,
{
    let mut acc: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows.iter().filter(|r| r.variant == variant) {
        let AxisValue::Number(x) = r.axis_value else { continue };
        let key = x.to_bits();
        if !acc.contains_key(&key) {
            order.push(x);
        }
        let e = acc.entry(key).or_insert((0.0, 0.0, 0));
        if let Some(v) = metric(r) {
            e.0 += v;
            e.2 += 1;
        }
        e.1 = x;
    }
    order
        .into_iter()
        .map(|x| {
            let (sum, _, n) = acc[&x.to_bits()];
            (x, (n > 0).then(|| sum / n as f64))
        })
        .collect()
}

/// First axis value at which the curve reaches `threshold`, interpolated
/// linearly between grid points. `None` if it never does.
pub fn first_crossing(curve: &[(f64, Option<f64>)], threshold: f64) -> Option<f64> {
    let mut prev: Option<(f64, f64)> = None;
    for &(x, y) in curve {
        let Some(y) = y else { continue };
        if y >= threshold {
            return Some(match prev {
                Some((px, py)) if y > py => px + (x - px) * (threshold - py) / (y - py),
                _ => x,
            });
        }
        prev = Some((x, y));
    }
    None
}

pub fn reproduce(figure: Figure, options: &RecipeOptions) -> Result<RecipeOutput> {
    if options.seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    match figure {
        Figure::Fig4 => fig4(options),
        Figure::Fig6a => fig6a(options),
        Figure::Fig6b => fig6b(options),
        Figure::Fig6c => fig6c(options),
    }
}

fn fig4(options: &RecipeOptions) -> Result<RecipeOutput> {
    let scenario = Scenario::poisson_population(40.0, options.population, METER_PAYLOAD);
    let mut rates_csv = csv::Writer::from_writer(Vec::new());
    rates_csv.write_record([
        "seed",
        "lambda_fresh_per_s",
        "lambda_rach_per_s",
        "lambda_agch_per_s",
        "lambda_usf_per_s",
        "p_rach_fraction",
        "p_agch_fraction",
        "data_ceiling_per_s",
        "tv_distance_fraction",
    ])?;
    let (mut rach, mut agch, mut data) = (Vec::new(), Vec::new(), Vec::new());
    let (mut l_rach, mut l_agch, mut ceiling, mut tv_sum) = (0.0, 0.0, 0u32, 0.0);
    let n = options.seeds.len() as f64;
    let mut truncation = Default::default();
    for &seed in &options.seeds {
        let cfg = SimConfig {
            seed,
            ..base_config(options, Variant::Legacy)
        };
        truncation = cfg.truncation;
        let r = run(&cfg, &scenario)?;
        let emp = arrival_histogram(&r.stats.hist_data);
        let model = truncated_poisson(r.rates.lambda_agch, AGCH_CAP, cfg.truncation)?;
        let tv = tv_distance(&emp, &model);
        let ceil = r.stats.hist_data.iter().copied().max().unwrap_or(0);
        rates_csv.write_record([
            seed.to_string(),
            format!("{:.6}", r.rates.lambda),
            format!("{:.6}", r.rates.lambda_rach),
            format!("{:.6}", r.rates.lambda_agch),
            format!("{:.6}", r.rates.lambda_usf),
            fmt_opt(r.rates.p_rach),
            fmt_opt(r.rates.p_agch),
            ceil.to_string(),
            format!("{tv:.6}"),
        ])?;
        l_rach += r.rates.lambda_rach / n;
        l_agch += r.rates.lambda_agch / n;
        ceiling = ceiling.max(ceil);
        tv_sum += tv / n;
        rach.extend(r.stats.hist_rach);
        agch.extend(r.stats.hist_agch);
        data.extend(r.stats.hist_data);
    }
    let (hr, ha, hd) = (arrival_histogram(&rach), arrival_histogram(&agch), arrival_histogram(&data));
    let model = truncated_poisson(l_agch, AGCH_CAP, truncation)?;
    let width = hr.len().max(ha.len()).max(hd.len()).max(model.len());
    let mut hist_csv = csv::Writer::from_writer(Vec::new());
    hist_csv.write_record([
        "count_per_s",
        "rach_fraction",
        "agch_fraction",
        "data_fraction",
        "truncated_poisson_fraction",
    ])?;
    let at = |h: &[f64], i: usize| format!("{:.6}", h.get(i).copied().unwrap_or(0.0));
    for i in 0..width {
        hist_csv.write_record([i.to_string(), at(&hr, i), at(&ha, i), at(&hd, i), at(&model, i)])?;
    }
    let checks = vec![
        Check {
            name: "lambda_rach at 40/s".into(),
            measured: format!("{l_rach:.2}/s"),
            target: "[96, 144]/s".into(),
            pass: within(l_rach, 96.0, 144.0),
        },
        Check {
            name: "lambda_agch at 40/s".into(),
            measured: format!("{l_agch:.2}/s"),
            target: "[52, 70]/s".into(),
            pass: within(l_agch, 52.0, 70.0),
        },
        Check {
            name: "DATA-stage per-second ceiling".into(),
            measured: format!("{ceiling}/s"),
            target: "[27, 32]/s".into(),
            pass: within(ceiling as f64, 27.0, 32.0),
        },
        Check {
            name: "truncated Poisson fit (TV distance)".into(),
            measured: format!("{tv_sum:.4}"),
            target: "<= 0.15".into(),
            pass: tv_sum <= 0.15,
        },
    ];
    Ok(RecipeOutput {
        figure: Figure::Fig4,
        files: vec![
            ("fig4_rates.csv".into(), into_string(rates_csv)?),
            ("fig4_histograms.csv".into(), into_string(hist_csv)?),
        ],
        checks,
    })
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

fn rate_sweep(options: &RecipeOptions) -> Result<Vec<SweepRow>> {
    let values: Vec<AxisValue> = options.rates.iter().map(|&l| AxisValue::Number(l)).collect();
    let scenario = Scenario::poisson_population(1.0, options.population, ASYNC_PAYLOAD);
    sweep(
        &base_config(options, Variant::Legacy),
        &scenario,
        SweepAxis::ArrivalRate,
        &values,
        &Variant::ALL,
        &options.seeds,
    )
}

fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(axis, rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Internal(e.to_string()))
}

fn value_at(curve: &[(f64, Option<f64>)], x: f64) -> Option<f64> {
    curve.iter().find(|(cx, _)| (*cx - x).abs() < 1e-9).and_then(|c| c.1)
}

fn fig6a(options: &RecipeOptions) -> Result<RecipeOutput> {
    let rows = rate_sweep(options)?;
    let mut iso = csv::Writer::from_writer(Vec::new());
    iso.write_record(["arrival_rate_per_s", "seed", "variant", "p_b_agch_fraction", "p_b_data_fraction"])?;
    let mut iso_at_40 = (0.0, 0.0);
    let n = options.seeds.len() as f64;
    for &l in &options.rates {
        for v in Variant::ALL {
            for &seed in &options.seeds {
                let cfg = SimConfig {
                    seed,
                    ..base_config(options, v)
                };
                let a = independent_stage_run(l, Stage::Agch, &cfg, ASYNC_PAYLOAD)?.p_b_agch.unwrap_or(0.0);
                let d = independent_stage_run(l, Stage::Data, &cfg, ASYNC_PAYLOAD)?.p_b_data.unwrap_or(0.0);
                iso.write_record([l.to_string(), seed.to_string(), v.to_string(), format!("{a:.6}"), format!("{d:.6}")])?;
                if v == Variant::Legacy && (l - 40.0).abs() < 1e-9 {
                    iso_at_40.0 += a / n;
                    iso_at_40.1 += d / n;
                }
            }
        }
    }
    let agch = mean_curve(&rows, Variant::Legacy, |r| r.report.blocking.p_b_agch);
    let data = mean_curve(&rows, Variant::Legacy, |r| r.report.blocking.p_b_data);
    let agch_x = first_crossing(&agch, TARGET);
    let data_x = first_crossing(&data, TARGET);
    let ordering = match (agch_x, data_x) {
        (Some(a), Some(d)) => a < d,
        (Some(_), None) => true,
        _ => false,
    };
    let coupled_a = value_at(&agch, 40.0);
    let coupled_d = value_at(&data, 40.0);
    let has_40 = options.rates.iter().any(|&l| (l - 40.0).abs() < 1e-9);
    let gap = has_40
        && coupled_a.is_some_and(|c| iso_at_40.0 > c)
        && coupled_d.is_some_and(|c| iso_at_40.1 > c);
    let checks = vec![
        Check {
            name: "legacy: AGCH blocking reaches 2% before DATA blocking".into(),
            measured: {
                let at = |x: Option<f64>| x.map_or_else(|| "beyond the sweep".into(), |x| format!("{x:.2}/s"));
                format!("AGCH at {}, DATA at {}", at(agch_x), at(data_x))
            },
            target: "AGCH crossing strictly lower".into(),
            pass: ordering,
        },
        Check {
            name: "isolated-stage blocking exceeds coupled blocking at 40/s".into(),
            measured: format!(
                "AGCH isolated {:.4} vs coupled {}, DATA isolated {:.4} vs coupled {}",
                iso_at_40.0,
                fmt_opt(coupled_a),
                iso_at_40.1,
                fmt_opt(coupled_d)
            ),
            target: "isolated > coupled for both stages".into(),
            pass: gap,
        },
    ];
    Ok(RecipeOutput {
        figure: Figure::Fig6a,
        files: vec![
            ("fig6a_coupled.csv".into(), sweep_csv(SweepAxis::ArrivalRate, &rows)?),
            ("fig6a_isolated.csv".into(), into_string(iso)?),
        ],
        checks,
    })
}

/// Largest λ whose outage stays under the target: the first 2% crossing,
/// or the top of the grid when the curve never crosses.
pub fn max_rate_below_target(curve: &[(f64, Option<f64>)]) -> Option<f64> {
    first_crossing(curve, TARGET).or_else(|| curve.last().map(|c| c.0))
}

fn fig6b(options: &RecipeOptions) -> Result<RecipeOutput> {
    let rows = rate_sweep(options)?;
    let legacy = max_rate_below_target(&mean_curve(&rows, Variant::Legacy, |r| r.report.blocking.outage));
    let eusf = max_rate_below_target(&mean_curve(&rows, Variant::AgchEusf, |r| r.report.blocking.outage));
    let ratio = match (legacy, eusf) {
        (Some(l), Some(e)) if l > 0.0 => Some(e / l),
        _ => None,
    };
    let checks = vec![
        Check {
            name: "agch+eusf maximum rate with outage < 2%".into(),
            measured: format!("{}/s", fmt_opt(eusf)),
            target: ">= 60/s".into(),
            pass: eusf.is_some_and(|x| x >= 60.0),
        },
        Check {
            name: "legacy maximum rate with outage < 2%".into(),
            measured: format!("{}/s", fmt_opt(legacy)),
            target: "<= 40/s".into(),
            pass: legacy.is_some_and(|x| x <= 40.0),
        },
        Check {
            name: "capacity ratio agch+eusf / legacy".into(),
            measured: fmt_opt(ratio),
            target: ">= 1.75".into(),
            pass: ratio.is_some_and(|x| x >= 1.75),
        },
    ];
    Ok(RecipeOutput {
        figure: Figure::Fig6b,
        files: vec![("fig6b_outage.csv".into(), sweep_csv(SweepAxis::ArrivalRate, &rows)?)],
        checks,
    })
}

fn fig6c(options: &RecipeOptions) -> Result<RecipeOutput> {
    let values = parse_axis_values(
        SweepAxis::AlarmCount,
        &options.alarm_counts.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
    )?;
    let cfg = SimConfig {
        measure_s: options.alarm_measure_s,
        separate_rach: true,
        ..base_config(options, Variant::Legacy)
    };
    let rows = sweep(&cfg, &alarm_scenario(0)?, SweepAxis::AlarmCount, &values, &Variant::ALL, &options.seeds)?;
    let at = |v: Variant, n: f64| value_at(&mean_curve(&rows, v, |r| r.sync_outage), n);
    let e1500 = at(Variant::AgchEusf, 1500.0);
    let e2300 = at(Variant::AgchEusf, 2300.0);
    let l1500 = at(Variant::Legacy, 1500.0);
    let a1500 = at(Variant::Agch, 1500.0);
    let checks = vec![
        Check {
            name: "agch+eusf alarm outage at N = 1500".into(),
            measured: fmt_opt(e1500),
            target: "<= 0.005".into(),
            pass: e1500.is_some_and(|x| x <= 0.005),
        },
        Check {
            name: "agch+eusf alarm outage at N = 2300".into(),
            measured: fmt_opt(e2300),
            target: "<= 0.10".into(),
            pass: e2300.is_some_and(|x| x <= 0.10),
        },
        Check {
            name: "legacy and agch miss 0.1% alarm outage at N = 1500".into(),
            measured: format!("legacy {}, agch {}", fmt_opt(l1500), fmt_opt(a1500)),
            target: "both > 0.001".into(),
            pass: l1500.is_some_and(|x| x > 0.001) && a1500.is_some_and(|x| x > 0.001),
        },
    ];
    Ok(RecipeOutput {
        figure: Figure::Fig6c,
        files: vec![("fig6c_outage.csv".into(), sweep_csv(SweepAxis::AlarmCount, &rows)?)],
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_names() {
        assert_eq!("fig6b".parse::<Figure>().unwrap(), Figure::Fig6b);
        assert!("fig5".parse::<Figure>().unwrap_err().is_config_error());
    }

    #[test]
    fn crossing_interpolates() {
        let c = vec![(10.0, Some(0.0)), (20.0, Some(0.01)), (30.0, Some(0.03))];
        assert!((first_crossing(&c, 0.02).unwrap() - 25.0).abs() < 1e-9);
        assert_eq!(first_crossing(&c, 0.5), None);
        assert_eq!(max_rate_below_target(&c[..2]), Some(20.0));
        assert_eq!(first_crossing(&[(5.0, Some(0.1))], 0.02), Some(5.0));
    }

    #[test]
    fn alarm_scenario_rates() {
        let s = alarm_scenario(1500).unwrap();
        assert!((crate::traffic::aggregate_async_rate(&s) - 42.0).abs() < 1e-9);
        let alarm = s.classes.last().unwrap();
        assert_eq!(s.simulated_count(alarm), 1500);
        assert_eq!(alarm.payload, 100);
        assert!(s.classes[..s.classes.len() - 1].iter().all(|c| c.payload == 152));
    }
}
