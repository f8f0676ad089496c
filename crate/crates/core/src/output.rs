//! CSV and text renderings of a single run.

use std::fmt::Write as _;
use std::io::Write;

use crate::config::SimConfig;
use crate::engine::RunReport;
use crate::error::Result;

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.6}"))
}

/// One row per device class.
pub fn write_class_csv<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "class",
        "arrivals_count",
        "accessing_count",
        "outages_count",
        "delivered_count",
        "outage_fraction",
    ])?;
    for c in &report.stats.per_class {
        w.write_record([
            c.name.clone(),
            c.arrivals.to_string(),
            c.accessing.to_string(),
            c.outages.to_string(),
            c.delivered.to_string(),
            opt(c.outage()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-second event counts of the three stages over the measurement window.
pub fn write_histogram_csv<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let s = &report.stats;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["second_s", "rach_attempts_per_s", "agch_arrivals_per_s", "data_arrivals_per_s"])?;
    for i in 0..s.hist_rach.len() {
        w.write_record([
            i.to_string(),
            s.hist_rach[i].to_string(),
            s.hist_agch[i].to_string(),
            s.hist_data[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_summary(config: &SimConfig, report: &RunReport, warnings: &[String]) -> String {
    let s = &report.stats;
    let r = &report.rates;
    let b = &report.blocking;
    let pct = |x: Option<f64>| x.map_or_else(|| "n/a".into(), |v| format!("{:.3}%", v * 100.0));
    let sec = |x: Option<f64>| x.map_or_else(|| "n/a".into(), |v| format!("{v:.3} s"));
    let mut t = String::new();
    let _ = writeln!(
        t,
        "variant {}  seed {}  warmup {} s  measurement {} s  devices {}",
        report.variant, report.seed, report.warmup_s, report.measure_s, report.devices
    );
    if config.variant.uses_eusf() {
        let _ = writeln!(
            t,
            "eUSF validity {} multiframes, gap {}",
            config.eusf.valid_multiframes, config.eusf.gap_multiframes
        );
    }
    for w in warnings {
        let _ = writeln!(t, "warning: {w}");
    }
    let _ = writeln!(t);
    let _ = writeln!(t, "fresh arrivals       {:>10.3} /s", r.lambda);
    let _ = writeln!(t, "retransmissions      {:>10.3} /s", r.lambda_r);
    let _ = writeln!(t, "RACH attempts        {:>10.3} /s", r.lambda_rach);
    let _ = writeln!(t, "AGCH arrivals        {:>10.3} /s", r.lambda_agch);
    let _ = writeln!(t, "DATA arrivals        {:>10.3} /s", r.lambda_usf);
    let _ = writeln!(t, "P_RACH               {:>10}", opt(r.p_rach));
    let _ = writeln!(t, "P_AGCH               {:>10}", opt(r.p_agch));
    let _ = writeln!(t);
    let _ = writeln!(t, "AGCH blocking        {:>10}", pct(b.p_b_agch));
    let _ = writeln!(t, "DATA blocking        {:>10}", pct(b.p_b_data));
    let _ = writeln!(t, "outage               {:>10}", pct(b.outage));
    let _ = writeln!(
        t,
        "reports: {} arrived, {} delivered, {} outage, {} overrun, {} in flight",
        s.arrivals, s.delivered, s.outages, s.overruns, s.in_flight
    );
    let _ = writeln!(t, "delivered bytes      {}", s.delivered_bytes);
    let _ = writeln!(
        t,
        "latency p50 {}  p95 {}  p99 {}  max {}",
        sec(report.latency_p50_s),
        sec(report.latency_p95_s),
        sec(report.latency_p99_s),
        sec(report.latency_max_s)
    );
    let _ = writeln!(t, "peak connections     {}", report.peak_connections);
    if s.per_class.len() > 1 {
        let _ = writeln!(t);
        for c in &s.per_class {
            let _ = writeln!(t, "  {:<28} {:>8} reports  outage {}", c.name, c.arrivals, pct(c.outage()));
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run;
    use crate::traffic::Scenario;

    #[test]
    fn renders() {
        let cfg = SimConfig {
            warmup_s: 2.0,
            measure_s: 10.0,
            ..SimConfig::default()
        };
        let r = run(&cfg, &Scenario::poisson_population(5.0, 100, 22)).unwrap();
        let mut buf = Vec::new();
        write_histogram_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 11);
        let mut buf = Vec::new();
        write_class_csv(&r, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("class,arrivals_count"));
        assert!(run_summary(&cfg, &r, &[]).contains("outage"));
    }
}
