//! Stage counters, blocking and outage measures, the truncated-Poisson
//! model of the rate leaving a capacity-limited stage, and the isolated
//! per-stage method that feeds fresh Poisson traffic straight into one
//! stage.

use serde::Serialize;

use crate::calendar::{Demand, OccupancyCalendar, UsfAllocation, Validity};
use crate::config::{SimConfig, TruncationVariant};
use crate::data_plane::{blocks_required, DataPlane};
use crate::error::{Error, Result};
use crate::geometry::is_agch_block_boundary;
use crate::grant::{emit_agch_block, GrantQueue, GrantRequest, TrafficMode};
use crate::rng::{streams, RngStream};
use crate::traffic::{next_arrival, DeviceClass};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClassStats {
    pub name: String,
    pub arrivals: u64,
    pub accessing: u64,
    pub outages: u64,
    pub delivered: u64,
}

impl ClassStats {
    pub fn outage(&self) -> Option<f64> {
        ratio(self.outages, self.accessing)
    }
}

/// Counters over the measurement window.
///
/// Stage outcomes (grant, deadline block, data block, residual) belong to
/// the window of the RACH success that created the request; report fates
/// belong to the window of the report's arrival; attempts and the
/// per-second histograms use event time.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageStats {
    pub window_s: f64,
    pub arrivals: u64,
    pub accessing: u64,
    pub rach_attempts: u64,
    pub rach_retransmissions: u64,
    pub rach_successes: u64,
    pub rach_collision_slots: u64,
    pub agch_messages: u64,
    pub agch_granted: u64,
    pub agch_deadline_blocked: u64,
    pub data_blocked: u64,
    pub queue_residual: u64,
    pub outages: u64,
    pub delivered: u64,
    pub delivered_bytes: u64,
    pub overruns: u64,
    pub in_flight: u64,
    /// Reports delivered over persistent allocations without RACH.
    pub persistent_deliveries: u64,
    /// RACH attempts per second of the window.
    pub hist_rach: Vec<u32>,
    /// RACH successes (AGCH-stage arrivals) per second.
    pub hist_agch: Vec<u32>,
    /// Grants (DATA-stage arrivals) per second.
    pub hist_data: Vec<u32>,
    #[serde(skip)]
    pub latencies_frames: Vec<u64>,
    pub per_class: Vec<ClassStats>,
}

impl StageStats {
    pub fn new(window_s: f64, seconds: usize, classes: &[String]) -> Self {
        Self {
            window_s,
            hist_rach: vec![0; seconds],
            hist_agch: vec![0; seconds],
            hist_data: vec![0; seconds],
            per_class: classes
                .iter()
                .map(|n| ClassStats {
                    name: n.clone(),
                    ..ClassStats::default()
                })
                .collect(),
            ..Self::default()
        }
    }

    /// `rach_successes = granted + deadline_blocked + data_blocked + residual`.
    pub fn agch_conserved(&self) -> bool {
        self.rach_successes
            == self.agch_granted + self.agch_deadline_blocked + self.data_blocked + self.queue_residual
    }

    /// `arrivals = delivered + outages + overruns + in_flight`.
    pub fn reports_conserved(&self) -> bool {
        self.arrivals == self.delivered + self.outages + self.overruns + self.in_flight
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageRates {
    /// Fresh arrivals per second.
    pub lambda: f64,
    /// Retransmissions per second.
    pub lambda_r: f64,
    pub lambda_rach: f64,
    pub lambda_agch: f64,
    pub lambda_usf: f64,
    pub p_rach: Option<f64>,
    pub p_agch: Option<f64>,
}

pub fn stage_rates(stats: &StageStats) -> Result<StageRates> {
    if !(stats.window_s > 0.0) {
        return Err(Error::domain("measurement window must be positive"));
    }
    let per_s = |n: u64| n as f64 / stats.window_s;
    Ok(StageRates {
        lambda: per_s(stats.rach_attempts - stats.rach_retransmissions),
        lambda_r: per_s(stats.rach_retransmissions),
        lambda_rach: per_s(stats.rach_attempts),
        lambda_agch: per_s(stats.rach_successes),
        lambda_usf: per_s(stats.agch_granted),
        p_rach: ratio(stats.rach_successes, stats.rach_attempts),
        p_agch: ratio(stats.agch_granted, stats.rach_successes),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BlockingReport {
    pub p_b_agch: Option<f64>,
    pub p_b_data: Option<f64>,
    pub outage: Option<f64>,
}

impl BlockingReport {
    pub fn from_stats(stats: &StageStats) -> Self {
        Self {
            p_b_agch: ratio(stats.agch_deadline_blocked, stats.rach_successes),
            p_b_data: ratio(
                stats.data_blocked,
                stats.rach_successes.saturating_sub(stats.agch_deadline_blocked),
            ),
            outage: ratio(stats.outages, stats.accessing),
        }
    }
}

/// Truncated Poisson law on `0..=cap`.
pub fn truncated_poisson_pmf(lambda: f64, cap: u32, k: u32, variant: TruncationVariant) -> Result<f64> {
    if k > cap {
        return Ok(0.0);
    }
    Ok(truncated_poisson(lambda, cap, variant)?[k as usize])
}

/// Whole truncated pmf, computed in log space.
pub fn truncated_poisson(lambda: f64, cap: u32, variant: TruncationVariant) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!("rate must be non-negative, got {lambda}")));
    }
    let n = cap as usize + 1;
    if lambda == 0.0 {
        let mut p = vec![0.0; n];
        p[0] = 1.0;
        return Ok(p);
    }
    let ln_l = lambda.ln();
    let mut ln_p = -lambda;
    let mut pois = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            ln_p += ln_l - (k as f64).ln();
        }
        pois.push(ln_p.exp());
    }
    match variant {
        TruncationVariant::MassAtCap => {
            let below: f64 = pois[..cap as usize].iter().sum();
            pois[cap as usize] = (1.0 - below).max(0.0);
        }
        TruncationVariant::Renormalized => {
            let total: f64 = pois.iter().sum();
            if total > 0.0 {
                pois.iter_mut().for_each(|p| *p /= total);
            } else {
                // Underflow far below the mode: all mass sits at the cap.
                pois.iter_mut().for_each(|p| *p = 0.0);
                pois[cap as usize] = 1.0;
            }
        }
    }
    Ok(pois)
}

/// Distribution of per-second counts: entry `c` is the fraction of seconds
/// with exactly `c` events. Empty input gives an empty distribution.
pub fn arrival_histogram(per_second: &[u32]) -> Vec<f64> {
    let Some(&max) = per_second.iter().max() else {
        return Vec::new();
    };
    let mut h = vec![0.0; max as usize + 1];
    for &c in per_second {
        h[c as usize] += 1.0;
    }
    let n = per_second.len() as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Index of dispersion (variance / mean) of per-second counts.
pub fn dispersion(per_second: &[u32]) -> Option<f64> {
    if per_second.len() < 2 {
        return None;
    }
    let n = per_second.len() as f64;
    let mean = per_second.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = per_second.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean > 0.0).then(|| var / mean)
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(sample: &[u64], q: f64) -> Option<u64> {
    if sample.is_empty() {
        return None;
    }
    let mut s = sample.to_vec();
    s.sort_unstable();
    let rank = ((q / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    Some(s[rank.min(s.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Agch,
    Data,
}

/// Blocking of one stage fed directly with Poisson(`lambda`) requests of
/// `payload` bytes, without RACH contention or retransmissions.
pub fn independent_stage_run(lambda: f64, stage: Stage, config: &SimConfig, payload: u32) -> Result<BlockingReport> {
    if !(lambda > 0.0) {
        return Err(Error::domain("offered rate must be positive"));
    }
    config.validate()?;
    let geometry = config.geometry();
    let plan = config.channel_plan();
    let warm = geometry.seconds_to_frames(config.warmup_s);
    let end = warm + geometry.seconds_to_frames(config.measure_s);
    let source = DeviceClass::poisson("offered", 1, lambda, payload);
    let mut rng = RngStream::new(config.seed, streams::ARRIVALS_BASE);
    let mut next = next_arrival(&source, 0, &geometry, &mut rng)?;
    let mut offered = 0u64;
    let mut blocked = 0u64;
    let mut id = 0u32;

    match stage {
        Stage::Agch => {
            let mut queue = GrantQueue::new();
            let placeholder = UsfAllocation {
                id: 0,
                pdch: plan.data_pdchs.first().copied().unwrap_or(1),
                usf: 1,
                start_multiframe: 0,
                validity: Validity::Legacy,
            };
            for frame in 0..end {
                while next == frame {
                    let mut req = GrantRequest::new(id, frame, config.access.response_window, TrafficMode::OneShot, payload);
                    req.measured = frame >= warm;
                    offered += req.measured as u64;
                    queue.push(req);
                    id = id.wrapping_add(1);
                    next = next_arrival(&source, frame, &geometry, &mut rng)?;
                }
                if is_agch_block_boundary(frame, &plan, &geometry).is_some() {
                    let out = emit_agch_block(&mut queue, frame, config.variant.grants_per_message(), false, |_| {
                        Ok(Some(placeholder.clone()))
                    })?;
                    blocked += out.deadline_blocked.iter().filter(|r| r.measured).count() as u64;
                }
            }
            Ok(BlockingReport {
                p_b_agch: ratio(blocked, offered),
                ..BlockingReport::default()
            })
        }
        Stage::Data => {
            let mut calendar = OccupancyCalendar::new(&plan.data_pdchs, config.eusf, config.coding.block_payload);
            let mut plane = DataPlane::new(config.coding.clone());
            let blocks = blocks_required(payload, &config.coding)?;
            for frame in 0..end {
                while next == frame {
                    let measured = frame >= warm;
                    offered += measured as u64;
                    let earliest = geometry.first_usable_block(frame);
                    let alloc = if config.variant.uses_eusf() {
                        calendar.allocate_eusf(Demand::OneShot { blocks }, earliest)?
                    } else {
                        calendar.allocate_legacy()
                    };
                    match alloc {
                        Some(a) => {
                            let report = crate::access::Report {
                                arrival_frame: frame,
                                payload,
                                class: 0,
                                measured,
                                accessed: false,
                            };
                            plane.open(id, a, Some(report), frame, earliest)?;
                        }
                        None => blocked += measured as u64,
                    }
                    id = id.wrapping_add(1);
                    next = next_arrival(&source, frame, &geometry, &mut rng)?;
                }
                if let Some(u) = geometry.block_ending_at(frame) {
                    for done in plane.end_of_block(u, frame)? {
                        if done.released {
                            calendar.release(done.allocation)?;
                        }
                    }
                }
            }
            Ok(BlockingReport {
                p_b_data: ratio(blocked, offered),
                ..BlockingReport::default()
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grant::Variant;

    #[test]
    fn pmf_sums_to_one() {
        for v in [TruncationVariant::MassAtCap, TruncationVariant::Renormalized] {
            for (l, cap) in [(61.0, 30), (3.0, 29), (29.17, 29), (0.5, 0), (500.0, 10)] {
                let p = truncated_poisson(l, cap, v).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{v:?} {l} {cap}");
            }
        }
    }

    #[test]
    fn pmf_edge_cases() {
        let m = TruncationVariant::MassAtCap;
        assert_eq!(truncated_poisson_pmf(4.0, 0, 0, m).unwrap(), 1.0);
        assert_eq!(truncated_poisson_pmf(4.0, 0, 0, TruncationVariant::Renormalized).unwrap(), 1.0);
        assert_eq!(truncated_poisson_pmf(4.0, 5, 6, m).unwrap(), 0.0);
        assert!((truncated_poisson_pmf(1e-9, 10, 0, m).unwrap() - 1.0).abs() < 1e-8);
        assert!(truncated_poisson_pmf(61.0, 30, 30, m).unwrap() > 0.999);
        assert!(truncated_poisson(-1.0, 3, m).is_err());
    }

    #[test]
    fn histogram_and_tv() {
        assert!(arrival_histogram(&[]).is_empty());
        let h = arrival_histogram(&[1, 1, 2, 0]);
        assert_eq!(h, vec![0.25, 0.5, 0.25]);
        assert_eq!(tv_distance(&h, &h), 0.0);
        assert_eq!(tv_distance(&[1.0], &[0.0, 1.0]), 1.0);
    }

    #[test]
    fn percentiles() {
        let s: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&s, 50.0), Some(50));
        assert_eq!(percentile(&s, 99.0), Some(99));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn rates_single_device() {
        let mut s = StageStats::new(10.0, 10, &[]);
        s.rach_attempts = 5;
        s.rach_successes = 5;
        s.agch_granted = 5;
        let r = stage_rates(&s).unwrap();
        assert_eq!(r.p_rach, Some(1.0));
        assert_eq!(r.lambda_rach, r.lambda);
        assert!(stage_rates(&StageStats::default()).is_err());
        assert_eq!(stage_rates(&StageStats::new(1.0, 1, &[])).unwrap().p_rach, None);
    }

    fn short(variant: Variant) -> SimConfig {
        SimConfig {
            warmup_s: 20.0,
            measure_s: 600.0,
            variant,
            ..SimConfig::default()
        }
    }

    #[test]
    fn isolated_agch_underload_and_saturation() {
        let low = independent_stage_run(10.0, Stage::Agch, &short(Variant::Legacy), 100).unwrap();
        assert!(low.p_b_agch.unwrap() < 0.01);
        let high = independent_stage_run(60.0, Stage::Agch, &short(Variant::Legacy), 100).unwrap();
        let bound = 1.0 - (7.0 / 0.24) / 60.0;
        assert!((high.p_b_agch.unwrap() - bound).abs() < 0.03, "{high:?} vs {bound}");
    }

    #[test]
    fn isolated_data_stage_blocks_under_load() {
        let r = independent_stage_run(40.0, Stage::Data, &short(Variant::Legacy), 152).unwrap();
        assert!(r.p_b_data.unwrap() > 0.0);
        let light = independent_stage_run(1.0, Stage::Data, &short(Variant::Legacy), 152).unwrap();
        assert!(light.p_b_data.unwrap() < 0.01);
    }
}
