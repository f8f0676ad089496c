//! Frame-tick simulation of the coupled RACH, AGCH and DATA stages.
//!
//! Each tick handles, in order: report arrivals, RACH slots, the AGCH block
//! ending in this frame, the uplink block ending in this frame, and S-window
//! expiries. Devices are always visited in ascending id order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::access::{resolve_rach_slot, select_rach_channel, Device, DeviceState, Expiry, Report, ReportReady, SlotOutcome};
use crate::analytics::{percentile, stage_rates, BlockingReport, StageRates, StageStats};
use crate::calendar::{Demand, OccupancyCalendar};
use crate::config::SimConfig;
use crate::data_plane::{blocks_required, DataPlane};
use crate::error::{Error, Result};
use crate::geometry::{is_agch_block_boundary, ChannelPlan, Geometry};
use crate::grant::{drain_residual, emit_agch_block, GrantQueue, GrantRequest, TrafficMode, Variant};
use crate::rng::{streams, RngStream};
use crate::traffic::{alarm_activation_times, first_arrival, next_arrival, DeviceClass, Distribution, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub variant: Variant,
    pub warmup_s: f64,
    pub measure_s: f64,
    pub devices: u64,
    pub stats: StageStats,
    pub rates: StageRates,
    pub blocking: BlockingReport,
    pub latency_p50_s: Option<f64>,
    pub latency_p95_s: Option<f64>,
    pub latency_p99_s: Option<f64>,
    pub latency_max_s: Option<f64>,
    pub peak_connections: usize,
}

/// Ring of per-frame device lists for events at most `len - 1` frames ahead.
#[derive(Debug, Clone)]
struct Wheel {
    slots: Vec<Vec<u32>>,
}

impl Wheel {
    fn new(horizon: u64) -> Self {
        let len = (horizon + 2).next_power_of_two() as usize;
        Self {
            slots: vec![Vec::new(); len],
        }
    }

    fn push(&mut self, frame: u64, id: u32) {
        let n = self.slots.len();
        self.slots[frame as usize % n].push(id);
    }

    fn take(&mut self, frame: u64) -> Vec<u32> {
        let n = self.slots.len();
        let mut v = std::mem::take(&mut self.slots[frame as usize % n]);
        v.sort_unstable();
        v
    }
}

pub struct Simulation {
    config: SimConfig,
    geometry: Geometry,
    plan: ChannelPlan,
    frame: u64,
    warm: u64,
    end: u64,
    classes: Vec<DeviceClass>,
    devices: Vec<Device>,
    arrivals: BinaryHeap<Reverse<(u64, u32)>>,
    class_rngs: Vec<RngStream>,
    backoff_rng: RngStream,
    rach: Wheel,
    expiries: Wheel,
    queue: GrantQueue,
    calendar: OccupancyCalendar,
    plane: DataPlane,
    stats: StageStats,
    peak_connections: usize,
}

impl Simulation {
    pub fn new(config: &SimConfig, scenario: &Scenario) -> Result<Self> {
        config.validate()?;
        let geometry = config.geometry();
        scenario.validate(&geometry)?;
        let plan = config.channel_plan();
        let warm = geometry.seconds_to_frames(config.warmup_s);
        let end = warm + geometry.seconds_to_frames(config.measure_s);
        let names: Vec<String> = scenario.classes.iter().map(|c| c.name.clone()).collect();
        let stats = StageStats::new(config.measure_s, config.measure_s.ceil() as usize, &names);

        let mut devices = Vec::new();
        let mut arrivals = BinaryHeap::new();
        let mut class_rngs = Vec::new();
        let mut alarm_rng = RngStream::new(config.seed, streams::ALARM_ACTIVATION);
        for (ci, class) in scenario.classes.iter().enumerate() {
            let mut rng = RngStream::new(config.seed, streams::ARRIVALS_BASE + ci as u64);
            let n = scenario.simulated_count(class);
            let channel = select_rach_channel(class.distribution, config.separate_rach);
            let first_id = devices.len() as u32;
            for k in 0..n {
                devices.push(Device::new(first_id + k as u32, ci as u16, channel));
            }
            match class.distribution {
                Distribution::BetaAlarm => {
                    let period = class.activation_period.unwrap_or_default();
                    let times = alarm_activation_times(n, period, class.beta_params, &geometry, &mut alarm_rng)?;
                    for (k, t) in times.into_iter().enumerate() {
                        arrivals.push(Reverse((warm + t, first_id + k as u32)));
                    }
                }
                _ => {
                    for k in 0..n {
                        if let Some(f) = first_arrival(class, &geometry, &mut rng)? {
                            arrivals.push(Reverse((f, first_id + k as u32)));
                        }
                    }
                }
            }
            class_rngs.push(rng);
        }
        if devices.len() > u32::MAX as usize {
            return Err(Error::config("too many devices"));
        }

        Ok(Self {
            config: config.clone(),
            geometry,
            plan: plan.clone(),
            frame: 0,
            warm,
            end,
            classes: scenario.classes.clone(),
            devices,
            arrivals,
            class_rngs,
            backoff_rng: RngStream::new(config.seed, streams::BACKOFF),
            rach: Wheel::new(config.access.backoff_window as u64 + 1),
            expiries: Wheel::new(config.access.response_window as u64),
            queue: GrantQueue::new(),
            calendar: OccupancyCalendar::new(&plan.data_pdchs, config.eusf, config.coding.block_payload),
            plane: DataPlane::new(config.coding.clone()),
            stats,
            peak_connections: 0,
        })
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn end_frame(&self) -> u64 {
        self.end
    }

    pub fn stats(&self) -> &StageStats {
        &self.stats
    }

    pub fn calendar(&self) -> &OccupancyCalendar {
        &self.calendar
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    fn in_window(&self, frame: u64) -> bool {
        frame >= self.warm && frame < self.end
    }

    fn second(&self, frame: u64) -> Option<usize> {
        if !self.in_window(frame) {
            return None;
        }
        let s = self.geometry.second_of(frame - self.warm) as usize;
        (s < self.stats.hist_rach.len()).then_some(s)
    }

    /// Advances one frame.
    pub fn tick(&mut self) -> Result<()> {
        let f = self.frame;
        self.arrivals_step(f)?;
        self.rach_step(f);
        if is_agch_block_boundary(f, &self.plan, &self.geometry).is_some() {
            self.agch_step(f)?;
        }
        if let Some(u) = self.geometry.block_ending_at(f) {
            self.data_step(u, f)?;
        }
        self.expiry_step(f);
        self.peak_connections = self.peak_connections.max(self.calendar.len());
        self.frame += 1;
        Ok(())
    }

    fn arrivals_step(&mut self, f: u64) -> Result<()> {
        while let Some(&Reverse((frame, id))) = self.arrivals.peek() {
            if frame != f {
                debug_assert!(frame > f);
                break;
            }
            self.arrivals.pop();
            let ci = self.devices[id as usize].class as usize;
            let class = &self.classes[ci];
            let measured = f >= self.warm;
            let report = Report {
                arrival_frame: f,
                payload: class.payload,
                class: ci as u16,
                measured,
                accessed: false,
            };
            if measured {
                self.stats.arrivals += 1;
                self.stats.per_class[ci].arrivals += 1;
            }
            if class.distribution != Distribution::BetaAlarm {
                let next = next_arrival(class, f, &self.geometry, &mut self.class_rngs[ci])?;
                self.arrivals.push(Reverse((next, id)));
            }
            let device = &mut self.devices[id as usize];
            match device.on_report_ready(report, f, &self.config.access, &mut self.backoff_rng) {
                ReportReady::Backoff { tx_frame } => self.rach.push(tx_frame, id),
                ReportReady::Enqueue { allocation } => self.plane.enqueue(allocation, report)?,
                ReportReady::Overrun => {
                    if measured {
                        self.stats.overruns += 1;
                    }
                }
            }
        }
        Ok(())
    }

    fn rach_step(&mut self, f: u64) {
        let senders = self.rach.take(f);
        if senders.is_empty() {
            return;
        }
        let slots = self.plan.rach_slots_per_frame;
        // (channel, slot) -> transmitters, in ascending device id.
        let mut groups: Vec<((u8, u32), u32)> = senders
            .into_iter()
            .map(|id| {
                let slot = if slots > 1 { self.backoff_rng.below(slots) } else { 0 };
                ((self.devices[id as usize].rach_channel, slot), id)
            })
            .collect();
        groups.sort_unstable();
        let second = self.second(f);
        let mut granted = Vec::new();
        let mut i = 0;
        while i < groups.len() {
            let key = groups[i].0;
            let mut j = i;
            while j < groups.len() && groups[j].0 == key {
                j += 1;
            }
            let ids: Vec<u32> = groups[i..j].iter().map(|g| g.1).collect();
            for &id in &ids {
                let device = &mut self.devices[id as usize];
                let retry = device.attempts_used > 1;
                let first_of_measured = device.pending.is_some_and(|r| r.measured && !r.accessed);
                device.on_rach_sent(f);
                self.expiries.push(f + self.config.access.response_window as u64, id);
                if first_of_measured {
                    self.stats.accessing += 1;
                    self.stats.per_class[device.class as usize].accessing += 1;
                }
                if second.is_some() {
                    self.stats.rach_attempts += 1;
                    self.stats.rach_retransmissions += retry as u64;
                }
            }
            if let Some(s) = second {
                self.stats.hist_rach[s] += ids.len() as u32;
            }
            match resolve_rach_slot(&ids) {
                SlotOutcome::Success(id) => {
                    let device = &self.devices[id as usize];
                    let class = &self.classes[device.class as usize];
                    let mode = match class.reporting_interval {
                        Some(t) if self.config.variant.uses_eusf() => TrafficMode::Periodic { reporting_interval: t },
                        _ => TrafficMode::OneShot,
                    };
                    let payload = device.pending.map_or(class.payload, |r| r.payload);
                    let mut req = GrantRequest::new(id, f, self.config.access.response_window, mode, payload);
                    req.measured = second.is_some();
                    granted.push(req);
                    if let Some(s) = second {
                        self.stats.rach_successes += 1;
                        self.stats.hist_agch[s] += 1;
                    }
                }
                SlotOutcome::Collision(_) => {
                    if second.is_some() {
                        self.stats.rach_collision_slots += 1;
                    }
                }
                SlotOutcome::Idle => {}
            }
            i = j;
        }
        // Successes on several channels in one frame join the queue by device id.
        granted.sort_unstable_by_key(|r| r.device);
        for req in granted {
            self.queue.push(req);
        }
    }

    fn agch_step(&mut self, f: u64) -> Result<()> {
        let earliest = self.geometry.first_usable_block(f);
        let variant = self.config.variant;
        let block_payload = self.plane.coding().clone();
        let calendar = &mut self.calendar;
        let out = emit_agch_block(
            &mut self.queue,
            f,
            variant.grants_per_message(),
            self.config.retain_on_usf_block,
            |req| {
                if !variant.uses_eusf() {
                    return Ok(calendar.allocate_legacy());
                }
                let demand = match req.mode {
                    TrafficMode::OneShot => Demand::OneShot {
                        blocks: blocks_required(req.payload, &block_payload)?,
                    },
                    TrafficMode::Periodic { reporting_interval } => Demand::Periodic {
                        payload: req.payload,
                        reporting_interval,
                    },
                };
                calendar.allocate_eusf(demand, earliest)
            },
        )?;
        let second = self.second(f);
        if !out.message.grants.is_empty() {
            if second.is_some() {
                self.stats.agch_messages += 1;
            }
            if let Some(s) = second {
                self.stats.hist_data[s] += out.message.grants.len() as u32;
            }
        }
        for (device_id, alloc) in out.message.grants {
            let device = &mut self.devices[device_id as usize];
            match device.state {
                DeviceState::AwaitingGrant { request_frame }
                    if request_frame + self.config.access.response_window as u64 >= f => {}
                other => {
                    return Err(Error::Internal(format!(
                        "grant for device {device_id} in state {other:?} at frame {f}"
                    )))
                }
            }
            device.on_grant();
            let report = device.pending.take();
            if alloc.mode() == crate::calendar::AllocationMode::EusfPeriodic {
                device.persistent = Some(alloc.id);
            }
            self.plane.open(device_id, alloc, report, f, earliest)?;
        }
        self.stats.agch_granted += out.granted.iter().filter(|r| r.measured).count() as u64;
        self.stats.agch_deadline_blocked += out.deadline_blocked.iter().filter(|r| r.measured).count() as u64;
        self.stats.data_blocked += out.data_blocked.iter().filter(|r| r.measured).count() as u64;
        Ok(())
    }

    fn data_step(&mut self, u: u64, f: u64) -> Result<()> {
        for done in self.plane.end_of_block(u, f)? {
            if done.released {
                self.calendar.release(done.allocation)?;
            }
            let device = &mut self.devices[done.device as usize];
            let persistent = device.persistent.is_some();
            if !persistent {
                device.reset();
            }
            let r = done.report;
            if r.measured {
                self.stats.delivered += 1;
                self.stats.delivered_bytes += r.payload as u64;
                self.stats.per_class[r.class as usize].delivered += 1;
                self.stats.latencies_frames.push(done.frame - r.arrival_frame);
                if !r.accessed {
                    self.stats.persistent_deliveries += 1;
                }
            }
        }
        Ok(())
    }

    fn expiry_step(&mut self, f: u64) {
        let window = self.config.access.response_window as u64;
        for id in self.expiries.take(f) {
            let device = &mut self.devices[id as usize];
            let DeviceState::AwaitingGrant { request_frame } = device.state else {
                continue;
            };
            if request_frame + window != f {
                continue;
            }
            let report = device.pending;
            match device.on_s_expiry(f, &self.config.access, &mut self.backoff_rng) {
                Expiry::Retry { tx_frame } => self.rach.push(tx_frame, id),
                Expiry::Outage => {
                    if let Some(r) = report.filter(|r| r.measured) {
                        self.stats.outages += 1;
                        self.stats.per_class[r.class as usize].outages += 1;
                    }
                }
            }
        }
    }

    /// Runs warmup and measurement to completion.
    pub fn run(mut self) -> Result<RunReport> {
        while self.frame < self.end {
            self.tick()?;
        }
        self.finish()
    }

    fn finish(mut self) -> Result<RunReport> {
        self.stats.queue_residual = drain_residual(&mut self.queue).iter().filter(|r| r.measured).count() as u64;
        let pending = self.devices.iter().filter_map(|d| d.pending).filter(|r| r.measured).count();
        let queued = self
            .plane
            .connections()
            .flat_map(|c| c.reports.iter())
            .filter(|r| r.measured)
            .count();
        self.stats.in_flight = (pending + queued) as u64;
        let fd = self.geometry.frame_duration();
        let lat = |q: f64| percentile(&self.stats.latencies_frames, q).map(|f| f as f64 * fd);
        let rates = stage_rates(&self.stats)?;
        Ok(RunReport {
            seed: self.config.seed,
            variant: self.config.variant,
            warmup_s: self.config.warmup_s,
            measure_s: self.config.measure_s,
            devices: self.devices.len() as u64,
            blocking: BlockingReport::from_stats(&self.stats),
            rates,
            latency_p50_s: lat(50.0),
            latency_p95_s: lat(95.0),
            latency_p99_s: lat(99.0),
            latency_max_s: self.stats.latencies_frames.iter().max().map(|&f| f as f64 * fd),
            peak_connections: self.peak_connections,
            stats: self.stats,
        })
    }
}

/// Builds and runs one simulation.
pub fn run(config: &SimConfig, scenario: &Scenario) -> Result<RunReport> {
    Simulation::new(config, scenario)?.run()
}
