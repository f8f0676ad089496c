//! Test-side oracles. Nothing here calls back into the allocator's own
//! bookkeeping: everything is recomputed from the public allocation records.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use gsm_access::calendar::{Demand, EusfParams, OccupancyCalendar, UsfAllocation, Validity};

pub const BLOCKS: u32 = 12;
pub const MULTIFRAME_S: f64 = 0.24;

/// Every (pdch, mf, block) in `[from, from + span)` claimed twice with one USF.
pub fn usf_clash(cal: &OccupancyCalendar, from: u64, span: u64) -> Option<String> {
    let mut seen = HashSet::new();
    for a in cal.active() {
        if a.usf == 0 || a.usf > 7 {
            return Some(format!("allocation {} has USF {}", a.id, a.usf));
        }
        for mf in from..from + span {
            if !a.is_valid_in_multiframe(mf) {
                continue;
            }
            for b in 0..BLOCKS {
                if a.is_valid(mf, b) && !seen.insert((a.pdch, mf, b, a.usf)) {
                    return Some(format!("USF {} twice at PDCH {} mf {mf} block {b}", a.usf, a.pdch));
                }
            }
        }
    }
    None
}

/// Legacy connections per PDCH and PDCHs carrying any eUSF claim.
pub fn legacy_load(cal: &OccupancyCalendar) -> (BTreeMap<u8, usize>, HashSet<u8>) {
    let mut legacy = BTreeMap::new();
    let mut eusf = HashSet::new();
    for a in cal.active() {
        match a.validity {
            Validity::Legacy => *legacy.entry(a.pdch).or_insert(0) += 1,
            _ => {
                eusf.insert(a.pdch);
            }
        }
    }
    (legacy, eusf)
}

/// Blocks per period needed by a periodic reporter.
pub fn periodic_demand(payload: u32, interval_s: f64, params: EusfParams, block_payload: u32) -> f64 {
    payload as f64 / interval_s * params.period() as f64 * MULTIFRAME_S / block_payload as f64
}

/// Σ 1/n over the allocation's cells in one period starting at `from`,
/// n counting every allocation valid in the cell.
pub fn periodic_guarantee(cal: &OccupancyCalendar, alloc: &UsfAllocation, from: u64) -> f64 {
    let Validity::Periodic { valid, gap, .. } = alloc.validity else {
        return 0.0;
    };
    let start = from.max(alloc.start_multiframe);
    let mut g = 0.0;
    for mf in start..start + (valid + gap) as u64 {
        for b in 0..BLOCKS {
            if alloc.is_valid(mf, b) {
                let n = cal.active().filter(|o| o.pdch == alloc.pdch && o.is_valid(mf, b)).count();
                g += 1.0 / n as f64;
            }
        }
    }
    g
}

#[derive(Debug, Clone)]
pub enum Op {
    Legacy,
    OneShot { blocks: u32, delay_blocks: u32 },
    Periodic { payload: u32, interval_s: f64 },
    /// Release the active allocation at this index (mod count).
    Release(usize),
    /// Move time forward; one-shot allocations that have ended are released.
    Advance(u32),
}

pub const INTERVALS_S: [f64; 5] = [0.5, 1.0, 5.0, 60.0, 300.0];

/// Replays `ops` on a fresh calendar and checks every oracle after each one.
pub fn run_sequence(n_pdch: u8, params: EusfParams, ops: &[Op]) -> Result<(), String> {
    let pdchs: Vec<u8> = (1..=n_pdch).collect();
    let mut cal = OccupancyCalendar::new(&pdchs, params, 22);
    let mut demands: BTreeMap<u64, (u32, f64)> = BTreeMap::new();
    let mut now_mf = 0u64;
    let window = (params.period() * 2 + 2) as u64;
    for op in ops {
        match *op {
            Op::Legacy => {
                let before = cal.active().filter(|a| a.validity == Validity::Legacy).count();
                let got = cal.allocate_legacy();
                if got.is_none() && before < 7 * n_pdch as usize {
                    // Refusal is only allowed once every legacy-capable PDCH is full.
                    let (legacy, eusf) = legacy_load(&cal);
                    let room = pdchs
                        .iter()
                        .any(|p| !eusf.contains(p) && legacy.get(p).copied().unwrap_or(0) < 7);
                    if room {
                        return Err("legacy allocation refused with room left".into());
                    }
                }
            }
            Op::OneShot { blocks, delay_blocks } => {
                let earliest = now_mf * BLOCKS as u64 + delay_blocks as u64;
                if let Some(a) = cal.allocate_eusf(Demand::OneShot { blocks }, earliest).map_err(|e| e.to_string())? {
                    let mut cells = Vec::new();
                    for mf in a.start_multiframe..a.start_multiframe + a.valid_multiframes() as u64 {
                        cells.extend((0..BLOCKS).filter(|&b| a.is_valid(mf, b)).map(|b| mf * 12 + b as u64));
                    }
                    if cells.len() as u32 != blocks {
                        return Err(format!("one-shot holds {} cells for {blocks} blocks", cells.len()));
                    }
                    if cells.iter().any(|&c| c < earliest) {
                        return Err("one-shot cell before earliest block".into());
                    }
                }
            }
            Op::Periodic { payload, interval_s } => {
                let earliest = now_mf * BLOCKS as u64;
                let d = Demand::Periodic { payload, reporting_interval: interval_s };
                if let Some(a) = cal.allocate_eusf(d, earliest).map_err(|e| e.to_string())? {
                    if a.start_multiframe < now_mf {
                        return Err("periodic allocation starts in the past".into());
                    }
                    demands.insert(a.id, (payload, interval_s));
                }
            }
            Op::Release(i) => {
                let ids: Vec<u64> = cal.active().map(|a| a.id).collect();
                if !ids.is_empty() {
                    let id = ids[i % ids.len()];
                    cal.release(id).map_err(|e| e.to_string())?;
                    demands.remove(&id);
                    if cal.release(id).is_ok() {
                        return Err("double release accepted".into());
                    }
                }
            }
            Op::Advance(mfs) => {
                now_mf += mfs as u64;
                let ended: Vec<u64> = cal
                    .active()
                    .filter(|a| a.last_cell().is_some_and(|c| c < now_mf * BLOCKS as u64))
                    .map(|a| a.id)
                    .collect();
                for id in ended {
                    cal.release(id).map_err(|e| e.to_string())?;
                }
            }
        }

        if let Some(msg) = usf_clash(&cal, now_mf, window) {
            return Err(msg);
        }
        let (legacy, eusf) = legacy_load(&cal);
        if legacy.values().any(|&n| n > 7) || legacy.values().sum::<usize>() > 49 {
            return Err(format!("legacy cap exceeded: {legacy:?}"));
        }
        if legacy.keys().any(|p| eusf.contains(p)) {
            return Err("legacy and eUSF share a PDCH".into());
        }
        for a in cal.active() {
            if let Some(&(payload, interval)) = demands.get(&a.id) {
                let need = periodic_demand(payload, interval, params, 22);
                let got = periodic_guarantee(&cal, a, now_mf);
                if got + 1e-9 < need {
                    return Err(format!("allocation {} guaranteed {got:.4} < demand {need:.4}", a.id));
                }
            }
        }
    }
    Ok(())
}

/// Beta(3, 4) CDF: I_x(3, 4) = Σ_{j=3}^{6} C(6, j) x^j (1 - x)^(6 - j).
pub fn beta34_cdf(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    let binom = [1.0, 6.0, 15.0, 20.0, 15.0, 6.0, 1.0];
    (3..=6).map(|j| binom[j] * x.powi(j as i32) * (1.0 - x).powi(6 - j as i32)).sum()
}

/// Kolmogorov–Smirnov statistic of `sample` against `cdf`.
pub fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Index of dispersion of counts.
pub fn dispersion(counts: &[u64]) -> f64 {
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<u64>() as f64 / n;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var / mean
}

/// Total-variation distance of two pmfs on 0, 1, 2, ...
pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}
