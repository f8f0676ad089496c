//! Browser bindings. Each export takes plain numbers and strings and
//! returns JSON; errors come back as `{"error": "..."}`.

use gsm_access::analytics::{arrival_histogram, truncated_poisson};
use gsm_access::calendar::{Demand, EusfParams, OccupancyCalendar};
use gsm_access::config::SimConfig;
use gsm_access::geometry::BLOCKS_PER_MULTIFRAME;
use gsm_access::{run, Result, Scenario, Variant};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Devices behind the Poisson load of the demo runs.
const POPULATION: u64 = 20_000;

#[derive(Debug, Serialize)]
pub struct RunView {
    pub lambda_rach: f64,
    pub lambda_agch: f64,
    pub lambda_usf: f64,
    pub p_b_agch: Option<f64>,
    pub p_b_data: Option<f64>,
    pub outage: Option<f64>,
    pub rach_hist: Vec<f64>,
    pub agch_hist: Vec<f64>,
    pub data_hist: Vec<f64>,
    /// Truncated Poisson at the measured AGCH rate.
    pub model: Vec<f64>,
}

fn config(variant: &str, seed: u64, measure_s: f64) -> Result<SimConfig> {
    let c = SimConfig {
        seed,
        variant: variant.parse::<Variant>()?,
        warmup_s: 120.0,
        measure_s,
        ..SimConfig::default()
    };
    c.validate()?;
    Ok(c)
}

pub fn single_run(variant: &str, lambda: f64, payload: u32, measure_s: f64, seed: u64) -> Result<RunView> {
    let c = config(variant, seed, measure_s)?;
    let r = run(&c, &Scenario::poisson_population(lambda, POPULATION, payload))?;
    let cap = (c.channel_plan().agch_blocks_per_multiframe as f64 * c.geometry().frames_per_second()
        / c.geometry.frames_per_multiframe as f64
        * c.variant.grants_per_message() as f64)
        .floor() as u32;
    Ok(RunView {
        lambda_rach: r.rates.lambda_rach,
        lambda_agch: r.rates.lambda_agch,
        lambda_usf: r.rates.lambda_usf,
        p_b_agch: r.blocking.p_b_agch,
        p_b_data: r.blocking.p_b_data,
        outage: r.blocking.outage,
        rach_hist: arrival_histogram(&r.stats.hist_rach),
        agch_hist: arrival_histogram(&r.stats.hist_agch),
        data_hist: arrival_histogram(&r.stats.hist_data),
        model: truncated_poisson(r.rates.lambda_agch.max(1e-9), cap, c.truncation)?,
    })
}

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub lambda: f64,
    pub outage: Option<f64>,
    pub p_b_agch: Option<f64>,
    pub p_b_data: Option<f64>,
}

pub fn outage_curve(variant: &str, payload: u32, from: f64, to: f64, step: f64, measure_s: f64, seed: u64) -> Result<Vec<CurvePoint>> {
    if !(step > 0.0 && from > 0.0 && to >= from) {
        return Err(gsm_access::Error::config("need 0 < from <= to and step > 0"));
    }
    let c = config(variant, seed, measure_s)?;
    let n = ((to - from) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| {
            let lambda = from + i as f64 * step;
            let r = run(&c, &Scenario::poisson_population(lambda, POPULATION, payload))?;
            Ok(CurvePoint {
                lambda,
                outage: r.blocking.outage,
                p_b_agch: r.blocking.p_b_agch,
                p_b_data: r.blocking.p_b_data,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct Claim {
    pub device: u32,
    pub pdch: u8,
    pub usf: u8,
    pub blocks: Vec<u32>,
    pub start_multiframe: u64,
}

/// (device, usf) pairs sharing one cell.
pub type Cell = Vec<(u32, u8)>;

#[derive(Debug, Serialize)]
pub struct CalendarView {
    pub period: u32,
    pub admitted: Vec<Claim>,
    pub refused: u32,
    /// `grid[pdch][phase][block]` lists (device, usf) of valid claimants.
    pub grid: Vec<Vec<Vec<Cell>>>,
}

/// Admits `devices` periodic reporters one after another and lays the
/// resulting claims out per period phase.
pub fn calendar(valid: u32, gap: u32, n_pdch: u8, devices: u32, payload: u32, interval_s: f64) -> Result<CalendarView> {
    let params = EusfParams {
        valid_multiframes: valid,
        gap_multiframes: gap,
    };
    params.validate()?;
    if n_pdch == 0 || n_pdch > 7 {
        return Err(gsm_access::Error::config("data PDCHs must be 1..=7"));
    }
    let pdchs: Vec<u8> = (1..=n_pdch).collect();
    let mut cal = OccupancyCalendar::new(&pdchs, params, 22);
    let demand = Demand::Periodic {
        payload,
        reporting_interval: interval_s,
    };
    let mut admitted = Vec::new();
    let mut ids = Vec::new();
    let mut refused = 0;
    let first = BLOCKS_PER_MULTIFRAME as u64;
    for device in 0..devices {
        match cal.allocate_eusf(demand, first)? {
            Some(a) => {
                ids.push((device, a.id));
                admitted.push(Claim {
                    device,
                    pdch: a.pdch,
                    usf: a.usf,
                    blocks: a.block_set().iter().collect(),
                    start_multiframe: a.start_multiframe,
                });
            }
            None => refused += 1,
        }
    }
    let period = params.period();
    let grid = pdchs
        .iter()
        .map(|&p| {
            (0..period as u64)
                .map(|phase| {
                    let mf = first / BLOCKS_PER_MULTIFRAME as u64 + phase;
                    (0..BLOCKS_PER_MULTIFRAME)
                        .map(|b| {
                            let mut cell: Cell = cal
                                .valid_claimants(p, mf, b)
                                .into_iter()
                                .filter_map(|a| ids.iter().find(|(_, id)| *id == a.id).map(|(d, _)| (*d, a.usf)))
                                .collect();
                            cell.sort_unstable();
                            cell
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(CalendarView {
        period,
        admitted,
        refused,
        grid,
    })
}

fn to_json<T: Serialize>(r: Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e.to_string()),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[wasm_bindgen(js_name = runOnce)]
pub fn run_once(variant: &str, lambda: f64, payload: u32, measure_s: f64, seed: u32) -> String {
    to_json(single_run(variant, lambda, payload, measure_s, seed as u64))
}

#[wasm_bindgen(js_name = outageCurve)]
pub fn outage_curve_js(variant: &str, payload: u32, from: f64, to: f64, step: f64, measure_s: f64, seed: u32) -> String {
    to_json(outage_curve(variant, payload, from, to, step, measure_s, seed as u64))
}

#[wasm_bindgen(js_name = calendarExplorer)]
pub fn calendar_js(valid: u32, gap: u32, n_pdch: u8, devices: u32, payload: u32, interval_s: f64) -> String {
    to_json(calendar(valid, gap, n_pdch, devices, payload, interval_s))
}
