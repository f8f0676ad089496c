//! USF allocation: the legacy one-USF-per-PDCH scheme and expanded USF
//! (eUSF), where an allocation is valid only in a set of blocks during `X`
//! multiframes, either once (alarm mode) or repeating every `X + M_gap`
//! multiframes (periodic mode).
//!
//! The calendar tracks claims per data PDCH on cells:
//!
//! * periodic claims live on `(phase, block)` cells, `phase = mf mod (X + M_gap)`,
//!   and may be shared by up to seven connections with distinct USFs. Each
//!   sharer is guaranteed `1 / n` of the cell's occurrences by the
//!   round-robin scheduler, and admission keeps every sharer's guaranteed
//!   throughput at or above its demand.
//! * one-shot claims live on absolute `(mf, block)` cells and are exclusive,
//!   so an admitted report always completes inside its window.
//! * legacy connections hold a USF on every block of one PDCH; a PDCH
//!   carries either legacy or eUSF connections, never both.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{split_block, BLOCKS_PER_MULTIFRAME, MULTIFRAME_SECONDS, USF_VALUES};

pub type AllocId = u64;

const EPS: f64 = 1e-9;
const ALL_USFS: u8 = 0b1111_1110;

/// Subset of the 12 blocks of a multiframe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct BlockSet(u16);

impl BlockSet {
    pub fn all() -> Self {
        BlockSet((1 << BLOCKS_PER_MULTIFRAME) - 1)
    }

    pub fn insert(&mut self, block: u32) {
        self.0 |= 1 << block;
    }

    pub fn contains(&self, block: u32) -> bool {
        block < BLOCKS_PER_MULTIFRAME && self.0 & (1 << block) != 0
    }

    pub fn len(&self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: BlockSet) -> BlockSet {
        BlockSet(self.0 | other.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        (0..BLOCKS_PER_MULTIFRAME).filter(|&b| self.contains(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    Legacy,
    EusfPeriodic,
    EusfOneShot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Validity {
    Legacy,
    Periodic {
        blocks: BlockSet,
        valid: u32,
        gap: u32,
    },
    /// `windows[i]` holds the blocks valid in multiframe `start + i`.
    OneShot { windows: Vec<BlockSet> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UsfAllocation {
    pub id: AllocId,
    pub pdch: u8,
    pub usf: u8,
    pub start_multiframe: u64,
    pub validity: Validity,
}

impl UsfAllocation {
    pub fn mode(&self) -> AllocationMode {
        match self.validity {
            Validity::Legacy => AllocationMode::Legacy,
            Validity::Periodic { .. } => AllocationMode::EusfPeriodic,
            Validity::OneShot { .. } => AllocationMode::EusfOneShot,
        }
    }

    /// Blocks the allocation may use (union over the window for one-shot).
    pub fn block_set(&self) -> BlockSet {
        match &self.validity {
            Validity::Legacy => BlockSet::all(),
            Validity::Periodic { blocks, .. } => *blocks,
            Validity::OneShot { windows } => windows.iter().fold(BlockSet::default(), |a, &w| a.union(w)),
        }
    }

    /// X; zero for legacy (valid in every multiframe).
    pub fn valid_multiframes(&self) -> u32 {
        match &self.validity {
            Validity::Legacy => 0,
            Validity::Periodic { valid, .. } => *valid,
            Validity::OneShot { windows } => windows.len() as u32,
        }
    }

    /// M_gap; zero unless periodic.
    pub fn gap_multiframes(&self) -> u32 {
        match &self.validity {
            Validity::Periodic { gap, .. } => *gap,
            _ => 0,
        }
    }

    pub fn is_valid_in_multiframe(&self, mf: u64) -> bool {
        match &self.validity {
            Validity::Legacy => true,
            Validity::Periodic { valid, gap, .. } => {
                mf >= self.start_multiframe
                    && (mf - self.start_multiframe) % ((*valid + *gap) as u64) < (*valid as u64)
            }
            Validity::OneShot { windows } => {
                mf >= self.start_multiframe && mf < self.start_multiframe + windows.len() as u64
            }
        }
    }

    pub fn is_valid(&self, mf: u64, block: u32) -> bool {
        if !self.is_valid_in_multiframe(mf) {
            return false;
        }
        match &self.validity {
            Validity::Legacy => true,
            Validity::Periodic { blocks, .. } => blocks.contains(block),
            Validity::OneShot { windows } => {
                windows[(mf - self.start_multiframe) as usize].contains(block)
            }
        }
    }

    pub fn is_valid_at(&self, global_block: u64) -> bool {
        let (mf, b) = split_block(global_block);
        self.is_valid(mf, b)
    }

    /// Global block of the final cell of a one-shot allocation.
    pub fn last_cell(&self) -> Option<u64> {
        let Validity::OneShot { windows } = &self.validity else {
            return None;
        };
        windows.iter().enumerate().rev().find_map(|(i, w)| {
            w.iter()
                .last()
                .map(|b| (self.start_multiframe + i as u64) * BLOCKS_PER_MULTIFRAME as u64 + b as u64)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Demand {
    /// Report of `blocks` radio blocks to deliver once.
    OneShot { blocks: u32 },
    /// Recurring reports of `payload` bytes every `reporting_interval` s.
    Periodic { payload: u32, reporting_interval: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EusfParams {
    /// X: consecutive valid multiframes.
    pub valid_multiframes: u32,
    /// M_gap: non-valid multiframes following each valid run.
    pub gap_multiframes: u32,
}

impl Default for EusfParams {
    fn default() -> Self {
        Self {
            valid_multiframes: 2,
            gap_multiframes: 2,
        }
    }
}

impl EusfParams {
    pub fn period(&self) -> u32 {
        self.valid_multiframes + self.gap_multiframes
    }

    pub fn validate(&self) -> Result<()> {
        if self.valid_multiframes == 0 {
            return Err(Error::config("eUSF X must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Claim {
    alloc: AllocId,
    usf: u8,
}

#[derive(Debug, Clone)]
struct PdchState {
    id: u8,
    legacy: BTreeMap<AllocId, u8>,
    /// Indexed by `phase * 12 + block`.
    periodic: Vec<Vec<Claim>>,
    periodic_claims: usize,
    one_shot: BTreeMap<(u64, u32), Claim>,
}

impl PdchState {
    fn new(id: u8, period: u32) -> Self {
        Self {
            id,
            legacy: BTreeMap::new(),
            periodic: vec![Vec::new(); (period * BLOCKS_PER_MULTIFRAME) as usize],
            periodic_claims: 0,
            one_shot: BTreeMap::new(),
        }
    }

    fn carries_eusf(&self) -> bool {
        self.periodic_claims > 0 || !self.one_shot.is_empty()
    }

    fn one_shot_on_phase(&self, phase: u32, block: u32, period: u32) -> bool {
        self.one_shot
            .keys()
            .any(|&(mf, b)| b == block && (mf % period as u64) as u32 == phase)
    }

    /// USFs held by eUSF claims valid in any of `multiframes`.
    fn usfs_in_multiframes(&self, multiframes: &[u64], period: u32) -> u8 {
        let mut mask = 0u8;
        for &mf in multiframes {
            let phase = (mf % period as u64) as u32;
            for b in 0..BLOCKS_PER_MULTIFRAME {
                for c in &self.periodic[(phase * BLOCKS_PER_MULTIFRAME + b) as usize] {
                    mask |= 1 << c.usf;
                }
            }
            for (_, c) in self.one_shot.range((mf, 0)..(mf + 1, 0)) {
                mask |= 1 << c.usf;
            }
        }
        mask
    }
}

#[derive(Debug, Clone)]
struct Active {
    alloc: UsfAllocation,
    /// Required blocks per period (periodic) or per report (one-shot).
    demand: f64,
}

/// Reuse-first USF choice: the highest value already held by overlapping
/// connections on the PDCH that is free in every claimed cell, else the
/// lowest free value.
fn choose_usf(free: u8, in_use: u8) -> Option<u8> {
    let reusable = free & in_use & ALL_USFS;
    if reusable != 0 {
        return Some(7 - reusable.leading_zeros() as u8);
    }
    let free = free & ALL_USFS;
    (free != 0).then(|| free.trailing_zeros() as u8)
}

#[derive(Debug, Clone)]
pub struct OccupancyCalendar {
    params: EusfParams,
    block_payload: u32,
    pdchs: Vec<PdchState>,
    active: BTreeMap<AllocId, Active>,
    next_id: AllocId,
}

impl OccupancyCalendar {
    pub fn new(data_pdchs: &[u8], params: EusfParams, block_payload: u32) -> Self {
        let mut ids = data_pdchs.to_vec();
        ids.sort_unstable();
        Self {
            params,
            block_payload,
            pdchs: ids.into_iter().map(|id| PdchState::new(id, params.period())).collect(),
            active: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn params(&self) -> EusfParams {
        self.params
    }

    pub fn get(&self, id: AllocId) -> Option<&UsfAllocation> {
        self.active.get(&id).map(|a| &a.alloc)
    }

    pub fn active(&self) -> impl Iterator<Item = &UsfAllocation> {
        self.active.values().map(|a| &a.alloc)
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn legacy_count(&self, pdch: u8) -> usize {
        self.pdchs.iter().find(|p| p.id == pdch).map_or(0, |p| p.legacy.len())
    }

    /// Blocks per period a periodic demand needs.
    pub fn periodic_demand_blocks(&self, payload: u32, reporting_interval: f64) -> f64 {
        payload as f64 / reporting_interval * self.params.period() as f64 * MULTIFRAME_SECONDS
            / self.block_payload as f64
    }

    fn take_id(&mut self) -> AllocId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// First-fit legacy allocation: lowest free USF on the first PDCH with
    /// fewer than seven connections.
    pub fn allocate_legacy(&mut self) -> Option<UsfAllocation> {
        let idx = self
            .pdchs
            .iter()
            .position(|p| !p.carries_eusf() && p.legacy.len() < USF_VALUES as usize)?;
        let used = self.pdchs[idx].legacy.values().fold(0u8, |m, &u| m | (1 << u));
        let usf = choose_usf(!used, 0)?;
        let id = self.take_id();
        let pdch = &mut self.pdchs[idx];
        pdch.legacy.insert(id, usf);
        let alloc = UsfAllocation {
            id,
            pdch: pdch.id,
            usf,
            start_multiframe: 0,
            validity: Validity::Legacy,
        };
        self.active.insert(id, Active { alloc: alloc.clone(), demand: 0.0 });
        Some(alloc)
    }

    /// eUSF allocation whose first usable uplink block is `earliest_block`
    /// (global numbering). Search order: ascending PDCH, ascending start
    /// phase, ascending block.
    pub fn allocate_eusf(&mut self, demand: Demand, earliest_block: u64) -> Result<Option<UsfAllocation>> {
        let needed = match demand {
            Demand::OneShot { blocks: 0 } => return Err(Error::domain("one-shot demand of zero blocks")),
            Demand::Periodic { payload: 0, .. } => return Err(Error::domain("periodic demand with zero payload")),
            Demand::Periodic { reporting_interval, .. } if !(reporting_interval > 0.0) => {
                return Err(Error::domain("periodic demand needs a positive reporting interval"))
            }
            Demand::OneShot { blocks } => blocks as f64,
            Demand::Periodic { payload, reporting_interval } => {
                self.periodic_demand_blocks(payload, reporting_interval)
            }
        };
        let (mf0, _) = split_block(earliest_block);
        for idx in 0..self.pdchs.len() {
            if !self.pdchs[idx].legacy.is_empty() {
                continue;
            }
            for offset in 0..self.params.period() as u64 {
                let start = mf0 + offset;
                let found = match demand {
                    Demand::OneShot { blocks } => self.try_one_shot(idx, start, earliest_block, blocks),
                    Demand::Periodic { .. } => self.try_periodic(idx, start, needed),
                };
                if let Some((usf, validity)) = found {
                    let id = self.take_id();
                    let alloc = UsfAllocation {
                        id,
                        pdch: self.pdchs[idx].id,
                        usf,
                        start_multiframe: start,
                        validity,
                    };
                    self.claim(idx, &alloc);
                    self.active.insert(id, Active { alloc: alloc.clone(), demand: needed });
                    return Ok(Some(alloc));
                }
            }
        }
        Ok(None)
    }

    fn try_one_shot(&self, idx: usize, start: u64, earliest: u64, blocks: u32) -> Option<(u8, Validity)> {
        let pdch = &self.pdchs[idx];
        let x = self.params.valid_multiframes;
        let period = self.params.period();
        let mut windows = vec![BlockSet::default(); x as usize];
        let mut count = 0;
        'scan: for i in 0..x as u64 {
            let mf = start + i;
            let phase = (mf % period as u64) as u32;
            for b in 0..BLOCKS_PER_MULTIFRAME {
                let global = mf * BLOCKS_PER_MULTIFRAME as u64 + b as u64;
                if global < earliest {
                    continue;
                }
                let periodic_free = pdch.periodic[(phase * BLOCKS_PER_MULTIFRAME + b) as usize].is_empty();
                if periodic_free && !pdch.one_shot.contains_key(&(mf, b)) {
                    windows[i as usize].insert(b);
                    count += 1;
                    if count == blocks {
                        break 'scan;
                    }
                }
            }
        }
        if count < blocks {
            return None;
        }
        let mfs: Vec<u64> = (0..x as u64).map(|i| start + i).collect();
        let usf = choose_usf(ALL_USFS, pdch.usfs_in_multiframes(&mfs, period))?;
        Some((usf, Validity::OneShot { windows }))
    }

    fn guarantee(&self, pdch: &PdchState, alloc: &UsfAllocation) -> f64 {
        let Validity::Periodic { blocks, valid, gap } = &alloc.validity else {
            return 0.0;
        };
        let period = valid + gap;
        let mut g = 0.0;
        for i in 0..*valid as u64 {
            let phase = ((alloc.start_multiframe + i) % period as u64) as u32;
            for b in blocks.iter() {
                let n = pdch.periodic[(phase * BLOCKS_PER_MULTIFRAME + b) as usize].len();
                g += 1.0 / n.max(1) as f64;
            }
        }
        g
    }

    fn try_periodic(&self, idx: usize, start: u64, needed: f64) -> Option<(u8, Validity)> {
        let pdch = &self.pdchs[idx];
        let x = self.params.valid_multiframes;
        let period = self.params.period();
        let phases: Vec<u32> = (0..x as u64).map(|i| ((start + i) % period as u64) as u32).collect();
        let mut free = ALL_USFS;
        let mut blocks = BlockSet::default();
        let mut gained = 0.0;
        // Throughput each co-claimant would lose to the cells taken so far.
        let mut losses: BTreeMap<AllocId, f64> = BTreeMap::new();

        for b in 0..BLOCKS_PER_MULTIFRAME {
            let cells: Vec<&Vec<Claim>> = phases
                .iter()
                .map(|&ph| &pdch.periodic[(ph * BLOCKS_PER_MULTIFRAME + b) as usize])
                .collect();
            if cells.iter().any(|c| c.len() >= USF_VALUES as usize) {
                continue;
            }
            if phases.iter().any(|&ph| pdch.one_shot_on_phase(ph, b, period)) {
                continue;
            }
            let taken = cells.iter().flat_map(|c| c.iter()).fold(0u8, |m, c| m | (1 << c.usf));
            let next_free = free & !taken;
            if next_free == 0 {
                continue;
            }
            let mut step_losses = losses.clone();
            for cell in &cells {
                let n = cell.len() as f64;
                for claim in cell.iter() {
                    *step_losses.entry(claim.alloc).or_default() += 1.0 / n - 1.0 / (n + 1.0);
                }
            }
            let keeps_others_whole = step_losses.iter().all(|(id, loss)| {
                let a = &self.active[id];
                self.guarantee(pdch, &a.alloc) - loss + EPS >= a.demand
            });
            if !keeps_others_whole {
                continue;
            }
            losses = step_losses;
            free = next_free;
            blocks.insert(b);
            gained += cells.iter().map(|c| 1.0 / (c.len() + 1) as f64).sum::<f64>();
            if gained + EPS >= needed {
                let mfs: Vec<u64> = (0..x as u64).map(|i| start + i).collect();
                let usf = choose_usf(free, pdch.usfs_in_multiframes(&mfs, period))?;
                return Some((
                    usf,
                    Validity::Periodic {
                        blocks,
                        valid: x,
                        gap: self.params.gap_multiframes,
                    },
                ));
            }
        }
        None
    }

    fn claim(&mut self, idx: usize, alloc: &UsfAllocation) {
        let period = self.params.period();
        let pdch = &mut self.pdchs[idx];
        let claim = Claim { alloc: alloc.id, usf: alloc.usf };
        match &alloc.validity {
            Validity::Legacy => {
                pdch.legacy.insert(alloc.id, alloc.usf);
            }
            Validity::Periodic { blocks, valid, .. } => {
                for i in 0..*valid as u64 {
                    let phase = ((alloc.start_multiframe + i) % period as u64) as u32;
                    for b in blocks.iter() {
                        pdch.periodic[(phase * BLOCKS_PER_MULTIFRAME + b) as usize].push(claim);
                        pdch.periodic_claims += 1;
                    }
                }
            }
            Validity::OneShot { windows } => {
                for (i, w) in windows.iter().enumerate() {
                    for b in w.iter() {
                        pdch.one_shot.insert((alloc.start_multiframe + i as u64, b), claim);
                    }
                }
            }
        }
    }

    pub fn release(&mut self, id: AllocId) -> Result<()> {
        let active = self
            .active
            .remove(&id)
            .ok_or_else(|| Error::Internal(format!("release of unknown allocation {id}")))?;
        let alloc = active.alloc;
        let period = self.params.period();
        let pdch = self
            .pdchs
            .iter_mut()
            .find(|p| p.id == alloc.pdch)
            .ok_or_else(|| Error::Internal(format!("allocation on unknown PDCH {}", alloc.pdch)))?;
        match &alloc.validity {
            Validity::Legacy => {
                pdch.legacy.remove(&id);
            }
            Validity::Periodic { blocks, valid, .. } => {
                for i in 0..*valid as u64 {
                    let phase = ((alloc.start_multiframe + i) % period as u64) as u32;
                    for b in blocks.iter() {
                        let cell = &mut pdch.periodic[(phase * BLOCKS_PER_MULTIFRAME + b) as usize];
                        cell.retain(|c| c.alloc != id);
                        pdch.periodic_claims -= 1;
                    }
                }
            }
            Validity::OneShot { windows } => {
                for (i, w) in windows.iter().enumerate() {
                    for b in w.iter() {
                        pdch.one_shot.remove(&(alloc.start_multiframe + i as u64, b));
                    }
                }
            }
        }
        Ok(())
    }

    /// Guaranteed blocks per period of an active periodic allocation.
    pub fn guaranteed_blocks(&self, id: AllocId) -> Option<f64> {
        let a = self.active.get(&id)?;
        let pdch = self.pdchs.iter().find(|p| p.id == a.alloc.pdch)?;
        Some(self.guarantee(pdch, &a.alloc))
    }

    /// Demand recorded at admission (blocks per period or per report).
    pub fn demand_blocks(&self, id: AllocId) -> Option<f64> {
        self.active.get(&id).map(|a| a.demand)
    }

    /// Allocations valid in `(pdch, mf, block)`, found by scanning the
    /// allocation records rather than the claim tables.
    pub fn valid_claimants(&self, pdch: u8, mf: u64, block: u32) -> Vec<&UsfAllocation> {
        self.active
            .values()
            .map(|a| &a.alloc)
            .filter(|a| a.pdch == pdch && a.is_valid(mf, block))
            .collect()
    }

    /// Checks every calendar invariant over multiframes `[from, from + span)`.
    pub fn check_invariants(&self, from_mf: u64, span: u64) -> Result<()> {
        for pdch in &self.pdchs {
            if pdch.legacy.len() > USF_VALUES as usize {
                return Err(Error::Internal(format!("PDCH {} holds {} legacy connections", pdch.id, pdch.legacy.len())));
            }
            if !pdch.legacy.is_empty() && pdch.carries_eusf() {
                return Err(Error::Internal(format!("PDCH {} mixes legacy and eUSF", pdch.id)));
            }
            for mf in from_mf..from_mf + span {
                for b in 0..BLOCKS_PER_MULTIFRAME {
                    let mut seen = 0u8;
                    for a in self.valid_claimants(pdch.id, mf, b) {
                        if a.usf == 0 || a.usf > USF_VALUES {
                            return Err(Error::Internal(format!("allocation {} has USF {}", a.id, a.usf)));
                        }
                        if seen & (1 << a.usf) != 0 {
                            return Err(Error::Internal(format!(
                                "USF {} announced twice in PDCH {} mf {mf} block {b}",
                                a.usf, pdch.id
                            )));
                        }
                        seen |= 1 << a.usf;
                    }
                }
            }
        }
        let legacy_total: usize = self.pdchs.iter().map(|p| p.legacy.len()).sum();
        if legacy_total > USF_VALUES as usize * self.pdchs.len() {
            return Err(Error::Internal("legacy connections above the system cap".into()));
        }
        for a in self.active.values() {
            match &a.alloc.validity {
                Validity::Periodic { .. } => {
                    let g = self.guaranteed_blocks(a.alloc.id).unwrap_or(0.0);
                    if g + EPS < a.demand {
                        return Err(Error::Internal(format!(
                            "allocation {} guaranteed {g:.4} blocks/period below demand {:.4}",
                            a.alloc.id, a.demand
                        )));
                    }
                }
                Validity::OneShot { windows } => {
                    let cells: u32 = windows.iter().map(|w| w.len()).sum();
                    if (cells as f64) + EPS < a.demand {
                        return Err(Error::Internal(format!("one-shot {} holds too few cells", a.alloc.id)));
                    }
                }
                Validity::Legacy => {}
            }
        }
        Ok(())
    }
}
