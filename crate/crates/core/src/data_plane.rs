//! Uplink transmissions. The USF announced in downlink block `k` gives its
//! holder uplink block `k + 1`; each served block carries one CS block
//! payload of the report at the head of the connection.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::access::Report;
use crate::calendar::{AllocId, AllocationMode, UsfAllocation};
use crate::error::{Error, Result};
use crate::geometry::split_block;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodingScheme {
    pub name: String,
    /// Bytes per radio block.
    pub block_payload: u32,
}

impl Default for CodingScheme {
    fn default() -> Self {
        Self {
            name: "CS1".to_string(),
            block_payload: 22,
        }
    }
}

impl CodingScheme {
    pub fn validate(&self) -> Result<()> {
        if self.block_payload == 0 {
            return Err(Error::config("coding block_payload must be >= 1"));
        }
        Ok(())
    }
}

pub fn blocks_required(payload: u32, cs: &CodingScheme) -> Result<u32> {
    if payload == 0 {
        return Err(Error::domain("payload must be >= 1 byte"));
    }
    Ok(payload.div_ceil(cs.block_payload))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub device: u32,
    pub allocation: UsfAllocation,
    /// Reports waiting on this connection; the head is being sent.
    pub reports: VecDeque<Report>,
    pub remaining_blocks: u32,
    pub served_blocks: u64,
    pub established_frame: u64,
    /// First uplink block the device can use.
    pub earliest_block: u64,
    pub last_served: Option<u64>,
}

impl Connection {
    pub fn is_persistent(&self) -> bool {
        self.allocation.mode() == AllocationMode::EusfPeriodic
    }

    pub fn has_backlog(&self) -> bool {
        self.remaining_blocks > 0
    }

    fn eligible_for(&self, block: u64) -> bool {
        self.has_backlog() && block >= self.earliest_block && self.allocation.is_valid_at(block)
    }
}

/// Picks the connection to announce for uplink block `block` of one PDCH:
/// least recently served among eligible (backlogged, valid) connections,
/// ties to the lower device id.
pub fn announce_and_serve<'a, I>(block: u64, connections: I) -> Result<Option<AllocId>>
where
    I: IntoIterator<Item = &'a Connection>,
{
    let (mf, b) = split_block(block);
    let mut seen = 0u8;
    let mut best: Option<&Connection> = None;
    for c in connections {
        if !c.allocation.is_valid(mf, b) {
            continue;
        }
        let bit = 1u8 << c.allocation.usf;
        if seen & bit != 0 {
            return Err(Error::Internal(format!(
                "USF {} held twice on PDCH {} for block {block}",
                c.allocation.usf, c.allocation.pdch
            )));
        }
        seen |= bit;
        if !c.eligible_for(block) {
            continue;
        }
        let better = match best {
            None => true,
            Some(cur) => {
                let key = |x: &Connection| (x.last_served.map_or(0, |s| s + 1), x.device);
                key(c) < key(cur)
            }
        };
        if better {
            best = Some(c);
        }
    }
    Ok(best.map(|c| c.allocation.id))
}

/// A report whose last block went out.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub device: u32,
    pub allocation: AllocId,
    pub report: Report,
    /// Frame the final block ended.
    pub frame: u64,
    /// Connection released (one-shot and legacy) rather than kept.
    pub released: bool,
}

#[derive(Debug, Clone, Default)]
pub struct DataPlane {
    cs: CodingScheme,
    connections: BTreeMap<AllocId, Connection>,
    by_pdch: BTreeMap<u8, Vec<AllocId>>,
    in_flight: BTreeMap<u8, AllocId>,
    served_blocks: u64,
    delivered_bytes: u64,
}

impl DataPlane {
    pub fn new(cs: CodingScheme) -> Self {
        Self {
            cs,
            ..Self::default()
        }
    }

    pub fn coding(&self) -> &CodingScheme {
        &self.cs
    }

    pub fn connection(&self, id: AllocId) -> Option<&Connection> {
        self.connections.get(&id)
    }

    pub fn connections(&self) -> impl Iterator<Item = &Connection> {
        self.connections.values()
    }

    pub fn served_blocks(&self) -> u64 {
        self.served_blocks
    }

    pub fn delivered_bytes(&self) -> u64 {
        self.delivered_bytes
    }

    /// Opens a connection on a fresh grant.
    pub fn open(
        &mut self,
        device: u32,
        allocation: UsfAllocation,
        report: Option<Report>,
        now: u64,
        earliest_block: u64,
    ) -> Result<()> {
        let id = allocation.id;
        let pdch = allocation.pdch;
        let mut conn = Connection {
            device,
            allocation,
            reports: VecDeque::new(),
            remaining_blocks: 0,
            served_blocks: 0,
            established_frame: now,
            earliest_block,
            last_served: None,
        };
        if let Some(r) = report {
            conn.remaining_blocks = blocks_required(r.payload, &self.cs)?;
            conn.reports.push_back(r);
        }
        if self.connections.insert(id, conn).is_some() {
            return Err(Error::Internal(format!("allocation {id} opened twice")));
        }
        self.by_pdch.entry(pdch).or_default().push(id);
        Ok(())
    }

    /// Queues a report on a persistent connection.
    pub fn enqueue(&mut self, id: AllocId, report: Report) -> Result<()> {
        let blocks = blocks_required(report.payload, &self.cs)?;
        let conn = self
            .connections
            .get_mut(&id)
            .ok_or_else(|| Error::Internal(format!("enqueue on unknown connection {id}")))?;
        if conn.reports.is_empty() {
            conn.remaining_blocks = blocks;
        }
        conn.reports.push_back(report);
        Ok(())
    }

    /// End of uplink block `block` at frame `now`: completes the blocks in
    /// flight and announces the USFs for `block + 1`.
    pub fn end_of_block(&mut self, block: u64, now: u64) -> Result<Vec<Completion>> {
        let mut done = Vec::new();
        let in_flight = std::mem::take(&mut self.in_flight);
        for (_, id) in in_flight {
            let conn = self
                .connections
                .get_mut(&id)
                .ok_or_else(|| Error::Internal(format!("block in flight for closed connection {id}")))?;
            conn.remaining_blocks -= 1;
            conn.served_blocks += 1;
            conn.last_served = Some(block);
            self.served_blocks += 1;
            if conn.remaining_blocks == 0 {
                done.push(self.on_message_complete(id, now)?);
            }
        }
        let next = block + 1;
        for (&pdch, ids) in &self.by_pdch {
            let chosen = announce_and_serve(next, ids.iter().map(|id| &self.connections[id]))?;
            if let Some(id) = chosen {
                self.in_flight.insert(pdch, id);
            }
        }
        for c in self.connections.values() {
            if c.allocation.mode() == AllocationMode::EusfOneShot && c.has_backlog() {
                let last = c.allocation.last_cell().unwrap_or(0);
                if last < next && !self.in_flight.values().any(|&id| id == c.allocation.id) {
                    return Err(Error::Internal(format!(
                        "one-shot allocation {} expired with {} blocks left",
                        c.allocation.id, c.remaining_blocks
                    )));
                }
            }
        }
        Ok(done)
    }

    fn on_message_complete(&mut self, id: AllocId, now: u64) -> Result<Completion> {
        let conn = self
            .connections
            .get_mut(&id)
            .ok_or_else(|| Error::Internal(format!("completion on unknown connection {id}")))?;
        let report = conn
            .reports
            .pop_front()
            .ok_or_else(|| Error::Internal(format!("connection {id} finished without a report")))?;
        self.delivered_bytes += report.payload as u64;
        let device = conn.device;
        let released = !conn.is_persistent();
        if released {
            self.close(id)?;
        } else if let Some(next) = conn.reports.front() {
            conn.remaining_blocks = next.payload.div_ceil(self.cs.block_payload);
        }
        Ok(Completion {
            device,
            allocation: id,
            report,
            frame: now,
            released,
        })
    }

    /// Removes a connection; the caller releases the calendar allocation.
    pub fn close(&mut self, id: AllocId) -> Result<Connection> {
        let conn = self
            .connections
            .remove(&id)
            .ok_or_else(|| Error::Internal(format!("close of unknown connection {id}")))?;
        if let Some(ids) = self.by_pdch.get_mut(&conn.allocation.pdch) {
            ids.retain(|&x| x != id);
        }
        self.in_flight.retain(|_, &mut x| x != id);
        Ok(conn)
    }

    /// Reports queued or in transmission.
    pub fn backlog_reports(&self) -> usize {
        self.connections.values().map(|c| c.reports.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::{BlockSet, Validity};

    fn report(payload: u32) -> Report {
        Report {
            arrival_frame: 0,
            payload,
            class: 0,
            measured: true,
            accessed: true,
        }
    }

    fn alloc(id: AllocId, usf: u8, validity: Validity) -> UsfAllocation {
        UsfAllocation {
            id,
            pdch: 1,
            usf,
            start_multiframe: 0,
            validity,
        }
    }

    #[test]
    fn blocks_for_payloads() {
        let cs = CodingScheme::default();
        assert_eq!(blocks_required(152, &cs).unwrap(), 7);
        assert_eq!(blocks_required(100, &cs).unwrap(), 5);
        assert_eq!(blocks_required(22, &cs).unwrap(), 1);
        assert!(matches!(blocks_required(0, &cs), Err(Error::Domain(_))));
    }

    #[test]
    fn legacy_connection_served_consecutively() {
        let mut dp = DataPlane::new(CodingScheme::default());
        dp.open(3, alloc(1, 1, Validity::Legacy), Some(report(152)), 0, 1).unwrap();
        let mut served = Vec::new();
        let mut done = Vec::new();
        for block in 0..12u64 {
            let c = dp.end_of_block(block, block * 4 + 3).unwrap();
            served.push(dp.in_flight.get(&1).copied());
            done.extend(c.into_iter().map(|c| (block, c)));
        }
        assert_eq!(done.len(), 1);
        // Blocks 1..=7 carry the seven CS1 blocks; done at the end of block 7.
        assert_eq!(done[0].0, 7);
        assert!(done[0].1.released);
        assert!(dp.connection(1).is_none());
        assert_eq!(dp.delivered_bytes(), 152);
    }

    #[test]
    fn shared_cell_alternates() {
        let mut blocks = BlockSet::default();
        blocks.insert(0);
        let v = Validity::Periodic { blocks, valid: 2, gap: 2 };
        let mut dp = DataPlane::new(CodingScheme::default());
        dp.open(1, alloc(1, 1, v.clone()), Some(report(44)), 0, 0).unwrap();
        dp.open(2, alloc(2, 2, v), Some(report(44)), 0, 0).unwrap();
        let mut order = Vec::new();
        for u in 0..100u64 {
            // `u` ends; the block announced for `u + 1` is recorded.
            dp.end_of_block(u, u * 4 + 3).unwrap();
            if let Some(&id) = dp.in_flight.get(&1) {
                order.push(id);
            }
        }
        assert_eq!(order, vec![1, 2, 1, 2]);
        assert!(dp.connection(1).is_some(), "periodic connections persist");
    }

    #[test]
    fn idle_without_backlog() {
        let conns: Vec<Connection> = Vec::new();
        assert_eq!(announce_and_serve(5, &conns).unwrap(), None);
        let mut dp = DataPlane::new(CodingScheme::default());
        dp.open(1, alloc(1, 1, Validity::Legacy), None, 0, 0).unwrap();
        assert!(dp.end_of_block(0, 3).unwrap().is_empty());
        assert!(dp.in_flight.is_empty());
    }

    #[test]
    fn duplicate_usf_is_internal_error() {
        let mut dp = DataPlane::new(CodingScheme::default());
        dp.open(1, alloc(1, 1, Validity::Legacy), Some(report(22)), 0, 0).unwrap();
        dp.open(2, alloc(2, 1, Validity::Legacy), Some(report(22)), 0, 0).unwrap();
        assert!(matches!(dp.end_of_block(0, 3), Err(Error::Internal(_))));
    }

    #[test]
    fn earliest_block_is_respected() {
        let mut dp = DataPlane::new(CodingScheme::default());
        dp.open(1, alloc(1, 1, Validity::Legacy), Some(report(22)), 23, 7).unwrap();
        for u in 5..7u64 {
            dp.end_of_block(u, u * 4 + 3).unwrap();
        }
        assert_eq!(dp.in_flight.get(&1), Some(&1));
        assert_eq!(dp.end_of_block(7, 31).unwrap().len(), 1);
    }
}
