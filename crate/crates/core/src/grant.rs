//! AGCH grant delivery: a FIFO of successful RACH requests drained at AGCH
//! block boundaries, one or four grants per message.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calendar::UsfAllocation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "legacy")]
    Legacy,
    #[serde(rename = "agch")]
    Agch,
    #[serde(rename = "agch+eusf")]
    AgchEusf,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Legacy, Variant::Agch, Variant::AgchEusf];

    pub fn grants_per_message(self) -> usize {
        match self {
            Variant::Legacy => 1,
            Variant::Agch | Variant::AgchEusf => 4,
        }
    }

    pub fn uses_eusf(self) -> bool {
        self == Variant::AgchEusf
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Legacy => "legacy",
            Variant::Agch => "agch",
            Variant::AgchEusf => "agch+eusf",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "legacy" => Ok(Variant::Legacy),
            "agch" => Ok(Variant::Agch),
            "agch+eusf" | "agch-eusf" | "eusf" => Ok(Variant::AgchEusf),
            other => Err(Error::config(format!(
                "unknown variant `{other}` (expected legacy, agch or agch+eusf)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrafficMode {
    OneShot,
    Periodic { reporting_interval: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrantRequest {
    pub device: u32,
    pub rach_success_frame: u64,
    pub deadline_frame: u64,
    pub mode: TrafficMode,
    pub payload: u32,
    /// RACH success fell inside the measurement window.
    pub measured: bool,
    /// Already failed a USF allocation while retained at the queue head.
    pub usf_blocked: bool,
}

impl GrantRequest {
    pub fn new(device: u32, rach_success_frame: u64, response_window: u32, mode: TrafficMode, payload: u32) -> Self {
        Self {
            device,
            rach_success_frame,
            deadline_frame: rach_success_frame + response_window as u64,
            mode,
            payload,
            measured: false,
            usf_blocked: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgchMessage {
    pub emit_frame: u64,
    pub grants: Vec<(u32, UsfAllocation)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgchOutcome {
    pub message: AgchMessage,
    pub granted: Vec<GrantRequest>,
    pub deadline_blocked: Vec<GrantRequest>,
    pub data_blocked: Vec<GrantRequest>,
}

/// FIFO of pending grant requests, ordered by RACH success frame and
/// device id.
#[derive(Debug, Clone, Default)]
pub struct GrantQueue {
    inner: VecDeque<GrantRequest>,
}

impl GrantQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, request: GrantRequest) {
        debug_assert!(self.inner.back().is_none_or(|b| {
            (b.rach_success_frame, b.device) <= (request.rach_success_frame, request.device)
        }));
        self.inner.push_back(request);
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GrantRequest> {
        self.inner.iter()
    }
}

/// Drains one AGCH block at frame `now`.
///
/// Expired heads (deadline before `now`) are dropped without using a grant
/// slot. Each remaining head is offered to `allocate`; a failed allocation
/// is DATA-blocked and discarded, or with `retain_on_usf_block` left at the
/// head and the block closed.
pub fn emit_agch_block<F>(
    queue: &mut GrantQueue,
    now: u64,
    grants_per_message: usize,
    retain_on_usf_block: bool,
    mut allocate: F,
) -> Result<AgchOutcome>
where
    F: FnMut(&GrantRequest) -> Result<Option<UsfAllocation>>,
{
    let mut out = AgchOutcome {
        message: AgchMessage {
            emit_frame: now,
            grants: Vec::new(),
        },
        granted: Vec::new(),
        deadline_blocked: Vec::new(),
        data_blocked: Vec::new(),
    };
    while out.message.grants.len() < grants_per_message {
        let Some(head) = queue.inner.front_mut() else {
            break;
        };
        if head.deadline_frame < now {
            let expired = queue.inner.pop_front().expect("head exists");
            if expired.usf_blocked {
                out.data_blocked.push(expired);
            } else {
                out.deadline_blocked.push(expired);
            }
            continue;
        }
        match allocate(head)? {
            Some(alloc) => {
                let req = queue.inner.pop_front().expect("head exists");
                out.message.grants.push((req.device, alloc));
                out.granted.push(req);
            }
            None if retain_on_usf_block => {
                head.usf_blocked = true;
                break;
            }
            None => {
                let req = queue.inner.pop_front().expect("head exists");
                out.data_blocked.push(req);
            }
        }
    }
    Ok(out)
}

/// Removes every request, returning those still pending at run end.
pub fn drain_residual(queue: &mut GrantQueue) -> Vec<GrantRequest> {
    queue.inner.drain(..).collect()
}
