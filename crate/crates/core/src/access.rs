//! Per-device random access: backoff, slotted-ALOHA contention on the RACH,
//! the S-frame response window and the retry limit.
//!
//! A device cannot tell a collision from a request the network never
//! answered, so every transmitter waits out the full response window before
//! retrying. That feedback is what inflates the RACH load well above the
//! fresh arrival rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::traffic::Distribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccessParams {
    /// T: backoff drawn uniformly from `0..T` frames.
    pub backoff_window: u32,
    /// S: frames a device waits for its AGCH response.
    pub response_window: u32,
    /// M: RACH attempts per report before declaring outage.
    pub max_attempts: u32,
}

impl Default for AccessParams {
    fn default() -> Self {
        Self {
            backoff_window: 20,
            response_window: 105,
            max_attempts: 4,
        }
    }
}

impl AccessParams {
    pub fn validate(&self) -> Result<()> {
        if self.backoff_window == 0 || self.response_window == 0 || self.max_attempts == 0 {
            return Err(Error::config("T, S and M must all be at least 1"));
        }
        Ok(())
    }
}

/// A report waiting for, or in, a data connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Report {
    pub arrival_frame: u64,
    pub payload: u32,
    pub class: u16,
    /// Counts toward measurement-window statistics.
    pub measured: bool,
    /// Made at least one RACH attempt.
    pub accessed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceState {
    Idle,
    Backoff { tx_frame: u64 },
    /// Inside the response window `(request_frame, request_frame + S]`.
    AwaitingGrant { request_frame: u64 },
    Connected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub id: u32,
    pub class: u16,
    pub rach_channel: u8,
    pub state: DeviceState,
    pub attempts_used: u32,
    pub pending: Option<Report>,
    /// Persistent (eUSF periodic) allocation held across reports.
    pub persistent: Option<u64>,
}

/// What happened to a freshly generated report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportReady {
    /// Access attempt started; transmit on the RACH at `tx_frame`.
    Backoff { tx_frame: u64 },
    /// Device already owns a persistent allocation; skip RACH and AGCH.
    Enqueue { allocation: u64 },
    /// Previous report still in access; the new one is dropped.
    Overrun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expiry {
    Retry { tx_frame: u64 },
    Outage,
}

/// Uniform backoff in `0..T` frames.
pub fn draw_backoff(params: &AccessParams, rng: &mut RngStream) -> u32 {
    rng.below(params.backoff_window)
}

impl Device {
    pub fn new(id: u32, class: u16, rach_channel: u8) -> Self {
        Self {
            id,
            class,
            rach_channel,
            state: DeviceState::Idle,
            attempts_used: 0,
            pending: None,
            persistent: None,
        }
    }

    pub fn on_report_ready(
        &mut self,
        report: Report,
        now: u64,
        params: &AccessParams,
        rng: &mut RngStream,
    ) -> ReportReady {
        if let Some(allocation) = self.persistent {
            return ReportReady::Enqueue { allocation };
        }
        if self.state != DeviceState::Idle {
            return ReportReady::Overrun;
        }
        // The earliest RACH opportunity after the report is the next frame.
        let tx_frame = now + 1 + draw_backoff(params, rng) as u64;
        self.state = DeviceState::Backoff { tx_frame };
        self.attempts_used = 1;
        self.pending = Some(report);
        ReportReady::Backoff { tx_frame }
    }

    /// The device has sent its request in the current frame.
    pub fn on_rach_sent(&mut self, now: u64) {
        debug_assert!(matches!(self.state, DeviceState::Backoff { tx_frame } if tx_frame == now));
        self.state = DeviceState::AwaitingGrant { request_frame: now };
        if let Some(r) = self.pending.as_mut() {
            r.accessed = true;
        }
    }

    pub fn expiry_frame(&self, params: &AccessParams) -> Option<u64> {
        match self.state {
            DeviceState::AwaitingGrant { request_frame } => {
                Some(request_frame + params.response_window as u64)
            }
            _ => None,
        }
    }

    pub fn on_grant(&mut self) {
        self.state = DeviceState::Connected;
    }

    pub fn on_s_expiry(&mut self, now: u64, params: &AccessParams, rng: &mut RngStream) -> Expiry {
        if self.attempts_used >= params.max_attempts {
            self.reset();
            return Expiry::Outage;
        }
        self.attempts_used += 1;
        let tx_frame = now + 1 + draw_backoff(params, rng) as u64;
        self.state = DeviceState::Backoff { tx_frame };
        Expiry::Retry { tx_frame }
    }

    /// Return to idle after delivery or outage.
    pub fn reset(&mut self) {
        self.state = if self.persistent.is_some() {
            DeviceState::Connected
        } else {
            DeviceState::Idle
        };
        self.attempts_used = 0;
        self.pending = None;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotOutcome {
    Idle,
    Success(u32),
    Collision(Vec<u32>),
}

/// Slotted-ALOHA resolution of one RACH slot, without capture.
pub fn resolve_rach_slot(transmitters: &[u32]) -> SlotOutcome {
    match transmitters {
        [] => SlotOutcome::Idle,
        [only] => SlotOutcome::Success(*only),
        many => SlotOutcome::Collision(many.to_vec()),
    }
}

/// Logical RACH channel of a device. With `separate_rach` the synchronous
/// (alarm) classes get their own channel of full capacity.
pub fn select_rach_channel(distribution: Distribution, separate_rach: bool) -> u8 {
    if separate_rach && distribution.is_synchronous() {
        1
    } else {
        0
    }
}
