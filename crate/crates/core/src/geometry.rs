//! TDMA multiframe layout.
//!
//! A multiframe lasts 240 ms and holds 12 radio blocks of 4 TDMA frames.
//! Frames past the 48th in a multiframe (only present when
//! `frames_per_multiframe > 48`) are idle and belong to no block.
//!
//! Blocks are also numbered globally: block `u` is block `u % 12` of
//! multiframe `u / 12`. The data plane and the USF calendar work in global
//! block numbers so that "block k+1" never needs wrap-around handling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLOCKS_PER_MULTIFRAME: u32 = 12;
pub const FRAMES_PER_BLOCK: u32 = 4;
pub const FRAMES_IN_BLOCKS: u32 = BLOCKS_PER_MULTIFRAME * FRAMES_PER_BLOCK;
pub const MULTIFRAME_SECONDS: f64 = 0.24;
/// USF values 1..=7 are assignable; 0 is reserved for RACH.
pub const USF_VALUES: u8 = 7;

/// A point in TDMA time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FramePosition {
    pub frame: u64,
    pub multiframe: u64,
    /// Block within the multiframe; `None` for idle tail frames.
    pub block: Option<u32>,
    pub frame_in_block: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub frames_per_multiframe: u32,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            frames_per_multiframe: FRAMES_IN_BLOCKS,
        }
    }
}

impl Geometry {
    pub fn new(frames_per_multiframe: u32) -> Result<Self> {
        let g = Self {
            frames_per_multiframe,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_per_multiframe < FRAMES_IN_BLOCKS {
            return Err(Error::config(format!(
                "frames_per_multiframe must be at least {FRAMES_IN_BLOCKS}, got {}",
                self.frames_per_multiframe
            )));
        }
        Ok(())
    }

    /// Seconds per TDMA frame (5 ms with the 48-frame layout).
    pub fn frame_duration(&self) -> f64 {
        MULTIFRAME_SECONDS / self.frames_per_multiframe as f64
    }

    pub fn frames_per_second(&self) -> f64 {
        1.0 / self.frame_duration()
    }

    pub fn seconds_to_frames(&self, seconds: f64) -> u64 {
        (seconds / self.frame_duration()).round().max(0.0) as u64
    }

    pub fn frames_to_seconds(&self, frames: u64) -> f64 {
        frames as f64 * self.frame_duration()
    }

    /// Index of the one-second window containing `frame`, using exact
    /// integer arithmetic.
    pub fn second_of(&self, frame: u64) -> u64 {
        frame * 240 / (1000 * self.frames_per_multiframe as u64)
    }

    pub fn locate(&self, frame: i64) -> Result<FramePosition> {
        if frame < 0 {
            return Err(Error::domain(format!("negative frame index {frame}")));
        }
        let frame = frame as u64;
        let fpm = self.frames_per_multiframe as u64;
        let multiframe = frame / fpm;
        let offset = (frame % fpm) as u32;
        let (block, frame_in_block) = if offset < FRAMES_IN_BLOCKS {
            (Some(offset / FRAMES_PER_BLOCK), offset % FRAMES_PER_BLOCK)
        } else {
            (None, offset - FRAMES_IN_BLOCKS)
        };
        Ok(FramePosition {
            frame,
            multiframe,
            block,
            frame_in_block,
        })
    }

    /// Inverse of [`Geometry::locate`].
    pub fn frame_of(&self, pos: &FramePosition) -> u64 {
        let base = pos.multiframe * self.frames_per_multiframe as u64;
        match pos.block {
            Some(b) => base + (b * FRAMES_PER_BLOCK + pos.frame_in_block) as u64,
            None => base + (FRAMES_IN_BLOCKS + pos.frame_in_block) as u64,
        }
    }

    /// Global block containing `frame`, if it is not an idle frame.
    pub fn block_of(&self, frame: u64) -> Option<u64> {
        let fpm = self.frames_per_multiframe as u64;
        let offset = frame % fpm;
        if offset >= FRAMES_IN_BLOCKS as u64 {
            return None;
        }
        Some((frame / fpm) * BLOCKS_PER_MULTIFRAME as u64 + offset / FRAMES_PER_BLOCK as u64)
    }

    /// Global block whose last frame is `frame`.
    pub fn block_ending_at(&self, frame: u64) -> Option<u64> {
        let offset = (frame % self.frames_per_multiframe as u64) as u32;
        if offset < FRAMES_IN_BLOCKS && offset % FRAMES_PER_BLOCK == FRAMES_PER_BLOCK - 1 {
            self.block_of(frame)
        } else {
            None
        }
    }

    pub fn block_start_frame(&self, global_block: u64) -> u64 {
        let mf = global_block / BLOCKS_PER_MULTIFRAME as u64;
        let b = global_block % BLOCKS_PER_MULTIFRAME as u64;
        mf * self.frames_per_multiframe as u64 + b * FRAMES_PER_BLOCK as u64
    }

    /// First uplink block a connection granted at `frame` may use: its USF
    /// has to be announced in a downlink block that starts after `frame`.
    pub fn first_usable_block(&self, frame: u64) -> u64 {
        let mut next = self.block_of(frame).map_or_else(
            || (frame / self.frames_per_multiframe as u64 + 1) * BLOCKS_PER_MULTIFRAME as u64,
            |u| u + 1,
        );
        // `next` is the first downlink block starting strictly after `frame`
        // (idle frames skip to the next multiframe).
        while self.block_start_frame(next) <= frame {
            next += 1;
        }
        next + 1
    }
}

pub fn split_block(global_block: u64) -> (u64, u32) {
    (
        global_block / BLOCKS_PER_MULTIFRAME as u64,
        (global_block % BLOCKS_PER_MULTIFRAME as u64) as u32,
    )
}

/// Channel organisation of the single carrier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPlan {
    pub n_pdch: u8,
    pub signaling_pdch: u8,
    pub data_pdchs: Vec<u8>,
    /// AGCH blocks on the signaling PDCH per multiframe; they occupy the
    /// last blocks of the multiframe (5..=11 by default, after BCCH + PCH).
    pub agch_blocks_per_multiframe: u32,
    pub rach_slots_per_frame: u32,
}

impl Default for ChannelPlan {
    fn default() -> Self {
        Self {
            n_pdch: 8,
            signaling_pdch: 0,
            data_pdchs: (1..8).collect(),
            agch_blocks_per_multiframe: 7,
            rach_slots_per_frame: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgchBlockId {
    pub multiframe: u64,
    /// Ordinal among the AGCH blocks of the multiframe.
    pub index: u32,
}

impl ChannelPlan {
    pub fn with_pdchs(n_pdch: u8) -> Self {
        Self {
            n_pdch,
            data_pdchs: (1..n_pdch).collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.agch_blocks_per_multiframe > BLOCKS_PER_MULTIFRAME {
            return Err(Error::config(format!(
                "agch_blocks_per_multiframe must be in [0, 12], got {}",
                self.agch_blocks_per_multiframe
            )));
        }
        if self.signaling_pdch >= self.n_pdch {
            return Err(Error::config("signaling_pdch outside the carrier"));
        }
        if self.data_pdchs.contains(&self.signaling_pdch) {
            return Err(Error::config("data PDCHs must not include the signaling PDCH"));
        }
        if self.data_pdchs.iter().any(|&p| p >= self.n_pdch) {
            return Err(Error::config("data PDCH outside the carrier"));
        }
        if self.rach_slots_per_frame == 0 {
            return Err(Error::config("rach_slots_per_frame must be positive"));
        }
        Ok(())
    }

    pub fn first_agch_block(&self) -> u32 {
        BLOCKS_PER_MULTIFRAME - self.agch_blocks_per_multiframe
    }

    pub fn is_agch_block(&self, block: u32) -> bool {
        block >= self.first_agch_block() && block < BLOCKS_PER_MULTIFRAME
    }
}

/// AGCH messages per second the plan can carry.
pub fn agch_capacity_per_second(plan: &ChannelPlan) -> f64 {
    plan.agch_blocks_per_multiframe as f64 / MULTIFRAME_SECONDS
}

/// AGCH block completed by `frame`, if any.
pub fn is_agch_block_boundary(
    frame: u64,
    plan: &ChannelPlan,
    geometry: &Geometry,
) -> Option<AgchBlockId> {
    let u = geometry.block_ending_at(frame)?;
    let (multiframe, block) = split_block(u);
    plan.is_agch_block(block).then(|| AgchBlockId {
        multiframe,
        index: block - plan.first_agch_block(),
    })
}
