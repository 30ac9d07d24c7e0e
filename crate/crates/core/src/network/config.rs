use alloc::string::String;

use crate::attention::{AttentionConfig, QkvMode};
use crate::error::{Error, Result};
use crate::windowing::{RegionKind, RegionShape};

/// Number of resolution scales of the encoder.
pub const SCALES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub depths: [usize; SCALES],
    pub channels: usize,
    pub window: usize,
    pub heads: [usize; SCALES],
    pub select: [usize; SCALES],
    pub radius: usize,
    pub ffn_expansion: usize,
    pub msr: bool,
    pub qkv: QkvMode,
}

impl ModelConfig {
    fn preset(name: &str, depths: [usize; SCALES], channels: usize) -> Self {
        ModelConfig {
            name: name.into(),
            depths,
            channels,
            window: 8,
            heads: [1, 2, 4, 8],
            select: [1, 1, 1, 1],
            radius: 2,
            ffn_expansion: 2,
            msr: true,
            qkv: QkvMode::Project,
        }
    }

    pub fn tiny() -> Self {
        Self::preset("RWF-T", [2, 4, 6, 8], 32)
    }

    pub fn small() -> Self {
        Self::preset("RWF-S", [2, 4, 4, 8], 48)
    }

    pub fn base() -> Self {
        Self::preset("RWF-B", [2, 4, 6, 8], 64)
    }

    /// Desk-scale preset used by the tests and the smoke training run.
    pub fn desk() -> Self {
        ModelConfig {
            window: 4,
            radius: 1,
            ..Self::preset("RWF-desk", [1, 1, 1, 1], 8)
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "RWF-T" => Some(Self::tiny()),
            "RWF-S" => Some(Self::small()),
            "RWF-B" => Some(Self::base()),
            "RWF-desk" => Some(Self::desk()),
            _ => None,
        }
    }

    /// Channels at encoder scale `s`: `2^s · C`.
    pub fn width(&self, scale: usize) -> usize {
        self.channels << scale
    }

    /// Spatial multiple the input is padded to.
    pub fn pad_multiple(&self) -> usize {
        self.window << (SCALES - 1)
    }

    pub fn region(&self, block: usize) -> RegionShape {
        let kind = if block % 2 == 0 { RegionKind::Cross } else { RegionKind::Rectangle };
        RegionShape { kind, radius: self.radius }
    }

    pub fn shift(&self, block: usize) -> usize {
        if block % 2 == 0 {
            0
        } else {
            self.window / 2
        }
    }

    /// Attention settings of block `block` at scale `scale`.
    pub fn attention(&self, scale: usize, block: usize) -> AttentionConfig {
        AttentionConfig {
            window: self.window,
            heads: self.heads[scale],
            select: self.select[scale],
            region: self.region(block),
            shift: self.shift(block),
            qkv: self.qkv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depths.iter().any(|&d| d == 0) {
            return Err(Error::config("every depth must be at least 1"));
        }
        if self.channels == 0 || self.channels % 2 != 0 {
            return Err(Error::config("base channels must be even and positive"));
        }
        if self.window == 0 || self.radius == 0 || self.ffn_expansion == 0 {
            return Err(Error::config("window, radius and expansion must be positive"));
        }
        for s in 0..SCALES {
            let half = self.width(s) / 2;
            let d = match self.qkv {
                QkvMode::Project => half,
                QkvMode::Split if half % 3 == 0 => half / 3,
                QkvMode::Split => return Err(Error::config("split Q/K/V needs branch channels divisible by 3")),
            };
            if self.heads[s] == 0 || d % self.heads[s] != 0 {
                return Err(Error::config("heads must divide the attention width at every scale"));
            }
            for block in 0..self.depths[s].min(2) {
                let r_n = self.region(block).candidate_count();
                if self.select[s] == 0 || self.select[s] > r_n {
                    return Err(Error::config("selected window count must satisfy 1 <= r_i <= r_n"));
                }
            }
        }
        Ok(())
    }
}
