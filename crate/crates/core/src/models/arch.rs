//! Reference layer tables for the five nexus architectures.
//!
//! Every table satisfies the dimensional contract by valid-convolution
//! arithmetic (`S - k + 1` per convolution): the first half maps 33x33
//! inputs to 15x15, the second half maps 15x15 to 3x3 with 128 maps in
//! total, giving the 1152 features the output layer reads.

use std::fmt;
use std::str::FromStr;

use crate::error::{param_err, Error};

/// Spatial extent of the large input patch.
pub const BIG_PATCH: usize = 33;
/// Spatial extent of the small co-centric patch and of the first half's output.
pub const SMALL_PATCH: usize = 15;
/// Input modalities (T1, T1c, T2, T2-Flair).
pub const MODALITIES: usize = 4;
/// Output classes: healthy, necrosis, edema, non-enhancing, enhancing.
pub const CLASSES: usize = 5;
/// Planes entering the second half: first-half maps plus the modalities.
pub const SECOND_HALF_PLANES: usize = CLASSES + MODALITIES;
/// Maps (summed over paths) at the end of the second half.
pub const FINAL_MAPS: usize = 128;
/// Features entering the output layer: 3 x 3 x 128.
pub const FEATURES: usize = 1152;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// Linear nexus: two plain CNNs in cascade.
    Ln,
    /// Two-path nexus: both halves split into a large- and a small-kernel path.
    Tpn,
    /// Two-path first half, linear second half.
    TLinear,
    /// Inception nexus: three parallel paths in both halves.
    In,
    /// Inception first half, linear second half.
    ILinear,
}

impl Architecture {
    pub const ALL: [Architecture; 5] =
        [Architecture::Ln, Architecture::Tpn, Architecture::TLinear, Architecture::In, Architecture::ILinear];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Ln => "LN",
            Architecture::Tpn => "TPN",
            Architecture::TLinear => "TLinear",
            Architecture::In => "IN",
            Architecture::ILinear => "ILinear",
        }
    }

    pub fn spec(self) -> ArchSpec {
        let (first, second) = match self {
            Architecture::Ln => (linear_first(), linear_second()),
            Architecture::Tpn => (two_path_first(), two_path_second()),
            Architecture::TLinear => (two_path_first(), linear_second()),
            Architecture::In => (inception_first(), inception_second()),
            Architecture::ILinear => (inception_first(), linear_second()),
        };
        ArchSpec { name: self.name().to_string(), first, second }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| param_err!("unknown architecture {s:?}; expected one of LN, TPN, TLinear, IN, ILinear"))
    }
}

/// Number of maps a convolution produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Width {
    /// The configurable hidden width.
    Hidden,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// conv -> batch-norm -> ReLU -> dropout
    Conv { kernel: usize, width: Width },
    Pool { size: usize, stride: usize },
}

/// One half of a nexus: parallel paths whose outputs are channel-concatenated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HalfSpec {
    pub paths: Vec<Vec<Stage>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub name: String,
    pub first: HalfSpec,
    pub second: HalfSpec,
}

const fn conv(kernel: usize) -> Stage {
    Stage::Conv { kernel, width: Width::Hidden }
}

const fn conv_final(kernel: usize, maps: usize) -> Stage {
    Stage::Conv { kernel, width: Width::Fixed(maps) }
}

// 33 -13-> 21 -7-> 15
fn linear_first() -> HalfSpec {
    HalfSpec { paths: vec![vec![conv(13), conv(7)]] }
}

// 15 -7-> 9 -5-> 5 -3-> 3
fn linear_second() -> HalfSpec {
    HalfSpec { paths: vec![vec![conv(7), conv(5), conv_final(3, FINAL_MAPS)]] }
}

// A: 33 -13-> 21 -7-> 15;  B: 33 -7-> 27 -3-> 25 -pool11-> 15
fn two_path_first() -> HalfSpec {
    HalfSpec {
        paths: vec![vec![conv(13), conv(7)], vec![conv(7), conv(3), Stage::Pool { size: 11, stride: 1 }]],
    }
}

// A: 15 -7-> 9 -7-> 3;  B: 15 -5-> 11 -5-> 7 -5-> 3
fn two_path_second() -> HalfSpec {
    HalfSpec {
        paths: vec![
            vec![conv(7), conv_final(7, FINAL_MAPS / 2)],
            vec![conv(5), conv(5), conv_final(5, FINAL_MAPS / 2)],
        ],
    }
}

// 33 -13-> 21 -7-> 15;  33 -9-> 25 -11-> 15;  33 -5-> 29 -5-> 25 -5-> 21 -7-> 15
fn inception_first() -> HalfSpec {
    HalfSpec {
        paths: vec![
            vec![conv(13), conv(7)],
            vec![conv(9), conv(11)],
            vec![conv(5), conv(5), conv(5), conv(7)],
        ],
    }
}

// 15 -7-> 9 -7-> 3;  15 -9-> 7 -5-> 3;  15 -5-> 11 -5-> 7 -5-> 3
fn inception_second() -> HalfSpec {
    HalfSpec {
        paths: vec![
            vec![conv(7), conv_final(7, 43)],
            vec![conv(9), conv_final(5, 43)],
            vec![conv(5), conv(5), conv_final(5, 42)],
        ],
    }
}
