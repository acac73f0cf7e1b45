//! Age bins and bin schemes.

use crate::error::{Error, Result};

/// An inclusive age range; `hi = None` means open-ended (e.g. 60+).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgeBin {
    pub lo: u32,
    pub hi: Option<u32>,
}

impl AgeBin {
    pub fn contains(&self, age: u32) -> bool {
        age >= self.lo && self.hi.map_or(true, |hi| age <= hi)
    }

    /// Human-readable label: "18-22", or "60+" for the open bin.
    pub fn label(&self) -> String {
        match self.hi {
            Some(hi) => format!("{}-{hi}", self.lo),
            None => format!("{}+", self.lo),
        }
    }
}

/// An ordered, non-overlapping list of age bins. Schemes may leave gaps
/// between bins (the adience scheme does); assignment inside a gap is an
/// error surfaced to the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinScheme {
    name: String,
    bins: Vec<AgeBin>,
}

impl BinScheme {
    pub fn new(name: impl Into<String>, bins: Vec<AgeBin>) -> Result<BinScheme> {
        let name = name.into();
        if bins.is_empty() {
            return Err(Error::config(format!("bin scheme '{name}' has no bins")));
        }
        for (i, bin) in bins.iter().enumerate() {
            if let Some(hi) = bin.hi {
                if hi < bin.lo {
                    return Err(Error::config(format!(
                        "bin {i} of '{name}' is inverted: {}..{hi}",
                        bin.lo
                    )));
                }
            } else if i + 1 != bins.len() {
                return Err(Error::config(format!(
                    "bin {i} of '{name}' is open-ended but not last"
                )));
            }
            if i > 0 {
                let prev = &bins[i - 1];
                let prev_hi = prev.hi.expect("only the last bin may be open");
                if bin.lo <= prev_hi {
                    return Err(Error::config(format!(
                        "bins {} and {i} of '{name}' overlap or are out of order",
                        i - 1
                    )));
                }
            }
        }
        Ok(BinScheme { name, bins })
    }

    /// The ten training classes: 0-2, 3-6, 7-12, 13-17, 18-22, 23-26, 27-33,
    /// 34-44, 45-59, 60+.
    pub fn training() -> BinScheme {
        let bins = [
            (0, Some(2)),
            (3, Some(6)),
            (7, Some(12)),
            (13, Some(17)),
            (18, Some(22)),
            (23, Some(26)),
            (27, Some(33)),
            (34, Some(44)),
            (45, Some(59)),
            (60, None),
        ];
        BinScheme::new("training", bins.iter().map(|&(lo, hi)| AgeBin { lo, hi }).collect())
            .expect("training scheme is well-formed")
    }

    /// The eight adience benchmark groups, with gaps between them: 0-2, 4-6,
    /// 8-13, 15-20, 25-32, 38-43, 48-53, 60+.
    pub fn adience() -> BinScheme {
        let bins = [
            (0, Some(2)),
            (4, Some(6)),
            (8, Some(13)),
            (15, Some(20)),
            (25, Some(32)),
            (38, Some(43)),
            (48, Some(53)),
            (60, None),
        ];
        BinScheme::new("adience", bins.iter().map(|&(lo, hi)| AgeBin { lo, hi }).collect())
            .expect("adience scheme is well-formed")
    }

    pub fn parse(name: &str) -> Result<BinScheme> {
        match name {
            "training" => Ok(BinScheme::training()),
            "adience" => Ok(BinScheme::adience()),
            other => Err(Error::config(format!(
                "unknown bin scheme '{other}' (expected training or adience)"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bins(&self) -> &[AgeBin] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// True when consecutive bins leave no ages uncovered.
    pub fn is_contiguous(&self) -> bool {
        self.bins.windows(2).all(|pair| match pair[0].hi {
            Some(hi) => pair[1].lo == hi + 1,
            None => false,
        })
    }

    /// Index of the bin containing `age`, or a no-bin error for gap ages.
    pub fn assign(&self, age: u32) -> Result<usize> {
        self.bins
            .iter()
            .position(|bin| bin.contains(age))
            .ok_or(Error::NoBin { age, scheme: self.name.clone() })
    }

    pub fn labels(&self) -> Vec<String> {
        self.bins.iter().map(AgeBin::label).collect()
    }
}
