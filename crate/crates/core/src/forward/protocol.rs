use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version of the canonical channel ordering; bump on any change.
pub const PROTOCOL_VERSION: u32 = 1;

/// Default injected current in amperes.
pub const DEFAULT_CURRENT: f64 = 1e-3;

/// Ordered electrode pair: current enters at `pos` and leaves at `neg`, or
/// the voltage is read as `u(pos) - u(neg)`. Indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ElectrodePair {
    pub pos: usize,
    pub neg: usize,
}

impl ElectrodePair {
    pub const fn new(pos: usize, neg: usize) -> Self {
        Self { pos, neg }
    }

    pub fn adjacent(k: usize, n: usize) -> Self {
        Self::new(k % n, (k + 1) % n)
    }

    pub fn contains(&self, e: usize) -> bool {
        self.pos == e || self.neg == e
    }

    pub fn reversed(self) -> Self {
        Self::new(self.neg, self.pos)
    }

    pub fn shares_electrode(&self, other: &ElectrodePair) -> bool {
        self.contains(other.pos) || self.contains(other.neg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Channel {
    pub drive: ElectrodePair,
    pub measure: ElectrodePair,
}

/// Adjacent-drive / adjacent-measurement protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    version: u32,
    electrode_count: usize,
    current: f64,
    channels: Vec<Channel>,
}

impl Protocol {
    /// Canonical reciprocity-reduced protocol: `n (n - 3) / 2` channels
    /// (104 for 16 electrodes).
    ///
    /// Drive pairs (E1,E2), (E2,E3), ... (En,E1); for each, measurement pairs
    /// (Ek,Ek+1) in increasing k that avoid the drive electrodes, keeping an
    /// entry only when its reciprocal has not been listed earlier.
    pub fn adjacent(electrode_count: usize) -> Self {
        let full = Self::extended(electrode_count);
        let mut seen = std::collections::HashSet::new();
        let channels = full
            .channels
            .into_iter()
            .filter(|c| {
                let keep = !seen.contains(&(c.measure, c.drive));
                seen.insert((c.drive, c.measure));
                keep
            })
            .collect();
        Self {
            channels,
            ..full
        }
    }

    /// All `n (n - 3)` drive/measure combinations, reciprocal duplicates kept.
    pub fn extended(electrode_count: usize) -> Self {
        let n = electrode_count;
        let mut channels = Vec::with_capacity(n * n.saturating_sub(3));
        for d in 0..n {
            let drive = ElectrodePair::adjacent(d, n);
            for m in 0..n {
                let measure = ElectrodePair::adjacent(m, n);
                if !measure.shares_electrode(&drive) {
                    channels.push(Channel { drive, measure });
                }
            }
        }
        Self {
            version: PROTOCOL_VERSION,
            electrode_count: n,
            current: DEFAULT_CURRENT,
            channels,
        }
    }

    pub fn with_current(mut self, current: f64) -> Self {
        self.current = current;
        self
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn electrode_count(&self) -> usize {
        self.electrode_count
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Index of the channel equal to `(drive, measure)` or its reciprocal.
    pub fn index_map(&self) -> HashMap<(ElectrodePair, ElectrodePair), usize> {
        let mut map = HashMap::with_capacity(2 * self.channels.len());
        for (i, c) in self.channels.iter().enumerate() {
            map.insert((c.drive, c.measure), i);
            map.entry((c.measure, c.drive)).or_insert(i);
        }
        map
    }

    /// Machine-readable table with 1-based electrode labels.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "# protocol_version={} electrodes={} channels={}\n\
             index,drive_pos,drive_neg,meas_pos,meas_neg\n",
            self.version,
            self.electrode_count,
            self.channels.len()
        );
        for (i, c) in self.channels.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{}",
                c.drive.pos + 1,
                c.drive.neg + 1,
                c.measure.pos + 1,
                c.measure.neg + 1
            );
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let fmt_err = |detail: String| Error::Format {
            what: "protocol table",
            detail,
        };
        let mut version = None;
        let mut electrodes = None;
        let mut channels = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("protocol_version", v)) => version = v.parse().ok(),
                        Some(("electrodes", v)) => electrodes = v.parse().ok(),
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() || line.starts_with("index") {
                continue;
            }
            let cols: Vec<usize> = line
                .split(',')
                .map(|c| c.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| fmt_err(format!("line {}: {e}", lineno + 1)))?;
            if cols.len() != 5 || cols[1..].contains(&0) {
                return Err(fmt_err(format!("line {}: expected 5 columns", lineno + 1)));
            }
            if cols[0] != channels.len() {
                return Err(fmt_err(format!("line {}: index out of order", lineno + 1)));
            }
            channels.push(Channel {
                drive: ElectrodePair::new(cols[1] - 1, cols[2] - 1),
                measure: ElectrodePair::new(cols[3] - 1, cols[4] - 1),
            });
        }
        let version = version.ok_or_else(|| fmt_err("missing protocol_version".into()))?;
        let electrode_count =
            electrodes.ok_or_else(|| fmt_err("missing electrode count".into()))?;
        Ok(Self {
            version,
            electrode_count,
            current: DEFAULT_CURRENT,
            channels,
        })
    }

    /// Distinct ordered pairs appearing in the protocol.
    pub fn pairs(&self) -> Vec<ElectrodePair> {
        let mut pairs: Vec<ElectrodePair> = Vec::new();
        for c in &self.channels {
            for p in [c.drive, c.measure] {
                if !pairs.contains(&p) {
                    pairs.push(p);
                }
            }
        }
        pairs
    }
}
