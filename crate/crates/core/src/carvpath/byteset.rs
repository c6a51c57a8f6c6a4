//! Canonical disjoint-interval sets over archive byte positions.
//!
//! A [`ByteSet`] is the carrier of all set algebra in the engine: every
//! interval is half-open `[start, end)`, intervals are sorted, non-empty,
//! and never overlapping or adjacent. All operations preserve that form.

use std::fmt;

/// A canonical set of archive byte locations.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ByteSet {
    intervals: Vec<(u64, u64)>,
}

impl ByteSet {
    /// The empty set.
    pub fn empty() -> Self {
        ByteSet { intervals: Vec::new() }
    }

    /// A set holding a single interval `[start, end)`; empty when `start >= end`.
    pub fn interval(start: u64, end: u64) -> Self {
        if start >= end {
            ByteSet::empty()
        } else {
            ByteSet { intervals: vec![(start, end)] }
        }
    }

    /// Build from arbitrary (possibly overlapping, unsorted) intervals.
    pub fn from_intervals<I: IntoIterator<Item = (u64, u64)>>(iter: I) -> Self {
        let mut raw: Vec<(u64, u64)> = iter.into_iter().filter(|(s, e)| s < e).collect();
        raw.sort_unstable();
        let mut out: Vec<(u64, u64)> = Vec::with_capacity(raw.len());
        for (s, e) in raw {
            match out.last_mut() {
                Some((_, last_end)) if s <= *last_end => {
                    if e > *last_end {
                        *last_end = e;
                    }
                }
                _ => out.push((s, e)),
            }
        }
        ByteSet { intervals: out }
    }

    /// Sorted, disjoint, non-adjacent intervals.
    pub fn intervals(&self) -> &[(u64, u64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Total number of bytes in the set.
    pub fn size(&self) -> u64 {
        self.intervals.iter().map(|(s, e)| e - s).sum()
    }

    /// Lowest byte position in the set, if any.
    pub fn first(&self) -> Option<u64> {
        self.intervals.first().map(|(s, _)| *s)
    }

    pub fn contains(&self, pos: u64) -> bool {
        self.intervals
            .binary_search_by(|&(s, e)| {
                if pos < s {
                    std::cmp::Ordering::Greater
                } else if pos >= e {
                    std::cmp::Ordering::Less
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .is_ok()
    }

    /// Set union.
    pub fn union(&self, other: &ByteSet) -> ByteSet {
        ByteSet::from_intervals(
            self.intervals.iter().chain(other.intervals.iter()).copied(),
        )
    }

    /// Set intersection.
    pub fn intersect(&self, other: &ByteSet) -> ByteSet {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.intervals, &other.intervals);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if lo < hi {
                out.push((lo, hi));
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        ByteSet { intervals: out }
    }

    /// Set difference `self \ other`.
    pub fn subtract(&self, other: &ByteSet) -> ByteSet {
        let mut out = Vec::new();
        let b = &other.intervals;
        let mut j = 0;
        for &(s, e) in &self.intervals {
            let mut cur = s;
            while j < b.len() && b[j].1 <= cur {
                j += 1;
            }
            let mut k = j;
            while cur < e {
                if k >= b.len() || b[k].0 >= e {
                    out.push((cur, e));
                    break;
                }
                if b[k].0 > cur {
                    out.push((cur, b[k].0));
                }
                cur = cur.max(b[k].1);
                if b[k].1 <= e {
                    k += 1;
                } else {
                    break;
                }
            }
        }
        ByteSet { intervals: out }
    }

    /// True when every byte of `self` is in `other`.
    pub fn is_subset_of(&self, other: &ByteSet) -> bool {
        self.subtract(other).is_empty()
    }
}

impl fmt::Display for ByteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (s, e)) in self.intervals.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "[{s},{e})")?;
        }
        write!(f, "}}")
    }
}
