//! Job-picking and actor-selection policy kernel.
//!
//! A policy is a string of letters; each letter contributes one sort key
//! and the next letter only matters on ties. Job picking always ends with
//! a FIFO tie-break on the admission sequence; actor selection ends with
//! the actor name. Densities are compared as exact rationals so chained
//! ties behave deterministically.

use crate::refstack::PolicyStats;
use std::cmp::Ordering;

pub const JOB_POLICY_LETTERS: &str = "RrOHDdWSK";
pub const ACTOR_POLICY_LETTERS: &str = "SVDWC";

/// One comparable key value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PickKey {
    Int(u64),
    /// Absent sorts last (treated as larger than any value).
    OptInt(Option<u64>),
    /// Exact rational `num / den`; a zero denominator is normalized to 0.
    Ratio { num: u64, den: u64 },
}

impl PickKey {
    fn ratio(num: u64, den: u64) -> PickKey {
        if den == 0 {
            PickKey::Ratio { num: 0, den: 1 }
        } else {
            PickKey::Ratio { num, den }
        }
    }

    /// Natural ascending comparison.
    pub fn cmp_value(&self, other: &PickKey) -> Ordering {
        match (self, other) {
            (PickKey::Int(a), PickKey::Int(b)) => a.cmp(b),
            (PickKey::OptInt(a), PickKey::OptInt(b)) => match (a, b) {
                (Some(a), Some(b)) => a.cmp(b),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            },
            (PickKey::Ratio { num: n1, den: d1 }, PickKey::Ratio { num: n2, den: d2 }) => {
                (u128::from(*n1) * u128::from(*d2)).cmp(&(u128::from(*n2) * u128::from(*d1)))
            }
            _ => unreachable!("keys for one letter share a representation"),
        }
    }
}

/// Everything the job letters can be computed from.
#[derive(Clone, Copy, Debug)]
pub struct JobPickInputs {
    pub stats: PolicyStats,
    /// Highest per-byte reference count over the entity's data bytes.
    pub max_refcount: u64,
    /// Archive offset of the first byte still needed by hashing.
    pub next_hash_offset: Option<u64>,
    /// Entity size including sparse bytes.
    pub total_size: u64,
    pub sequence: u64,
}

/// Key for one job letter, plus whether larger values are preferred.
pub fn job_key(inputs: &JobPickInputs, letter: char) -> Option<(PickKey, bool)> {
    let s = &inputs.stats;
    Some(match letter {
        'R' => (PickKey::Int(inputs.max_refcount), true),
        'r' => (PickKey::Int(s.bytes_at_count_1), true),
        'O' => (PickKey::OptInt(s.min_data_offset), false),
        'H' => (PickKey::OptInt(inputs.next_hash_offset), false),
        'D' => (PickKey::ratio(s.bytes_at_global_max_count, s.data_bytes), false),
        'd' => (PickKey::ratio(s.bytes_not_count_1, s.data_bytes), false),
        'W' => (PickKey::ratio(s.weighted_count_sum, s.data_bytes), false),
        'S' => (PickKey::Int(inputs.total_size), false),
        _ => return None,
    })
}

/// Chained comparison of two jobs; `Less` means `a` is picked first.
/// `K` letters contribute no ordering. Ends with the FIFO tie-break.
pub fn compare_jobs(a: &JobPickInputs, b: &JobPickInputs, policy: &str) -> Ordering {
    for letter in policy.chars() {
        if letter == 'K' {
            continue;
        }
        let (ka, prefer_largest) = job_key(a, letter).expect("policy validated");
        let (kb, _) = job_key(b, letter).expect("policy validated");
        let ord = if prefer_largest {
            kb.cmp_value(&ka)
        } else {
            ka.cmp_value(&kb)
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    a.sequence.cmp(&b.sequence)
}

/// Everything the actor letters can be computed from.
#[derive(Clone, Debug)]
pub struct ActorPickInputs {
    pub name: String,
    pub weight: u64,
    pub set_size: u64,
    pub set_volume: u64,
}

/// Key for one actor letter; larger is always preferred, and a zero
/// volume with a non-zero count compares as infinite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActorKey {
    Int(u64),
    Ratio { num: u128, den: u128 },
    Infinite,
}

impl ActorKey {
    fn ratio(num: u128, den: u128) -> ActorKey {
        if den == 0 {
            if num == 0 {
                ActorKey::Ratio { num: 0, den: 1 }
            } else {
                ActorKey::Infinite
            }
        } else {
            ActorKey::Ratio { num, den }
        }
    }

    fn cmp_value(&self, other: &ActorKey) -> Ordering {
        match (self, other) {
            (ActorKey::Int(a), ActorKey::Int(b)) => a.cmp(b),
            (ActorKey::Infinite, ActorKey::Infinite) => Ordering::Equal,
            (ActorKey::Infinite, _) => Ordering::Greater,
            (_, ActorKey::Infinite) => Ordering::Less,
            (ActorKey::Ratio { num: n1, den: d1 }, ActorKey::Ratio { num: n2, den: d2 }) => {
                // Numerators fit in 64 bits in practice; saturate to keep
                // the cross products inside u128.
                let n1 = (*n1).min(u128::from(u64::MAX));
                let n2 = (*n2).min(u128::from(u64::MAX));
                (n1 * d2).cmp(&(n2 * d1))
            }
            _ => unreachable!("keys for one letter share a representation"),
        }
    }
}

pub fn actor_key(inputs: &ActorPickInputs, letter: char) -> Option<ActorKey> {
    Some(match letter {
        'S' => ActorKey::Int(inputs.set_size),
        'V' => ActorKey::Int(inputs.set_volume),
        'D' => ActorKey::ratio(u128::from(inputs.set_size), u128::from(inputs.set_volume)),
        'W' => ActorKey::Int(inputs.weight),
        'C' => ActorKey::ratio(
            u128::from(inputs.weight) * u128::from(inputs.set_size),
            u128::from(inputs.set_volume),
        ),
        _ => return None,
    })
}

/// Chained comparison of two actors; `Less` means `a` is selected.
/// Larger key values win; the final tie-break is the name, ascending.
pub fn compare_actors(a: &ActorPickInputs, b: &ActorPickInputs, policy: &str) -> Ordering {
    for letter in policy.chars() {
        let ka = actor_key(a, letter).expect("policy validated");
        let kb = actor_key(b, letter).expect("policy validated");
        let ord = kb.cmp_value(&ka);
        if ord != Ordering::Equal {
            return ord;
        }
    }
    a.name.cmp(&b.name)
}

pub fn validate_job_policy(policy: &str) -> Result<(), char> {
    match policy.chars().find(|c| !JOB_POLICY_LETTERS.contains(*c)) {
        Some(bad) => Err(bad),
        None => Ok(()),
    }
}

pub fn validate_actor_policy(policy: &str) -> Result<(), char> {
    match policy.chars().find(|c| !ACTOR_POLICY_LETTERS.contains(*c)) {
        Some(bad) => Err(bad),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(stats: PolicyStats, max: u64, hash: Option<u64>, size: u64, seq: u64) -> JobPickInputs {
        JobPickInputs {
            stats,
            max_refcount: max,
            next_hash_offset: hash,
            total_size: size,
            sequence: seq,
        }
    }

    #[test]
    fn densities_compare_as_exact_rationals() {
        // 1/3 vs 2/6 tie, then 1/3 vs 3/8.
        let a = PickKey::ratio(1, 3);
        let b = PickKey::ratio(2, 6);
        let c = PickKey::ratio(3, 8);
        assert_eq!(a.cmp_value(&b), Ordering::Equal);
        assert_eq!(a.cmp_value(&c), Ordering::Less);
    }

    #[test]
    fn zero_data_bytes_is_density_zero() {
        assert_eq!(PickKey::ratio(0, 0), PickKey::Ratio { num: 0, den: 1 });
    }

    #[test]
    fn absent_offsets_sort_last() {
        let some = PickKey::OptInt(Some(10));
        let none = PickKey::OptInt(None);
        assert_eq!(some.cmp_value(&none), Ordering::Less);
    }

    #[test]
    fn worked_policy_example() {
        // Stack S0 = [0,10), S1 = [0,5); job A = 0+10, job B = 5+5.
        let a = inputs(
            PolicyStats {
                bytes_at_count_1: 5,
                bytes_at_global_max_count: 5,
                bytes_not_count_1: 5,
                weighted_count_sum: 15,
                data_bytes: 10,
                min_data_offset: Some(0),
            },
            2,
            Some(0),
            10,
            0,
        );
        let b = inputs(
            PolicyStats {
                bytes_at_count_1: 5,
                bytes_at_global_max_count: 0,
                bytes_not_count_1: 0,
                weighted_count_sum: 5,
                data_bytes: 5,
                min_data_offset: Some(5),
            },
            1,
            Some(5),
            5,
            1,
        );
        assert_eq!(compare_jobs(&a, &b, "R"), Ordering::Less, "R prefers A");
        assert_eq!(compare_jobs(&a, &b, "d"), Ordering::Greater, "d prefers B");
        assert_eq!(compare_jobs(&a, &b, "W"), Ordering::Greater, "W prefers B");
        // Equal r keys (5 vs 5): FIFO tie-break keeps A first.
        assert_eq!(compare_jobs(&a, &b, "r"), Ordering::Less);
    }

    #[test]
    fn actor_worked_example() {
        let x = ActorPickInputs { name: "x".into(), weight: 100, set_size: 20, set_volume: 1000 };
        let y = ActorPickInputs { name: "y".into(), weight: 400, set_size: 15, set_volume: 3000 };
        // C keys tie at 2.0; name breaks the tie toward x.
        assert_eq!(compare_actors(&x, &y, "C"), Ordering::Less);
        // Chained CW resolves to y on weight.
        assert_eq!(compare_actors(&x, &y, "CW"), Ordering::Greater);
    }

    #[test]
    fn zero_volume_with_jobs_is_infinite() {
        let a = ActorPickInputs { name: "a".into(), weight: 1, set_size: 3, set_volume: 0 };
        let b = ActorPickInputs { name: "b".into(), weight: 1000, set_size: 1000, set_volume: 1 };
        assert_eq!(compare_actors(&a, &b, "C"), Ordering::Less);
        assert_eq!(compare_actors(&a, &b, "D"), Ordering::Less);
    }

    #[test]
    fn validation_rejects_unknown_letters() {
        assert_eq!(validate_job_policy("dSK"), Ok(()));
        assert_eq!(validate_job_policy("dXz"), Err('X'));
        assert_eq!(validate_actor_policy("CW"), Ok(()));
        assert_eq!(validate_actor_policy("CR"), Err('R'));
    }
}
