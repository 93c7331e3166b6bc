//! Bitset event domains for the exact search, which only engages on
//! instances whose event line fits in a machine word.

use crate::model::Event;

/// Largest event line the branch-and-bound search accepts.
pub const MAX_EVENTS: usize = 64;

/// Bits for events greater than or equal to `e`.
pub fn mask_ge(e: Event) -> u64 {
    if e <= 1 {
        u64::MAX
    } else if e > MAX_EVENTS {
        0
    } else {
        u64::MAX << (e - 1)
    }
}

/// Bits for events less than or equal to `e`.
pub fn mask_le(e: Event) -> u64 {
    if e == 0 {
        0
    } else if e >= MAX_EVENTS {
        u64::MAX
    } else {
        u64::MAX >> (MAX_EVENTS - e)
    }
}

/// A set of candidate events, one bit per event; event `e` is bit `e - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Domain(u64);

impl Domain {
    pub fn empty() -> Self {
        Domain(0)
    }

    pub fn range(lo: Event, hi: Event) -> Self {
        debug_assert!(lo >= 1 && hi <= MAX_EVENTS);
        if lo > hi {
            return Domain(0);
        }
        Domain(mask_ge(lo) & mask_le(hi))
    }

    pub fn singleton(e: Event) -> Self {
        debug_assert!(e >= 1 && e <= MAX_EVENTS);
        Domain(1u64 << (e - 1))
    }

    pub fn insert(&mut self, e: Event) {
        debug_assert!(e >= 1 && e <= MAX_EVENTS);
        self.0 |= 1u64 << (e - 1);
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    /// Smallest event in the domain; the domain must be nonempty.
    pub fn lo(self) -> Event {
        debug_assert!(!self.is_empty());
        self.0.trailing_zeros() as usize + 1
    }

    /// Largest event in the domain; the domain must be nonempty.
    pub fn hi(self) -> Event {
        debug_assert!(!self.is_empty());
        MAX_EVENTS - self.0.leading_zeros() as usize
    }

    pub fn as_singleton(self) -> Option<Event> {
        if self.len() == 1 {
            Some(self.lo())
        } else {
            None
        }
    }

    pub fn remove(&mut self, e: Event) -> bool {
        let before = self.0;
        self.0 &= !(1u64 << (e - 1));
        self.0 != before
    }

    pub fn retain_ge(&mut self, e: Event) -> bool {
        let before = self.0;
        self.0 &= mask_ge(e);
        self.0 != before
    }

    pub fn retain_le(&mut self, e: Event) -> bool {
        let before = self.0;
        self.0 &= mask_le(e);
        self.0 != before
    }

    pub fn intersect(&mut self, bits: u64) -> bool {
        let before = self.0;
        self.0 &= bits;
        self.0 != before
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn iter(self) -> DomainIter {
        DomainIter(self.0)
    }
}

pub struct DomainIter(u64);

impl Iterator for DomainIter {
    type Item = Event;

    fn next(&mut self) -> Option<Event> {
        if self.0 == 0 {
            None
        } else {
            let e = self.0.trailing_zeros() as usize + 1;
            self.0 &= self.0 - 1;
            Some(e)
        }
    }
}

/// Three-valued activity of an optional interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    Yes,
    No,
    Open,
}

// ---------------------------------------------------------------------------
