//! Bank arbitration for the shared scratchpad.

/// A request for one bank in the current cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankRequest {
    pub requester: usize,
    pub bank: usize,
}

/// Round-robin arbiter with a persistent priority pointer per bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BankArbiter {
    banks: usize,
    bank_width: u32,
    requesters: usize,
    next: Vec<usize>,
}

impl BankArbiter {
    pub fn new(banks: usize, bank_width: u32, requesters: usize) -> Self {
        BankArbiter {
            banks,
            bank_width,
            requesters,
            next: vec![0; banks],
        }
    }

    pub fn banks(&self) -> usize {
        self.banks
    }

    pub fn bank_of(&self, addr: u32) -> usize {
        (addr / self.bank_width) as usize % self.banks
    }

    /// Banks covered by the byte range `[addr, addr + len)`, in address
    /// order and without repeats.
    pub fn banks_of_range(&self, addr: u32, len: u32) -> Vec<usize> {
        if len == 0 {
            return Vec::new();
        }
        let first = addr / self.bank_width;
        let last = (addr + len - 1) / self.bank_width;
        let words = (last - first + 1) as usize;
        (0..words.min(self.banks))
            .map(|i| (first as usize + i) % self.banks)
            .collect()
    }

    /// Grants at most one request per bank. The winner is the first
    /// requester at or after the bank's pointer; the pointer then moves
    /// past the winner.
    pub fn arbitrate(&mut self, reqs: &[BankRequest]) -> Vec<bool> {
        let mut winner: Vec<Option<(usize, usize)>> = vec![None; self.banks];
        for (i, r) in reqs.iter().enumerate() {
            debug_assert!(r.requester < self.requesters);
            let prio = (r.requester + self.requesters - self.next[r.bank]) % self.requesters;
            match winner[r.bank] {
                Some((p, _)) if p <= prio => {}
                _ => winner[r.bank] = Some((prio, i)),
            }
        }
        let mut granted = vec![false; reqs.len()];
        for (bank, w) in winner.iter().enumerate() {
            if let Some((_, i)) = *w {
                granted[i] = true;
                self.next[bank] = (reqs[i].requester + 1) % self.requesters;
            }
        }
        granted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distinct_banks_all_granted() {
        let mut a = BankArbiter::new(32, 8, 8);
        let reqs: Vec<_> = (0..8)
            .map(|c| BankRequest { requester: c, bank: a.bank_of(8 * c as u32) })
            .collect();
        assert!(a.arbitrate(&reqs).iter().all(|g| *g));
    }

    #[test]
    fn same_bank_serializes_and_rotates() {
        let mut a = BankArbiter::new(32, 8, 8);
        let reqs = [BankRequest { requester: 0, bank: 3 }, BankRequest { requester: 1, bank: 3 }];
        assert_eq!(a.arbitrate(&reqs), [true, false]);
        assert_eq!(a.arbitrate(&reqs), [false, true]);
        assert_eq!(a.arbitrate(&reqs), [true, false]);
    }

    #[test]
    fn range_banks() {
        let a = BankArbiter::new(32, 8, 1);
        assert_eq!(a.banks_of_range(0, 64), (0..8).collect::<Vec<_>>());
        assert_eq!(a.banks_of_range(252, 8), [31, 0]);
        assert_eq!(a.banks_of_range(0, 4096).len(), 32);
    }

    proptest! {
        #[test]
        fn one_grant_per_bank_and_every_bank_served(
            reqs in prop::collection::vec((0usize..8, 0usize..4), 0..24)
        ) {
            let mut a = BankArbiter::new(4, 8, 8);
            let mut seen = std::collections::BTreeSet::new();
            let reqs: Vec<_> = reqs.into_iter()
                .filter(|r| seen.insert(*r))
                .map(|(requester, bank)| BankRequest { requester, bank })
                .collect();
            let g = a.arbitrate(&reqs);
            for bank in 0..4 {
                let asked = reqs.iter().any(|r| r.bank == bank);
                let n = reqs.iter().zip(&g).filter(|(r, g)| r.bank == bank && **g).count();
                prop_assert_eq!(n, asked as usize);
            }
        }

        #[test]
        fn contenders_are_served_within_n_rounds(n in 1usize..8) {
            let mut a = BankArbiter::new(1, 8, 8);
            let mut pending: Vec<usize> = (0..n).collect();
            let mut rounds = 0;
            while !pending.is_empty() {
                let reqs: Vec<_> = pending.iter().map(|&r| BankRequest { requester: r, bank: 0 }).collect();
                let g = a.arbitrate(&reqs);
                pending = pending.into_iter().zip(g).filter(|(_, g)| !g).map(|(r, _)| r).collect();
                rounds += 1;
            }
            prop_assert_eq!(rounds, n);
        }
    }
}
