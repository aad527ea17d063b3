//! Cloudlet execution inside one VM.
//!
//! Cloudlets queue FIFO and run space-shared over the VM's PEs. The per-PE
//! rate comes from the host allocation and may change at any event; progress
//! is integrated piecewise between changes.

use std::collections::VecDeque;

use crate::kernel::SimTime;
use crate::workload::{ceil_micros, CloudletId};

#[derive(Clone, Debug, PartialEq)]
struct Waiting {
    id: CloudletId,
    length_mi: f64,
    pes: u32,
}

#[derive(Clone, Debug, PartialEq)]
struct Running {
    id: CloudletId,
    length_mi: f64,
    pes: u32,
    executed_mi: f64,
    started: SimTime,
}

impl Running {
    fn remaining(&self) -> f64 {
        self.length_mi - self.executed_mi
    }

    fn is_done(&self) -> bool {
        self.remaining() <= 1e-9 * self.length_mi.max(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Finished {
    pub id: CloudletId,
    pub length_mi: f64,
    pub executed_mi: f64,
    pub started: SimTime,
    pub finished: SimTime,
}

#[derive(Clone, Debug)]
pub struct VmExecutor {
    pes: u32,
    rate_per_pe: f64,
    updated_at: SimTime,
    waiting: VecDeque<Waiting>,
    running: Vec<Running>,
    completed_mi: f64,
}

impl VmExecutor {
    pub fn new(pes: u32, rate_per_pe: f64, now: SimTime) -> Self {
        Self {
            pes,
            rate_per_pe,
            updated_at: now,
            waiting: VecDeque::new(),
            running: Vec::new(),
            completed_mi: 0.0,
        }
    }

    pub fn rate_per_pe(&self) -> f64 {
        self.rate_per_pe
    }

    pub fn is_idle(&self) -> bool {
        self.waiting.is_empty() && self.running.is_empty()
    }

    pub fn queued(&self) -> usize {
        self.waiting.len() + self.running.len()
    }

    /// MI executed so far, including partial progress of running cloudlets.
    pub fn executed_mi(&self) -> f64 {
        self.completed_mi + self.running.iter().map(|r| r.executed_mi).sum::<f64>()
    }

    fn free_pes(&self) -> u32 {
        self.pes - self.running.iter().map(|r| r.pes).sum::<u32>()
    }

    fn advance(&mut self, now: SimTime) {
        let dt = now.saturating_sub(self.updated_at).as_secs_f64();
        if dt > 0.0 && self.rate_per_pe > 0.0 {
            for r in &mut self.running {
                r.executed_mi += self.rate_per_pe * r.pes as f64 * dt;
            }
        }
        self.updated_at = self.updated_at.max(now);
    }

    fn start_waiting(&mut self, now: SimTime) {
        while let Some(head) = self.waiting.front() {
            if head.pes > self.free_pes() {
                break;
            }
            let w = self.waiting.pop_front().unwrap();
            self.running.push(Running {
                id: w.id,
                length_mi: w.length_mi,
                pes: w.pes,
                executed_mi: 0.0,
                started: now,
            });
        }
    }

    pub fn set_rate(&mut self, now: SimTime, rate_per_pe: f64) {
        self.advance(now);
        self.rate_per_pe = rate_per_pe.max(0.0);
    }

    /// Queues a cloudlet; `pes` is clamped to the VM's PE count.
    pub fn submit(&mut self, now: SimTime, id: CloudletId, length_mi: f64, pes: u32) {
        self.advance(now);
        self.waiting.push_back(Waiting {
            id,
            length_mi: length_mi.max(0.0),
            pes: pes.clamp(1, self.pes),
        });
        self.start_waiting(now);
    }

    /// Removes every cloudlet finished by `now` and starts queued ones.
    pub fn collect_finished(&mut self, now: SimTime) -> Vec<Finished> {
        self.advance(now);
        let mut out = Vec::new();
        loop {
            let before = out.len();
            let mut i = 0;
            while i < self.running.len() {
                if self.running[i].is_done() {
                    let r = self.running.remove(i);
                    self.completed_mi += r.executed_mi;
                    out.push(Finished {
                        id: r.id,
                        length_mi: r.length_mi,
                        executed_mi: r.executed_mi,
                        started: r.started,
                        finished: now,
                    });
                } else {
                    i += 1;
                }
            }
            self.start_waiting(now);
            if out.len() == before {
                break;
            }
        }
        out
    }

    /// Time of the next completion at the current rate.
    pub fn next_completion(&self) -> Option<SimTime> {
        self.running
            .iter()
            .filter_map(|r| {
                if r.is_done() {
                    return Some(self.updated_at);
                }
                let rate = self.rate_per_pe * r.pes as f64;
                ceil_micros(r.remaining(), rate)
                    .ok()
                    .map(|us| self.updated_at + SimTime::from_micros(us))
            })
            .min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_to_end(ex: &mut VmExecutor) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        while let Some(t) = ex.next_completion() {
            for f in ex.collect_finished(t) {
                out.push((f.id.0, f.finished.micros()));
            }
        }
        out
    }

    #[test]
    fn fifo_over_two_pes() {
        let mut ex = VmExecutor::new(2, 1000.0, SimTime::ZERO);
        for i in 0..3 {
            ex.submit(SimTime::ZERO, CloudletId(i), 1000.0, 1);
        }
        assert_eq!(run_to_end(&mut ex), [(0, 1_000_000), (1, 1_000_000), (2, 2_000_000)]);
        assert!((ex.executed_mi() - 3000.0).abs() < 1e-6);
    }

    #[test]
    fn rate_change_mid_run() {
        let mut ex = VmExecutor::new(1, 1000.0, SimTime::ZERO);
        ex.submit(SimTime::ZERO, CloudletId(0), 1000.0, 1);
        // half done at 0.5 s, then half speed: another 1 s
        ex.set_rate(SimTime::from_micros(500_000), 500.0);
        assert_eq!(ex.next_completion(), Some(SimTime::from_micros(1_500_000)));
        assert_eq!(run_to_end(&mut ex), [(0, 1_500_000)]);
    }

    #[test]
    fn paused_vm_makes_no_progress() {
        let mut ex = VmExecutor::new(1, 1000.0, SimTime::ZERO);
        ex.submit(SimTime::ZERO, CloudletId(0), 1000.0, 1);
        ex.set_rate(SimTime::from_micros(250_000), 0.0);
        assert_eq!(ex.next_completion(), None);
        ex.set_rate(SimTime::from_secs(10), 1000.0);
        assert_eq!(ex.next_completion(), Some(SimTime::from_micros(10_750_000)));
    }

    #[test]
    fn zero_length_cloudlets_finish_immediately() {
        let mut ex = VmExecutor::new(1, 1000.0, SimTime::ZERO);
        ex.submit(SimTime::from_secs(2), CloudletId(0), 0.0, 1);
        ex.submit(SimTime::from_secs(2), CloudletId(1), 0.0, 1);
        assert_eq!(ex.next_completion(), Some(SimTime::from_secs(2)));
        assert_eq!(run_to_end(&mut ex), [(0, 2_000_000), (1, 2_000_000)]);
        assert!(ex.is_idle());
    }
}
