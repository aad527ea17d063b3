use super::InfraError;
use crate::kernel::SimTime;
use crate::workload::ceil_micros;

/// A cloudlet waiting in a space-shared queue.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueuedWork {
    pub length_mi: f64,
    pub pes: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub start: SimTime,
    pub finish: SimTime,
}

/// Strict FIFO space-shared schedule: the head of the queue starts as soon
/// as enough PEs are free and nothing overtakes it. Every PE runs at
/// `mips_per_pe * speed`.
pub fn space_shared_dispatch(
    queue: &[QueuedWork],
    pe_count: u32,
    mips_per_pe: f64,
    speed: f64,
    start: SimTime,
) -> Result<Vec<Slot>, InfraError> {
    if let Some(w) = queue.iter().find(|w| w.pes > pe_count || w.pes == 0) {
        return Err(InfraError::TooManyPes {
            needed: w.pes,
            available: pe_count,
        });
    }
    let rate = mips_per_pe * speed;
    let mut slots = Vec::with_capacity(queue.len());
    // (finish, pes) of running work
    let mut running: Vec<(SimTime, u32)> = Vec::new();
    let mut free = pe_count;
    let mut clock = start;
    for work in queue {
        while free < work.pes {
            // release the earliest finisher(s)
            let earliest = running.iter().map(|(f, _)| *f).min().expect("work is running");
            clock = clock.max(earliest);
            running.retain(|&(f, pes)| {
                if f <= earliest {
                    free += pes;
                    false
                } else {
                    true
                }
            });
        }
        let duration = ceil_micros(work.length_mi, rate).map_err(|_| InfraError::ZeroRate)?;
        let finish = clock + SimTime::from_micros(duration);
        free -= work.pes;
        running.push((finish, work.pes));
        slots.push(Slot { start: clock, finish });
    }
    Ok(slots)
}
