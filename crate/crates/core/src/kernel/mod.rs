//! Deterministic discrete-event kernel.
//!
//! Events are ordered by `(fire_at, priority, seq)` where `seq` is the
//! insertion counter, so equal-time events with equal priority fire in the
//! order they were scheduled. The kernel does not own entity handlers: the
//! caller passes a [`Handler`] to [`Kernel::step`] and routes on
//! [`SimEvent::target`].

mod rng;
mod time;

use std::collections::BTreeMap;

use thiserror::Error;

pub use rng::{entity_stream, SimRng};
pub use time::{secs, SimTime, MICROS_PER_SEC};

/// Identifier handed out by [`Kernel::register`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

/// Total-order key of a queued event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventKey {
    pub fire_at: SimTime,
    pub priority: i16,
    pub seq: u64,
}

/// Token returned by [`Kernel::schedule`] that can cancel the event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(EventKey);

impl EventHandle {
    pub fn key(&self) -> EventKey {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimEvent<M> {
    pub fire_at: SimTime,
    pub priority: i16,
    pub seq: u64,
    pub target: EntityId,
    pub payload: M,
}

impl<M> SimEvent<M> {
    pub fn key(&self) -> EventKey {
        EventKey {
            fire_at: self.fire_at,
            priority: self.priority,
            seq: self.seq,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KernelError {
    #[error("unknown entity {0:?}")]
    UnknownEntity(EntityId),
    #[error("horizon {horizon} lies before the current clock {clock}")]
    HorizonBeforeNow { horizon: SimTime, clock: SimTime },
    #[error("cannot schedule at {at}, clock is already {clock}")]
    InThePast { at: SimTime, clock: SimTime },
}

/// Receives dispatched events.
pub trait Handler<M> {
    fn handle(&mut self, event: SimEvent<M>, kernel: &mut Kernel<M>);
}

impl<M, F> Handler<M> for F
where
    F: FnMut(SimEvent<M>, &mut Kernel<M>),
{
    fn handle(&mut self, event: SimEvent<M>, kernel: &mut Kernel<M>) {
        self(event, kernel)
    }
}

/// Outcome of [`Kernel::step`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Dispatched { key: EventKey, target: EntityId },
    End,
}

pub struct Kernel<M> {
    clock: SimTime,
    queue: BTreeMap<EventKey, (EntityId, M)>,
    seq_counter: u64,
    seed: u64,
    entities: Vec<String>,
}

impl<M> Kernel<M> {
    pub fn new(seed: u64) -> Self {
        Self {
            clock: SimTime::ZERO,
            queue: BTreeMap::new(),
            seq_counter: 0,
            seed,
            entities: Vec::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>) -> EntityId {
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(name.into());
        id
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entities.get(id.0 as usize).map(String::as_str)
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.keys().next().map(|k| k.fire_at)
    }

    pub fn rng_for(&self, entity: EntityId) -> SimRng {
        entity_stream(self.seed, entity)
    }

    pub fn schedule(&mut self, delay: SimTime, target: EntityId, payload: M, priority: i16) -> Result<EventHandle, KernelError> {
        let at = self.clock + delay;
        self.schedule_at(at, target, payload, priority)
    }

    pub fn schedule_at(&mut self, at: SimTime, target: EntityId, payload: M, priority: i16) -> Result<EventHandle, KernelError> {
        if target.0 as usize >= self.entities.len() {
            return Err(KernelError::UnknownEntity(target));
        }
        if at < self.clock {
            return Err(KernelError::InThePast { at, clock: self.clock });
        }
        self.seq_counter += 1;
        let key = EventKey {
            fire_at: at,
            priority,
            seq: self.seq_counter,
        };
        self.queue.insert(key, (target, payload));
        Ok(EventHandle(key))
    }

    /// Returns true iff the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.queue.remove(&handle.0).is_some()
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.queue.contains_key(&handle.0)
    }

    /// Removes the next event and advances the clock to it without dispatching.
    pub fn pop_next(&mut self) -> Option<SimEvent<M>> {
        let (key, (target, payload)) = self.queue.pop_first()?;
        debug_assert!(key.fire_at >= self.clock);
        self.clock = key.fire_at;
        Some(SimEvent {
            fire_at: key.fire_at,
            priority: key.priority,
            seq: key.seq,
            target,
            payload,
        })
    }

    pub fn step<H: Handler<M> + ?Sized>(&mut self, handler: &mut H) -> Step {
        match self.pop_next() {
            Some(event) => {
                let key = event.key();
                let target = event.target;
                handler.handle(event, self);
                Step::Dispatched { key, target }
            }
            None => Step::End,
        }
    }

    /// Dispatches every event with `fire_at <= t_end`, then leaves the clock at `t_end`.
    pub fn run_until<H: Handler<M> + ?Sized>(&mut self, t_end: SimTime, handler: &mut H) -> Result<usize, KernelError> {
        if t_end < self.clock {
            return Err(KernelError::HorizonBeforeNow {
                horizon: t_end,
                clock: self.clock,
            });
        }
        let mut processed = 0;
        while self.peek_time().is_some_and(|t| t <= t_end) {
            self.step(handler);
            processed += 1;
        }
        self.clock = t_end;
        Ok(processed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recorder() -> impl FnMut(SimEvent<&'static str>, &mut Kernel<&'static str>) {
        |_, _| {}
    }

    fn drain(kernel: &mut Kernel<&'static str>) -> Vec<(u64, &'static str)> {
        let mut out = Vec::new();
        let mut h = |e: SimEvent<&'static str>, _: &mut Kernel<&'static str>| out.push((e.fire_at.micros(), e.payload));
        while kernel.step(&mut h) != Step::End {}
        out
    }

    #[test]
    fn same_time_same_priority_is_fifo() {
        let mut k = Kernel::new(0);
        let e = k.register("e");
        k.schedule(SimTime::ZERO, e, "A", 0).unwrap();
        k.schedule(SimTime::ZERO, e, "B", 0).unwrap();
        assert_eq!(drain(&mut k), vec![(0, "A"), (0, "B")]);
    }

    #[test]
    fn delay_is_relative_to_clock() {
        let mut k = Kernel::new(0);
        let e = k.register("e");
        k.schedule(SimTime::from_micros(5_000_000), e, "x", 0).unwrap();
        assert_eq!(drain(&mut k), vec![(5_000_000, "x")]);
        assert_eq!(k.now(), SimTime::from_secs(5));
    }

    #[test]
    fn unknown_target_is_rejected() {
        let mut k: Kernel<&str> = Kernel::new(0);
        k.register("e");
        assert_eq!(
            k.schedule(SimTime::ZERO, EntityId(3), "x", 0),
            Err(KernelError::UnknownEntity(EntityId(3)))
        );
    }

    #[test]
    fn cancel_semantics() {
        let mut k = Kernel::new(0);
        let e = k.register("e");
        let h = k.schedule(SimTime::from_secs(1), e, "x", 0).unwrap();
        let keep = k.schedule(SimTime::from_secs(2), e, "y", 0).unwrap();
        assert!(k.cancel(h));
        assert!(!k.cancel(h));
        assert_eq!(drain(&mut k), vec![(2_000_000, "y")]);
        assert!(!k.cancel(keep));
    }

    #[test]
    fn earliest_time_then_priority_wins() {
        let mut k = Kernel::new(0);
        let e = k.register("e");
        k.schedule(SimTime::from_micros(2), e, "t2", 0).unwrap();
        k.schedule(SimTime::from_micros(1), e, "t1", 0).unwrap();
        assert_eq!(drain(&mut k), vec![(1, "t1"), (2, "t2")]);

        let mut k = Kernel::new(0);
        let e = k.register("e");
        k.schedule(SimTime::from_micros(1), e, "p1", 1).unwrap();
        k.schedule(SimTime::from_micros(1), e, "p0", 0).unwrap();
        assert_eq!(drain(&mut k), vec![(1, "p0"), (1, "p1")]);
    }

    #[test]
    fn empty_queue_step_keeps_clock() {
        let mut k: Kernel<&str> = Kernel::new(0);
        let mut h = recorder();
        assert_eq!(k.step(&mut h), Step::End);
        assert_eq!(k.now(), SimTime::ZERO);
    }

    #[test]
    fn run_until_stops_at_horizon() {
        let mut k = Kernel::new(0);
        let e = k.register("e");
        for t in 1..=3 {
            k.schedule(SimTime::from_micros(t), e, "x", 0).unwrap();
        }
        let mut h = recorder();
        assert_eq!(k.run_until(SimTime::from_micros(2), &mut h), Ok(2));
        assert_eq!(k.pending(), 1);
        assert_eq!(k.now(), SimTime::from_micros(2));

        let mut empty: Kernel<&str> = Kernel::new(0);
        assert_eq!(empty.run_until(SimTime::from_micros(10), &mut h), Ok(0));
        assert_eq!(empty.now(), SimTime::from_micros(10));
        assert!(matches!(
            empty.run_until(SimTime::from_micros(5), &mut h),
            Err(KernelError::HorizonBeforeNow { .. })
        ));
    }

    #[test]
    fn handlers_can_schedule_follow_ups() {
        let mut k = Kernel::new(0);
        let e = k.register("e");
        k.schedule(SimTime::ZERO, e, 3u32, 0).unwrap();
        let mut seen = Vec::new();
        let mut h = |ev: SimEvent<u32>, k: &mut Kernel<u32>| {
            seen.push((ev.fire_at.micros(), ev.payload));
            if ev.payload > 0 {
                k.schedule(SimTime::from_micros(10), ev.target, ev.payload - 1, 0).unwrap();
            }
        };
        k.run_until(SimTime::from_micros(100), &mut h).unwrap();
        assert_eq!(seen, vec![(0, 3), (10, 2), (20, 1), (30, 0)]);
    }
}
