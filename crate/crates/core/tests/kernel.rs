use cloudmarket_core::kernel::{EventKey, Kernel, SimEvent, SimTime};
use proptest::prelude::*;
use rand::RngCore;

fn drain(kernel: &mut Kernel<u32>) -> Vec<(EventKey, u32)> {
    let mut seen = Vec::new();
    let mut h = |ev: SimEvent<u32>, _: &mut Kernel<u32>| seen.push((ev.key(), ev.payload));
    while kernel.peek_time().is_some() {
        kernel.step(&mut h);
    }
    seen
}

proptest! {
    #[test]
    fn dispatch_follows_total_order(events in prop::collection::vec((0u64..1000, -2i16..3), 0..200)) {
        let mut k: Kernel<u32> = Kernel::new(1);
        let e = k.register("e");
        for (i, &(t, p)) in events.iter().enumerate() {
            k.schedule_at(SimTime::from_micros(t), e, i as u32, p).unwrap();
        }
        let seen = drain(&mut k);
        prop_assert_eq!(seen.len(), events.len());
        for w in seen.windows(2) {
            prop_assert!(w[0].0 < w[1].0);
            prop_assert!(w[0].0.fire_at <= w[1].0.fire_at);
        }
        // equal (time, priority): insertion order
        let mut expected: Vec<(u64, i16, u32)> = events.iter().enumerate().map(|(i, &(t, p))| (t, p, i as u32)).collect();
        expected.sort();
        let got: Vec<u32> = seen.iter().map(|s| s.1).collect();
        prop_assert_eq!(got, expected.iter().map(|x| x.2).collect::<Vec<_>>());
    }

    #[test]
    fn cancelled_events_never_fire(times in prop::collection::vec(0u64..100, 1..50), mask in prop::collection::vec(any::<bool>(), 50)) {
        let mut k: Kernel<u32> = Kernel::new(1);
        let e = k.register("e");
        let handles: Vec<_> = times.iter().enumerate().map(|(i, &t)| k.schedule_at(SimTime::from_micros(t), e, i as u32, 0).unwrap()).collect();
        let mut kept = Vec::new();
        for (i, h) in handles.into_iter().enumerate() {
            if mask[i] {
                prop_assert!(k.cancel(h));
                prop_assert!(!k.cancel(h));
            } else {
                kept.push(i as u32);
            }
        }
        let mut fired: Vec<u32> = drain(&mut k).into_iter().map(|s| s.1).collect();
        fired.sort_unstable();
        prop_assert_eq!(fired, kept);
    }

    #[test]
    fn handlers_scheduling_follow_ups_keep_the_clock_monotone(seed in any::<u64>(), delays in prop::collection::vec(0u64..50, 1..30)) {
        let mut k: Kernel<u32> = Kernel::new(seed);
        let e = k.register("e");
        k.schedule_at(SimTime::ZERO, e, 0, 0).unwrap();
        let mut times = Vec::new();
        let mut h = |ev: SimEvent<u32>, k: &mut Kernel<u32>| {
            times.push(ev.fire_at);
            if let Some(&d) = delays.get(ev.payload as usize) {
                k.schedule(SimTime::from_micros(d), e, ev.payload + 1, 0).unwrap();
            }
        };
        k.run_until(SimTime::from_secs(1), &mut h).unwrap();
        prop_assert!(times.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(k.now(), SimTime::from_secs(1));
    }

    #[test]
    fn entity_streams_depend_only_on_seed_and_entity(seed in any::<u64>()) {
        let mut k: Kernel<()> = Kernel::new(seed);
        let a = k.register("a");
        let b = k.register("b");
        let first: Vec<u64> = { let mut r = k.rng_for(a); (0..4).map(|_| r.next_u64()).collect() };
        let again: Vec<u64> = { let mut r = k.rng_for(a); (0..4).map(|_| r.next_u64()).collect() };
        let other: Vec<u64> = { let mut r = k.rng_for(b); (0..4).map(|_| r.next_u64()).collect() };
        prop_assert_eq!(&first, &again);
        prop_assert_ne!(first, other);
    }
}

#[test]
fn scheduling_into_the_past_is_refused() {
    let mut k: Kernel<()> = Kernel::new(0);
    let e = k.register("e");
    k.schedule_at(SimTime::from_secs(5), e, (), 0).unwrap();
    let mut h = |_: SimEvent<()>, _: &mut Kernel<()>| {};
    k.step(&mut h);
    assert!(k.schedule_at(SimTime::from_secs(1), e, (), 0).is_err());
    assert!(k.run_until(SimTime::from_secs(1), &mut h).is_err());
}
