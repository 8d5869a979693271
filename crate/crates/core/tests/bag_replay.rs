mod common;

use proptest::prelude::*;
use rand::Rng;

use sandbox_core::bus::bag::{footer_offset, scan_index, stored_index};
use sandbox_core::bus::replay::{replay, NoSleep, ReplayError, ReplayOptions};
use sandbox_core::bus::{Bag, BagError, GameMirror};
use sandbox_core::time::Timestamp;

use common::*;

#[test]
fn load_save_is_byte_identical() {
    let mut rng = rng(50);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..50 {
        let bag = random_bag(&mut rng);
        let bytes = bag.to_bytes();
        let path = dir.path().join(format!("b{i}.fpbag"));
        std::fs::write(&path, &bytes).unwrap();
        let loaded = Bag::load(&path).unwrap();
        let again = dir.path().join(format!("c{i}.fpbag"));
        loaded.save(&again).unwrap();
        assert_eq!(std::fs::read(&again).unwrap(), bytes, "bag {i}");
        assert_eq!(loaded, bag);
        assert!(!loaded.recovered());
    }
}

#[test]
fn truncated_footer_rebuilds_the_same_index() {
    let mut rng = rng(51);
    for _ in 0..50 {
        let bag = random_bag(&mut rng);
        let bytes = bag.to_bytes();
        let cut = footer_offset(&bytes).unwrap();
        let crashed = &bytes[..cut];
        assert_eq!(footer_offset(crashed), None);
        assert_eq!(&scan_index(crashed).unwrap(), bag.index());
        assert_eq!(stored_index(&bytes).unwrap().as_ref(), Some(bag.index()));
        let recovered = Bag::parse(crashed).unwrap();
        assert!(recovered.recovered());
        assert_eq!(recovered.index(), bag.index());
        assert_eq!(recovered.events().unwrap(), bag.events().unwrap());
        // Saving a recovered bag restores the footer.
        assert_eq!(recovered.to_bytes(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn events_round_trip_in_bag_order(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let bag = random_bag(&mut rng);
        let events = bag.events().unwrap();
        for w in events.windows(2) {
            prop_assert!((w[0].stamp, &w[0].topic, w[0].seq) < (w[1].stamp, &w[1].topic, w[1].seq));
        }
        // Rebuilding from shuffled events gives the same bag.
        let mut shuffled = events.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        prop_assert_eq!(Bag::from_events(bag.header.clone(), &shuffled).unwrap(), bag.clone());
        prop_assert_eq!(bag.index().total() as usize, events.len());
    }

    #[test]
    fn truncated_bags_are_a_prefix_or_rejected(seed in any::<u64>(), cut in any::<prop::sample::Index>()) {
        let mut rng = rng(seed);
        let bag = random_bag(&mut rng);
        let bytes = bag.to_bytes();
        let cut = cut.index(bytes.len());
        match Bag::parse(&bytes[..cut]) {
            Ok(b) => {
                let all = bag.events().unwrap();
                let got = b.events().unwrap();
                prop_assert!(b.recovered());
                prop_assert_eq!(&all[..got.len()], &got[..]);
            }
            Err(e) => prop_assert!(matches!(e, BagError::CorruptBag { .. }), "{}", e),
        }
    }
}

#[test]
fn wrong_magic_and_trailing_garbage() {
    let bag = random_bag(&mut rng(3));
    let mut bytes = bag.to_bytes();
    bytes.push(0);
    assert!(matches!(Bag::parse(&bytes), Err(BagError::CorruptBag { .. })));
    let mut bytes = bag.to_bytes();
    bytes[0] = b'X';
    assert!(matches!(Bag::parse(&bytes), Err(BagError::CorruptBag { .. })));
}

// ------------------------------------------------------------------ replay

fn replayed_hash(bag: &Bag, opts: ReplayOptions) -> (u64, NoSleep) {
    let mut mirror = GameMirror::new();
    let mut sleep = NoSleep::default();
    replay(bag, opts, &mut sleep, |e, _| {
        mirror.apply(e);
        Ok(())
    })
    .unwrap();
    (mirror.hash(), sleep)
}

#[test]
fn golden_replay_reproduces_the_live_hash() {
    let (outcome, bytes) = golden_run();
    let bag = Bag::parse(&bytes).unwrap();
    let rec = outcome.recording.unwrap();
    assert_eq!(&rec.index, bag.index());
    assert!(bag.time_bounds().unwrap().1 >= Timestamp::from_secs(590));
    let (hash, sleep) = replayed_hash(&bag, ReplayOptions::default());
    assert_eq!(hash, rec.live_hash);
    assert!(sleep.total.is_zero());
    // Real-time pacing asks for the bag's own span.
    let (a, b) = bag.time_bounds().unwrap();
    let (hash, sleep) = replayed_hash(&bag, ReplayOptions { speed: 4.0, seek_to: None });
    assert_eq!(hash, rec.live_hash);
    let want = b.saturating_sub(a).as_secs_f64() / 4.0;
    assert!((sleep.total.as_secs_f64() - want).abs() < 1e-3, "{:?}", sleep.total);
}

#[test]
fn seeking_equals_prefix_replay() {
    let (_, bytes) = golden_run();
    let bag = Bag::parse(&bytes).unwrap();
    let events = bag.events().unwrap();
    let (first, last) = bag.time_bounds().unwrap();
    let full = replayed_hash(&bag, ReplayOptions::default()).0;
    let mut rng = rng(20);
    let mut cuts: Vec<Timestamp> = (0..18).map(|_| Timestamp(rng.gen_range(first.micros()..=last.micros()))).collect();
    cuts.extend([first, last]);
    for cut in cuts {
        let mut prefix = GameMirror::new();
        for e in events.iter().filter(|e| e.stamp <= cut) {
            prefix.apply(e);
        }
        let mut seeked = GameMirror::new();
        let mut at_cut = None;
        replay(&bag, ReplayOptions { speed: 0.0, seek_to: Some(cut) }, &mut NoSleep::default(), |e, ff| {
            if !ff && at_cut.is_none() {
                at_cut = Some(seeked.hash());
            }
            seeked.apply(e);
            Ok(())
        })
        .unwrap();
        assert_eq!(at_cut.unwrap_or(seeked.hash()), prefix.hash(), "cut at {cut}");
        assert_eq!(seeked.hash(), full, "continuing from {cut}");
    }
}

#[test]
fn seek_past_end_and_bad_speed() {
    let bag = random_bag(&mut rng(1));
    let end = bag.time_bounds().map(|b| b.1).unwrap_or(Timestamp::ZERO);
    let opts = ReplayOptions { speed: 0.0, seek_to: Some(Timestamp(end.micros() + 1)) };
    assert!(matches!(replay(&bag, opts, &mut NoSleep::default(), |_, _| Ok(())), Err(ReplayError::SeekPastEnd { .. })));
    let opts = ReplayOptions { speed: -1.0, seek_to: None };
    assert!(matches!(replay(&bag, opts, &mut NoSleep::default(), |_, _| Ok(())), Err(ReplayError::InvalidSpeed(_))));
}
