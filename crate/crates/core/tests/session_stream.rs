use std::thread;

use lattice_eit_core::service::{RuleTable, Session, SessionConfig, StreamHub, TouchEvent};

fn session() -> Session {
    Session::new(SessionConfig::default(), None, None, RuleTable::bundled()).unwrap()
}

#[tokio::test]
async fn hundred_ticks_reach_fast_clients_in_order() {
    let hub = StreamHub::new(128);
    let mut a = hub.subscribe();
    let mut b = hub.subscribe();
    let producer = {
        let hub = hub.clone();
        thread::spawn(move || {
            let mut s = session();
            s.ingest_touch(TouchEvent::down(1, 40.0, 60.0, 1.5)).unwrap();
            for k in 0..100 {
                if k == 50 {
                    s.ingest_touch(TouchEvent::moved(1, 60.0, 40.0)).unwrap();
                }
                hub.publish(s.tick().unwrap().message());
            }
        })
    };
    producer.join().unwrap();
    let mut late = hub.subscribe();
    drop(hub);

    let mut seen = Vec::new();
    while let Some(m) = a.next().await {
        let other = b.next().await.unwrap();
        assert_eq!(*m, *other);
        seen.push(m.seq);
    }
    assert!(b.next().await.is_none());
    assert_eq!(seen, (1..=100).collect::<Vec<u64>>());

    // A client joining after the fact gets the full current state first.
    let first = late.next().await.unwrap();
    assert_eq!(first.seq, 100);
    assert_eq!(first.dv.len(), 104);
    assert!(!first.img.is_empty());
    assert!(late.next().await.is_none());
}
