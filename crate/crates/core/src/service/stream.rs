use std::sync::Arc;

use tokio::sync::{broadcast, watch};

use super::TickMessage;

/// Fan-out of tick messages to any number of clients. Each client sees
/// strictly increasing `seq`; a slow client skips ahead to the latest
/// message instead of stalling the producer.
#[derive(Debug, Clone)]
pub struct StreamHub {
    tx: broadcast::Sender<Arc<TickMessage>>,
    latest: Arc<watch::Sender<Option<Arc<TickMessage>>>>,
}

impl StreamHub {
    pub fn new(capacity: usize) -> Self {
        let (tx, _) = broadcast::channel(capacity.max(1));
        let (latest, _) = watch::channel(None);
        Self {
            tx,
            latest: Arc::new(latest),
        }
    }

    pub fn publish(&self, msg: TickMessage) {
        let msg = Arc::new(msg);
        self.latest.send_replace(Some(msg.clone()));
        // No receivers is fine.
        let _ = self.tx.send(msg);
    }

    pub fn latest(&self) -> Option<Arc<TickMessage>> {
        self.latest.borrow().clone()
    }

    pub fn subscriber_count(&self) -> usize {
        self.tx.receiver_count()
    }

    /// A new client starts from the current state.
    pub fn subscribe(&self) -> Subscriber {
        let rx = self.tx.subscribe();
        Subscriber {
            rx,
            latest: self.latest.subscribe(),
            last_seq: None,
            pending: self.latest(),
        }
    }
}

pub struct Subscriber {
    rx: broadcast::Receiver<Arc<TickMessage>>,
    latest: watch::Receiver<Option<Arc<TickMessage>>>,
    last_seq: Option<u64>,
    pending: Option<Arc<TickMessage>>,
}

impl Subscriber {
    fn accept(&mut self, m: Arc<TickMessage>) -> Option<Arc<TickMessage>> {
        if self.last_seq.is_some_and(|s| m.seq <= s) {
            return None;
        }
        self.last_seq = Some(m.seq);
        Some(m)
    }

    /// Next message, or `None` once the hub is gone.
    pub async fn next(&mut self) -> Option<Arc<TickMessage>> {
        if let Some(m) = self.pending.take() {
            if let Some(m) = self.accept(m) {
                return Some(m);
            }
        }
        loop {
            match self.rx.recv().await {
                Ok(m) => {
                    if let Some(m) = self.accept(m) {
                        return Some(m);
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    let m = self.latest.borrow_and_update().clone();
                    if let Some(m) = m.and_then(|m| self.accept(m)) {
                        return Some(m);
                    }
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    }
}
