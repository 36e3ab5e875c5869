//! Latest world snapshot shared with device servers, plus a short history
//! so a client can ask for a specific tick.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use tokio::sync::watch;
use vigil_core::world::WorldState;

const HISTORY: usize = 64;

#[derive(Debug)]
pub struct SnapshotHub {
    tx: watch::Sender<Arc<WorldState>>,
    history: Mutex<VecDeque<Arc<WorldState>>>,
}

impl SnapshotHub {
    pub fn new(initial: WorldState) -> Self {
        let initial = Arc::new(initial);
        let (tx, _) = watch::channel(Arc::clone(&initial));
        Self {
            tx,
            history: Mutex::new(VecDeque::from([initial])),
        }
    }

    pub fn publish(&self, state: Arc<WorldState>) {
        {
            let mut h = self.history.lock().expect("snapshot history poisoned");
            if h.len() == HISTORY {
                h.pop_front();
            }
            h.push_back(Arc::clone(&state));
        }
        self.tx.send_replace(state);
    }

    pub fn latest(&self) -> Arc<WorldState> {
        Arc::clone(&self.tx.borrow())
    }

    /// A recent snapshot by tick, if still retained.
    pub fn at_tick(&self, tick: u64) -> Option<Arc<WorldState>> {
        self.history
            .lock()
            .expect("snapshot history poisoned")
            .iter()
            .rev()
            .find(|s| s.tick == tick)
            .cloned()
    }

    pub fn subscribe(&self) -> watch::Receiver<Arc<WorldState>> {
        self.tx.subscribe()
    }
}

/// Simulation time readable from any thread.
#[derive(Debug, Clone, Default)]
pub struct SimClock(Arc<AtomicU64>);

impl SimClock {
    pub fn set(&self, t: f64) {
        self.0.store(t.to_bits(), Ordering::Release);
    }

    pub fn now(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Acquire))
    }
}
