//! Region refresh requests, computed off the planning loop.
//!
//! At most one request is in flight. In `async` mode the result is handed
//! back at a fixed number of samples after the request, so runs stay
//! reproducible regardless of how long the worker actually takes.

use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde::{Deserialize, Serialize};

use super::{net_infer, Inference, OracleCorridor, RegionGenerator};
use crate::kinematics::State;
use crate::world::{StaticMap, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RefreshMode {
    /// Compute on the calling thread; apply at the next sample.
    Sync,
    /// Compute on a worker; apply `latency_samples` samples after the request.
    Async { latency_samples: u64 },
    /// Compute on a worker; apply whenever it finishes (not reproducible).
    Realtime,
}

impl Default for RefreshMode {
    fn default() -> Self {
        RefreshMode::Async { latency_samples: 30 }
    }
}

#[derive(Debug, Clone)]
pub struct RefreshOutcome {
    pub inference: Inference,
    /// The configured generator failed during this request and the oracle
    /// took over.
    pub fell_back: bool,
    pub issued_at: u64,
}

struct Generators {
    primary: Option<Box<dyn RegionGenerator>>,
    oracle: OracleCorridor,
    map: Arc<StaticMap>,
    goal: Vec2,
    max_iter: usize,
}

impl Generators {
    fn run(&mut self, last: &State, issued_at: u64) -> RefreshOutcome {
        let mut fell_back = false;
        if let Some(g) = self.primary.as_mut() {
            match net_infer(last, self.goal, &self.map, g.as_mut(), self.max_iter) {
                Ok(inference) => {
                    return RefreshOutcome {
                        inference,
                        fell_back,
                        issued_at,
                    }
                }
                Err(e) => {
                    log::warn!("{} generator failed ({e}); using the oracle for the rest of the run", g.name());
                    self.primary = None;
                    fell_back = true;
                }
            }
        }
        let inference = net_infer(last, self.goal, &self.map, &mut self.oracle, self.max_iter).expect("oracle never fails");
        RefreshOutcome {
            inference,
            fell_back,
            issued_at,
        }
    }
}

enum Backend {
    Inline(Generators),
    Worker {
        jobs: Option<Sender<(State, u64)>>,
        results: Receiver<RefreshOutcome>,
        handle: Option<JoinHandle<()>>,
    },
}

struct Pending {
    due: u64,
    ready: Option<RefreshOutcome>,
}

pub struct RefreshService {
    mode: RefreshMode,
    backend: Backend,
    pending: Option<Pending>,
}

impl RefreshService {
    pub fn new(
        mode: RefreshMode,
        primary: Option<Box<dyn RegionGenerator>>,
        oracle: OracleCorridor,
        map: Arc<StaticMap>,
        goal: Vec2,
        max_iter: usize,
    ) -> Self {
        let mut gens = Generators {
            primary,
            oracle,
            map,
            goal,
            max_iter,
        };
        let backend = match mode {
            RefreshMode::Sync => Backend::Inline(gens),
            RefreshMode::Async { .. } | RefreshMode::Realtime => {
                let (job_tx, job_rx) = mpsc::channel::<(State, u64)>();
                let (res_tx, res_rx) = mpsc::channel();
                let handle = thread::spawn(move || {
                    for (last, issued_at) in job_rx {
                        if res_tx.send(gens.run(&last, issued_at)).is_err() {
                            break;
                        }
                    }
                });
                Backend::Worker {
                    jobs: Some(job_tx),
                    results: res_rx,
                    handle: Some(handle),
                }
            }
        };
        RefreshService {
            mode,
            backend,
            pending: None,
        }
    }

    pub fn mode(&self) -> RefreshMode {
        self.mode
    }

    pub fn is_pending(&self) -> bool {
        self.pending.is_some()
    }

    /// Issue a request from `last`. Returns false (and does nothing) while
    /// another request is in flight.
    pub fn request(&mut self, last: State, sample_index: u64) -> bool {
        if self.pending.is_some() {
            return false;
        }
        let (due, ready) = match &mut self.backend {
            Backend::Inline(gens) => (sample_index + 1, Some(gens.run(&last, sample_index))),
            Backend::Worker { jobs, .. } => {
                jobs.as_ref()
                    .expect("worker running")
                    .send((last, sample_index))
                    .expect("refresh worker alive");
                let latency = match self.mode {
                    RefreshMode::Async { latency_samples } => latency_samples.max(1),
                    _ => 0,
                };
                (sample_index + latency, None)
            }
        };
        self.pending = Some(Pending { due, ready });
        true
    }

    /// Completed result to apply at `sample_index`, if any.
    pub fn poll(&mut self, sample_index: u64) -> Option<RefreshOutcome> {
        let pending = self.pending.as_mut()?;
        if let Some(ready) = pending.ready.take() {
            if sample_index >= pending.due {
                self.pending = None;
                return Some(ready);
            }
            pending.ready = Some(ready);
            return None;
        }
        let Backend::Worker { results, .. } = &self.backend else {
            unreachable!("inline results are always ready");
        };
        let out = match self.mode {
            RefreshMode::Realtime => match results.try_recv() {
                Ok(r) => Some(r),
                Err(TryRecvError::Empty) => None,
                Err(TryRecvError::Disconnected) => panic!("refresh worker died"),
            },
            _ if sample_index >= pending.due => Some(results.recv().expect("refresh worker alive")),
            _ => None,
        };
        if out.is_some() {
            self.pending = None;
        }
        out
    }

    /// Issue a request and block until its result is available.
    pub fn compute_blocking(&mut self, last: State, sample_index: u64) -> RefreshOutcome {
        if let Some(p) = self.pending.take() {
            // Drain a stale in-flight request so results stay paired.
            if p.ready.is_none() {
                if let Backend::Worker { results, .. } = &self.backend {
                    let _ = results.recv();
                }
            }
        }
        self.request(last, sample_index);
        let p = self.pending.take().expect("request issued");
        match p.ready {
            Some(r) => r,
            None => match &self.backend {
                Backend::Worker { results, .. } => results.recv().expect("refresh worker alive"),
                Backend::Inline(_) => unreachable!(),
            },
        }
    }
}

impl Drop for RefreshService {
    fn drop(&mut self) {
        if let Backend::Worker { jobs, handle, .. } = &mut self.backend {
            jobs.take();
            if let Some(h) = handle.take() {
                let _ = h.join();
            }
        }
    }
}
