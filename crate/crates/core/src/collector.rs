//! Measurement session orchestration: a fixed-rate scheduler drives per-tick
//! fan-out polls across all sources, aligns the results into one tick, and
//! streams ticks to persistence through a bounded queue.
//!
//! Threading: one scheduler thread owns the tick clock; each source gets its
//! own poller thread (the parallel collection strategy); one writer thread
//! drains the queue. Persistence can never stall sampling — on queue overflow
//! the oldest queued tick is dropped and counted.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::carbon::{resolve_intensity, IntensityRecord};
use crate::model::{
    CadenceStats, ConfigError, DeadSource, DeviceId, SamplingConfig, SeriesKey, SessionData, Tick,
};
use crate::persistence::{
    column_name, new_session_id, PersistenceError, SessionMeta, SessionWriter,
};
use crate::processing;
use crate::sources::{Reading, Source, SourceError};

#[derive(Debug, thiserror::Error)]
pub enum CollectorError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no usable source covers the selected metrics")]
    NoUsableSource,
    #[error("sources `{a}` and `{b}` both claim {key}")]
    DuplicateClaim { a: String, b: String, key: String },
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
    #[error("session already stopped")]
    AlreadyStopped,
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

/// Tuning knobs; the defaults match the documented contract.
#[derive(Debug, Clone)]
pub struct CollectorOptions {
    /// Bounded tick queue between scheduler and writer. Overflow drops the
    /// oldest queued tick.
    pub queue_capacity: usize,
    /// Fraction of the interval each source gets before its readings are
    /// discarded for the tick.
    pub poll_timeout_fraction: f64,
    /// Artificial per-tick writer delay; lets the test-suite exercise the
    /// backpressure path without a slow filesystem.
    pub writer_delay: Option<Duration>,
}

impl Default for CollectorOptions {
    fn default() -> Self {
        CollectorOptions {
            queue_capacity: 1024,
            poll_timeout_fraction: 0.8,
            writer_delay: None,
        }
    }
}

/// Bounded handoff queue with drop-oldest overflow.
struct TickQueue {
    inner: Mutex<QueueInner>,
    cond: Condvar,
    capacity: usize,
}

struct QueueInner {
    deque: VecDeque<Arc<Tick>>,
    shutdown: bool,
}

impl TickQueue {
    fn new(capacity: usize) -> Self {
        TickQueue {
            inner: Mutex::new(QueueInner { deque: VecDeque::new(), shutdown: false }),
            cond: Condvar::new(),
            capacity: capacity.max(1),
        }
    }

    /// Returns the number of ticks dropped to make room (0 or 1).
    fn push(&self, tick: Arc<Tick>) -> u64 {
        let mut inner = self.inner.lock().unwrap();
        let mut dropped = 0;
        if inner.deque.len() >= self.capacity {
            inner.deque.pop_front();
            dropped = 1;
        }
        inner.deque.push_back(tick);
        drop(inner);
        self.cond.notify_one();
        dropped
    }

    /// Blocks until a tick is available; `None` once shut down and drained.
    fn pop_wait(&self) -> Option<Arc<Tick>> {
        let mut inner = self.inner.lock().unwrap();
        loop {
            if let Some(tick) = inner.deque.pop_front() {
                return Some(tick);
            }
            if inner.shutdown {
                return None;
            }
            inner = self.cond.wait(inner).unwrap();
        }
    }

    fn shutdown(&self) {
        self.inner.lock().unwrap().shutdown = true;
        self.cond.notify_all();
    }
}

/// Merge per-source readings into one tick stamped with the *scheduled*
/// time, not the individual read times.
pub fn align_tick(
    readings_per_source: &[Vec<Reading>],
    wall_time_ms: i64,
    mono_elapsed_s: f64,
) -> Result<Tick, CollectorError> {
    let mut values: BTreeMap<SeriesKey, f64> = BTreeMap::new();
    for readings in readings_per_source {
        for reading in readings {
            if !reading.value.is_finite() {
                continue;
            }
            if values.insert(reading.key(), reading.value).is_some() {
                return Err(CollectorError::Internal(format!(
                    "duplicate reading for {}/{}",
                    reading.device, reading.metric
                )));
            }
        }
    }
    Ok(Tick { wall_time_ms, mono_elapsed_s, values })
}

enum PollOutcome {
    Readings(Vec<Reading>),
    Failed(SourceError),
}

struct PollerLink {
    name: String,
    trigger: mpsc::SyncSender<u64>,
    handle: JoinHandle<()>,
    alive: bool,
}

struct SchedulerOutcome {
    dead_sources: Vec<DeadSource>,
    cadence: CadenceStats,
}

struct RunningParts {
    scheduler: JoinHandle<SchedulerOutcome>,
    writer: JoinHandle<(SessionWriter, Vec<Tick>)>,
    intensity: JoinHandle<Option<IntensityRecord>>,
    queue: Arc<TickQueue>,
}

struct Shared {
    started_wall_ms: i64,
    started_mono: Instant,
    overrun_count: AtomicU64,
    dropped_tick_count: AtomicU64,
    tick_count: AtomicU64,
    latest_tick: Mutex<Option<Arc<Tick>>>,
    stop_signal: Mutex<bool>,
    stop_cond: Condvar,
}

/// Handle to a running session. Cheap to clone and share across threads;
/// exactly one `stop` succeeds.
#[derive(Clone)]
pub struct SessionHandle {
    shared: Arc<Shared>,
    meta: Arc<Mutex<SessionMeta>>,
    parts: Arc<Mutex<Option<RunningParts>>>,
}

impl SessionHandle {
    pub fn session_id(&self) -> String {
        self.meta.lock().unwrap().id.clone()
    }

    pub fn started_wall_ms(&self) -> i64 {
        self.shared.started_wall_ms
    }

    pub fn elapsed_s(&self) -> f64 {
        self.shared.started_mono.elapsed().as_secs_f64()
    }

    pub fn overrun_count(&self) -> u64 {
        self.shared.overrun_count.load(Ordering::Relaxed)
    }

    pub fn dropped_tick_count(&self) -> u64 {
        self.shared.dropped_tick_count.load(Ordering::Relaxed)
    }

    pub fn tick_count(&self) -> u64 {
        self.shared.tick_count.load(Ordering::Relaxed)
    }

    /// Most recent aligned tick; what the exposition endpoint serves.
    pub fn latest_tick(&self) -> Option<Tick> {
        self.shared.latest_tick.lock().unwrap().as_deref().cloned()
    }

    /// Session directory on disk.
    pub fn session_dir(&self) -> std::path::PathBuf {
        let meta = self.meta.lock().unwrap();
        meta.config.output_dir.join(&meta.id)
    }
}

/// Start a measurement session over the given sources.
///
/// The sampling loop is running when this returns; the first tick fires at
/// start + interval. Selected metrics no source covers are recorded as
/// uncollected metadata rather than failing the start.
pub fn start(
    config: SamplingConfig,
    sources: Vec<Box<dyn Source>>,
) -> Result<SessionHandle, CollectorError> {
    start_with(config, sources, CollectorOptions::default())
}

pub fn start_with(
    mut config: SamplingConfig,
    sources: Vec<Box<dyn Source>>,
    options: CollectorOptions,
) -> Result<SessionHandle, CollectorError> {
    config.validate()?;
    if sources.is_empty() {
        return Err(CollectorError::NoUsableSource);
    }

    // No two sources may claim the same series.
    for i in 0..sources.len() {
        for j in (i + 1)..sources.len() {
            let a = sources[i].descriptor();
            let b = sources[j].descriptor();
            if let Some(key) = a.provided.intersection(&b.provided).next() {
                return Err(CollectorError::DuplicateClaim {
                    a: a.name.clone(),
                    b: b.name.clone(),
                    key: column_name(key),
                });
            }
        }
    }

    if config.devices.is_empty() {
        let devices: BTreeSet<DeviceId> = sources
            .iter()
            .flat_map(|s| s.descriptor().provided.iter().map(|(d, _)| *d))
            .collect();
        config.devices = devices.into_iter().collect();
    }

    let wanted: BTreeSet<SeriesKey> = config.series_keys().into_iter().collect();
    let covered: BTreeSet<SeriesKey> = sources
        .iter()
        .flat_map(|s| s.descriptor().provided.iter().cloned())
        .filter(|k| wanted.contains(k))
        .collect();
    if covered.is_empty() {
        return Err(CollectorError::NoUsableSource);
    }
    let uncollected: Vec<SeriesKey> = wanted.difference(&covered).cloned().collect();

    let started_wall_ms = crate::sources::now_epoch_ms();
    let mut meta = SessionMeta::new(new_session_id(started_wall_ms), started_wall_ms, config.clone());
    meta.uncollected = uncollected.iter().map(column_name).collect();
    for source in &sources {
        for (device, model) in source.device_inventory() {
            meta.device_inventory.entry(device.label()).or_insert(model);
        }
    }

    let writer = SessionWriter::create(&meta)?;

    let shared = Arc::new(Shared {
        started_wall_ms,
        started_mono: Instant::now(),
        overrun_count: AtomicU64::new(0),
        dropped_tick_count: AtomicU64::new(0),
        tick_count: AtomicU64::new(0),
        latest_tick: Mutex::new(None),
        stop_signal: Mutex::new(false),
        stop_cond: Condvar::new(),
    });
    let queue = Arc::new(TickQueue::new(options.queue_capacity));

    // Carbon resolution runs off the sampling path; joined at stop.
    let carbon_config = config.carbon.clone();
    let intensity = std::thread::Builder::new()
        .name("wattmon-carbon".into())
        .spawn(move || resolve_intensity(&carbon_config, crate::sources::now_epoch_ms()))
        .map_err(|e| CollectorError::Internal(e.to_string()))?;

    let writer_handle = spawn_writer(queue.clone(), writer, shared.clone(), options.writer_delay);
    let scheduler = spawn_scheduler(sources, config, shared.clone(), queue.clone(), &options, wanted)?;

    Ok(SessionHandle {
        shared,
        meta: Arc::new(Mutex::new(meta)),
        parts: Arc::new(Mutex::new(Some(RunningParts {
            scheduler,
            writer: writer_handle,
            intensity,
            queue,
        }))),
    })
}

fn spawn_writer(
    queue: Arc<TickQueue>,
    mut writer: SessionWriter,
    shared: Arc<Shared>,
    delay: Option<Duration>,
) -> JoinHandle<(SessionWriter, Vec<Tick>)> {
    std::thread::Builder::new()
        .name("wattmon-writer".into())
        .spawn(move || {
            let mut written: Vec<Arc<Tick>> = Vec::new();
            while let Some(tick) = queue.pop_wait() {
                if let Some(d) = delay {
                    std::thread::sleep(d);
                }
                match writer.append_tick(&tick) {
                    Ok(()) => written.push(tick),
                    Err(e) => {
                        log::warn!("tick not persisted: {e}");
                        shared.dropped_tick_count.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
            let owned = written
                .into_iter()
                .map(|tick| Arc::try_unwrap(tick).unwrap_or_else(|shared| (*shared).clone()))
                .collect();
            (writer, owned)
        })
        .expect("writer thread")
}

fn spawn_scheduler(
    sources: Vec<Box<dyn Source>>,
    config: SamplingConfig,
    shared: Arc<Shared>,
    queue: Arc<TickQueue>,
    options: &CollectorOptions,
    recorded: BTreeSet<SeriesKey>,
) -> Result<JoinHandle<SchedulerOutcome>, CollectorError> {
    let (result_tx, result_rx) = mpsc::channel::<(usize, u64, PollOutcome)>();
    let mut pollers = Vec::with_capacity(sources.len());
    for (idx, mut source) in sources.into_iter().enumerate() {
        let name = source.descriptor().name.clone();
        let (trigger_tx, trigger_rx) = mpsc::sync_channel::<u64>(1);
        let tx = result_tx.clone();
        let handle = std::thread::Builder::new()
            .name(format!("wattmon-poll-{name}"))
            .spawn(move || {
                while let Ok(seq) = trigger_rx.recv() {
                    let outcome = match source.poll() {
                        Ok(readings) => PollOutcome::Readings(readings),
                        Err(e) => PollOutcome::Failed(e),
                    };
                    if tx.send((idx, seq, outcome)).is_err() {
                        break;
                    }
                }
            })
            .map_err(|e| CollectorError::Internal(e.to_string()))?;
        pollers.push(PollerLink { name, trigger: trigger_tx, handle, alive: true });
    }
    drop(result_tx);

    let interval = Duration::from_secs_f64(config.interval_s);
    let poll_budget = interval.mul_f64(options.poll_timeout_fraction.clamp(0.1, 1.0));

    let handle = std::thread::Builder::new()
        .name("wattmon-scheduler".into())
        .spawn(move || {
            run_schedule(ScheduleContext {
                pollers,
                result_rx,
                interval,
                poll_budget,
                shared,
                queue,
                recorded,
            })
        })
        .map_err(|e| CollectorError::Internal(e.to_string()))?;
    Ok(handle)
}

struct ScheduleContext {
    pollers: Vec<PollerLink>,
    result_rx: mpsc::Receiver<(usize, u64, PollOutcome)>,
    interval: Duration,
    poll_budget: Duration,
    shared: Arc<Shared>,
    queue: Arc<TickQueue>,
    recorded: BTreeSet<SeriesKey>,
}

fn run_schedule(mut ctx: ScheduleContext) -> SchedulerOutcome {
    let interval_s = ctx.interval.as_secs_f64();
    let start = ctx.shared.started_mono;
    let mut dead_sources = Vec::new();
    let mut k: u64 = 1;
    let mut max_deviation_s: f64 = 0.0;
    let mut first_wake: Option<f64> = None;
    let mut last_wake: f64 = 0.0;
    let mut wake_count: u64 = 0;

    loop {
        let target = start + ctx.interval.mul_f64(k as f64);
        if wait_until_or_stopped(&ctx.shared, target) {
            break;
        }
        let wake_s = start.elapsed().as_secs_f64();
        max_deviation_s = max_deviation_s.max(wake_s - k as f64 * interval_s);
        first_wake.get_or_insert(wake_s);
        last_wake = wake_s;
        wake_count += 1;

        // fan out
        let mut pending: Vec<usize> = Vec::new();
        for (idx, poller) in ctx.pollers.iter().enumerate() {
            if poller.alive && poller.trigger.try_send(k).is_ok() {
                pending.push(idx);
            }
        }

        // fan in until every triggered source answered or the budget is spent
        let deadline = Instant::now() + ctx.poll_budget;
        let mut gathered: Vec<Vec<Reading>> = Vec::with_capacity(pending.len());
        while !pending.is_empty() {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            match ctx.result_rx.recv_timeout(deadline - now) {
                Ok((idx, seq, outcome)) => {
                    match outcome {
                        PollOutcome::Failed(e) => {
                            if ctx.pollers[idx].alive {
                                ctx.pollers[idx].alive = false;
                                dead_sources.push(DeadSource {
                                    name: ctx.pollers[idx].name.clone(),
                                    reason: e.to_string(),
                                    from_tick: k,
                                });
                                log::warn!("source `{}` died at tick {k}: {e}", ctx.pollers[idx].name);
                            }
                            pending.retain(|p| *p != idx);
                        }
                        PollOutcome::Readings(readings) => {
                            if seq == k {
                                pending.retain(|p| *p != idx);
                                gathered.push(readings);
                            }
                            // stale readings from an earlier tick are discarded
                        }
                    }
                }
                Err(mpsc::RecvTimeoutError::Timeout) => break,
                Err(mpsc::RecvTimeoutError::Disconnected) => break,
            }
        }

        let wall_time_ms = ctx.shared.started_wall_ms + ((k as f64 * interval_s) * 1000.0).round() as i64;
        let mono_elapsed_s = k as f64 * interval_s;
        for readings in &mut gathered {
            readings.retain(|r| ctx.recorded.contains(&r.key()));
        }
        let tick = match align_tick(&gathered, wall_time_ms, mono_elapsed_s) {
            Ok(tick) => tick,
            Err(e) => {
                // disjointness was checked at start; treat as absent tick
                log::error!("tick {k} dropped: {e}");
                ctx.shared.dropped_tick_count.fetch_add(1, Ordering::Relaxed);
                k += 1;
                continue;
            }
        };

        let tick = Arc::new(tick);
        *ctx.shared.latest_tick.lock().unwrap() = Some(tick.clone());
        ctx.shared.tick_count.fetch_add(1, Ordering::Relaxed);
        let dropped = ctx.queue.push(tick);
        if dropped > 0 {
            ctx.shared.dropped_tick_count.fetch_add(dropped, Ordering::Relaxed);
        }

        // overrun rule: skip slots we already blew past, keeping the grid
        let now_s = start.elapsed().as_secs_f64();
        let mut next_k = k + 1;
        let due = (now_s / interval_s).floor() as u64 + 1;
        if due > next_k {
            ctx.shared
                .overrun_count
                .fetch_add(due - next_k, Ordering::Relaxed);
            next_k = due;
        }
        k = next_k;
    }

    let cadence = CadenceStats {
        mean_interval_s: match (first_wake, wake_count) {
            (Some(first), n) if n >= 2 => (last_wake - first) / (n - 1) as f64,
            _ => 0.0,
        },
        max_schedule_deviation_s: max_deviation_s,
    };

    // closing the triggers lets pollers drain and exit
    let pollers = std::mem::take(&mut ctx.pollers);
    for poller in pollers {
        drop(poller.trigger);
        let _ = poller.handle.join();
    }
    SchedulerOutcome { dead_sources, cadence }
}

/// Sleep until `target` unless the stop signal fires first. Returns true when
/// stopping.
fn wait_until_or_stopped(shared: &Shared, target: Instant) -> bool {
    let mut stopped = shared.stop_signal.lock().unwrap();
    loop {
        if *stopped {
            return true;
        }
        let now = Instant::now();
        if now >= target {
            return false;
        }
        let (guard, _timeout) = shared
            .stop_cond
            .wait_timeout(stopped, target - now)
            .unwrap();
        stopped = guard;
    }
}

/// Stop the session: halt the loop, flush queued ticks, finalize metadata,
/// and compute totals. The second stop on the same session reports
/// [`CollectorError::AlreadyStopped`].
pub fn stop(handle: &SessionHandle) -> Result<SessionData, CollectorError> {
    let parts = handle
        .parts
        .lock()
        .unwrap()
        .take()
        .ok_or(CollectorError::AlreadyStopped)?;

    {
        let mut stopped = handle.shared.stop_signal.lock().unwrap();
        *stopped = true;
        handle.shared.stop_cond.notify_all();
    }
    let outcome = parts
        .scheduler
        .join()
        .map_err(|_| CollectorError::Internal("scheduler panicked".into()))?;
    parts.queue.shutdown();
    let (mut writer, ticks) = parts
        .writer
        .join()
        .map_err(|_| CollectorError::Internal("writer panicked".into()))?;
    let intensity = parts.intensity.join().unwrap_or(None);

    let ended_wall_ms = crate::sources::now_epoch_ms();
    let mut meta = handle.meta.lock().unwrap().clone();
    meta.ended_wall_ms = Some(ended_wall_ms);
    meta.overrun_count = handle.shared.overrun_count.load(Ordering::Relaxed);
    meta.dropped_tick_count = handle.shared.dropped_tick_count.load(Ordering::Relaxed);
    meta.dead_sources = outcome.dead_sources;
    meta.cadence = outcome.cadence;
    meta.intensity = intensity;
    writer.finalize(&meta)?;
    *handle.meta.lock().unwrap() = meta.clone();

    let mut session = crate::persistence::assemble_session(&meta, ticks);
    if session.ticks.len() >= 2 {
        session.totals = processing::compute_totals(&session, meta.intensity.as_ref()).ok();
    }
    Ok(session)
}
