//! Treasure-hunt game: items, proximity hits, time-decayed scoring and the
//! per-connection session logic behind the WebSocket service.
//!
//! The player steers with acceleration commands. Those drive the live
//! simulator as truth, its noisy GPS/IMU output goes through the fusion
//! pipeline, and hits are tested against the fused position, so the player
//! plays against the estimate rather than the truth.

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, GameConfig};
use crate::dfa::MotionModel;
use crate::filter::FusionError;
use crate::geodesy::{EcefPosition, GeodeticPosition};
use crate::imu::ImuBatch;
use crate::nmea::{parse_sentence, sentence_to_fix, GpsFix};
use crate::pipeline::{FusionMode, FusionPipeline};
use crate::sim::{default_origin, LiveSimulator};

/// Per-tick processing budget.
pub const TICK_BUDGET: Duration = Duration::from_millis(45);
/// A tick slower than this many budgets aborts the session.
pub const STALL_FACTOR: u32 = 10;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("tick took {took:?}, over {STALL_FACTOR}x the {TICK_BUDGET:?} budget")]
    PipelineStalled { took: Duration },
    #[error("could not place {count} items {spacing} m apart within radius {radius} m")]
    LayoutImpossible { count: usize, spacing: f64, radius: f64 },
    #[error("invalid game config: {0}")]
    Config(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    SmallCoin,
    LargeCoin,
    Chest,
}

impl ItemKind {
    pub const ALL: [ItemKind; 3] = [ItemKind::SmallCoin, ItemKind::LargeCoin, ItemKind::Chest];

    pub fn initial_score(self) -> u32 {
        match self {
            ItemKind::SmallCoin => 10,
            ItemKind::LargeCoin => 30,
            ItemKind::Chest => 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameItem {
    pub id: u32,
    pub kind: ItemKind,
    /// (east, north), meters.
    pub position: [f64; 2],
    collected: bool,
}

impl GameItem {
    pub fn new(id: u32, kind: ItemKind, position: [f64; 2]) -> Self {
        Self {
            id,
            kind,
            position,
            collected: false,
        }
    }

    pub fn initial_score(&self) -> u32 {
        self.kind.initial_score()
    }

    pub fn collected(&self) -> bool {
        self.collected
    }

    fn distance_to(&self, p: [f64; 2]) -> f64 {
        (self.position[0] - p[0]).hypot(self.position[1] - p[1])
    }
}

/// `initial · min(1, c / elapsed)`, rounded half up. Early pickups get the
/// full value rather than a bonus.
pub fn decayed_score(initial_score: u32, elapsed_s: f64, c: f64) -> u32 {
    let initial = f64::from(initial_score);
    if !(elapsed_s > c) {
        return initial_score;
    }
    // initial·c first keeps table values like 30·5/15 exact
    ((initial * c / elapsed_s).min(initial) + 0.5).floor() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitEvent {
    pub id: u32,
    pub points: u32,
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameSession {
    items: Vec<GameItem>,
    score: u64,
    started_at: f64,
    elapsed: f64,
    hit_threshold_m: f64,
    decay_constant: f64,
    hits: Vec<HitEvent>,
}

impl GameSession {
    pub fn new(items: Vec<GameItem>, cfg: &GameConfig, started_at: f64) -> Self {
        Self {
            items,
            score: 0,
            started_at,
            elapsed: 0.0,
            hit_threshold_m: cfg.hit_threshold_m,
            decay_constant: cfg.decay_constant,
            hits: Vec::new(),
        }
    }

    pub fn items(&self) -> &[GameItem] {
        &self.items
    }

    pub fn score(&self) -> u64 {
        self.score
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn started_at(&self) -> f64 {
        self.started_at
    }

    pub fn hits(&self) -> &[HitEvent] {
        &self.hits
    }

    pub fn remaining(&self) -> usize {
        self.items.iter().filter(|i| !i.collected).count()
    }

    pub fn is_complete(&self) -> bool {
        self.remaining() == 0
    }

    /// Moves the session clock to `now`. The clock never runs backwards.
    pub fn advance_to(&mut self, now: f64) {
        self.elapsed = self.elapsed.max(now - self.started_at);
    }

    /// Collects every uncollected item strictly closer than the threshold
    /// (horizontal distance). Simultaneous hits are reported nearest first.
    pub fn check_hits(&mut self, fused: [f64; 2]) -> Vec<HitEvent> {
        let mut inside: Vec<(f64, usize)> = self
            .items
            .iter()
            .enumerate()
            .filter(|(_, it)| !it.collected)
            .map(|(i, it)| (it.distance_to(fused), i))
            .filter(|(d, _)| *d < self.hit_threshold_m)
            .collect();
        inside.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out = Vec::with_capacity(inside.len());
        for (_, i) in inside {
            let item = &mut self.items[i];
            item.collected = true;
            let points = decayed_score(item.initial_score(), self.elapsed, self.decay_constant);
            self.score += u64::from(points);
            let hit = HitEvent {
                id: item.id,
                points,
                elapsed: self.elapsed,
            };
            self.hits.push(hit);
            out.push(hit);
        }
        out
    }
}

/// Uniform placement in the arena disc with minimum spacing between items
/// and from the start point at the origin.
pub fn layout_items(cfg: &GameConfig, seed: u64) -> Result<Vec<GameItem>, GameError> {
    let impossible = || GameError::LayoutImpossible {
        count: cfg.item_count,
        spacing: cfg.min_item_spacing_m,
        radius: cfg.arena_radius_m,
    };
    if !(cfg.arena_radius_m > 0.0 && cfg.min_item_spacing_m >= 0.0) {
        return Err(GameError::Config("arena radius must be positive and spacing >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items: Vec<GameItem> = Vec::with_capacity(cfg.item_count);
    let mut attempts = 0;
    while items.len() < cfg.item_count {
        attempts += 1;
        if attempts > 100_000 {
            return Err(impossible());
        }
        let r = cfg.arena_radius_m * rng.gen::<f64>().sqrt();
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = [r * theta.cos(), r * theta.sin()];
        let far_from_start = p[0].hypot(p[1]) >= cfg.min_item_spacing_m;
        if far_from_start && items.iter().all(|it| it.distance_to(p) >= cfg.min_item_spacing_m) {
            let kind = ItemKind::ALL[rng.gen_range(0..3)];
            items.push(GameItem::new(items.len() as u32, kind, p));
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub id: u32,
    pub kind: ItemKind,
    pub pos: [f64; 2],
    pub collected: bool,
}

impl From<&GameItem> for ItemView {
    fn from(it: &GameItem) -> Self {
        Self {
            id: it.id,
            kind: it.kind,
            pos: it.position,
            collected: it.collected,
        }
    }
}

/// State pushed to the client once per filter cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTick {
    pub t: f64,
    pub fused: [f64; 2],
    pub truth: [f64; 2],
    pub model: MotionModel,
    pub score: u64,
    pub elapsed: f64,
    pub items: Vec<ItemView>,
    pub hits: Vec<HitEvent>,
    pub complete: bool,
    pub compute_time: Duration,
}

/// Simulator, fusion pipeline and game session for one player.
pub struct LiveSession {
    sim: LiveSimulator,
    pipeline: FusionPipeline,
    game: GameSession,
    batch_size: usize,
    imu_dt: f64,
    max_accel: f64,
    last_fused: [f64; 2],
    last_model: MotionModel,
}

impl LiveSession {
    pub fn new(config: &Config, seed: u64, origin: GeodeticPosition) -> Result<Self, GameError> {
        let items = layout_items(&config.game, seed)?;
        Self::with_items(config, seed, origin, items)
    }

    pub fn with_items(
        config: &Config,
        seed: u64,
        origin: GeodeticPosition,
        items: Vec<GameItem>,
    ) -> Result<Self, GameError> {
        config.fusion.validate().map_err(|e| GameError::Config(e.to_string()))?;
        if !(config.game.max_accel >= 0.0 && config.game.hit_threshold_m > 0.0 && config.game.decay_constant > 0.0) {
            return Err(GameError::Config("max_accel >= 0, hit threshold and decay constant > 0".into()));
        }
        let sim = LiveSimulator::new(origin, config.sim, config.fusion.imu_dt_s, seed)
            .map_err(|e| GameError::Config(e.to_string()))?;
        Ok(Self {
            sim,
            pipeline: FusionPipeline::new(config.fusion, FusionMode::Dfa)?,
            game: GameSession::new(items, &config.game, 0.0),
            batch_size: config.fusion.batch_size,
            imu_dt: config.fusion.imu_dt_s,
            max_accel: config.game.max_accel,
            last_fused: [0.0; 2],
            last_model: MotionModel::P1,
        })
    }

    pub fn game(&self) -> &GameSession {
        &self.game
    }

    /// Horizontal truth position and velocity of the player.
    pub fn truth(&self) -> ([f64; 2], [f64; 2]) {
        let (p, v) = self.sim.state();
        ([p.x, p.y], [v.x, v.y])
    }

    /// Caps the command magnitude at the configured maximum.
    pub fn cap_accel(&self, cmd: [f64; 2]) -> [f64; 2] {
        let [ax, ay] = if cmd.iter().all(|v| v.is_finite()) { cmd } else { [0.0; 2] };
        let mag = ax.hypot(ay);
        if mag > self.max_accel {
            let k = self.max_accel / mag;
            [ax * k, ay * k]
        } else {
            [ax, ay]
        }
    }

    /// Runs one filter cycle under a constant steering command.
    pub fn tick(&mut self, accel_cmd: [f64; 2]) -> Result<SessionTick, GameError> {
        let started = Instant::now();
        let cmd = self.cap_accel(accel_cmd);
        let mut samples = Vec::with_capacity(self.batch_size);
        let mut fix: Option<GpsFix> = None;
        let mut truth = [0.0; 2];
        for _ in 0..self.batch_size {
            let step = self.sim.step(cmd);
            if let Some(line) = &step.gga {
                // the simulator writes well-formed GGA; a failure here is a bug
                let sentence = parse_sentence(line).expect("simulated GGA parses");
                fix = sentence_to_fix(&sentence, 0.0).expect("simulated GGA is a fix");
            }
            truth = [step.truth.position.x, step.truth.position.y];
            samples.push(step.imu);
        }
        let batch = ImuBatch::new(samples, self.imu_dt).map_err(|e| GameError::Config(e.to_string()))?;
        if let Some(out) = self.pipeline.step(&batch, fix.as_ref())? {
            let enu = self.sim.frame().to_enu(&EcefPosition::from_vector(&out.state.position));
            self.last_fused = [enu.east_m, enu.north_m];
            self.last_model = self.pipeline.active_model();
        }
        let t = batch.end_time();
        self.game.advance_to(t);
        let hits = self.game.check_hits(self.last_fused);
        let compute_time = started.elapsed();
        if compute_time > TICK_BUDGET * STALL_FACTOR {
            return Err(GameError::PipelineStalled { took: compute_time });
        }
        Ok(SessionTick {
            t,
            fused: self.last_fused,
            truth,
            model: self.last_model,
            score: self.game.score(),
            elapsed: self.game.elapsed(),
            items: self.game.items().iter().map(ItemView::from).collect(),
            hits,
            complete: self.game.is_complete(),
            compute_time,
        })
    }
}

/// Outcome of a headless session.
#[derive(Debug, Clone)]
pub struct SessionSummary {
    pub ticks: Vec<SessionTick>,
    pub score: u64,
    pub hits: Vec<HitEvent>,
    pub complete: bool,
}

impl SessionSummary {
    /// Fraction of ticks whose compute time stayed within the budget.
    pub fn within_budget(&self) -> f64 {
        if self.ticks.is_empty() {
            return 1.0;
        }
        let ok = self.ticks.iter().filter(|t| t.compute_time <= TICK_BUDGET).count();
        ok as f64 / self.ticks.len() as f64
    }
}

/// Runs `session` for up to `max_ticks`, asking `input` for the steering
/// command before each tick. Stops early once every item is collected.
pub fn run_session(
    session: &mut LiveSession,
    max_ticks: usize,
    mut input: impl FnMut(&LiveSession, usize) -> [f64; 2],
) -> Result<SessionSummary, GameError> {
    let mut ticks = Vec::with_capacity(max_ticks);
    for k in 0..max_ticks {
        let cmd = input(session, k);
        let tick = session.tick(cmd)?;
        let done = tick.complete;
        ticks.push(tick);
        if done {
            break;
        }
    }
    Ok(SessionSummary {
        ticks,
        score: session.game.score(),
        hits: session.game.hits().to_vec(),
        complete: session.game.is_complete(),
    })
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Input { ax: f64, ay: f64 },
    Start { seed: u64 },
    Reset,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Tick {
        t: f64,
        fused: [f64; 2],
        truth: [f64; 2],
        model: u8,
        score: u64,
        elapsed: f64,
        items: Vec<ItemView>,
    },
    Hit {
        id: u32,
        points: u32,
    },
    End {
        score: u64,
        elapsed: f64,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

/// Session lifecycle of one connection, independent of the transport. The
/// transport feeds it client frames and calls [`Connection::tick`] at the
/// cycle cadence.
pub struct Connection {
    config: Config,
    origin: GeodeticPosition,
    seed: u64,
    session: Option<LiveSession>,
    command: [f64; 2],
    ended: bool,
}

impl Connection {
    /// Starts a session immediately with `seed`.
    pub fn new(config: Config, seed: u64) -> Result<Self, GameError> {
        Self::with_origin(config, seed, default_origin())
    }

    pub fn with_origin(config: Config, seed: u64, origin: GeodeticPosition) -> Result<Self, GameError> {
        let session = LiveSession::new(&config, seed, origin)?;
        Ok(Self {
            config,
            origin,
            seed,
            session: Some(session),
            command: [0.0; 2],
            ended: false,
        })
    }

    pub fn session(&self) -> Option<&LiveSession> {
        self.session.as_ref()
    }

    pub fn is_running(&self) -> bool {
        self.session.is_some() && !self.ended
    }

    fn restart(&mut self, seed: u64) -> Result<(), GameError> {
        self.session = Some(LiveSession::new(&self.config, seed, self.origin)?);
        self.seed = seed;
        self.command = [0.0; 2];
        self.ended = false;
        Ok(())
    }

    /// Handles one text frame. Problems are answered with an error message;
    /// the session carries on.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        let error = |message: String| vec![ServerMessage::Error { message }];
        match serde_json::from_str::<ClientMessage>(text) {
            Ok(ClientMessage::Input { ax, ay }) if ax.is_finite() && ay.is_finite() => {
                self.command = [ax, ay];
                Vec::new()
            }
            Ok(ClientMessage::Input { .. }) => error("input must be finite".into()),
            Ok(ClientMessage::Start { seed }) => match self.restart(seed) {
                Ok(()) => Vec::new(),
                Err(e) => error(e.to_string()),
            },
            Ok(ClientMessage::Reset) => match self.restart(self.seed) {
                Ok(()) => Vec::new(),
                Err(e) => error(e.to_string()),
            },
            Err(e) => error(format!("bad message: {e}")),
        }
    }

    /// Advances the session by one cycle: hits first, then the tick, then
    /// `end` once everything is collected. Nothing after the end.
    pub fn tick(&mut self) -> Result<Vec<ServerMessage>, GameError> {
        if self.ended {
            return Ok(Vec::new());
        }
        let Some(session) = self.session.as_mut() else {
            return Ok(Vec::new());
        };
        let tick = session.tick(self.command)?;
        let mut out: Vec<ServerMessage> = tick
            .hits
            .iter()
            .map(|h| ServerMessage::Hit {
                id: h.id,
                points: h.points,
            })
            .collect();
        out.push(ServerMessage::Tick {
            t: tick.t,
            fused: tick.fused,
            truth: tick.truth,
            model: tick.model.index(),
            score: tick.score,
            elapsed: tick.elapsed,
            items: tick.items,
        });
        if tick.complete {
            self.ended = true;
            out.push(ServerMessage::End {
                score: tick.score,
                elapsed: tick.elapsed,
            });
        }
        Ok(out)
    }
}

/// Steering helper for scripted play: accelerate toward `target`, braking
/// so as to arrive slowly. Positions and velocity are (east, north).
pub fn steer_toward(position: [f64; 2], velocity: [f64; 2], target: [f64; 2], max_accel: f64) -> [f64; 2] {
    let to = Vector3::new(target[0] - position[0], target[1] - position[1], 0.0);
    let v = Vector3::new(velocity[0], velocity[1], 0.0);
    // critically damped PD toward the target
    let (kp, kd) = (0.5, 1.4);
    let a = to * kp - v * kd;
    let mag = a.norm();
    let a = if mag > max_accel { a * (max_accel / mag) } else { a };
    [a.x, a.y]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimNoise;
    use proptest::prelude::*;

    #[test]
    fn scoring_table() {
        assert_eq!(decayed_score(50, 5.0, 5.0), 50);
        assert_eq!(decayed_score(30, 15.0, 5.0), 10);
        assert_eq!(decayed_score(10, 1.0, 5.0), 10);
        assert_eq!(decayed_score(50, 50.0, 5.0), 5);
        assert_eq!(decayed_score(50, 0.0, 5.0), 50);
        // 10·5/20 = 2.5 rounds up
        assert_eq!(decayed_score(10, 20.0, 5.0), 3);
    }

    proptest! {
        #[test]
        fn decay_is_non_increasing(kind in 0usize..3, a in 0.0f64..1e4, b in 0.0f64..1e4) {
            let initial = ItemKind::ALL[kind].initial_score();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(decayed_score(initial, hi, 5.0) <= decayed_score(initial, lo, 5.0));
            prop_assert!(decayed_score(initial, lo, 5.0) <= initial);
        }
    }

    fn session(items: Vec<GameItem>) -> GameSession {
        GameSession::new(items, &GameConfig::default(), 0.0)
    }

    #[test]
    fn hits_use_strict_threshold() {
        let mut s = session(vec![
            GameItem::new(0, ItemKind::SmallCoin, [1.9, 0.0]),
            GameItem::new(1, ItemKind::Chest, [0.0, 2.0]),
        ]);
        let hits = s.check_hits([0.0, 0.0]);
        assert_eq!(hits.iter().map(|h| h.id).collect::<Vec<_>>(), vec![0]);
        assert!(s.items()[0].collected() && !s.items()[1].collected());
        assert_eq!(s.score(), 10);
    }

    #[test]
    fn far_position_hits_nothing_and_items_stay_collected() {
        let mut s = session(vec![GameItem::new(0, ItemKind::LargeCoin, [0.0, 0.0])]);
        assert!(s.check_hits([50.0, 0.0]).is_empty());
        s.advance_to(15.0);
        assert_eq!(s.check_hits([0.5, 0.0])[0].points, 10);
        assert!(s.check_hits([0.0, 0.0]).is_empty());
        assert!(s.items()[0].collected());
        assert!(s.is_complete());
        assert_eq!(s.score(), 10);
    }

    #[test]
    fn height_is_ignored() {
        // only horizontal components are passed; a 2D hit at 1 m counts
        let mut s = session(vec![GameItem::new(0, ItemKind::SmallCoin, [1.0, 0.0])]);
        assert_eq!(s.check_hits([0.0, 0.0]).len(), 1);
    }

    #[test]
    fn clock_never_runs_backwards() {
        let mut s = session(vec![]);
        s.advance_to(10.0);
        s.advance_to(4.0);
        assert_eq!(s.elapsed(), 10.0);
    }

    #[test]
    fn layout_respects_radius_and_spacing() {
        let cfg = GameConfig::default();
        let items = layout_items(&cfg, 7).unwrap();
        assert_eq!(items.len(), cfg.item_count);
        for (i, a) in items.iter().enumerate() {
            assert!(a.position[0].hypot(a.position[1]) <= cfg.arena_radius_m);
            assert!(a.position[0].hypot(a.position[1]) >= cfg.min_item_spacing_m);
            for b in &items[i + 1..] {
                assert!(a.distance_to(b.position) >= cfg.min_item_spacing_m);
            }
        }
        assert_eq!(items, layout_items(&cfg, 7).unwrap());
        assert_ne!(items, layout_items(&cfg, 8).unwrap());
        let crowded = GameConfig {
            item_count: 50,
            arena_radius_m: 10.0,
            ..cfg
        };
        assert!(matches!(layout_items(&crowded, 1), Err(GameError::LayoutImpossible { .. })));
    }

    fn quiet_config() -> Config {
        Config {
            sim: SimNoise {
                gps_sigma_m: 0.0,
                accel_sigma: 0.0,
                gps_period_s: 1.0,
            },
            ..Config::default()
        }
    }

    #[test]
    fn idle_session_scores_nothing() {
        let mut live = LiveSession::new(&Config::default(), 3, default_origin()).unwrap();
        let summary = run_session(&mut live, 750, |_, _| [0.0, 0.0]).unwrap();
        let last = summary.ticks.last().unwrap();
        assert_eq!(summary.score, 0);
        assert!((last.elapsed - 59.98).abs() < 1e-9, "{}", last.elapsed);
        assert!(summary.hits.is_empty());
    }

    #[test]
    fn straight_run_collects_items_in_path_order() {
        let items = vec![
            GameItem::new(7, ItemKind::Chest, [30.0, 0.0]),
            GameItem::new(3, ItemKind::SmallCoin, [10.0, 0.0]),
            GameItem::new(5, ItemKind::LargeCoin, [20.0, 0.0]),
        ];
        let mut live = LiveSession::with_items(&quiet_config(), 1, default_origin(), items).unwrap();
        // 1 m/s² for 2 s, then coast at 2 m/s
        let summary = run_session(&mut live, 1000, |_, k| if k < 25 { [1.0, 0.0] } else { [0.0, 0.0] }).unwrap();
        assert!(summary.complete);
        assert_eq!(summary.hits.iter().map(|h| h.id).collect::<Vec<_>>(), vec![3, 5, 7]);
        let awarded: u64 = summary.hits.iter().map(|h| u64::from(h.points)).sum();
        assert_eq!(awarded, summary.score);
        for h in &summary.hits {
            let kind = live.game().items().iter().find(|i| i.id == h.id).unwrap().kind;
            assert_eq!(h.points, decayed_score(kind.initial_score(), h.elapsed, 5.0));
        }
    }

    #[test]
    fn acceleration_is_capped() {
        let live = LiveSession::new(&Config::default(), 1, default_origin()).unwrap();
        let [ax, ay] = live.cap_accel([30.0, 40.0]);
        assert!((ax.hypot(ay) - 2.0).abs() < 1e-12);
        assert!((ax / ay - 0.75).abs() < 1e-12);
        assert_eq!(live.cap_accel([f64::NAN, 1.0]), [0.0, 0.0]);
    }

    #[test]
    fn protocol_shapes() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"input","ax":0.5,"ay":-1}"#).unwrap();
        assert_eq!(m, ClientMessage::Input { ax: 0.5, ay: -1.0 });
        let m: ClientMessage = serde_json::from_str(r#"{"type":"start","seed":9}"#).unwrap();
        assert_eq!(m, ClientMessage::Start { seed: 9 });
        let m: ClientMessage = serde_json::from_str(r#"{"type":"reset"}"#).unwrap();
        assert_eq!(m, ClientMessage::Reset);
        let hit = ServerMessage::Hit { id: 2, points: 30 }.to_json();
        assert_eq!(hit, r#"{"type":"hit","id":2,"points":30}"#);
        let v: serde_json::Value = serde_json::from_str(
            &ServerMessage::Tick {
                t: 1.0,
                fused: [1.0, 2.0],
                truth: [1.5, 2.5],
                model: 1,
                score: 0,
                elapsed: 1.0,
                items: vec![ItemView {
                    id: 0,
                    kind: ItemKind::SmallCoin,
                    pos: [3.0, 4.0],
                    collected: false,
                }],
            }
            .to_json(),
        )
        .unwrap();
        assert_eq!(v["type"], "tick");
        assert_eq!(v["items"][0]["kind"], "small_coin");
        assert_eq!(v["fused"][1], 2.0);
    }

    #[test]
    fn connection_survives_bad_frames() {
        let mut c = Connection::new(Config::default(), 1).unwrap();
        for bad in ["not json", r#"{"type":"fly"}"#, r#"{"type":"input","ax":"x","ay":0}"#] {
            assert!(matches!(c.handle_text(bad).as_slice(), [ServerMessage::Error { .. }]));
        }
        assert!(c.handle_text(r#"{"type":"input","ax":1,"ay":0}"#).is_empty());
        let out = c.tick().unwrap();
        assert!(matches!(out.last(), Some(ServerMessage::Tick { .. })));
    }

    #[test]
    fn connection_ends_after_last_item() {
        let mut cfg = quiet_config();
        cfg.game.item_count = 1;
        let mut c = Connection::new(cfg, 4).unwrap();
        let target = c.session().unwrap().game().items()[0].position;
        let mut msgs = Vec::new();
        for _ in 0..5000 {
            let (p, v) = c.session().unwrap().truth();
            let a = steer_toward(p, v, target, 2.0);
            assert!(c.handle_text(&format!(r#"{{"type":"input","ax":{},"ay":{}}}"#, a[0], a[1])).is_empty());
            msgs.extend(c.tick().unwrap());
            if !c.is_running() {
                break;
            }
        }
        assert!(matches!(msgs.last(), Some(ServerMessage::End { .. })), "{:?}", msgs.last());
        assert!(c.tick().unwrap().is_empty());
        let hits: Vec<_> = msgs.iter().filter(|m| matches!(m, ServerMessage::Hit { .. })).collect();
        assert_eq!(hits.len(), 1);
    }
}
