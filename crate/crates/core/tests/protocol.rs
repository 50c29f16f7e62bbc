use std::io::Write;
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};

use policy_fusion::control::{Controller, TrainedPolicy};
use policy_fusion::fusion::{fuse, ActionDistribution, FusionEnsemble, FusionMethod, Members};
use policy_fusion::gridworld::{EnvKind, EnvSpec, ExpertKind, FeatureSet, GridState, Pos, StepMode, ARENA_FEATURES};
use policy_fusion::harness::protocol::{receive, send, ErrorCode, ServerMessage, Snapshot, StepRecord};
use policy_fusion::harness::session::{session_level, session_rng};
use policy_fusion::harness::{play_episode, Server};
use policy_fusion::rng::{self, Rng};
use policy_fusion::trainer::{Architecture, Checkpoint, Model, PolicyParams, PpoConfig, TrainerError, ValueParams};
use serde_json::{json, Value};

fn write_checkpoint(dir: &Path, name: &str, seed: u64, known: FeatureSet) {
    let arch = Architecture::mlp(ARENA_FEATURES, &[16]);
    let mut r = rng::stream(seed, &[]);
    // Large output layer so the distributions are far from uniform.
    let policy = PolicyParams(Model::init(arch.clone(), EnvKind::ArenaWorld.num_actions(), 4.0, &mut r));
    let value = ValueParams::new(arch, &mut r);
    let env = EnvSpec::arena(FeatureSet::ALL);
    Checkpoint::new(&policy, &value, &PpoConfig::default(), seed, &env, known, 0)
        .save(&dir.join(format!("{name}.json")))
        .unwrap();
}

fn fixture() -> (tempfile::TempDir, SocketAddr) {
    let dir = tempfile::tempdir().unwrap();
    write_checkpoint(dir.path(), "main", 1, FeatureSet::NONE);
    write_checkpoint(dir.path(), "orb", 2, FeatureSet::ORB);
    write_checkpoint(dir.path(), "hazard", 3, FeatureSet::ALL);
    let addr = Server::new(dir.path()).spawn("127.0.0.1:0").unwrap();
    (dir, addr)
}

struct Client(TcpStream);

impl Client {
    fn connect(addr: SocketAddr) -> Self {
        Client(TcpStream::connect(addr).unwrap())
    }

    fn send(&mut self, v: Value) {
        send(&mut self.0, &v).unwrap();
    }

    fn recv(&mut self) -> ServerMessage {
        receive(&mut self.0).unwrap()
    }

    fn call(&mut self, v: Value) -> ServerMessage {
        self.send(v);
        self.recv()
    }

    fn snapshot(&mut self, v: Value) -> Snapshot {
        match self.call(v) {
            ServerMessage::Snapshot(s) => *s,
            other => panic!("expected snapshot, got {other:?}"),
        }
    }

    fn error(&mut self, v: Value) -> ErrorCode {
        match self.call(v) {
            ServerMessage::Error { code, .. } => code,
            other => panic!("expected error, got {other:?}"),
        }
    }

    fn create(&mut self, seed: u64, subs: &[&str]) -> Snapshot {
        self.snapshot(json!({
            "type": "create-session", "env": "arena-world", "flags": ["orb", "death-tile"],
            "seed": seed, "main": "main", "subs": subs,
        }))
    }
}

fn dist(p: &[f64]) -> ActionDistribution {
    ActionDistribution::new(p.to_vec()).unwrap()
}

/// Recomputes the fused distribution from the per-policy distributions a
/// snapshot reports.
fn check_fused(r: &StepRecord) {
    let main = dist(r.policies[0].distribution.as_ref().unwrap());
    let subs: Vec<ActionDistribution> = r.policies[1..]
        .iter()
        .map(|p| p.distribution.as_deref().map_or(main.clone(), dist))
        .collect();
    let members = Members::new(&main, &subs, &r.fusion.active).unwrap();
    let want = fuse(r.fusion.method, r.fusion.epsilon, &members).unwrap();
    assert_eq!(want.distribution.len(), r.fused.len());
    for (a, b) in want.distribution.probs().iter().zip(&r.fused) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
    assert_eq!(want.k_star.map(|k| k.0), r.k_star);
}

/// Records the state each action was chosen in.
struct Recorder<C> {
    inner: C,
    seen: Mutex<Vec<(usize, Pos, Option<Pos>)>>,
}

impl<C: Controller> Controller for Recorder<C> {
    fn act(&self, state: &GridState, rng: &mut Rng) -> Result<usize, TrainerError> {
        let a = self.inner.act(state, rng)?;
        self.seen
            .lock()
            .unwrap()
            .push((a, state.agent.pos, state.opponent.map(|o| o.pos)));
        Ok(a)
    }
}

fn load(dir: &Path, name: &str) -> Arc<TrainedPolicy> {
    let ck = Checkpoint::load(&dir.join(format!("{name}.json"))).unwrap();
    Arc::new(TrainedPolicy::new(ck.policy().unwrap(), EnvKind::ArenaWorld, ck.known).unwrap())
}

#[test]
fn protocol_episode_matches_library_rollout() {
    let (dir, addr) = fixture();
    let mut c = Client::connect(addr);
    for seed in [3u64, 17, 40] {
        let first = c.create(seed, &["orb", "hazard"]);
        assert_eq!((first.step, first.last.is_none()), (0, true));
        assert_eq!(first.policies, ["main", "orb", "hazard"]);
        let mut served = vec![(first.grid.agent.pos, first.grid.opponent.map(|o| o.pos))];
        let mut actions = Vec::new();
        let mut last = first;
        while !last.done {
            last = c.snapshot(json!({"type": "step"}));
            let r = last.last.as_ref().unwrap();
            check_fused(r);
            actions.push(r.action);
            served.push((last.grid.agent.pos, last.grid.opponent.map(|o| o.pos)));
        }
        assert_eq!(c.error(json!({"type": "step"})), ErrorCode::EpisodeFinished);

        let spec = EnvSpec::arena(FeatureSet::ALL);
        let ensemble = FusionEnsemble::new(
            load(dir.path(), "main"),
            vec![load(dir.path(), "orb"), load(dir.path(), "hazard")],
            FusionMethod::EntropyWeighted,
            0.0,
        )
        .unwrap();
        let rec = Recorder {
            inner: ensemble,
            seen: Mutex::new(Vec::new()),
        };
        let level = session_level(&spec, seed).unwrap();
        let summary = play_episode(
            &rec,
            &ExpertKind::RandomOpponent,
            &level,
            &spec,
            StepMode::Terminal,
            &mut session_rng(seed),
        )
        .unwrap();
        let seen = rec.seen.into_inner().unwrap();
        assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), actions);
        for (i, s) in seen.iter().enumerate() {
            assert_eq!((s.1, s.2), served[i]);
        }
        assert_eq!(summary.length, last.step);
        assert_eq!(summary.outcome, last.outcome);
        assert_eq!(summary.rewards.get(policy_fusion::gridworld::Channel::R0Env), last.totals["R0_env"]);
    }
}

#[test]
fn live_control_changes_the_next_distribution() {
    let (_dir, addr) = fixture();
    let mut c = Client::connect(addr);
    c.create(5, &["orb", "hazard"]);
    let ack = c.snapshot(json!({"type": "set-fusion", "method": "MP", "epsilon": 0.0, "active": [true, true]}));
    assert_eq!(ack.fusion.method, FusionMethod::Mixture);
    assert!(ack.last.is_none());
    let mp = c.snapshot(json!({"type": "step"}));
    assert_eq!(mp.last.as_ref().unwrap().fusion.method, FusionMethod::Mixture);
    check_fused(mp.last.as_ref().unwrap());

    for (method, eps) in [("EW", 0.0), ("ET", 0.2), ("ET", 0.9), ("PP", 0.0)] {
        c.snapshot(json!({"type": "set-fusion", "method": method, "epsilon": eps, "active": [true, false]}));
        let s = c.snapshot(json!({"type": "step"}));
        let r = s.last.unwrap();
        assert_eq!(r.fusion.method.short_name(), method);
        assert_eq!(r.fusion.epsilon, eps);
        assert!(r.policies[2].distribution.is_none());
        check_fused(&r);
    }

    c.snapshot(json!({"type": "set-fusion", "method": "EW", "epsilon": 0.0, "active": [false, false]}));
    let r = c.snapshot(json!({"type": "step"})).last.unwrap();
    assert_eq!(Some(&r.fused), r.policies[0].distribution.as_ref());
    assert_eq!(r.k_star, None);

    // Rejected changes leave the settings alone.
    assert_eq!(
        c.error(json!({"type": "set-fusion", "method": "PP", "epsilon": 0.0, "active": [true]})),
        ErrorCode::InvalidRequest
    );
    let s = c.snapshot(json!({"type": "step"}));
    assert_eq!(s.fusion.method, FusionMethod::EntropyWeighted);
}

#[test]
fn reset_and_reconnect_reproduce_snapshots() {
    let (_dir, addr) = fixture();
    let mut a = Client::connect(addr);
    let s0 = a.create(9, &["orb"]);
    let steps: Vec<Snapshot> = (0..5).map(|_| a.snapshot(json!({"type": "step"}))).collect();
    let r = a.snapshot(json!({"type": "reset"}));
    assert_eq!((r.step, r.seed, &r.grid), (0, 9, &s0.grid));
    let again: Vec<Snapshot> = (0..5).map(|_| a.snapshot(json!({"type": "step"}))).collect();
    assert_eq!(steps, again);

    let mut b = Client::connect(addr);
    let t0 = b.create(9, &["orb"]);
    assert_ne!(t0.session, s0.session);
    assert_eq!(Snapshot { session: s0.session.clone(), ..t0 }, s0);

    let other = a.snapshot(json!({"type": "reset", "seed": 10}));
    assert_eq!(other.seed, 10);
}

#[test]
fn auto_run_and_pause() {
    let (_dir, addr) = fixture();
    let mut c = Client::connect(addr);
    c.create(11, &["orb"]);
    c.send(json!({"type": "auto-run", "n": 4, "interval-ms": 1}));
    let runs: Vec<Snapshot> = (0..4)
        .map(|_| match c.recv() {
            ServerMessage::Snapshot(s) => *s,
            other => panic!("{other:?}"),
        })
        .collect();
    assert_eq!(runs.iter().map(|s| s.step).collect::<Vec<_>>(), [1, 2, 3, 4]);
    assert!(runs[..3].iter().all(|s| s.running) && !runs[3].running);

    c.send(json!({"type": "auto-run", "n": 100000, "interval-ms": 20}));
    let first = c.recv();
    assert!(matches!(first, ServerMessage::Snapshot(ref s) if s.running));
    c.send(json!({"type": "pause"}));
    let stopped_at = loop {
        if let ServerMessage::Snapshot(s) = c.recv() {
            if !s.running {
                break s.step;
            }
        }
    };
    let next = c.snapshot(json!({"type": "step"}));
    assert_eq!(next.step, stopped_at + 1);
    assert!(!next.running);
}

#[test]
fn error_codes() {
    let (_dir, addr) = fixture();
    let mut a = Client::connect(addr);
    assert_eq!(a.error(json!({"type": "step"})), ErrorCode::UnknownSession);
    assert_eq!(a.error(json!({"type": "step", "session": "s999"})), ErrorCode::UnknownSession);
    assert_eq!(a.error(json!({"type": "warp"})), ErrorCode::MalformedMessage);
    assert_eq!(a.error(json!({"type": "auto-run", "n": 3})), ErrorCode::MalformedMessage);
    a.0.write_all(&[0, 0, 0, 3, b'a', b'b', b'c']).unwrap();
    assert!(matches!(a.recv(), ServerMessage::Error { code: ErrorCode::MalformedMessage, .. }));
    for main in ["../main", "missing"] {
        let code = a.error(json!({
            "type": "create-session", "env": "arena-world", "seed": 1, "main": main,
        }));
        assert_eq!(code, ErrorCode::InvalidRequest);
    }
    assert_eq!(
        a.error(json!({"type": "create-session", "env": "collect-world", "seed": 1, "main": "main"})),
        ErrorCode::InvalidRequest
    );

    let id = a.create(2, &[]).session;
    let mut b = Client::connect(addr);
    assert_eq!(b.error(json!({"type": "step", "session": id})), ErrorCode::SessionBusy);
    // The connection still works after an error.
    a.snapshot(json!({"type": "step"}));
    drop(a);
    let mut tries = 0;
    let s = loop {
        match b.call(json!({"type": "step", "session": id})) {
            ServerMessage::Snapshot(s) => break s,
            ServerMessage::Error { code, .. } => {
                assert_eq!(code, ErrorCode::SessionBusy);
                tries += 1;
                assert!(tries < 200, "session never released");
                std::thread::sleep(std::time::Duration::from_millis(10));
            }
        }
    };
    assert_eq!(s.step, 2);
}

#[test]
fn oversized_frame_closes_the_connection() {
    let (_dir, addr) = fixture();
    let mut c = Client::connect(addr);
    c.0.write_all(&u32::MAX.to_be_bytes()).unwrap();
    assert!(matches!(c.recv(), ServerMessage::Error { code: ErrorCode::MalformedMessage, .. }));
    assert!(receive(&mut c.0).is_err());
}
