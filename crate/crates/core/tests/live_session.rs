//! Closed-loop behaviour of a live session driven by a scripted client.

use hit_core::live::{
    ClientMessage, Connection, ErrorCode, LevelPosteriors, ServerMessage, StateMessage,
    PROTOCOL_VERSION,
};
use hit_core::sim::workspace::{advance, dist, Point};
use hit_core::supervisor::{ActiveTree, Mode, SupervisorEvent};

const DT: f64 = 1.0 / 30.0;

struct Client {
    conn: Connection,
    t: f64,
    wrist: Point,
    states: Vec<StateMessage>,
}

impl Client {
    fn start() -> Self {
        let mut conn = Connection::new(300);
        let reply = conn.handle(ClientMessage::Hello {
            version: PROTOCOL_VERSION,
            preset: None,
            variant: None,
            seed: Some(7),
        });
        assert!(reply.is_none());
        let mut c = Self {
            conn,
            t: 0.0,
            wrist: [0.0, -0.1],
            states: Vec::new(),
        };
        c.send_wrist();
        c
    }

    fn send_wrist(&mut self) {
        let reply = self.conn.handle(ClientMessage::Wrist {
            t: self.t,
            x: self.wrist[0],
            y: self.wrist[1],
        });
        assert!(reply.is_none(), "{reply:?}");
    }

    fn tick(&mut self) -> &StateMessage {
        self.t += DT;
        match self.conn.tick() {
            Some(ServerMessage::State(s)) => self.states.push(*s),
            other => panic!("expected state, got {other:?}"),
        }
        self.states.last().unwrap()
    }

    fn hold(&mut self, secs: f64) {
        for _ in 0..(secs / DT).round() as usize {
            self.send_wrist();
            self.tick();
        }
    }

    fn move_to(&mut self, to: Point, speed: f64) {
        loop {
            let (next, arrived) = advance(self.wrist, to, speed * DT);
            self.wrist = next;
            self.send_wrist();
            self.tick();
            if arrived {
                break;
            }
        }
    }

    /// Creeps toward the effector until within `reach`, giving up after `limit` s.
    fn approach_effector(&mut self, speed: f64, reach: f64, limit: f64) -> bool {
        for _ in 0..(limit / DT) as usize {
            let eff = self.states.last().map(|s| s.robot.position).unwrap();
            if dist(self.wrist, eff) <= reach {
                return true;
            }
            let (next, _) = advance(self.wrist, eff, speed * DT);
            self.wrist = next;
            self.send_wrist();
            self.tick();
        }
        false
    }

    fn events(&self) -> Vec<(u64, SupervisorEvent)> {
        self.states
            .iter()
            .flat_map(|s| s.events.iter().map(move |e| (s.frame, *e)))
            .collect()
    }

    fn first(&self, pred: impl Fn(&SupervisorEvent) -> bool) -> Option<u64> {
        self.events()
            .into_iter()
            .find(|(_, e)| pred(e))
            .map(|(f, _)| f)
    }
}

#[test]
fn hello_starts_uniform_in_coexistence() {
    let c = Client::start();
    let engine = c.conn.session().unwrap().world().engine();
    let post = LevelPosteriors::split(&engine.posterior());
    assert_eq!(
        post.interaction.values().copied().collect::<Vec<_>>(),
        vec![0.5, 0.5]
    );
    // Coexistence splits evenly over the regions and prep.
    let coexist: Vec<f64> = post
        .task
        .iter()
        .filter(|(k, _)| *k != "failure_recovery")
        .map(|(_, p)| *p)
        .collect();
    assert_eq!(coexist.len(), 5);
    assert!(
        coexist.iter().all(|p| (p - 0.1).abs() < 1e-12),
        "{coexist:?}"
    );
    assert_eq!(engine.state().mode, Mode::Coexistence);

    let mut c = c;
    let s = c.tick().clone();
    assert_eq!(s.version, PROTOCOL_VERSION);
    assert_eq!(s.frame, 0);
    assert_eq!(s.mode, Mode::Coexistence);
    assert_eq!(s.active_tree, ActiveTree::It);
    let total: f64 = s.posteriors.task.values().sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn holding_over_a_region_enqueues_it() {
    let mut c = Client::start();
    c.move_to([-0.3, 0.25], 0.6);
    c.hold(3.0);
    let enq = c.first(|e| matches!(e, SupervisorEvent::Enqueued { region: 2 }));
    assert!(enq.is_some(), "{:?}", c.events());
}

#[test]
fn approach_then_flick_away_reverts() {
    let mut c = Client::start();
    c.hold(1.0);
    let eff = c.states.last().unwrap().robot.position;
    c.move_to([eff[0], eff[1] - 0.35], 0.5);
    c.approach_effector(0.1, 0.1, 6.0);
    let vt = c
        .states
        .iter()
        .position(|s| s.active_tree == ActiveTree::Vt);
    assert!(vt.is_some(), "{:?}", c.events());
    c.move_to([0.6, -0.2], 1.0);
    c.hold(4.0);
    let revert = c.first(|e| matches!(e, SupervisorEvent::AbnormalRevert));
    assert!(revert.is_some(), "{:?}", c.events());
    assert_eq!(c.states.last().unwrap().active_tree, ActiveTree::It);
    assert_eq!(c.states.last().unwrap().mode, Mode::Coexistence);
}

#[test]
fn drag_approach_grab_release_pushes_where_released() {
    let mut c = Client::start();
    c.move_to([0.3, 0.55], 0.6);
    c.hold(3.0);
    c.move_to([0.0, -0.1], 0.6);
    c.hold(4.0);
    let eff = c.states.last().unwrap().robot.position;
    c.move_to([eff[0], eff[1] - 0.35], 0.5);
    assert!(c.approach_effector(0.1, 0.05, 10.0), "{:?}", c.events());
    c.conn.handle(ClientMessage::Grab { grabbed: true });
    c.hold(0.5);
    assert_eq!(
        c.states.last().unwrap().mode,
        Mode::CooperationGuidance,
        "{:?}",
        c.events()
    );
    let off = {
        let s = c.states.last().unwrap();
        [
            s.robot.position[0] - c.wrist[0],
            s.robot.position[1] - c.wrist[1],
        ]
    };
    c.move_to([-0.3 - off[0], 0.55 - off[1]], 0.3);
    c.conn.handle(ClientMessage::Grab { grabbed: false });
    c.hold(3.0);
    let order = [
        c.first(|e| matches!(e, SupervisorEvent::Enqueued { .. })),
        c.first(|e| matches!(e, SupervisorEvent::CooperationDetected)),
        c.first(|e| matches!(e, SupervisorEvent::Contact)),
        c.first(|e| matches!(e, SupervisorEvent::Release)),
    ];
    assert!(order.iter().all(Option::is_some), "{:?}", c.events());
    assert!(order.windows(2).all(|w| w[0] < w[1]), "{order:?}");
    let push = c
        .states
        .iter()
        .find_map(|s| s.push.clone().filter(|p| p.guided));
    let push = push.expect("guided push");
    assert_eq!(push.region, Some(0));
}

#[test]
fn frames_never_regress_across_reset() {
    let mut c = Client::start();
    c.hold(0.5);
    assert!(c.conn.handle(ClientMessage::Reset).is_none());
    c.hold(0.5);
    assert!(c.states.windows(2).all(|w| w[1].frame == w[0].frame + 1));
    let restart = c.states.iter().skip(1).position(|s| s.time == 0.0);
    assert!(restart.is_some());
}

#[test]
fn protocol_errors_are_reported_with_codes() {
    let mut conn = Connection::new(30);
    let code = |m: Option<ServerMessage>| match m {
        Some(ServerMessage::Error { code, .. }) => Some(code),
        _ => None,
    };
    assert_eq!(
        code(conn.handle_text("{not json")),
        Some(ErrorCode::Malformed)
    );
    assert_eq!(
        code(conn.handle_text(r#"{"type":"reset"}"#)),
        Some(ErrorCode::NotStarted)
    );
    assert_eq!(
        code(conn.handle_text(r#"{"type":"hello","version":2}"#)),
        Some(ErrorCode::VersionMismatch)
    );
    assert_eq!(
        code(conn.handle_text(r#"{"type":"hello","version":1,"preset":"moon"}"#)),
        Some(ErrorCode::UnknownPreset)
    );
    assert_eq!(
        code(conn.handle_text(r#"{"type":"hello","version":1}"#)),
        None
    );
    assert_eq!(
        code(conn.handle_text(r#"{"type":"wrist","t":1.0,"x":0,"y":0}"#)),
        None
    );
    assert_eq!(
        code(conn.handle_text(r#"{"type":"wrist","t":0.5,"x":0,"y":0}"#)),
        Some(ErrorCode::OutOfOrder)
    );
}

#[test]
fn sessions_on_separate_connections_are_independent() {
    let mut a = Client::start();
    let mut b = Client::start();
    b.move_to([-0.3, 0.25], 0.6);
    b.hold(3.0);
    for _ in 0..b.states.len() {
        a.tick();
    }
    assert!(a.events().is_empty(), "{:?}", a.events());
    assert!(!b.events().is_empty());
    assert_eq!(a.states.last().unwrap().queue, Vec::<usize>::new());
}
