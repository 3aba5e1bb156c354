//! Event-driven eight-state node lifecycle.
//!
//! Three groups: network integration (Init, Search, JoinNetwork), normal
//! operation (Active, ExecuteJob) and recovery (ParentRecovery,
//! RecoveryAwait, NodeRestart). The transition function is pure; each step
//! returns the next state plus the actions the node runtime must execute.
//! Events an exact state has no use for are ignored with a trace note, so
//! duplicated or out-of-order control messages cannot corrupt a node.

use std::collections::VecDeque;
use std::net::Ipv4Addr;

use crate::wifi::ScanHit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LifecycleState {
    Init,
    Search,
    JoinNetwork,
    Active,
    ExecuteJob,
    ParentRecovery,
    RecoveryAwait,
    NodeRestart,
}

impl LifecycleState {
    pub fn name(self) -> &'static str {
        match self {
            LifecycleState::Init => "init",
            LifecycleState::Search => "search",
            LifecycleState::JoinNetwork => "join-network",
            LifecycleState::Active => "active",
            LifecycleState::ExecuteJob => "execute-job",
            LifecycleState::ParentRecovery => "parent-recovery",
            LifecycleState::RecoveryAwait => "recovery-await",
            LifecycleState::NodeRestart => "node-restart",
        }
    }

    pub fn is_operational(self) -> bool {
        matches!(self, LifecycleState::Active | LifecycleState::ExecuteJob)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LcEvent {
    Start,
    ScanComplete(Vec<ScanHit>),
    /// Candidate-status collection window closed; runtime ranks and connects.
    PirWindowClosed,
    Connected {
        parent: Ipv4Addr,
        sta_ip: Ipv4Addr,
    },
    /// The current candidate refused or timed out.
    ConnectFailed,
    CandidatesExhausted,
    ParentLost {
        old_parent: Ipv4Addr,
    },
    ChildLeft {
        child: Ipv4Addr,
    },
    TbaReceived {
        from: Ipv4Addr,
    },
    TrnReceived,
    PrnReceived {
        from: Ipv4Addr,
    },
    /// Routing safeguard: the root went odd-sequence in an update.
    RootUnreachable,
    /// Routing safeguard: an even-sequence root route came back.
    RootReachable,
    RecoveryFailed,
    RestartDone,
    JobStart,
    JobDone,
    PdrReceived {
        from: Ipv4Addr,
    },
    CrrReceived {
        from: Ipv4Addr,
    },
}

impl LcEvent {
    pub fn name(&self) -> &'static str {
        match self {
            LcEvent::Start => "start",
            LcEvent::ScanComplete(_) => "scan-complete",
            LcEvent::PirWindowClosed => "pir-window-closed",
            LcEvent::Connected { .. } => "connected",
            LcEvent::ConnectFailed => "connect-failed",
            LcEvent::CandidatesExhausted => "candidates-exhausted",
            LcEvent::ParentLost { .. } => "parent-lost",
            LcEvent::ChildLeft { .. } => "child-left",
            LcEvent::TbaReceived { .. } => "tba",
            LcEvent::TrnReceived => "trn",
            LcEvent::PrnReceived { .. } => "prn",
            LcEvent::RootUnreachable => "root-unreachable",
            LcEvent::RootReachable => "root-reachable",
            LcEvent::RecoveryFailed => "recovery-failed",
            LcEvent::RestartDone => "restart-done",
            LcEvent::JobStart => "job-start",
            LcEvent::JobDone => "job-done",
            LcEvent::PdrReceived { .. } => "pdr",
            LcEvent::CrrReceived { .. } => "crr",
        }
    }
}

/// Side effects the runtime performs after a transition.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Root skips Search entirely and starts serving.
    RootUp,
    BeginScan,
    /// Scan came back empty; try again after a delay.
    ScheduleRescan,
    /// Send discovery requests to the scan hits and open the status window.
    BeginJoin(Vec<ScanHit>),
    /// Rank collected candidate info and send a registration to the best.
    SelectAndConnect,
    TryNextCandidate,
    /// Joined: exchange tables, attach middleware, register with the
    /// application, report integration durations.
    EnterNetwork,
    /// Parent link broke: invalidate routes, alert the subtree, scan for a
    /// replacement parent while keeping the subtree attached.
    StartParentRecovery { old_parent: Ipv4Addr },
    /// Forward the break alert to our own children.
    CascadeTba,
    /// Reattached after recovery: cascade the restored notice downstream.
    RecoveryComplete,
    SuspendOps,
    ResumeOps,
    /// Release children with reset notifications, tear the AP down, clear
    /// network state.
    DoNodeRestart,
    ReplyPir { to: Ipv4Addr },
    HandleCrr { from: Ipv4Addr },
    HandleChildLeft { child: Ipv4Addr },
}

/// Pure transition function. Returns `None` when the event is invalid in
/// the current state (the runtime logs it and moves on).
pub fn transition(
    state: LifecycleState,
    event: &LcEvent,
    is_root: bool,
) -> Option<(LifecycleState, Vec<Action>)> {
    use Action as A;
    use LifecycleState as S;

    // Requests from other nodes are answered from any state that can serve
    // them; they never change our own state.
    match event {
        LcEvent::PdrReceived { from } => {
            return if matches!(state, S::Init | S::NodeRestart) {
                None
            } else {
                Some((state, vec![A::ReplyPir { to: *from }]))
            };
        }
        LcEvent::CrrReceived { from } => {
            // Adoption only while operational; a recovering or searching
            // parent cannot promise connectivity.
            return if state.is_operational() {
                Some((state, vec![A::HandleCrr { from: *from }]))
            } else {
                None
            };
        }
        LcEvent::ChildLeft { child } => {
            return Some((state, vec![A::HandleChildLeft { child: *child }]));
        }
        _ => {}
    }

    if is_root {
        // The root has no parent and never suspends: recovery-side events
        // are meaningless for it.
        match (state, event) {
            (S::Init, LcEvent::Start) => return Some((S::Active, vec![A::RootUp])),
            (S::Active, LcEvent::JobStart) => return Some((S::ExecuteJob, vec![])),
            (S::ExecuteJob, LcEvent::JobDone) => return Some((S::Active, vec![])),
            _ => return None,
        }
    }

    match (state, event) {
        (S::Init, LcEvent::Start) => Some((S::Search, vec![A::BeginScan])),

        (S::Search, LcEvent::ScanComplete(hits)) => {
            if hits.is_empty() {
                Some((S::Search, vec![A::ScheduleRescan]))
            } else {
                Some((S::JoinNetwork, vec![A::BeginJoin(hits.clone())]))
            }
        }

        (S::JoinNetwork, LcEvent::PirWindowClosed) => {
            Some((S::JoinNetwork, vec![A::SelectAndConnect]))
        }
        (S::JoinNetwork, LcEvent::Connected { .. }) => Some((S::Active, vec![A::EnterNetwork])),
        (S::JoinNetwork, LcEvent::ConnectFailed) => {
            Some((S::JoinNetwork, vec![A::TryNextCandidate]))
        }
        (S::JoinNetwork, LcEvent::CandidatesExhausted) => Some((S::Search, vec![A::BeginScan])),

        (S::Active | S::ExecuteJob, LcEvent::ParentLost { old_parent }) => Some((
            S::ParentRecovery,
            vec![A::StartParentRecovery {
                old_parent: *old_parent,
            }],
        )),
        (S::Active | S::ExecuteJob, LcEvent::TbaReceived { .. }) => {
            Some((S::RecoveryAwait, vec![A::CascadeTba, A::SuspendOps]))
        }
        (S::Active | S::ExecuteJob, LcEvent::RootUnreachable) => {
            Some((S::RecoveryAwait, vec![A::SuspendOps]))
        }
        (S::Active, LcEvent::JobStart) => Some((S::ExecuteJob, vec![])),
        (S::ExecuteJob, LcEvent::JobDone) => Some((S::Active, vec![])),

        (S::RecoveryAwait, LcEvent::TrnReceived) => {
            Some((S::Active, vec![A::RecoveryComplete, A::ResumeOps]))
        }
        (S::RecoveryAwait, LcEvent::RootReachable) => Some((S::Active, vec![A::ResumeOps])),
        (S::RecoveryAwait, LcEvent::PrnReceived { from }) => Some((
            S::ParentRecovery,
            vec![A::StartParentRecovery { old_parent: *from }],
        )),
        (S::RecoveryAwait, LcEvent::ParentLost { old_parent }) => Some((
            S::ParentRecovery,
            vec![A::StartParentRecovery {
                old_parent: *old_parent,
            }],
        )),
        (S::RecoveryAwait, LcEvent::TbaReceived { .. }) => {
            // Already suspended; keep forwarding the alert downstream.
            Some((S::RecoveryAwait, vec![A::CascadeTba]))
        }

        (S::ParentRecovery, LcEvent::ScanComplete(hits)) => {
            if hits.is_empty() {
                Some((S::ParentRecovery, vec![A::TryNextCandidate]))
            } else {
                Some((S::ParentRecovery, vec![A::BeginJoin(hits.clone())]))
            }
        }
        (S::ParentRecovery, LcEvent::PirWindowClosed) => {
            Some((S::ParentRecovery, vec![A::SelectAndConnect]))
        }
        (S::ParentRecovery, LcEvent::Connected { .. }) => {
            Some((S::Active, vec![A::RecoveryComplete]))
        }
        (S::ParentRecovery, LcEvent::ConnectFailed) => {
            Some((S::ParentRecovery, vec![A::TryNextCandidate]))
        }
        (S::ParentRecovery, LcEvent::CandidatesExhausted) => {
            Some((S::ParentRecovery, vec![A::TryNextCandidate]))
        }
        (S::ParentRecovery, LcEvent::RecoveryFailed) => {
            Some((S::NodeRestart, vec![A::DoNodeRestart]))
        }

        (S::NodeRestart, LcEvent::RestartDone) => Some((S::Search, vec![A::BeginScan])),

        _ => None,
    }
}

/// Fixed-capacity ring of lifecycle events. When full, the oldest event is
/// overwritten rather than blocking; the overwrite count stays observable.
#[derive(Debug, Clone)]
pub struct EventBuffer {
    ring: VecDeque<LcEvent>,
    capacity: usize,
    overwrites: u64,
}

impl EventBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        EventBuffer {
            ring: VecDeque::with_capacity(capacity),
            capacity,
            overwrites: 0,
        }
    }

    pub fn push(&mut self, event: LcEvent) {
        if self.ring.len() == self.capacity {
            self.ring.pop_front();
            self.overwrites += 1;
        }
        self.ring.push_back(event);
    }

    pub fn pop(&mut self) -> Option<LcEvent> {
        self.ring.pop_front()
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn overwrites(&self) -> u64 {
        self.overwrites
    }
}
