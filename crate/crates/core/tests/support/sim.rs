//! Small scripted human used by the session tests.

#![allow(dead_code)]

use horizon_core::agents::ScriptedAgent;
use horizon_core::domain::{Offer, OptionIndex, Role, TaskIssue, Timing};
use horizon_core::AgentKind;
use horizon_core::{Condition, Phase, Session, SessionConfig};

/// Walks down its own payoff ranking one step per turn and accepts the
/// agent's standing offer from turn `patience` on.
pub fn human_offer(task: &[TaskIssue], turn: u32, standing: Option<&Offer>, patience: u32) -> Offer {
    if let Some(standing) = standing {
        if turn >= patience {
            return Offer::new(Role::Human, standing.selections.clone());
        }
    }
    let selections = task
        .iter()
        .map(|issue| {
            let col = issue.payoffs.human_payoffs;
            let mut order: Vec<usize> = (0..col.len()).collect();
            order.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
            let step = ((turn - 1) as usize).min(order.len() - 1);
            (issue.id().clone(), OptionIndex::new(order[step]).unwrap())
        })
        .collect();
    Offer::new(Role::Human, selections)
}

pub fn timing(turn: u32) -> Timing {
    let start = (turn as u64 - 1) * 20_000;
    Timing {
        received_at: start,
        first_keystroke_at: start + 3_000 + turn as u64 * 10,
        submitted_at: start + 9_000,
    }
}

/// Drives a scripted session to its end.
pub fn run(task: Vec<TaskIssue>, condition: Condition, seed: u64, patience: u32) -> Session {
    drive(task, condition, seed, |task, turn, standing| {
        human_offer(task, turn, standing, patience)
    })
}

/// Human that repeats its opening demand forever.
pub fn stubborn(task: Vec<TaskIssue>, seed: u64) -> Session {
    drive(task, Condition::DecisionSupport, seed, |task, _, _| {
        human_offer(task, 1, None, u32::MAX)
    })
}

fn drive<F>(task: Vec<TaskIssue>, condition: Condition, seed: u64, mut policy: F) -> Session
where
    F: FnMut(&[TaskIssue], u32, Option<&Offer>) -> Offer,
{
    let config = SessionConfig::new(format!("s{seed}"), condition, AgentKind::Scripted, seed);
    let mut session = Session::new(config, task).unwrap();
    let mut agent = ScriptedAgent::new(seed);
    let mut turn = 1;
    while !session.phase().is_terminal() {
        let offer = policy(session.task(), turn, session.standing_agent_offer());
        session.submit_human_offer(offer, timing(turn)).unwrap();
        if session.phase() == Phase::AwaitingAgent {
            session.advance_agent(&mut agent).unwrap();
        }
        turn += 1;
    }
    session
}
