//! Study runs: scripted sessions for each mode, counterbalanced over tasks.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use taskpilot_server::protocol::Summary;
use taskpilot_server::{Services, SessionMode};

use crate::agent::{scripted_agent, AgentConfig, InProcessConnection, Policy, TcpConnection, DEFAULT_STEP_LIMIT};

/// The two six-action tasks, one per environment.
pub const DEFAULT_STUDY_TASKS: [&str; 2] = ["kitchen_fruit", "medlab_vitamins_pills"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    InProcess,
    Tcp(SocketAddr),
}

#[derive(Debug, Clone)]
pub struct StudyPlan {
    pub policy: Policy,
    pub modes: Vec<SessionMode>,
    pub runs: usize,
    pub tasks: Vec<String>,
    pub seed: u64,
    pub parallel: bool,
    pub step_limit: usize,
}

impl StudyPlan {
    pub fn new(policy: Policy, runs: usize) -> Self {
        StudyPlan {
            policy,
            modes: SessionMode::ALL.to_vec(),
            runs,
            tasks: DEFAULT_STUDY_TASKS.iter().map(|t| t.to_string()).collect(),
            seed: 42,
            parallel: false,
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }

    /// Run `r` uses task `(r + m) % tasks` for the `m`-th mode, so each
    /// participant meets every environment once per mode pair.
    fn sessions(&self) -> Vec<(usize, SessionMode, String, u64)> {
        let mut out = Vec::new();
        for run in 0..self.runs {
            for (m, &mode) in self.modes.iter().enumerate() {
                let task = self.tasks[(run + m) % self.tasks.len()].clone();
                let seed = self.seed.wrapping_add((run * self.modes.len() + m) as u64);
                out.push((run, mode, task, seed));
            }
        }
        out
    }
}

/// One line of the machine-readable study summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub policy: String,
    pub summary: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn run_study(services: Arc<Services>, plan: &StudyPlan, transport: Transport) -> Vec<RunRecord> {
    let one = |(run, mode, task, seed): (usize, SessionMode, String, u64)| {
        run_one(&services, plan, transport, run, mode, &task, seed)
    };
    let sessions = plan.sessions();
    let mut records: Vec<RunRecord> = if plan.parallel {
        sessions.into_par_iter().map(one).collect()
    } else {
        sessions.into_iter().map(one).collect()
    };
    records.sort_by(|a, b| (a.run, a.summary.mode.as_str()).cmp(&(b.run, b.summary.mode.as_str())));
    records
}

fn run_one(
    services: &Arc<Services>,
    plan: &StudyPlan,
    transport: Transport,
    run: usize,
    mode: SessionMode,
    task: &str,
    seed: u64,
) -> RunRecord {
    let failed = |scenario: String, error: String| RunRecord {
        run,
        policy: plan.policy.to_string(),
        summary: Summary {
            scenario,
            task: task.to_string(),
            mode,
            completed: false,
            elapsed_seconds: None,
            wrong_action_count: 0,
        },
        error: Some(error),
    };
    let Some((t, s)) = services.catalog.task_with_scenario(task) else {
        return failed(String::new(), format!("unknown task `{task}`"));
    };
    let mut config = AgentConfig::new(s, t, mode, plan.policy, seed);
    config.step_limit = plan.step_limit;
    let result = match transport {
        Transport::InProcess => {
            let mut conn = InProcessConnection::new(services.clone(), format!("run{run}-{mode}"));
            scripted_agent(&mut conn, config)
        }
        Transport::Tcp(addr) => TcpConnection::connect(addr, Duration::from_secs(30))
            .and_then(|mut conn| scripted_agent(&mut conn, config)),
    };
    match result {
        Ok(summary) => RunRecord {
            run,
            policy: plan.policy.to_string(),
            summary,
            error: None,
        },
        Err(e) => failed(s.name().to_string(), format!("{}: {e}", e.code())),
    }
}
