//! Evaluation harness: instructing-ability success rates per backend and
//! study metrics from scripted-agent sessions.

pub mod agent;
pub mod instruct;
pub mod metrics;
pub mod report;
pub mod study;

pub use agent::{scripted_agent, AgentConfig, AgentError, Connection, InProcessConnection, Policy, TcpConnection};
pub use instruct::{instructing_eval, InstructReport, RandomBackend, StepOutcome, TaskEvaluation};
pub use metrics::{relative_reduction, study_metrics, MetricsError, ModeAggregate};
pub use study::{run_study, RunRecord, StudyPlan, Transport};
