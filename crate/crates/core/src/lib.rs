//! Simulation of range-partitioned load balancing over an ordered key
//! domain, with exact threshold arithmetic, cost accounting and trace
//! checking.

pub mod balancer;
pub mod checker;
pub mod cli;
pub mod config;
pub mod directory;
pub mod error;
pub mod keyspace;
pub mod metrics;
pub mod workload;

pub use balancer::{BalanceKind, BalanceOutcome, Direction, Engine, Roles};
pub use config::{parse_rational, BalanceConfig, BalanceMode, Rational};
pub use directory::DirectoryMode;
pub use error::{Error, Result};
pub use keyspace::{init_state, validate_partition, Key, KeyRange, Node, NodeId, SystemState};
pub use metrics::{potential, summarize, CostLedger, EventLog, EventRecord, OpKind, Summary};
pub use workload::{generate, Generator, KeyDist, Op, WorkloadKind, WorkloadSpec};
