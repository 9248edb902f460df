//! Message-passing realization of the load-indicator descent.
//!
//! Each synchronous round:
//!
//! 1. every RAT broadcasts its load indicator to the UEs;
//! 2. every UE picks the RAT with the best rate indicator `c_ub / lambda_b`
//!    and reports `c_ub^(rho-1)` to it;
//! 3. every RAT sums its reports over `lambda_b^rho`, takes one subgradient
//!    step with the shared step size and sends the new indicator to the flow
//!    scheduler.
//!
//! The flow scheduler only observes: it tracks the best dual objective, the
//! stopping rule and the step-size schedule, which every agent shares. A RAT
//! sees nothing but its own indicator, the reports addressed to it and the
//! round index, yet the resulting trajectory is bit-identical to the
//! centralized solver.

use std::io::Write;

use serde::ser::Serializer;
use serde::Serialize;

use crate::dual_solver::{dual_objective, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{DualState, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentId {
    Rat(usize),
    Ue(usize),
    AllUes,
    FlowScheduler,
}

impl Serialize for AgentId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AgentId::Rat(b) => s.serialize_str(&format!("rat:{b}")),
            AgentId::Ue(u) => s.serialize_str(&format!("ue:{u}")),
            AgentId::AllUes => s.serialize_str("ue:*"),
            AgentId::FlowScheduler => s.serialize_str("scheduler"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MessageKind {
    LoadBroadcast,
    SelectionReport,
    LambdaUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Payload {
    Load { lambda: f64 },
    Selection { user: usize, rat: usize, term: f64 },
    Update { lambda: f64, subgradient: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Message {
    pub round: usize,
    pub kind: MessageKind,
    pub from: AgentId,
    pub to: AgentId,
    pub payload: Payload,
}

impl Message {
    /// Payload size on the air: 8 bytes per real, 4 per index. With CSI at
    /// the RAT the report carries only the RAT choice.
    pub fn payload_bytes(&self, csi_at_rat: bool) -> usize {
        match self.payload {
            Payload::Load { .. } => 8,
            Payload::Selection { .. } if csi_at_rat => 8,
            Payload::Selection { .. } => 16,
            Payload::Update { .. } => 16,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProtocolTrace {
    /// Every message in send order; empty unless recording was requested.
    pub messages: Vec<Message>,
    pub message_count: usize,
    pub payload_bytes: usize,
    pub rounds: usize,
    pub final_lambdas: Vec<f64>,
    /// Load indicators at the start of each round.
    pub lambda_history: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ProtocolOptions {
    pub record_messages: bool,
    pub csi_at_rat: bool,
}

struct RatAgent {
    id: usize,
    lambda: f64,
    rho: f64,
    floor: f64,
}

impl RatAgent {
    fn broadcast(&self, round: usize) -> Message {
        Message {
            round,
            kind: MessageKind::LoadBroadcast,
            from: AgentId::Rat(self.id),
            to: AgentId::AllUes,
            payload: Payload::Load { lambda: self.lambda },
        }
    }

    /// Subgradient step from the reports addressed to this RAT (ascending UE
    /// order) and the shared step size.
    fn update(&mut self, round: usize, eps: f64, reports: &[f64]) -> Message {
        let denom = self.lambda.powf(self.rho);
        let load: f64 = reports.iter().map(|term| term / denom).sum();
        self.lambda = (self.lambda + eps * (load - 1.0)).max(self.floor);
        Message {
            round,
            kind: MessageKind::LambdaUpdate,
            from: AgentId::Rat(self.id),
            to: AgentId::FlowScheduler,
            payload: Payload::Update {
                lambda: self.lambda,
                subgradient: 1.0 - load,
            },
        }
    }
}

struct UeAgent<'a> {
    id: usize,
    rates: &'a [f64],
    rho: f64,
    tie_tolerance: f64,
}

impl UeAgent<'_> {
    /// Lowest-index RAT within the tie tolerance of the best rate indicator.
    fn select(&self, round: usize, lambdas: &[f64]) -> Message {
        let best = self
            .rates
            .iter()
            .zip(lambdas)
            .filter(|(&c, _)| c > 0.0)
            .map(|(&c, &l)| c / l)
            .fold(f64::NEG_INFINITY, f64::max);
        let cutoff = (1.0 - self.tie_tolerance) * best;
        let rat = (0..self.rates.len())
            .find(|&b| self.rates[b] > 0.0 && self.rates[b] / lambdas[b] >= cutoff)
            .expect("every UE is covered");
        Message {
            round,
            kind: MessageKind::SelectionReport,
            from: AgentId::Ue(self.id),
            to: AgentId::Rat(rat),
            payload: Payload::Selection {
                user: self.id,
                rat,
                term: self.rates[rat].powf(self.rho - 1.0),
            },
        }
    }
}

/// Runs the protocol until the shared stopping rule fires or
/// `config.max_iterations` rounds have passed.
pub fn run_decentralized(
    scenario: &Scenario,
    config: &SolverConfig,
    options: ProtocolOptions,
) -> Result<(DualState, ProtocolTrace)> {
    config.validate()?;
    if scenario.alpha() == 0.0 {
        return Err(Error::AlphaZeroUnsupported);
    }
    let rho = 1.0 / scenario.alpha();
    let nb = scenario.num_rats();
    let initial = config.initial_lambdas(scenario)?;

    let mut rats: Vec<RatAgent> = initial
        .iter()
        .enumerate()
        .map(|(id, &lambda)| RatAgent {
            id,
            lambda,
            rho,
            floor: config.lambda_floor,
        })
        .collect();
    let ues: Vec<UeAgent> = scenario
        .peak_rates()
        .iter()
        .enumerate()
        .map(|(id, rates)| UeAgent {
            id,
            rates,
            rho,
            tie_tolerance: config.tie_tolerance,
        })
        .collect();

    // Flow-scheduler bookkeeping.
    let mut state = DualState::new(initial.clone());
    let mut trace = ProtocolTrace::default();
    let mut known = initial;
    let log = |msg: Message, trace: &mut ProtocolTrace| {
        trace.message_count += 1;
        trace.payload_bytes += msg.payload_bytes(options.csi_at_rat);
        if options.record_messages {
            trace.messages.push(msg);
        }
    };

    while state.iteration < config.max_iterations {
        let round = state.iteration + 1;
        trace.lambda_history.push(known.clone());

        let objective = dual_objective(&known, scenario)?;
        if objective < state.best_objective {
            state.best_objective = objective;
            state.best_lambdas.clone_from(&known);
        }

        let mut heard = vec![0.0; nb];
        for rat in &rats {
            let msg = rat.broadcast(round);
            if let Payload::Load { lambda } = msg.payload {
                heard[rat.id] = lambda;
            }
            log(msg, &mut trace);
        }

        let mut inbox: Vec<Vec<f64>> = vec![Vec::new(); nb];
        for ue in &ues {
            let msg = ue.select(round, &heard);
            if let Payload::Selection { rat, term, .. } = msg.payload {
                inbox[rat].push(term);
            }
            log(msg, &mut trace);
        }

        let eps = config.step_schedule.step_size(config.epsilon0, round);
        let mut movement: f64 = 0.0;
        let mut subgradients = Vec::with_capacity(nb);
        for rat in &mut rats {
            let msg = rat.update(round, eps, &inbox[rat.id]);
            if let Payload::Update { lambda, subgradient } = msg.payload {
                movement = movement.max((lambda - known[rat.id]).abs());
                subgradients.push(subgradient);
                known[rat.id] = lambda;
            }
            log(msg, &mut trace);
        }

        let norm = subgradients.iter().map(|g| g * g).sum::<f64>().sqrt();
        state.max_subgradient_norm = state.max_subgradient_norm.max(norm);
        state.iteration = round;
        state.step_sum += eps;
        state.step_sq_sum += eps * eps;
        state.lambdas.clone_from(&known);
        trace.rounds = round;
        if movement < config.stop_tolerance {
            state.converged = true;
            break;
        }
    }

    let objective = dual_objective(&known, scenario)?;
    if objective < state.best_objective {
        state.best_objective = objective;
        state.best_lambdas.clone_from(&known);
    }
    trace.final_lambdas = known;
    Ok((state, trace))
}

/// Runs both solvers and fails on the first round whose load indicators
/// differ in any bit.
pub fn verify_against_centralized(
    scenario: &Scenario,
    config: &SolverConfig,
    decentralized: &(DualState, ProtocolTrace),
) -> Result<()> {
    let (central, rows) = crate::dual_solver::solve_dual_traced(scenario, config)?;
    let (state, trace) = decentralized;
    for (i, (row, lambdas)) in rows.iter().zip(&trace.lambda_history).enumerate() {
        if !bit_equal(&row.lambdas, lambdas) {
            return Err(Error::VerifyMismatch(i + 1));
        }
    }
    if rows.len() != trace.lambda_history.len()
        || !bit_equal(&central.lambdas, &state.lambdas)
        || !bit_equal(&central.best_lambdas, &state.best_lambdas)
    {
        return Err(Error::VerifyMismatch(rows.len().min(trace.lambda_history.len())));
    }
    Ok(())
}

pub fn bit_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(messages: &[Message], mut out: W) -> Result<()> {
    for m in messages {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual_solver::solve_dual;

    fn cfg(iters: usize) -> SolverConfig {
        SolverConfig {
            max_iterations: iters,
            normalize_rates: false,
            ..Default::default()
        }
    }

    #[test]
    fn single_pair_matches_and_counts() {
        let s = Scenario::new(vec![vec![7.0]], 1.0).unwrap();
        let opts = ProtocolOptions {
            record_messages: true,
            ..Default::default()
        };
        let (state, trace) = run_decentralized(&s, &cfg(50), opts).unwrap();
        assert_eq!(state, solve_dual(&s, &cfg(50)).unwrap());
        assert_eq!(trace.message_count, 3 * trace.rounds);
        assert_eq!(trace.messages.len(), trace.message_count);
    }

    #[test]
    fn three_users_two_rats_bit_identical() {
        let s = Scenario::new(vec![vec![10.0, 5.0], vec![4.0, 8.0], vec![6.0, 6.0]], 1.0).unwrap();
        let run = run_decentralized(&s, &cfg(100), ProtocolOptions::default()).unwrap();
        assert!(bit_equal(&run.0.lambdas, &solve_dual(&s, &cfg(100)).unwrap().lambdas));
        verify_against_centralized(&s, &cfg(100), &run).unwrap();
        assert_eq!(run.1.message_count, run.1.rounds * (2 * 2 + 3));
    }

    #[test]
    fn message_count_formula() {
        let rates: Vec<Vec<f64>> = (0..10)
            .map(|u| (0..5).map(|b| 1.0 + ((u * 7 + b * 3) % 11) as f64).collect())
            .collect();
        let s = Scenario::new(rates, 1.0).unwrap();
        let config = SolverConfig {
            stop_tolerance: 1e-300,
            ..cfg(200)
        };
        let (_, trace) = run_decentralized(&s, &config, ProtocolOptions::default()).unwrap();
        assert_eq!(trace.rounds, 200);
        assert_eq!(trace.message_count, 4000);
    }

    #[test]
    fn csi_at_rat_shrinks_reports() {
        let s = Scenario::new(vec![vec![10.0, 5.0], vec![4.0, 8.0]], 1.0).unwrap();
        let (_, full) = run_decentralized(&s, &cfg(10), ProtocolOptions::default()).unwrap();
        let (_, lean) = run_decentralized(
            &s,
            &cfg(10),
            ProtocolOptions {
                csi_at_rat: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(full.payload_bytes - lean.payload_bytes, 8 * 2 * full.rounds);
    }

    #[test]
    fn jsonl_shape() {
        let s = Scenario::new(vec![vec![10.0, 5.0]], 1.0).unwrap();
        let opts = ProtocolOptions {
            record_messages: true,
            ..Default::default()
        };
        let (_, trace) = run_decentralized(&s, &cfg(1), opts).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&trace.messages, &mut buf).unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0]["kind"], "LoadBroadcast");
        assert_eq!(lines[0]["from"], "rat:0");
        assert_eq!(lines[0]["to"], "ue:*");
        assert_eq!(lines[2]["kind"], "SelectionReport");
        assert_eq!(lines[2]["to"], "rat:0");
        assert_eq!(lines[2]["payload"]["rat"], 0);
        assert_eq!(lines[4]["to"], "scheduler");
        assert_eq!(lines[4]["round"], 1);
    }
}
