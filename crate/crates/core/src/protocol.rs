//! Newline-delimited JSON protocol for driving the environment from an
//! external agent. See `protocol.md` at the repository root for the message
//! reference.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;

use serde::{Deserialize, Serialize};

use crate::env::{Environment, FairnessEnv};
use crate::error::{Error, Result};
use crate::rng::{seed_rng, StreamRng};
use crate::types::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Message {
    Hello {
        schema: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        group_count: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        action_dims: Option<usize>,
    },
    Reset {
        /// Initial qualification rates; drawn by the server when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<Vec<f64>>,
    },
    Step {
        action: Vec<f64>,
    },
    State {
        q: Vec<f64>,
        tau: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reward: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        utility: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        loss: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        disparity: Option<f64>,
        /// `-(κ_τ·loss + λ_τ·disparity)` with `λ_τ = τ/H`, `κ_τ = 1 - λ_τ`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scheduled_reward: Option<f64>,
        done: bool,
    },
    Error {
        code: String,
        message: String,
    },
}

impl Message {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("protocol messages always serialize")
    }

    pub fn parse(line: &str) -> Result<Message> {
        Ok(serde_json::from_str(line)?)
    }

    fn error(code: &str, message: impl Into<String>) -> Message {
        Message::Error {
            code: code.into(),
            message: message.into(),
        }
    }
}

/// `(λ_τ, κ_τ)` for step `tau` of `horizon`.
pub fn schedule_weights(tau: usize, horizon: usize) -> (f64, f64) {
    let lambda = tau as f64 / horizon as f64;
    (lambda, 1.0 - lambda)
}

/// One client session. Messages are handled strictly in order.
pub struct Session {
    env: FairnessEnv,
    horizon: usize,
    rng: StreamRng,
    greeted: bool,
    tau: Option<usize>,
}

/// Reply to one client line, and whether the session ends afterwards.
pub struct Reply {
    pub message: Message,
    pub close: bool,
}

impl Session {
    pub fn new(env: FairnessEnv, horizon: usize, seed: u64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        Ok(Session {
            env,
            horizon,
            rng: seed_rng(seed, "protocol"),
            greeted: false,
            tau: None,
        })
    }

    /// The server's opening message.
    pub fn hello(&self) -> Message {
        Message::Hello {
            schema: SCHEMA_VERSION,
            group_count: Some(self.env.group_count()),
            horizon: Some(self.horizon),
            action_dims: Some(self.env.action_dim()),
        }
    }

    pub fn handle(&mut self, line: &str) -> Reply {
        let reply = |message| Reply { message, close: false };
        let msg = match Message::parse(line) {
            Ok(m) => m,
            Err(e) => return reply(Message::error("malformed", e.to_string())),
        };
        match msg {
            Message::Hello { schema, .. } if schema != SCHEMA_VERSION => Reply {
                message: Message::error(
                    "version_mismatch",
                    format!("server speaks schema {SCHEMA_VERSION}, client sent {schema}"),
                ),
                close: true,
            },
            Message::Hello { .. } => {
                self.greeted = true;
                reply(self.hello())
            }
            _ if !self.greeted => reply(Message::error("handshake_required", "send hello first")),
            Message::Reset { q } => reply(self.reset(q)),
            Message::Step { action } => reply(self.step(&action)),
            Message::State { .. } | Message::Error { .. } => {
                reply(Message::error("unexpected_message", "clients send hello, reset or step"))
            }
        }
    }

    fn reset(&mut self, q: Option<Vec<f64>>) -> Message {
        let q = q.unwrap_or_else(|| self.env.sample_initial(&mut self.rng));
        if let Err(e) = self.env.reset_to(&q) {
            return Message::error("invalid_state", e.to_string());
        }
        self.tau = Some(0);
        Message::State {
            q,
            tau: 0,
            reward: None,
            utility: None,
            loss: None,
            disparity: None,
            scheduled_reward: None,
            done: false,
        }
    }

    fn step(&mut self, action: &[f64]) -> Message {
        let Some(tau) = self.tau else {
            return Message::error("not_reset", "send reset before step");
        };
        if tau >= self.horizon {
            return Message::error("episode_done", "episode finished; send reset");
        }
        if action.len() != self.env.action_dim() {
            return Message::error(
                "action_dimension",
                format!("expected {} thresholds, got {}", self.env.action_dim(), action.len()),
            );
        }
        if let Some(a) = action.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Message::error("action_out_of_range", format!("threshold {a} outside [0, 1]"));
        }
        let t = match self.env.step(action, &mut self.rng) {
            Ok(t) => t,
            Err(e) => return Message::error("environment", e.to_string()),
        };
        let tau = tau + 1;
        self.tau = Some(tau);
        let (lambda, kappa) = schedule_weights(tau, self.horizon);
        Message::State {
            q: t.next_state,
            tau,
            reward: Some(t.reward),
            utility: Some(t.utility),
            loss: Some(t.loss),
            disparity: Some(t.disparity),
            scheduled_reward: Some(-(kappa * t.loss + lambda * t.disparity)),
            done: tau == self.horizon,
        }
    }
}

/// Speak the protocol over a line reader and writer until EOF or refusal.
pub fn serve<R: BufRead, W: Write>(mut session: Session, reader: R, mut writer: W) -> Result<()> {
    let io = |e| Error::io("protocol stream", e);
    writeln!(writer, "{}", session.hello().to_line()).map_err(io)?;
    writer.flush().map_err(io)?;
    for line in reader.lines() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = session.handle(&line);
        writeln!(writer, "{}", reply.message.to_line()).map_err(io)?;
        writer.flush().map_err(io)?;
        if reply.close {
            break;
        }
    }
    Ok(())
}

/// Accept TCP clients one at a time, each with a fresh session from
/// `make_session`. Stops after `max_sessions` when given.
pub fn serve_tcp<F>(listener: TcpListener, mut make_session: F, max_sessions: Option<usize>) -> Result<()>
where
    F: FnMut(usize) -> Result<Session>,
{
    let mut served = 0;
    for stream in listener.incoming() {
        let stream = stream.map_err(|e| Error::io("tcp listener", e))?;
        let reader = BufReader::new(stream.try_clone().map_err(|e| Error::io("tcp stream", e))?);
        serve(make_session(served)?, reader, stream)?;
        served += 1;
        if max_sessions.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{DisparityKind, LossSpec};

    fn session(h: usize) -> Session {
        Session::new(FairnessEnv::gaussian(LossSpec::true_positive(), DisparityKind::DP), h, 0).unwrap()
    }

    fn greeted(h: usize) -> Session {
        let mut s = session(h);
        s.handle(r#"{"type":"hello","schema":1}"#);
        s
    }

    #[test]
    fn every_message_round_trips() {
        let msgs = [
            session(3).hello(),
            Message::Hello {
                schema: 1,
                group_count: None,
                horizon: None,
                action_dims: None,
            },
            Message::Reset { q: None },
            Message::Reset { q: Some(vec![0.1, 0.9]) },
            Message::Step { action: vec![0.25, 1.0] },
            Message::State {
                q: vec![0.3, 0.1 + 0.2],
                tau: 2,
                reward: Some(0.7),
                utility: Some(0.99),
                loss: Some(0.3),
                disparity: Some(0.01),
                scheduled_reward: Some(-0.1),
                done: false,
            },
            Message::error("malformed", "x"),
        ];
        for m in msgs {
            assert_eq!(Message::parse(&m.to_line()).unwrap(), m);
        }
        assert!(Message::parse(r#"{"type":"step","action":[0.1],"extra":1}"#).is_err());
    }

    #[test]
    fn reset_reports_initial_state() {
        let mut s = greeted(3);
        let r = s.handle(r#"{"type":"reset","q":[0.2,0.6]}"#);
        assert!(matches!(r.message, Message::State { ref q, tau: 0, done: false, .. } if q == &vec![0.2, 0.6]));
        let r = s.handle(r#"{"type":"reset"}"#);
        assert!(matches!(r.message, Message::State { tau: 0, .. }));
    }

    #[test]
    fn errors_keep_the_session_alive() {
        let mut s = session(3);
        let code = |m: Message| match m {
            Message::Error { code, .. } => code,
            other => panic!("expected error, got {other:?}"),
        };
        assert_eq!(code(s.handle(r#"{"type":"reset"}"#).message), "handshake_required");
        s.handle(r#"{"type":"hello","schema":1}"#);
        assert_eq!(code(s.handle(r#"{"type":"step","action":[0.1,0.1]}"#).message), "not_reset");
        s.handle(r#"{"type":"reset"}"#);
        let r = s.handle(r#"{"type":"step","action":[0.1,1.5]}"#);
        assert!(!r.close);
        assert_eq!(code(r.message), "action_out_of_range");
        assert_eq!(code(s.handle("not json").message), "malformed");
        assert_eq!(code(s.handle(r#"{"type":"step","action":[0.1]}"#).message), "action_dimension");
        assert!(matches!(s.handle(r#"{"type":"step","action":[0.1,0.2]}"#).message, Message::State { tau: 1, .. }));
    }

    #[test]
    fn version_mismatch_closes() {
        let mut s = session(3);
        let r = s.handle(r#"{"type":"hello","schema":2}"#);
        assert!(r.close);
        assert!(matches!(r.message, Message::Error { ref code, .. } if code == "version_mismatch"));
    }

    #[test]
    fn scheduled_reward_follows_time_weights() {
        let h = 3;
        let mut s = greeted(h);
        s.handle(r#"{"type":"reset","q":[0.3,0.7]}"#);
        let env = FairnessEnv::gaussian(LossSpec::true_positive(), DisparityKind::DP);
        let mut q = vec![0.3, 0.7];
        for tau in 1..=h {
            let eval = env.evaluate(&q, &[0.0, 0.0]).unwrap();
            let lam = tau as f64 / h as f64;
            let expected = -((1.0 - lam) * eval.loss + lam * eval.disparity);
            match s.handle(r#"{"type":"step","action":[0.0,0.0]}"#).message {
                Message::State { scheduled_reward, done, tau: t, .. } => {
                    assert_eq!(t, tau);
                    assert!((scheduled_reward.unwrap() - expected).abs() < 1e-15);
                    assert_eq!(done, tau == h);
                }
                other => panic!("{other:?}"),
            }
            q = eval.next_state;
        }
        assert!(matches!(
            s.handle(r#"{"type":"step","action":[0.0,0.0]}"#).message,
            Message::Error { ref code, .. } if code == "episode_done"
        ));
    }

    #[test]
    fn stdio_transcript() {
        let input = "{\"type\":\"hello\",\"schema\":1}\n{\"type\":\"reset\",\"q\":[0.5,0.5]}\n\n{\"type\":\"step\",\"action\":[0.5,0.5]}\n";
        let mut out = Vec::new();
        serve(session(1), input.as_bytes(), &mut out).unwrap();
        let lines: Vec<Message> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| Message::parse(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 4);
        assert!(matches!(lines[0], Message::Hello { horizon: Some(1), group_count: Some(2), .. }));
        assert!(matches!(lines[3], Message::State { done: true, .. }));
    }
}
