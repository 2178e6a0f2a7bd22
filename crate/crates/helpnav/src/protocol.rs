//! Session wire protocol: one JSON object per WebSocket text message, tagged by `type`.

use helpnav_core::env::{Action, Cell, GridMap, Pose};
use helpnav_core::metrics::EpisodeResult;
use helpnav_core::runner::Phase;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_ERROR: &str = "PROTOCOL";
pub const INTERNAL_ERROR: &str = "INTERNAL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major occupancy, `true` for blocked cells.
    pub blocked: Vec<bool>,
}

impl GridFrame {
    pub fn from_map(map: &GridMap) -> Self {
        Self {
            width: map.width(),
            height: map.height(),
            blocked: map.blocked_flags().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub step: u32,
    /// Sent with the first frame of a session only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridFrame>,
    pub pose: Pose,
    pub goal: Cell,
    pub phase: Phase,
    pub budget_remaining: u32,
    pub distance_to_goal: f64,
    pub ask_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFrame {
    pub success: bool,
    pub spl: f64,
    pub human_contribution: f64,
}

impl From<&EpisodeResult> for ResultFrame {
    fn from(r: &EpisodeResult) -> Self {
        Self {
            success: r.success,
            spl: r.spl,
            human_contribution: r.human_contribution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    State(StateFrame),
    HelpRequest { step: u32, max_steps: u32 },
    Terminated { result: ResultFrame },
    Error { code: String, message: String },
}

impl ServerMsg {
    pub fn protocol_error(message: impl Into<String>) -> Self {
        ServerMsg::Error {
            code: PROTOCOL_ERROR.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    Interrupt,
    Action { action: Action },
    Release,
    Decline,
}

impl ClientMsg {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("malformed client message: {e}"))
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("client messages always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use helpnav_core::env::Heading;
    use serde_json::json;

    #[test]
    fn client_messages_match_wire_shapes() {
        assert_eq!(ClientMsg::parse(r#"{"type":"interrupt"}"#), Ok(ClientMsg::Interrupt));
        assert_eq!(ClientMsg::parse(r#"{"type":"release"}"#), Ok(ClientMsg::Release));
        assert_eq!(ClientMsg::parse(r#"{"type":"decline"}"#), Ok(ClientMsg::Decline));
        for (s, a) in [
            ("FORWARD", Action::Forward),
            ("TURN_LEFT", Action::TurnLeft),
            ("TURN_RIGHT", Action::TurnRight),
            ("STOP", Action::Stop),
        ] {
            let text = format!(r#"{{"type":"action","action":"{s}"}}"#);
            assert_eq!(ClientMsg::parse(&text), Ok(ClientMsg::Action { action: a }));
            assert_eq!(ClientMsg::Action { action: a }.to_text(), text);
        }
    }

    #[test]
    fn malformed_client_messages_rejected() {
        for bad in [
            "",
            "{}",
            r#"{"type":"fly"}"#,
            r#"{"type":"action"}"#,
            r#"{"type":"action","action":"JUMP"}"#,
            "[1,2]",
        ] {
            assert!(ClientMsg::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn server_messages_match_wire_shapes() {
        let frame = ServerMsg::State(StateFrame {
            step: 0,
            grid: Some(GridFrame {
                width: 3,
                height: 1,
                blocked: vec![false, true, false],
            }),
            pose: Pose::new(0, 0, Heading::E),
            goal: Cell::new(2, 0),
            phase: Phase::AgentControl,
            budget_remaining: 0,
            distance_to_goal: 0.4,
            ask_probability: None,
        });
        assert_eq!(
            serde_json::to_value(&frame).unwrap(),
            json!({"type":"state","step":0,"grid":{"width":3,"height":1,"blocked":[false,true,false]},
                   "pose":{"x":0,"y":0,"heading":"E"},"goal":{"x":2,"y":0},"phase":"AGENT_CONTROL",
                   "budget_remaining":0,"distance_to_goal":0.4,"ask_probability":null})
        );
        assert_eq!(
            serde_json::to_value(ServerMsg::HelpRequest { step: 4, max_steps: 25 }).unwrap(),
            json!({"type":"help_request","step":4,"max_steps":25})
        );
        let v = serde_json::to_value(ServerMsg::protocol_error("x")).unwrap();
        assert_eq!(v["type"], "error");
        assert_eq!(v["code"], "PROTOCOL");
        let t = ServerMsg::Terminated {
            result: ResultFrame {
                success: true,
                spl: 0.5,
                human_contribution: 0.25,
            },
        };
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v, json!({"type":"terminated","result":{"success":true,"spl":0.5,"human_contribution":0.25}}));
        assert_eq!(serde_json::from_value::<ServerMsg>(v).unwrap(), t);
    }
}
