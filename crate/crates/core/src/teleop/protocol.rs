//! Console protocol: UTF-8 JSON messages, one per websocket text frame.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Want {
    Control,
    Spectate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(alias = "key_down", alias = "keydown")]
    KeyDown,
    #[serde(alias = "key_up", alias = "keyup")]
    KeyUp,
    #[serde(alias = "axis")]
    Axis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordAction {
    Start,
    Stop,
}

/// One human input event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeleopEvent {
    pub kind: EventKind,
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Client clock in milliseconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_time: Option<f64>,
}

impl TeleopEvent {
    pub fn key_down(code: &str) -> Self {
        Self { kind: EventKind::KeyDown, code: code.to_owned(), value: None, client_time: None }
    }

    pub fn key_up(code: &str) -> Self {
        Self { kind: EventKind::KeyUp, code: code.to_owned(), value: None, client_time: None }
    }

    pub fn axis(code: &str, value: f64) -> Self {
        Self { kind: EventKind::Axis, code: code.to_owned(), value: Some(value), client_time: None }
    }

    /// Axis events carry a value in `[-1, 1]`; key events carry none.
    pub fn validate(&self) -> Result<(), String> {
        if self.code.is_empty() {
            return Err("input event without a code".into());
        }
        match (self.kind, self.value) {
            (EventKind::Axis, Some(v)) if (-1.0..=1.0).contains(&v) => Ok(()),
            (EventKind::Axis, Some(v)) => Err(format!("axis value {v} outside [-1, 1]")),
            (EventKind::Axis, None) => Err("axis event without a value".into()),
            (_, Some(_)) => Err("key event must not carry a value".into()),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello { want: Want },
    Input(TeleopEvent),
    Record { action: RecordAction },
    Reset,
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub p: [f64; 2],
    pub r: f64,
    pub c: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneUpdate {
    pub time: f64,
    /// Joint frames from the base to the end effector.
    pub links: Vec<[f64; 2]>,
    pub objects: Vec<SceneObject>,
    pub target: [f64; 2],
    pub success: bool,
    pub reward: f64,
    pub step: u32,
    pub episode: u64,
    pub recording: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeEvent {
    Reset,
    Done,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Scene(SceneUpdate),
    Episode { event: EpisodeEvent },
    Error { msg: String },
    Busy,
    Notice { msg: String },
}

impl ServerMessage {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }
}
