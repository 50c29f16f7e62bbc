//! Wire messages of the playground protocol and their framing: a 4-byte
//! big-endian length followed by that many bytes of UTF-8 JSON.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::fusion::FusionMethod;
use crate::gridworld::{Actor, EnvKind, Events, FeatureSet, Outcome, Placement, Pos};

/// Largest accepted frame body.
pub const MAX_FRAME: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClientMessage {
    /// `main` and `subs` name checkpoints in the server's directory.
    #[serde(rename_all = "kebab-case")]
    CreateSession {
        env: EnvKind,
        #[serde(default)]
        flags: FeatureSet,
        seed: u64,
        main: String,
        #[serde(default)]
        subs: Vec<String>,
    },
    #[serde(rename_all = "kebab-case")]
    SetFusion {
        #[serde(default)]
        session: Option<String>,
        method: FusionMethod,
        epsilon: f64,
        active: Vec<bool>,
    },
    Step {
        #[serde(default)]
        session: Option<String>,
    },
    #[serde(rename_all = "kebab-case")]
    AutoRun {
        #[serde(default)]
        session: Option<String>,
        n: usize,
        interval_ms: u64,
    },
    Pause {
        #[serde(default)]
        session: Option<String>,
    },
    /// Without a seed the current level is replayed from the start.
    Reset {
        #[serde(default)]
        session: Option<String>,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl ClientMessage {
    /// Session addressed by the message, if named explicitly.
    pub fn session(&self) -> Option<&str> {
        match self {
            ClientMessage::CreateSession { .. } => None,
            ClientMessage::SetFusion { session, .. }
            | ClientMessage::Step { session }
            | ClientMessage::AutoRun { session, .. }
            | ClientMessage::Pause { session }
            | ClientMessage::Reset { session, .. } => session.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    UnknownSession,
    MalformedMessage,
    SessionBusy,
    InvalidRequest,
    EpisodeFinished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ServerMessage {
    Snapshot(Box<Snapshot>),
    Error {
        code: ErrorCode,
        detail: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct FusionSettings {
    pub method: FusionMethod,
    pub epsilon: f64,
    pub active: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GridView {
    pub size: usize,
    pub walls: Vec<Pos>,
    pub death_tiles: Vec<Pos>,
    pub objects: Vec<Placement>,
    pub agent: Actor,
    pub opponent: Option<Actor>,
}

/// One member's view of the decision. Inactive sub-policies are not
/// queried and carry no distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PolicyView {
    pub name: String,
    pub active: bool,
    pub distribution: Option<Vec<f64>>,
    pub entropy: Option<f64>,
}

/// Everything that went into one agent decision and what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct StepRecord {
    pub step: usize,
    pub fusion: FusionSettings,
    /// Main policy first, then the sub-policies in session order.
    pub policies: Vec<PolicyView>,
    /// Index into the sub-policies.
    pub k_star: Option<usize>,
    pub fell_back: bool,
    pub fused: Vec<f64>,
    pub action: usize,
    pub opponent_action: Option<usize>,
    pub rewards: BTreeMap<String, f64>,
    pub events: Events,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Snapshot {
    pub session: String,
    pub env: EnvKind,
    pub flags: FeatureSet,
    pub seed: u64,
    pub step: usize,
    pub done: bool,
    pub outcome: Option<Outcome>,
    pub grid: GridView,
    pub fusion: FusionSettings,
    pub policies: Vec<String>,
    /// The step that produced this state; absent after create or reset.
    pub last: Option<StepRecord>,
    pub totals: BTreeMap<String, f64>,
    pub running: bool,
}

#[derive(Debug)]
pub enum FrameError {
    Io(io::Error),
    TooLarge(usize),
    Closed,
}

impl std::fmt::Display for FrameError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FrameError::Io(e) => write!(f, "{e}"),
            FrameError::TooLarge(n) => write!(f, "frame of {n} bytes exceeds the {MAX_FRAME} byte limit"),
            FrameError::Closed => f.write_str("connection closed"),
        }
    }
}

impl std::error::Error for FrameError {}

impl From<io::Error> for FrameError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FrameError::Closed
        } else {
            FrameError::Io(e)
        }
    }
}

/// Reads one frame body. A clean EOF before the header is `Closed`.
pub fn read_frame(r: &mut impl Read) -> Result<Vec<u8>, FrameError> {
    let mut header = [0u8; 4];
    r.read_exact(&mut header)?;
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(body)
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> Result<(), FrameError> {
    if body.len() > MAX_FRAME {
        return Err(FrameError::TooLarge(body.len()));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(body)?;
    w.flush()?;
    Ok(())
}

pub fn send<T: Serialize>(w: &mut impl Write, message: &T) -> Result<(), FrameError> {
    let body = serde_json::to_vec(message).map_err(|e| FrameError::Io(e.into()))?;
    write_frame(w, &body)
}

/// Reads and decodes one server message; the client side of [`send`].
pub fn receive(r: &mut impl Read) -> Result<ServerMessage, FrameError> {
    let body = read_frame(r)?;
    serde_json::from_slice(&body).map_err(|e| FrameError::Io(e.into()))
}

/// Decodes a client frame; the error text becomes a `malformed-message`
/// detail.
pub fn decode_client(body: &[u8]) -> Result<ClientMessage, String> {
    let text = std::str::from_utf8(body).map_err(|e| format!("frame is not UTF-8: {e}"))?;
    serde_json::from_str(text).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip_and_header_layout() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"{\"type\":\"step\"}").unwrap();
        assert_eq!(&buf[..4], &[0, 0, 0, 15]);
        let body = read_frame(&mut buf.as_slice()).unwrap();
        assert_eq!(decode_client(&body).unwrap(), ClientMessage::Step { session: None });
    }

    #[test]
    fn oversized_and_truncated_frames() {
        let big = ((MAX_FRAME + 1) as u32).to_be_bytes();
        assert!(matches!(read_frame(&mut big.as_slice()), Err(FrameError::TooLarge(_))));
        let cut = [0u8, 0, 0, 9, b'{'];
        assert!(matches!(read_frame(&mut cut.as_slice()), Err(FrameError::Closed)));
        assert!(matches!(read_frame(&mut [].as_slice()), Err(FrameError::Closed)));
    }

    #[test]
    fn message_field_names() {
        let m = decode_client(
            br#"{"type":"create-session","env":"arena-world","flags":["orb"],"seed":3,"main":"pi0","subs":["orb"]}"#,
        )
        .unwrap();
        assert_eq!(
            m,
            ClientMessage::CreateSession {
                env: EnvKind::ArenaWorld,
                flags: FeatureSet::ORB,
                seed: 3,
                main: "pi0".into(),
                subs: vec!["orb".into()],
            }
        );
        let m = decode_client(br#"{"type":"auto-run","session":"s1","n":5,"interval-ms":20}"#).unwrap();
        assert_eq!(m.session(), Some("s1"));
        let m = decode_client(br#"{"type":"set-fusion","method":"EW","epsilon":0.1,"active":[true]}"#).unwrap();
        assert!(matches!(m, ClientMessage::SetFusion { method: FusionMethod::EntropyWeighted, .. }));
        let e = serde_json::to_value(ServerMessage::Error {
            code: ErrorCode::SessionBusy,
            detail: "x".into(),
            session: None,
        })
        .unwrap();
        assert_eq!(e, serde_json::json!({"type": "error", "code": "session-busy", "detail": "x"}));
    }

    #[test]
    fn rejects_unknown_types_and_fields() {
        assert!(decode_client(br#"{"type":"jump"}"#).is_err());
        assert!(decode_client(br#"{"type":"step","speed":2}"#).is_err());
        assert!(decode_client(br#"{"type":"auto-run","n":5}"#).is_err());
        assert!(decode_client(b"\xff\xfe").is_err());
    }
}
