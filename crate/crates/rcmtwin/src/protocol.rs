//! Wire format: one UTF-8 JSON object per line, schema version `v`.
//!
//! Clients send [`CommandMessage`]s; the service answers with
//! [`ServerMessage`]s. Object keys are emitted in sorted order so every
//! value has exactly one encoding. Unknown fields are ignored on decode.

use std::io::BufRead;

use nalgebra::Vector3;
use rcmtwin_core::safety::SafetyEventKind;
use rcmtwin_core::teleop::{Key, StylusSample};
use rcmtwin_core::Side;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub const PROTOCOL_VERSION: u64 = 1;

/// Longest accepted line, bytes.
pub const MAX_LINE: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("missing field `{0}`")]
    Missing(&'static str),
    #[error("invalid field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unsupported protocol version {0}")]
    Version(u64),
}

impl DecodeError {
    /// The offending field, when there is one.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            DecodeError::Missing(f) | DecodeError::Invalid { field: f, .. } => Some(f),
            DecodeError::Version(_) => Some("v"),
            DecodeError::Json(_) => None,
        }
    }

    fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        DecodeError::Invalid { field, reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionVerb {
    /// Return the arm to its start pose and clear any HOLD.
    Start,
    Hold,
    Resume,
    /// Jump to a speed level in `0..7`.
    SetSpeed(u8),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CommandPayload {
    KeyDown(Key),
    KeyUp(Key),
    Stylus(StylusSample),
    Session(SessionVerb),
}

impl CommandPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            CommandPayload::KeyDown(_) => "key_down",
            CommandPayload::KeyUp(_) => "key_up",
            CommandPayload::Stylus(_) => "stylus",
            CommandPayload::Session(_) => "session",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandMessage {
    /// Strictly increasing per client.
    pub seq: u64,
    pub arm: Side,
    pub payload: CommandPayload,
}

impl CommandMessage {
    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("v".into(), PROTOCOL_VERSION.into());
        m.insert("seq".into(), self.seq.into());
        m.insert("arm".into(), self.arm.as_str().into());
        m.insert("kind".into(), self.payload.kind().into());
        match self.payload {
            CommandPayload::KeyDown(k) | CommandPayload::KeyUp(k) => {
                m.insert("key".into(), k.to_string().into());
            }
            CommandPayload::Stylus(s) => {
                m.insert(
                    "stylus".into(),
                    json!({
                        "position": [s.position.x, s.position.y, s.position.z],
                        "orientation": s.orientation,
                        "button1": s.button1,
                        "button2": s.button2,
                        "timestamp": s.timestamp,
                    }),
                );
            }
            CommandPayload::Session(verb) => {
                let name = match verb {
                    SessionVerb::Start => "start",
                    SessionVerb::Hold => "hold",
                    SessionVerb::Resume => "resume",
                    SessionVerb::SetSpeed(level) => {
                        m.insert("level".into(), level.into());
                        "set_speed"
                    }
                };
                m.insert("verb".into(), name.into());
            }
        }
        Value::Object(m)
    }

    /// One line including the trailing newline.
    pub fn encode(&self) -> String {
        let mut s = self.to_value().to_string();
        s.push('\n');
        s
    }

    pub fn decode(line: &str) -> Result<Self, DecodeError> {
        let v: Value = serde_json::from_str(line.trim_end()).map_err(|e| DecodeError::Json(e.to_string()))?;
        Self::from_value(&v)
    }

    pub fn from_value(v: &Value) -> Result<Self, DecodeError> {
        let obj = v.as_object().ok_or_else(|| DecodeError::Json("expected an object".into()))?;
        check_version(obj)?;
        let seq = u64_field(obj, "seq")?;
        let arm = str_field(obj, "arm")?;
        let arm = Side::parse(arm).ok_or_else(|| DecodeError::invalid("arm", "expected `left` or `right`"))?;
        let payload = match str_field(obj, "kind")? {
            "key_down" => CommandPayload::KeyDown(key_field(obj)?),
            "key_up" => CommandPayload::KeyUp(key_field(obj)?),
            "stylus" => CommandPayload::Stylus(stylus_field(obj)?),
            "session" => CommandPayload::Session(match str_field(obj, "verb")? {
                "start" => SessionVerb::Start,
                "hold" => SessionVerb::Hold,
                "resume" => SessionVerb::Resume,
                "set_speed" => {
                    let level = u64_field(obj, "level")?;
                    let level = u8::try_from(level).map_err(|_| DecodeError::invalid("level", "out of range"))?;
                    SessionVerb::SetSpeed(level)
                }
                other => return Err(DecodeError::invalid("verb", format!("unknown verb `{other}`"))),
            }),
            other => return Err(DecodeError::invalid("kind", format!("unknown kind `{other}`"))),
        };
        Ok(Self { seq, arm, payload })
    }
}

fn check_version(obj: &Map<String, Value>) -> Result<(), DecodeError> {
    let v = u64_field(obj, "v")?;
    if v != PROTOCOL_VERSION {
        return Err(DecodeError::Version(v));
    }
    Ok(())
}

fn field<'a>(obj: &'a Map<String, Value>, name: &'static str) -> Result<&'a Value, DecodeError> {
    obj.get(name).ok_or(DecodeError::Missing(name))
}

fn u64_field(obj: &Map<String, Value>, name: &'static str) -> Result<u64, DecodeError> {
    field(obj, name)?.as_u64().ok_or_else(|| DecodeError::invalid(name, "expected a non-negative integer"))
}

fn str_field<'a>(obj: &'a Map<String, Value>, name: &'static str) -> Result<&'a str, DecodeError> {
    field(obj, name)?.as_str().ok_or_else(|| DecodeError::invalid(name, "expected a string"))
}

fn f64_field(obj: &Map<String, Value>, name: &'static str) -> Result<f64, DecodeError> {
    field(obj, name)?.as_f64().ok_or_else(|| DecodeError::invalid(name, "expected a number"))
}

fn bool_field(obj: &Map<String, Value>, name: &'static str) -> Result<bool, DecodeError> {
    field(obj, name)?.as_bool().ok_or_else(|| DecodeError::invalid(name, "expected a boolean"))
}

fn vec3_field(obj: &Map<String, Value>, name: &'static str) -> Result<[f64; 3], DecodeError> {
    let bad = || DecodeError::invalid(name, "expected three numbers");
    let arr = field(obj, name)?.as_array().ok_or_else(bad)?;
    if arr.len() != 3 {
        return Err(bad());
    }
    let mut out = [0.0; 3];
    for (o, v) in out.iter_mut().zip(arr) {
        *o = v.as_f64().ok_or_else(bad)?;
    }
    Ok(out)
}

fn key_field(obj: &Map<String, Value>) -> Result<Key, DecodeError> {
    let s = str_field(obj, "key")?;
    Key::parse(s).ok_or_else(|| DecodeError::invalid("key", format!("`{s}` is not a key name")))
}

fn stylus_field(obj: &Map<String, Value>) -> Result<StylusSample, DecodeError> {
    let s = field(obj, "stylus")?.as_object().ok_or_else(|| DecodeError::invalid("stylus", "expected an object"))?;
    let position = vec3_field(s, "position")?;
    let orientation = vec3_field(s, "orientation")?;
    Ok(StylusSample {
        position: Vector3::from(position),
        orientation,
        button1: bool_field(s, "button1")?,
        button2: bool_field(s, "button2")?,
        timestamp: f64_field(s, "timestamp")?,
    })
}

/// Decodes a line-delimited stream. A bad line yields an error and the
/// reader carries on at the next newline.
pub fn decode_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<CommandMessage, DecodeError>> {
    LineReader { reader, buf: Vec::new() }.map(|line| line.and_then(|l| CommandMessage::decode(&l)))
}

/// Splits a byte stream at newlines, checking UTF-8 and length per line.
/// Blank lines are skipped. I/O errors end the stream.
pub struct LineReader<R> {
    reader: R,
    buf: Vec<u8>,
}

impl<R: BufRead> LineReader<R> {
    pub fn new(reader: R) -> Self {
        Self { reader, buf: Vec::new() }
    }
}

impl<R: BufRead> Iterator for LineReader<R> {
    type Item = Result<String, DecodeError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) | Err(_) => return None,
                Ok(_) => {}
            }
            if self.buf.len() > MAX_LINE {
                return Some(Err(DecodeError::Json(format!("line longer than {MAX_LINE} bytes"))));
            }
            let line = match std::str::from_utf8(&self.buf) {
                Ok(s) => s.trim(),
                Err(_) => return Some(Err(DecodeError::Json("line is not valid UTF-8".into()))),
            };
            if !line.is_empty() {
                return Some(Ok(line.to_owned()));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Commands are applied.
    Controller,
    /// Receives state only; commands are refused.
    Observer,
}

/// Static scene description sent once on connect. World frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub box_dims: Option<[f64; 3]>,
    pub box_center: Option<[f64; 3]>,
    /// Recorded fulcrum of each arm, left first.
    pub holes: [[f64; 3]; 2],
    pub hole_diameter: f64,
    pub tool_diameter: f64,
    pub tool_length: f64,
    pub control_rate: f64,
    pub speed_levels: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub role: Role,
    pub config: SceneConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    #[serde(with = "event_kind")]
    pub kind: SafetyEventKind,
    pub tick: u64,
    pub detail: f64,
}

/// Why an arm is holding: `"operator"` or the kind of the safety event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoldReason {
    Operator,
    Safety(SafetyEventKind),
}

impl Serialize for HoldReason {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            HoldReason::Operator => s.serialize_str("operator"),
            HoldReason::Safety(k) => s.serialize_str(k.as_str()),
        }
    }
}

impl<'de> Deserialize<'de> for HoldReason {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "operator" {
            return Ok(HoldReason::Operator);
        }
        SafetyEventKind::parse(&s)
            .map(HoldReason::Safety)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown hold reason `{s}`")))
    }
}

/// One arm in a state snapshot. Positions are world frame, metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSnapshot {
    #[serde(with = "side")]
    pub arm: Side,
    pub q: [f64; 6],
    pub tip: [f64; 3],
    pub flange: [f64; 3],
    /// Flange z axis, pointing along the instrument towards the tip.
    pub axis: [f64; 3],
    pub fulcrum: [f64; 3],
    pub grasp: f64,
    pub spin: f64,
    pub rcm_error_mm: f64,
    pub speed_level: u8,
    pub flags: u32,
    pub hold: Option<HoldReason>,
    /// Events raised on this tick.
    pub events: Vec<EventRecord>,
}

impl ArmSnapshot {
    /// Distance from the fulcrum to the instrument axis, recomputed from
    /// this snapshot alone, mm.
    pub fn recompute_rcm_error_mm(&self) -> f64 {
        let (h, p, a) = (Vector3::from(self.fulcrum), Vector3::from(self.flange), Vector3::from(self.axis));
        let d = h - p;
        (d - a * d.dot(&a)).norm() * 1e3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub tick: u64,
    pub time_s: f64,
    pub arms: [ArmSnapshot; 2],
    /// Highest controller seq applied so far.
    pub last_seq: Option<u64>,
    /// Longest receipt-to-snapshot delay among commands applied on this
    /// tick, ms.
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NackReason {
    ReadOnly,
    ArmMismatch,
    UnmappedKey,
    StaleSeq,
    Overloaded,
    DecodeError,
    InvalidValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nack {
    pub seq: Option<u64>,
    pub reason: NackReason,
    pub detail: String,
    /// Field named by a decode error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

/// Seq numbers skipped by a client. The command that revealed the gap is
/// still applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub expected: u64,
    pub received: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(Hello),
    State(StateMessage),
    Nack(Nack),
    Gap(Gap),
}

impl ServerMessage {
    pub fn encode(&self) -> String {
        let mut v = serde_json::to_value(self).expect("server messages always serialize");
        v.as_object_mut().expect("tagged enum is an object").insert("v".into(), PROTOCOL_VERSION.into());
        let mut s = v.to_string();
        s.push('\n');
        s
    }

    pub fn decode(line: &str) -> Result<Self, DecodeError> {
        let v: Value = serde_json::from_str(line.trim_end()).map_err(|e| DecodeError::Json(e.to_string()))?;
        let obj = v.as_object().ok_or_else(|| DecodeError::Json("expected an object".into()))?;
        check_version(obj)?;
        field(obj, "type")?;
        serde_json::from_value(v).map_err(|e| DecodeError::Json(e.to_string()))
    }
}

mod side {
    use rcmtwin_core::Side;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(side: &Side, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(side.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Side, D::Error> {
        let s = String::deserialize(d)?;
        Side::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown arm `{s}`")))
    }
}

mod event_kind {
    use rcmtwin_core::safety::SafetyEventKind;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &SafetyEventKind, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(k.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SafetyEventKind, D::Error> {
        let s = String::deserialize(d)?;
        SafetyEventKind::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown event `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_commands() -> Vec<CommandMessage> {
        let stylus = StylusSample {
            position: Vector3::new(0.1, -0.2, 0.3),
            orientation: [0.01, -0.02, 3.0],
            button1: true,
            button2: false,
            timestamp: 12.5,
        };
        vec![
            CommandMessage { seq: 1, arm: Side::Left, payload: CommandPayload::KeyDown(Key::Char('W')) },
            CommandMessage { seq: 2, arm: Side::Left, payload: CommandPayload::KeyUp(Key::LCtrl) },
            CommandMessage { seq: 3, arm: Side::Right, payload: CommandPayload::Stylus(stylus) },
            CommandMessage { seq: 4, arm: Side::Right, payload: CommandPayload::Session(SessionVerb::Start) },
            CommandMessage { seq: 5, arm: Side::Right, payload: CommandPayload::Session(SessionVerb::Hold) },
            CommandMessage { seq: 6, arm: Side::Left, payload: CommandPayload::Session(SessionVerb::Resume) },
            CommandMessage { seq: 7, arm: Side::Left, payload: CommandPayload::Session(SessionVerb::SetSpeed(6)) },
        ]
    }

    #[test]
    fn command_round_trip() {
        for m in sample_commands() {
            let line = m.encode();
            assert!(line.ends_with('\n') && !line[..line.len() - 1].contains('\n'));
            assert_eq!(CommandMessage::decode(&line).unwrap(), m);
        }
    }

    #[test]
    fn missing_arm_is_named() {
        let err = CommandMessage::decode(r#"{"v":1,"seq":3,"kind":"key_down","key":"W"}"#).unwrap_err();
        assert_eq!(err, DecodeError::Missing("arm"));
        assert_eq!(err.field(), Some("arm"));
        let err = CommandMessage::decode(r#"{"v":1,"seq":3,"arm":"left","kind":"stylus","stylus":{"position":[0,0,0]}}"#)
            .unwrap_err();
        assert_eq!(err.field(), Some("orientation"));
    }

    #[test]
    fn invalid_fields_are_named() {
        let cases = [
            (r#"{"v":1,"seq":-1,"arm":"left","kind":"key_down","key":"W"}"#, "seq"),
            (r#"{"v":1,"seq":1,"arm":"middle","kind":"key_down","key":"W"}"#, "arm"),
            (r#"{"v":1,"seq":1,"arm":"left","kind":"poke"}"#, "kind"),
            (r#"{"v":1,"seq":1,"arm":"left","kind":"key_down","key":"F12"}"#, "key"),
            (r#"{"v":1,"seq":1,"arm":"left","kind":"session","verb":"set_speed","level":300}"#, "level"),
            (r#"{"v":2,"seq":1,"arm":"left","kind":"key_down","key":"W"}"#, "v"),
        ];
        for (line, name) in cases {
            assert_eq!(CommandMessage::decode(line).unwrap_err().field(), Some(name), "{line}");
        }
    }

    #[test]
    fn unknown_fields_ignored() {
        let m = CommandMessage::decode(r#"{"v":1,"seq":9,"arm":"right","kind":"key_up","key":"i","tick":40,"x":{}}"#)
            .unwrap();
        assert_eq!(m, CommandMessage { seq: 9, arm: Side::Right, payload: CommandPayload::KeyUp(Key::Char('I')) });
    }

    #[test]
    fn truncated_line_resynchronizes() {
        let good = sample_commands();
        let mut stream = good[0].encode();
        stream.push_str(r#"{"v":1,"seq":2,"ar"#);
        stream.push('\n');
        stream.push_str("\n\n");
        stream.push_str(&good[1].encode());
        let out: Vec<_> = decode_lines(stream.as_bytes()).collect();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].as_ref().unwrap(), &good[0]);
        assert!(matches!(out[1], Err(DecodeError::Json(_))));
        assert_eq!(out[2].as_ref().unwrap(), &good[1]);
    }

    #[test]
    fn invalid_utf8_line_is_an_error_not_the_end() {
        let mut bytes = b"\xff\xfe\n".to_vec();
        bytes.extend_from_slice(sample_commands()[0].encode().as_bytes());
        let out: Vec<_> = decode_lines(&bytes[..]).collect();
        assert!(out[0].is_err());
        assert!(out[1].is_ok());
    }

    fn snapshot(side: Side) -> ArmSnapshot {
        ArmSnapshot {
            arm: side,
            q: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            tip: [0.0, 0.01, 0.02],
            flange: [0.1, 0.0, 0.3],
            axis: [0.0, 0.0, -1.0],
            fulcrum: [0.1, 0.0, 0.15],
            grasp: 0.25,
            spin: -0.5,
            rcm_error_mm: 1.0e-7,
            speed_level: 4,
            flags: 0x140,
            hold: Some(HoldReason::Safety(SafetyEventKind::Singularity)),
            events: vec![EventRecord { kind: SafetyEventKind::Singularity, tick: 9, detail: 3.3e-4 }],
        }
    }

    #[test]
    fn server_round_trip() {
        let msgs = [
            ServerMessage::Hello(Hello {
                role: Role::Observer,
                config: SceneConfig {
                    box_dims: Some([0.3, 0.2, 0.15]),
                    box_center: None,
                    holes: [[-0.07, 0.0, 0.15], [0.07, 0.0, 0.15]],
                    hole_diameter: 0.008,
                    tool_diameter: 0.005,
                    tool_length: 0.3,
                    control_rate: 125.0,
                    speed_levels: 7,
                },
            }),
            ServerMessage::State(StateMessage {
                tick: 10,
                time_s: 0.08,
                arms: [snapshot(Side::Left), ArmSnapshot { hold: Some(HoldReason::Operator), ..snapshot(Side::Right) }],
                last_seq: Some(17),
                latency_ms: None,
            }),
            ServerMessage::Nack(Nack { seq: Some(3), reason: NackReason::ReadOnly, detail: "observer".into(), field: None }),
            ServerMessage::Nack(Nack {
                seq: None,
                reason: NackReason::DecodeError,
                detail: "missing".into(),
                field: Some("arm".into()),
            }),
            ServerMessage::Gap(Gap { expected: 4, received: 7 }),
        ];
        for m in msgs {
            let line = m.encode();
            assert_eq!(ServerMessage::decode(&line).unwrap(), m, "{line}");
        }
    }

    #[test]
    fn encoding_is_canonical() {
        let m = sample_commands()[0];
        assert_eq!(m.encode(), "{\"arm\":\"left\",\"key\":\"W\",\"kind\":\"key_down\",\"seq\":1,\"v\":1}\n");
        let again = CommandMessage::decode(&m.encode()).unwrap().encode();
        assert_eq!(again, m.encode());
    }

    #[test]
    fn snapshot_rcm_recompute() {
        let s = snapshot(Side::Left);
        assert!(s.recompute_rcm_error_mm() < 1e-12);
        let off = ArmSnapshot { fulcrum: [0.101, 0.0, 0.15], ..s };
        assert!((off.recompute_rcm_error_mm() - 1.0).abs() < 1e-9);
    }
}
