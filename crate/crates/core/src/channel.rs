//! Simulated insecure channel between protocol roles.
//!
//! Every frame a role emits passes through [`Channel::send`], which applies
//! the adversary's per-step action (deliver, block, modify, inject) and
//! appends the result to a replayable [`Transcript`]. The transcript is the
//! adversary's entire view: eavesdropping is always on and there is no side
//! channel into role state.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::word::{Word, WordError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Ksp,
    Sovnokp,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Ksp => "ksp",
            Protocol::Sovnokp => "sovnokp",
        })
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ksp" => Ok(Protocol::Ksp),
            "sovnokp" => Ok(Protocol::Sovnokp),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Tag,
    Reader,
    Node,
    Adversary,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Tag => "tag",
            Role::Reader => "reader",
            Role::Node => "node",
            Role::Adversary => "adversary",
        })
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tag" => Ok(Role::Tag),
            "reader" => Ok(Role::Reader),
            "node" => Ok(Role::Node),
            "adversary" => Ok(Role::Adversary),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// A typed protocol message. The concatenated payloads (`s||T||U`,
/// `r||A||B`, ...) are treated as named fields: every field is exactly L
/// bits, so framing is unambiguous and no split rule is needed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameBody {
    KspHello { r: Word },
    KspTagReply { s: Word, t: Word, u: Word },
    KspReaderFinal { p: Word, q: Word, r: Word },
    SovHello { r: Word },
    SovTagReply { a: Word, b: Word },
    SovForwardToNode { r: Word, a: Word, b: Word },
    SovNodeReply { c: Word, d: Word },
    SovForwardToTag { c: Word, d: Word },
}

impl FrameBody {
    pub fn kind(&self) -> &'static str {
        match self {
            FrameBody::KspHello { .. } => "ksp-hello",
            FrameBody::KspTagReply { .. } => "ksp-tag-reply",
            FrameBody::KspReaderFinal { .. } => "ksp-reader-final",
            FrameBody::SovHello { .. } => "sov-hello",
            FrameBody::SovTagReply { .. } => "sov-tag-reply",
            FrameBody::SovForwardToNode { .. } => "sov-forward-node",
            FrameBody::SovNodeReply { .. } => "sov-node-reply",
            FrameBody::SovForwardToTag { .. } => "sov-forward-tag",
        }
    }

    pub fn protocol(&self) -> Protocol {
        match self {
            FrameBody::KspHello { .. }
            | FrameBody::KspTagReply { .. }
            | FrameBody::KspReaderFinal { .. } => Protocol::Ksp,
            _ => Protocol::Sovnokp,
        }
    }

    /// Field names and values in canonical wire order.
    pub fn fields(&self) -> Vec<(&'static str, Word)> {
        match *self {
            FrameBody::KspHello { r } => vec![("r", r)],
            FrameBody::KspTagReply { s, t, u } => vec![("s", s), ("t", t), ("u", u)],
            FrameBody::KspReaderFinal { p, q, r } => vec![("p", p), ("q", q), ("r", r)],
            FrameBody::SovHello { r } => vec![("r", r)],
            FrameBody::SovTagReply { a, b } => vec![("a", a), ("b", b)],
            FrameBody::SovForwardToNode { r, a, b } => vec![("r", r), ("a", a), ("b", b)],
            FrameBody::SovNodeReply { c, d } => vec![("c", c), ("d", d)],
            FrameBody::SovForwardToTag { c, d } => vec![("c", c), ("d", d)],
        }
    }

    /// Rebuilds a body from a kind name and a field map.
    pub fn from_fields(kind: &str, fields: &BTreeMap<String, Word>) -> Result<Self, String> {
        let get = |name: &str| {
            fields
                .get(name)
                .copied()
                .ok_or_else(|| format!("kind {kind:?} is missing field {name:?}"))
        };
        let body = match kind {
            "ksp-hello" => FrameBody::KspHello { r: get("r")? },
            "ksp-tag-reply" => FrameBody::KspTagReply {
                s: get("s")?,
                t: get("t")?,
                u: get("u")?,
            },
            "ksp-reader-final" => FrameBody::KspReaderFinal {
                p: get("p")?,
                q: get("q")?,
                r: get("r")?,
            },
            "sov-hello" => FrameBody::SovHello { r: get("r")? },
            "sov-tag-reply" => FrameBody::SovTagReply {
                a: get("a")?,
                b: get("b")?,
            },
            "sov-forward-node" => FrameBody::SovForwardToNode {
                r: get("r")?,
                a: get("a")?,
                b: get("b")?,
            },
            "sov-node-reply" => FrameBody::SovNodeReply {
                c: get("c")?,
                d: get("d")?,
            },
            "sov-forward-tag" => FrameBody::SovForwardToTag {
                c: get("c")?,
                d: get("d")?,
            },
            other => return Err(format!("unknown frame kind {other:?}")),
        };
        let expected = body.fields().len();
        if fields.len() != expected {
            return Err(format!(
                "kind {kind:?} takes {expected} fields, got {}",
                fields.len()
            ));
        }
        Ok(body)
    }

    /// Replaces the named fields, keeping the rest.
    pub fn with_replacements(
        &self,
        replacements: &BTreeMap<String, Word>,
    ) -> Result<Self, String> {
        let mut map: BTreeMap<String, Word> = self
            .fields()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        for (name, value) in replacements {
            if !map.contains_key(name) {
                return Err(format!(
                    "kind {:?} has no field {name:?} to modify",
                    self.kind()
                ));
            }
            map.insert(name.clone(), *value);
        }
        FrameBody::from_fields(self.kind(), &map)
    }
}

/// One transmission as recorded in the transcript.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frame {
    pub session: u64,
    pub step: u32,
    pub sender: Role,
    pub receiver: Role,
    pub body: FrameBody,
    pub blocked: bool,
    pub modified: bool,
}

/// What the adversary does to a frame at a given (session, step).
#[derive(Clone, Debug)]
pub enum Action {
    Deliver,
    /// Drop the frame; it still appears in the transcript flagged blocked.
    Block,
    /// Substitute the named fields before delivery.
    Modify(BTreeMap<String, Word>),
    /// Suppress the honest frame and deliver an adversary-authored one.
    Inject(FrameBody),
}

/// Per-(session, step) adversary actions. Eavesdropping is unconditional;
/// anything not listed is delivered untouched.
#[derive(Clone, Debug, Default)]
pub struct AdversaryPolicy {
    actions: BTreeMap<(u64, u32), Action>,
}

impl AdversaryPolicy {
    /// Deliver everything.
    pub fn passive() -> Self {
        AdversaryPolicy::default()
    }

    pub fn with(mut self, session: u64, step: u32, action: Action) -> Self {
        self.actions.insert((session, step), action);
        self
    }

    pub fn block(self, session: u64, step: u32) -> Self {
        self.with(session, step, Action::Block)
    }

    fn action_for(&self, session: u64, step: u32) -> &Action {
        self.actions.get(&(session, step)).unwrap_or(&Action::Deliver)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptHeader {
    pub protocol: Protocol,
    pub bitlen: u16,
    pub seed: u64,
}

/// Ordered record of every frame that crossed the channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("frame kind {kind} belongs to protocol {got}, channel runs {expected}")]
    WrongProtocol {
        kind: &'static str,
        got: Protocol,
        expected: Protocol,
    },
    #[error("field {field:?} of {kind} has bit length {got}, channel runs at {expected}")]
    BitLenMismatch {
        kind: &'static str,
        field: &'static str,
        got: u16,
        expected: u16,
    },
    #[error("invalid modification: {0}")]
    BadModification(String),
}

// Frames are plain Copy values; the size gap to Blocked is accepted.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Delivery {
    Delivered(FrameBody),
    Blocked,
}

impl Delivery {
    pub fn delivered(self) -> Option<FrameBody> {
        match self {
            Delivery::Delivered(body) => Some(body),
            Delivery::Blocked => None,
        }
    }
}

/// One channel instance per trial; sessions multiplex over it and step
/// numbering is strictly increasing within each session.
#[derive(Debug)]
pub struct Channel {
    transcript: Transcript,
    policy: AdversaryPolicy,
    next_step: BTreeMap<u64, u32>,
}

impl Channel {
    pub fn new(header: TranscriptHeader, policy: AdversaryPolicy) -> Self {
        Channel {
            transcript: Transcript {
                header,
                frames: Vec::new(),
            },
            policy,
            next_step: BTreeMap::new(),
        }
    }

    pub fn bitlen(&self) -> u16 {
        self.transcript.header.bitlen
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    /// Sends one frame, applying the adversary action registered for this
    /// (session, step). Malformed frames are rejected, never dropped.
    pub fn send(
        &mut self,
        session: u64,
        sender: Role,
        receiver: Role,
        body: FrameBody,
    ) -> Result<Delivery, ChannelError> {
        self.validate(&body)?;
        let step = {
            let counter = self.next_step.entry(session).or_insert(0);
            let step = *counter;
            *counter += 1;
            step
        };
        let action = self.policy.action_for(session, step).clone();
        match action {
            Action::Deliver => {
                self.push(session, step, sender, receiver, body, false, false);
                Ok(Delivery::Delivered(body))
            }
            Action::Block => {
                self.push(session, step, sender, receiver, body, true, false);
                Ok(Delivery::Blocked)
            }
            Action::Modify(replacements) => {
                let modified = body
                    .with_replacements(&replacements)
                    .map_err(ChannelError::BadModification)?;
                self.validate(&modified)?;
                self.push(session, step, sender, receiver, modified, false, true);
                Ok(Delivery::Delivered(modified))
            }
            Action::Inject(substitute) => {
                self.validate(&substitute)?;
                self.push(session, step, sender, receiver, body, true, false);
                let step = {
                    let counter = self.next_step.entry(session).or_insert(0);
                    let step = *counter;
                    *counter += 1;
                    step
                };
                self.push(session, step, Role::Adversary, receiver, substitute, false, false);
                Ok(Delivery::Delivered(substitute))
            }
        }
    }

    fn validate(&self, body: &FrameBody) -> Result<(), ChannelError> {
        let expected = self.transcript.header.protocol;
        if body.protocol() != expected {
            return Err(ChannelError::WrongProtocol {
                kind: body.kind(),
                got: body.protocol(),
                expected,
            });
        }
        for (field, value) in body.fields() {
            if value.bitlen() != self.bitlen() {
                return Err(ChannelError::BitLenMismatch {
                    kind: body.kind(),
                    field,
                    got: value.bitlen(),
                    expected: self.bitlen(),
                });
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        session: u64,
        step: u32,
        sender: Role,
        receiver: Role,
        body: FrameBody,
        blocked: bool,
        modified: bool,
    ) {
        self.transcript.frames.push(Frame {
            session,
            step,
            sender,
            receiver,
            body,
            blocked,
            modified,
        });
    }
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

impl TranscriptError {
    fn parse(line: usize, reason: impl Into<String>) -> Self {
        TranscriptError::Parse {
            line,
            reason: reason.into(),
        }
    }
}

impl Transcript {
    /// Writes the line-oriented log: a header record followed by one record
    /// per frame, fields as `name=hex` in wire order.
    pub fn export(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(
            w,
            "transcript protocol={} bitlen={} seed={}",
            self.header.protocol, self.header.bitlen, self.header.seed
        )?;
        for f in &self.frames {
            write!(
                w,
                "frame session={} step={} from={} to={} kind={} blocked={} modified={}",
                f.session, f.step, f.sender, f.receiver, f.body.kind(), f.blocked, f.modified
            )?;
            for (name, value) in f.body.fields() {
                write!(w, " {name}={value}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn export_to_path(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let file = std::fs::File::create(path)?;
        self.export(io::BufWriter::new(file))
    }

    /// Parses a log produced by [`Transcript::export`]; errors carry the
    /// offending line number.
    pub fn import(r: impl BufRead) -> Result<Self, TranscriptError> {
        let mut lines = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            lines.push((idx + 1, line?));
        }
        let mut iter = lines.into_iter().filter(|(_, l)| !l.trim().is_empty());

        let (line_no, header_line) = iter
            .next()
            .ok_or_else(|| TranscriptError::parse(1, "empty file, expected header record"))?;
        let mut header_kv = parse_kv(line_no, &header_line, "transcript")?;
        let protocol: Protocol = take_parsed(line_no, &mut header_kv, "protocol")?;
        let bitlen: u16 = take_parsed(line_no, &mut header_kv, "bitlen")?;
        let seed: u64 = take_parsed(line_no, &mut header_kv, "seed")?;
        reject_leftovers(line_no, &header_kv)?;

        let mut frames = Vec::new();
        for (line_no, line) in iter {
            let mut kv = parse_kv(line_no, &line, "frame")?;
            let session: u64 = take_parsed(line_no, &mut kv, "session")?;
            let step: u32 = take_parsed(line_no, &mut kv, "step")?;
            let sender: Role = take_parsed(line_no, &mut kv, "from")?;
            let receiver: Role = take_parsed(line_no, &mut kv, "to")?;
            let kind = take_raw(line_no, &mut kv, "kind")?;
            let blocked: bool = take_parsed(line_no, &mut kv, "blocked")?;
            let modified: bool = take_parsed(line_no, &mut kv, "modified")?;
            let mut fields = BTreeMap::new();
            for (name, raw) in kv {
                let word = Word::from_hex(&raw, bitlen)
                    .map_err(|e: WordError| TranscriptError::parse(line_no, e.to_string()))?;
                fields.insert(name, word);
            }
            let body = FrameBody::from_fields(&kind, &fields)
                .map_err(|reason| TranscriptError::parse(line_no, reason))?;
            frames.push(Frame {
                session,
                step,
                sender,
                receiver,
                body,
                blocked,
                modified,
            });
        }
        Ok(Transcript {
            header: TranscriptHeader {
                protocol,
                bitlen,
                seed,
            },
            frames,
        })
    }

    pub fn import_from_path(path: impl AsRef<Path>) -> Result<Self, TranscriptError> {
        let file = std::fs::File::open(path)?;
        Transcript::import(io::BufReader::new(file))
    }

    /// Frames of one session, in order.
    pub fn session_frames(&self, session: u64) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(move |f| f.session == session)
    }
}

fn parse_kv(
    line_no: usize,
    line: &str,
    expected_tag: &str,
) -> Result<BTreeMap<String, String>, TranscriptError> {
    let mut tokens = line.split_whitespace();
    let tag = tokens.next().unwrap_or_default();
    if tag != expected_tag {
        return Err(TranscriptError::parse(
            line_no,
            format!("expected a {expected_tag:?} record, found {tag:?}"),
        ));
    }
    let mut map = BTreeMap::new();
    for token in tokens {
        let (key, value) = token.split_once('=').ok_or_else(|| {
            TranscriptError::parse(line_no, format!("token {token:?} is not key=value"))
        })?;
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(TranscriptError::parse(
                line_no,
                format!("duplicate key {key:?}"),
            ));
        }
    }
    Ok(map)
}

fn take_raw(
    line_no: usize,
    kv: &mut BTreeMap<String, String>,
    key: &str,
) -> Result<String, TranscriptError> {
    kv.remove(key)
        .ok_or_else(|| TranscriptError::parse(line_no, format!("missing key {key:?}")))
}

fn take_parsed<T>(
    line_no: usize,
    kv: &mut BTreeMap<String, String>,
    key: &str,
) -> Result<T, TranscriptError>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    let raw = take_raw(line_no, kv, key)?;
    raw.parse().map_err(|e: T::Err| {
        TranscriptError::parse(line_no, format!("bad value for {key:?}: {e}"))
    })
}

fn reject_leftovers(
    line_no: usize,
    kv: &BTreeMap<String, String>,
) -> Result<(), TranscriptError> {
    if let Some(key) = kv.keys().next() {
        return Err(TranscriptError::parse(
            line_no,
            format!("unexpected key {key:?}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn header() -> TranscriptHeader {
        TranscriptHeader {
            protocol: Protocol::Ksp,
            bitlen: 8,
            seed: 7,
        }
    }

    fn hello(v: u64) -> FrameBody {
        FrameBody::KspHello {
            r: Word::from_uint(v, 8),
        }
    }

    #[test]
    fn deliver_is_transparent() {
        let mut ch = Channel::new(header(), AdversaryPolicy::passive());
        let out = ch.send(0, Role::Reader, Role::Tag, hello(0x2f)).unwrap();
        assert_eq!(out, Delivery::Delivered(hello(0x2f)));
        let f = &ch.transcript().frames[0];
        assert!(!f.blocked && !f.modified);
        assert_eq!(f.step, 0);
    }

    #[test]
    fn block_records_but_does_not_deliver() {
        let policy = AdversaryPolicy::passive().block(0, 0);
        let mut ch = Channel::new(header(), policy);
        let out = ch.send(0, Role::Reader, Role::Tag, hello(1)).unwrap();
        assert_eq!(out, Delivery::Blocked);
        assert!(ch.transcript().frames[0].blocked);
    }

    #[test]
    fn modify_substitutes_fields_and_flags() {
        let mut repl = BTreeMap::new();
        repl.insert("r".to_string(), Word::from_uint(0xaa, 8));
        let policy = AdversaryPolicy::passive().with(0, 0, Action::Modify(repl));
        let mut ch = Channel::new(header(), policy);
        let out = ch.send(0, Role::Reader, Role::Tag, hello(1)).unwrap();
        assert_eq!(out, Delivery::Delivered(hello(0xaa)));
        assert!(ch.transcript().frames[0].modified);
    }

    #[test]
    fn inject_replaces_with_adversary_frame() {
        let policy = AdversaryPolicy::passive().with(0, 0, Action::Inject(hello(0x55)));
        let mut ch = Channel::new(header(), policy);
        let out = ch.send(0, Role::Reader, Role::Tag, hello(1)).unwrap();
        assert_eq!(out, Delivery::Delivered(hello(0x55)));
        let frames = &ch.transcript().frames;
        assert!(frames[0].blocked);
        assert_eq!(frames[1].sender, Role::Adversary);
        assert_eq!(frames[1].step, 1);
    }

    #[test]
    fn malformed_frames_are_rejected() {
        let mut ch = Channel::new(header(), AdversaryPolicy::passive());
        let wrong_len = FrameBody::KspHello {
            r: Word::from_uint(1, 16),
        };
        assert!(matches!(
            ch.send(0, Role::Reader, Role::Tag, wrong_len),
            Err(ChannelError::BitLenMismatch { .. })
        ));
        let wrong_protocol = FrameBody::SovHello {
            r: Word::from_uint(1, 8),
        };
        assert!(matches!(
            ch.send(0, Role::Reader, Role::Tag, wrong_protocol),
            Err(ChannelError::WrongProtocol { .. })
        ));
        assert!(ch.transcript().frames.is_empty());
    }

    #[test]
    fn step_numbers_increase_per_session() {
        let mut ch = Channel::new(header(), AdversaryPolicy::passive());
        ch.send(0, Role::Reader, Role::Tag, hello(1)).unwrap();
        ch.send(1, Role::Reader, Role::Tag, hello(2)).unwrap();
        ch.send(0, Role::Reader, Role::Tag, hello(3)).unwrap();
        let steps: Vec<(u64, u32)> = ch
            .transcript()
            .frames
            .iter()
            .map(|f| (f.session, f.step))
            .collect();
        assert_eq!(steps, vec![(0, 0), (1, 0), (0, 1)]);
    }

    #[test]
    fn export_import_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut ch = Channel::new(header(), AdversaryPolicy::passive().block(0, 1));
        ch.send(0, Role::Reader, Role::Tag, hello(0x2f)).unwrap();
        let reply = FrameBody::KspTagReply {
            s: Word::random(&mut rng, 8),
            t: Word::random(&mut rng, 8),
            u: Word::random(&mut rng, 8),
        };
        ch.send(0, Role::Tag, Role::Reader, reply).unwrap();
        let transcript = ch.into_transcript();

        let mut buf = Vec::new();
        transcript.export(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().starts_with("transcript "));
        assert!(text.contains("blocked=true"));

        let back = Transcript::import(io::Cursor::new(buf)).unwrap();
        assert_eq!(back, transcript);
    }

    #[test]
    fn empty_transcript_exports_header_only() {
        let transcript = Transcript {
            header: header(),
            frames: Vec::new(),
        };
        let mut buf = Vec::new();
        transcript.export(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 1);
        let back = Transcript::import(io::Cursor::new(buf)).unwrap();
        assert_eq!(back, transcript);
    }

    #[test]
    fn transcripts_round_trip_for_arbitrary_frames() {
        use proptest::prelude::*;

        let word = |v: u64| Word::from_uint(v & 0xffff, 16);
        let body = |kind: u8, a: u64, b: u64, c: u64| match kind % 8 {
            0 => FrameBody::KspHello { r: word(a) },
            1 => FrameBody::KspTagReply {
                s: word(a),
                t: word(b),
                u: word(c),
            },
            2 => FrameBody::KspReaderFinal {
                p: word(a),
                q: word(b),
                r: word(c),
            },
            3 => FrameBody::SovHello { r: word(a) },
            4 => FrameBody::SovTagReply {
                a: word(a),
                b: word(b),
            },
            5 => FrameBody::SovForwardToNode {
                r: word(a),
                a: word(b),
                b: word(c),
            },
            6 => FrameBody::SovNodeReply {
                c: word(a),
                d: word(b),
            },
            _ => FrameBody::SovForwardToTag {
                c: word(a),
                d: word(b),
            },
        };
        let roles = [Role::Tag, Role::Reader, Role::Node, Role::Adversary];

        proptest!(|(
            raw in proptest::collection::vec(
                (any::<u8>(), any::<u64>(), any::<u64>(), any::<u64>(), any::<u8>(), any::<bool>(), any::<bool>()),
                0..12
            ),
            seed in any::<u64>()
        )| {
            let frames: Vec<Frame> = raw
                .iter()
                .enumerate()
                .map(|(i, &(kind, a, b, c, role_bits, blocked, modified))| Frame {
                    session: i as u64 % 3,
                    step: i as u32,
                    sender: roles[(role_bits & 3) as usize],
                    receiver: roles[(role_bits >> 2 & 3) as usize],
                    body: body(kind, a, b, c),
                    blocked,
                    modified,
                })
                .collect();
            let transcript = Transcript {
                header: TranscriptHeader {
                    protocol: Protocol::Sovnokp,
                    bitlen: 16,
                    seed,
                },
                frames,
            };
            let mut buf = Vec::new();
            transcript.export(&mut buf).unwrap();
            let back = Transcript::import(io::Cursor::new(buf)).unwrap();
            prop_assert_eq!(back, transcript);
        });
    }

    #[test]
    fn import_errors_name_the_line() {
        let text = "transcript protocol=ksp bitlen=8 seed=1\nframe session=0 step=0 from=reader to=tag kind=nonsense blocked=false modified=false\n";
        let err = Transcript::import(io::Cursor::new(text.as_bytes())).unwrap_err();
        match err {
            TranscriptError::Parse { line, reason } => {
                assert_eq!(line, 2);
                assert!(reason.contains("nonsense"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn import_rejects_bad_hex_width() {
        let text = "transcript protocol=ksp bitlen=8 seed=1\nframe session=0 step=0 from=reader to=tag kind=ksp-hello blocked=false modified=false r=12345\n";
        let err = Transcript::import(io::Cursor::new(text.as_bytes())).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
