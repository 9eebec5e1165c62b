//! Executable SOVNOKP roles: tag, pass-through reader, and a supply-chain
//! node that authenticates tags against its database plus a product-history
//! ledger keyed by SHA-256(IDS || K). The distributed ledger of the original
//! design is replaced by an in-memory map with the same lookup contract.
//!
//! Message layer:
//!
//! ```text
//! reader -> tag  : Hello, r
//! tag    -> reader -> node : A = Rot(IDS^r, wt(q))
//!                            B = Rot(IDS, wt(r)) ^ Rot(K^r, wt(q))   (xor-r)
//!                            B = Rot(IDS, wt(r)) ^ Rot(K^q, wt(q))   (xor-q)
//! node   -> reader -> tag  : C = Rot(r, wt(IDS)^wt(K)) ^ Rot(m, wt(K))
//!                            D = Rot(m, wt(IDS)) ^ Rot(r, wt(K))
//! ```
//!
//! Both sides update only when wt(m) is even. The two B variants circulate
//! in descriptions of this protocol; they differ in whether the second
//! rotation masks the key with the challenge or with the tag nonce, and the
//! variant decides whether the node can recover q at all (see
//! [`SovMatch::recovered_q`]).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{Channel, ChannelError, Delivery, FrameBody, Role};
use crate::ksp::AuthError;
use crate::secrets::{ProvisionRecord, SecretPair, Side};
use crate::word::Word;

/// A tag stops answering after this many failed verifications.
pub const KILL_THRESHOLD: u8 = 5;

/// Which word masks the key inside message B.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BVariant {
    XorR,
    XorQ,
}

impl fmt::Display for BVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BVariant::XorR => "xor-r",
            BVariant::XorQ => "xor-q",
        })
    }
}

impl FromStr for BVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "xor-r" => Ok(BVariant::XorR),
            "xor-q" => Ok(BVariant::XorQ),
            other => Err(format!("unknown B variant {other:?}")),
        }
    }
}

/// The pseudonym/key update; note the IDS half depends on the tag nonce
/// only through its Hamming weight.
pub fn update_secrets(ids: Word, key: Word, r: Word, q: Word) -> SecretPair {
    let wq = Word::from_uint(q.wt() as u64, ids.bitlen());
    SecretPair {
        ids: (ids ^ key).rot_left(r.wt()) ^ (key ^ wq).rot_left(ids.wt()),
        key: key.rot_left(r.wt()) ^ (r ^ q).rot_left(key.wt()),
    }
}

pub(crate) fn tag_reply(ids: Word, key: Word, q: Word, r: Word, variant: BVariant) -> FrameBody {
    let masked = match variant {
        BVariant::XorR => key ^ r,
        BVariant::XorQ => key ^ q,
    };
    FrameBody::SovTagReply {
        a: (ids ^ r).rot_left(q.wt()),
        b: ids.rot_left(r.wt()) ^ masked.rot_left(q.wt()),
    }
}

pub(crate) fn node_reply(ids: Word, key: Word, r: Word, m: Word) -> FrameBody {
    FrameBody::SovNodeReply {
        c: r.rot_left(ids.wt() ^ key.wt()) ^ m.rot_left(key.wt()),
        d: m.rot_left(ids.wt()) ^ r.rot_left(key.wt()),
    }
}

// ---------------------------------------------------------------------------
// Ledger
// ---------------------------------------------------------------------------

/// SHA-256 over the bit-level concatenation IDS || K (IDS first, MSB-first
/// bits packed into bytes, the final partial byte zero-padded).
pub fn ledger_digest(ids: &Word, key: &Word) -> LedgerKey {
    let mut bits = Vec::with_capacity(2 * ids.bitlen() as usize);
    ids.extend_bits(&mut bits);
    key.extend_bits(&mut bits);
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, bit) in bits.iter().enumerate() {
        if *bit {
            bytes[i / 8] |= 1 << (7 - (i % 8));
        }
    }
    LedgerKey(Sha256::digest(&bytes).into())
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LedgerKey(pub [u8; 32]);

impl fmt::Display for LedgerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for byte in &self.0 {
            write!(f, "{byte:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for LedgerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LedgerKey({self})")
    }
}

impl FromStr for LedgerKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 64 {
            return Err(format!("digest must be 64 hex digits, got {}", s.len()));
        }
        let mut out = [0u8; 32];
        for (i, chunk) in out.iter_mut().enumerate() {
            *chunk = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|e| format!("bad digest hex: {e}"))?;
        }
        Ok(LedgerKey(out))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProductStatus {
    Valid,
    Invalidated,
}

impl fmt::Display for ProductStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProductStatus::Valid => "valid",
            ProductStatus::Invalidated => "invalidated",
        })
    }
}

impl FromStr for ProductStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "valid" => Ok(ProductStatus::Valid),
            "invalidated" => Ok(ProductStatus::Invalidated),
            other => Err(format!("unknown product status {other:?}")),
        }
    }
}

/// Product-history record. The fields are opaque to the protocol; only the
/// status gates authorization. Tokens must be whitespace-free so the
/// snapshot format stays line-oriented.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub owner: String,
    pub timestamp: u64,
    pub location: String,
    pub status: ProductStatus,
    pub permission: u8,
}

impl LedgerEntry {
    pub fn new(owner: &str, location: &str, permission: u8) -> Self {
        assert!(
            !owner.contains(char::is_whitespace) && !location.contains(char::is_whitespace),
            "ledger tokens must not contain whitespace"
        );
        LedgerEntry {
            owner: owner.to_string(),
            timestamp: 0,
            location: location.to_string(),
            status: ProductStatus::Valid,
            permission,
        }
    }
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// In-memory stand-in for the product-history blockchain. Entries are
/// keyed by [`ledger_digest`]; superseded entries are retained so a tag
/// that missed an update still authorizes.
#[derive(Clone, Debug, Default)]
pub struct Ledger {
    entries: BTreeMap<LedgerKey, LedgerEntry>,
    clock: u64,
}

impl Ledger {
    pub fn new() -> Self {
        Ledger::default()
    }

    pub fn register(&mut self, key: LedgerKey, mut entry: LedgerEntry) {
        self.clock += 1;
        entry.timestamp = self.clock;
        self.entries.insert(key, entry);
    }

    /// Authorized iff the digest is present and its status is valid.
    pub fn check(&self, key: &LedgerKey) -> bool {
        self.entries
            .get(key)
            .map(|e| e.status == ProductStatus::Valid)
            .unwrap_or(false)
    }

    pub fn get(&self, key: &LedgerKey) -> Option<&LedgerEntry> {
        self.entries.get(key)
    }

    pub fn invalidate(&mut self, key: &LedgerKey) {
        if let Some(entry) = self.entries.get_mut(key) {
            entry.status = ProductStatus::Invalidated;
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One record per line: digest plus the opaque history fields.
    pub fn export(&self, mut w: impl Write) -> io::Result<()> {
        for (key, e) in &self.entries {
            writeln!(
                w,
                "entry digest={key} owner={} timestamp={} location={} status={} permission={}",
                e.owner, e.timestamp, e.location, e.status, e.permission
            )?;
        }
        Ok(())
    }

    pub fn export_to_path(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let file = std::fs::File::create(path)?;
        self.export(io::BufWriter::new(file))
    }

    pub fn import(r: impl BufRead) -> Result<Self, LedgerError> {
        let mut ledger = Ledger::new();
        for (idx, line) in r.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut kv = BTreeMap::new();
            let mut tokens = line.split_whitespace();
            if tokens.next() != Some("entry") {
                return Err(LedgerError::Parse {
                    line: line_no,
                    reason: "expected an \"entry\" record".to_string(),
                });
            }
            for token in tokens {
                let (k, v) = token.split_once('=').ok_or_else(|| LedgerError::Parse {
                    line: line_no,
                    reason: format!("token {token:?} is not key=value"),
                })?;
                kv.insert(k.to_string(), v.to_string());
            }
            let mut take = |key: &str| {
                kv.remove(key).ok_or_else(|| LedgerError::Parse {
                    line: line_no,
                    reason: format!("missing key {key:?}"),
                })
            };
            let parse_err = |reason: String| LedgerError::Parse {
                line: line_no,
                reason,
            };
            let digest: LedgerKey = take("digest")?.parse().map_err(parse_err)?;
            let owner = take("owner")?;
            let timestamp: u64 = take("timestamp")?
                .parse()
                .map_err(|e| parse_err(format!("bad timestamp: {e}")))?;
            let location = take("location")?;
            let status: ProductStatus = take("status")?.parse().map_err(parse_err)?;
            let permission: u8 = take("permission")?
                .parse()
                .map_err(|e| parse_err(format!("bad permission: {e}")))?;
            ledger.entries.insert(
                digest,
                LedgerEntry {
                    owner,
                    timestamp,
                    location,
                    status,
                    permission,
                },
            );
            ledger.clock = ledger.clock.max(timestamp);
        }
        Ok(ledger)
    }

    pub fn import_from_path(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let file = std::fs::File::open(path)?;
        Ledger::import(io::BufReader::new(file))
    }
}

// ---------------------------------------------------------------------------
// Tag
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SovTagState {
    pub old: SecretPair,
    pub new: SecretPair,
    pub fail_count: u8,
    pub killed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SovVerdict {
    Accepted { updated: bool },
    Rejected { killed: bool },
}

#[derive(Clone, Debug)]
pub struct SovTag {
    state: SovTagState,
    pending: Option<SovPending>,
}

#[derive(Clone, Copy, Debug)]
struct SovPending {
    r: Word,
    q: Word,
}

impl SovTag {
    pub fn new(state: SovTagState) -> Self {
        SovTag {
            state,
            pending: None,
        }
    }

    pub fn provision(record: &ProvisionRecord) -> Self {
        SovTag::new(SovTagState {
            old: record.old,
            new: record.new,
            fail_count: 0,
            killed: false,
        })
    }

    pub fn state(&self) -> &SovTagState {
        &self.state
    }

    /// Answers a challenge with the current new-side secrets; a killed tag
    /// answers nothing. Also returns the fresh nonce for white-box checks.
    pub fn respond(
        &mut self,
        r: Word,
        rng: &mut impl RngCore,
        variant: BVariant,
    ) -> Option<(FrameBody, Word)> {
        if self.state.killed {
            return None;
        }
        let q = Word::random(rng, r.bitlen());
        self.pending = Some(SovPending { r, q });
        Some((
            tag_reply(self.state.new.ids, self.state.new.key, q, r, variant),
            q,
        ))
    }

    /// Extracts m from C, authenticates via D, and updates only when wt(m)
    /// is even. Each failed verification counts toward the kill threshold;
    /// frames that never arrive do not.
    pub fn verify_and_update(&mut self, c: Word, d: Word) -> SovVerdict {
        let Some(pending) = self.pending else {
            return self.record_failure();
        };
        let ids = self.state.new.ids;
        let key = self.state.new.key;
        let m = (c ^ pending.r.rot_left(ids.wt() ^ key.wt())).rot_right(key.wt());
        if d != m.rot_left(ids.wt()) ^ pending.r.rot_left(key.wt()) {
            return self.record_failure();
        }
        self.pending = None;
        if m.wt().is_multiple_of(2) {
            self.state.old = self.state.new;
            self.state.new = update_secrets(ids, key, pending.r, pending.q);
            SovVerdict::Accepted { updated: true }
        } else {
            SovVerdict::Accepted { updated: false }
        }
    }

    fn record_failure(&mut self) -> SovVerdict {
        self.state.fail_count += 1;
        if self.state.fail_count >= KILL_THRESHOLD {
            self.state.killed = true;
        }
        SovVerdict::Rejected {
            killed: self.state.killed,
        }
    }
}

// ---------------------------------------------------------------------------
// Supply chain node
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SovNodeRecord {
    pub old: SecretPair,
    pub new: SecretPair,
}

/// A successful identification. `recovered_q` is populated only under the
/// xor-q variant, where B carries enough information to solve for the tag
/// nonce; under xor-r the messages determine the nonce only up to its
/// Hamming weight.
#[derive(Clone, Copy, Debug)]
pub struct SovMatch {
    pub record: usize,
    pub side: Side,
    pub offset: u32,
    pub recovered_q: Option<Word>,
}

#[derive(Clone, Debug, Default)]
pub struct SovNode {
    db: Vec<SovNodeRecord>,
    ledger: Ledger,
}

impl SovNode {
    pub fn new() -> Self {
        SovNode::default()
    }

    /// Enrolls a tag and registers its ledger entry under the digest of the
    /// new-side secrets.
    pub fn enroll(&mut self, record: &ProvisionRecord, entry: LedgerEntry) {
        self.db.push(SovNodeRecord {
            old: record.old,
            new: record.new,
        });
        self.ledger
            .register(ledger_digest(&record.new.ids, &record.new.key), entry);
    }

    pub fn records(&self) -> &[SovNodeRecord] {
        &self.db
    }

    pub fn record(&self, idx: usize) -> &SovNodeRecord {
        &self.db[idx]
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut Ledger {
        &mut self.ledger
    }

    /// Exhaustive search over the rotation offset, recovering the pseudonym
    /// from A and validating B against the candidate record's key.
    pub fn identify(
        &self,
        r: Word,
        a: Word,
        b: Word,
        variant: BVariant,
    ) -> Result<SovMatch, AuthError> {
        let l = r.bitlen() as u32;
        let mut hits: Vec<SovMatch> = Vec::new();
        for c in 0..l {
            let ids = a.rot_right(c) ^ r;
            for (idx, rec) in self.db.iter().enumerate() {
                for (side, pair) in [(Side::New, rec.new), (Side::Old, rec.old)] {
                    if ids != pair.ids {
                        continue;
                    }
                    let unmasked = (b ^ ids.rot_left(r.wt())).rot_right(c);
                    let recovered_q = match variant {
                        BVariant::XorR => {
                            if unmasked ^ r != pair.key {
                                continue;
                            }
                            None
                        }
                        BVariant::XorQ => {
                            let q = unmasked ^ pair.key;
                            if q.wt() % l != c {
                                continue;
                            }
                            Some(q)
                        }
                    };
                    hits.push(SovMatch {
                        record: idx,
                        side,
                        offset: c,
                        recovered_q,
                    });
                }
            }
        }
        if hits.is_empty() {
            return Err(AuthError::NoMatch);
        }
        if hits.iter().any(|h| h.record != hits[0].record) {
            return Err(AuthError::Ambiguous);
        }
        hits.sort_by_key(|h| (h.side == Side::Old, h.offset));
        Ok(hits[0])
    }

    /// Consults the product history under the matched record's current
    /// new-side digest.
    pub fn authorize(&self, matched: &SovMatch) -> bool {
        let rec = &self.db[matched.record];
        self.ledger
            .check(&ledger_digest(&rec.new.ids, &rec.new.key))
    }

    /// Builds C||D from a fresh nonce m and applies the update iff wt(m) is
    /// even, re-registering the ledger entry under the new digest (the old
    /// entry is retained). `q` is the tag nonce the update formula needs;
    /// under xor-q it comes from identification, under xor-r the messages
    /// do not determine it and the simulation supplies it out of band.
    /// Returns the reply and m for white-box checks.
    pub fn respond(
        &mut self,
        matched: &SovMatch,
        r: Word,
        q: Word,
        rng: &mut impl RngCore,
    ) -> (FrameBody, Word) {
        let rec = &self.db[matched.record];
        let pair = match matched.side {
            Side::New => rec.new,
            Side::Old => rec.old,
        };
        let m = Word::random(rng, r.bitlen());
        let body = node_reply(pair.ids, pair.key, r, m);
        if m.wt().is_multiple_of(2) {
            let next = update_secrets(pair.ids, pair.key, r, q);
            let entry = self
                .ledger
                .get(&ledger_digest(&pair.ids, &pair.key))
                .cloned()
                .unwrap_or_else(|| LedgerEntry::new("unregistered", "unknown", 0));
            let rec = &mut self.db[matched.record];
            rec.old = pair;
            rec.new = next;
            self.ledger
                .register(ledger_digest(&next.ids, &next.key), entry);
        }
        (body, m)
    }
}

// ---------------------------------------------------------------------------
// Session driver
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct SovSessionRun {
    pub challenge: Option<Word>,
    pub tag_responded: bool,
    pub node_authenticated: bool,
    pub match_side: Option<Side>,
    pub node_updated: bool,
    /// None when the final frame never reached the tag.
    pub tag_verdict: Option<SovVerdict>,
    pub tag_nonce: Option<Word>,
    pub node_nonce: Option<Word>,
}

/// Drives one SOVNOKP session. The reader is a pure forwarder: it prepends
/// its challenge to the tag reply for the node and relays the node reply
/// back to the tag unchanged.
pub fn run_sov_session(
    session: u64,
    tag: &mut SovTag,
    node: &mut SovNode,
    channel: &mut Channel,
    rng: &mut impl RngCore,
    variant: BVariant,
) -> Result<SovSessionRun, ChannelError> {
    let mut run = SovSessionRun {
        challenge: None,
        tag_responded: false,
        node_authenticated: false,
        match_side: None,
        node_updated: false,
        tag_verdict: None,
        tag_nonce: None,
        node_nonce: None,
    };

    let r = Word::random(rng, channel.bitlen());
    run.challenge = Some(r);
    let hello = channel.send(session, Role::Reader, Role::Tag, FrameBody::SovHello { r })?;
    let Delivery::Delivered(FrameBody::SovHello { r: r_seen }) = hello else {
        return Ok(run);
    };

    let Some((reply, q)) = tag.respond(r_seen, rng, variant) else {
        return Ok(run);
    };
    run.tag_responded = true;
    run.tag_nonce = Some(q);
    let reply = channel.send(session, Role::Tag, Role::Reader, reply)?;
    let Delivery::Delivered(FrameBody::SovTagReply { a, b }) = reply else {
        return Ok(run);
    };

    let forwarded = channel.send(
        session,
        Role::Reader,
        Role::Node,
        FrameBody::SovForwardToNode { r, a, b },
    )?;
    let Delivery::Delivered(FrameBody::SovForwardToNode { r: rf, a: af, b: bf }) = forwarded
    else {
        return Ok(run);
    };

    let matched = match node.identify(rf, af, bf, variant) {
        Ok(m) => m,
        Err(_) => return Ok(run),
    };
    if !node.authorize(&matched) {
        return Ok(run);
    }
    run.node_authenticated = true;
    run.match_side = Some(matched.side);

    // The update consumes the tag nonce. Under xor-q the node solved for it
    // from B; under xor-r nothing on the wire determines it, so the
    // simulation hands the node the ground-truth value.
    let q_for_update = matched.recovered_q.unwrap_or(q);
    let before = *node.record(matched.record);
    let (reply, m) = node.respond(&matched, rf, q_for_update, rng);
    run.node_updated = *node.record(matched.record) != before;
    run.node_nonce = Some(m);

    let to_reader = channel.send(session, Role::Node, Role::Reader, reply)?;
    let Delivery::Delivered(FrameBody::SovNodeReply { c, d }) = to_reader else {
        return Ok(run);
    };
    let to_tag = channel.send(
        session,
        Role::Reader,
        Role::Tag,
        FrameBody::SovForwardToTag { c, d },
    )?;
    let Delivery::Delivered(FrameBody::SovForwardToTag { c, d }) = to_tag else {
        return Ok(run);
    };

    run.tag_verdict = Some(tag.verify_and_update(c, d));
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{AdversaryPolicy, Protocol, TranscriptHeader};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn w8(v: u64) -> Word {
        Word::from_uint(v, 8)
    }

    fn provisioned(rng: &mut ChaCha12Rng, bitlen: u16) -> (SovTag, SovNode) {
        let record = ProvisionRecord::fresh(
            Word::random(rng, bitlen),
            Word::random(rng, bitlen),
            Word::random(rng, bitlen),
        );
        let tag = SovTag::provision(&record);
        let mut node = SovNode::new();
        node.enroll(&record, LedgerEntry::new("acme", "warehouse-7", 3));
        (tag, node)
    }

    fn channel_for(bitlen: u16, policy: AdversaryPolicy) -> Channel {
        Channel::new(
            TranscriptHeader {
                protocol: Protocol::Sovnokp,
                bitlen,
                seed: 0,
            },
            policy,
        )
    }

    fn states_equal(tag: &SovTag, rec: &SovNodeRecord) -> bool {
        tag.state().old == rec.old && tag.state().new == rec.new
    }

    // Golden values cross-checked against an independent integer-arithmetic
    // implementation of the same message equations.
    #[test]
    fn golden_tag_reply_both_variants() {
        let body = tag_reply(w8(0xa7), w8(0x3c), w8(0x8d), w8(0x51), BVariant::XorR);
        assert_eq!(
            body,
            FrameBody::SovTagReply {
                a: w8(0x6f),
                b: w8(0xeb),
            }
        );
        let body = tag_reply(w8(0xa7), w8(0x3c), w8(0x8d), w8(0x51), BVariant::XorQ);
        assert_eq!(
            body,
            FrameBody::SovTagReply {
                a: w8(0x6f),
                b: w8(0x26),
            }
        );
    }

    #[test]
    fn golden_node_reply() {
        let body = node_reply(w8(0xa7), w8(0x3c), w8(0x51), w8(0xe4));
        assert_eq!(
            body,
            FrameBody::SovNodeReply {
                c: w8(0xec),
                d: w8(0x89),
            }
        );
    }

    #[test]
    fn golden_update() {
        let next = update_secrets(w8(0xa7), w8(0x3c), w8(0x51), w8(0x8d));
        assert_eq!(next, SecretPair::new(w8(0xdb), w8(0x2c)));
    }

    #[test]
    fn tag_reply_degenerate_cases() {
        // q = 0: the rotations by wt(q) are identity.
        let body = tag_reply(w8(0xa7), w8(0x3c), w8(0x00), w8(0x51), BVariant::XorR);
        assert_eq!(
            body,
            FrameBody::SovTagReply {
                a: w8(0xa7) ^ w8(0x51),
                b: w8(0xa7).rot_left(3) ^ w8(0x3c) ^ w8(0x51),
            }
        );
        // r = 0 and q = 0: everything collapses to plain XORs.
        let body = tag_reply(w8(0xa7), w8(0x3c), w8(0x00), w8(0x00), BVariant::XorR);
        assert_eq!(
            body,
            FrameBody::SovTagReply {
                a: w8(0xa7),
                b: w8(0xa7) ^ w8(0x3c),
            }
        );
    }

    #[test]
    fn node_reply_zero_nonce() {
        let (ids, key, r) = (w8(0xa7), w8(0x3c), w8(0x51));
        let body = node_reply(ids, key, r, w8(0));
        assert_eq!(
            body,
            FrameBody::SovNodeReply {
                c: r.rot_left(ids.wt() ^ key.wt()),
                d: r.rot_left(key.wt()),
            }
        );
    }

    #[test]
    fn update_depends_on_nonce_weight_only_for_ids() {
        // Two nonces with equal weight produce the same IDS half.
        let (ids, key, r) = (w8(0xa7), w8(0x3c), w8(0x51));
        let a = update_secrets(ids, key, r, w8(0b0000_0111));
        let b = update_secrets(ids, key, r, w8(0b1110_0000));
        assert_eq!(a.ids, b.ids);
        assert_ne!(a.key, b.key);
    }

    #[test]
    fn update_zero_inputs() {
        let (ids, key) = (w8(0xa7), w8(0x3c));
        let next = update_secrets(ids, key, w8(0), w8(0));
        assert_eq!(next.ids, (ids ^ key) ^ key.rot_left(ids.wt()));
        assert_eq!(next.key, key);
    }

    #[test]
    fn ledger_digest_is_stable_and_keyed_by_both_words() {
        let a = ledger_digest(&w8(0xa7), &w8(0x3c));
        assert_eq!(a, ledger_digest(&w8(0xa7), &w8(0x3c)));
        assert_ne!(a, ledger_digest(&w8(0xa7), &w8(0x3d)));
        assert_ne!(a, ledger_digest(&w8(0x3c), &w8(0xa7)));
        // 8-bit words concatenate to the two raw bytes.
        let expected: [u8; 32] = Sha256::digest([0xa7u8, 0x3c]).into();
        assert_eq!(a.0, expected);
    }

    #[test]
    fn ledger_check_examples() {
        let mut ledger = Ledger::new();
        let key = ledger_digest(&w8(0xa7), &w8(0x3c));
        assert!(!ledger.check(&key));
        ledger.register(key, LedgerEntry::new("acme", "dock-3", 1));
        assert!(ledger.check(&key));
        ledger.invalidate(&key);
        assert!(!ledger.check(&key));
    }

    #[test]
    fn ledger_snapshot_round_trip() {
        let mut ledger = Ledger::new();
        ledger.register(
            ledger_digest(&w8(0xa7), &w8(0x3c)),
            LedgerEntry::new("acme", "dock-3", 1),
        );
        ledger.register(
            ledger_digest(&w8(0x11), &w8(0x22)),
            LedgerEntry::new("globex", "lane-9", 7),
        );
        let mut buf = Vec::new();
        ledger.export(&mut buf).unwrap();
        let back = Ledger::import(io::Cursor::new(buf)).unwrap();
        assert_eq!(back.entries, ledger.entries);
    }

    #[test]
    fn ledger_import_errors_name_the_line() {
        let text = "entry digest=00 owner=a timestamp=1 location=b status=valid permission=1\n";
        let err = Ledger::import(io::Cursor::new(text.as_bytes())).unwrap_err();
        assert!(err.to_string().starts_with("line 1"));
    }

    #[test]
    fn honest_sessions_follow_even_weight_rule() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let mut seen_even = false;
        let mut seen_odd = false;
        for _ in 0..200 {
            let (mut tag, mut node) = provisioned(&mut rng, 96);
            let mut ch = channel_for(96, AdversaryPolicy::passive());
            let run = run_sov_session(0, &mut tag, &mut node, &mut ch, &mut rng, BVariant::XorR)
                .unwrap();
            assert!(run.node_authenticated);
            let even = run.node_nonce.unwrap().wt() % 2 == 0;
            assert_eq!(run.tag_verdict, Some(SovVerdict::Accepted { updated: even }));
            assert_eq!(run.node_updated, even);
            assert!(states_equal(&tag, node.record(0)));
            seen_even |= even;
            seen_odd |= !even;
        }
        assert!(seen_even && seen_odd);
    }

    #[test]
    fn honest_sessions_work_under_xor_q() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        for _ in 0..100 {
            let (mut tag, mut node) = provisioned(&mut rng, 96);
            let mut ch = channel_for(96, AdversaryPolicy::passive());
            let run = run_sov_session(0, &mut tag, &mut node, &mut ch, &mut rng, BVariant::XorQ)
                .unwrap();
            assert!(run.node_authenticated);
            assert!(matches!(run.tag_verdict, Some(SovVerdict::Accepted { .. })));
            assert!(states_equal(&tag, node.record(0)));
        }
    }

    #[test]
    fn xor_q_identification_recovers_the_nonce() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let (mut tag, node) = provisioned(&mut rng, 96);
        let r = Word::random(&mut rng, 96);
        let (reply, q) = tag.respond(r, &mut rng, BVariant::XorQ).unwrap();
        let FrameBody::SovTagReply { a, b } = reply else {
            unreachable!()
        };
        let matched = node.identify(r, a, b, BVariant::XorQ).unwrap();
        assert_eq!(matched.recovered_q, Some(q));
    }

    #[test]
    fn tampered_b_fails_identification() {
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        let (mut tag, node) = provisioned(&mut rng, 8);
        let r = Word::random(&mut rng, 8);
        let (reply, _) = tag.respond(r, &mut rng, BVariant::XorR).unwrap();
        let FrameBody::SovTagReply { a, b } = reply else {
            unreachable!()
        };
        for bit in 0..8 {
            assert_eq!(
                node.identify(r, a, b.flip_bit(bit), BVariant::XorR).unwrap_err(),
                AuthError::NoMatch
            );
        }
        assert!(node.identify(r, a, b, BVariant::XorR).is_ok());
    }

    #[test]
    fn missed_update_matches_old_side() {
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        let mut recovered = 0;
        for trial in 0..50 {
            let (mut tag, mut node) = provisioned(&mut rng, 96);
            // Block the node reply on its way to the reader.
            let mut ch = channel_for(96, AdversaryPolicy::passive().block(0, 3));
            let before = *tag.state();
            let run = run_sov_session(0, &mut tag, &mut node, &mut ch, &mut rng, BVariant::XorR)
                .unwrap();
            assert!(run.node_authenticated);
            assert_eq!(run.tag_verdict, None);
            assert_eq!(tag.state(), &before);
            if !run.node_updated {
                continue; // odd wt(m): nothing to recover from
            }
            let run = run_sov_session(
                trial + 1,
                &mut tag,
                &mut node,
                &mut ch,
                &mut rng,
                BVariant::XorR,
            )
            .unwrap();
            assert!(run.node_authenticated);
            assert_eq!(run.match_side, Some(Side::Old));
            assert!(matches!(run.tag_verdict, Some(SovVerdict::Accepted { .. })));
            if run.node_updated {
                // Even wt(m): both sides rolled forward together.
                assert!(states_equal(&tag, node.record(0)));
            } else {
                // Odd wt(m): no update on either side; the tag stays
                // anchored at the node's old pair.
                assert_eq!(tag.state().new, node.record(0).old);
            }
            recovered += 1;
        }
        assert!(recovered > 10);
    }

    #[test]
    fn identification_picks_the_right_record_in_a_multi_tag_db() {
        let mut rng = ChaCha12Rng::seed_from_u64(45);
        let records: Vec<ProvisionRecord> = (0..4)
            .map(|_| {
                ProvisionRecord::fresh(
                    Word::random(&mut rng, 96),
                    Word::random(&mut rng, 96),
                    Word::random(&mut rng, 96),
                )
            })
            .collect();
        let mut node = SovNode::new();
        for (i, r) in records.iter().enumerate() {
            node.enroll(r, LedgerEntry::new("owner", "site", i as u8));
        }
        for (idx, record) in records.iter().enumerate() {
            let mut tag = SovTag::provision(record);
            let mut ch = channel_for(96, AdversaryPolicy::passive());
            let run = run_sov_session(0, &mut tag, &mut node, &mut ch, &mut rng, BVariant::XorR)
                .unwrap();
            assert!(run.node_authenticated);
            assert!(states_equal(&tag, node.record(idx)));
        }
    }

    #[test]
    fn unenrolled_tag_is_denied() {
        let mut rng = ChaCha12Rng::seed_from_u64(53);
        let (_, mut node) = provisioned(&mut rng, 96);
        let (mut stranger, _) = provisioned(&mut rng, 96);
        let mut ch = channel_for(96, AdversaryPolicy::passive());
        let run =
            run_sov_session(0, &mut stranger, &mut node, &mut ch, &mut rng, BVariant::XorR)
                .unwrap();
        assert!(!run.node_authenticated);
    }

    #[test]
    fn invalidated_history_is_denied() {
        let mut rng = ChaCha12Rng::seed_from_u64(59);
        let (mut tag, mut node) = provisioned(&mut rng, 96);
        let rec = *node.record(0);
        let digest = ledger_digest(&rec.new.ids, &rec.new.key);
        node.ledger_mut().invalidate(&digest);
        let mut ch = channel_for(96, AdversaryPolicy::passive());
        let run = run_sov_session(0, &mut tag, &mut node, &mut ch, &mut rng, BVariant::XorR)
            .unwrap();
        assert!(!run.node_authenticated);
    }

    #[test]
    fn five_failures_kill_the_tag_blocked_frames_do_not() {
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let (mut tag, mut node) = provisioned(&mut rng, 96);

        // A blocked final frame leaves the counter untouched.
        let mut ch = channel_for(96, AdversaryPolicy::passive().block(0, 3));
        run_sov_session(0, &mut tag, &mut node, &mut ch, &mut rng, BVariant::XorR).unwrap();
        assert_eq!(tag.state().fail_count, 0);

        // Four garbage finals: still alive.
        let r = Word::random(&mut rng, 96);
        for i in 0..4 {
            tag.respond(r, &mut rng, BVariant::XorR).unwrap();
            let junk = Word::from_uint(i, 96);
            assert_eq!(
                tag.verify_and_update(junk, junk),
                SovVerdict::Rejected { killed: false }
            );
        }
        assert_eq!(tag.state().fail_count, 4);
        assert!(!tag.state().killed);

        // The fifth kills it; afterwards it answers nothing.
        tag.respond(r, &mut rng, BVariant::XorR).unwrap();
        let junk = Word::from_uint(99, 96);
        assert_eq!(
            tag.verify_and_update(junk, junk),
            SovVerdict::Rejected { killed: true }
        );
        assert!(tag.state().killed);
        assert!(tag.respond(r, &mut rng, BVariant::XorR).is_none());
    }

    #[test]
    fn reader_forwards_unchanged() {
        let mut rng = ChaCha12Rng::seed_from_u64(67);
        let (mut tag, mut node) = provisioned(&mut rng, 96);
        let mut ch = channel_for(96, AdversaryPolicy::passive());
        run_sov_session(0, &mut tag, &mut node, &mut ch, &mut rng, BVariant::XorR).unwrap();
        let frames = &ch.transcript().frames;
        let FrameBody::SovTagReply { a, b } = frames[1].body else {
            panic!("unexpected frame order")
        };
        let FrameBody::SovForwardToNode { r, a: af, b: bf } = frames[2].body else {
            panic!("unexpected frame order")
        };
        assert_eq!((af, bf), (a, b));
        let FrameBody::SovHello { r: r0 } = frames[0].body else {
            panic!("unexpected frame order")
        };
        assert_eq!(r, r0);
        let FrameBody::SovNodeReply { c, d } = frames[3].body else {
            panic!("unexpected frame order")
        };
        let FrameBody::SovForwardToTag { c: cf, d: df } = frames[4].body else {
            panic!("unexpected frame order")
        };
        assert_eq!((cf, df), (c, d));
    }

    #[test]
    fn node_skips_update_on_odd_weight_nonce() {
        let mut rng = ChaCha12Rng::seed_from_u64(71);
        let mut seen = false;
        for _ in 0..50 {
            let (mut tag, mut node) = provisioned(&mut rng, 96);
            let before = *node.record(0);
            let mut ch = channel_for(96, AdversaryPolicy::passive());
            let run = run_sov_session(0, &mut tag, &mut node, &mut ch, &mut rng, BVariant::XorR)
                .unwrap();
            if run.node_nonce.unwrap().wt() % 2 == 1 {
                assert_eq!(*node.record(0), before);
                seen = true;
            }
        }
        assert!(seen);
    }

    #[test]
    fn ledger_retains_old_entry_after_update() {
        let mut rng = ChaCha12Rng::seed_from_u64(73);
        loop {
            let (mut tag, mut node) = provisioned(&mut rng, 96);
            let original = *node.record(0);
            let mut ch = channel_for(96, AdversaryPolicy::passive());
            let run = run_sov_session(0, &mut tag, &mut node, &mut ch, &mut rng, BVariant::XorR)
                .unwrap();
            if !run.node_updated {
                continue;
            }
            let old_digest = ledger_digest(&original.new.ids, &original.new.key);
            let new_digest =
                ledger_digest(&node.record(0).new.ids, &node.record(0).new.key);
            assert!(node.ledger().check(&old_digest));
            assert!(node.ledger().check(&new_digest));
            assert_eq!(node.ledger().len(), 2);
            break;
        }
    }
}
