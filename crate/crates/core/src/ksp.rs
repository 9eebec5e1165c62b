//! Executable KSP roles: a tag, a reader backed by a multi-tag database,
//! and a session driver that runs the three-message mutual authentication
//! over the simulated channel.
//!
//! Message layer (all words L bits, `wt` = Hamming weight, `Rot` = left
//! rotation mod L):
//!
//! ```text
//! reader -> tag : Hello, r
//! tag    -> reader : s = Rot(q^r, wt(q)),  T = IDS_new^r^q,
//!                    U = Rot(IDS_old^IDS_new, wt(q))
//! reader -> tag : P = m^n^q,  Q = Rot(n, wt(K)),
//!                 R = Rot(Rot(K^m, wt(n)), wt(K^m))
//! ```
//!
//! after which both sides shift `new` into `old` and derive the next pair
//! from (q, n, m). The reader updates as soon as it transmits; the old-side
//! pair is the anchor that lets a tag which missed the final message
//! authenticate again.

use rand::RngCore;
use thiserror::Error;

use crate::channel::{Channel, ChannelError, Delivery, FrameBody, Role};
use crate::secrets::{ProvisionRecord, SecretPair, Side};
use crate::word::Word;

/// The pseudonym/key update both sides apply after a successful session.
pub fn update_secrets(ids: Word, key: Word, q: Word, n: Word, m: Word) -> SecretPair {
    SecretPair {
        ids: (ids ^ q).rot_left(n.wt()) ^ q.rot_left(m.wt()),
        key: (key ^ q ^ n).rot_left(m.wt()) ^ m.rot_left(n.wt()),
    }
}

pub(crate) fn tag_reply(old_ids: Word, new_ids: Word, q: Word, r: Word) -> FrameBody {
    FrameBody::KspTagReply {
        s: (q ^ r).rot_left(q.wt()),
        t: new_ids ^ r ^ q,
        u: (old_ids ^ new_ids).rot_left(q.wt()),
    }
}

pub(crate) fn reader_final(key: Word, q: Word, m: Word, n: Word) -> FrameBody {
    let km = key ^ m;
    FrameBody::KspReaderFinal {
        p: m ^ n ^ q,
        q: n.rot_left(key.wt()),
        r: km.rot_left(n.wt()).rot_left(km.wt()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KspTagState {
    pub id: Word,
    pub old: SecretPair,
    pub new: SecretPair,
}

/// Tag-side state machine. Holds the nonce of the session in flight so the
/// final message can be verified against it.
#[derive(Clone, Debug)]
pub struct KspTag {
    state: KspTagState,
    pending: Option<PendingSession>,
}

#[derive(Clone, Copy, Debug)]
struct PendingSession {
    q: Word,
}

impl KspTag {
    pub fn new(state: KspTagState) -> Self {
        KspTag {
            state,
            pending: None,
        }
    }

    /// A freshly enrolled tag: old and new pairs coincide.
    pub fn provision(record: &ProvisionRecord) -> Self {
        KspTag::new(KspTagState {
            id: record.id,
            old: record.old,
            new: record.new,
        })
    }

    pub fn state(&self) -> &KspTagState {
        &self.state
    }

    /// Answers a challenge. Also returns the fresh nonce `q` so a harness
    /// can check recovered secrets against ground truth; the protocol keeps
    /// it private.
    pub fn respond(&mut self, r: Word, rng: &mut impl RngCore) -> (FrameBody, Word) {
        let q = Word::random(rng, r.bitlen());
        self.pending = Some(PendingSession { q });
        (tag_reply(self.state.old.ids, self.state.new.ids, q, r), q)
    }

    /// Verifies the reader's final message and, on success, rolls the
    /// secrets forward. A mismatch leaves the state untouched.
    pub fn verify_and_update(&mut self, p: Word, q_msg: Word, r_msg: Word) -> bool {
        let Some(pending) = self.pending else {
            return false;
        };
        let key = self.state.new.key;
        let n = q_msg.rot_right(key.wt());
        let m = p ^ n ^ pending.q;
        let km = key ^ m;
        if km.rot_left(n.wt()).rot_left(km.wt()) != r_msg {
            return false;
        }
        self.pending = None;
        self.state.old = self.state.new;
        self.state.new = update_secrets(self.state.old.ids, key, pending.q, n, m);
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KspReaderRecord {
    pub tag_id: Word,
    pub old: SecretPair,
    pub new: SecretPair,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthError {
    #[error("no database record matches the reply")]
    NoMatch,
    #[error("reply matches more than one database record")]
    Ambiguous,
}

/// A successful identification: which record and side matched, the offset
/// (wt(q) mod L) that matched, and the recovered tag nonce.
#[derive(Clone, Copy, Debug)]
pub struct KspMatch {
    pub record: usize,
    pub side: Side,
    pub offset: u32,
    pub q: Word,
}

/// Reader with a database of enrolled tags.
#[derive(Clone, Debug, Default)]
pub struct KspReader {
    db: Vec<KspReaderRecord>,
}

impl KspReader {
    pub fn new() -> Self {
        KspReader::default()
    }

    pub fn enroll(&mut self, record: &ProvisionRecord) {
        self.db.push(KspReaderRecord {
            tag_id: record.id,
            old: record.old,
            new: record.new,
        });
    }

    pub fn records(&self) -> &[KspReaderRecord] {
        &self.db
    }

    pub fn record(&self, idx: usize) -> &KspReaderRecord {
        &self.db[idx]
    }

    pub fn hello(&self, rng: &mut impl RngCore, bitlen: u16) -> Word {
        Word::random(rng, bitlen)
    }

    /// Exhaustive search over the rotation offset: for each candidate
    /// c in [0, L), recover q = RRot(s, c) ^ r, keep c only when
    /// wt(q) = c (mod L), and look the unmasked pseudonym T ^ r ^ q up on
    /// both sides of every record. A new-side hit must also reproduce U
    /// from the record's own pair; on an old-side hit the reader no longer
    /// holds the tag's previous pseudonym, so U serves to recover it
    /// rather than as a check.
    pub fn identify(&self, r: Word, s: Word, t: Word, u: Word) -> Result<KspMatch, AuthError> {
        let l = r.bitlen() as u32;
        let mut hits: Vec<KspMatch> = Vec::new();
        for c in 0..l {
            let q = s.rot_right(c) ^ r;
            if q.wt() % l != c {
                continue;
            }
            let ids = t ^ r ^ q;
            for (idx, rec) in self.db.iter().enumerate() {
                if ids == rec.new.ids && u == (rec.old.ids ^ rec.new.ids).rot_left(c) {
                    hits.push(KspMatch {
                        record: idx,
                        side: Side::New,
                        offset: c,
                        q,
                    });
                } else if ids == rec.old.ids {
                    hits.push(KspMatch {
                        record: idx,
                        side: Side::Old,
                        offset: c,
                        q,
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
        // Prefer the new side, then the lowest offset.
        hits.sort_by_key(|h| (h.side == Side::Old, h.offset));
        Ok(hits[0])
    }

    /// Builds the final message from the matched key pair and immediately
    /// rolls the record forward (the reader cannot observe tag receipt).
    /// Returns the message plus the reader nonces (m, n) for the harness.
    pub fn finalize(
        &mut self,
        matched: &KspMatch,
        rng: &mut impl RngCore,
    ) -> (FrameBody, (Word, Word)) {
        let rec = &self.db[matched.record];
        let pair = match matched.side {
            Side::New => rec.new,
            Side::Old => rec.old,
        };
        let bitlen = pair.ids.bitlen();
        let m = Word::random(rng, bitlen);
        let n = Word::random(rng, bitlen);
        let body = reader_final(pair.key, matched.q, m, n);
        let rec = &mut self.db[matched.record];
        rec.old = pair;
        rec.new = update_secrets(pair.ids, pair.key, matched.q, n, m);
        (body, (m, n))
    }
}

/// Everything a driver run exposes: the channel carries the protocol view,
/// this struct carries the white-box view (session nonces, verdicts) used
/// by harness-side ground-truth checks.
#[derive(Clone, Copy, Debug)]
pub struct KspSessionRun {
    pub challenge: Option<Word>,
    pub tag_authenticated: bool,
    pub match_side: Option<Side>,
    /// None when the final frame never reached the tag.
    pub tag_accepted: Option<bool>,
    pub tag_nonce: Option<Word>,
    pub reader_nonces: Option<(Word, Word)>,
}

/// Drives one KSP session over the channel. Blocked frames end the session
/// at that point, exactly as an over-the-air drop would.
pub fn run_ksp_session(
    session: u64,
    tag: &mut KspTag,
    reader: &mut KspReader,
    channel: &mut Channel,
    rng: &mut impl RngCore,
) -> Result<KspSessionRun, ChannelError> {
    let mut run = KspSessionRun {
        challenge: None,
        tag_authenticated: false,
        match_side: None,
        tag_accepted: None,
        tag_nonce: None,
        reader_nonces: None,
    };

    let r = reader.hello(rng, channel.bitlen());
    run.challenge = Some(r);
    let hello = channel.send(session, Role::Reader, Role::Tag, FrameBody::KspHello { r })?;
    let Delivery::Delivered(FrameBody::KspHello { r: r_seen }) = hello else {
        return Ok(run);
    };

    let (reply, q) = tag.respond(r_seen, rng);
    run.tag_nonce = Some(q);
    let reply = channel.send(session, Role::Tag, Role::Reader, reply)?;
    let Delivery::Delivered(FrameBody::KspTagReply { s, t, u }) = reply else {
        return Ok(run);
    };

    let matched = match reader.identify(r, s, t, u) {
        Ok(m) => m,
        Err(_) => return Ok(run),
    };
    run.tag_authenticated = true;
    run.match_side = Some(matched.side);

    let (final_msg, nonces) = reader.finalize(&matched, rng);
    run.reader_nonces = Some(nonces);
    let final_msg = channel.send(session, Role::Reader, Role::Tag, final_msg)?;
    let Delivery::Delivered(FrameBody::KspReaderFinal { p, q, r }) = final_msg else {
        return Ok(run);
    };

    run.tag_accepted = Some(tag.verify_and_update(p, q, r));
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

    fn fresh_pair(rng: &mut ChaCha12Rng, bitlen: u16) -> (KspTag, KspReader) {
        let record = ProvisionRecord::fresh(
            Word::random(rng, bitlen),
            Word::random(rng, bitlen),
            Word::random(rng, bitlen),
        );
        let tag = KspTag::provision(&record);
        let mut reader = KspReader::new();
        reader.enroll(&record);
        (tag, reader)
    }

    fn channel_for(bitlen: u16, policy: AdversaryPolicy) -> Channel {
        Channel::new(
            TranscriptHeader {
                protocol: Protocol::Ksp,
                bitlen,
                seed: 0,
            },
            policy,
        )
    }

    fn states_equal(tag: &KspTag, rec: &KspReaderRecord) -> bool {
        tag.state().old == rec.old && tag.state().new == rec.new
    }

    // Golden values cross-checked against an independent integer-arithmetic
    // implementation of the same message equations.
    #[test]
    fn golden_tag_reply() {
        let body = tag_reply(w8(0x5a), w8(0xc3), w8(0xb5), w8(0x2f));
        assert_eq!(
            body,
            FrameBody::KspTagReply {
                s: w8(0x53),
                t: w8(0x59),
                u: w8(0x33),
            }
        );
    }

    #[test]
    fn golden_reader_final() {
        let body = reader_final(w8(0x7e), w8(0xb5), w8(0x69), w8(0xd2));
        assert_eq!(
            body,
            FrameBody::KspReaderFinal {
                p: w8(0x0e),
                q: w8(0xb4),
                r: w8(0x17),
            }
        );
    }

    #[test]
    fn golden_update() {
        let next = update_secrets(w8(0xc3), w8(0x7e), w8(0xb5), w8(0xd2), w8(0x69));
        assert_eq!(next, SecretPair::new(w8(0x3c), w8(0x07)));
    }

    #[test]
    fn tag_reply_degenerate_cases() {
        // Equal pseudonyms make U vanish regardless of q.
        let body = tag_reply(w8(0x77), w8(0x77), w8(0xb5), w8(0x2f));
        let FrameBody::KspTagReply { u, .. } = body else {
            unreachable!()
        };
        assert!(u.is_zero());
        // q = 0: all rotations are identity.
        let body = tag_reply(w8(0x5a), w8(0xc3), w8(0x00), w8(0x2f));
        assert_eq!(
            body,
            FrameBody::KspTagReply {
                s: w8(0x2f),
                t: w8(0xc3) ^ w8(0x2f),
                u: w8(0x5a) ^ w8(0xc3),
            }
        );
    }

    #[test]
    fn reader_final_zero_nonces() {
        let key = w8(0x7e);
        let q = w8(0xb5);
        let body = reader_final(key, q, w8(0), w8(0));
        assert_eq!(
            body,
            FrameBody::KspReaderFinal {
                p: q,
                q: w8(0),
                r: key.rot_left(key.wt()),
            }
        );
    }

    #[test]
    fn update_with_zero_inputs_is_identity() {
        let pair = update_secrets(w8(0xc3), w8(0x7e), w8(0), w8(0), w8(0));
        assert_eq!(pair, SecretPair::new(w8(0xc3), w8(0x7e)));
    }

    #[test]
    fn honest_sessions_synchronize() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (mut tag, mut reader) = fresh_pair(&mut rng, 96);
            let mut ch = channel_for(96, AdversaryPolicy::passive());
            for session in 0..2 {
                let run =
                    run_ksp_session(session, &mut tag, &mut reader, &mut ch, &mut rng).unwrap();
                assert!(run.tag_authenticated);
                assert_eq!(run.tag_accepted, Some(true));
                assert!(states_equal(&tag, reader.record(0)));
            }
        }
    }

    #[test]
    fn identification_is_sound_exhaustively_at_l4() {
        // Single-tag database, every possible nonce value.
        let record = ProvisionRecord::fresh(
            Word::from_uint(1, 4),
            Word::from_uint(0x9, 4),
            Word::from_uint(0x4, 4),
        );
        let mut reader = KspReader::new();
        reader.enroll(&record);
        for q in 0..16u64 {
            for r in 0..16u64 {
                let (q, r) = (Word::from_uint(q, 4), Word::from_uint(r, 4));
                let FrameBody::KspTagReply { s, t, u } =
                    tag_reply(record.old.ids, record.new.ids, q, r)
                else {
                    unreachable!()
                };
                let matched = reader.identify(r, s, t, u).unwrap();
                assert_eq!(matched.record, 0);
                assert_eq!(matched.q, q);
            }
        }
    }

    #[test]
    fn identification_picks_the_right_record_in_a_multi_tag_db() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let records: Vec<ProvisionRecord> = (0..4)
            .map(|_| {
                ProvisionRecord::fresh(
                    Word::random(&mut rng, 96),
                    Word::random(&mut rng, 96),
                    Word::random(&mut rng, 96),
                )
            })
            .collect();
        let mut reader = KspReader::new();
        for r in &records {
            reader.enroll(r);
        }
        for (idx, record) in records.iter().enumerate() {
            let mut tag = KspTag::provision(record);
            for _ in 0..2 {
                let r = reader.hello(&mut rng, 96);
                let (reply, _) = tag.respond(r, &mut rng);
                let FrameBody::KspTagReply { s, t, u } = reply else {
                    unreachable!()
                };
                let matched = reader.identify(r, s, t, u).unwrap();
                assert_eq!(matched.record, idx);
                let (body, _) = reader.finalize(&matched, &mut rng);
                let FrameBody::KspReaderFinal { p, q, r } = body else {
                    unreachable!()
                };
                assert!(tag.verify_and_update(p, q, r));
            }
        }
    }

    #[test]
    fn unknown_tag_fails_identification() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let (_, mut reader) = fresh_pair(&mut rng, 96);
        let (mut stranger, _) = fresh_pair(&mut rng, 96);
        let mut ch = channel_for(96, AdversaryPolicy::passive());
        let run = run_ksp_session(0, &mut stranger, &mut reader, &mut ch, &mut rng).unwrap();
        assert!(!run.tag_authenticated);
        assert_eq!(run.tag_accepted, None);
    }

    #[test]
    fn desync_recovery_via_old_side() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..50 {
            let (mut tag, mut reader) = fresh_pair(&mut rng, 96);
            // Block the final frame: reader updates, tag does not.
            let mut ch = channel_for(96, AdversaryPolicy::passive().block(0, 2));
            let before = *tag.state();
            let run = run_ksp_session(0, &mut tag, &mut reader, &mut ch, &mut rng).unwrap();
            assert!(run.tag_authenticated);
            assert_eq!(run.tag_accepted, None);
            assert_eq!(*tag.state(), before);
            assert!(!states_equal(&tag, reader.record(0)));

            // Next honest session matches on the old side and resyncs.
            let run = run_ksp_session(1, &mut tag, &mut reader, &mut ch, &mut rng).unwrap();
            assert_eq!(run.match_side, Some(Side::Old));
            assert_eq!(run.tag_accepted, Some(true));
            assert!(states_equal(&tag, reader.record(0)));
        }
    }

    #[test]
    fn reader_updates_on_every_finalize() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        for _ in 0..100 {
            let (mut tag, mut reader) = fresh_pair(&mut rng, 96);
            let before = *reader.record(0);
            let mut ch = channel_for(96, AdversaryPolicy::passive());
            run_ksp_session(0, &mut tag, &mut reader, &mut ch, &mut rng).unwrap();
            let after = reader.record(0);
            assert_ne!(before.new.ids, after.new.ids);
            assert_ne!(before.new.key, after.new.key);
        }
    }

    #[test]
    fn flipped_final_bit_is_rejected_everywhere() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let record = ProvisionRecord::fresh(
            Word::random(&mut rng, 8),
            Word::random(&mut rng, 8),
            Word::random(&mut rng, 8),
        );
        let mut reader = KspReader::new();
        reader.enroll(&record);
        for bit in 0..8 {
            let mut tag = KspTag::provision(&record);
            let mut local = reader.clone();
            let r = local.hello(&mut rng, 8);
            let (reply, _) = tag.respond(r, &mut rng);
            let FrameBody::KspTagReply { s, t, u } = reply else {
                unreachable!()
            };
            let matched = local.identify(r, s, t, u).unwrap();
            let (body, _) = local.finalize(&matched, &mut rng);
            let FrameBody::KspReaderFinal { p, q, r: rm } = body else {
                unreachable!()
            };
            let before = *tag.state();
            assert!(!tag.verify_and_update(p, q, rm.flip_bit(bit)));
            assert_eq!(*tag.state(), before);
            // The untampered frame is still accepted afterwards.
            assert!(tag.verify_and_update(p, q, rm));
        }
    }

    #[test]
    fn challenges_are_distinct() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let reader = KspReader::new();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..1000 {
            assert!(seen.insert(reader.hello(&mut rng, 96)));
        }
    }

    #[test]
    fn channel_modify_on_final_frame_is_rejected_by_the_tag() {
        use crate::channel::Action;
        use std::collections::BTreeMap;

        // First pass: record the final message of a deterministic session.
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let (mut tag, mut reader) = fresh_pair(&mut rng, 96);
        let (probe_tag, probe_reader) = (tag.clone(), reader.clone());
        let mut probe_rng = rng.clone();
        let mut ch = channel_for(96, AdversaryPolicy::passive());
        let run = {
            let (mut t, mut r) = (probe_tag, probe_reader);
            run_ksp_session(0, &mut t, &mut r, &mut ch, &mut probe_rng).unwrap()
        };
        assert_eq!(run.tag_accepted, Some(true));
        let FrameBody::KspReaderFinal { r: r_msg, .. } = ch.transcript().frames[2].body else {
            panic!("unexpected frame order")
        };

        // Second pass, same seeds: flip one bit of R in flight.
        let mut replacement = BTreeMap::new();
        replacement.insert("r".to_string(), r_msg.flip_bit(40));
        let policy = AdversaryPolicy::passive().with(0, 2, Action::Modify(replacement));
        let mut ch = channel_for(96, policy);
        let before = *tag.state();
        let run = run_ksp_session(0, &mut tag, &mut reader, &mut ch, &mut rng).unwrap();
        assert_eq!(run.tag_accepted, Some(false));
        assert_eq!(*tag.state(), before);
        assert!(ch.transcript().frames[2].modified);
    }

    #[test]
    fn replayed_final_frame_is_rejected() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let (mut tag, mut reader) = fresh_pair(&mut rng, 96);
        // Session 1, recorded in full.
        let r = reader.hello(&mut rng, 96);
        let (reply, _) = tag.respond(r, &mut rng);
        let FrameBody::KspTagReply { s, t, u } = reply else {
            unreachable!()
        };
        let matched = reader.identify(r, s, t, u).unwrap();
        let (old_final, _) = reader.finalize(&matched, &mut rng);
        let FrameBody::KspReaderFinal { p, q, r: rm } = old_final else {
            unreachable!()
        };
        assert!(tag.verify_and_update(p, q, rm));
        // Session 2 with a fresh tag nonce: the replay fails the R check.
        let r2 = reader.hello(&mut rng, 96);
        let _ = tag.respond(r2, &mut rng);
        let before = *tag.state();
        assert!(!tag.verify_and_update(p, q, rm));
        assert_eq!(*tag.state(), before);
    }
}
