//! Secret disclosure against KSP.
//!
//! The adversary eavesdrops one session and blocks its final message, so
//! the tag keeps (IDS_new, IDS_old, K) while the reader rolls forward; a
//! second, fully delivered session then reuses the same pseudonyms and key
//! through the reader's old-side record. Two offset searches recover
//! everything:
//!
//! * phase 1 scans (c, c') for `RRot(s,c) ^ RRot(s',c') = T ^ T'`, which
//!   pins q, q', IDS_new and IDS_old;
//! * phase 2 scans (c1, c2, c3) for
//!   `P ^ P' ^ q ^ q' = RRot(Q,c1) ^ RRot(Q',c1) ^ RRot(R,c2) ^ RRot(R',c3)`,
//!   which pins n, n', K, m and m'.
//!
//! Weight filters (`c1 = wt(K)`, `c2 = wt(n) + wt(K^m)`, ... all mod L) and
//! full recomputation of the observed messages reject spurious offsets.
//! With everything disclosed the adversary predicts the post-session
//! update, impersonates either party, and desynchronizes the pair at will.

use rand::RngCore;

use crate::channel::{
    AdversaryPolicy, Channel, Delivery, FrameBody, Protocol, Role, Transcript, TranscriptHeader,
};
use crate::ksp::{self, KspReader, KspSessionRun, KspTag, KspTagState};
use crate::secrets::SecretPair;
use crate::word::Word;

use super::{AttackError, SearchBudget};

/// The words of one eavesdropped session, exactly as they crossed the
/// channel (blocked frames included: the adversary intercepted them).
#[derive(Clone, Copy, Debug)]
pub struct KspSessionView {
    pub challenge: Word,
    pub reply: KspReplyView,
    pub fin: KspFinalView,
}

#[derive(Clone, Copy, Debug)]
pub struct KspReplyView {
    pub s: Word,
    pub t: Word,
    pub u: Word,
}

#[derive(Clone, Copy, Debug)]
pub struct KspFinalView {
    pub p: Word,
    pub q: Word,
    pub r: Word,
}

/// Reads one session's (r, s, T, U, P, Q, R) out of a transcript.
pub fn ksp_session_view(
    transcript: &Transcript,
    session: u64,
) -> Result<KspSessionView, AttackError> {
    let mut challenge = None;
    let mut reply = None;
    let mut fin = None;
    for frame in transcript.session_frames(session) {
        match frame.body {
            FrameBody::KspHello { r } => challenge = Some(r),
            FrameBody::KspTagReply { s, t, u } => reply = Some(KspReplyView { s, t, u }),
            FrameBody::KspReaderFinal { p, q, r } => fin = Some(KspFinalView { p, q, r }),
            _ => {}
        }
    }
    let missing = |kind| AttackError::MissingFrame { session, kind };
    Ok(KspSessionView {
        challenge: challenge.ok_or_else(|| missing("ksp-hello"))?,
        reply: reply.ok_or_else(|| missing("ksp-tag-reply"))?,
        fin: fin.ok_or_else(|| missing("ksp-reader-final"))?,
    })
}

#[derive(Debug)]
pub struct KspCollect {
    pub one: KspSessionView,
    pub two: KspSessionView,
    pub transcript: Transcript,
    /// White-box session traces; for harness ground-truth checks only, the
    /// attack itself consumes nothing but the views above.
    pub runs: [KspSessionRun; 2],
}

/// Runs the collection procedure: session 0 with its final frame blocked,
/// session 1 fully delivered.
pub fn collect_ksp(
    tag: &mut KspTag,
    reader: &mut KspReader,
    rng: &mut impl RngCore,
    bitlen: u16,
    seed: u64,
) -> Result<KspCollect, AttackError> {
    let header = TranscriptHeader {
        protocol: Protocol::Ksp,
        bitlen,
        seed,
    };
    let mut channel = Channel::new(header, AdversaryPolicy::passive().block(0, 2));
    let mut runs = Vec::with_capacity(2);
    for session in 0..2u64 {
        let run = ksp::run_ksp_session(session, tag, reader, &mut channel, rng)?;
        if !run.tag_authenticated {
            return Err(AttackError::SessionAborted {
                session,
                reason: "reader did not authenticate the tag".to_string(),
            });
        }
        runs.push(run);
    }
    let transcript = channel.into_transcript();
    Ok(KspCollect {
        one: ksp_session_view(&transcript, 0)?,
        two: ksp_session_view(&transcript, 1)?,
        transcript,
        runs: [runs[0], runs[1]],
    })
}

/// A phase-1 survivor: offsets plus the secrets they determine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KspPhase1Candidate {
    pub c: u32,
    pub c_prime: u32,
    pub q: Word,
    pub q_prime: Word,
    pub ids_new: Word,
    pub ids_old: Word,
}

/// Scans (c, c') in [0, L)^2. Survivors satisfy the T ^ T' equation, the
/// weight filters wt(q) = c and wt(q') = c' (mod L), and the pseudonym-link
/// filter RRot(U, c) = RRot(U', c').
pub fn ksp_phase1(
    one: &KspSessionView,
    two: &KspSessionView,
    budget: &SearchBudget,
) -> Result<Vec<KspPhase1Candidate>, AttackError> {
    let l = one.challenge.bitlen() as u32;
    let t_link = one.reply.t ^ two.reply.t;
    let rs: Vec<Word> = (0..l).map(|c| one.reply.s.rot_right(c)).collect();
    let rs2: Vec<Word> = (0..l).map(|c| two.reply.s.rot_right(c)).collect();
    let ru: Vec<Word> = (0..l).map(|c| one.reply.u.rot_right(c)).collect();
    let ru2: Vec<Word> = (0..l).map(|c| two.reply.u.rot_right(c)).collect();

    let mut out = Vec::new();
    for c in 0..l {
        budget.check("ksp phase 1")?;
        let q = rs[c as usize] ^ one.challenge;
        if q.wt() % l != c {
            continue;
        }
        for c_prime in 0..l {
            if rs[c as usize] ^ rs2[c_prime as usize] != t_link {
                continue;
            }
            let q_prime = rs2[c_prime as usize] ^ two.challenge;
            if q_prime.wt() % l != c_prime {
                continue;
            }
            if ru[c as usize] != ru2[c_prime as usize] {
                continue;
            }
            let ids_new = one.reply.t ^ rs[c as usize];
            let ids_old = ids_new ^ ru[c as usize];
            out.push(KspPhase1Candidate {
                c,
                c_prime,
                q,
                q_prime,
                ids_new,
                ids_old,
            });
        }
    }
    if out.is_empty() {
        return Err(AttackError::EmptyCandidates { phase: "ksp phase 1" });
    }
    Ok(out)
}

/// A phase-2 survivor for a given phase-1 candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KspPhase2Candidate {
    pub c1: u32,
    pub c2: u32,
    pub c3: u32,
    pub n: Word,
    pub n_prime: Word,
    pub key: Word,
    pub m: Word,
    pub m_prime: Word,
}

/// Scans (c1, c2, c3) in [0, L)^3. Both sessions ran under the same key, so
/// Q and Q' unwind with the same offset c1. Survivors pass the weight
/// filters and reproduce all four observed final-message words.
pub fn ksp_phase2(
    one: &KspSessionView,
    two: &KspSessionView,
    cand: &KspPhase1Candidate,
    budget: &SearchBudget,
) -> Result<Vec<KspPhase2Candidate>, AttackError> {
    let l = one.challenge.bitlen() as u32;
    let lhs = one.fin.p ^ two.fin.p ^ cand.q ^ cand.q_prime;
    let rq: Vec<Word> = (0..l).map(|c| one.fin.q.rot_right(c)).collect();
    let rq2: Vec<Word> = (0..l).map(|c| two.fin.q.rot_right(c)).collect();
    let rr: Vec<Word> = (0..l).map(|c| one.fin.r.rot_right(c)).collect();
    let rr2: Vec<Word> = (0..l).map(|c| two.fin.r.rot_right(c)).collect();

    let mut out = Vec::new();
    for c1 in 0..l {
        budget.check("ksp phase 2")?;
        let n = rq[c1 as usize];
        let n_prime = rq2[c1 as usize];
        let base = lhs ^ n ^ n_prime;
        for c2 in 0..l {
            let want = base ^ rr[c2 as usize];
            for c3 in 0..l {
                if rr2[c3 as usize] != want {
                    continue;
                }
                let m = one.fin.p ^ n ^ cand.q;
                let key = rr[c2 as usize] ^ m;
                let m_prime = two.fin.p ^ n_prime ^ cand.q_prime;
                if key.wt() % l != c1 {
                    continue;
                }
                if (n.wt() + (key ^ m).wt()) % l != c2 {
                    continue;
                }
                if (n_prime.wt() + (key ^ m_prime).wt()) % l != c3 {
                    continue;
                }
                // Reproduce every observed word before accepting.
                let FrameBody::KspReaderFinal { p, q, r } =
                    ksp::reader_final(key, cand.q, m, n)
                else {
                    unreachable!()
                };
                if (p, q, r) != (one.fin.p, one.fin.q, one.fin.r) {
                    continue;
                }
                let FrameBody::KspReaderFinal { p, q, r } =
                    ksp::reader_final(key, cand.q_prime, m_prime, n_prime)
                else {
                    unreachable!()
                };
                if (p, q, r) != (two.fin.p, two.fin.q, two.fin.r) {
                    continue;
                }
                out.push(KspPhase2Candidate {
                    c1,
                    c2,
                    c3,
                    n,
                    n_prime,
                    key,
                    m,
                    m_prime,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(AttackError::EmptyCandidates { phase: "ksp phase 2" });
    }
    Ok(out)
}

/// A fully recovered secret assignment, plus the post-session-2 state it
/// predicts for the tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KspCandidate {
    pub phase1: KspPhase1Candidate,
    pub phase2: KspPhase2Candidate,
    pub predicted: SecretPair,
}

/// Applies the update rule to recovered secrets: the tag finished session
/// 2 with (q', n', m'), so its next pair follows from them.
pub fn ksp_predict_update(p1: &KspPhase1Candidate, p2: &KspPhase2Candidate) -> SecretPair {
    ksp::update_secrets(p1.ids_new, p2.key, p1.q_prime, p2.n_prime, p2.m_prime)
}

/// The whole pipeline: phase 1, phase 2 per survivor, update prediction.
pub fn ksp_disclose(
    one: &KspSessionView,
    two: &KspSessionView,
    budget: &SearchBudget,
) -> Result<Vec<KspCandidate>, AttackError> {
    let mut out = Vec::new();
    for p1 in ksp_phase1(one, two, budget)? {
        match ksp_phase2(one, two, &p1, budget) {
            Ok(p2s) => {
                for p2 in p2s {
                    out.push(KspCandidate {
                        phase1: p1,
                        phase2: p2,
                        predicted: ksp_predict_update(&p1, &p2),
                    });
                }
            }
            Err(AttackError::EmptyCandidates { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(AttackError::EmptyCandidates { phase: "ksp disclosure" });
    }
    Ok(out)
}

/// Tag state as the adversary reconstructed it after disclosure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KspDisclosedState {
    pub old: SecretPair,
    pub new: SecretPair,
}

impl KspDisclosedState {
    /// The state a candidate implies once the tag finished session 2:
    /// the observed pair rolls into `old`, the prediction becomes `new`.
    pub fn from_candidate(cand: &KspCandidate) -> Self {
        KspDisclosedState {
            old: SecretPair::new(cand.phase1.ids_new, cand.phase2.key),
            new: cand.predicted,
        }
    }
}

/// Plays a complete session against an honest reader using nothing but
/// disclosed secrets and a self-chosen nonce. Returns true when the reader
/// authenticates the forgery.
pub fn impersonate_ksp_tag(
    disclosed: &KspDisclosedState,
    reader: &mut KspReader,
    channel: &mut Channel,
    session: u64,
    rng: &mut impl RngCore,
) -> Result<bool, AttackError> {
    let bitlen = channel.bitlen();
    let r = reader.hello(rng, bitlen);
    let hello = channel.send(session, Role::Reader, Role::Adversary, FrameBody::KspHello { r })?;
    let Delivery::Delivered(FrameBody::KspHello { r }) = hello else {
        return Ok(false);
    };

    let mut forged = KspTag::new(KspTagState {
        id: Word::zero(bitlen),
        old: disclosed.old,
        new: disclosed.new,
    });
    let (reply, _) = forged.respond(r, rng);
    let reply = channel.send(session, Role::Adversary, Role::Reader, reply)?;
    let Delivery::Delivered(FrameBody::KspTagReply { s, t, u }) = reply else {
        return Ok(false);
    };

    let Ok(matched) = reader.identify(r, s, t, u) else {
        return Ok(false);
    };
    let (final_msg, _) = reader.finalize(&matched, rng);
    let final_msg = channel.send(session, Role::Reader, Role::Adversary, final_msg)?;
    if let Delivery::Delivered(FrameBody::KspReaderFinal { p, q, r }) = final_msg {
        // Keep the forged state rolling so the impersonation can continue.
        forged.verify_and_update(p, q, r);
    }
    Ok(true)
}

#[derive(Clone, Copy, Debug)]
pub struct KspReaderImpersonation {
    pub tag_accepted: bool,
    /// The pair the adversary drove the tag to; desynchronization means the
    /// tag now answers with a pseudonym no honest reader knows.
    pub forced: SecretPair,
}

/// Challenges the real tag and forges the final message from the disclosed
/// key, steering the tag's update to adversary-chosen values.
pub fn impersonate_ksp_reader(
    disclosed: &KspDisclosedState,
    tag: &mut KspTag,
    channel: &mut Channel,
    session: u64,
    rng: &mut impl RngCore,
) -> Result<KspReaderImpersonation, AttackError> {
    let bitlen = channel.bitlen();
    let r = Word::random(rng, bitlen);
    let outcome = |accepted| KspReaderImpersonation {
        tag_accepted: accepted,
        forced: disclosed.new,
    };

    let hello = channel.send(session, Role::Adversary, Role::Tag, FrameBody::KspHello { r })?;
    let Delivery::Delivered(FrameBody::KspHello { r }) = hello else {
        return Ok(outcome(false));
    };
    let (reply, _) = tag.respond(r, rng);
    let reply = channel.send(session, Role::Tag, Role::Adversary, reply)?;
    let Delivery::Delivered(FrameBody::KspTagReply { t, .. }) = reply else {
        return Ok(outcome(false));
    };

    // The tag masked its nonce with a pseudonym the adversary knows.
    let q = t ^ r ^ disclosed.new.ids;
    let m = Word::random(rng, bitlen);
    let n = Word::random(rng, bitlen);
    let final_msg = ksp::reader_final(disclosed.new.key, q, m, n);
    let forced = ksp::update_secrets(disclosed.new.ids, disclosed.new.key, q, n, m);

    let final_msg = channel.send(session, Role::Adversary, Role::Tag, final_msg)?;
    let Delivery::Delivered(FrameBody::KspReaderFinal { p, q, r }) = final_msg else {
        return Ok(outcome(false));
    };
    let accepted = tag.verify_and_update(p, q, r);
    Ok(KspReaderImpersonation {
        tag_accepted: accepted,
        forced,
    })
}
