//! Secret disclosure against SOVNOKP.
//!
//! Same collection pattern as the KSP attack: block the first session's
//! final message so the tag keeps (IDS, K), then eavesdrop a second full
//! session. Because `RRot(A, wt(q)) ^ RRot(A', wt(q')) = r ^ r'`, a double
//! scan over (i, j) recovers IDS and the nonce weights; the key follows in
//! closed form from B (under the xor-r framing of B), and B', C, C', D, D'
//! filter spurious survivors.
//!
//! The recovered secrets pin the next IDS exactly — the update consumes the
//! tag nonce only through wt(q') = j — but the next key depends on the full
//! nonce, which the messages never determine; predicting it requires the
//! ground-truth nonce and is therefore a white-box check only.

use rand::RngCore;

use crate::channel::{
    AdversaryPolicy, Channel, Delivery, FrameBody, Protocol, Role, Transcript, TranscriptHeader,
};
use crate::secrets::SecretPair;
use crate::sovnokp::{self, BVariant, SovNode, SovSessionRun, SovTag, SovVerdict};
use crate::word::Word;

use super::{AttackError, SearchBudget};

/// One eavesdropped session: challenge, tag reply, node reply.
#[derive(Clone, Copy, Debug)]
pub struct SovSessionView {
    pub challenge: Word,
    pub a: Word,
    pub b: Word,
    pub c: Word,
    pub d: Word,
}

/// Reads one session's (r, A, B, C, D) out of a transcript.
pub fn sov_session_view(
    transcript: &Transcript,
    session: u64,
) -> Result<SovSessionView, AttackError> {
    let mut challenge = None;
    let mut reply = None;
    let mut node_reply = None;
    for frame in transcript.session_frames(session) {
        match frame.body {
            FrameBody::SovHello { r } => challenge = Some(r),
            FrameBody::SovTagReply { a, b } => reply = Some((a, b)),
            FrameBody::SovNodeReply { c, d } => node_reply = Some((c, d)),
            _ => {}
        }
    }
    let missing = |kind| AttackError::MissingFrame { session, kind };
    let (a, b) = reply.ok_or_else(|| missing("sov-tag-reply"))?;
    let (c, d) = node_reply.ok_or_else(|| missing("sov-node-reply"))?;
    Ok(SovSessionView {
        challenge: challenge.ok_or_else(|| missing("sov-hello"))?,
        a,
        b,
        c,
        d,
    })
}

#[derive(Debug)]
pub struct SovCollect {
    pub one: SovSessionView,
    pub two: SovSessionView,
    pub transcript: Transcript,
    /// White-box session traces for harness ground-truth checks only.
    pub runs: [SovSessionRun; 2],
}

/// Runs the collection procedure: the reader-to-tag C||D of session 0 is
/// blocked; session 1 is fully delivered unless `block_second_final` is set
/// (impersonation wants the tag frozen on its current secrets).
pub fn collect_sov(
    tag: &mut SovTag,
    node: &mut SovNode,
    rng: &mut impl RngCore,
    bitlen: u16,
    seed: u64,
    variant: BVariant,
    block_second_final: bool,
) -> Result<SovCollect, AttackError> {
    let header = TranscriptHeader {
        protocol: Protocol::Sovnokp,
        bitlen,
        seed,
    };
    let mut policy = AdversaryPolicy::passive().block(0, 4);
    if block_second_final {
        policy = policy.block(1, 4);
    }
    let mut channel = Channel::new(header, policy);
    let mut runs = Vec::with_capacity(2);
    for session in 0..2u64 {
        let run = sovnokp::run_sov_session(session, tag, node, &mut channel, rng, variant)?;
        if !run.node_authenticated {
            return Err(AttackError::SessionAborted {
                session,
                reason: "node did not authenticate the tag".to_string(),
            });
        }
        runs.push(run);
    }
    let transcript = channel.into_transcript();
    Ok(SovCollect {
        one: sov_session_view(&transcript, 0)?,
        two: sov_session_view(&transcript, 1)?,
        transcript,
        runs: [runs[0], runs[1]],
    })
}

/// A search survivor: offsets (i, j) = (wt(q), wt(q')) mod L and the
/// pseudonym they imply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SovSearchCandidate {
    pub i: u32,
    pub j: u32,
    pub ids: Word,
}

/// Scans (i, j) in [0, L)^2 for `RRot(A, i) ^ RRot(A', j) = r ^ r'`; each
/// survivor determines IDS = RRot(A, i) ^ r (identically from either
/// session, which is the equation being tested).
pub fn sov_search(
    one: &SovSessionView,
    two: &SovSessionView,
    budget: &SearchBudget,
) -> Result<Vec<SovSearchCandidate>, AttackError> {
    let l = one.challenge.bitlen() as u32;
    let link = one.challenge ^ two.challenge;
    let ra: Vec<Word> = (0..l).map(|c| one.a.rot_right(c)).collect();
    let ra2: Vec<Word> = (0..l).map(|c| two.a.rot_right(c)).collect();
    let mut out = Vec::new();
    for i in 0..l {
        budget.check("sov search")?;
        for j in 0..l {
            if ra[i as usize] ^ ra2[j as usize] != link {
                continue;
            }
            out.push(SovSearchCandidate {
                i,
                j,
                ids: ra[i as usize] ^ one.challenge,
            });
        }
    }
    if out.is_empty() {
        return Err(AttackError::EmptyCandidates { phase: "sov search" });
    }
    Ok(out)
}

/// Closed-form key extraction from B, valid under the xor-r framing:
/// `K = RRot(B ^ Rot(IDS, wt(r)), i) ^ r`. Under the xor-q framing the
/// same expression evaluates to K ^ q ^ r instead.
pub fn sov_extract_key(b: Word, ids: Word, r: Word, i: u32) -> Word {
    (b ^ ids.rot_left(r.wt())).rot_right(i) ^ r
}

/// A filtered survivor carrying the extracted key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SovCandidate {
    pub i: u32,
    pub j: u32,
    pub ids: Word,
    pub key: Word,
}

/// Applies the remaining observations: B' must yield the same key, and the
/// nonce recovered from each C must reproduce the matching D.
pub fn sov_filter(
    candidates: &[SovSearchCandidate],
    one: &SovSessionView,
    two: &SovSessionView,
) -> Vec<SovCandidate> {
    let mut out = Vec::new();
    for cand in candidates {
        let key = sov_extract_key(one.b, cand.ids, one.challenge, cand.i);
        if sov_extract_key(two.b, cand.ids, two.challenge, cand.j) != key {
            continue;
        }
        let consistent = [one, two].iter().all(|view| {
            let m = (view.c ^ view.challenge.rot_left(cand.ids.wt() ^ key.wt()))
                .rot_right(key.wt());
            view.d == m.rot_left(cand.ids.wt()) ^ view.challenge.rot_left(key.wt())
        });
        if consistent {
            out.push(SovCandidate {
                i: cand.i,
                j: cand.j,
                ids: cand.ids,
                key,
            });
        }
    }
    out
}

/// Search plus filtering. An empty result is an attack failure on honest
/// xor-r transcripts (and the expected outcome under xor-q, where the key
/// extraction formula does not apply).
pub fn sov_disclose(
    one: &SovSessionView,
    two: &SovSessionView,
    budget: &SearchBudget,
) -> Result<Vec<SovCandidate>, AttackError> {
    let survivors = sov_filter(&sov_search(one, two, budget)?, one, two);
    if survivors.is_empty() {
        return Err(AttackError::EmptyCandidates { phase: "sov filter" });
    }
    Ok(survivors)
}

/// What the adversary can say about the tag's state after session 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SovPrediction {
    /// wt(m') was odd: no update happened, the disclosed pair stands.
    NotUpdated,
    /// The next pseudonym is fully determined; the next key needs the raw
    /// nonce q', which the attack only ever learns as wt(q') = j, so it is
    /// present only when a ground-truth q' was supplied.
    Updated { ids: Word, key: Option<Word> },
}

/// Predicts the tag's post-session-2 state from a candidate. `true_q_prime`
/// enables the white-box key half of the prediction.
pub fn sov_predict_update(
    cand: &SovCandidate,
    two: &SovSessionView,
    true_q_prime: Option<Word>,
) -> SovPrediction {
    let r = two.challenge;
    let m = (two.c ^ r.rot_left(cand.ids.wt() ^ cand.key.wt())).rot_right(cand.key.wt());
    if !m.wt().is_multiple_of(2) {
        return SovPrediction::NotUpdated;
    }
    let weight = Word::from_uint(cand.j as u64, cand.ids.bitlen());
    let ids = (cand.ids ^ cand.key).rot_left(r.wt()) ^ (cand.key ^ weight).rot_left(cand.ids.wt());
    let key = true_q_prime
        .map(|q| cand.key.rot_left(r.wt()) ^ (r ^ q).rot_left(cand.key.wt()));
    SovPrediction::Updated { ids, key }
}

/// Answers a node-driven session using disclosed (IDS, K) and a self-chosen
/// nonce. Returns true when the node authenticates the forgery, including
/// the ledger check.
pub fn impersonate_sov_tag(
    disclosed: &SecretPair,
    node: &mut SovNode,
    channel: &mut Channel,
    session: u64,
    variant: BVariant,
    rng: &mut impl RngCore,
) -> Result<bool, AttackError> {
    let bitlen = channel.bitlen();
    let r = Word::random(rng, bitlen);
    let hello = channel.send(session, Role::Reader, Role::Adversary, FrameBody::SovHello { r })?;
    let Delivery::Delivered(FrameBody::SovHello { r }) = hello else {
        return Ok(false);
    };

    let q = Word::random(rng, bitlen);
    let reply = sovnokp::tag_reply(disclosed.ids, disclosed.key, q, r, variant);
    let reply = channel.send(session, Role::Adversary, Role::Reader, reply)?;
    let Delivery::Delivered(FrameBody::SovTagReply { a, b }) = reply else {
        return Ok(false);
    };
    let forwarded = channel.send(
        session,
        Role::Reader,
        Role::Node,
        FrameBody::SovForwardToNode { r, a, b },
    )?;
    let Delivery::Delivered(FrameBody::SovForwardToNode { r, a, b }) = forwarded else {
        return Ok(false);
    };

    let Ok(matched) = node.identify(r, a, b, variant) else {
        return Ok(false);
    };
    if !node.authorize(&matched) {
        return Ok(false);
    }
    let q_for_update = matched.recovered_q.unwrap_or(q);
    let (reply, _) = node.respond(&matched, r, q_for_update, rng);
    channel.send(session, Role::Node, Role::Reader, reply)?;
    Ok(true)
}

#[derive(Clone, Copy, Debug)]
pub struct SovNodeImpersonation {
    pub tag_accepted: bool,
    pub tag_updated: bool,
    /// The pseudonym the tag moves to when it updates; predictable because
    /// the update consumes the tag nonce only through its weight, read off
    /// the forged session's A.
    pub forced_ids: Option<Word>,
}

/// Plays reader and node toward the real tag using disclosed (IDS, K).
/// With an even-weight nonce the tag updates to values no honest node
/// knows, desynchronizing it.
pub fn impersonate_sov_node(
    disclosed: &SecretPair,
    tag: &mut SovTag,
    channel: &mut Channel,
    session: u64,
    variant: BVariant,
    force_even_nonce: bool,
    rng: &mut impl RngCore,
) -> Result<SovNodeImpersonation, AttackError> {
    let bitlen = channel.bitlen();
    let r = Word::random(rng, bitlen);
    let rejected = SovNodeImpersonation {
        tag_accepted: false,
        tag_updated: false,
        forced_ids: None,
    };

    let hello = channel.send(session, Role::Adversary, Role::Tag, FrameBody::SovHello { r })?;
    let Delivery::Delivered(FrameBody::SovHello { r }) = hello else {
        return Ok(rejected);
    };
    let Some((reply, _)) = tag.respond(r, rng, variant) else {
        return Ok(rejected);
    };
    let reply = channel.send(session, Role::Tag, Role::Adversary, reply)?;
    let Delivery::Delivered(FrameBody::SovTagReply { a, .. }) = reply else {
        return Ok(rejected);
    };

    let mut m = Word::random(rng, bitlen);
    if force_even_nonce {
        while !m.wt().is_multiple_of(2) {
            m = Word::random(rng, bitlen);
        }
    }
    let final_msg = sovnokp::node_reply(disclosed.ids, disclosed.key, r, m);
    let final_msg = channel.send(session, Role::Adversary, Role::Tag, final_msg)?;
    let Delivery::Delivered(FrameBody::SovNodeReply { c, d }) = final_msg else {
        return Ok(rejected);
    };
    let verdict = tag.verify_and_update(c, d);
    let updated = verdict == SovVerdict::Accepted { updated: true };

    // wt(q) mod L falls out of A; with it the adversary knows exactly which
    // pseudonym it forced the tag onto.
    let forced_ids = if updated {
        let l = bitlen as u32;
        (0..l)
            .find(|&i| a.rot_right(i) == disclosed.ids ^ r)
            .map(|i| {
                let weight = Word::from_uint(i as u64, bitlen);
                (disclosed.ids ^ disclosed.key).rot_left(r.wt())
                    ^ (disclosed.key ^ weight).rot_left(disclosed.ids.wt())
            })
    } else {
        None
    };
    Ok(SovNodeImpersonation {
        tag_accepted: matches!(verdict, SovVerdict::Accepted { .. }),
        tag_updated: updated,
        forced_ids,
    })
}
