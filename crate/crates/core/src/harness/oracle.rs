//! Exhaustive consistent-secret enumeration at small word lengths,
//! deliberately written over plain integers rather than [`crate::word::Word`]
//! so the attack implementations are checked against a second, independent
//! route through the same equations.

use std::collections::BTreeSet;

use crate::attacks::ksp::KspSessionView;
use crate::attacks::sovnokp::SovSessionView;
use crate::sovnokp::BVariant;
use crate::word::Word;

/// Largest length for which the exhaustive search stays cheap.
pub const MAX_ORACLE_BITLEN: u16 = 12;

fn mask(l: u32) -> u32 {
    (1u32 << l) - 1
}

fn wt(x: u32) -> u32 {
    x.count_ones()
}

fn rotl(x: u32, k: u32, l: u32) -> u32 {
    let k = k % l;
    if k == 0 {
        x
    } else {
        ((x << k) | (x >> (l - k))) & mask(l)
    }
}

fn rotr(x: u32, k: u32, l: u32) -> u32 {
    rotl(x, l - (k % l), l)
}

fn narrow(w: Word) -> u32 {
    w.try_to_u64().expect("oracle words fit in u64") as u32
}

/// One KSP session as small integers.
#[derive(Clone, Copy, Debug)]
pub struct TinyKspSession {
    pub r: u32,
    pub s: u32,
    pub t: u32,
    pub u: u32,
    pub fp: u32,
    pub fq: u32,
    pub fr: u32,
}

impl From<&KspSessionView> for TinyKspSession {
    fn from(v: &KspSessionView) -> Self {
        TinyKspSession {
            r: narrow(v.challenge),
            s: narrow(v.reply.s),
            t: narrow(v.reply.t),
            u: narrow(v.reply.u),
            fp: narrow(v.fin.p),
            fq: narrow(v.fin.q),
            fr: narrow(v.fin.r),
        }
    }
}

/// All (q, q', IDS_new, IDS_old) consistent with both tag replies. The
/// nonces are enumerated exhaustively; the pseudonyms are forced by T and U
/// once a nonce is fixed, which covers the full four-word space.
pub fn ksp_consistent_phase1(
    one: &TinyKspSession,
    two: &TinyKspSession,
    l: u32,
) -> BTreeSet<(u32, u32, u32, u32)> {
    let mut out = BTreeSet::new();
    for q in 0..=mask(l) {
        if rotl(q ^ one.r, wt(q), l) != one.s {
            continue;
        }
        let ids_new = one.t ^ one.r ^ q;
        let ids_old = ids_new ^ rotr(one.u, wt(q), l);
        for q2 in 0..=mask(l) {
            if rotl(q2 ^ two.r, wt(q2), l) != two.s {
                continue;
            }
            if two.t != ids_new ^ two.r ^ q2 {
                continue;
            }
            if two.u != rotl(ids_old ^ ids_new, wt(q2), l) {
                continue;
            }
            out.insert((q, q2, ids_new, ids_old));
        }
    }
    out
}

/// (q, q', IDS_new, IDS_old, n, n', K, m, m') as small integers.
pub type KspSecretTuple = (u32, u32, u32, u32, u32, u32, u32, u32, u32);

/// All secret tuples consistent with all fourteen observed words. For each
/// phase-1 survivor, (n, K) pairs are enumerated with m forced by P, then
/// (n', m') likewise against session 2.
pub fn ksp_consistent_full(
    one: &TinyKspSession,
    two: &TinyKspSession,
    l: u32,
) -> BTreeSet<KspSecretTuple> {
    let mut out = BTreeSet::new();
    for (q, q2, ids_new, ids_old) in ksp_consistent_phase1(one, two, l) {
        for n in 0..=mask(l) {
            for k in 0..=mask(l) {
                if one.fq != rotl(n, wt(k), l) {
                    continue;
                }
                let m = one.fp ^ n ^ q;
                let km = k ^ m;
                if one.fr != rotl(rotl(km, wt(n), l), wt(km), l) {
                    continue;
                }
                for n2 in 0..=mask(l) {
                    if two.fq != rotl(n2, wt(k), l) {
                        continue;
                    }
                    let m2 = two.fp ^ n2 ^ q2;
                    let km2 = k ^ m2;
                    if two.fr != rotl(rotl(km2, wt(n2), l), wt(km2), l) {
                        continue;
                    }
                    out.insert((q, q2, ids_new, ids_old, n, n2, k, m, m2));
                }
            }
        }
    }
    out
}

/// One SOVNOKP session as small integers.
#[derive(Clone, Copy, Debug)]
pub struct TinySovSession {
    pub r: u32,
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub d: u32,
}

impl From<&SovSessionView> for TinySovSession {
    fn from(v: &SovSessionView) -> Self {
        TinySovSession {
            r: narrow(v.challenge),
            a: narrow(v.a),
            b: narrow(v.b),
            c: narrow(v.c),
            d: narrow(v.d),
        }
    }
}

/// All (wt(q) mod L, wt(q') mod L, IDS) consistent with both A words,
/// enumerating pseudonyms and nonces exhaustively.
pub fn sov_consistent_search(
    one: &TinySovSession,
    two: &TinySovSession,
    l: u32,
) -> BTreeSet<(u32, u32, u32)> {
    let mut out = BTreeSet::new();
    for ids in 0..=mask(l) {
        for q in 0..=mask(l) {
            if rotl(ids ^ one.r, wt(q), l) != one.a {
                continue;
            }
            for q2 in 0..=mask(l) {
                if rotl(ids ^ two.r, wt(q2), l) == two.a {
                    out.insert((wt(q) % l, wt(q2) % l, ids));
                }
            }
        }
    }
    out
}

/// All (wt(q) mod L, wt(q') mod L, IDS, K) consistent with every observed
/// word, the key being forced by B once (IDS, q) is fixed.
pub fn sov_consistent_full(
    one: &TinySovSession,
    two: &TinySovSession,
    l: u32,
    variant: BVariant,
) -> BTreeSet<(u32, u32, u32, u32)> {
    let mut out = BTreeSet::new();
    for ids in 0..=mask(l) {
        for q in 0..=mask(l) {
            if rotl(ids ^ one.r, wt(q), l) != one.a {
                continue;
            }
            let unmasked = rotr(one.b ^ rotl(ids, wt(one.r), l), wt(q), l);
            let k = match variant {
                BVariant::XorR => unmasked ^ one.r,
                BVariant::XorQ => unmasked ^ q,
            };
            let replies_match = |r: u32, a: u32, b: u32, q: u32| {
                let masked = match variant {
                    BVariant::XorR => k ^ r,
                    BVariant::XorQ => k ^ q,
                };
                a == rotl(ids ^ r, wt(q), l)
                    && b == rotl(ids, wt(r), l) ^ rotl(masked, wt(q), l)
            };
            if !replies_match(one.r, one.a, one.b, q) {
                continue;
            }
            let finals_match = [one, two].iter().all(|s| {
                let m = rotr(s.c ^ rotl(s.r, wt(ids) ^ wt(k), l), wt(k), l);
                s.d == rotl(m, wt(ids), l) ^ rotl(s.r, wt(k), l)
            });
            if !finals_match {
                continue;
            }
            for q2 in 0..=mask(l) {
                if replies_match(two.r, two.a, two.b, q2) {
                    out.insert((wt(q) % l, wt(q2) % l, ids, k));
                }
            }
        }
    }
    out
}

/// Word-level bit operations checked against this module's integer
/// arithmetic, exhaustively over all values and a span of amounts.
pub fn word_ops_agree_exhaustively(l: u32) -> Result<(), String> {
    for v in 0..=mask(l) {
        let w = Word::from_uint(v as u64, l as u16);
        if w.wt() != wt(v) {
            return Err(format!("wt mismatch at {v:#x}"));
        }
        for k in 0..2 * l {
            let ours = w.rot_left(k).try_to_u64().unwrap() as u32;
            if ours != rotl(v, k, l) {
                return Err(format!("rot_left mismatch at ({v:#x}, {k})"));
            }
            let ours = w.rot_right(k).try_to_u64().unwrap() as u32;
            if ours != rotr(v, k, l) {
                return Err(format!("rot_right mismatch at ({v:#x}, {k})"));
            }
            if w.rot_left(k).rot_right(k) != w {
                return Err(format!("rotation not invertible at ({v:#x}, {k})"));
            }
            if w.rot_left(k).wt() != w.wt() {
                return Err(format!("rotation changed weight at ({v:#x}, {k})"));
            }
            if w.rot_left(k) != w.rot_left(k % l) {
                return Err(format!("rotation not reduced mod L at ({v:#x}, {k})"));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_ops_match_reference_values() {
        assert_eq!(rotl(0x01, 1, 8), 0x02);
        assert_eq!(rotl(0x80, 1, 8), 0x01);
        assert_eq!(rotr(0x01, 1, 8), 0x80);
        assert_eq!(rotl(0xb5 ^ 0x2f, wt(0xb5), 8), 0x53);
        assert_eq!(wt(0x0b), 3);
    }

    #[test]
    fn word_ops_agree_at_4_and_8() {
        word_ops_agree_exhaustively(4).unwrap();
        word_ops_agree_exhaustively(8).unwrap();
    }
}
