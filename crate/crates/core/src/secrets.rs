//! Shared secret state kept by both sides of either protocol, plus the
//! line-oriented provisioning file format (tag identifier followed by the
//! four secret words, one record per line).

use std::io::{self, BufRead, Write};

use rand::RngCore;
use thiserror::Error;

use crate::word::Word;

/// A pseudonym/key pair. Each side stores an old and a new pair so one lost
/// final message cannot desynchronize the parties for good.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SecretPair {
    pub ids: Word,
    pub key: Word,
}

impl SecretPair {
    pub fn new(ids: Word, key: Word) -> Self {
        SecretPair { ids, key }
    }

    pub fn random(rng: &mut impl RngCore, bitlen: u16) -> Self {
        SecretPair {
            ids: Word::random(rng, bitlen),
            key: Word::random(rng, bitlen),
        }
    }
}

/// Which side of an old/new record matched during identification.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    New,
    Old,
}

/// One provisioning record: a static tag identifier plus the old and new
/// secret pairs. Freshly enrolled tags have old == new.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProvisionRecord {
    pub id: Word,
    pub old: SecretPair,
    pub new: SecretPair,
}

impl ProvisionRecord {
    pub fn fresh(id: Word, ids: Word, key: Word) -> Self {
        let pair = SecretPair::new(ids, key);
        ProvisionRecord {
            id,
            old: pair,
            new: pair,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProvisionError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Writes records as five hex words per line:
/// `id ids_old ids_new k_old k_new`.
pub fn export_provisioning(
    records: &[ProvisionRecord],
    mut w: impl Write,
) -> io::Result<()> {
    for r in records {
        writeln!(
            w,
            "{} {} {} {} {}",
            r.id, r.old.ids, r.new.ids, r.old.key, r.new.key
        )?;
    }
    Ok(())
}

pub fn import_provisioning(
    r: impl BufRead,
    bitlen: u16,
) -> Result<Vec<ProvisionRecord>, ProvisionError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.len() != 5 {
            return Err(ProvisionError::Parse {
                line: line_no,
                reason: format!("expected 5 hex words, found {}", words.len()),
            });
        }
        let mut parsed = words.iter().map(|w| {
            Word::from_hex(w, bitlen).map_err(|e| ProvisionError::Parse {
                line: line_no,
                reason: e.to_string(),
            })
        });
        let mut next = || parsed.next().unwrap();
        let id = next()?;
        let ids_old = next()?;
        let ids_new = next()?;
        let k_old = next()?;
        let k_new = next()?;
        out.push(ProvisionRecord {
            id,
            old: SecretPair::new(ids_old, k_old),
            new: SecretPair::new(ids_new, k_new),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn provisioning_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let records: Vec<ProvisionRecord> = (0..4)
            .map(|_| ProvisionRecord {
                id: Word::random(&mut rng, 96),
                old: SecretPair::random(&mut rng, 96),
                new: SecretPair::random(&mut rng, 96),
            })
            .collect();
        let mut buf = Vec::new();
        export_provisioning(&records, &mut buf).unwrap();
        let back = import_provisioning(io::Cursor::new(buf), 96).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn import_reports_line_numbers() {
        let text = "0a 0b 0c 0d 0e\n0a 0b 0c\n";
        let err = import_provisioning(io::Cursor::new(text.as_bytes()), 8).unwrap_err();
        assert!(err.to_string().starts_with("line 2"));
    }
}
