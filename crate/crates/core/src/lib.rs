//! Cryptanalysis workbench for two ultralightweight RFID mutual
//! authentication protocols — KSP and SOVNOKP — built entirely from XOR,
//! data-dependent rotation and Hamming weight.
//!
//! The crate provides:
//!
//! * exact L-bit [`word::Word`] arithmetic (default L = 96);
//! * a simulated insecure [`channel`] with an eavesdrop/block/modify/inject
//!   adversary and replayable line-oriented transcripts;
//! * executable role state machines for both protocols ([`ksp`],
//!   [`sovnokp`], the latter with a mock product-history ledger keyed by
//!   SHA-256(IDS || K) and KILL-after-5 semantics);
//! * full secret-disclosure [`attacks`] against both protocols, driven
//!   purely from transcripts of two eavesdropped sessions, with candidate
//!   sets, filters, update prediction and impersonation/desync exploits;
//! * a Monte-Carlo [`harness`] that measures attack success statistics and
//!   cross-checks the searches against exhaustive small-L brute force.

pub mod attacks;
pub mod channel;
pub mod harness;
pub mod ksp;
pub mod secrets;
pub mod sovnokp;
pub mod word;

pub use channel::{
    Action, AdversaryPolicy, Channel, ChannelError, Delivery, Frame, FrameBody, Protocol, Role,
    Transcript, TranscriptError, TranscriptHeader,
};
pub use secrets::{ProvisionRecord, SecretPair, Side};
pub use word::{Word, WordError, MAX_BITLEN, MIN_BITLEN};

pub use attacks::{AttackError, SearchBudget};
pub use harness::{
    run_attack, run_demo, run_honest, run_oracle, write_report, Campaign, CampaignSummary,
    DemoKind, HarnessConfig, ReportKind, TrialReport,
};
pub use sovnokp::BVariant;
