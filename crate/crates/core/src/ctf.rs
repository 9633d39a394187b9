//! Coin-defense bookkeeping.
//!
//! The defender starts with 10,000 coins. Offline loads and generators pay
//! `0.1 · P_N[kW] · t / T` over `t` offline steps, transformers pay 20 coins
//! and lines 10 coins once when they trip. Amounts are kept in milli-coins so
//! conservation is exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::protection::{DisconnectionEvent, ElementKind};

/// Fixed-point coin amount in thousandths of a coin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MilliCoins(pub i64);

impl MilliCoins {
    pub const ZERO: MilliCoins = MilliCoins(0);

    pub const fn coins(c: i64) -> Self {
        MilliCoins(c * 1000)
    }

    pub fn as_coins(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl fmt::Display for MilliCoins {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        write!(f, "{sign}{}.{:03}", self.0.abs() / 1000, self.0.abs() % 1000)
    }
}

pub const INITIAL_BALANCE: MilliCoins = MilliCoins::coins(10_000);
pub const TRANSFORMER_PAYOUT: MilliCoins = MilliCoins::coins(20);
pub const LINE_PAYOUT: MilliCoins = MilliCoins::coins(10);

/// An injection element that is offline this step, with its nominal power.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineElement {
    pub id: String,
    pub p_nominal_kw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerSnapshot {
    pub defender: MilliCoins,
    pub attacker: MilliCoins,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoinLedger {
    defender: MilliCoins,
    attacker: MilliCoins,
    horizon: u64,
    offline_steps: BTreeMap<String, u64>,
    paid_once: BTreeSet<String>,
}

impl CoinLedger {
    pub fn new(horizon: u64) -> Self {
        assert!(horizon > 0, "episode horizon must be positive");
        Self {
            defender: INITIAL_BALANCE,
            attacker: MilliCoins::ZERO,
            horizon,
            offline_steps: BTreeMap::new(),
            paid_once: BTreeSet::new(),
        }
    }

    pub fn defender_balance(&self) -> MilliCoins {
        self.defender
    }

    pub fn attacker_total(&self) -> MilliCoins {
        self.attacker
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn offline_steps(&self, id: &str) -> u64 {
        self.offline_steps.get(id).copied().unwrap_or(0)
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot { defender: self.defender, attacker: self.attacker }
    }

    /// Cumulative milli-coins owed for `steps` offline steps:
    /// `floor(0.1 · P_N · steps / T · 1000)`, computed in integer watts.
    fn owed(&self, p_nominal_kw: f64, steps: u64) -> i64 {
        let watts = (p_nominal_kw * 1000.0).round() as i128;
        (watts * i128::from(steps) / (10 * i128::from(self.horizon))) as i64
    }

    fn transfer(&mut self, amount: i64) {
        let paid = amount.clamp(0, self.defender.0);
        self.defender.0 -= paid;
        self.attacker.0 += paid;
    }

    /// Applies one step's payouts: a per-step share for every offline
    /// injection element, plus one-shot payouts for tripped branches.
    pub fn accrue(&mut self, events: &[DisconnectionEvent], offline: &[OfflineElement], step: u64) {
        debug_assert!(step < self.horizon, "accrue past the horizon");
        for e in events {
            let payout = match e.kind {
                ElementKind::Transformer => TRANSFORMER_PAYOUT,
                ElementKind::Line => LINE_PAYOUT,
                ElementKind::Load | ElementKind::Sgen => continue,
            };
            if self.paid_once.insert(e.element.clone()) {
                self.transfer(payout.0);
            }
        }
        for el in offline {
            let before = self.offline_steps(&el.id);
            let after = before + 1;
            let due = self.owed(el.p_nominal_kw, after) - self.owed(el.p_nominal_kw, before);
            self.offline_steps.insert(el.id.clone(), after);
            self.transfer(due);
        }
    }

    pub fn attacker_won(&self) -> bool {
        self.defender == MilliCoins::ZERO
    }
}
