//! Metering and invoicing: every delivered result is priced at its tier rate
//! into an append-only ledger. Billing is demand-side — merging subscriptions
//! dedupes physical acquisitions but never changes what a user owes.

use crate::ids::{FunctionId, Tick, UserId};
use crate::middleware::DeliveryRecord;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Fixed-point currency with 4 decimal places, stored as integer
/// ten-thousandths. Arithmetic is exact, so conservation checks hold to the
/// last digit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Currency(i64);

pub const CURRENCY_SCALE: i64 = 10_000;

impl Currency {
    pub const ZERO: Currency = Currency(0);

    pub fn from_scaled(ten_thousandths: i64) -> Self {
        Currency(ten_thousandths)
    }

    pub fn scaled(self) -> i64 {
        self.0
    }

    /// Parse a decimal string with at most 4 fractional digits.
    pub fn from_str(s: &str) -> Result<Self, BillingError> {
        let s = s.trim();
        let (sign, rest) = match s.strip_prefix('-') {
            Some(r) => (-1i64, r),
            None => (1i64, s),
        };
        let (int_part, frac_part) = match rest.split_once('.') {
            Some((i, f)) => (i, f),
            None => (rest, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(BillingError::BadAmount(s.to_owned()));
        }
        if frac_part.len() > 4 {
            return Err(BillingError::BadAmount(format!(
                "{s}: more than 4 decimal places"
            )));
        }
        let int: i64 = if int_part.is_empty() {
            0
        } else {
            int_part
                .parse()
                .map_err(|_| BillingError::BadAmount(s.to_owned()))?
        };
        let mut frac: i64 = 0;
        for c in frac_part.chars() {
            let d = c
                .to_digit(10)
                .ok_or_else(|| BillingError::BadAmount(s.to_owned()))?;
            frac = frac * 10 + i64::from(d);
        }
        for _ in frac_part.len()..4 {
            frac *= 10;
        }
        let scaled = int
            .checked_mul(CURRENCY_SCALE)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(|| BillingError::BadAmount(s.to_owned()))?;
        Ok(Currency(sign * scaled))
    }

    /// Convert from a float, requiring it to be exactly representable at 4
    /// decimal places (within one part in 10^9 of a scaled integer).
    pub fn from_f64(x: f64) -> Result<Self, BillingError> {
        let scaled = x * CURRENCY_SCALE as f64;
        let rounded = scaled.round();
        if (scaled - rounded).abs() > 1e-6 || !rounded.is_finite() {
            return Err(BillingError::BadAmount(format!(
                "{x}: not representable at 4 decimal places"
            )));
        }
        Ok(Currency(rounded as i64))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / CURRENCY_SCALE as f64
    }

    pub fn checked_add(self, other: Currency) -> Option<Currency> {
        self.0.checked_add(other.0).map(Currency)
    }

    pub fn checked_mul_units(self, units: u64) -> Option<Currency> {
        let units = i64::try_from(units).ok()?;
        self.0.checked_mul(units).map(Currency)
    }
}

impl fmt::Display for Currency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(
            f,
            "{sign}{}.{:04}",
            abs / CURRENCY_SCALE as u64,
            abs % CURRENCY_SCALE as u64
        )
    }
}

impl std::ops::Add for Currency {
    type Output = Currency;
    fn add(self, rhs: Currency) -> Currency {
        Currency(self.0 + rhs.0)
    }
}

impl std::iter::Sum for Currency {
    fn sum<I: Iterator<Item = Currency>>(iter: I) -> Currency {
        iter.fold(Currency::ZERO, |a, b| a + b)
    }
}

impl Serialize for Currency {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Currency {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Str(String),
            Num(f64),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Str(s) => Currency::from_str(&s).map_err(D::Error::custom),
            Raw::Num(x) => Currency::from_f64(x).map_err(D::Error::custom),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BillingError {
    #[error("bad currency amount: {0}")]
    BadAmount(String),
    #[error("unknown tier {0}")]
    UnknownTier(u8),
    #[error("currency overflow")]
    Overflow,
}

/// One metered charge: `amount = units * rate(tier)`, exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub tick: Tick,
    pub user: UserId,
    pub function_id: FunctionId,
    pub tier: u8,
    pub units: u64,
    pub amount: Currency,
}

/// Price one delivery record. Physical deduplication upstream never reduces a
/// user's bill: each record reflects that user's own demanded tick.
pub fn meter(
    record: &DeliveryRecord,
    rates: &BTreeMap<u8, Currency>,
) -> Result<LedgerEntry, BillingError> {
    let rate = rates
        .get(&record.tier)
        .ok_or(BillingError::UnknownTier(record.tier))?;
    let amount = rate
        .checked_mul_units(record.billed_units)
        .ok_or(BillingError::Overflow)?;
    Ok(LedgerEntry {
        tick: record.demand_tick,
        user: record.user.clone(),
        function_id: record.function_id.clone(),
        tier: record.tier,
        units: record.billed_units,
        amount,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Invoice {
    pub user: UserId,
    pub window_start: Tick,
    pub window_end: Tick,
    pub per_tier: BTreeMap<u8, TierSubtotal>,
    pub total_units: u64,
    pub total: Currency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TierSubtotal {
    pub units: u64,
    pub amount: Currency,
}

/// Sum a user's ledger entries over `[window_start, window_end)`.
pub fn invoice(
    ledger: &[LedgerEntry],
    user: &UserId,
    window_start: Tick,
    window_end: Tick,
) -> Invoice {
    let mut per_tier: BTreeMap<u8, TierSubtotal> = BTreeMap::new();
    let mut total = Currency::ZERO;
    let mut total_units = 0u64;
    for e in ledger {
        if &e.user != user || e.tick < window_start || e.tick >= window_end {
            continue;
        }
        let sub = per_tier.entry(e.tier).or_insert(TierSubtotal {
            units: 0,
            amount: Currency::ZERO,
        });
        sub.units += e.units;
        sub.amount = sub.amount + e.amount;
        total = total + e.amount;
        total_units += e.units;
    }
    Invoice {
        user: user.clone(),
        window_start,
        window_end,
        per_tier,
        total_units,
        total,
    }
}

/// The operator's view: demand-side billed units versus physical acquisitions
/// actually spent on the network. The margin is the dedup surplus and is
/// nonnegative whenever any tick is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MarginReport {
    pub billed_units: u64,
    pub physical_acquisitions: u64,
    pub margin_units: i64,
}

pub fn margin_report(ledger: &[LedgerEntry], physical_acquisitions: u64) -> MarginReport {
    let billed_units: u64 = ledger.iter().map(|e| e.units).sum();
    MarginReport {
        billed_units,
        physical_acquisitions,
        margin_units: billed_units as i64 - physical_acquisitions as i64,
    }
}

impl fmt::Display for Invoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "invoice for {} over ticks [{}, {})",
            self.user, self.window_start, self.window_end
        )?;
        for (tier, sub) in &self.per_tier {
            writeln!(f, "  tier {}: {} units  {}", tier, sub.units, sub.amount)?;
        }
        write!(f, "  total: {} units  {}", self.total_units, self.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::middleware::{DeliveryKind, DeliveryRecord};

    fn rates() -> BTreeMap<u8, Currency> {
        let mut m = BTreeMap::new();
        m.insert(1, Currency::from_str("0.01").unwrap());
        m.insert(2, Currency::from_str("0.002").unwrap());
        m.insert(3, Currency::from_str("0.0005").unwrap());
        m
    }

    fn record(user: &str, tier: u8, tick: Tick) -> DeliveryRecord {
        DeliveryRecord {
            function_id: FunctionId::new(format!("fn-{user}")),
            user: UserId::new(user),
            tier,
            node: "n0".into(),
            sensor: "pm25".into(),
            demand_tick: tick,
            delivered_tick: tick,
            kind: DeliveryKind::Sample { value: 1.0 },
            billed_units: 1,
        }
    }

    #[test]
    fn currency_parse_and_display() {
        assert_eq!(Currency::from_str("0.002").unwrap().scaled(), 20);
        assert_eq!(Currency::from_str("1").unwrap().scaled(), 10_000);
        assert_eq!(Currency::from_str("-0.0005").unwrap().scaled(), -5);
        assert_eq!(Currency::from_scaled(20).to_string(), "0.0020");
        assert!(Currency::from_str("0.00001").is_err());
        assert!(Currency::from_f64(0.001).is_ok());
        assert!(Currency::from_f64(0.00001).is_err());
    }

    #[test]
    fn meter_prices_one_unit_at_tier_rate() {
        let e = meter(&record("bob", 2, 600), &rates()).unwrap();
        assert_eq!(e.amount, Currency::from_str("0.002").unwrap());
        assert_eq!(e.units, 1);
    }

    #[test]
    fn meter_unknown_tier() {
        let mut r = record("bob", 2, 600);
        r.tier = 9;
        assert_eq!(
            meter(&r, &rates()).unwrap_err(),
            BillingError::UnknownTier(9)
        );
    }

    #[test]
    fn invoice_two_hours_once_per_minute() {
        // tier-2 user, once per minute for 2h, lossless: 120 entries.
        let ledger: Vec<LedgerEntry> = (0..120)
            .map(|i| meter(&record("ann", 2, i * 600), &rates()).unwrap())
            .collect();
        let inv = invoice(&ledger, &UserId::new("ann"), 0, 120 * 600);
        assert_eq!(inv.total_units, 120);
        assert_eq!(inv.total, Currency::from_str("0.240").unwrap());
    }

    #[test]
    fn invoice_empty_window_is_zero() {
        let ledger = vec![meter(&record("ann", 2, 600), &rates()).unwrap()];
        let inv = invoice(&ledger, &UserId::new("ann"), 10_000, 10_000);
        assert_eq!(inv.total, Currency::ZERO);
        assert!(inv.per_tier.is_empty());
    }

    #[test]
    fn invoice_matches_brute_force_groupby() {
        // Random-ish ledger of 10^4 entries; totals must match an independent
        // group-by-and-sum recomputation.
        let users = ["u0", "u1", "u2", "u3", "u4"];
        let mut ledger = Vec::new();
        let mut x = 12345u64;
        for _ in 0..10_000 {
            x = crate::rng::mix64(x);
            let user = users[(x % 5) as usize];
            let tier = (x / 7 % 3 + 1) as u8;
            let tick = x / 11 % 100_000;
            ledger.push(meter(&record(user, tier, tick), &rates()).unwrap());
        }
        for user in users {
            let uid = UserId::new(user);
            let inv = invoice(&ledger, &uid, 0, 100_000);
            let expect: i64 = ledger
                .iter()
                .filter(|e| e.user == uid)
                .map(|e| e.amount.scaled())
                .sum();
            assert_eq!(inv.total.scaled(), expect);
        }
        // Conservation: sum over all invoices equals the full ledger sum.
        let all: i64 = ledger.iter().map(|e| e.amount.scaled()).sum();
        let invoiced: i64 = users
            .iter()
            .map(|u| {
                invoice(&ledger, &UserId::new(*u), 0, 100_000)
                    .total
                    .scaled()
            })
            .sum();
        assert_eq!(all, invoiced);
    }

    #[test]
    fn window_extension_is_monotone() {
        let ledger: Vec<LedgerEntry> = (0..50)
            .map(|i| meter(&record("ann", 1, i * 100), &rates()).unwrap())
            .collect();
        let mut prev = Currency::ZERO;
        for end in (0..=5000).step_by(500) {
            let inv = invoice(&ledger, &UserId::new("ann"), 0, end);
            assert!(inv.total >= prev);
            prev = inv.total;
        }
    }
}
