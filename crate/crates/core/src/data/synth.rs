//! Synthetic transaction corpora with a planted next-item rule.
//!
//! Spec files are `key = value` lines (`#` starts a comment):
//!
//! ```text
//! orders = 50000
//! items = 8
//! weather_values = 8
//! rule = joint          # copy-last | weather | joint
//! noise = 0.1
//! ```
//!
//! With probability `1 - noise` the final item of an order follows the rule;
//! otherwise it is drawn uniformly from all items. Every other value
//! (prefix items, weather, store, region, temperature) is uniform.

use std::str::FromStr;

use chrono::{Duration, NaiveDateTime};
use rand::Rng as _;

use super::context::RawContext;
use super::transactions::{parse_timestamp, TransactionRecord};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantedRule {
    /// label = last prefix item
    CopyLast,
    /// label = item[weather mod items]
    Weather,
    /// label = item[(last + weather) mod items]
    Joint,
}

impl PlantedRule {
    pub fn describe(self) -> &'static str {
        match self {
            PlantedRule::CopyLast => "label = last input item",
            PlantedRule::Weather => "label = item[weather_index mod items]",
            PlantedRule::Joint => "label = item[(last_item_index + weather_index) mod items]",
        }
    }

    /// Planted label index for a given last-item and weather index.
    pub fn apply(self, last: usize, weather: usize, items: usize) -> usize {
        match self {
            PlantedRule::CopyLast => last,
            PlantedRule::Weather => weather % items,
            PlantedRule::Joint => (last + weather) % items,
        }
    }
}

impl FromStr for PlantedRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy-last" => Ok(PlantedRule::CopyLast),
            "weather" => Ok(PlantedRule::Weather),
            "joint" => Ok(PlantedRule::Joint),
            other => Err(Error::Config(format!("unknown rule '{other}'"))),
        }
    }
}

impl std::fmt::Display for PlantedRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PlantedRule::CopyLast => "copy-last",
            PlantedRule::Weather => "weather",
            PlantedRule::Joint => "joint",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub orders: usize,
    pub items: usize,
    pub weather_values: usize,
    pub stores: usize,
    pub regions: usize,
    pub rule: PlantedRule,
    pub noise: f64,
    /// Order length including the label item.
    pub min_order_len: usize,
    pub max_order_len: usize,
    pub start: NaiveDateTime,
    pub interval_minutes: i64,
    pub temperature_min: f64,
    pub temperature_max: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            orders: 1000,
            items: 8,
            weather_values: 8,
            stores: 4,
            regions: 2,
            rule: PlantedRule::Joint,
            noise: 0.1,
            min_order_len: 2,
            max_order_len: 6,
            start: parse_timestamp("2021-01-01T00:00:00").expect("valid literal"),
            interval_minutes: 7,
            temperature_min: -5.0,
            temperature_max: 35.0,
        }
    }
}

impl SyntheticSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SyntheticSpec::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let bad = |what: &str| Error::Config(format!("line {}: bad {what} '{value}'", n + 1));
            let int = || value.parse::<usize>().map_err(|_| bad(key));
            let real = || value.parse::<f64>().map_err(|_| bad(key));
            match key {
                "orders" => spec.orders = int()?,
                "items" => spec.items = int()?,
                "weather_values" => spec.weather_values = int()?,
                "stores" => spec.stores = int()?,
                "regions" => spec.regions = int()?,
                "rule" => spec.rule = value.parse()?,
                "noise" => spec.noise = real()?,
                "min_order_len" => spec.min_order_len = int()?,
                "max_order_len" => spec.max_order_len = int()?,
                "start" => spec.start = parse_timestamp(value)?,
                "interval_minutes" => spec.interval_minutes = value.parse().map_err(|_| bad(key))?,
                "temperature_min" => spec.temperature_min = real()?,
                "temperature_max" => spec.temperature_max = real()?,
                other => return Err(Error::Config(format!("line {}: unknown key '{other}'", n + 1))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::contract(format!("inconsistent synthetic spec: {m}")));
        if self.orders == 0 {
            return fail("orders must be positive");
        }
        if self.items == 0 || self.weather_values == 0 || self.stores == 0 || self.regions == 0 {
            return fail("items, weather_values, stores and regions must be positive");
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return fail("noise must lie in [0, 1]");
        }
        if self.min_order_len < 2 {
            return fail("min_order_len must be at least 2");
        }
        if self.max_order_len < self.min_order_len {
            return fail("max_order_len must be >= min_order_len");
        }
        if !(self.temperature_min < self.temperature_max) {
            return fail("temperature_min must be below temperature_max");
        }
        if self.interval_minutes <= 0 {
            return fail("interval_minutes must be positive");
        }
        Ok(())
    }

    pub fn item_name(i: usize) -> String {
        format!("item{i:02}")
    }

    pub fn weather_name(i: usize) -> String {
        format!("w{i}")
    }

    /// Human-readable metadata describing the generator and its rule.
    pub fn metadata(&self, seed: u64) -> Vec<String> {
        vec![
            "txtrec synthetic corpus".to_string(),
            format!("rule={} ({})", self.rule, self.rule.describe()),
            format!("noise={} (label replaced by a uniform item)", self.noise),
            format!(
                "orders={} items={} weather_values={} stores={} regions={}",
                self.orders, self.items, self.weather_values, self.stores, self.regions
            ),
            format!("order_len={}..={} seed={seed}", self.min_order_len, self.max_order_len),
        ]
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Vec<TransactionRecord>> {
    spec.validate()?;
    let mut rng = rng::seeded(seed);
    let mut records = Vec::with_capacity(spec.orders);
    for n in 0..spec.orders {
        let len = rng.gen_range(spec.min_order_len..=spec.max_order_len);
        let prefix: Vec<usize> = (0..len - 1).map(|_| rng.gen_range(0..spec.items)).collect();
        let weather = rng.gen_range(0..spec.weather_values);
        let store = rng.gen_range(0..spec.stores);
        let region = rng.gen_range(0..spec.regions);
        let temperature = rng.gen_range(spec.temperature_min..spec.temperature_max);
        let last = *prefix.last().expect("len >= 2");
        let label = if rng.gen_bool(spec.noise) {
            rng.gen_range(0..spec.items)
        } else {
            spec.rule.apply(last, weather, spec.items)
        };
        let mut items: Vec<String> = prefix.iter().map(|&i| SyntheticSpec::item_name(i)).collect();
        items.push(SyntheticSpec::item_name(label));
        records.push(TransactionRecord {
            order_id: format!("syn{n:07}"),
            context: RawContext {
                timestamp: spec.start + Duration::minutes(spec.interval_minutes * n as i64),
                temperature_c: (temperature * 10.0).round() / 10.0,
                weather: SyntheticSpec::weather_name(weather),
                store: format!("store{store}"),
                region: format!("region{region}"),
            },
            items,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_copy_last_is_exact() {
        let spec = SyntheticSpec {
            rule: PlantedRule::CopyLast,
            noise: 0.0,
            orders: 200,
            ..Default::default()
        };
        for r in generate_synthetic(&spec, 4).unwrap() {
            let n = r.items.len();
            assert_eq!(r.items[n - 1], r.items[n - 2]);
        }
    }

    #[test]
    fn parse_and_reject() {
        let spec = SyntheticSpec::parse("orders = 10\nrule = weather # comment\nnoise=0.25\n").unwrap();
        assert_eq!(spec.orders, 10);
        assert_eq!(spec.rule, PlantedRule::Weather);
        assert_eq!(spec.noise, 0.25);
        assert!(SyntheticSpec::parse("noise = 1.5").is_err());
        assert!(SyntheticSpec::parse("min_order_len = 1").is_err());
        assert!(SyntheticSpec::parse("colour = red").is_err());
        assert!(SyntheticSpec::parse("min_order_len = 4\nmax_order_len = 3").is_err());
    }

    #[test]
    fn weather_rule_label_frequencies_match_binomial_expectation() {
        // P(label = rule) = (1 - noise) + noise / items; check each weather
        // class within four binomial standard deviations.
        let spec = SyntheticSpec {
            rule: PlantedRule::Weather,
            noise: 0.3,
            orders: 20_000,
            items: 5,
            weather_values: 5,
            ..Default::default()
        };
        let records = generate_synthetic(&spec, 11).unwrap();
        let p = (1.0 - spec.noise) + spec.noise / spec.items as f64;
        for w in 0..spec.weather_values {
            let of_w: Vec<_> = records
                .iter()
                .filter(|r| r.context.weather == SyntheticSpec::weather_name(w))
                .collect();
            let n = of_w.len() as f64;
            let hits = of_w
                .iter()
                .filter(|r| *r.items.last().unwrap() == SyntheticSpec::item_name(w % spec.items))
                .count() as f64;
            let sd = (n * p * (1.0 - p)).sqrt();
            assert!((hits - n * p).abs() < 4.0 * sd, "weather {w}: {hits} vs {}", n * p);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::default();
        assert_eq!(generate_synthetic(&spec, 9).unwrap(), generate_synthetic(&spec, 9).unwrap());
    }
}
