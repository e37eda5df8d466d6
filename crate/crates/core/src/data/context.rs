//! Bucketing of raw order circumstances into categorical context tokens.

use chrono::{Datelike, NaiveDateTime, Timelike};

use crate::error::{Error, Result};

/// The fixed, ordered list of context fields.
pub const CONTEXT_FIELDS: [&str; 6] = ["hour", "weekday", "temperature", "weather", "store", "region"];

/// Raw context values of one order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawContext {
    pub timestamp: NaiveDateTime,
    /// Degrees Celsius.
    pub temperature_c: f64,
    pub weather: String,
    pub store: String,
    pub region: String,
}

/// Temperature bucketing parameters; the other fields need none.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextSchema {
    pub temperature_min: f64,
    pub temperature_max: f64,
    pub temperature_buckets: usize,
}

impl Default for ContextSchema {
    fn default() -> Self {
        ContextSchema {
            temperature_min: -10.0,
            temperature_max: 40.0,
            temperature_buckets: 8,
        }
    }
}

impl ContextSchema {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature_min < self.temperature_max) || self.temperature_buckets == 0 {
            return Err(Error::Config(format!(
                "invalid temperature bucketing [{}, {}] x {}",
                self.temperature_min, self.temperature_max, self.temperature_buckets
            )));
        }
        Ok(())
    }

    pub fn field_count(&self) -> usize {
        CONTEXT_FIELDS.len()
    }

    /// Equal-width bucket index, clamped at both ends.
    pub fn temperature_bucket(&self, celsius: f64) -> usize {
        let span = self.temperature_max - self.temperature_min;
        let pos = (celsius - self.temperature_min) / span * self.temperature_buckets as f64;
        (pos.floor().max(0.0) as usize).min(self.temperature_buckets - 1)
    }

    /// One token per entry of [`CONTEXT_FIELDS`].
    pub fn tokens(&self, raw: &RawContext) -> Vec<String> {
        vec![
            format!("{:02}", raw.timestamp.hour()),
            raw.timestamp.weekday().to_string(),
            format!("t{}", self.temperature_bucket(raw.temperature_c)),
            raw.weather.clone(),
            raw.store.clone(),
            raw.region.clone(),
        ]
    }
}
