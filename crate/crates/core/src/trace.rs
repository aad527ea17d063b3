//! Event trace: one CSV row per recorded event, `time_us,entity,event,details`.
//! Details are `key=value` pairs joined by `;`.

use std::fmt::Display;
use std::io;

use thiserror::Error;

use crate::kernel::SimTime;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("bad trace header {0:?}")]
    Header(Vec<String>),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
}

pub const HEADER: [&str; 4] = ["time_us", "entity", "event", "details"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub time_us: u64,
    pub entity: String,
    pub event: String,
    pub details: Vec<(String, String)>,
}

impl TraceRecord {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.details.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Parses the value of `key`, `None` when absent or malformed.
    pub fn num<T: std::str::FromStr>(&self, key: &str) -> Option<T> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn details_string(&self) -> String {
        self.details.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }
}

fn parse_details(text: &str) -> Option<Vec<(String, String)>> {
    if text.is_empty() {
        return Some(Vec::new());
    }
    text.split(';')
        .map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

/// In-memory trace, appended in dispatch order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: SimTime, entity: &str, event: &str, details: Vec<(&str, String)>) {
        debug_assert!(self.records.last().is_none_or(|r| r.time_us <= time.micros()));
        self.records.push(TraceRecord {
            time_us: time.micros(),
            entity: entity.to_string(),
            event: event.to_string(),
            details: details.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), TraceError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER)?;
        for r in &self.records {
            w.write_record([r.time_us.to_string().as_str(), &r.entity, &r.event, &r.details_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, TraceError> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header != HEADER {
            return Err(TraceError::Header(header));
        }
        let mut records = Vec::new();
        for row in rd.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let bad = |message: &str| TraceError::Malformed {
                line,
                message: message.to_string(),
            };
            if row.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            records.push(TraceRecord {
                time_us: row[0].parse().map_err(|_| bad("time_us is not an integer"))?,
                entity: row[1].to_string(),
                event: row[2].to_string(),
                details: parse_details(&row[3]).ok_or_else(|| bad("details must be key=value pairs"))?,
            });
        }
        Ok(Self { records })
    }
}

/// Builds a details list: `kv!["host" => h, "vm" => v]`.
#[macro_export]
macro_rules! kv {
    ($($k:expr => $v:expr),* $(,)?) => {
        vec![$(($k, $crate::trace::fmt_value(&$v))),*]
    };
}

pub fn fmt_value<T: Display + ?Sized>(v: &T) -> String {
    v.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = Trace::new();
        t.push(SimTime::from_secs(1), "dc1", "vm_alloc", kv!["host" => "h1", "mips" => 500.5]);
        t.push(SimTime::from_secs(2), "exchange", "tick", Vec::new());
        let bytes = t.to_csv();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("time_us,entity,event,details\n1000000,dc1,vm_alloc,host=h1;mips=500.5\n"));
        assert_eq!(Trace::read_csv(&bytes[..]).unwrap(), t);
        assert_eq!(t.records()[0].num::<f64>("mips"), Some(500.5));
    }

    #[test]
    fn header_checked() {
        assert!(matches!(Trace::read_csv(&b"a,b,c,d\n"[..]), Err(TraceError::Header(_))));
    }
}
