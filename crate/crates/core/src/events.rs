//! Event records, the text event format and windowed access into streams.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};

/// Timestamp in microseconds.
pub type Micros = i64;

pub fn seconds_to_micros(t: f64) -> Micros {
    (t * 1e6).round() as Micros
}

pub fn micros_to_seconds(t: Micros) -> f64 {
    t as f64 * 1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub t: Micros,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

/// Time-sorted events of one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    pub width: u32,
    pub height: u32,
}

impl EventStream {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            events: Vec::new(),
            width,
            height,
        }
    }

    /// Checks ordering and bounds.
    pub fn new(events: Vec<Event>, width: u32, height: u32) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if e.x as u32 >= width || e.y as u32 >= height {
                return Err(Error::Format(format!(
                    "event {i} at ({}, {}) outside {width}x{height}",
                    e.x, e.y
                )));
            }
            if i > 0 && e.t < events[i - 1].t {
                return Err(Error::Format(format!("event {i} is out of time order")));
            }
        }
        Ok(Self {
            events,
            width,
            height,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_time(&self) -> Option<Micros> {
        self.events.first().map(|e| e.t)
    }

    pub fn last_time(&self) -> Option<Micros> {
        self.events.last().map(|e| e.t)
    }

    /// Number of events with timestamp `<= t`.
    fn upper(&self, t: Micros) -> usize {
        self.events.partition_point(|e| e.t <= t)
    }

    /// The (at most) `n` most recent events with timestamp `<= t`.
    pub fn last_n_events(&self, t: Micros, n: usize) -> &[Event] {
        let end = self.upper(t);
        &self.events[end.saturating_sub(n)..end]
    }

    /// Events with `t0 < t <= t1`.
    pub fn events_in_window(&self, t0: Micros, t1: Micros) -> &[Event] {
        if t1 <= t0 {
            return &[];
        }
        &self.events[self.upper(t0)..self.upper(t1)]
    }

    pub fn parse(text: &str, width: u32, height: u32) -> Result<Self> {
        Self::read(text.as_bytes(), width, height)
    }

    /// Reads `t_sec x y p` lines; `p` is 0 or 1 (0 is a negative event).
    pub fn read(reader: impl Read, width: u32, height: u32) -> Result<Self> {
        let mut events = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ev = parse_line(line, lineno, width, height)?;
            if let Some(prev) = events.last() {
                let prev: &Event = prev;
                if ev.t < prev.t {
                    return Err(Error::Format(format!(
                        "line {lineno}: timestamp {} precedes previous event at {}",
                        ev.t, prev.t
                    )));
                }
            }
            events.push(ev);
        }
        Ok(Self {
            events,
            width,
            height,
        })
    }

    pub fn read_file(path: impl AsRef<Path>, width: u32, height: u32) -> Result<Self> {
        Self::read(std::fs::File::open(path)?, width, height)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.events.len() * 24);
        for e in &self.events {
            let p = match e.polarity {
                Polarity::Positive => 1,
                Polarity::Negative => 0,
            };
            let _ = writeln!(s, "{:.6} {} {} {}", micros_to_seconds(e.t), e.x, e.y, p);
        }
        s
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn parse_line(line: &str, lineno: usize, width: u32, height: u32) -> Result<Event> {
    let err = |msg: String| Error::Parse { line: lineno, msg };
    let mut it = line.split_whitespace();
    let mut field = |name: &str| {
        it.next()
            .ok_or_else(|| err(format!("missing field '{name}'")))
    };
    let t: f64 = field("t")?
        .parse()
        .map_err(|e| err(format!("bad timestamp: {e}")))?;
    let x: u32 = field("x")?
        .parse()
        .map_err(|e| err(format!("bad x: {e}")))?;
    let y: u32 = field("y")?
        .parse()
        .map_err(|e| err(format!("bad y: {e}")))?;
    let p = field("p")?;
    if it.next().is_some() {
        return Err(err("trailing fields".into()));
    }
    if !t.is_finite() {
        return Err(err("non-finite timestamp".into()));
    }
    if x >= width || y >= height {
        return Err(err(format!("pixel ({x}, {y}) outside {width}x{height}")));
    }
    let polarity = match p {
        "1" => Polarity::Positive,
        "0" | "-1" => Polarity::Negative,
        other => return Err(err(format!("bad polarity '{other}'"))),
    };
    Ok(Event {
        t: seconds_to_micros(t),
        x: x as u16,
        y: y as u16,
        polarity,
    })
}
