//! Image-type event representations: the time surface (TS), the binary
//! event map (EM), their negatives, and the blurred frames the tracker
//! samples from.
//!
//! Frames live on a `[0, 255]` scale. Values are `f64`: a TS is rounded to
//! whole grey levels when rendered and an EM is exactly `{0, 255}`, but
//! blurred frames keep their fractional values.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::events::{Event, Micros};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Ts,
    Em,
    NegativeTs,
    NegativeEm,
}

impl FrameKind {
    pub fn is_negative(self) -> bool {
        matches!(self, FrameKind::NegativeTs | FrameKind::NegativeEm)
    }

    fn complement(self) -> Self {
        match self {
            FrameKind::Ts => FrameKind::NegativeTs,
            FrameKind::Em => FrameKind::NegativeEm,
            FrameKind::NegativeTs => FrameKind::Ts,
            FrameKind::NegativeEm => FrameKind::Em,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationConfig {
    /// TS decay constant, milliseconds.
    pub delta_ms: f64,
    /// Events aggregated into one EM.
    pub em_event_count: usize,
    /// Period of the synchronous TS trigger, milliseconds.
    pub ts_period_ms: f64,
    /// Side of the square blur kernel, pixels.
    pub blur_kernel: usize,
    pub blur_sigma: f64,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        Self {
            delta_ms: 30.0,
            em_event_count: 4000,
            ts_period_ms: 10.0,
            blur_kernel: 5,
            blur_sigma: 1.0,
        }
    }
}

impl RepresentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_ms > 0.0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        if self.em_event_count == 0 {
            return Err(Error::Config("EM event count must be positive".into()));
        }
        if !(self.ts_period_ms > 0.0) {
            return Err(Error::Config("TS period must be positive".into()));
        }
        if self.blur_kernel.is_multiple_of(2) {
            return Err(Error::Config("blur kernel size must be odd".into()));
        }
        if !(self.blur_sigma > 0.0) {
            return Err(Error::Config("blur sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn ts_period_us(&self) -> Micros {
        (self.ts_period_ms * 1000.0).round() as Micros
    }
}

/// Per-pixel timestamp of the most recent event.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSurfaceState {
    pub width: u32,
    pub height: u32,
    t_last: Vec<Micros>,
}

const NEVER: Micros = Micros::MIN;

impl TimeSurfaceState {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            t_last: vec![NEVER; (width * height) as usize],
        }
    }

    pub fn t_last(&self, x: u32, y: u32) -> Option<Micros> {
        let t = self.t_last[(y * self.width + x) as usize];
        (t != NEVER).then_some(t)
    }

    /// Most recent timestamp over all pixels.
    pub fn latest(&self) -> Option<Micros> {
        self.t_last.iter().copied().filter(|&t| t != NEVER).max()
    }

    pub fn update(&mut self, events: &[Event]) {
        for e in events {
            let i = e.y as usize * self.width as usize + e.x as usize;
            if e.t > self.t_last[i] {
                self.t_last[i] = e.t;
            }
        }
    }

    pub fn updated(mut self, events: &[Event]) -> Self {
        self.update(events);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventFrame {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
    pub trigger_time: Micros,
    pub kind: FrameKind,
    pub blurred: bool,
}

impl EventFrame {
    /// Wraps raw values; they must lie in `[0, 255]`.
    pub fn from_values(
        width: u32,
        height: u32,
        values: Vec<f64>,
        trigger_time: Micros,
        kind: FrameKind,
        blurred: bool,
    ) -> Result<Self> {
        if values.len() != (width * height) as usize {
            return Err(Error::Format(format!(
                "{} values for a {width}x{height} frame",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::Domain(format!("frame value {v} outside [0, 255]")));
        }
        Ok(Self {
            width,
            height,
            values,
            trigger_time,
            kind,
            blurred,
        })
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.values[(y * self.width + x) as usize]
    }

    /// `255 - v` everywhere, flipping the kind in either direction.
    pub fn complemented(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| 255.0 - v).collect(),
            kind: self.kind.complement(),
            ..self.clone()
        }
    }

    /// Writes a binary PGM (P5), rounding to whole grey levels.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        out.write_all(&bytes)?;
        out.flush()?;
        Ok(())
    }
}

/// `round(255 * exp(-(t - t_last) / delta))`; pixels that never fired are 0.
pub fn render_time_surface(
    state: &TimeSurfaceState,
    t: Micros,
    cfg: &RepresentationConfig,
) -> Result<EventFrame> {
    if let Some(latest) = state.latest() {
        if latest > t {
            return Err(Error::Domain(format!(
                "time surface requested at {t} us but an event fired at {latest} us"
            )));
        }
    }
    let inv_delta_us = 1.0 / (cfg.delta_ms * 1000.0);
    let values = state
        .t_last
        .iter()
        .map(|&tl| {
            if tl == NEVER {
                0.0
            } else {
                let age = (t - tl) as f64;
                (255.0 * (-age * inv_delta_us).exp() + 0.5).floor()
            }
        })
        .collect();
    Ok(EventFrame {
        width: state.width,
        height: state.height,
        values,
        trigger_time: t,
        kind: FrameKind::Ts,
        blurred: false,
    })
}

/// Binary map: 255 where any of `events` fired.
pub fn render_event_map(events: &[Event], width: u32, height: u32) -> Result<EventFrame> {
    let last = events
        .last()
        .ok_or_else(|| Error::Domain("event map needs at least one event".into()))?;
    let mut values = vec![0.0; (width * height) as usize];
    for e in events {
        if e.x as u32 >= width || e.y as u32 >= height {
            return Err(Error::Domain(format!(
                "event at ({}, {}) outside {width}x{height}",
                e.x, e.y
            )));
        }
        values[e.y as usize * width as usize + e.x as usize] = 255.0;
    }
    Ok(EventFrame {
        width,
        height,
        values,
        trigger_time: last.t,
        kind: FrameKind::Em,
        blurred: false,
    })
}

pub fn negate(frame: &EventFrame) -> Result<EventFrame> {
    if frame.kind.is_negative() {
        return Err(Error::Kind(format!(
            "frame is already negative ({:?})",
            frame.kind
        )));
    }
    Ok(frame.complemented())
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|w| w / sum).collect()
}

/// Separable Gaussian blur with replicated borders. Only negative frames
/// are blurred.
pub fn gaussian_blur(frame: &EventFrame, cfg: &RepresentationConfig) -> Result<EventFrame> {
    if !frame.kind.is_negative() {
        return Err(Error::Kind(format!(
            "blur expects a negative frame, got {:?}",
            frame.kind
        )));
    }
    let kernel = gaussian_kernel(cfg.blur_kernel, cfg.blur_sigma);
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (frame.width as i64, frame.height as i64);
    let clamp = |v: i64, hi: i64| v.clamp(0, hi - 1) as usize;

    let mut tmp = vec![0.0; frame.values.len()];
    for y in 0..h {
        let row = &frame.values[(y * w) as usize..((y + 1) * w) as usize];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wk) in kernel.iter().enumerate() {
                acc += wk * row[clamp(x + k as i64 - r, w)];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0; frame.values.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wk) in kernel.iter().enumerate() {
                acc += wk * tmp[clamp(y + k as i64 - r, h) * w as usize + x as usize];
            }
            // Normalized positive weights keep the range; clamp away rounding.
            out[(y * w + x) as usize] = acc.clamp(0.0, 255.0);
        }
    }
    Ok(EventFrame {
        values: out,
        blurred: true,
        ..frame.clone()
    })
}

/// Bilinear interpolation; `None` outside `[0, w-1] x [0, h-1]`.
#[inline]
pub fn bilinear_sample(frame: &EventFrame, p: &Vector2<f64>) -> Option<f64> {
    let (wm, hm) = ((frame.width - 1) as f64, (frame.height - 1) as f64);
    if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= wm && p.y <= hm) {
        return None;
    }
    let x0 = (p.x.floor() as u32).min(frame.width.saturating_sub(2));
    let y0 = (p.y.floor() as u32).min(frame.height.saturating_sub(2));
    let ax = p.x - x0 as f64;
    let ay = p.y - y0 as f64;
    let w = frame.width as usize;
    let i = y0 as usize * w + x0 as usize;
    let v = &frame.values;
    let top = v[i] + ax * (v[i + 1] - v[i]);
    let bottom = v[i + w] + ax * (v[i + w + 1] - v[i + w]);
    Some(top + ay * (bottom - top))
}

/// Central differences of bilinear samples, step one pixel. `None` within
/// one pixel of the border.
#[inline]
pub fn image_gradient(frame: &EventFrame, p: &Vector2<f64>) -> Option<Vector2<f64>> {
    let (wm, hm) = ((frame.width - 1) as f64, (frame.height - 1) as f64);
    if !(p.x >= 1.0 && p.y >= 1.0 && p.x <= wm - 1.0 && p.y <= hm - 1.0) {
        return None;
    }
    let s = |dx: f64, dy: f64| bilinear_sample(frame, &Vector2::new(p.x + dx, p.y + dy));
    let gx = (s(1.0, 0.0)? - s(-1.0, 0.0)?) * 0.5;
    let gy = (s(0.0, 1.0)? - s(0.0, -1.0)?) * 0.5;
    Some(Vector2::new(gx, gy))
}

/// Negative, blurred frame ready for alignment.
pub fn prepare_for_tracking(frame: &EventFrame, cfg: &RepresentationConfig) -> Result<EventFrame> {
    gaussian_blur(&negate(frame)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Polarity;

    fn ev(t: Micros, x: u16, y: u16) -> Event {
        Event {
            t,
            x,
            y,
            polarity: Polarity::Positive,
        }
    }

    fn frame(w: u32, h: u32, f: impl Fn(u32, u32) -> f64, kind: FrameKind) -> EventFrame {
        let mut v = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                v.push(f(x, y));
            }
        }
        EventFrame::from_values(w, h, v, 0, kind, false).unwrap()
    }

    #[test]
    fn update_keeps_latest() {
        let mut s = TimeSurfaceState::new(4, 4);
        assert_eq!(s.t_last(1, 1), None);
        s.update(&[ev(10, 1, 1), ev(20, 1, 1), ev(15, 2, 2)]);
        assert_eq!(s.t_last(1, 1), Some(20));
        assert_eq!(s.t_last(2, 2), Some(15));
        let before = s.clone();
        s.update(&[]);
        assert_eq!(s, before);
        // an older event never overwrites
        s.update(&[ev(5, 1, 1)]);
        assert_eq!(s.t_last(1, 1), Some(20));
    }

    #[test]
    fn time_surface_values() {
        let cfg = RepresentationConfig::default();
        let s = TimeSurfaceState::new(3, 1).updated(&[ev(0, 0, 0), ev(30_000, 1, 0)]);
        let ts = render_time_surface(&s, 30_000, &cfg).unwrap();
        assert_eq!(ts.values, vec![94.0, 255.0, 0.0]);
        assert_eq!(ts.kind, FrameKind::Ts);
        assert!(matches!(
            render_time_surface(&s, 29_999, &cfg),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn event_map_is_a_set() {
        let em = render_event_map(&[ev(1, 0, 0), ev(2, 2, 1), ev(3, 0, 0)], 3, 2).unwrap();
        assert_eq!(em.values, vec![255.0, 0.0, 0.0, 0.0, 0.0, 255.0]);
        assert_eq!(em.trigger_time, 3);
        let one = render_event_map(&[ev(1, 1, 1)], 3, 2).unwrap();
        assert_eq!(one.values.iter().filter(|&&v| v == 255.0).count(), 1);
        assert!(render_event_map(&[], 3, 2).is_err());
    }

    #[test]
    fn negate_values_and_kind() {
        let f = frame(3, 1, |x, _| [255.0, 0.0, 94.0][x as usize], FrameKind::Ts);
        let n = negate(&f).unwrap();
        assert_eq!(n.values, vec![0.0, 255.0, 161.0]);
        assert_eq!(n.kind, FrameKind::NegativeTs);
        assert!(matches!(negate(&n), Err(Error::Kind(_))));
        assert_eq!(n.complemented(), f);
    }

    #[test]
    fn blur_constant_and_impulse() {
        let cfg = RepresentationConfig::default();
        let c = frame(9, 7, |_, _| 42.0, FrameKind::NegativeTs);
        let b = gaussian_blur(&c, &cfg).unwrap();
        assert!(b.values.iter().all(|v| (v - 42.0).abs() < 1e-9));
        assert!(b.blurred);

        let imp = frame(11, 11, |x, y| if (x, y) == (5, 5) { 255.0 } else { 0.0 }, FrameKind::NegativeEm);
        let b = gaussian_blur(&imp, &cfg).unwrap();
        let k = gaussian_kernel(5, 1.0);
        for dy in 0..5 {
            for dx in 0..5 {
                let v = b.at(3 + dx, 3 + dy);
                assert!((v - 255.0 * k[dx as usize] * k[dy as usize]).abs() < 1e-9);
            }
        }
        let total: f64 = b.values.iter().sum();
        assert!((total - 255.0).abs() < 1e-9);
        assert!(gaussian_blur(&frame(3, 3, |_, _| 0.0, FrameKind::Ts), &cfg).is_err());
    }

    #[test]
    fn blur_commutes_with_offset() {
        let cfg = RepresentationConfig::default();
        let f = frame(12, 9, |x, y| ((x * 7 + y * 13) % 23) as f64 * 5.0, FrameKind::NegativeTs);
        let g = frame(12, 9, |x, y| ((x * 7 + y * 13) % 23) as f64 * 5.0 + 20.0, FrameKind::NegativeTs);
        let bf = gaussian_blur(&f, &cfg).unwrap();
        let bg = gaussian_blur(&g, &cfg).unwrap();
        for (a, b) in bf.values.iter().zip(&bg.values) {
            assert!((b - a - 20.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bilinear_examples() {
        let f = frame(4, 3, |x, y| (x * 10 + y * 100) as f64, FrameKind::NegativeTs);
        assert_eq!(bilinear_sample(&f, &Vector2::new(2.0, 1.0)), Some(120.0));
        assert_eq!(bilinear_sample(&f, &Vector2::new(3.0, 2.0)), Some(230.0));
        let c = bilinear_sample(&f, &Vector2::new(1.5, 0.5)).unwrap();
        assert!((c - (10.0 + 20.0 + 110.0 + 120.0) / 4.0).abs() < 1e-12);
        assert_eq!(bilinear_sample(&f, &Vector2::new(-0.1, 1.0)), None);
        assert_eq!(bilinear_sample(&f, &Vector2::new(3.01, 1.0)), None);
    }

    #[test]
    fn gradient_examples() {
        let c = frame(6, 6, |_, _| 7.0, FrameKind::NegativeTs);
        assert_eq!(image_gradient(&c, &Vector2::new(2.3, 2.7)), Some(Vector2::zeros()));
        let ramp = frame(8, 6, |x, _| 3.0 * x as f64, FrameKind::NegativeTs);
        let g = image_gradient(&ramp, &Vector2::new(3.4, 2.2)).unwrap();
        assert!((g - Vector2::new(3.0, 0.0)).norm() < 1e-9);
        assert_eq!(image_gradient(&ramp, &Vector2::new(0.5, 2.0)), None);
        assert_eq!(image_gradient(&ramp, &Vector2::new(3.0, 4.5)), None);
    }

    #[test]
    fn pgm_dump() {
        let dir = tempfile::tempdir().unwrap();
        let f = frame(3, 2, |x, _| x as f64 * 100.0, FrameKind::Ts);
        let path = dir.path().join("f.pgm");
        f.write_pgm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 100, 200, 0, 100, 200]);
    }
}
