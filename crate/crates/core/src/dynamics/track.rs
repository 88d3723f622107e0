use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{arg_error, Result};

/// Track features that hold from `start_pos_m` up to the next breakpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub start_pos_m: f64,
    /// Slope angle, positive uphill.
    pub slope_rad: f64,
    /// Curve radius; straight track uses a very large radius.
    pub curve_radius_m: f64,
    pub speed_limit_mps: f64,
}

/// Piecewise-constant track description indexed by position.
///
/// Positions before the first breakpoint use the first segment; the last
/// segment extends indefinitely.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackProfile {
    breakpoints: Vec<Breakpoint>,
}

/// Radius used to encode straight track.
pub const STRAIGHT: f64 = 1.0e12;

impl TrackProfile {
    pub fn new(breakpoints: Vec<Breakpoint>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(arg_error("track", "at least one breakpoint is required"));
        }
        for (i, b) in breakpoints.iter().enumerate() {
            if !(b.start_pos_m.is_finite() && b.slope_rad.is_finite()) {
                return Err(arg_error("track", format!("row {i}: non-finite position or slope")));
            }
            if !(b.curve_radius_m > 0.0) {
                return Err(arg_error("track", format!("row {i}: curve radius must be > 0")));
            }
            if !(b.speed_limit_mps > 0.0) || !b.speed_limit_mps.is_finite() {
                return Err(arg_error("track", format!("row {i}: speed limit must be > 0")));
            }
        }
        if let Some(i) =
            breakpoints.windows(2).position(|w| !(w[1].start_pos_m > w[0].start_pos_m))
        {
            return Err(arg_error(
                "track",
                format!("breakpoints must be strictly increasing (rows {i} and {})", i + 1),
            ));
        }
        Ok(TrackProfile { breakpoints })
    }

    /// Level, straight track with a single speed limit.
    pub fn flat(speed_limit_mps: f64) -> Self {
        TrackProfile {
            breakpoints: vec![Breakpoint {
                start_pos_m: 0.0,
                slope_rad: 0.0,
                curve_radius_m: STRAIGHT,
                speed_limit_mps,
            }],
        }
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.breakpoints
    }

    /// Segment in force at `position`.
    pub fn at(&self, position: f64) -> &Breakpoint {
        let idx = self.breakpoints.partition_point(|b| b.start_pos_m <= position);
        &self.breakpoints[idx.saturating_sub(1)]
    }

    pub fn max_speed_limit(&self) -> f64 {
        self.breakpoints.iter().map(|b| b.speed_limit_mps).fold(0.0, f64::max)
    }

    /// Reads the delimited track format: a header row followed by
    /// `start_pos_m, slope_rad, curve_radius_m, speed_limit_mps` rows.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| arg_error("track", e.to_string()))?.clone();
        let expected = ["start_pos_m", "slope_rad", "curve_radius_m", "speed_limit_mps"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(arg_error(
                "track",
                format!("header must be `{}`, found `{}`", expected.join(", "), headers.iter().collect::<Vec<_>>().join(", ")),
            ));
        }
        let mut breakpoints = Vec::new();
        for (i, row) in rdr.deserialize::<Breakpoint>().enumerate() {
            breakpoints.push(row.map_err(|e| arg_error("track", format!("row {}: {e}", i + 1)))?);
        }
        Self::new(breakpoints)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| arg_error("track", format!("{}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for b in &self.breakpoints {
            w.serialize(b).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf8 csv")
    }
}
