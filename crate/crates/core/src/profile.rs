//! Drive profiles (`t,v_set,bpp,surface` CSV) and seeded fixture generators.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROFILE_HEADER: &str = "t,v_set,bpp,surface";

/// Mixed urban stop-and-go profile shipped with the crate.
pub const CITY_FIXTURE: &str = include_str!("../fixtures/city.csv");
/// Motorway profile with ACC engaged, shipped with the crate.
pub const HIGHWAY_FIXTURE: &str = include_str!("../fixtures/highway.csv");
/// Seeds the shipped fixtures were generated from.
pub const CITY_SEED: u64 = 7;
pub const HIGHWAY_SEED: u64 = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("profile row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("profile has no rows")]
    Empty,
    #[error("profile header must be '{PROFILE_HEADER}', got '{0}'")]
    Header(String),
    #[error("cannot read profile: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    /// Time (s).
    pub t: f64,
    /// Set speed (km/h).
    pub v_set: f64,
    /// Normalized brake pedal pressure.
    pub bpp: f64,
    pub surface: String,
}

/// Rows hold from their timestamp until the next one; `v_set` is linearly
/// interpolated between rows, pedal and surface are piecewise constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveProfile {
    rows: Vec<ProfileRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    pub v_set_kmh: f64,
    pub bpp: f64,
    /// Index of the active row.
    pub row: usize,
}

impl DriveProfile {
    pub fn new(rows: Vec<ProfileRow>) -> Result<Self, ProfileError> {
        if rows.is_empty() {
            return Err(ProfileError::Empty);
        }
        for (i, r) in rows.iter().enumerate() {
            let row = i + 1;
            let bad = |reason: String| ProfileError::Row { row, reason };
            if !r.t.is_finite() || (i == 0 && r.t < 0.0) {
                return Err(bad(format!("time {} invalid", r.t)));
            }
            if i > 0 && !(r.t > rows[i - 1].t) {
                return Err(bad(format!("time {} not after {}", r.t, rows[i - 1].t)));
            }
            if !(r.v_set >= 0.0 && r.v_set.is_finite()) {
                return Err(bad(format!("v_set {} must be non-negative", r.v_set)));
            }
            if !(0.0..=1.0).contains(&r.bpp) {
                return Err(bad(format!("bpp {} outside [0, 1]", r.bpp)));
            }
            if r.surface.trim().is_empty() {
                return Err(bad("empty surface name".into()));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ProfileRow] {
        &self.rows
    }

    pub fn start(&self) -> f64 {
        self.rows[0].t
    }

    pub fn end(&self) -> f64 {
        self.rows[self.rows.len() - 1].t
    }

    pub fn sample(&self, t: f64) -> ProfileSample {
        let i = match self.rows.partition_point(|r| r.t <= t) {
            0 => 0,
            k => k - 1,
        };
        let r = &self.rows[i];
        let v = match self.rows.get(i + 1) {
            Some(n) if t > r.t => r.v_set + (n.v_set - r.v_set) * (t - r.t) / (n.t - r.t),
            _ => r.v_set,
        };
        ProfileSample {
            v_set_kmh: v,
            bpp: r.bpp,
            row: i,
        }
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, ProfileError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| ProfileError::Io(e.to_string()))?.clone();
        let names: Vec<&str> = header.iter().collect();
        if names != ["t", "v_set", "bpp", "surface"] {
            return Err(ProfileError::Header(names.join(",")));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| ProfileError::Row {
                row,
                reason: e.to_string(),
            })?;
            let num = |k: usize, name: &str| -> Result<f64, ProfileError> {
                rec.get(k).unwrap_or("").parse::<f64>().map_err(|_| ProfileError::Row {
                    row,
                    reason: format!("bad {name} '{}'", rec.get(k).unwrap_or("")),
                })
            };
            rows.push(ProfileRow {
                t: num(0, "t")?,
                v_set: num(1, "v_set")?,
                bpp: num(2, "bpp")?,
                surface: rec.get(3).unwrap_or("").to_string(),
            });
        }
        Self::new(rows)
    }

    pub fn from_path(path: &Path) -> Result<Self, ProfileError> {
        let f = std::fs::File::open(path).map_err(|e| ProfileError::Io(format!("{}: {e}", path.display())))?;
        Self::from_reader(f)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{PROFILE_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.t, r.v_set, r.bpp, r.surface)?;
        }
        Ok(())
    }

    pub fn city_fixture() -> Self {
        Self::from_reader(CITY_FIXTURE.as_bytes()).expect("shipped city fixture parses")
    }

    pub fn highway_fixture() -> Self {
        Self::from_reader(HIGHWAY_FIXTURE.as_bytes()).expect("shipped highway fixture parses")
    }
}

fn round_to(x: f64, digits: i32) -> f64 {
    let k = 10f64.powi(digits);
    (x * k).round() / k
}

struct Builder {
    rows: Vec<ProfileRow>,
    t: f64,
}

impl Builder {
    fn push(&mut self, hold: f64, v_set: f64, bpp: f64, surface: &str) {
        self.rows.push(ProfileRow {
            t: round_to(self.t, 1),
            v_set: round_to(v_set, 1),
            bpp: round_to(bpp, 2),
            surface: surface.to_string(),
        });
        self.t += hold.max(0.5);
    }

    /// Holds `v_set` for the whole leg; interpolation then only ramps over
    /// the final half second.
    fn cruise(&mut self, hold: f64, v_set: f64, surface: &str) {
        self.push(hold - 0.5, v_set, 0.0, surface);
        self.push(0.5, v_set, 0.0, surface);
    }
}

/// Urban stop-and-go: cruise legs of 25-65 km/h separated by stops. Nearly
/// half of the stops are hard (pedal above 0.75); the pedal is held while
/// waiting at a stop.
pub fn generate_city(seed: u64, duration: f64) -> DriveProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        rows: Vec::new(),
        t: 0.0,
    };
    while b.t < duration {
        let surface = if rng.random_bool(0.25) { "wet" } else { "dry_asphalt" };
        let cruise = rng.random_range(25.0..65.0);
        b.cruise(rng.random_range(12.0..35.0), cruise, surface);
        if rng.random_bool(0.3) {
            // Slow down without stopping.
            b.push(
                rng.random_range(1.0..3.0),
                cruise * 0.5,
                rng.random_range(0.3..0.7),
                surface,
            );
            b.cruise(rng.random_range(5.0..12.0), cruise * 0.5, surface);
            continue;
        }
        let hard = rng.random_bool(0.45);
        let pedal = if hard {
            rng.random_range(0.78..0.95)
        } else {
            rng.random_range(0.3..0.7)
        };
        b.push(rng.random_range(3.0..6.0), 0.0, pedal, surface);
        b.push(rng.random_range(5.0..20.0), 0.0, rng.random_range(0.1..0.45), surface);
    }
    b.push(0.5, 0.0, 0.0, "dry_asphalt");
    DriveProfile::new(b.rows).expect("generated rows are valid")
}

/// Motorway driving at 100-160 km/h with occasional braking, some of it hard
/// and some above 140 km/h.
pub fn generate_highway(seed: u64, duration: f64) -> DriveProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        rows: Vec::new(),
        t: 0.0,
    };
    let mut cruise: f64 = 110.0;
    while b.t < duration {
        b.cruise(rng.random_range(20.0..50.0), cruise, "dry_asphalt");
        let r = rng.random_range(0.0..1.0);
        if r < 0.45 {
            cruise = rng.random_range(100.0..160.0);
        } else {
            let pedal = if r < 0.75 {
                rng.random_range(0.5..0.75)
            } else {
                rng.random_range(0.8..1.0)
            };
            let target = (cruise - rng.random_range(30.0..60.0)).max(60.0);
            b.push(rng.random_range(1.0..2.5), target, pedal, "dry_asphalt");
            b.push(
                rng.random_range(0.5..1.5),
                target,
                rng.random_range(0.05..0.2),
                "dry_asphalt",
            );
            cruise = rng.random_range(100.0..160.0);
        }
    }
    b.push(0.5, cruise, 0.0, "dry_asphalt");
    DriveProfile::new(b.rows).expect("generated rows are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_and_hold() {
        let p = DriveProfile::new(vec![
            ProfileRow {
                t: 0.0,
                v_set: 0.0,
                bpp: 0.0,
                surface: "dry".into(),
            },
            ProfileRow {
                t: 10.0,
                v_set: 100.0,
                bpp: 0.5,
                surface: "wet".into(),
            },
        ])
        .unwrap();
        let s = p.sample(5.0);
        assert_eq!((s.v_set_kmh, s.bpp, s.row), (50.0, 0.0, 0));
        let s = p.sample(12.0);
        assert_eq!((s.v_set_kmh, s.bpp, s.row), (100.0, 0.5, 1));
    }

    #[test]
    fn parse_errors_name_the_row() {
        let text = "t,v_set,bpp,surface\n0,10,0,dry\n1,x,0,dry\n";
        match DriveProfile::from_reader(text.as_bytes()) {
            Err(ProfileError::Row { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
        let text = "t,v_set,bpp,surface\n0,10,0,dry\n0,10,0,dry\n";
        assert!(matches!(
            DriveProfile::from_reader(text.as_bytes()),
            Err(ProfileError::Row { row: 2, .. })
        ));
        assert!(matches!(
            DriveProfile::from_reader("a,b\n".as_bytes()),
            Err(ProfileError::Header(_))
        ));
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(generate_city(3, 300.0), generate_city(3, 300.0));
        assert_ne!(generate_city(3, 300.0), generate_city(4, 300.0));
        assert_eq!(generate_highway(5, 300.0), generate_highway(5, 300.0));
    }

    #[test]
    fn csv_round_trip() {
        let p = generate_city(9, 200.0);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(DriveProfile::from_reader(buf.as_slice()).unwrap(), p);
    }
}
