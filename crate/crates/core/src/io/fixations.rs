//! Fixation lists: `azimuth_deg,elevation_deg[,weight]` per line. A leading
//! header line and `#` comments are skipped.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Direction;
use crate::metrics::{Fixation, FixationSet};
use crate::scalar::Real;

fn bad(line: u64, reason: impl std::fmt::Display) -> Error {
    Error::Format {
        format: "fixation CSV",
        reason: format!("line {line}: {reason}"),
    }
}

pub fn parse<T: Real>(text: &str) -> Result<FixationSet<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(i as u64 + 1, e))?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() < 2 || rec.len() > 3 {
            return Err(bad(line, format!("expected 2 or 3 fields, found {}", rec.len())));
        }
        let az: f64 = match rec[0].parse() {
            Ok(v) => v,
            Err(_) if points.is_empty() && i == 0 => continue,
            Err(_) => return Err(bad(line, format!("bad azimuth {:?}", &rec[0]))),
        };
        let el: f64 = rec[1]
            .parse()
            .map_err(|_| bad(line, format!("bad elevation {:?}", &rec[1])))?;
        let weight: f64 = match rec.get(2) {
            Some(w) => w.parse().map_err(|_| bad(line, format!("bad weight {w:?}")))?,
            None => 1.0,
        };
        if !(-180.0..180.0).contains(&az) {
            return Err(bad(line, format!("azimuth {az} outside [-180, 180)")));
        }
        if !(-90.0..=90.0).contains(&el) {
            return Err(bad(line, format!("elevation {el} outside [-90, 90]")));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(bad(line, format!("weight {weight} must be finite and >= 0")));
        }
        points.push(Fixation {
            direction: Direction::from_degrees(T::lit(az), T::lit(el)),
            weight: T::lit(weight),
        });
    }
    Ok(FixationSet::new(points))
}

pub fn read<T: Real>(path: impl AsRef<Path>) -> Result<FixationSet<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|e| e.in_sample(path.display()))
}

pub fn to_csv<T: Real>(fix: &FixationSet<T>) -> String {
    let mut out = String::from("azimuth_deg,elevation_deg,weight\n");
    for f in &fix.points {
        let az = f.direction.azimuth().to_f64_lossy().to_degrees();
        let el = f.direction.elevation().to_f64_lossy().to_degrees();
        out.push_str(&format!("{az},{el},{}\n", f.weight.to_f64_lossy()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_header_weights_and_comments() {
        let text = "azimuth_deg,elevation_deg,weight\n# a comment\n10, 20\n-180,-90,2.5\n\n179.5,90,0\n";
        let fix: FixationSet<f64> = parse(text).unwrap();
        assert_eq!(fix.len(), 3);
        assert!((fix.points[0].direction.azimuth() - 10f64.to_radians()).abs() < 1e-12);
        assert!((fix.points[0].direction.elevation() - 20f64.to_radians()).abs() < 1e-12);
        assert_eq!(fix.points[0].weight, 1.0);
        assert_eq!(fix.points[1].weight, 2.5);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(parse::<f64>("180,0\n").is_err());
        assert!(parse::<f64>("0,91\n").is_err());
        assert!(parse::<f64>("0,0,-1\n").is_err());
        assert!(parse::<f64>("0\n").is_err());
        assert!(parse::<f64>("1,2\nx,3\n").is_err());
    }

    #[test]
    fn round_trip() {
        let fix: FixationSet<f64> = parse("12.5,-30,1\n-100,45,0.5\n").unwrap();
        let back: FixationSet<f64> = parse(&to_csv(&fix)).unwrap();
        for (a, b) in fix.points.iter().zip(&back.points) {
            assert!(a.direction.angle_to(&b.direction) < 1e-12);
            assert_eq!(a.weight, b.weight);
        }
    }
}
