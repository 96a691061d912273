use std::collections::HashSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{invalid, Error, Result};

/// World-frame obstacle points in meters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(invalid(format!("non-finite point {p:?}")));
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Keeps the first point of every `resolution`-sized cell.
    pub fn deduplicated(&self, resolution: f64) -> Self {
        let mut seen = HashSet::with_capacity(self.points.len());
        let points = self
            .points
            .iter()
            .filter(|p| {
                let key = (
                    (p.x / resolution).round() as i64,
                    (p.y / resolution).round() as i64,
                    (p.z / resolution).round() as i64,
                );
                seen.insert(key)
            })
            .copied()
            .collect();
        Self { points }
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }

    /// Writes one `x y z` line per point.
    pub fn write_text(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for p in &self.points {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses whitespace-separated `x y z` lines; blank lines and `#` comments are skipped.
    pub fn read_text(reader: impl BufRead) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
            if fields.len() != 3 {
                return Err(Error::Format(format!("line {}: expected 3 values, got {}", lineno + 1, fields.len())));
            }
            points.push(Vector3::new(fields[0], fields[1], fields[2]));
        }
        Self::new(points)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_text(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_text(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cloud = PointCloud::new(vec![Vector3::new(0.1, -2.5, 3.0), Vector3::new(1e-9, 7.25, -0.0)]).unwrap();
        let mut buf = Vec::new();
        cloud.write_text(&mut buf).unwrap();
        let back = PointCloud::read_text(&buf[..]).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(PointCloud::read_text("1 2\n".as_bytes()).is_err());
        assert!(PointCloud::read_text("1 2 x\n".as_bytes()).is_err());
        assert!(PointCloud::read_text("# header\n\n1 2 3\n".as_bytes()).unwrap().len() == 1);
        assert!(PointCloud::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn dedup_within_resolution() {
        let cloud = PointCloud::new(vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.04, 0.0, 0.0),
            Vector3::new(0.2, 0.0, 0.0),
        ])
        .unwrap();
        assert_eq!(cloud.deduplicated(0.2).len(), 2);
    }
}
