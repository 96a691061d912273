//! Truncated Euclidean distance field on a regular voxel grid.
//!
//! Voxel `(i, j, k)` is centered at `origin + resolution * (i, j, k)`.
//! Obstacle points are snapped to their nearest voxel center; the stored value
//! is the exact Euclidean distance from each voxel center to the nearest
//! occupied voxel center, truncated at `d_trunc`. Distances are stored
//! row-major over `(x, y, z)`: the z index varies fastest.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::PointCloud;
use crate::error::{invalid, Error, Result};

/// Magic bytes of the binary field dump.
pub const ESDF_MAGIC: &[u8; 8] = b"PTESDF01";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    pub origin: Vector3<f64>,
    pub resolution: f64,
    pub dims: [usize; 3],
}

impl GridGeometry {
    pub fn new(origin: Vector3<f64>, resolution: f64, dims: [usize; 3]) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(invalid("grid resolution must be positive"));
        }
        if dims.iter().any(|&n| n < 2) {
            return Err(invalid(format!("grid dims must be >= 2, got {dims:?}")));
        }
        Ok(Self { origin, resolution, dims })
    }

    /// Smallest grid with the given resolution covering `[min, max]`.
    pub fn covering(min: Vector3<f64>, max: Vector3<f64>, resolution: f64) -> Result<Self> {
        let extent = max - min;
        let dims = std::array::from_fn(|a| ((extent[a] / resolution).ceil() as usize + 1).max(2));
        Self::new(min, resolution, dims)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.resolution
    }

    pub fn max_corner(&self) -> Vector3<f64> {
        self.center(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    /// Nearest voxel of `p`, or `None` outside the grid.
    pub fn nearest_voxel(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let u = ((p[a] - self.origin[a]) / self.resolution).round();
            if !(u >= 0.0 && u <= (self.dims[a] - 1) as f64) {
                return None;
            }
            out[a] = u as usize;
        }
        Some(out)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| {
            let u = (p[a] - self.origin[a]) / self.resolution;
            u >= 0.0 && u <= (self.dims[a] - 1) as f64
        })
    }
}

/// Result of a field lookup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EsdfSample {
    pub distance: f64,
    pub gradient: Vector3<f64>,
    /// The query was outside the grid and has been clamped onto it.
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EsdfGrid {
    geometry: GridGeometry,
    d_trunc: f64,
    distance: Vec<f64>,
}

/// Exact squared distance transform of one line (lower envelope of parabolas).
/// `f` holds squared distances in voxel units, `f64::INFINITY` for "far".
fn distance_transform_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                break;
            }
            let p = v[k as usize];
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = s;
            break;
        }
    }
    if k < 0 {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let last = k as usize;
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while k < last && z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

impl EsdfGrid {
    /// Field with every voxel at `d_trunc`.
    pub fn uniform(geometry: GridGeometry, d_trunc: f64) -> Self {
        Self { geometry, d_trunc, distance: vec![d_trunc; geometry.len()] }
    }

    /// Builds the field from obstacle points. Points outside the grid are ignored.
    pub fn build(cloud: &PointCloud, geometry: GridGeometry, d_trunc: f64) -> Result<Self> {
        if !(d_trunc > 0.0) {
            return Err(invalid("truncation distance must be positive"));
        }
        let [nx, ny, nz] = geometry.dims;
        let mut sq = vec![f64::INFINITY; geometry.len()];
        for p in cloud.points() {
            if let Some([i, j, k]) = geometry.nearest_voxel(p) {
                sq[geometry.index(i, j, k)] = 0.0;
            }
        }
        let longest = nx.max(ny).max(nz);
        let mut line = vec![0.0; longest];
        let mut out = vec![0.0; longest];
        let mut v = vec![0usize; longest];
        let mut z = vec![0.0; longest + 1];

        // z lines are contiguous.
        for i in 0..nx {
            for j in 0..ny {
                let base = geometry.index(i, j, 0);
                line[..nz].copy_from_slice(&sq[base..base + nz]);
                distance_transform_1d(&line[..nz], &mut out[..nz], &mut v, &mut z);
                sq[base..base + nz].copy_from_slice(&out[..nz]);
            }
        }
        for i in 0..nx {
            for k in 0..nz {
                for j in 0..ny {
                    line[j] = sq[geometry.index(i, j, k)];
                }
                distance_transform_1d(&line[..ny], &mut out[..ny], &mut v, &mut z);
                for j in 0..ny {
                    sq[geometry.index(i, j, k)] = out[j];
                }
            }
        }
        for j in 0..ny {
            for k in 0..nz {
                for i in 0..nx {
                    line[i] = sq[geometry.index(i, j, k)];
                }
                distance_transform_1d(&line[..nx], &mut out[..nx], &mut v, &mut z);
                for i in 0..nx {
                    sq[geometry.index(i, j, k)] = out[i];
                }
            }
        }
        let distance = sq.into_iter().map(|d2| (d2.sqrt() * geometry.resolution).min(d_trunc)).collect();
        Ok(Self { geometry, d_trunc, distance })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn d_trunc(&self) -> f64 {
        self.d_trunc
    }

    pub fn resolution(&self) -> f64 {
        self.geometry.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.distance
    }

    pub fn voxel(&self, i: usize, j: usize, k: usize) -> f64 {
        self.distance[self.geometry.index(i, j, k)]
    }

    /// Trilinear distance and its analytic gradient. On a shared cell face the
    /// derivative across the face is the average of both sides.
    pub fn query(&self, p: &Vector3<f64>) -> EsdfSample {
        let g = &self.geometry;
        let mut clamped = false;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut on_face = [false; 3];
        for a in 0..3 {
            let n = g.dims[a];
            let mut u = (p[a] - g.origin[a]) / g.resolution;
            if !(u >= 0.0 && u <= (n - 1) as f64) {
                clamped = true;
                u = if u.is_nan() { 0.0 } else { u.clamp(0.0, (n - 1) as f64) };
            }
            // Absorb round-off so node positions land exactly on the node.
            let r = u.round();
            if (u - r).abs() < 1e-9 {
                u = r;
            }
            let i0 = (u.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = u - i0 as f64;
            on_face[a] = frac[a] == 0.0 && i0 >= 1;
        }
        let [i0, j0, k0] = base;
        let [fx, fy, fz] = frac;
        let c = |di: usize, dj: usize, dk: usize| self.voxel(i0 + di, j0 + dj, k0 + dk);
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;

        let c00 = lerp(c(0, 0, 0), c(1, 0, 0), fx);
        let c10 = lerp(c(0, 1, 0), c(1, 1, 0), fx);
        let c01 = lerp(c(0, 0, 1), c(1, 0, 1), fx);
        let c11 = lerp(c(0, 1, 1), c(1, 1, 1), fx);
        let c0 = lerp(c00, c10, fy);
        let c1 = lerp(c01, c11, fy);
        let distance = lerp(c0, c1, fz);
        if clamped {
            return EsdfSample { distance, gradient: Vector3::zeros(), clamped };
        }

        let res = g.resolution;
        // Bilinear blend over the two axes other than `axis` of a per-corner difference.
        let blend = |axis: usize, diff: &dyn Fn(usize, usize, usize) -> f64| {
            let (o1, o2) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let mut acc = 0.0;
            for b1 in 0..2 {
                for b2 in 0..2 {
                    let w1 = if b1 == 1 { frac[o1] } else { 1.0 - frac[o1] };
                    let w2 = if b2 == 1 { frac[o2] } else { 1.0 - frac[o2] };
                    let mut idx = [0usize; 3];
                    idx[o1] = b1;
                    idx[o2] = b2;
                    acc += w1 * w2 * diff(idx[0], idx[1], idx[2]);
                }
            }
            acc
        };
        let gradient = Vector3::from_fn(|axis, _| {
            let step = |d: &[usize; 3]| {
                let mut hi = [i0 + d[0], j0 + d[1], k0 + d[2]];
                let lo = hi;
                hi[axis] += 1;
                self.voxel(hi[0], hi[1], hi[2]) - self.voxel(lo[0], lo[1], lo[2])
            };
            if on_face[axis] {
                blend(axis, &|a, b, cc| {
                    let mut hi = [i0 + a, j0 + b, k0 + cc];
                    let mut lo = hi;
                    hi[axis] += 1;
                    lo[axis] -= 1;
                    (self.voxel(hi[0], hi[1], hi[2]) - self.voxel(lo[0], lo[1], lo[2])) / 2.0
                }) / res
            } else {
                blend(axis, &|a, b, cc| step(&[a, b, cc])) / res
            }
        });
        EsdfSample { distance, gradient, clamped }
    }

    pub fn distance_at(&self, p: &Vector3<f64>) -> f64 {
        self.query(p).distance
    }

    /// Writes the documented binary dump: magic, origin (3 x f64), dims
    /// (3 x u64), resolution (f64), truncation (f64), then the distances as
    /// f32, all little-endian.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        let g = &self.geometry;
        w.write_all(ESDF_MAGIC)?;
        for a in 0..3 {
            w.write_all(&g.origin[a].to_le_bytes())?;
        }
        for a in 0..3 {
            w.write_all(&(g.dims[a] as u64).to_le_bytes())?;
        }
        w.write_all(&g.resolution.to_le_bytes())?;
        w.write_all(&self.d_trunc.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.distance.len() * 4);
        for d in &self.distance {
            buf.extend_from_slice(&(*d as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != ESDF_MAGIC {
            return Err(Error::Format("bad ESDF magic".into()));
        }
        let mut f8 = [0u8; 8];
        let mut read_f64 = |r: &mut dyn Read| -> Result<f64> {
            r.read_exact(&mut f8)?;
            Ok(f64::from_le_bytes(f8))
        };
        let origin = Vector3::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?);
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *d = usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("dims overflow".into()))?;
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let resolution = f64::from_le_bytes(b);
        r.read_exact(&mut b)?;
        let d_trunc = f64::from_le_bytes(b);
        let geometry = GridGeometry::new(origin, resolution, dims)?;
        let mut raw = vec![0u8; geometry.len() * 4];
        r.read_exact(&mut raw)?;
        let distance = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        Ok(Self { geometry, d_trunc, distance })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// True when every sample along the segment (spacing `resolution / 2`) is
/// farther than `threshold` from obstacles.
pub fn raycast(grid: &EsdfGrid, from: &Vector3<f64>, to: &Vector3<f64>, threshold: f64) -> bool {
    let delta = to - from;
    let step = 0.5 * grid.resolution();
    let n = ((delta.norm() / step).ceil() as usize).max(1);
    (0..=n).all(|k| grid.distance_at(&(from + delta * (k as f64 / n as f64))) > threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geometry(n: usize) -> GridGeometry {
        GridGeometry::new(Vector3::new(-1.0, -2.0, 0.5), 0.2, [n, n, n]).unwrap()
    }

    #[test]
    fn empty_cloud_is_uniform() {
        let grid = EsdfGrid::build(&PointCloud::empty(), geometry(8), 4.0).unwrap();
        assert!(grid.values().iter().all(|&d| d == 4.0));
        let s = grid.query(&Vector3::new(-0.5, -1.5, 1.0));
        assert_eq!(s.gradient, Vector3::zeros());
        assert!(!s.clamped);
    }

    #[test]
    fn single_point_distances() {
        let g = geometry(10);
        let p = g.center(4, 5, 6);
        let grid = EsdfGrid::build(&PointCloud::new(vec![p]).unwrap(), g, 4.0).unwrap();
        assert_eq!(grid.voxel(4, 5, 6), 0.0);
        assert!((grid.voxel(5, 5, 6) - 0.2).abs() < 1e-15);
        assert!((grid.voxel(4, 3, 6) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_geometry() {
        assert!(GridGeometry::new(Vector3::zeros(), 0.2, [1, 4, 4]).is_err());
        assert!(GridGeometry::new(Vector3::zeros(), 0.0, [4, 4, 4]).is_err());
    }

    #[test]
    fn voxel_center_query_uses_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = geometry(12);
        let pts: Vec<_> = (0..6).map(|_| g.center(rng.random_range(0..12), rng.random_range(0..12), rng.random_range(0..12))).collect();
        let grid = EsdfGrid::build(&PointCloud::new(pts).unwrap(), g, 4.0).unwrap();
        let (i, j, k) = (5, 6, 7);
        let s = grid.query(&g.center(i, j, k));
        assert!((s.distance - grid.voxel(i, j, k)).abs() < 1e-12);
        let cd = Vector3::new(
            grid.voxel(i + 1, j, k) - grid.voxel(i - 1, j, k),
            grid.voxel(i, j + 1, k) - grid.voxel(i, j - 1, k),
            grid.voxel(i, j, k + 1) - grid.voxel(i, j, k - 1),
        ) / (2.0 * g.resolution);
        assert!((s.gradient - cd).norm() < 1e-12, "{:?} vs {cd:?}", s.gradient);
    }

    #[test]
    fn out_of_bounds_is_clamped_and_flagged() {
        let g = geometry(6);
        let grid = EsdfGrid::build(&PointCloud::new(vec![g.center(0, 0, 0)]).unwrap(), g, 4.0).unwrap();
        let s = grid.query(&Vector3::new(-10.0, -2.0, 0.5));
        assert!(s.clamped);
        assert_eq!(s.gradient, Vector3::zeros());
        assert_eq!(s.distance, 0.0);
    }

    #[test]
    fn raycast_basic() {
        let g = GridGeometry::new(Vector3::zeros(), 0.2, [30, 30, 5]).unwrap();
        let empty = EsdfGrid::build(&PointCloud::empty(), g, 4.0).unwrap();
        assert!(raycast(&empty, &Vector3::new(0.2, 0.2, 0.4), &Vector3::new(5.0, 5.0, 0.4), 0.1));
        let wall = EsdfGrid::build(&PointCloud::new(vec![g.center(15, 15, 2)]).unwrap(), g, 4.0).unwrap();
        assert!(!raycast(&wall, &g.center(2, 15, 2), &g.center(28, 15, 2), 0.1));
    }

    #[test]
    fn binary_round_trip() {
        let g = geometry(5);
        let grid = EsdfGrid::build(&PointCloud::new(vec![g.center(1, 2, 3)]).unwrap(), g, 0.6).unwrap();
        let mut buf = Vec::new();
        grid.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..8], ESDF_MAGIC);
        assert_eq!(buf.len(), 8 + 24 + 24 + 16 + 4 * 125);
        let back = EsdfGrid::read_binary(&buf[..]).unwrap();
        assert_eq!(back.geometry(), grid.geometry());
        for (a, b) in back.values().iter().zip(grid.values()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert!(EsdfGrid::read_binary(&b"NOTESDF0"[..]).is_err());
    }
}
