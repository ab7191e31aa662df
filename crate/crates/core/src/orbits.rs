//! Walker-Delta geometry: circular Keplerian propagation, chord distances,
//! elevation angles for ground visibility, and the fixed 4-neighbour ISL grid.
//!
//! Satellites use an Earth-centred inertial frame. Ground nodes are fixed on
//! the rotating Earth and are rotated into the inertial frame at query time
//! using the sidereal rate.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Standard gravitational parameter of the Earth, km^3/s^2.
pub const MU_EARTH_KM3_S2: f64 = 398_600.441_8;
pub const SIDEREAL_DAY_S: f64 = 86_164.0;

pub type Vec3 = [f64; 3];

pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstellationConfig {
    pub planes: u32,
    pub sats_per_plane: u32,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    /// Total right-ascension span over which the planes are spread.
    pub raan_spread_deg: f64,
    /// Walker phasing integer F.
    pub phasing_factor: u32,
    /// Offset added to simulation time before propagating.
    pub epoch_s: f64,
}

impl Default for ConstellationConfig {
    fn default() -> Self {
        Self {
            planes: 8,
            sats_per_plane: 20,
            altitude_km: 550.0,
            inclination_deg: 53.0,
            raan_spread_deg: 360.0,
            phasing_factor: 1,
            epoch_s: 0.0,
        }
    }
}

impl ConstellationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.planes == 0 {
            return Err(Error::config("constellation.planes", "must be >= 1"));
        }
        if self.sats_per_plane == 0 {
            return Err(Error::config("constellation.sats_per_plane", "must be >= 1"));
        }
        if !(self.altitude_km > 0.0) || !self.altitude_km.is_finite() {
            return Err(Error::config("constellation.altitude_km", "must be > 0"));
        }
        if !(self.inclination_deg > 0.0 && self.inclination_deg <= 180.0) {
            return Err(Error::config(
                "constellation.inclination_deg",
                "must be in (0, 180]",
            ));
        }
        if !self.raan_spread_deg.is_finite() || self.raan_spread_deg < 0.0 {
            return Err(Error::config("constellation.raan_spread_deg", "must be >= 0"));
        }
        if !self.epoch_s.is_finite() {
            return Err(Error::config("constellation.epoch_s", "must be finite"));
        }
        Ok(())
    }

    pub fn num_satellites(&self) -> usize {
        (self.planes * self.sats_per_plane) as usize
    }

    pub fn orbit_radius_km(&self) -> f64 {
        EARTH_RADIUS_KM + self.altitude_km
    }

    /// Circular mean motion in rad/s.
    pub fn mean_motion(&self) -> f64 {
        let a = self.orbit_radius_km();
        (MU_EARTH_KM3_S2 / (a * a * a)).sqrt()
    }

    pub fn orbital_period_s(&self) -> f64 {
        2.0 * PI / self.mean_motion()
    }

    /// Chord between consecutive satellites of one plane.
    pub fn intra_plane_spacing_km(&self) -> f64 {
        let gap = 2.0 * PI / self.sats_per_plane as f64;
        2.0 * self.orbit_radius_km() * (gap / 2.0).sin()
    }

    pub fn index_of(&self, id: SatId) -> usize {
        (id.plane * self.sats_per_plane + id.slot) as usize
    }

    pub fn id_of(&self, index: usize) -> SatId {
        let index = index as u32;
        SatId {
            plane: index / self.sats_per_plane,
            slot: index % self.sats_per_plane,
        }
    }
}

/// Plane index and in-plane slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SatId {
    pub plane: u32,
    pub slot: u32,
}

impl SatId {
    pub fn new(plane: u32, slot: u32) -> Self {
        Self { plane, slot }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatellitePosition {
    pub id: SatId,
    pub position_km: Vec3,
    pub time_s: f64,
}

/// Positions of every satellite at simulation time `t`, ordered by
/// `(plane, slot)` so that index `p * S + s` holds satellite `(p, s)`.
pub fn propagate(config: &ConstellationConfig, t: f64) -> Result<Vec<SatellitePosition>> {
    config.validate()?;
    if !(t >= 0.0) {
        return Err(Error::config("t", "propagation time must be >= 0"));
    }
    let planes = config.planes as f64;
    let per_plane = config.sats_per_plane as f64;
    let radius = config.orbit_radius_km();
    let inc = config.inclination_deg.to_radians();
    let (sin_i, cos_i) = inc.sin_cos();
    let advance = config.mean_motion() * (t + config.epoch_s);

    let mut out = Vec::with_capacity(config.num_satellites());
    for p in 0..config.planes {
        let raan = (p as f64 * config.raan_spread_deg / planes).to_radians();
        let (sin_o, cos_o) = raan.sin_cos();
        for s in 0..config.sats_per_plane {
            let phase_deg = s as f64 * (360.0 / per_plane)
                + p as f64 * config.phasing_factor as f64 * (360.0 / (planes * per_plane));
            let u = phase_deg.to_radians() + advance;
            let (sin_u, cos_u) = u.sin_cos();
            let position_km = [
                radius * (cos_o * cos_u - sin_o * sin_u * cos_i),
                radius * (sin_o * cos_u + cos_o * sin_u * cos_i),
                radius * (sin_u * sin_i),
            ];
            out.push(SatellitePosition {
                id: SatId::new(p, s),
                position_km,
                time_s: t,
            });
        }
    }
    Ok(out)
}

pub fn chord_distance(a: &Vec3, b: &Vec3) -> f64 {
    norm(&sub(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundKind {
    Gateway,
    UserTerminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundNode {
    /// Index within the ground segment (not the global node id).
    pub node_id: u32,
    pub kind: GroundKind,
    pub latitude_deg: f64,
    pub longitude_deg: f64,
}

impl GroundNode {
    pub fn new(node_id: u32, kind: GroundKind, latitude_deg: f64, longitude_deg: f64) -> Self {
        Self {
            node_id,
            kind,
            latitude_deg,
            longitude_deg,
        }
    }

    /// Earth-fixed position.
    pub fn position_km(&self) -> Vec3 {
        let (sin_lat, cos_lat) = self.latitude_deg.to_radians().sin_cos();
        let (sin_lon, cos_lon) = self.longitude_deg.to_radians().sin_cos();
        [
            EARTH_RADIUS_KM * cos_lat * cos_lon,
            EARTH_RADIUS_KM * cos_lat * sin_lon,
            EARTH_RADIUS_KM * sin_lat,
        ]
    }

    /// Position rotated into the inertial frame at time `t`.
    pub fn inertial_position_km(&self, t: f64) -> Vec3 {
        let theta = 2.0 * PI * t / SIDEREAL_DAY_S;
        let (s, c) = theta.sin_cos();
        let p = self.position_km();
        [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
    }
}

/// Elevation of `sat` above the local horizon of `ground` at time `t`, in degrees.
pub fn elevation_deg(ground: &GroundNode, sat: &SatellitePosition, t: f64) -> f64 {
    let g = ground.inertial_position_km(t);
    elevation_from(&g, &sat.position_km)
}

pub(crate) fn elevation_from(ground_km: &Vec3, sat_km: &Vec3) -> f64 {
    let los = sub(sat_km, ground_km);
    let range = norm(&los);
    if range == 0.0 {
        return 90.0;
    }
    let up = norm(ground_km);
    let sin_el = (dot(&los, ground_km) / (range * up)).clamp(-1.0, 1.0);
    sin_el.asin().to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkerNeighbors {
    pub east: SatId,
    pub west: SatId,
    pub forward: SatId,
    pub backward: SatId,
}

pub fn walker_neighbors(id: SatId, config: &ConstellationConfig) -> WalkerNeighbors {
    let p = config.planes;
    let s = config.sats_per_plane;
    WalkerNeighbors {
        east: SatId::new(id.plane, (id.slot + 1) % s),
        west: SatId::new(id.plane, (id.slot + s - 1) % s),
        forward: SatId::new((id.plane + 1) % p, id.slot),
        backward: SatId::new((id.plane + p - 1) % p, id.slot),
    }
}

/// Gateways and user terminals of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundSegment {
    #[serde(rename = "node")]
    pub nodes: Vec<GroundNode>,
}

impl GroundSegment {
    /// Seeded placement: gateways first, then user terminals, latitudes drawn
    /// uniformly in area within `±max_latitude_deg`.
    pub fn generate(gateways: usize, terminals: usize, max_latitude_deg: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sin_max = max_latitude_deg.to_radians().sin();
        let mut nodes = Vec::with_capacity(gateways + terminals);
        for i in 0..gateways + terminals {
            let kind = if i < gateways {
                GroundKind::Gateway
            } else {
                GroundKind::UserTerminal
            };
            let lat = rng.random_range(-sin_max..=sin_max).asin().to_degrees();
            let lon = rng.random_range(-180.0..180.0);
            nodes.push(GroundNode::new(i as u32, kind, lat, lon));
        }
        Self { nodes }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.node_id as usize != i {
                return Err(Error::config(
                    "ground.node_id",
                    format!("node ids must be 0..N in order, found {} at position {i}", n.node_id),
                ));
            }
            if !(-90.0..=90.0).contains(&n.latitude_deg) {
                return Err(Error::config("ground.latitude_deg", format!("node {i} out of range")));
            }
            if !n.longitude_deg.is_finite() {
                return Err(Error::config("ground.longitude_deg", format!("node {i} not finite")));
            }
        }
        let gw = self.nodes.iter().filter(|n| n.kind == GroundKind::Gateway).count();
        if gw == 0 || gw == self.nodes.len() {
            return Err(Error::config(
                "ground",
                "need at least one gateway and one user terminal",
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let seg: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        seg.validate()?;
        Ok(seg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("ground segment serializes")
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    fn table_one() -> ConstellationConfig {
        ConstellationConfig::default()
    }

    #[test]
    fn propagate_radius_and_count() {
        let cfg = table_one();
        let pos = propagate(&cfg, 0.0).unwrap();
        assert_eq!(pos.len(), 160);
        for p in &pos {
            assert_relative_eq!(norm(&p.position_km), 6921.0, max_relative = 1e-9);
        }
        assert_eq!(pos[cfg.index_of(SatId::new(3, 7))].id, SatId::new(3, 7));
    }

    #[test]
    fn orbital_period_matches_kepler() {
        // 2*pi*sqrt(6921^3 / 398600.4418)
        let t = table_one().orbital_period_s();
        assert!((t - 5730.127089).abs() < 1e-3, "{t}");
    }

    #[test]
    fn propagate_is_periodic() {
        let cfg = ConstellationConfig {
            phasing_factor: 3,
            ..table_one()
        };
        let period = cfg.orbital_period_s();
        let a = propagate(&cfg, 0.0).unwrap();
        let b = propagate(&cfg, period).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(chord_distance(&x.position_km, &y.position_km) < 1e-6);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let zero = ConstellationConfig {
            planes: 0,
            ..table_one()
        };
        assert!(matches!(propagate(&zero, 0.0), Err(Error::Config { .. })));
        let neg = ConstellationConfig {
            altitude_km: -5.0,
            ..table_one()
        };
        assert!(propagate(&neg, 0.0).is_err());
        assert!(propagate(&table_one(), -1.0).is_err());
    }

    #[test]
    fn chord_examples() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(chord_distance(&x, &x), 0.0);
        let d = chord_distance(&[6921.0, 0.0, 0.0], &[0.0, 6921.0, 0.0]);
        assert_relative_eq!(d, 6921.0 * 2f64.sqrt(), max_relative = 1e-12);
        assert!((d - 9787.77).abs() < 0.01);

        let cfg = table_one();
        let pos = propagate(&cfg, 123.0).unwrap();
        let d = chord_distance(&pos[0].position_km, &pos[1].position_km);
        assert!((d - 2165.366).abs() < 1e-3, "{d}");
        assert_relative_eq!(d, cfg.intra_plane_spacing_km(), max_relative = 1e-9);
    }

    #[test]
    fn elevation_examples() {
        let g = GroundNode::new(0, GroundKind::Gateway, 0.0, 0.0);
        let zenith = SatellitePosition {
            id: SatId::new(0, 0),
            position_km: [6921.0, 0.0, 0.0],
            time_s: 0.0,
        };
        assert_relative_eq!(elevation_deg(&g, &zenith, 0.0), 90.0, epsilon = 1e-9);

        let opposite = SatellitePosition {
            position_km: [-6921.0, 0.0, 0.0],
            ..zenith
        };
        assert!(elevation_deg(&g, &opposite, 0.0) < 0.0);

        // Central angle 10 deg: atan2(cos 10 - 6371/6921, sin 10) = 20.312 deg.
        let gamma = 10f64.to_radians();
        let north = SatellitePosition {
            position_km: [6921.0 * gamma.cos(), 0.0, 6921.0 * gamma.sin()],
            ..zenith
        };
        let el = elevation_deg(&g, &north, 0.0);
        assert!((el - 20.312_08).abs() < 1e-4, "{el}");
    }

    #[test]
    fn ground_rotates_with_earth() {
        let g = GroundNode::new(0, GroundKind::UserTerminal, 0.0, 0.0);
        let quarter = g.inertial_position_km(SIDEREAL_DAY_S / 4.0);
        assert!(quarter[0].abs() < 1e-6);
        assert_relative_eq!(quarter[1], EARTH_RADIUS_KM, max_relative = 1e-12);
        assert_relative_eq!(norm(&g.position_km()), EARTH_RADIUS_KM, max_relative = 1e-12);
    }

    #[test]
    fn neighbor_examples() {
        let cfg = table_one();
        let n = walker_neighbors(SatId::new(0, 0), &cfg);
        assert_eq!(n.east, SatId::new(0, 1));
        assert_eq!(n.west, SatId::new(0, 19));
        assert_eq!(n.forward, SatId::new(1, 0));
        assert_eq!(n.backward, SatId::new(7, 0));

        let n = walker_neighbors(SatId::new(7, 19), &cfg);
        assert_eq!(n.east, SatId::new(7, 0));
        assert_eq!(n.west, SatId::new(7, 18));
        assert_eq!(n.forward, SatId::new(0, 19));
        assert_eq!(n.backward, SatId::new(6, 19));

        let me = SatId::new(3, 5);
        let n = walker_neighbors(me, &cfg);
        let all = [n.east, n.west, n.forward, n.backward];
        for (i, a) in all.iter().enumerate() {
            assert_ne!(*a, me);
            for b in &all[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn generated_ground_is_seeded_and_valid() {
        let a = GroundSegment::generate(12, 50, 55.0, 42);
        let b = GroundSegment::generate(12, 50, 55.0, 42);
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.nodes.iter().filter(|n| n.kind == GroundKind::Gateway).count(), 12);
        for n in &a.nodes {
            assert!(n.latitude_deg.abs() <= 55.0);
            assert_relative_eq!(norm(&n.inertial_position_km(77.0)), EARTH_RADIUS_KM, max_relative = 1e-6);
        }
        let back: GroundSegment = toml::from_str(&a.to_toml()).unwrap();
        assert_eq!(back, a);
    }

    proptest! {
        #[test]
        fn radius_invariant(t in 0.0f64..1e5, planes in 1u32..10, spp in 1u32..25, f in 0u32..5,
                            h in 200.0f64..3000.0, inc in 1.0f64..180.0) {
            let cfg = ConstellationConfig { planes, sats_per_plane: spp, altitude_km: h,
                inclination_deg: inc, phasing_factor: f, ..table_one() };
            for p in propagate(&cfg, t).unwrap() {
                let r = norm(&p.position_km);
                prop_assert!((r - cfg.orbit_radius_km()).abs() / cfg.orbit_radius_km() < 1e-6);
            }
        }

        #[test]
        fn chord_symmetric_triangle(a in prop::array::uniform3(-1e4f64..1e4),
                                    b in prop::array::uniform3(-1e4f64..1e4),
                                    c in prop::array::uniform3(-1e4f64..1e4)) {
            let ab = chord_distance(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, chord_distance(&b, &a));
            prop_assert!(chord_distance(&a, &c) <= ab + chord_distance(&b, &c) + 1e-9);
        }

        #[test]
        fn neighbors_are_involutions(planes in 1u32..12, spp in 1u32..30, p in 0u32..12, s in 0u32..30) {
            let cfg = ConstellationConfig { planes, sats_per_plane: spp, ..table_one() };
            let id = SatId::new(p % planes, s % spp);
            let n = walker_neighbors(id, &cfg);
            prop_assert_eq!(walker_neighbors(n.east, &cfg).west, id);
            prop_assert_eq!(walker_neighbors(n.west, &cfg).east, id);
            prop_assert_eq!(walker_neighbors(n.forward, &cfg).backward, id);
            prop_assert_eq!(walker_neighbors(n.backward, &cfg).forward, id);
        }
    }
}
