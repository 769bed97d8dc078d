//! Random waypoint mobility inside a circular cell and the straight-leg
//! distance trajectory used by the update-interval analysis.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Vec3;
use crate::error::{Error, Result};

/// Polar start state of one UE relative to its cell centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeState {
    pub r0: f64,
    /// π minus the angle between the initial position vector and the
    /// velocity; 0 heads straight for the cell centre.
    pub theta: f64,
    pub speed: f64,
    pub cell_radius: f64,
}

impl UeState {
    pub fn new(r0: f64, theta: f64, speed: f64, cell_radius: f64) -> Result<Self> {
        if !(cell_radius > 0.0) {
            return Err(Error::param("cell_radius", "must be positive"));
        }
        if !(0.0..=cell_radius).contains(&r0) {
            return Err(Error::param("r0", format!("must lie in [0, {cell_radius}]")));
        }
        if !(0.0..=PI).contains(&theta) {
            return Err(Error::param("theta", "must lie in [0, π]"));
        }
        if !(speed >= 0.0 && speed.is_finite()) {
            return Err(Error::param("speed", "must be non-negative"));
        }
        Ok(UeState {
            r0,
            theta,
            speed,
            cell_radius,
        })
    }

    pub fn radial_distance_at(&self, t: f64) -> f64 {
        radial_distance_at(self, t)
    }

    /// AP–UE distance for vertical separation `h`.
    pub fn distance_at(&self, t: f64, h: f64) -> f64 {
        let r = self.radial_distance_at(t);
        (r * r + h * h).sqrt()
    }

    /// Time at which the straight leg leaves the cell disc; infinite when
    /// stationary.
    pub fn exit_time(&self) -> f64 {
        if self.speed == 0.0 {
            return f64::INFINITY;
        }
        let (s, c) = self.theta.sin_cos();
        let rc = self.cell_radius;
        let disc = (rc * rc - self.r0 * self.r0 * s * s).max(0.0);
        (self.r0 * c + disc.sqrt()) / self.speed
    }
}

/// Draws `(r0, θ)` with densities `2r0/r_c²` and `1/π`.
pub fn sample_initial<R: Rng + ?Sized>(rng: &mut R, cell_radius: f64) -> (f64, f64) {
    let u: f64 = rng.random();
    let r0 = cell_radius * u.sqrt();
    let theta = rng.random::<f64>() * PI;
    (r0, theta)
}

pub fn radial_distance_at(state: &UeState, t: f64) -> f64 {
    let vt = state.speed * t;
    let sq = state.r0 * state.r0 + vt * vt - 2.0 * state.r0 * vt * state.theta.cos();
    sq.max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RwpTriple {
    pub prev_waypoint: Vec3,
    pub next_waypoint: Vec3,
    pub velocity: f64,
}

impl RwpTriple {
    pub fn travel_time(&self) -> f64 {
        (self.next_waypoint - self.prev_waypoint).norm() / self.velocity
    }
}

/// Uniform point on the disc of radius `r` centred at the origin, `z = 0`.
pub fn uniform_in_disc<R: Rng + ?Sized>(rng: &mut R, r: f64) -> Vec3 {
    let rad = r * rng.random::<f64>().sqrt();
    let phi = 2.0 * PI * rng.random::<f64>();
    Vec3::new(rad * phi.cos(), rad * phi.sin(), 0.0)
}

/// `n_legs` consecutive legs between i.i.d. uniform waypoints on the disc.
pub fn rwp_sequence<R: Rng + ?Sized>(
    rng: &mut R,
    cell_radius: f64,
    speed: f64,
    n_legs: usize,
) -> Result<Vec<RwpTriple>> {
    if n_legs == 0 {
        return Err(Error::param("n_legs", "must be at least 1"));
    }
    if !(speed > 0.0) {
        return Err(Error::param("speed", "must be positive"));
    }
    let mut prev = uniform_in_disc(rng, cell_radius);
    let mut legs = Vec::with_capacity(n_legs);
    for _ in 0..n_legs {
        let next = uniform_in_disc(rng, cell_radius);
        legs.push(RwpTriple {
            prev_waypoint: prev,
            next_waypoint: next,
            velocity: speed,
        });
        prev = next;
    }
    Ok(legs)
}

/// Piecewise-linear position along a leg sequence.
#[derive(Debug, Clone)]
pub struct Trajectory {
    legs: Vec<RwpTriple>,
    ends: Vec<f64>,
}

impl Trajectory {
    pub fn new(legs: Vec<RwpTriple>) -> Self {
        let mut t = 0.0;
        let ends = legs
            .iter()
            .map(|l| {
                t += l.travel_time();
                t
            })
            .collect();
        Trajectory { legs, ends }
    }

    pub fn duration(&self) -> f64 {
        self.ends.last().copied().unwrap_or(0.0)
    }

    /// Position at time `t`, clamped to the final waypoint past the end.
    pub fn position_at(&self, t: f64) -> Vec3 {
        let i = self.ends.partition_point(|&e| e < t);
        if i >= self.legs.len() {
            return self.legs.last().map(|l| l.next_waypoint).unwrap_or_default();
        }
        let start = if i == 0 { 0.0 } else { self.ends[i - 1] };
        let leg = &self.legs[i];
        let dur = self.ends[i] - start;
        let frac = if dur > 0.0 { (t - start) / dur } else { 1.0 };
        leg.prev_waypoint + (leg.next_waypoint - leg.prev_waypoint) * frac
    }
}
