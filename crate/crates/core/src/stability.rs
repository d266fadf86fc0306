//! Stability labels: the displacement predicate applied to simulated
//! trajectories, plus two analytic oracles that never run the simulator.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::collide::{self, Contact, OrientedBox};
use crate::lp;
use crate::math::Vec3;
use crate::physics::Trajectory;
use crate::scene::{Scene, GEOMETRY_TOLERANCE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum StabilityLabel {
    Stable,
    Unstable,
}

impl StabilityLabel {
    pub fn is_stable(self) -> bool {
        self == StabilityLabel::Stable
    }
}

impl fmt::Display for StabilityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StabilityLabel::Stable => "stable",
            StabilityLabel::Unstable => "unstable",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StabilityConfig {
    /// Displacement threshold in meters.
    pub tau: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig { tau: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum StabilityError {
    #[error("trajectory lacks its start or end snapshot")]
    MissingEndpoint,
    #[error("blocks {a} and {b} touch but produce no usable contact manifold")]
    DegenerateContact { a: isize, b: usize },
    #[error("support graph is not a single column")]
    NotAChain,
    #[error("equilibrium solve failed: {0}")]
    Solver(#[from] lp::LpError),
}

/// A tower is unstable iff some block's center moved farther than `tau`
/// between the first and last snapshot.
pub fn label_from_trajectory(
    traj: &Trajectory,
    cfg: &StabilityConfig,
) -> Result<StabilityLabel, StabilityError> {
    let d = traj
        .displacements()
        .ok_or(StabilityError::MissingEndpoint)?;
    if d.iter().any(|&x| x > cfg.tau) {
        Ok(StabilityLabel::Unstable)
    } else {
        Ok(StabilityLabel::Stable)
    }
}

/// Contact-search margin for the static oracle.
const TOUCH_TOLERANCE: f64 = 1e-6;
/// Scaled residual below which the equilibrium problem counts as feasible.
const FEASIBILITY_TOLERANCE: f64 = 1e-9;

/// Static equilibrium as linear feasibility: find non-negative weights on the
/// four edges of a linearised friction pyramid at every contact point so that
/// each block's gravity force and torque are balanced.
pub fn static_equilibrium_check(scene: &Scene, mu: f64) -> Result<StabilityLabel, StabilityError> {
    if scene.blocks.is_empty() {
        return Ok(StabilityLabel::Stable);
    }
    let lp = equilibrium_system(scene, mu)?;
    let out = lp::phase_one(&lp.rows, &lp.rhs, lp.num_vars)?;
    Ok(if out.is_feasible(FEASIBILITY_TOLERANCE) {
        StabilityLabel::Stable
    } else {
        StabilityLabel::Unstable
    })
}

/// Linear system `rows * x = rhs, x >= 0` solved by [`static_equilibrium_check`].
#[derive(Clone, Debug)]
pub struct EquilibriumSystem {
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub num_vars: usize,
}

pub fn equilibrium_system(scene: &Scene, mu: f64) -> Result<EquilibriumSystem, StabilityError> {
    let n = scene.blocks.len();
    let boxes: Vec<OrientedBox> = scene.blocks.iter().map(|b| b.oriented_box()).collect();

    // (body a or -1 for ground, body b, contact)
    let mut contacts: Vec<(isize, usize, Contact)> = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        for c in collide::ground_manifold(b, TOUCH_TOLERANCE) {
            contacts.push((-1, i, c));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let sep = collide::separation(&boxes[i], &boxes[j]);
            if sep > TOUCH_TOLERANCE {
                continue;
            }
            let m = collide::box_box_manifold(&boxes[i], &boxes[j], TOUCH_TOLERANCE);
            if m.is_empty()
                || m.iter()
                    .any(|c| !c.normal.is_finite() || !c.point.is_finite())
            {
                return Err(StabilityError::DegenerateContact {
                    a: i as isize,
                    b: j,
                });
            }
            contacts.extend(m.into_iter().map(|c| (i as isize, j, c)));
        }
    }

    let masses: Vec<f64> = scene.blocks.iter().map(|b| b.dims.volume()).collect();
    let lengths: Vec<f64> = scene
        .blocks
        .iter()
        .map(|b| b.dims.half_extents.max_elem())
        .collect();
    let num_vars = contacts.len() * 4;
    let mut rows = vec![vec![0.0; num_vars]; 6 * n];
    let mut rhs = vec![0.0; 6 * n];
    for i in 0..n {
        // Weight is scaled out: forces in units of m*g, torques of m*g*L.
        rhs[6 * i + 2] = 1.0;
    }
    for (k, &(a, b, c)) in contacts.iter().enumerate() {
        let t1 = c.normal.any_orthonormal();
        let t2 = c.normal.cross(t1);
        let gens = [
            c.normal + t1 * mu,
            c.normal - t1 * mu,
            c.normal + t2 * mu,
            c.normal - t2 * mu,
        ];
        for (g, &dir) in gens.iter().enumerate() {
            let col = 4 * k + g;
            let mut add = |body: usize, f: Vec3| {
                let w = masses[body];
                let l = lengths[body];
                let torque = (c.point - scene.blocks[body].position).cross(f);
                for ax in 0..3 {
                    rows[6 * body + ax][col] += f[ax] / w;
                    rows[6 * body + 3 + ax][col] += torque[ax] / (w * l);
                }
            };
            add(b, dir);
            if a >= 0 {
                add(a as usize, -dir);
            }
        }
    }
    Ok(EquilibriumSystem {
        rows,
        rhs,
        num_vars,
    })
}

/// Support relation of an axis-aligned scene: for each block, the indices of
/// the blocks it rests on (`None` stands for the ground).
pub fn supports(scene: &Scene) -> Vec<Vec<Option<usize>>> {
    let bounds: Vec<(Vec3, Vec3)> = scene.blocks.iter().map(|b| b.aabb()).collect();
    bounds
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| {
            let mut s = Vec::new();
            if lo.z.abs() <= GEOMETRY_TOLERANCE {
                s.push(None);
            }
            for (j, &(l, h)) in bounds.iter().enumerate() {
                if j == i || (h.z - lo.z).abs() > GEOMETRY_TOLERANCE {
                    continue;
                }
                let w = hi.x.min(h.x) - lo.x.max(l.x);
                let d = hi.y.min(h.y) - lo.y.max(l.y);
                if w > 0.0 && d > 0.0 {
                    s.push(Some(j));
                }
            }
            s
        })
        .collect()
}

/// Center-of-mass test for single-column towers: at every interface the
/// combined COM of everything above must project strictly inside the contact
/// rectangle.
pub fn com_support_check(scene: &Scene) -> Result<StabilityLabel, StabilityError> {
    let n = scene.blocks.len();
    if n == 0 {
        return Ok(StabilityLabel::Stable);
    }
    let sup = supports(scene);
    let mut above: Vec<Option<usize>> = vec![None; n];
    let mut base = None;
    for (i, s) in sup.iter().enumerate() {
        if s.len() != 1 {
            return Err(StabilityError::NotAChain);
        }
        match s[0] {
            None => {
                if base.replace(i).is_some() {
                    return Err(StabilityError::NotAChain);
                }
            }
            Some(j) => {
                if above[j].replace(i).is_some() {
                    return Err(StabilityError::NotAChain);
                }
            }
        }
    }
    let mut chain = Vec::with_capacity(n);
    let mut cur = base.ok_or(StabilityError::NotAChain)?;
    loop {
        chain.push(cur);
        match above[cur] {
            Some(next) if chain.len() < n => cur = next,
            Some(_) => return Err(StabilityError::NotAChain),
            None => break,
        }
    }
    if chain.len() != n {
        return Err(StabilityError::NotAChain);
    }

    let bounds: Vec<(Vec3, Vec3)> = scene.blocks.iter().map(|b| b.aabb()).collect();
    for level in 0..n {
        let (mut mass, mut moment) = (0.0, Vec3::ZERO);
        for &b in &chain[level..] {
            let m = scene.blocks[b].dims.volume();
            mass += m;
            moment += scene.blocks[b].position * m;
        }
        let com = moment / mass;
        let (lo, hi) = bounds[chain[level]];
        let (rlo, rhi) = if level == 0 {
            (lo, hi)
        } else {
            let (sl, sh) = bounds[chain[level - 1]];
            (lo.max(sl), hi.min(sh))
        };
        let inside = com.x > rlo.x && com.x < rhi.x && com.y > rlo.y && com.y < rhi.y;
        if !inside {
            return Ok(StabilityLabel::Unstable);
        }
    }
    Ok(StabilityLabel::Stable)
}
