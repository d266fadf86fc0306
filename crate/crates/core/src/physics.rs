//! Deterministic rigid-body simulation of box towers.
//!
//! Each step is semi-implicit Euler with a sequential-impulse contact solver:
//! gravity is applied to velocities, contact and friction impulses are solved
//! iteratively (warm-started from the previous step), then positions and
//! orientations are integrated. Friction uses a box approximation of the
//! Coulomb cone (two tangent directions, each clamped to `mu * normal`).
//! Penetration is corrected with Baumgarte velocity bias above a small slop,
//! and speculative contacts stop fast bodies before they sink in.
//!
//! Bodies are processed in index order and contacts in generation order, so a
//! given scene and config always produce the same bits.

use alloc::string::String;
use alloc::vec::Vec;

use crate::collide::{self, Contact, OrientedBox};
use crate::math::{Mat3, Quat, Vec3};
use crate::scene::Scene;

/// Wood.
pub const DEFAULT_DENSITY: f64 = 600.0;
/// Speed (m/s) above which a step is treated as solver blow-up.
pub const DIVERGENCE_SPEED: f64 = 1e3;
/// Penetration tolerated before Baumgarte correction kicks in.
pub const PENETRATION_SLOP: f64 = 2e-4;
/// Contacts closer than this are generated speculatively.
pub const SPECULATIVE_MARGIN: f64 = 0.02;
/// Warm-start matching radius for contact points, in body-local meters.
const WARM_START_RADIUS: f64 = 5e-3;
/// Approach speed below which restitution is ignored.
const RESTITUTION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    /// Magnitude of gravity along `-z`.
    pub gravity: f64,
    pub friction_mu: f64,
    pub restitution: f64,
    pub solver_iterations: usize,
    pub baumgarte_beta: f64,
    pub density: f64,
    /// Record every k-th step into the trajectory history.
    pub record_every: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.001,
            duration: 2.0,
            gravity: 9.81,
            friction_mu: 0.5,
            restitution: 0.0,
            solver_iterations: 10,
            baumgarte_beta: 0.2,
            density: DEFAULT_DENSITY,
            record_every: None,
        }
    }
}

impl SimConfig {
    /// Number of steps covering `duration`.
    pub fn steps(&self) -> usize {
        libm::round(self.duration / self.dt) as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.duration / self.dt;
        let ok = self.dt > 0.0
            && self.duration >= 0.0
            && (n - libm::round(n)).abs() < 1e-6
            && (0.0..=1.0).contains(&self.restitution)
            && self.friction_mu >= 0.0
            && self.density > 0.0
            && self.baumgarte_beta >= 0.0
            && self.record_every != Some(0);
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidBodyState {
    pub position: Vec3,
    pub orientation: Quat,
    pub linear_velocity: Vec3,
    pub angular_velocity: Vec3,
    pub mass: f64,
    /// Principal moments of inertia in the body frame.
    pub inertia: Vec3,
}

impl RigidBodyState {
    /// A resting box of uniform `density`.
    pub fn for_box(position: Vec3, orientation: Quat, half: Vec3, density: f64) -> Self {
        let mass = density * 8.0 * half.x * half.y * half.z;
        let (x2, y2, z2) = (half.x * half.x, half.y * half.y, half.z * half.z);
        RigidBodyState {
            position,
            orientation,
            linear_velocity: Vec3::ZERO,
            angular_velocity: Vec3::ZERO,
            mass,
            inertia: Vec3::new(
                mass / 3.0 * (y2 + z2),
                mass / 3.0 * (x2 + z2),
                mass / 3.0 * (x2 + y2),
            ),
        }
    }

    fn world_inertia(&self, rot: &Mat3) -> Mat3 {
        rot.mul_mat(&Mat3::diagonal(self.inertia))
            .mul_mat(&rot.transpose())
    }

    fn world_inv_inertia(&self, rot: &Mat3) -> Mat3 {
        let inv = Vec3::new(
            1.0 / self.inertia.x,
            1.0 / self.inertia.y,
            1.0 / self.inertia.z,
        );
        rot.mul_mat(&Mat3::diagonal(inv)).mul_mat(&rot.transpose())
    }

    pub fn linear_momentum(&self) -> Vec3 {
        self.linear_velocity * self.mass
    }

    pub fn angular_momentum(&self) -> Vec3 {
        let rot = self.orientation.to_mat3();
        self.world_inertia(&rot).mul_vec(self.angular_velocity)
            + self.position.cross(self.linear_momentum())
    }

    pub fn kinetic_energy(&self) -> f64 {
        let rot = self.orientation.to_mat3();
        let l = self.world_inertia(&rot).mul_vec(self.angular_velocity);
        0.5 * self.mass * self.linear_velocity.length_squared() + 0.5 * self.angular_velocity.dot(l)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Body {
    pub state: RigidBodyState,
    pub half_extents: Vec3,
}

impl Body {
    pub fn oriented_box(&self) -> OrientedBox {
        OrientedBox::new(
            self.state.position,
            self.state.orientation,
            self.half_extents,
        )
    }
}

/// Ground is body index `GROUND`.
const GROUND: usize = usize::MAX;

#[derive(Clone, Copy, Debug)]
struct CachedImpulse {
    a: usize,
    b: usize,
    local_b: Vec3,
    normal: f64,
    friction: Vec3,
}

#[derive(Clone, Copy, Debug)]
struct ContactConstraint {
    a: usize,
    b: usize,
    normal: Vec3,
    t1: Vec3,
    t2: Vec3,
    ra: Vec3,
    rb: Vec3,
    normal_mass: f64,
    t1_mass: f64,
    t2_mass: f64,
    bias: f64,
    normal_impulse: f64,
    t1_impulse: f64,
    t2_impulse: f64,
    local_b: Vec3,
}

/// Velocity-level view of a body used inside the solver.
#[derive(Clone, Copy, Debug)]
struct SolverBody {
    v: Vec3,
    w: Vec3,
    inv_mass: f64,
    inv_inertia: Mat3,
}

impl SolverBody {
    fn fixed() -> Self {
        SolverBody {
            v: Vec3::ZERO,
            w: Vec3::ZERO,
            inv_mass: 0.0,
            inv_inertia: Mat3::diagonal(Vec3::ZERO),
        }
    }

    #[inline]
    fn velocity_at(&self, r: Vec3) -> Vec3 {
        self.v + self.w.cross(r)
    }

    #[inline]
    fn apply(&mut self, r: Vec3, impulse: Vec3) {
        self.v += impulse * self.inv_mass;
        self.w += self.inv_inertia.mul_vec(r.cross(impulse));
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("numerical divergence at step {step}: body {body} reached {speed} m/s")]
    NumericalDivergence {
        step: usize,
        body: usize,
        speed: f64,
    },
    #[error(
        "scene {scene_id}: numerical divergence at step {step}: body {body} reached {speed} m/s"
    )]
    SceneDiverged {
        scene_id: String,
        step: usize,
        body: usize,
        speed: f64,
    },
    #[error("invalid simulation config")]
    InvalidConfig,
}

/// A set of dynamic boxes above a static ground plane.
#[derive(Clone, Debug)]
pub struct World {
    pub bodies: Vec<Body>,
    /// Whether the ground plane and box/box contacts are active.
    pub contacts_enabled: bool,
    step_index: usize,
    cache: Vec<CachedImpulse>,
    last_contacts: Vec<(usize, usize, Contact)>,
}

impl World {
    pub fn new(bodies: Vec<Body>) -> Self {
        World {
            bodies,
            contacts_enabled: true,
            step_index: 0,
            cache: Vec::new(),
            last_contacts: Vec::new(),
        }
    }

    pub fn from_scene(scene: &Scene, density: f64) -> Self {
        let bodies = scene
            .blocks
            .iter()
            .map(|b| Body {
                state: RigidBodyState::for_box(
                    b.position,
                    b.orientation,
                    b.dims.half_extents,
                    density,
                ),
                half_extents: b.dims.half_extents,
            })
            .collect();
        World::new(bodies)
    }

    pub fn steps_taken(&self) -> usize {
        self.step_index
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.bodies.iter().map(|b| b.state.kinetic_energy()).sum()
    }

    /// Deepest penetration among the contacts of the current configuration.
    pub fn max_penetration(&self) -> f64 {
        self.collect_contacts(0.0)
            .iter()
            .map(|(_, _, c)| c.penetration)
            .fold(0.0, f64::max)
    }

    /// Contacts generated during the last step (`a == usize::MAX` is the ground).
    pub fn last_contacts(&self) -> &[(usize, usize, Contact)] {
        &self.last_contacts
    }

    fn collect_contacts(&self, margin: f64) -> Vec<(usize, usize, Contact)> {
        let mut out = Vec::new();
        if !self.contacts_enabled {
            return out;
        }
        let boxes: Vec<OrientedBox> = self.bodies.iter().map(Body::oriented_box).collect();
        let bounds: Vec<(Vec3, Vec3)> = boxes.iter().map(OrientedBox::aabb).collect();
        for (i, b) in boxes.iter().enumerate() {
            let mut m = collide::ground_manifold(b, margin);
            collide::reduce_manifold(&mut m);
            out.extend(m.into_iter().map(|c| (GROUND, i, c)));
        }
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                let (la, ha) = bounds[i];
                let (lb, hb) = bounds[j];
                let disjoint = (0..3).any(|k| la[k] > hb[k] + margin || lb[k] > ha[k] + margin);
                if disjoint {
                    continue;
                }
                let mut m = collide::box_box_manifold(&boxes[i], &boxes[j], margin);
                collide::reduce_manifold(&mut m);
                out.extend(m.into_iter().map(|c| (i, j, c)));
            }
        }
        out
    }

    fn solver_body(&self, i: usize) -> SolverBody {
        if i == GROUND {
            return SolverBody::fixed();
        }
        let s = &self.bodies[i].state;
        SolverBody {
            v: s.linear_velocity,
            w: s.angular_velocity,
            inv_mass: 1.0 / s.mass,
            inv_inertia: s.world_inv_inertia(&s.orientation.to_mat3()),
        }
    }

    fn warm_start_for(&self, a: usize, b: usize, local_b: Vec3) -> Option<&CachedImpulse> {
        self.cache
            .iter()
            .filter(|c| c.a == a && c.b == b)
            .find(|c| {
                (c.local_b - local_b).length_squared() < WARM_START_RADIUS * WARM_START_RADIUS
            })
    }

    /// Advance the world by one step of `config.dt`.
    pub fn step(&mut self, config: &SimConfig) -> Result<(), SimError> {
        let dt = config.dt;
        let gravity = Vec3::new(0.0, 0.0, -config.gravity);
        let mut sb: Vec<SolverBody> = (0..self.bodies.len())
            .map(|i| self.solver_body(i))
            .collect();
        for b in &mut sb {
            b.v += gravity * dt;
        }
        let ground = SolverBody::fixed();

        let contacts = self.collect_contacts(SPECULATIVE_MARGIN);
        let mut constraints: Vec<ContactConstraint> = Vec::with_capacity(contacts.len());
        for &(a, b, c) in &contacts {
            let pos_a = if a == GROUND {
                Vec3::ZERO
            } else {
                self.bodies[a].state.position
            };
            let body_b = &self.bodies[b].state;
            let ra = c.point - pos_a;
            let rb = c.point - body_b.position;
            let n = c.normal;
            let t1 = n.any_orthonormal();
            let t2 = n.cross(t1);
            let ba = if a == GROUND { &ground } else { &sb[a] };
            let bb = &sb[b];
            let eff = |dir: Vec3| -> f64 {
                let ka = ba.inv_mass + ra.cross(dir).dot(ba.inv_inertia.mul_vec(ra.cross(dir)));
                let kb = bb.inv_mass + rb.cross(dir).dot(bb.inv_inertia.mul_vec(rb.cross(dir)));
                let k = ka + kb;
                if k > 0.0 {
                    1.0 / k
                } else {
                    0.0
                }
            };
            let vn = n.dot(bb.velocity_at(rb) - ba.velocity_at(ra));
            let depth = c.penetration;
            let mut bias = if depth < 0.0 {
                depth / dt
            } else if depth > PENETRATION_SLOP {
                config.baumgarte_beta / dt * (depth - PENETRATION_SLOP)
            } else {
                0.0
            };
            if vn < -RESTITUTION_THRESHOLD && config.restitution > 0.0 {
                bias = bias.max(-config.restitution * vn);
            }
            let local_b = body_b.orientation.conjugate().rotate(rb);
            let (mut normal_impulse, mut t1_impulse, mut t2_impulse) = (0.0, 0.0, 0.0);
            if let Some(w) = self.warm_start_for(a, b, local_b) {
                normal_impulse = w.normal;
                t1_impulse = w.friction.dot(t1);
                t2_impulse = w.friction.dot(t2);
            }
            constraints.push(ContactConstraint {
                a,
                b,
                normal: n,
                t1,
                t2,
                ra,
                rb,
                normal_mass: eff(n),
                t1_mass: eff(t1),
                t2_mass: eff(t2),
                bias,
                normal_impulse,
                t1_impulse,
                t2_impulse,
                local_b,
            });
        }

        let pair = |sb: &[SolverBody], a: usize, b: usize| -> (SolverBody, SolverBody) {
            let ba = if a == GROUND { ground } else { sb[a] };
            (ba, sb[b])
        };
        let store =
            |sb: &mut Vec<SolverBody>, a: usize, b: usize, ba: SolverBody, bb: SolverBody| {
                if a != GROUND {
                    sb[a] = ba;
                }
                sb[b] = bb;
            };

        // Warm start.
        for c in &constraints {
            let (mut ba, mut bb) = pair(&sb, c.a, c.b);
            let p = c.normal * c.normal_impulse + c.t1 * c.t1_impulse + c.t2 * c.t2_impulse;
            ba.apply(c.ra, -p);
            bb.apply(c.rb, p);
            store(&mut sb, c.a, c.b, ba, bb);
        }

        for _ in 0..config.solver_iterations {
            for c in constraints.iter_mut() {
                let (mut ba, mut bb) = pair(&sb, c.a, c.b);

                let vrel = bb.velocity_at(c.rb) - ba.velocity_at(c.ra);
                let vn = vrel.dot(c.normal);
                let lambda = c.normal_mass * (c.bias - vn);
                let old = c.normal_impulse;
                c.normal_impulse = (old + lambda).max(0.0);
                let p = c.normal * (c.normal_impulse - old);
                ba.apply(c.ra, -p);
                bb.apply(c.rb, p);

                let limit = config.friction_mu * c.normal_impulse;
                for (dir, mass, acc) in [
                    (c.t1, c.t1_mass, &mut c.t1_impulse),
                    (c.t2, c.t2_mass, &mut c.t2_impulse),
                ] {
                    let vrel = bb.velocity_at(c.rb) - ba.velocity_at(c.ra);
                    let lambda = -mass * vrel.dot(dir);
                    let old = *acc;
                    *acc = (old + lambda).clamp(-limit, limit);
                    let p = dir * (*acc - old);
                    ba.apply(c.ra, -p);
                    bb.apply(c.rb, p);
                }
                store(&mut sb, c.a, c.b, ba, bb);
            }
        }

        self.cache = constraints
            .iter()
            .map(|c| CachedImpulse {
                a: c.a,
                b: c.b,
                local_b: c.local_b,
                normal: c.normal_impulse,
                friction: c.t1 * c.t1_impulse + c.t2 * c.t2_impulse,
            })
            .collect();
        self.last_contacts = contacts;

        for (i, (body, s)) in self.bodies.iter_mut().zip(&sb).enumerate() {
            let st = &mut body.state;
            let speed =
                s.v.length()
                    .max(s.w.length() * body.half_extents.max_elem());
            // Written negated so that NaN also counts as divergence.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(speed <= DIVERGENCE_SPEED) {
                return Err(SimError::NumericalDivergence {
                    step: self.step_index,
                    body: i,
                    speed,
                });
            }
            st.linear_velocity = s.v;
            st.position += s.v * dt;
            let old_rot = st.orientation.to_mat3();
            let momentum = st.world_inertia(&old_rot).mul_vec(s.w);
            st.orientation = st.orientation.integrate(s.w, dt);
            // Torque-free rotation conserves angular momentum, not angular velocity.
            let new_rot = st.orientation.to_mat3();
            st.angular_velocity = st.world_inv_inertia(&new_rot).mul_vec(momentum);
        }
        self.step_index += 1;
        Ok(())
    }
}

/// Position and orientation of one block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub step: usize,
    pub time: f64,
    pub poses: Vec<Pose>,
}

/// Block poses at the start and end of a run, plus optional history.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub scene_id: String,
    pub start: Option<Vec<Pose>>,
    pub end: Option<Vec<Pose>>,
    pub history: Vec<Frame>,
}

impl Trajectory {
    /// Per-block Euclidean center displacement between start and end.
    pub fn displacements(&self) -> Option<Vec<f64>> {
        let (s, e) = (self.start.as_ref()?, self.end.as_ref()?);
        Some(
            s.iter()
                .zip(e)
                .map(|(a, b)| (b.position - a.position).length())
                .collect(),
        )
    }
}

fn poses(world: &World) -> Vec<Pose> {
    world
        .bodies
        .iter()
        .map(|b| Pose {
            position: b.state.position,
            orientation: b.state.orientation,
        })
        .collect()
}

/// Run a scene for `config.duration` seconds.
pub fn simulate(scene: &Scene, config: &SimConfig) -> Result<Trajectory, SimError> {
    config.validate()?;
    let mut world = World::from_scene(scene, config.density);
    let steps = config.steps();
    let mut history = Vec::new();
    let record = |world: &World, step: usize, history: &mut Vec<Frame>| {
        history.push(Frame {
            step,
            time: step as f64 * config.dt,
            poses: poses(world),
        });
    };
    let start = poses(&world);
    if config.record_every.is_some() {
        record(&world, 0, &mut history);
    }
    for step in 1..=steps {
        world.step(config).map_err(|e| match e {
            SimError::NumericalDivergence { step, body, speed } => SimError::SceneDiverged {
                scene_id: scene.id.clone(),
                step,
                body,
                speed,
            },
            other => other,
        })?;
        if let Some(k) = config.record_every {
            if step % k == 0 && step != 0 {
                record(&world, step, &mut history);
            }
        }
    }
    Ok(Trajectory {
        scene_id: scene.id.clone(),
        start: Some(start),
        end: Some(poses(&world)),
        history,
    })
}
