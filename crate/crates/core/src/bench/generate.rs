use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::aggregation::{Pose, Sweep, SweepSequence};
use crate::geometry::{iou_bev, wrap_angle, Box3D, ObjectClass, Point, PointCloud};
use crate::scene::DenseScene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub count: usize,
    /// Probability that an instance moves.
    pub moving_fraction: f64,
    /// Speed range of movers (m/s).
    pub speed: [f64; 2],
    /// Nominal size `[l, w, h]`.
    pub size: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClutterSpec {
    /// 0.2 x 0.2 x 3 m posts.
    pub poles: usize,
    /// 8 x 0.3 x 1.5 m walls.
    pub walls: usize,
    /// 1.5 x 1.5 x 1 m bushes.
    pub bushes: usize,
}

impl Default for ClutterSpec {
    fn default() -> Self {
        Self { poles: 4, walls: 2, bushes: 3 }
    }
}

/// Ground plane `z = height + slope[0] * x + slope[1] * y` in world
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundSpec {
    pub height: f64,
    pub slope: [f64; 2],
}

impl GroundSpec {
    pub fn z_at(&self, x: f64, y: f64) -> f64 {
        self.height + self.slope[0] * x + self.slope[1] * y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub vehicle: ClassSpec,
    pub pedestrian: ClassSpec,
    pub cyclist: ClassSpec,
    pub clutter: ClutterSpec,
    pub ground: GroundSpec,
    pub sensor_range: f64,
    /// Objects are placed between `min_range` and `object_range`.
    pub min_range: f64,
    pub object_range: f64,
    /// Minimum BEV distance between object centers.
    pub min_spacing: f64,
    /// Surface density (points / m^2) at 10 m; falls off as `(10 / d)^2`.
    pub density_at_10m: f64,
    pub ground_density_factor: f64,
    /// Lowest part of an object that returns points, above its bottom face.
    pub ground_clearance: f64,
    /// Relative per-instance size variation.
    pub size_jitter: f64,
    pub noise_sigma: f64,
    /// Per-sweep probability that a point is missing.
    pub dropout: f64,
    pub sweep_interval: f64,
    /// Context sweeps on each side of a frame.
    pub context: usize,
    pub frames: usize,
    pub ego_speed: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            vehicle: ClassSpec { count: 8, moving_fraction: 0.5, speed: [10.0, 14.0], size: [4.7, 1.9, 1.7] },
            pedestrian: ClassSpec { count: 4, moving_fraction: 0.0, speed: [1.0, 1.5], size: [0.8, 0.8, 1.7] },
            cyclist: ClassSpec { count: 3, moving_fraction: 0.5, speed: [5.0, 7.0], size: [1.8, 0.7, 1.7] },
            clutter: ClutterSpec::default(),
            ground: GroundSpec::default(),
            sensor_range: 60.0,
            min_range: 5.0,
            object_range: 45.0,
            min_spacing: 4.0,
            density_at_10m: 50.0,
            ground_density_factor: 0.3,
            ground_clearance: 0.35,
            size_jitter: 0.05,
            noise_sigma: 0.02,
            dropout: 0.05,
            sweep_interval: 0.2,
            context: 2,
            frames: 1,
            ego_speed: 0.0,
            seed: 7,
        }
    }
}

impl SceneSpec {
    pub fn with_objects(vehicles: usize, pedestrians: usize, cyclists: usize) -> Self {
        let mut s = Self::default();
        s.vehicle.count = vehicles;
        s.pedestrian.count = pedestrians;
        s.cyclist.count = cyclists;
        s
    }

    pub fn class_spec(&self, class: ObjectClass) -> Option<&ClassSpec> {
        match class {
            ObjectClass::Vehicle => Some(&self.vehicle),
            ObjectClass::Pedestrian => Some(&self.pedestrian),
            ObjectClass::Cyclist => Some(&self.cyclist),
            ObjectClass::Unknown => None,
        }
    }

    pub fn sweep_count(&self) -> usize {
        self.frames + 2 * self.context
    }

    /// Surface density at range `d`.
    pub fn density(&self, d: f64) -> f64 {
        self.density_at_10m * (10.0 / d.max(10.0)).powi(2)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let mut bad = Vec::new();
        for (name, c) in [("vehicle", &self.vehicle), ("pedestrian", &self.pedestrian), ("cyclist", &self.cyclist)] {
            if !(0.0..=1.0).contains(&c.moving_fraction) {
                bad.push(format!("{name}.moving_fraction"));
            }
            if !(c.speed[0] >= 0.0 && c.speed[1] >= c.speed[0]) {
                bad.push(format!("{name}.speed"));
            }
            if c.size.iter().any(|v| !(*v > 0.0)) {
                bad.push(format!("{name}.size"));
            }
        }
        if !(self.sensor_range > 0.0) {
            bad.push("sensor_range".into());
        }
        if !(self.min_range >= 0.0 && self.object_range > self.min_range && self.object_range <= self.sensor_range) {
            bad.push("object_range".into());
        }
        if !(self.min_spacing >= 0.0) {
            bad.push("min_spacing".into());
        }
        if !(self.density_at_10m > 0.0) {
            bad.push("density_at_10m".into());
        }
        if !(self.ground_density_factor >= 0.0) {
            bad.push("ground_density_factor".into());
        }
        if !(self.ground_clearance >= 0.0) {
            bad.push("ground_clearance".into());
        }
        if !(0.0..0.5).contains(&self.size_jitter) {
            bad.push("size_jitter".into());
        }
        if !(self.noise_sigma >= 0.0) {
            bad.push("noise_sigma".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bad.push("dropout".into());
        }
        if !(self.sweep_interval > 0.0) {
            bad.push("sweep_interval".into());
        }
        if self.frames == 0 {
            bad.push("frames".into());
        }
        if !self.ego_speed.is_finite() {
            bad.push("ego_speed".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(BenchError::Spec(bad))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointKind {
    Ground,
    Object,
    Clutter,
}

/// Generator ground truth for a single point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointTruth {
    pub kind: PointKind,
    /// Index into [`Drive::objects`] for object points.
    pub object: Option<usize>,
    pub moving: bool,
}

/// A placed object in world coordinates at the drive's reference time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub bbox: Box3D,
    pub velocity: [f64; 2],
}

impl WorldObject {
    pub fn is_moving(&self) -> bool {
        self.velocity != [0.0, 0.0]
    }

    pub fn at(&self, dt: f64) -> Box3D {
        let mut b = self.bbox;
        b.x += self.velocity[0] * dt;
        b.y += self.velocity[1] * dt;
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSweep {
    pub cloud: PointCloud,
    pub pose: Pose,
    pub truth: Vec<PointTruth>,
    /// Truth boxes in this sweep's sensor frame.
    pub boxes: Vec<Box3D>,
    /// Object index of each truth box.
    pub box_objects: Vec<usize>,
}

/// Consecutive sweeps of one synthetic drive.
#[derive(Debug, Clone, PartialEq)]
pub struct Drive {
    pub spec: SceneSpec,
    pub objects: Vec<WorldObject>,
    pub sweeps: Vec<GeneratedSweep>,
}

/// One frame: `2 * context + 1` sweeps centered on the frame's sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub frame_id: u32,
    pub sweeps: Vec<GeneratedSweep>,
    pub context: usize,
}

impl GeneratedScene {
    pub fn center(&self) -> &GeneratedSweep {
        &self.sweeps[self.context]
    }

    pub fn truth(&self) -> &[Box3D] {
        &self.center().boxes
    }

    /// The frame's sweeps as an aggregation input.
    pub fn sequence(&self) -> Result<SweepSequence, BenchError> {
        let sweeps = self.sweeps.iter().map(|s| Sweep { cloud: s.cloud.clone(), pose: s.pose }).collect();
        Ok(SweepSequence::new(sweeps)?)
    }

    /// The center sweep alone, without any filtering.
    pub fn center_scene(&self) -> DenseScene {
        DenseScene::new(self.center().cloud.clone())
    }
}

impl Drive {
    pub fn frame_count(&self) -> usize {
        self.spec.frames
    }

    pub fn frame(&self, k: usize) -> GeneratedScene {
        let c = self.spec.context;
        GeneratedScene {
            frame_id: self.sweeps[k + c].cloud.frame_id,
            sweeps: self.sweeps[k..k + 2 * c + 1].to_vec(),
            context: c,
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = GeneratedScene> + '_ {
        (0..self.frame_count()).map(|k| self.frame(k))
    }

    pub fn truth(&self) -> Vec<Vec<Box3D>> {
        self.frames().map(|f| f.truth().to_vec()).collect()
    }
}

/// A point rigidly attached to an object or to the world, with the outward
/// normal of the face it lies on (zero for always-visible points).
#[derive(Debug, Clone, Copy)]
struct SurfacePoint {
    local: [f64; 3],
    normal: [f64; 2],
    intensity: f64,
}

fn sample_faces(rng: &mut ChaCha8Rng, b: &Box3D, clearance: f64, density: f64, intensity: f64) -> Vec<SurfacePoint> {
    let (hl, hw) = (b.l / 2.0, b.w / 2.0);
    let z0 = -b.h / 2.0 + clearance.min(0.5 * b.h);
    let z1 = b.h / 2.0;
    let vis_h = z1 - z0;
    let mut out = Vec::new();
    let mut face = |rng: &mut ChaCha8Rng, area: f64, normal: [f64; 2], at: &dyn Fn(f64, f64) -> [f64; 3]| {
        let n = Poisson::new(density * area).map(|p| p.sample(rng) as usize).unwrap_or(0);
        for _ in 0..n {
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            out.push(SurfacePoint { local: at(u, v), normal, intensity: intensity + 0.1 * (rng.random::<f64>() - 0.5) });
        }
    };
    face(rng, b.w * vis_h, [1.0, 0.0], &|u, v| [hl, -hw + u * b.w, z0 + v * vis_h]);
    face(rng, b.w * vis_h, [-1.0, 0.0], &|u, v| [-hl, -hw + u * b.w, z0 + v * vis_h]);
    face(rng, b.l * vis_h, [0.0, 1.0], &|u, v| [-hl + u * b.l, hw, z0 + v * vis_h]);
    face(rng, b.l * vis_h, [0.0, -1.0], &|u, v| [-hl + u * b.l, -hw, z0 + v * vis_h]);
    face(rng, b.l * b.w, [0.0, 0.0], &|u, v| [-hl + u * b.l, -hw + v * b.w, z1]);
    out
}

fn to_world(b: &Box3D, p: &SurfacePoint) -> ([f64; 3], [f64; 2]) {
    let (s, c) = b.yaw.sin_cos();
    let [u, v, w] = p.local;
    let world = [b.x + c * u - s * v, b.y + s * u + c * v, b.z + w];
    let n = [c * p.normal[0] - s * p.normal[1], s * p.normal[0] + c * p.normal[1]];
    (world, n)
}

struct Body {
    object: Option<usize>,
    kind: PointKind,
    world: WorldObject,
    points: Vec<SurfacePoint>,
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Simulates a drive: static world geometry and objects are sampled once and
/// re-observed by every sweep with noise and dropout; movers advance with
/// constant velocity; the ego moves along +x at `ego_speed`.
pub fn generate_drive(spec: &SceneSpec) -> Result<Drive, BenchError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_sweeps = spec.sweep_count();
    let t_ref = spec.sweep_interval * (n_sweeps - 1) as f64 / 2.0;
    let ego_ref = [spec.ego_speed * t_ref, 0.0];

    let mut bodies: Vec<Body> = Vec::new();
    let mut placed: Vec<WorldObject> = Vec::new();
    let mut objects = Vec::new();
    let times: Vec<f64> = (0..n_sweeps).map(|s| s as f64 * spec.sweep_interval - t_ref).collect();
    let fits = |placed: &[WorldObject], cand: &WorldObject| {
        times.iter().all(|&t| {
            let b = cand.at(t);
            placed.iter().all(|o| {
                let o = o.at(t);
                let d = (o.x - b.x).hypot(o.y - b.y);
                d >= spec.min_spacing.max(0.5 * (o.l.max(o.w) + b.l.max(b.w))) && iou_bev(&o, &b) == 0.0
            })
        })
    };
    let ring_position = |rng: &mut ChaCha8Rng| {
        let r = uniform(rng, [spec.min_range.powi(2), spec.object_range.powi(2)]).sqrt();
        let a = rng.random_range(-PI..PI);
        (ego_ref[0] + r * a.cos(), ego_ref[1] + r * a.sin())
    };

    for class in ObjectClass::KNOWN {
        let cs = *spec.class_spec(class).expect("known class");
        for _ in 0..cs.count {
            let mut chosen = None;
            for _ in 0..200 {
                let (x, y) = ring_position(&mut rng);
                let dims = cs.size.map(|v| v * (1.0 + spec.size_jitter * (2.0 * rng.random::<f64>() - 1.0)));
                let yaw = rng.random_range(-PI..PI);
                let z = spec.ground.z_at(x, y) + dims[2] / 2.0;
                let bbox = Box3D::new([x, y, z], dims, yaw, class);
                let velocity = if rng.random::<f64>() < cs.moving_fraction {
                    let v = uniform(&mut rng, cs.speed);
                    [v * yaw.cos(), v * yaw.sin()]
                } else {
                    [0.0, 0.0]
                };
                let cand = WorldObject { bbox, velocity };
                if fits(&placed, &cand) {
                    chosen = Some(cand);
                    break;
                }
            }
            let Some(world) = chosen else { continue };
            let b = world.bbox;
            let d = (b.x - ego_ref[0]).hypot(b.y - ego_ref[1]);
            let points = sample_faces(&mut rng, &b, spec.ground_clearance, spec.density(d), 0.5);
            placed.push(world);
            bodies.push(Body { object: Some(objects.len()), kind: PointKind::Object, world, points });
            objects.push(world);
        }
    }

    let clutter_kinds = [
        (spec.clutter.poles, [0.2, 0.2, 3.0]),
        (spec.clutter.walls, [8.0, 0.3, 1.5]),
        (spec.clutter.bushes, [1.5, 1.5, 1.0]),
    ];
    for (count, dims) in clutter_kinds {
        for _ in 0..count {
            for _ in 0..200 {
                let (x, y) = ring_position(&mut rng);
                let yaw = rng.random_range(-PI..PI);
                let b = Box3D::new([x, y, spec.ground.z_at(x, y) + dims[2] / 2.0], dims, yaw, ObjectClass::Unknown);
                let world = WorldObject { bbox: b, velocity: [0.0, 0.0] };
                if fits(&placed, &world) {
                    let d = (x - ego_ref[0]).hypot(y - ego_ref[1]);
                    let points = sample_faces(&mut rng, &b, 0.0, spec.density(d), 0.35);
                    placed.push(world);
                    bodies.push(Body { object: None, kind: PointKind::Clutter, world, points });
                    break;
                }
            }
        }
    }

    // Ground: radial density matching the surface model, excluding static footprints.
    let ground_reach = spec.sensor_range + (spec.ego_speed * t_ref).abs();
    let rho_g = spec.ground_density_factor * spec.density_at_10m;
    let inner = rho_g * PI * 100.0;
    let outer = if ground_reach > 10.0 { rho_g * 2.0 * PI * 100.0 * (ground_reach / 10.0).ln() } else { 0.0 };
    let n_ground = if inner + outer > 0.0 { Poisson::new(inner + outer).map(|p| p.sample(&mut rng) as usize).unwrap_or(0) } else { 0 };
    let p_inner = inner / (inner + outer).max(f64::MIN_POSITIVE);
    let mut ground = Vec::with_capacity(n_ground);
    for _ in 0..n_ground {
        let r = if rng.random::<f64>() < p_inner {
            ground_reach.min(10.0) * rng.random::<f64>().sqrt()
        } else {
            10.0 * (rng.random::<f64>() * (ground_reach / 10.0).ln()).exp()
        };
        let a = rng.random_range(-PI..PI);
        let (x, y) = (ego_ref[0] + r * a.cos(), ego_ref[1] + r * a.sin());
        let probe = Point::new(x, y, 0.0, 0.0);
        let covered = bodies.iter().any(|b| {
            !b.world.is_moving() && {
                let mut flat = b.world.bbox;
                flat.z = 0.0;
                flat.h = 1.0;
                flat.contains(&probe)
            }
        });
        if !covered {
            ground.push([x, y, spec.ground.z_at(x, y)]);
        }
    }

    let noise = Normal::new(0.0, spec.noise_sigma.max(1e-12)).expect("valid sigma");
    let mut sweeps = Vec::with_capacity(n_sweeps);
    for s in 0..n_sweeps {
        let dt = s as f64 * spec.sweep_interval - t_ref;
        let ego = [ego_ref[0] + spec.ego_speed * dt, ego_ref[1]];
        let pose = Pose::from_xy_yaw(ego[0], ego[1], 0.0, 0.0);
        let world_to_sensor = Pose::from_matrix(&pose.matrix().try_inverse().expect("rigid pose"));
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0x5eed_0000 + s as u64));
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        let mut emit = |rng: &mut ChaCha8Rng, w: [f64; 3], intensity: f64, t: PointTruth| {
            if rng.random::<f64>() < spec.dropout {
                return;
            }
            if (w[0] - ego[0]).hypot(w[1] - ego[1]) > spec.sensor_range {
                return;
            }
            let jitter = [noise.sample(rng), noise.sample(rng), noise.sample(rng)];
            let p = Point::new(w[0] + jitter[0], w[1] + jitter[1], w[2] + jitter[2], intensity);
            pts.push(world_to_sensor.apply(&p));
            truth.push(t);
        };
        for g in &ground {
            emit(&mut rng, *g, 0.2, PointTruth { kind: PointKind::Ground, object: None, moving: false });
        }
        for body in &bodies {
            let b = body.world.at(dt);
            let t = PointTruth { kind: body.kind, object: body.object, moving: body.world.is_moving() };
            for sp in &body.points {
                let (w, n) = to_world(&b, sp);
                let facing = n == [0.0, 0.0] || n[0] * (ego[0] - w[0]) + n[1] * (ego[1] - w[1]) > 0.0;
                if facing {
                    emit(&mut rng, w, sp.intensity, t);
                }
            }
        }
        let mut boxes = Vec::new();
        let mut box_objects = Vec::new();
        for (k, o) in objects.iter().enumerate() {
            let b = o.at(dt);
            if (b.x - ego[0]).hypot(b.y - ego[1]) <= spec.sensor_range {
                let c = world_to_sensor.apply(&Point::new(b.x, b.y, b.z, 0.0));
                let mut local = b;
                local.x = c.x;
                local.y = c.y;
                local.z = c.z;
                local.yaw = wrap_angle(b.yaw);
                boxes.push(local);
                box_objects.push(k);
            }
        }
        sweeps.push(GeneratedSweep { cloud: PointCloud::new(pts, s as u32), pose, truth, boxes, box_objects });
    }
    Ok(Drive { spec: spec.clone(), objects, sweeps })
}

/// The first frame of the drive described by `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<GeneratedScene, BenchError> {
    let one = SceneSpec { frames: 1, ..spec.clone() };
    Ok(generate_drive(&one)?.frame(0))
}
