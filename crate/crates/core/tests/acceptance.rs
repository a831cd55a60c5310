//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on
//! any failure. Run with `cargo test -p owl-core --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use owl_core::bench::{generate_drive, SceneSpec};
use owl_core::clustering::{cluster_labels, dynamic_radius, initial_labels, ClusteringParams};
use owl_core::cues::{consistency_score, distribution_score, SizePrototypes, CONSISTENCY_CAP};
use owl_core::geometry::{iou_3d, Box3D, ObjectClass, Point, PointCloud};
use owl_core::occupancy::{
    balanced_accuracy, mask_ratio, occupancy_loss, prepare_samples, sample_mask, train_warmup, MaskSchedule,
    OccupancyPredictor, WarmupConfig, FEATURE_LEN,
};
use owl_core::geometry::voxelize;
use owl_core::pipeline::{
    mar_score, prepare_frames, refinement_benchmark, run_e2e, MarScore, PipelineConfig, ReasonerKind,
};
use owl_core::reasoner::{refine, Branch, ReasonerVerdict, RefineConfig, RuleReasoner};
use owl_core::scene::DenseScene;
use owl_core::selftrain::{
    cross_entropy, focal_loss, sample_weight, smooth_l1, total_loss, LossConstants, LossWeights, Prediction,
    WeightedSample, CLASS_SLOTS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fixed-radius density clustering, visiting points in input order and
/// scanning all pairs for every neighborhood query.
fn naive_dbscan(points: &[Point], eps: f64, min_points: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let within = |i: usize| -> Vec<usize> { (0..n).filter(|&j| points[i].distance_sq(&points[j]) <= eps * eps).collect() };
    let mut labels = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let nb = within(i);
        if nb.len() < min_points {
            continue;
        }
        labels[i] = Some(next);
        let mut queue: std::collections::VecDeque<usize> = nb.into();
        while let Some(q) = queue.pop_front() {
            if labels[q].is_none() {
                labels[q] = Some(next);
            }
            if visited[q] {
                continue;
            }
            visited[q] = true;
            let nq = within(q);
            if nq.len() >= min_points {
                queue.extend(nq);
            }
        }
        next += 1;
    }
    labels
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut clusters = 0;
    for case in 0..100 {
        let n = r.random_range(1..=200);
        let blobs: Vec<[f64; 3]> = (0..r.random_range(1..6))
            .map(|_| [r.random_range(-8.0..8.0), r.random_range(-8.0..8.0), r.random_range(0.0..2.0)])
            .collect();
        let points: Vec<Point> = (0..n)
            .map(|_| {
                let c = blobs[r.random_range(0..blobs.len())];
                let s = r.random_range(0.2..1.5);
                Point::new(c[0] + r.random_range(-s..s), c[1] + r.random_range(-s..s), c[2] + r.random_range(-s..s), 0.5)
            })
            .collect();
        let params = ClusteringParams {
            alpha: r.random_range(0.5..1.5),
            beta: 0.0,
            r0: r.random_range(0.2..0.8),
            min_points: r.random_range(1..8),
            density_reference: 10.0,
        };
        let got = cluster_labels(&PointCloud::new(points.clone(), 0), &params).map_err(|e| e.to_string())?;
        let want = naive_dbscan(&points, params.alpha * params.r0, params.min_points);
        if got != want {
            return Err(format!("case {case}: labels differ from the naive oracle"));
        }
        clusters += want.iter().flatten().max().map_or(0, |m| m + 1);
    }
    let t = start.elapsed().as_secs_f64();
    check(t < 5.0, format!("100 clouds identical to naive DBSCAN ({clusters} clusters), {t:.2} s"))
}

fn criterion_2() -> Outcome {
    let p = ClusteringParams { alpha: 1.0, beta: 1.0, r0: 0.5, min_points: 1, density_reference: 1.0 };
    let r = dynamic_radius(&p, 1.0);
    let closed = 0.5 * (1.0 + (-1.0f64).exp());
    if (r - closed).abs() > 1e-9 || (r - 0.68394).abs() > 5e-6 {
        return Err(format!("r = {r}"));
    }
    let mut g = rng(2);
    for _ in 0..1000 {
        let p = ClusteringParams {
            alpha: g.random_range(0.1..3.0),
            beta: g.random_range(0.01..3.0),
            r0: g.random_range(0.05..2.0),
            min_points: 1,
            density_reference: 1.0,
        };
        let a = g.random_range(0.0..20.0);
        let b = a + g.random_range(1e-3..5.0);
        if !(dynamic_radius(&p, b) < dynamic_radius(&p, a)) {
            return Err(format!("not decreasing between rho {a} and {b} for {p:?}"));
        }
    }
    Ok(format!("r = {r:.9} (0.5 (1 + e^-1)); strictly decreasing on 1000 samples"))
}

fn criterion_3() -> Outcome {
    // One point per voxel; y > 0 lies inside a single large label box.
    let per_cell = 10_000;
    let bands = 6;
    let cell = 0.05;
    let mut g = rng(3);
    let mut points = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut want = vec![[0usize; 2]; bands];
    while want.iter().any(|c| c[0] < per_cell || c[1] < per_cell) {
        let band = g.random_range(0..bands);
        let fg = g.random_bool(0.5);
        if want[band][usize::from(fg)] >= per_cell {
            continue;
        }
        let d = g.random_range(band as f64 * 10.0 + 0.5..band as f64 * 10.0 + 9.5);
        let a = if fg { g.random_range(0.1..PI - 0.1) } else { g.random_range(-PI + 0.1..-0.1) };
        let (ix, iy) = ((d * a.cos() / cell).floor() as i64, (d * a.sin() / cell).floor() as i64);
        if !seen.insert((ix, iy)) {
            continue;
        }
        let (x, y) = ((ix as f64 + 0.5) * cell, (iy as f64 + 0.5) * cell);
        if ((x * x + y * y).sqrt() / 10.0).floor() as usize != band || (y > 0.0) != fg {
            seen.remove(&(ix, iy));
            continue;
        }
        want[band][usize::from(fg)] += 1;
        points.push(Point::new(x, y, 0.0, 0.5));
    }
    let cloud = PointCloud::new(points, 0);
    let grid = voxelize(&cloud, [-61.0, -61.0, -0.5], [cell, cell, 1.0], [2440, 2440, 1]).map_err(|e| e.to_string())?;
    let label = Box3D::new([0.0, 40.0, 0.0], [140.0, 80.0, 1.0], 0.0, ObjectClass::Vehicle);
    let sched = MaskSchedule { seed: 11, ..Default::default() };
    let mask = sample_mask(&grid, &cloud, &[label], &sched).map_err(|e| e.to_string())?;
    let mut hits = vec![[0usize; 2]; bands];
    let mut totals = vec![[0usize; 2]; bands];
    for (v, members) in &grid.cells {
        let p = &cloud.points[members[0]];
        let band = ((p.x.hypot(p.y)) / 10.0).floor() as usize;
        let fg = usize::from(p.y > 0.0);
        totals[band][fg] += 1;
        hits[band][fg] += usize::from(mask.is_masked(v));
    }
    let mut worst: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for band in 0..bands {
        let d = band as f64 * 10.0 + 5.0;
        let mut rates = [0.0; 2];
        for fg in 0..2 {
            if totals[band][fg] < per_cell {
                return Err(format!("band {band} fg={fg}: only {} voxels", totals[band][fg]));
            }
            rates[fg] = hits[band][fg] as f64 / totals[band][fg] as f64;
            let w = if fg == 1 { 1.0 } else { 0.5 };
            let expect = w * (0.1 + 0.5 * (-0.25 * band as f64).exp());
            if mask_ratio(d, fg == 1, &sched) != expect {
                return Err(format!("mask_ratio({d}, {fg}) = {} != {expect}", mask_ratio(d, fg == 1, &sched)));
            }
            worst = worst.max((rates[fg] - expect).abs());
        }
        if mask_ratio(d, true, &sched) != 2.0 * mask_ratio(d, false, &sched) {
            return Err(format!("band {band}: expected foreground ratio is not exactly twice background"));
        }
        worst_ratio = worst_ratio.max((rates[1] / rates[0] - 2.0).abs());
    }
    check(
        worst <= 0.02 && worst_ratio <= 0.05,
        format!("12 cells x >= 1e4 voxels: max rate error {worst:.4}, max fg/bg ratio error {worst_ratio:.4}"),
    )
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn criterion_4() -> Outcome {
    let h = 1e-6;
    let mut g = rng(4);
    let mut worst_bce: f64 = 0.0;
    for _ in 0..20 {
        let pred: Vec<f64> = (0..64).map(|_| g.random_range(0.02..0.98)).collect();
        let y: Vec<f64> = (0..64).map(|_| f64::from(u8::from(g.random_bool(0.4)))).collect();
        let analytic = occupancy_loss(&pred, &y).map_err(|e| e.to_string())?.grad;
        for k in 0..64 {
            let mut p = pred.clone();
            p[k] += h;
            let up = occupancy_loss(&p, &y).unwrap().loss;
            p[k] -= 2.0 * h;
            let down = occupancy_loss(&p, &y).unwrap().loss;
            worst_bce = worst_bce.max(rel_err(analytic[k], (up - down) / (2.0 * h)));
        }
    }
    let mut worst_net: f64 = 0.0;
    for seed in 0..3 {
        let net = OccupancyPredictor::new(FEATURE_LEN, 16, seed);
        let xs: Vec<Vec<f64>> = (0..64).map(|_| (0..FEATURE_LEN).map(|_| g.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<f64> = (0..64).map(|_| f64::from(u8::from(g.random_bool(0.5)))).collect();
        let (_, analytic) = net.loss_and_gradient(&xs, &ys).map_err(|e| e.to_string())?;
        let params = net.parameters();
        for k in 0..params.len() {
            let mut probe = net.clone();
            let mut p = params.clone();
            p[k] += h;
            probe.set_parameters(&p).unwrap();
            let up = probe.loss_and_gradient(&xs, &ys).unwrap().0;
            p[k] -= 2.0 * h;
            probe.set_parameters(&p).unwrap();
            let down = probe.loss_and_gradient(&xs, &ys).unwrap().0;
            worst_net = worst_net.max(rel_err(analytic[k], (up - down) / (2.0 * h)));
        }
    }
    check(
        worst_bce < 1e-4 && worst_net < 1e-3,
        format!("max relative error: BCE {worst_bce:.2e}, predictor parameters {worst_net:.2e}"),
    )
}

fn synthetic_scenes(seeds: std::ops::Range<u64>, cfg: &PipelineConfig) -> Result<Vec<DenseScene>, String> {
    let mut seqs = Vec::new();
    for seed in seeds {
        let spec = SceneSpec { frames: 1, seed, ..cfg.scene.clone() };
        let drive = generate_drive(&spec).map_err(|e| e.to_string())?;
        seqs.push(drive.frame(0).sequence().map_err(|e| e.to_string())?);
    }
    Ok(prepare_frames(&seqs, cfg).map_err(|e| e.to_string())?.into_iter().map(|p| p.scene).collect())
}

fn criterion_5() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    pool.install(|| {
        let cfg = PipelineConfig::default();
        let scenes = synthetic_scenes(100..120, &cfg)?;
        let held_out = synthetic_scenes(200..205, &cfg)?;
        let labels = |s: &[DenseScene]| -> Result<Vec<Vec<Box3D>>, String> {
            s.iter().map(|x| initial_labels(x, &cfg.labels).map(|l| l.boxes).map_err(|e| e.to_string())).collect()
        };
        let train_labels = labels(&scenes)?;
        let warm = WarmupConfig { epochs: 50, ..cfg.warmup.clone() };
        let start = Instant::now();
        let out = train_warmup(&scenes, &train_labels, &cfg.mask, &warm).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        let test_labels = labels(&held_out)?;
        let data = held_out
            .iter()
            .zip(&test_labels)
            .enumerate()
            .map(|(k, (s, l))| {
                let sched = MaskSchedule { seed: 900 + k as u64, ..cfg.mask.clone() };
                prepare_samples(s, l, &sched, &warm).map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, _>>()?;
        let acc = balanced_accuracy(&out.predictor, &data);
        let (pos, total) = data.iter().flat_map(|d| &d.targets).fold((0, 0), |(p, t), y| (p + usize::from(*y > 0.5), t + 1));
        check(
            out.final_loss() < out.initial_loss && acc > 0.5 && secs < 120.0,
            format!(
                "loss {:.4} -> {:.4}; held-out balanced accuracy {acc:.3} vs 0.5 for a constant guess ({pos}/{total} occupied); {secs:.1} s",
                out.initial_loss,
                out.final_loss()
            ),
        )
    })
}

fn criterion_6() -> Outcome {
    let mut g = rng(6);
    let r = 8usize;
    let norm = 75.0;
    let protos = SizePrototypes::default();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dims = [g.random_range(0.3..6.0), g.random_range(0.3..3.0), g.random_range(0.3..3.0)];
        let b = Box3D::new(
            [g.random_range(-80.0..80.0), g.random_range(-80.0..80.0), g.random_range(-1.0..2.0)],
            dims,
            g.random_range(-PI..PI),
            ObjectClass::Vehicle,
        );
        let points: Vec<Point> = (0..g.random_range(0..300))
            .map(|_| {
                let u = g.random_range(-0.6..0.6) * b.l;
                let v = g.random_range(-0.6..0.6) * b.w;
                let w = g.random_range(-0.6..0.6) * b.h;
                let (s, c) = b.yaw.sin_cos();
                Point::new(b.x + c * u - s * v, b.y + s * u + c * v, b.z + w, 0.3)
            })
            .collect();
        // Occupied footprint cells recounted from the box-frame coordinates.
        let mut cells = std::collections::BTreeSet::new();
        let (s, c) = b.yaw.sin_cos();
        for p in &points {
            let (dx, dy) = (p.x - b.x, p.y - b.y);
            let (u, v, w) = (c * dx + s * dy, -s * dx + c * dy, p.z - b.z);
            if u.abs() <= b.l / 2.0 && v.abs() <= b.w / 2.0 && w.abs() <= b.h / 2.0 {
                let cu = (((u / b.l + 0.5) * r as f64).floor() as usize).min(r - 1);
                let cv = (((v / b.w + 0.5) * r as f64).floor() as usize).min(r - 1);
                cells.insert((cu, cv));
            }
        }
        let dist = (b.x * b.x + b.y * b.y + b.z * b.z).sqrt();
        let expect_dis = (1.0 - (dist / norm).min(1.0)) + cells.len() as f64 / (r * r) as f64;
        let got = distribution_score(&b, &points, r, norm).map_err(|e| e.to_string())?.score;
        worst = worst.max((got - expect_dis).abs());

        let proto = protos.sizes[&ObjectClass::Vehicle];
        let (ps, ss): (f64, f64) = (proto.iter().sum(), dims.iter().sum());
        let sum: f64 = (0..3).map(|k| (proto[k] / ps) * ((proto[k] / ps) / (dims[k] / ss)).ln()).sum();
        let expect_cons = sum.max(0.0).min(0.05) / 0.05;
        let got = consistency_score(dims, proto, false);
        worst = worst.max((got - expect_cons).abs());
        if !(0.0..=1.0).contains(&got) {
            return Err(format!("s_cons {got} outside [0, 1]"));
        }
    }
    for (class, p) in &protos.sizes {
        if consistency_score(*p, *p, false) != 0.0 || consistency_score(*p, *p, true) != 0.0 {
            return Err(format!("prototype of {class} does not score 0"));
        }
    }
    check(worst <= 1e-12 && CONSISTENCY_CAP == 0.05, format!("100 boxes, max deviation {worst:.1e}; prototypes score 0"))
}

/// Branch rule written out from its definition.
fn expected_branch(b: &Box3D, v: &ReasonerVerdict, s_cons: f64, cfg: &RefineConfig) -> (Branch, Option<Box3D>) {
    let consistency = if cfg.invert_s_cons { 1.0 - s_cons } else { s_cons };
    let new = [b.l + v.delta[0], b.w + v.delta[1], b.h + v.delta[2]];
    let valid = new.iter().all(|d| *d > 0.0);
    if v.keep && valid {
        let mut out = *b;
        out.l = new[0];
        out.w = new[1];
        out.h = new[2];
        out.class = v.cls_new;
        return (Branch::A, Some(out));
    }
    let rejected = !v.keep || cfg.demote_invalid;
    if rejected && consistency > cfg.eta {
        let class = if b.class == ObjectClass::Unknown { v.cls_new } else { b.class };
        let [l, w, h] = cfg.common_sizes.sizes[&class];
        let mut out = *b;
        out.l = l;
        out.w = w;
        out.h = h;
        out.class = class;
        out.weight = b.weight * cfg.downweight_factor;
        return (Branch::B, Some(out));
    }
    (Branch::C, None)
}

fn criterion_7() -> Outcome {
    let mut cases = 0;
    let base = Box3D::new([12.0, -3.0, 0.8], [4.0, 1.8, 1.6], 0.4, ObjectClass::Vehicle).with_weight(0.9);
    for keep in [true, false] {
        for delta in [[0.1, 0.0, -0.05], [-5.0, 0.0, 0.0], [0.0; 3]] {
            for s_cons in [0.1, 0.5, 0.9] {
                for invert in [false, true] {
                    for demote in [false, true] {
                        for class in [ObjectClass::Vehicle, ObjectClass::Unknown] {
                            let b = Box3D { class, ..base };
                            let v = ReasonerVerdict { keep, s_rea: 0.6, delta, cls_new: ObjectClass::Cyclist };
                            let cfg = RefineConfig { invert_s_cons: invert, demote_invalid: demote, ..Default::default() };
                            let out = refine(&[b], &[v], &[s_cons], &cfg).map_err(|e| e.to_string())?;
                            let (branch, expect) = expected_branch(&b, &v, s_cons, &cfg);
                            if out.branches != vec![branch] || out.boxes != expect.into_iter().collect::<Vec<_>>() {
                                return Err(format!("keep={keep} delta={delta:?} s_cons={s_cons} invert={invert} demote={demote} {class:?}: got {:?}", out.branches));
                            }
                            cases += 1;
                        }
                    }
                }
            }
        }
    }
    let mut g = rng(7);
    for _ in 0..1000 {
        let n = g.random_range(0..40);
        let boxes: Vec<Box3D> = (0..n)
            .map(|_| {
                Box3D::new(
                    [g.random_range(-50.0..50.0), g.random_range(-50.0..50.0), 0.8],
                    [g.random_range(0.2..6.0), g.random_range(0.2..3.0), g.random_range(0.2..3.0)],
                    g.random_range(-PI..PI),
                    ObjectClass::ALL[g.random_range(0..4)],
                )
            })
            .collect();
        let verdicts: Vec<ReasonerVerdict> = (0..n)
            .map(|_| ReasonerVerdict {
                keep: g.random_bool(0.5),
                s_rea: g.random_range(0.0..1.0),
                delta: [g.random_range(-3.0..3.0), g.random_range(-1.5..1.5), g.random_range(-1.5..1.5)],
                cls_new: ObjectClass::KNOWN[g.random_range(0..3)],
            })
            .collect();
        let s: Vec<f64> = (0..n).map(|_| g.random_range(0.0..1.0)).collect();
        let cfg = RefineConfig { eta: g.random_range(0.0..1.0), invert_s_cons: g.random_bool(0.5), ..Default::default() };
        let out = refine(&boxes, &verdicts, &s, &cfg).map_err(|e| e.to_string())?;
        if out.counts.total() != n || out.branches.len() != n || out.boxes.len() > n {
            return Err(format!("{n} inputs, counts {:?}", out.counts));
        }
        if out.boxes.len() != out.counts.a + out.counts.b {
            return Err("output size differs from A + B".into());
        }
    }
    Ok(format!("{cases} exhaustive cases exact; counts total on 1000 random calls"))
}

fn criterion_8() -> Outcome {
    let mut g = rng(8);
    for _ in 0..1000 {
        let w = LossWeights { lambda1: g.random_range(0.0..3.0), lambda2: g.random_range(0.0..3.0), ..Default::default() };
        let (s, r) = (g.random_range(0.0..1.0), g.random_range(0.0..1.0));
        if sample_weight(s, r, &w).map_err(|e| e.to_string())? != w.lambda1 * s + w.lambda2 * r {
            return Err(format!("omega({s}, {r}) is not exact"));
        }
    }
    let w = LossWeights::default();
    let k = LossConstants::default();
    let sample = |g: &mut ChaCha8Rng, omega: f64| WeightedSample {
        target: Box3D::new([g.random_range(-5.0..5.0), 1.0, 0.8], [4.0, 1.8, 1.6], 0.2, ObjectClass::Vehicle),
        class_slot: g.random_range(0..CLASS_SLOTS),
        prediction: Prediction {
            regression: std::array::from_fn(|_| g.random_range(-2.0..2.0)),
            logits: (0..CLASS_SLOTS).map(|_| g.random_range(-2.0..2.0)).collect(),
        },
        omega,
    };
    let mut worst_h: f64 = 0.0;
    for _ in 0..100 {
        let samples: Vec<WeightedSample> = (0..8).map(|_| { let o = g.random_range(0.0..2.0); sample(&mut g, o) }).collect();
        let c = g.random_range(0.1..10.0);
        let scaled: Vec<WeightedSample> = samples.iter().map(|s| WeightedSample { omega: s.omega * c, ..s.clone() }).collect();
        let a = total_loss(&samples, &w, &k).map_err(|e| e.to_string())?.value;
        let b = total_loss(&scaled, &w, &k).map_err(|e| e.to_string())?.value;
        worst_h = worst_h.max((b - c * a).abs() / (c * a).abs().max(1.0));
    }
    let zero = total_loss(&[sample(&mut g, 0.0), sample(&mut g, 1.0)], &w, &k).map_err(|e| e.to_string())?;
    let zero_grad = zero.gradients[0].regression.iter().chain(&zero.gradients[0].logits).all(|v| *v == 0.0);
    let mut worst_focal: f64 = 0.0;
    for _ in 0..100 {
        let z: Vec<f64> = (0..CLASS_SLOTS).map(|_| g.random_range(-4.0..4.0)).collect();
        let t = g.random_range(0..CLASS_SLOTS);
        worst_focal = worst_focal.max((focal_loss(&z, t, 0.0, 1.0).0 - cross_entropy(&z, t)).abs());
    }
    let mut worst_knee: f64 = 0.0;
    for delta in [0.5, 1.0, 2.0] {
        for sign in [-1.0, 1.0] {
            let below = smooth_l1(&[sign * (delta - 1e-12)], delta);
            let above = smooth_l1(&[sign * (delta + 1e-12)], delta);
            worst_knee = worst_knee.max((below.0 - above.0).abs()).max((below.1[0] - above.1[0]).abs());
        }
    }
    check(
        worst_h <= 1e-12 && zero_grad && worst_focal <= 1e-9 && worst_knee <= 1e-9,
        format!(
            "omega exact; homogeneity {worst_h:.1e}; zero-weight gradient {}; focal(0) vs CE {worst_focal:.1e}; knee {worst_knee:.1e}",
            if zero_grad { "exactly 0" } else { "NONZERO" }
        ),
    )
}

fn monte_carlo_iou(a: &Box3D, b: &Box3D, n: usize, g: &mut ChaCha8Rng) -> f64 {
    let (s, c) = a.yaw.sin_cos();
    let mut inside = 0usize;
    for _ in 0..n {
        let u = g.random_range(-0.5..0.5) * a.l;
        let v = g.random_range(-0.5..0.5) * a.w;
        let w = g.random_range(-0.5..0.5) * a.h;
        let p = Point::new(a.x + c * u - s * v, a.y + s * u + c * v, a.z + w, 0.0);
        inside += usize::from(b.contains(&p));
    }
    let inter = inside as f64 / n as f64 * a.volume();
    inter / (a.volume() + b.volume() - inter)
}

fn criterion_9() -> Outcome {
    let mut g = rng(9);
    let mut worst_mc: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    let mut worst_rigid: f64 = 0.0;
    for _ in 0..100 {
        let a = Box3D::new(
            [g.random_range(-10.0..10.0), g.random_range(-10.0..10.0), g.random_range(-1.0..1.0)],
            [g.random_range(0.5..5.0), g.random_range(0.5..3.0), g.random_range(0.5..3.0)],
            g.random_range(-PI..PI),
            ObjectClass::Vehicle,
        );
        let b = Box3D::new(
            [a.x + g.random_range(-2.0..2.0), a.y + g.random_range(-2.0..2.0), a.z + g.random_range(-1.0..1.0)],
            [a.l * g.random_range(0.6..1.4), a.w * g.random_range(0.6..1.4), a.h * g.random_range(0.6..1.4)],
            g.random_range(-PI..PI),
            ObjectClass::Vehicle,
        );
        let iou = iou_3d(&a, &b);
        worst_mc = worst_mc.max((iou - monte_carlo_iou(&a, &b, 100_000, &mut g)).abs());
        worst_sym = worst_sym.max((iou - iou_3d(&b, &a)).abs());
        let theta = g.random_range(-PI..PI);
        let t = [g.random_range(-50.0..50.0), g.random_range(-50.0..50.0), g.random_range(-3.0..3.0)];
        let moved = |x: &Box3D| {
            let (s, c) = theta.sin_cos();
            let yaw = owl_core::geometry::wrap_angle(x.yaw + theta);
            Box3D::new([c * x.x - s * x.y + t[0], s * x.x + c * x.y + t[1], x.z + t[2]], x.dims(), yaw, x.class)
        };
        worst_rigid = worst_rigid.max((iou - iou_3d(&moved(&a), &moved(&b))).abs());
    }
    check(
        worst_mc <= 0.01 && worst_sym <= 1e-9 && worst_rigid <= 1e-9,
        format!("100 pairs: max |analytic - MC| {worst_mc:.4}; symmetry {worst_sym:.1e}; rigid motion {worst_rigid:.1e}"),
    )
}

fn criterion_10() -> Outcome {
    let cfg = PipelineConfig::load(&configs().join("sequence.toml")).map_err(|e| e.to_string())?;
    let drive = generate_drive(&cfg.scene).map_err(|e| e.to_string())?;
    if drive.sweeps.len() != 5 {
        return Err(format!("{} sweeps", drive.sweeps.len()));
    }
    let mut s = MarScore::default();
    for f in drive.frames() {
        s.add(&mar_score(&f, &cfg.motion).map_err(|e| e.to_string())?);
    }
    check(
        s.removal_rate() >= 0.95 && s.retention_rate() >= 0.95 && s.moving_total > 0,
        format!(
            "moving removed {:.4} ({} pts), static retained {:.4} ({} pts)",
            s.removal_rate(),
            s.moving_total,
            s.retention_rate(),
            s.static_total
        ),
    )
}

fn criterion_11() -> Outcome {
    let start = Instant::now();
    let cfg = PipelineConfig::load(&configs().join("benchmark.toml")).map_err(|e| e.to_string())?;
    let mut rules = RuleReasoner { prototypes: cfg.prototypes.clone(), rules: cfg.rules.clone() };
    let out = refinement_benchmark(&cfg, &mut rules, 2).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let at = |r: &owl_core::bench::EvalReport| r.at(0.5).copied().ok_or("no 0.5 threshold");
    let (before, after) = (at(&out.before)?, at(&out.after)?);
    let rounds: Vec<f64> = out.rounds.iter().map(|(_, r)| at(r).map(|m| m.precision)).collect::<Result<_, _>>()?;
    let gain = after.precision - before.precision;
    let recall_cost = before.recall - after.recall;
    let diverged = out.rounds.iter().any(|(r, _)| r.diverged.is_some());
    let monotone = rounds.len() == 2 && rounds[1] >= rounds[0];
    check(
        gain >= 0.10 && recall_cost < 0.05 && monotone && !diverged && secs < 60.0,
        format!(
            "precision {:.3} -> {:.3} (+{:.1} pts), recall {:.3} -> {:.3}; self-training rounds {:?} (from refined {:.3}); {secs:.1} s",
            before.precision,
            after.precision,
            100.0 * gain,
            before.recall,
            after.recall,
            rounds.iter().map(|p| (p * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            after.precision
        ),
    )
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_12() -> Outcome {
    let server = common::spawn(common::Behavior::Verdicts);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = tmp.path().join("reasoner.jsonl");
    let mut cfg = PipelineConfig::default();
    cfg.remote.endpoint = Some(server.url.clone());
    cfg.remote.backoff_ms = 1;
    run_e2e(&cfg, &tmp.path().join("live"), ReasonerKind::Remote, Some(&log)).map_err(|e| e.to_string())?;
    let requests = std::fs::read_to_string(&log).map_err(|e| e.to_string())?.lines().count();
    cfg.remote.endpoint = None;
    let a = tmp.path().join("replay_a");
    let b = tmp.path().join("replay_b");
    run_e2e(&cfg, &a, ReasonerKind::Replay, Some(&log)).map_err(|e| e.to_string())?;
    run_e2e(&cfg, &b, ReasonerKind::Replay, Some(&log)).map_err(|e| e.to_string())?;
    let (ta, tb) = (tree(&a), tree(&b));
    let relevant = |p: &Path| {
        let name = p.to_string_lossy();
        name.contains("labels") || name.contains("report") || name.ends_with(".csv") || name.ends_with(".json")
    };
    let compared = ta.keys().filter(|p| relevant(p)).count();
    if ta != tb {
        let differ: Vec<_> = ta.keys().filter(|k| ta.get(*k) != tb.get(*k)).collect();
        return Err(format!("replayed runs differ in {differ:?}"));
    }
    let live = tree(&tmp.path().join("live"));
    let same_as_live = ta.iter().filter(|(p, _)| p.ends_with("labels.txt")).all(|(p, v)| live.get(p) == Some(v));
    check(
        compared > 10 && same_as_live,
        format!(
            "{requests} logged exchanges; two replayed runs byte-identical over {} files ({compared} label/report files){}",
            ta.len(),
            if same_as_live { "; labels match the live run" } else { "; labels DIFFER from the live run" }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("clustering matches fixed-radius DBSCAN", criterion_1),
        ("dynamic radius value and monotonicity", criterion_2),
        ("mask rates by distance band", criterion_3),
        ("occupancy gradients", criterion_4),
        ("warm-up efficacy", criterion_5),
        ("distribution and consistency scores", criterion_6),
        ("refinement branch totality", criterion_7),
        ("sample weight and loss algebra", criterion_8),
        ("3D IoU oracle", criterion_9),
        ("motion artifact separation", criterion_10),
        ("refinement improvement", criterion_11),
        ("end-to-end determinism under replay", criterion_12),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
