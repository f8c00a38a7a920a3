//! Synthetic scenes with known motion: two-view correspondence sets,
//! rendered point-sprite frames, and complete EuRoC-layout fixture datasets.

use std::fs;
use std::path::Path;

use nalgebra::{Point2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::euroc::{
    save_png, write_camera_index, write_groundtruth, DatasetLayout, EurocError, FrameRecord,
    GroundTruthRecord,
};
use crate::frontend::epipolar::CameraIntrinsics;
use crate::frontend::flow::{Correspondence, Correspondences};
use crate::image::GrayImage;
use crate::se3::{invert, relative_pose, transform_to_dof, DofVector, Rotation, Transform};

#[derive(Clone, Debug)]
pub struct SceneConfig {
    pub points: usize,
    pub noise_px: f64,
    pub width: f64,
    pub height: f64,
    pub intrinsics: CameraIntrinsics,
    pub depth: (f64, f64),
    pub max_rotation: f64,
    pub baseline: (f64, f64),
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            points: 50,
            noise_px: 0.0,
            width: 640.0,
            height: 480.0,
            intrinsics: CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0),
            depth: (3.0, 8.0),
            max_rotation: 10f64.to_radians(),
            baseline: (1.0, 2.0),
        }
    }
}

/// Two calibrated views of random points; X_b = rotation·X_a + translation.
#[derive(Clone, Debug)]
pub struct TwoViewScene {
    pub intrinsics: CameraIntrinsics,
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub points: Vec<Vector3<f64>>,
    pub correspondences: Correspondences,
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

pub fn two_view_scene(rng: &mut impl Rng, cfg: &SceneConfig) -> TwoViewScene {
    let k = cfg.intrinsics;
    let rotation = Rotation::from_axis_angle(&random_unit(rng), rng.random_range(0.0..cfg.max_rotation));
    let translation = random_unit(rng) * rng.random_range(cfg.baseline.0..cfg.baseline.1);
    let noise = Normal::new(0.0, cfg.noise_px.max(0.0)).expect("finite sigma");
    let inside = |p: &Point2<f64>| p.x >= 0.0 && p.y >= 0.0 && p.x < cfg.width && p.y < cfg.height;

    let mut points = Vec::with_capacity(cfg.points);
    let mut pairs = Vec::with_capacity(cfg.points);
    while points.len() < cfg.points {
        let u = rng.random_range(0.0..cfg.width);
        let v = rng.random_range(0.0..cfg.height);
        let z = rng.random_range(cfg.depth.0..cfg.depth.1);
        let xa = Vector3::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
        let xb = rotation.rotate(&xa) + translation;
        if xb.z < 0.5 {
            continue;
        }
        let pb = k.project(&xb);
        if !inside(&pb) {
            continue;
        }
        let mut jitter = || if cfg.noise_px > 0.0 { noise.sample(rng) } else { 0.0 };
        let a = Point2::new(u + jitter(), v + jitter());
        let b = Point2::new(pb.x + jitter(), pb.y + jitter());
        points.push(xa);
        pairs.push(Correspondence { a, b });
    }
    TwoViewScene {
        intrinsics: k,
        rotation,
        translation,
        points,
        correspondences: Correspondences::from_pairs(pairs),
    }
}

/// Fixed world points drawn as Gaussian sprites.
#[derive(Clone, Debug)]
pub struct SpriteWorld {
    pub points: Vec<Vector3<f64>>,
    pub amplitudes: Vec<f32>,
    pub sigma_px: f64,
    pub background: f32,
}

impl SpriteWorld {
    /// Points uniformly inside an axis-aligned box.
    pub fn random(rng: &mut impl Rng, count: usize, min: Vector3<f64>, max: Vector3<f64>) -> Self {
        let mut points = Vec::with_capacity(count);
        let mut amplitudes = Vec::with_capacity(count);
        for _ in 0..count {
            points.push(Vector3::new(
                rng.random_range(min.x..max.x),
                rng.random_range(min.y..max.y),
                rng.random_range(min.z..max.z),
            ));
            amplitudes.push(rng.random_range(0.5f32..0.9));
        }
        SpriteWorld {
            points,
            amplitudes,
            sigma_px: 1.6,
            background: 0.1,
        }
    }

    /// Renders the view of a camera whose pose in the world is `camera`.
    pub fn render(
        &self,
        camera: &Transform,
        k: &CameraIntrinsics,
        width: usize,
        height: usize,
    ) -> GrayImage {
        let mut img = GrayImage::filled(width, height, self.background);
        let world_to_cam = invert(camera);
        let reach = (4.0 * self.sigma_px).ceil() as isize;
        let inv2s2 = 1.0 / (2.0 * self.sigma_px * self.sigma_px);
        for (p, &amp) in self.points.iter().zip(&self.amplitudes) {
            let pc = world_to_cam.transform_point(p);
            if pc.z < 0.2 {
                continue;
            }
            let c = k.project(&pc);
            let (ix, iy) = (c.x.round() as isize, c.y.round() as isize);
            for y in iy - reach..=iy + reach {
                for x in ix - reach..=ix + reach {
                    if x < 0 || y < 0 || x >= width as isize || y >= height as isize {
                        continue;
                    }
                    let r2 = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
                    let v = amp as f64 * (-r2 * inv2s2).exp();
                    let (ux, uy) = (x as usize, y as usize);
                    img.set(ux, uy, (img.get(ux, uy) + v as f32).min(1.0));
                }
            }
        }
        img
    }
}

#[derive(Clone, Debug)]
pub struct FixtureConfig {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub frame_interval_ns: i64,
    /// Ground-truth samples per camera frame interval.
    pub gt_per_frame: i64,
    pub start_ns: i64,
    pub sprites: usize,
    pub seed: u64,
    /// Frame indices replaced by flat (untrackable) images.
    pub corrupt_frames: Vec<usize>,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            frames: 12,
            width: 320,
            height: 240,
            intrinsics: CameraIntrinsics::new(300.0, 300.0, 159.5, 119.5),
            frame_interval_ns: 50_000_000,
            gt_per_frame: 10,
            start_ns: 1_403_715_273_262_142_976,
            sprites: 350,
            seed: 1,
            corrupt_frames: Vec::new(),
        }
    }
}

/// Camera pose along the fixture trajectory, `s` in seconds. Moves ~6 m/s
/// sideways with a slow forward drift and gentle rotation on all axes.
pub fn fixture_pose(s: f64) -> Transform {
    let rotation = Rotation::about_z(0.05 * (1.3 * s).sin())
        * Rotation::about_y(0.12 * s - 0.04)
        * Rotation::about_x(0.04 * (0.9 * s).cos());
    Transform::new(
        rotation,
        Vector3::new(6.0 * s, 0.3 * (2.0 * s).sin(), 1.0 * s),
    )
}

/// Ground truth of a written fixture.
#[derive(Clone, Debug)]
pub struct FixtureTruth {
    pub layout: DatasetLayout,
    pub frames: Vec<FrameRecord>,
    pub poses: Vec<Transform>,
    /// Relative motion of each consecutive frame pair.
    pub relative: Vec<DofVector>,
}

/// Writes a rendered sequence in EuRoC ASL layout under `root`.
pub fn write_fixture_dataset(root: &Path, cfg: &FixtureConfig) -> Result<FixtureTruth, EurocError> {
    use rand::SeedableRng;
    let layout = DatasetLayout::new(root, "cam0");
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EurocError::Io { path, source }
    };
    fs::create_dir_all(layout.image_dir()).map_err(io(&layout.image_dir()))?;
    let gt_dir = layout.groundtruth();
    let gt_dir = gt_dir.parent().expect("groundtruth has a parent");
    fs::create_dir_all(gt_dir).map_err(io(gt_dir))?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let duration = cfg.frames as f64 * cfg.frame_interval_ns as f64 * 1e-9;
    let world = SpriteWorld::random(
        &mut rng,
        cfg.sprites,
        Vector3::new(-6.0, -4.0, 5.0),
        Vector3::new(6.0 + 6.0 * duration, 4.0, 12.0 + duration),
    );

    let seconds = |i: i64, per: i64| (i * per) as f64 * 1e-9;
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut poses = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        let pose = fixture_pose(seconds(i as i64, cfg.frame_interval_ns));
        let timestamp = cfg.start_ns + i as i64 * cfg.frame_interval_ns;
        let img = if cfg.corrupt_frames.contains(&i) {
            GrayImage::filled(cfg.width, cfg.height, 1.0)
        } else {
            world.render(&pose, &cfg.intrinsics, cfg.width, cfg.height)
        };
        let record = FrameRecord {
            timestamp,
            image_filename: format!("{timestamp}.png"),
        };
        save_png(&layout.image_path(&record), &img)?;
        frames.push(record);
        poses.push(pose);
    }
    write_camera_index(&layout.camera_index(), &frames).map_err(io(&layout.camera_index()))?;

    let gt_step = cfg.frame_interval_ns / cfg.gt_per_frame.max(1);
    let gt_count = (cfg.frames as i64 - 1) * cfg.gt_per_frame.max(1) + 1;
    let gt: Vec<GroundTruthRecord> = (0..gt_count)
        .map(|i| {
            GroundTruthRecord::from_pose(cfg.start_ns + i * gt_step, &fixture_pose(seconds(i, gt_step)))
        })
        .collect();
    write_groundtruth(&layout.groundtruth(), &gt).map_err(io(&layout.groundtruth()))?;

    let relative = poses
        .windows(2)
        .map(|w| transform_to_dof(&relative_pose(&w[0], &w[1])).0)
        .collect();
    Ok(FixtureTruth {
        layout,
        frames,
        poses,
        relative,
    })
}
