use gausslayer::collision::CollisionConfig;
use gausslayer::io;
use gausslayer::pipeline::{self, LayeredAvatar};
use gausslayer::render::{Camera, RasterConfig};
use gausslayer::skinning::Pose;
use gausslayer::synth::{self, SceneKind, SyntheticSceneSpec};
use gausslayer::Vec3;

fn scene(kind: SceneKind) -> synth::SyntheticScene {
    synth::generate(&SyntheticSceneSpec::new(kind, 3)).unwrap()
}

fn camera() -> Camera {
    Camera::look_at(Vec3::new(0.0, 0.0, 2.5), Vec3::zeros(), Vec3::y(), 40.0, 40, 40).unwrap()
}

#[test]
fn bundle_round_trip_preserves_posed_geometry() {
    let s = scene(SceneKind::CapsuleAvatar);
    let a = &s.avatars[0];
    let dir = tempfile::tempdir().unwrap();
    io::save_avatar(dir.path(), a).unwrap();
    let b: LayeredAvatar = io::load_avatar(dir.path()).unwrap();
    for pose in &s.poses {
        let pa = pipeline::pose_avatar(a, pose).unwrap();
        let pb = pipeline::pose_avatar(&b, pose).unwrap();
        for (x, y) in pa.cloth.geometric.iter().zip(&pb.cloth.geometric) {
            assert!((x - y).amax() < 1e-6);
        }
    }
}

#[test]
fn rendered_frame_has_both_layers() {
    let s = scene(SceneKind::CapsuleAvatar);
    let frames = pipeline::animate(&s.avatars[0], &s.poses, &camera(), None, &RasterConfig::default()).unwrap();
    assert_eq!(frames.len(), s.poses.len());
    for f in &frames {
        let labels = f.image.labels.as_ref().unwrap();
        assert!(labels.iter().any(|l| l[1] > 0.5), "clothing visible");
        assert!(labels.iter().any(|l| l[0] > 0.5), "body visible");
        assert!(f.image.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
    }
    let again = pipeline::animate(&s.avatars[0], &s.poses, &camera(), None, &RasterConfig::default()).unwrap();
    assert_eq!(frames[1].image, again[1].image);
}

#[test]
fn tiled_and_reference_rasterizers_agree() {
    let s = scene(SceneKind::CapsuleAvatar);
    let tiled = RasterConfig::default();
    let reference = RasterConfig { tile_size: 0, ..tiled };
    let a = pipeline::render_frame(&s.avatars[0], &s.poses[2], &camera(), None, &tiled).unwrap();
    let b = pipeline::render_frame(&s.avatars[0], &s.poses[2], &camera(), None, &reference).unwrap();
    assert_eq!(a.image, b.image);
}

#[test]
fn transfer_clears_the_wider_body() {
    let s = scene(SceneKind::TransferPair);
    let (a, b) = (&s.avatars[0], &s.avatars[1]);
    let cfg = CollisionConfig::default();
    for pose in &s.poses {
        let g = pipeline::transfer_geometry(a, b, pose, &cfg).unwrap();
        let last = g.resolution.final_report();
        assert_eq!(last.violations, 0, "{last:?}");
        assert_eq!(g.cloth_positions.len(), a.cloth.len());
        let counts: Vec<usize> = g.resolution.reports.iter().map(|r| r.violations).collect();
        assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
    }
}

#[test]
fn segmentation_recovers_the_selector() {
    let s = scene(SceneKind::CapsuleAvatar);
    let a = &s.avatars[0];
    let cloth = pipeline::segment_clothing(&a.body).unwrap();
    assert_eq!(pipeline::selector_pixels(&a.body, &cloth), a.selector);
}

#[test]
fn resolving_own_clothing_is_a_no_op_at_rest() {
    let s = scene(SceneKind::CapsuleAvatar);
    let a = &s.avatars[0];
    let pose = Pose::identity(a.skeleton.joint_count());
    let f = pipeline::render_frame(a, &pose, &camera(), Some(&CollisionConfig::default()), &RasterConfig::default()).unwrap();
    let rest = a.cloth.canonical_positions();
    let moved = f.cloth_positions.iter().zip(&rest).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    assert!(moved < 1e-6, "moved {moved}");
    assert_eq!(f.resolution.unwrap().final_report().violations, 0);
}
