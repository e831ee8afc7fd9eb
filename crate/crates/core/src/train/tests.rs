use super::*;
use crate::nets::{Architecture, Decoder, Discriminator};
use crate::recon::{Observation, OFF_SURFACE_OFFSET};
use crate::shapes::{
    make_vehicle, sample_training_points, scan_viewpoints, uniform_points, virtual_scan, CsgNode, CsgShape,
    Primitive, SamplingConfig, ScanConfig, SdfSample,
};
use crate::Point;

fn scan(shape: &CsgShape, k: usize, seed: u64) -> Vec<Point> {
    let vp = scan_viewpoints(3, 2.5, seed)[k];
    let mut cfg = ScanConfig::looking_at_origin(vp, seed + k as u64);
    cfg.azimuth_count = 20;
    cfg.elevation_count = 20;
    cfg.max_points = 48;
    virtual_scan(shape, &cfg).unwrap().points
}

struct Fixture {
    arch: Architecture,
    samples: Vec<Vec<SdfSample>>,
    scans: Vec<Vec<Vec<Point>>>,
}

fn fixture() -> Fixture {
    let shapes: Vec<CsgShape> = (0..3).map(make_vehicle).collect();
    let sc = SamplingConfig {
        count: 96,
        ..Default::default()
    };
    Fixture {
        arch: Architecture::tiny(),
        samples: shapes
            .iter()
            .enumerate()
            .map(|(i, s)| sample_training_points(s, &sc, i as u64).unwrap())
            .collect(),
        scans: shapes
            .iter()
            .enumerate()
            .map(|(i, s)| (0..2).map(|k| scan(s, k, 10 + i as u64)).collect())
            .collect(),
    }
}

fn s1_cfg(epochs: usize) -> Stage1Config {
    Stage1Config {
        epochs,
        batch_per_shape: 40,
        seed: 5,
        ..Default::default()
    }
}

fn s2_cfg(epochs: usize) -> Stage2Config {
    Stage2Config {
        epochs,
        dis_uniform: 24,
        gt_samples: 32,
        batch: 2,
        seed: 6,
        ..Default::default()
    }
}

fn ft_cfg(epochs: usize) -> FinetuneConfig {
    FinetuneConfig {
        epochs,
        dis_uniform: 16,
        batch: 2,
        lr: 1e-3,
        seed: 8,
        ..Default::default()
    }
}

fn items(f: &Fixture, s1: &Stage1State) -> Vec<Stage2Item> {
    (0..f.samples.len())
        .map(|i| {
            let u = uniform_points(24, 6, &format!("pseudo-{i}"));
            Stage2Item {
                samples: f.samples[i].clone(),
                scans: f.scans[i].clone(),
                pseudo: build_pseudo_gt(&s1.decoder, &s1.code(i).unwrap(), &u, &f.scans[i]).unwrap(),
            }
        })
        .collect()
}

fn observations(f: &Fixture) -> Vec<Observation> {
    f.scans
        .iter()
        .map(|s| {
            Observation::from_cloud(&crate::shapes::PointCloud::new(s[0].clone()), OFF_SURFACE_OFFSET).unwrap()
        })
        .collect()
}

#[test]
fn stage1_zero_epochs_is_initialization() {
    let f = fixture();
    let cfg = s1_cfg(0);
    let trained = stage1_train(&f.samples, &f.arch.decoder, &cfg).unwrap();
    let fresh = Stage1State::init(&f.arch.decoder, 3, &cfg).unwrap();
    assert_eq!(trained.decoder.params.bit_pattern(), fresh.decoder.params.bit_pattern());
    assert_eq!(trained.codes.bit_pattern(), fresh.codes.bit_pattern());
    assert!(trained.log.rows.is_empty());
}

#[test]
fn stage1_is_deterministic_and_resumable() {
    let f = fixture();
    let a = stage1_train(&f.samples, &f.arch.decoder, &s1_cfg(4)).unwrap();
    let b = stage1_train(&f.samples, &f.arch.decoder, &s1_cfg(4)).unwrap();
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let mut half = Stage1State::init(&f.arch.decoder, 3, &s1_cfg(4)).unwrap();
    run_stage1(&mut half, &f.samples, &s1_cfg(4), 2, |_| Ok(())).unwrap();
    half.save(dir.path()).unwrap();
    let mut resumed = Stage1State::load(dir.path()).unwrap();
    run_stage1(&mut resumed, &f.samples, &s1_cfg(4), 4, |_| Ok(())).unwrap();
    assert_eq!(resumed.decoder.params.bit_pattern(), a.decoder.params.bit_pattern());
    assert_eq!(resumed.codes.bit_pattern(), a.codes.bit_pattern());
    assert_eq!(resumed.log, a.log);
    assert_eq!(a.log.rows.len(), 4);
}

#[test]
fn stage1_loss_goes_down() {
    let f = fixture();
    let s = stage1_train(&f.samples, &f.arch.decoder, &s1_cfg(30)).unwrap();
    let loss = s.log.column("loss").unwrap();
    assert!(loss[29] < loss[0], "{} vs {}", loss[29], loss[0]);
}

#[test]
fn stage1_rejects_mismatched_inputs() {
    let f = fixture();
    let mut s = Stage1State::init(&f.arch.decoder, 2, &s1_cfg(1)).unwrap();
    assert!(run_stage1(&mut s, &f.samples, &s1_cfg(1), 1, |_| Ok(())).is_err());
    assert_eq!(s.epoch, 0);
}

#[test]
fn discriminator_loss_at_half_is_two_ln_two() {
    assert!((discriminator_loss(0.0, 0.0) - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    assert!(discriminator_loss(30.0, -30.0) < 1e-12);
    assert!(discriminator_loss(-800.0, 800.0).is_finite());
}

#[test]
fn stage2_zero_head_starts_at_half_and_leaves_decoder_alone() {
    let f = fixture();
    let s1 = stage1_train(&f.samples, &f.arch.decoder, &s1_cfg(2)).unwrap();
    let dec_bits = s1.decoder.params.bit_pattern();
    let it = items(&f, &s1);
    let s2 = stage2_train(&s1.decoder, &it, &f.arch, &s2_cfg(1)).unwrap();
    assert_eq!(s1.decoder.params.bit_pattern(), dec_bits);
    assert_eq!(s2.log.last("d_real"), Some(0.5));
    assert_eq!(s2.log.last("d_fake"), Some(0.5));
    let dl = s2.log.last("dis_loss").unwrap();
    assert!((dl - 2.0 * std::f64::consts::LN_2).abs() < 1e-12, "{dl}");
    assert!(s2.log.last("code_gap").unwrap().is_finite());
}

#[test]
fn stage2_zero_epochs_deterministic_and_resumable() {
    let f = fixture();
    let s1 = stage1_train(&f.samples, &f.arch.decoder, &s1_cfg(2)).unwrap();
    let it = items(&f, &s1);
    let fresh = Stage2State::for_items(&f.arch, &s2_cfg(0), &it).unwrap();
    assert_eq!(stage2_train(&s1.decoder, &it, &f.arch, &s2_cfg(0)).unwrap(), fresh);

    let a = stage2_train(&s1.decoder, &it, &f.arch, &s2_cfg(3)).unwrap();
    let b = stage2_train(&s1.decoder, &it, &f.arch, &s2_cfg(3)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.encoder.params.bit_pattern(), fresh.encoder.params.bit_pattern());

    let dir = tempfile::tempdir().unwrap();
    let mut half = Stage2State::for_items(&f.arch, &s2_cfg(3), &it).unwrap();
    run_stage2(&mut half, &s1.decoder, &it, &s2_cfg(3), 1, |_| Ok(())).unwrap();
    half.save(dir.path()).unwrap();
    let mut resumed = Stage2State::load(dir.path()).unwrap();
    run_stage2(&mut resumed, &s1.decoder, &it, &s2_cfg(3), 3, |_| Ok(())).unwrap();
    assert_eq!(resumed, a);
}

#[test]
fn stage2_without_adversary_keeps_discriminator() {
    let f = fixture();
    let s1 = stage1_train(&f.samples, &f.arch.decoder, &s1_cfg(1)).unwrap();
    let it = items(&f, &s1);
    let cfg = Stage2Config {
        adversarial: false,
        ..s2_cfg(2)
    };
    let s2 = stage2_train(&s1.decoder, &it, &f.arch, &cfg).unwrap();
    let fresh = Stage2State::for_items(&f.arch, &cfg, &it).unwrap();
    assert_eq!(s2.discriminator, fresh.discriminator);
    assert_eq!(s2.log.last("gan"), Some(0.0));
}

#[test]
fn stage2_needs_two_shapes() {
    let f = fixture();
    let s1 = stage1_train(&f.samples, &f.arch.decoder, &s1_cfg(1)).unwrap();
    let it = items(&f, &s1);
    assert!(stage2_train(&s1.decoder, &it[..1], &f.arch, &s2_cfg(1)).is_err());
}

#[test]
fn pseudo_sample_sets_follow_layout() {
    let f = fixture();
    let dec = Decoder::init(&f.arch.decoder, 1);
    let z = vec![0.1; f.arch.decoder.code_dim];
    let u = uniform_points(5, 1, "u");
    let p = build_pseudo_gt(&dec, &z, &u, &f.scans[0]).unwrap();
    let (x, s) = p.sample_set(1);
    assert_eq!(x.len(), 5 + f.scans[0][1].len());
    assert_eq!(&x[..5], &u[..]);
    assert_eq!(&x[5..], &f.scans[0][1][..]);
    assert_eq!(s, dec.eval(&z, &x).unwrap());
}

#[test]
fn finetune_anchor_starts_at_zero_and_resumes() {
    let f = fixture();
    let s1 = stage1_train(&f.samples, &f.arch.decoder, &s1_cfg(2)).unwrap();
    let s2 = stage2_train(&s1.decoder, &items(&f, &s1), &f.arch, &s2_cfg(2)).unwrap();
    let obs = observations(&f);
    let fresh = FinetuneState::init(&s2.encoder, &obs, &ft_cfg(3)).unwrap();
    assert!(fresh.anchor_gaps(&obs).unwrap().iter().all(|g| *g == 0.0));

    let a = finetune(&s2.encoder, &s1.decoder, Some(&s2.discriminator), &obs, &ft_cfg(3)).unwrap();
    assert!(a.anchor_gaps(&obs).unwrap().iter().any(|g| *g > 0.0));
    assert_eq!(a.encoder.bn, s2.encoder.bn);

    let dir = tempfile::tempdir().unwrap();
    let mut half = FinetuneState::init(&s2.encoder, &obs, &ft_cfg(3)).unwrap();
    run_finetune(&mut half, &s1.decoder, Some(&s2.discriminator), &obs, &ft_cfg(3), 1, |_| Ok(())).unwrap();
    half.save(dir.path()).unwrap();
    let mut resumed = FinetuneState::load(dir.path()).unwrap();
    run_finetune(&mut resumed, &s1.decoder, Some(&s2.discriminator), &obs, &ft_cfg(3), 3, |_| Ok(())).unwrap();
    assert_eq!(resumed, a);
}

#[test]
fn finetune_zero_epochs_and_no_discriminator() {
    let f = fixture();
    let dec = Decoder::init(&f.arch.decoder, 2);
    let enc = crate::nets::Encoder::init(&f.arch.encoder, 2);
    let obs = observations(&f);
    let z = finetune(&enc, &dec, None, &obs, &ft_cfg(0)).unwrap();
    assert_eq!(z.encoder, enc);
    let disc = Discriminator::init(&f.arch.discriminator, 2, false);
    let cfg = FinetuneConfig {
        use_discriminator: false,
        ..ft_cfg(2)
    };
    let with = finetune(&enc, &dec, Some(&disc), &obs, &cfg).unwrap();
    let without = finetune(&enc, &dec, None, &obs, &cfg).unwrap();
    assert_eq!(with, without);
    assert_eq!(with.log.last("gan"), Some(0.0));
}

#[test]
fn sphere_overfit_smoke() {
    let sphere = CsgShape::new(CsgNode::leaf(Primitive::Sphere {
        center: [0.0; 3],
        radius: 0.5,
    }))
    .unwrap();
    let samples = sample_training_points(
        &sphere,
        &SamplingConfig {
            count: 512,
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let cfg = Stage1Config {
        epochs: 60,
        batch_per_shape: 512,
        lr_decoder: 2e-3,
        seed: 1,
        ..Default::default()
    };
    let s = stage1_train(&[samples], &Architecture::desk().decoder, &cfg).unwrap();
    let data = s.log.column("data").unwrap();
    assert!(data[59] < 0.5 * data[0], "{} -> {}", data[0], data[59]);
}
