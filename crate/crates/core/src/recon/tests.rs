use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::diffcore::{gradcheck, GradMap, ParamSet, Tape, Tensor};
use crate::error::Result;
use crate::nets::{Architecture, Decoder, Discriminator, Encoder};
use crate::rng::rng_for;
use crate::shapes::{make_vehicle, scan_viewpoints, virtual_scan, PointCloud, ScanConfig};

fn small_obs() -> Observation {
    let shape = make_vehicle(3);
    let mut cfg = ScanConfig::looking_at_origin(scan_viewpoints(1, 2.5, 3)[0], 1);
    cfg.azimuth_count = 24;
    cfg.elevation_count = 24;
    cfg.max_points = 40;
    Observation::from_cloud(&virtual_scan(&shape, &cfg).unwrap(), OFF_SURFACE_OFFSET).unwrap()
}

fn quick_cfg(iterations: usize) -> OptimConfig {
    OptimConfig {
        iterations,
        dis_uniform: 32,
        resample_every: 4,
        seed: 7,
        ..Default::default()
    }
}

#[test]
fn energy_examples() {
    assert_eq!(e_data(&[0.3, -0.02], &[0.3, -0.02], 0.1), 0.0);
    assert_eq!(e_data(&[0.5], &[0.0], 0.1), 0.1);
    assert_eq!(e_data(&[0.5, 0.5], &[0.0, 0.0], 0.1), 0.2);
    assert_eq!(e_reg(&[0.0; 5]), 0.0);
    assert_eq!(e_reg(&[0.0, 1.0, 0.0]), 1.0);
    let mut rng = rng_for(1, "ereg", 0);
    let z: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut oracle = 0.0;
    for v in &z {
        oracle += v * v;
    }
    assert_eq!(e_reg(&z), oracle);
    assert_eq!(e_dis(1.0), 0.0);
    assert!((e_dis(0.5) - std::f64::consts::LN_2).abs() < 1e-15);
    let mut prev = f64::INFINITY;
    for k in 1..100 {
        let e = e_dis(k as f64 / 100.0);
        assert!(e < prev);
        prev = e;
    }
}

proptest! {
    #[test]
    fn rho_is_symmetric_and_bounded(a in -5.0f64..5.0, b in -5.0f64..5.0, delta in 0.01f64..1.0) {
        prop_assert_eq!(rho(a, b, delta), rho(b, a, delta));
        prop_assert!(rho(a, b, delta) <= 2.0 * delta);
    }
}

#[test]
fn tape_data_term_matches_scalar_version() {
    let pred = vec![0.5, -0.3, 0.01, 0.05];
    let targets = vec![0.0, 0.02, -0.02, 0.2];
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::vector(pred.clone())).unwrap();
    let s = clamped_l1_sum(&mut tape, p, &targets, 0.1).unwrap();
    let m = clamped_l1_mean(&mut tape, p, &targets, 0.1).unwrap();
    assert!((tape.value(s).item().unwrap() - e_data(&pred, &targets, 0.1)).abs() < 1e-15);
    // 0.1 + 0.12 + 0.03 + 0.05
    assert!((e_data(&pred, &targets, 0.1) - 0.3).abs() < 1e-15);
    assert!((tape.value(m).item().unwrap() - 0.075).abs() < 1e-15);
}

#[test]
fn observation_layout() {
    let cloud = PointCloud {
        points: vec![[0.5, 0.0, 0.0], [0.0, 0.5, 0.0]],
        origins: Some(vec![[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]]),
    };
    let obs = Observation::from_cloud(&cloud, 0.02).unwrap();
    assert_eq!(obs.len(), 4);
    assert_eq!(obs.targets(), vec![0.0, 0.0, 0.02, -0.02]);
    assert!((obs.off_surface[0][0] - 0.52).abs() < 1e-15);
    assert!((obs.off_surface[1][1] - 0.48).abs() < 1e-15);
    assert!(Observation::from_cloud(&PointCloud::new(vec![]), 0.02).is_err());
}

#[test]
fn zero_iterations_return_the_initial_code() {
    let arch = Architecture::desk();
    let dec = Decoder::init(&arch.decoder, 1);
    let cfg = quick_cfg(0);
    let res = optimize_baseline(&dec, &small_obs(), &cfg).unwrap();
    assert_eq!(res.codes[0], random_code(arch.decoder.code_dim, cfg.init_sigma, cfg.seed));
    assert_eq!(res.trace.len(), 1);
}

#[test]
fn best_iterate_bookkeeping_and_frozen_networks() {
    let arch = Architecture::desk();
    let dec = Decoder::init(&arch.decoder, 2);
    let dis = Discriminator::init(&arch.discriminator, 3, false);
    let enc = Encoder::init(&arch.encoder, 4);
    let (d0, s0, e0) = (dec.params.bit_pattern(), dis.params.bit_pattern(), enc.params.bit_pattern());
    let obs = small_obs();
    let res = optimize_regularized(&dec, &dis, &enc, &obs, &quick_cfg(12)).unwrap();
    assert_eq!(res.trace.len(), 13);
    let mut best = f64::INFINITY;
    for r in &res.trace {
        assert!(r.data >= 0.0 && r.reg >= 0.0 && r.dis >= 0.0);
        best = best.min(r.total);
    }
    assert_eq!(res.best().total, best);
    assert!(res.best().total <= res.trace[0].total);
    assert_eq!(dec.params.bit_pattern(), d0);
    assert_eq!(dis.params.bit_pattern(), s0);
    assert_eq!(enc.params.bit_pattern(), e0);
    // the returned code reproduces the recorded data term
    let pred = dec.eval(res.code(), &obs.points()).unwrap();
    assert!((e_data(&pred, &obs.targets(), 0.1) - res.best().data).abs() < 1e-12);
}

#[test]
fn zero_discriminator_weight_reduces_to_baseline() {
    let arch = Architecture::desk();
    let dec = Decoder::init(&arch.decoder, 5);
    let dis = Discriminator::init(&arch.discriminator, 6, false);
    let obs = small_obs();
    let mut cfg = quick_cfg(15);
    cfg.weights.dis = 0.0;
    let base = optimize_baseline(&dec, &obs, &cfg).unwrap();
    let z0 = random_code(arch.decoder.code_dim, cfg.init_sigma, cfg.seed);
    let reg = optimize_regularized_from(&dec, &dis, &obs, z0, &cfg).unwrap();
    let bits = |r: &OptimResult| r.trace.iter().map(|e| e.total.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&base), bits(&reg));
    assert_eq!(base.codes, reg.codes);
}

#[test]
fn single_code_fusion_matches_plain_inference() {
    let arch = Architecture::desk();
    let dec = Decoder::init(&arch.decoder, 8);
    let dis = Discriminator::init(&arch.discriminator, 9, false);
    let obs = small_obs();
    let cfg = quick_cfg(6);
    let z0 = random_code(arch.decoder.code_dim, 0.1, 3);
    let plain = optimize_regularized_from(&dec, &dis, &obs, z0.clone(), &cfg).unwrap();
    let fusion = FusionConfig {
        codes: 1,
        split: 4,
        jitter: 0.0,
    };
    let (fused, mesh) = fuse_multicode(&dec, Some(&dis), &obs, &z0, &fusion, &cfg, 12).unwrap();
    assert_eq!(plain.codes, fused.codes);
    let a = field_grid(&dec, &plain.codes, None, 12).unwrap();
    let b = field_grid(&dec, &fused.codes, Some(4), 12).unwrap();
    assert_eq!(a, b);
    assert_eq!(mesh, plain.mesh(&dec, 12).unwrap());
}

#[test]
fn constant_positive_field_gives_empty_mesh() {
    let arch = Architecture::tiny();
    let mut dec = Decoder::init(&arch.decoder, 1);
    let last = arch.decoder.layers - 1;
    dec.params.set(&format!("l{last}/w"), Tensor::zeros(&[1, arch.decoder.width])).unwrap();
    dec.params.set(&format!("l{last}/b"), Tensor::vector(vec![0.5])).unwrap();
    let mesh = extract_mesh(&dec, &[vec![0.0; arch.decoder.code_dim]], None, 8).unwrap();
    assert!(mesh.is_empty());
}

/// Full inference energy as a function of the code.
fn energy_of_code(dec: &Decoder, dis: &Discriminator, obs: &Observation, xd: &[crate::Point], p: &ParamSet) -> Result<(f64, GradMap)> {
    let mut tape = Tape::new();
    let db = dec.params.bind(&mut tape, false)?;
    let sb = dis.params.bind(&mut tape, false)?;
    let obs_x = tape.constant(Tensor::from_points(&obs.points()))?;
    let dis_x = tape.constant(Tensor::from_points(xd))?;
    let targets = obs.targets();
    let bind = p.bind(&mut tape, true)?;
    let inputs = EnergyInputs {
        decoder: dec,
        dec_bind: &db,
        disc: Some((dis, &sb)),
        obs_x,
        obs_targets: &targets,
        dis_x: Some(dis_x),
        split: None,
        delta: 0.1,
        weights: EnergyWeights::default(),
    };
    let g = build_energy(&mut tape, &inputs, &[bind.var("z")?])?;
    let grads = tape.backward(g.total)?;
    Ok((tape.value(g.total).item()?, bind.gradients(&tape, &grads)))
}

#[test]
fn full_energy_passes_gradcheck() {
    let arch = Architecture::desk();
    let dec = Decoder::init(&arch.decoder, 11);
    let dis = Discriminator::init(&arch.discriminator, 12, false);
    let obs = small_obs();
    let mut xd = crate::shapes::uniform_points(30, 4, "gc");
    xd.extend_from_slice(&obs.surface);
    let mut p = ParamSet::new();
    p.insert("z", Tensor::vector(random_code(arch.decoder.code_dim, 0.3, 5)), true).unwrap();
    let err = gradcheck(|p| energy_of_code(&dec, &dis, &obs, &xd, p), &p, 1e-6, 128, 13).unwrap();
    assert!(err < 1e-4, "relative error {err}");
}
