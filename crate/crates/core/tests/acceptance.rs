//! Acceptance criteria, one test each. Every test writes a single
//! `criterion N ... PASS|FAIL` line to stderr (bypassing output capture) and
//! then asserts the same condition.

mod common;

use std::io::Write as _;
use std::time::Instant;

use autograd::{grad, no_grad, Tensor, Var};
use modify::data::StyleProfile;
use modify::eval::{
    ablate_swap, ablate_xi, diversity_score, frechet_distance, AblationSettings, GaussianStats,
};
use modify::image::grid;
use modify::latent::{fuse_batch, split_batch, LatentCode, LatentConfig};
use modify::losses::{
    cosine_distance, loss_adv_critic, loss_adv_gen, loss_id, loss_lpips, loss_recon, loss_swap, penalty_mix,
    style_consistency, wasserstein_gap, Stage1Weights, Term,
};
use modify::model::{Embedders, StyleModel};
use modify::nets::{ArchOptions, ArchSpec, Module, Param};
use modify::persist::{
    load_checkpoint, load_package, read_manifest, save_checkpoint, save_package, scan_package,
};
use modify::stage1::{recon_error, Stage1Schedule, Stage1Trainer, FULL_BOUNDARY, FULL_TOTAL, TOY_BOUNDARY, TOY_TOTAL};
use modify::stage2::{
    sample_multimodal, sample_noise, stylize_offline, stylize_online, stylize_test_time, StylizeConfig,
    StylizeMode, TEST_TIME_STEPS,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{synth, tiny_package, tiny_spec};

fn report(n: u32, name: &str, ok: bool, detail: &str, started: Instant) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n:>2} {name:<24} {verdict} ({detail}; {:.1}s)",
        started.elapsed().as_secs_f64()
    );
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

#[test]
fn criterion_01_latent_algebra() {
    let t0 = Instant::now();
    let mut configs = Vec::new();
    for l in [2, 10, 18] {
        for xi in 1..l {
            configs.push(LatentConfig::new(l, 512, xi).unwrap());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = 0;
    for i in 0..1000 {
        let cfg = configs[i % configs.len()];
        let n = cfg.num_layers * cfg.layer_dim;
        let values = Tensor::new(&[cfg.num_layers, cfg.layer_dim], (0..n).map(|_| rng.random_range(-3.0..3.0)).collect());
        let code = LatentCode::new(values, cfg).unwrap();
        let (c, s) = code.split();
        let back = LatentCode::fuse_with(&c, &s, &cfg).unwrap();
        let (c2, s2) = back.split();
        let bitwise = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        if !(bitwise(back.values(), code.values()) && bitwise(&c, &c2) && bitwise(&s, &s2)) {
            failures += 1;
        }
    }
    let fast = t0.elapsed().as_secs_f64() < 1.0;
    report(
        1,
        "latent algebra",
        failures == 0 && fast,
        &format!("1000 codes over {} configs, {failures} mismatches", configs.len()),
        t0,
    );
}

#[test]
fn criterion_02_loss_identity_cases() {
    let t0 = Instant::now();
    let spec = tiny_spec(16);
    let emb = Embedders::new(&spec).unwrap();
    let x = synth(StyleProfile::Photo, 3, 16, 2).all().to_var();
    let w = Var::constant(modify::rng::noise(3, "t", 0, 3, 8).reshape(&[3, 1, 8]));
    let e = emb.identity.embed(&x).unwrap();
    let scores = Var::constant(Tensor::new(&[3], vec![0.3, -1.2, 4.0]));
    let values = [
        ("recon", loss_recon(&x, &x).unwrap().value().item()),
        ("lpips", loss_lpips(&emb.perceptual, &x, &x).unwrap().value().item()),
        ("id", cosine_distance(&e, &e).unwrap().value().item()),
        ("id_images", loss_id(&emb.identity, &x, &x).unwrap().value().item()),
        ("swap", style_consistency(&w, &w).unwrap().value().item()),
        ("wasserstein", wasserstein_gap(&scores, &scores).value().item()),
    ];
    let ok = values.iter().all(|(_, v)| *v == 0.0);
    let detail = values.iter().map(|(k, v)| format!("{k}={v:e}")).collect::<Vec<_>>().join(" ");
    report(2, "loss identity cases", ok, &detail, t0);
}

/// Which parameters a gradient check perturbs.
#[derive(Clone, Copy)]
enum Side {
    Generator,
    Critic,
}

fn side_params(model: &StyleModel, side: Side) -> Vec<&Param> {
    match side {
        Side::Generator => model.generator_params(),
        Side::Critic => model.critic.as_ref().unwrap().params(),
    }
}

fn side_params_mut(model: &mut StyleModel, side: Side) -> Vec<&mut Param> {
    match side {
        Side::Generator => model.generator_params_mut(),
        Side::Critic => model.critic.as_mut().unwrap().params_mut(),
    }
}

fn nudge(model: &mut StyleModel, side: Side, p: usize, k: usize, delta: f64) {
    let mut params = side_params_mut(model, side);
    let mut t = params[p].value().clone();
    t.data_mut()[k] += delta;
    params[p].set(t);
}

struct GradCheck {
    checked: usize,
    passed: usize,
    worst: f64,
}

/// Analytic gradients against central differences on 200 sampled
/// coordinates of the parameters the loss depends on.
fn grad_check(model: &mut StyleModel, side: Side, f: &dyn Fn(&StyleModel) -> Var, seed: u64) -> GradCheck {
    const H: f64 = 1e-6;
    const SAMPLES: usize = 200;
    let loss = f(model);
    let vars: Vec<Var> = side_params(model, side).iter().map(|p| p.var().clone()).collect();
    let grads = grad(&loss, &vars, false);
    let live: Vec<(usize, Tensor)> = grads
        .iter()
        .enumerate()
        .filter_map(|(i, g)| g.as_ref().map(|g| (i, g.value().clone())))
        .collect();
    let total: usize = live.iter().map(|(_, g)| g.numel()).sum();
    assert!(total > 0, "loss does not depend on the checked parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = GradCheck {
        checked: 0,
        passed: 0,
        worst: 0.0,
    };
    for _ in 0..SAMPLES {
        let mut flat = rng.random_range(0..total);
        let (p, g) = live
            .iter()
            .find(|(_, g)| {
                if flat < g.numel() {
                    true
                } else {
                    flat -= g.numel();
                    false
                }
            })
            .unwrap();
        let analytic = g.data()[flat];
        nudge(model, side, *p, flat, H);
        let plus = no_grad(|| f(model)).value().item();
        nudge(model, side, *p, flat, -2.0 * H);
        let minus = no_grad(|| f(model)).value().item();
        nudge(model, side, *p, flat, H);
        let numeric = (plus - minus) / (2.0 * H);
        let scale = analytic.abs().max(numeric.abs());
        // Both sides below 1e-9 count as agreeing zeros.
        let rel = if scale < 1e-9 { 0.0 } else { (analytic - numeric).abs() / scale };
        res.checked += 1;
        if rel <= 1e-3 {
            res.passed += 1;
        }
        res.worst = res.worst.max(rel);
    }
    res
}

#[test]
fn criterion_03_gradient_verification() {
    let t0 = Instant::now();
    let spec = ArchSpec::new(8, &ArchOptions::tiny(8)).unwrap();
    assert_eq!((spec.latent.num_layers, spec.latent.layer_dim), (4, 8));
    let mut model = StyleModel::new(&spec, 3).unwrap();
    let emb = Embedders::new(&spec).unwrap();
    let y = synth(StyleProfile::Painterly, 2, 8, 4).all().to_var();
    let z = Var::constant(modify::rng::noise(4, "z", 0, 2, spec.remapper.noise_dim));
    let lat = spec.latent;
    let alpha = penalty_mix(&mut modify::rng::stream(4, "gp", 0), 2);

    let y_r = |m: &StyleModel| m.decoder.forward(&m.encoder.forward(&y).unwrap()).unwrap();
    let y_z = |m: &StyleModel| {
        let (c, _) = split_batch(&m.encoder.forward(&y).unwrap(), &lat).unwrap();
        let w_z = m.remapper.forward(&z).unwrap();
        (m.decoder.forward(&fuse_batch(&c, &w_z, &lat).unwrap()).unwrap(), w_z)
    };
    let critic = |m: &StyleModel| m.critic.clone().unwrap();
    let cases: Vec<(&str, Side, Box<dyn Fn(&StyleModel) -> Var + '_>)> = vec![
        ("L_r", Side::Generator, Box::new(|m| loss_recon(&y_r(m), &y).unwrap())),
        ("L_lp", Side::Generator, Box::new(|m| loss_lpips(&emb.perceptual, &y_r(m), &y).unwrap())),
        ("L_id", Side::Generator, Box::new(|m| loss_id(&emb.identity, &y, &y_r(m)).unwrap())),
        (
            "L_swap",
            Side::Generator,
            Box::new(|m| {
                let (yz, w_z) = y_z(m);
                loss_swap(&m.encoder, &yz, &w_z, &lat).unwrap()
            }),
        ),
        ("L_adv_r", Side::Generator, Box::new(|m| loss_adv_gen(&critic(m), &y_r(m)).unwrap())),
        ("L_adv_z", Side::Generator, Box::new(|m| loss_adv_gen(&critic(m), &y_z(m).0).unwrap())),
        (
            "critic+gp",
            Side::Critic,
            Box::new(|m| {
                let fake = no_grad(|| y_r(m));
                loss_adv_critic(m.critic.as_ref().unwrap(), &y, &fake, 10.0, &alpha).unwrap()
            }),
        ),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (name, side, f)) in cases.iter().enumerate() {
        let r = grad_check(&mut model, *side, f.as_ref(), 100 + i as u64);
        let frac = r.passed as f64 / r.checked as f64;
        ok &= frac >= 0.95;
        parts.push(format!("{name} {}/{}", r.passed, r.checked));
    }
    ok &= t0.elapsed().as_secs_f64() < 120.0;
    report(3, "gradient verification", ok, &parts.join(", "), t0);
}

#[test]
fn criterion_04_schedule_fidelity() {
    let t0 = Instant::now();
    let p1 = Stage1Weights::from_array([0.0, 0.8, 0.1, 0.0, 0.8, 1.0]);
    let p2 = Stage1Weights::from_array([1.0, 0.0, 0.0, 0.1, 0.0, 0.0]);
    let mut ok = true;
    for (s, boundary, total) in [
        (Stage1Schedule::full(), FULL_BOUNDARY, FULL_TOTAL),
        (Stage1Schedule::toy(), TOY_BOUNDARY, TOY_TOTAL),
    ] {
        ok &= s.weights_at(0).unwrap() == p1;
        ok &= s.weights_at(boundary - 1).unwrap() == p1;
        ok &= s.weights_at(boundary).unwrap() == p2;
        ok &= s.weights_at(total - 1).unwrap() == p2;
        ok &= s.weights_at(total).is_err();
    }
    report(4, "schedule fidelity", ok, "full 150000/170000 and toy 150/200 boundaries", t0);
}

#[test]
fn criterion_05_overfit_smoke() {
    let t0 = Instant::now();
    let data = synth(StyleProfile::Painterly, 8, 64, 0);
    let spec = ArchSpec::new(64, &ArchOptions::default()).unwrap();
    let mut trainer = Stage1Trainer::new(&spec, data.clone(), Stage1Schedule::toy(), 0).unwrap();
    let outcome = trainer.run(|_, _| Ok(()));
    let (ok, detail) = match outcome {
        Err(e) => (false, format!("training error: {e}")),
        Ok(reports) => {
            let finite = reports
                .iter()
                .all(|r| r.total.is_finite() && r.terms.values().all(|v| v.is_finite()));
            let first10: f64 =
                reports[..10].iter().map(|r| r.get(Term::Recon).unwrap()).sum::<f64>() / 10.0;
            let boundary = last_phase1_recon(&reports);
            let end = recon_error(trainer.model(), &data).unwrap();
            let ratio = end / first10;
            let fast = t0.elapsed().as_secs_f64() < 15.0 * 60.0;
            (
                finite && ratio < 0.5 && fast,
                format!(
                    "{} iterations, first-10 mean {first10:.4}, last phase-1 batch {boundary:.4}, end {end:.4}, ratio {ratio:.3} (need < 0.5)",
                    reports.len()
                ),
            )
        }
    };
    report(5, "overfit smoke", ok, &detail, t0);
}

fn last_phase1_recon(reports: &[modify::losses::LossReport]) -> f64 {
    reports.iter().rev().find_map(|r| r.get(Term::Recon)).unwrap_or(f64::NAN)
}

#[test]
fn criterion_06_freeze_invariants() {
    let t0 = Instant::now();
    let pkg = tiny_package(16, 4, 6);
    let source = synth(StyleProfile::Photo, 4, 16, 7);
    let (enc, dec, rem) = (
        pkg.model.encoder.checksum(),
        pkg.model.decoder.checksum(),
        pkg.model.remapper.checksum(),
    );
    let critic = pkg.model.critic.as_ref().unwrap().checksum();

    let mut off = StylizeConfig::new(StylizeMode::Offline);
    off.steps = 5;
    off.batch_size = 2;
    let mut on = StylizeConfig::new(StylizeMode::Online);
    on.steps = 5;
    let mut tt = StylizeConfig::new(StylizeMode::TestTime);
    tt.steps = 5;
    let sessions = [
        ("offline", stylize_offline(&pkg, &source, &off, 1, |_| {}).unwrap()),
        (
            "online",
            stylize_online(&pkg, source.images().iter().cycle().cloned(), &on, 1, |_, _| {}).unwrap(),
        ),
        ("test-time", stylize_test_time(&pkg, &source.images()[0], &tt, 1).unwrap().0),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, s) in &sessions {
        let out = s.to_package();
        let frozen = s.frozen_encoder().checksum() == enc
            && out.model.encoder.checksum() == enc
            && s.decoder().checksum() == dec
            && out.model.decoder.checksum() == dec
            && s.remapper().checksum() == rem
            && out.model.remapper.checksum() == rem;
        let moved = s.trainable_encoder().checksum() != enc && s.critic().checksum() != critic;
        ok &= frozen && moved;
        parts.push(format!("{name}: frozen={frozen} moved={moved}"));
    }
    report(6, "freeze invariants", ok, &parts.join(", "), t0);
}

#[test]
fn criterion_07_mode_semantics() {
    let t0 = Instant::now();
    let pkg = tiny_package(16, 4, 8);
    let image = synth(StyleProfile::Photo, 1, 16, 9);
    let tt = StylizeConfig::new(StylizeMode::TestTime);
    let (session, _) = stylize_test_time(&pkg, &image.images()[0], &tt, 3).unwrap();
    let default_steps = tt.steps == TEST_TIME_STEPS && TEST_TIME_STEPS == 50 && session.steps_taken() == 50;

    let steps = 6;
    let mut off = StylizeConfig::new(StylizeMode::Offline);
    off.steps = steps;
    off.batch_size = 1;
    let mut on = StylizeConfig::new(StylizeMode::Online);
    on.steps = steps;
    let a = stylize_offline(&pkg, &image, &off, 11, |_| {}).unwrap();
    let b = stylize_online(&pkg, std::iter::repeat(image.images()[0].clone()), &on, 11, |_, _| {}).unwrap();
    let equal = a.trainable_encoder().checksum() == b.trainable_encoder().checksum()
        && a.critic().checksum() == b.critic().checksum()
        && a.steps_taken() == b.steps_taken();
    report(
        7,
        "mode semantics",
        default_steps && equal,
        &format!("test-time steps {} (default {}), online == offline batch-1: {equal}", session.steps_taken(), tt.steps),
        t0,
    );
}

#[test]
fn criterion_08_frechet_oracle() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (m1, m2): (f64, f64) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let (s1, s2): (f64, f64) = (rng.random_range(0.01..5.0), rng.random_range(0.01..5.0));
        let g = |m: f64, s: f64| {
            GaussianStats::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, s * s), 100).unwrap()
        };
        let d = frechet_distance(&g(m1, s1), &g(m2, s2)).unwrap();
        worst = worst.max((d - ((m1 - m2).powi(2) + (s1 - s2).powi(2))).abs());
    }
    let feats = modify::rng::noise(8, "frechet", 0, 64, 16);
    let stats = GaussianStats::from_features(&feats).unwrap();
    let same = frechet_distance(&stats, &stats).unwrap();
    let ok = worst <= 1e-8 && same <= 1e-6 && t0.elapsed().as_secs_f64() < 1.0;
    report(
        8,
        "frechet oracle",
        ok,
        &format!("max 1-dim error {worst:e}, identical 16-dim {same:e}"),
        t0,
    );
}

/// Resolution and widths of the ablation runs.
fn ablation_arch() -> (usize, ArchOptions) {
    (16, ArchOptions::default())
}

#[test]
fn criterion_09_swap_ablation() {
    let t0 = Instant::now();
    let (res, arch) = ablation_arch();
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..3u64 {
        let style = synth(StyleProfile::Painterly, 8, res, 100 + seed);
        let source = synth(StyleProfile::Photo, 8, res, 200 + seed);
        let settings = AblationSettings::new(arch.clone(), Stage1Schedule::toy(), seed);
        let r = ablate_swap(&style, &source, &settings).unwrap();
        wins += r.swap_helps() as u32;
        parts.push(format!("seed {seed}: on {:.4} vs off {:.4}", r.on.consistency, r.off.consistency));
    }
    let ok = wins >= 2 && t0.elapsed().as_secs_f64() < 3600.0;
    report(9, "swap ablation trend", ok, &format!("{wins}/3 seeds; {}", parts.join(", ")), t0);
}

#[test]
fn criterion_10_xi_ablation() {
    let t0 = Instant::now();
    let (res, arch) = ablation_arch();
    let xi_list = [1, 3, 5];
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..3u64 {
        let style = synth(StyleProfile::Painterly, 8, res, 300 + seed);
        let source = synth(StyleProfile::Photo, 8, res, 400 + seed);
        let settings = AblationSettings::new(arch.clone(), Stage1Schedule::toy(), seed);
        let r = ablate_xi(&style, &source, &xi_list, &settings).unwrap();
        wins += r.extremes_increase() as u32;
        let ids: Vec<String> = r.runs.iter().map(|x| format!("ξ{}={:.4}", x.xi, x.loss_id)).collect();
        parts.push(format!("seed {seed}: {}", ids.join(" ")));
    }
    let ok = wins >= 2 && t0.elapsed().as_secs_f64() < 3600.0;
    report(10, "xi ablation trend", ok, &format!("{wins}/3 seeds; {}", parts.join(", ")), t0);
}

fn all_checksums(pkg: &modify::persist::StyleModelPackage) -> Vec<String> {
    let m = &pkg.model;
    let mut v = vec![m.encoder.checksum(), m.decoder.checksum(), m.remapper.checksum()];
    v.extend(m.critic.as_ref().map(|c| c.checksum()));
    v.extend(pkg.adapted_encoder.as_ref().map(|e| e.checksum()));
    v
}

#[test]
fn criterion_11_persistence() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = synth(StyleProfile::Painterly, 4, 16, 11);
    let mut schedule = Stage1Schedule::scaled(10);
    schedule.batch_size = 2;
    let spec = tiny_spec(16);

    let mut full = Stage1Trainer::new(&spec, data.clone(), schedule.clone(), 5).unwrap();
    full.run(|_, _| Ok(())).unwrap();

    let mut part = Stage1Trainer::new(&spec, data.clone(), schedule, 5).unwrap();
    for stop in [4, 8] {
        while part.iteration() < stop {
            part.step().unwrap();
        }
        let ck = dir.path().join(format!("ckpt{stop}"));
        save_checkpoint(&part.checkpoint(), &ck).unwrap();
        part = Stage1Trainer::resume(load_checkpoint(&ck).unwrap(), data.clone()).unwrap();
    }
    part.run(|_, _| Ok(())).unwrap();
    let resumed = all_checksums(&full.package(true)) == all_checksums(&part.package(true))
        && full.checkpoint().optimizers == part.checkpoint().optimizers;

    let pkg = full.package(true);
    let p = dir.path().join("pkg");
    save_package(&pkg, &p).unwrap();
    let back = load_package(&p).unwrap();
    let p2 = dir.path().join("pkg2");
    save_package(&back, &p2).unwrap();
    let manifest_same = read_manifest(&p).unwrap().canonical_checksum() == read_manifest(&p2).unwrap().canonical_checksum();
    let package_rt = all_checksums(&pkg) == all_checksums(&back) && back.info == pkg.info && manifest_same;

    let ck = full.checkpoint();
    let cp = dir.path().join("ckpt");
    save_checkpoint(&ck, &cp).unwrap();
    let ck_back = load_checkpoint(&cp).unwrap();
    let checkpoint_rt = all_checksums(&ck.package) == all_checksums(&ck_back.package) && ck.optimizers == ck_back.optimizers;

    let clean = scan_package(&p).unwrap().is_empty() && scan_package(&cp).unwrap().is_empty();
    let ok = resumed && package_rt && checkpoint_rt && clean;
    report(
        11,
        "persistence",
        ok,
        &format!("resume {resumed}, package {package_rt}, checkpoint {checkpoint_rt}, weights only {clean}"),
        t0,
    );
}

#[test]
fn criterion_12_end_to_end() {
    let t0 = Instant::now();
    let res = 32;
    let style = synth(StyleProfile::Painterly, 8, res, 12);
    let source = synth(StyleProfile::Photo, 8, res, 13);
    let opts = modify::stage1::EncapsulateOptions {
        include_critic: true,
        ..Default::default()
    };
    let pkg = modify::stage1::encapsulate(&style, &Stage1Schedule::toy(), 0, &opts, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_package(&pkg, &dir.path().join("style")).unwrap();
    let pkg = load_package(&dir.path().join("style")).unwrap();

    let mut cfg = StylizeConfig::new(StylizeMode::Offline);
    cfg.steps = 200;
    let adapted = stylize_offline(&pkg, &source, &cfg, 0, |_| {}).unwrap().to_package();
    save_package(&adapted, &dir.path().join("adapted")).unwrap();
    let adapted = load_package(&dir.path().join("adapted")).unwrap();

    let x = source.batch(&[0, 1, 2]).unwrap();
    let seeds = [1u64, 2, 3];
    let outputs = sample_multimodal(&adapted, &x, &seeds).unwrap();
    let rows: Vec<Vec<Tensor>> = (0..x.len())
        .map(|i| std::iter::once(x.image(i)).chain(outputs.iter().map(|o| o.image(i))).collect())
        .collect();
    let g = grid(&rows).unwrap();
    let grid_ok = g.width() as usize == 4 * res + 3 * 2 && g.height() as usize == 3 * res + 2 * 2;

    let emb = Embedders::new(&adapted.model.spec).unwrap();
    let diversity = diversity_score(&adapted, &x, &seeds, &emb.perceptual).unwrap();

    let lat = adapted.model.spec.latent;
    let content_of = |seed: u64| -> Tensor {
        no_grad(|| {
            let (c, _) = split_batch(&adapted.stylizing_encoder().forward(&x.to_var()).unwrap(), &lat).unwrap();
            let z = Tensor::stack(&vec![sample_noise(seed, adapted.model.spec.remapper.noise_dim).index_outer(0); 3]);
            let w_z = adapted.model.remapper.forward(&Var::constant(z)).unwrap();
            let code = fuse_batch(&c, &w_z, &lat).unwrap();
            split_batch(&code, &lat).unwrap().0.value().clone()
        })
    };
    let shared = seeds.iter().all(|&s| content_of(s) == content_of(seeds[0]));
    let columns_differ = outputs[0] != outputs[1] && outputs[1] != outputs[2] && outputs[0] != outputs[2];
    let ok = grid_ok && diversity > 0.0 && shared && columns_differ && t0.elapsed().as_secs_f64() < 1800.0;
    report(
        12,
        "end-to-end pipeline",
        ok,
        &format!("diversity {diversity:.5}, shared content rows {shared}, grid {}x{}", g.width(), g.height()),
        t0,
    );
}
