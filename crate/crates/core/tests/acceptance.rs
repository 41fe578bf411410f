//! Acceptance gate. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

mod common;

use std::f64::consts::FRAC_PI_2;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Rotation3, Vector3};
use num_complex::Complex64;

use nvphasor::bootstrap::bootstrap;
use nvphasor::ensemble::{ensemble_modulations, ensemble_resonances};
use nvphasor::lineshape::{linearity_guard, LineshapeFit};
use nvphasor::noise::GaussianStream;
use nvphasor::pipeline::{analyze, FitResult, PipelineConfig, Seeds};
use nvphasor::polarization::{ellipse_from_phasor, fit_coupled_coils, CoupledCoilModel};
use nvphasor::reconstruct::{ac_cost, Assignment};
use nvphasor::spin::{real_modulation, resonance_frequencies};
use nvphasor::synth::{
    crossed_coil_scenarios, generate_pair, generate_rotation_series, rotating_coil_field,
    ResponseModel, RotationSpec, SyntheticScenario,
};
use nvphasor::warning::Warning;
use nvphasor::{
    default_orientation_set, Branch, ComplexFieldVector, Frame, ModulationSet, OrientationSet,
    RealFieldVector, ResonanceLabel, SpinParams,
};

use common::{oracle_frequencies, rel, sweep_extrema};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Uniform on `(-π, π]`: the polar angle of an isotropic 2D Gaussian.
fn random_angle(g: &mut GaussianStream) -> f64 {
    let y = g.next_standard();
    y.atan2(g.next_standard())
}

fn random_vector(g: &mut GaussianStream, scale: f64) -> Vector3<f64> {
    Vector3::new(g.next_standard(), g.next_standard(), g.next_standard()) * scale
}

fn nv1(v: Vector3<f64>) -> RealFieldVector {
    RealFieldVector::from_vector(v, Frame::Nv(1))
}

fn all_components_truth() -> ComplexFieldVector {
    ComplexFieldVector::from_components(
        [
            Complex64::new(0.4e-6, 0.15e-6),
            Complex64::new(-0.25e-6, 0.3e-6),
            Complex64::new(0.2e-6, -0.1e-6),
        ],
        Frame::Crystal,
    )
}

fn run(config: &PipelineConfig, s: &SyntheticScenario) -> Result<FitResult, String> {
    let pair = generate_pair(s).map_err(|e| e.to_string())?;
    analyze(config, &pair.fm, &pair.ac, &Seeds::default()).map_err(|e| e.to_string())
}

fn eigenfrequencies() -> Outcome {
    let p = SpinParams::default();
    let (d, g) = (p.d(), p.gamma());
    let mut worst: f64 = 0.0;
    for b in [0.1e-3, 1e-3, 10e-3] {
        let r = resonance_frequencies(&p, &nv1(Vector3::new(0.0, 0.0, b)))
            .map_err(|e| e.to_string())?;
        worst = worst
            .max(rel(r.f_minus, d - g * b))
            .max(rel(r.f_plus, d + g * b));
        for dir in [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.6, -0.8, 0.0),
            Vector3::new(0.3, 0.4, 0.2),
        ] {
            let v = dir * b;
            let r = resonance_frequencies(&p, &nv1(v)).map_err(|e| e.to_string())?;
            let (om, op) = oracle_frequencies(d, g, v.into());
            worst = worst.max(rel(r.f_minus, om)).max(rel(r.f_plus, op));
        }
    }
    // High-precision reference for B = (1 mT, 0, 0).
    let r =
        resonance_frequencies(&p, &nv1(Vector3::new(1e-3, 0.0, 0.0))).map_err(|e| e.to_string())?;
    let frozen = rel(r.f_minus, 2870273144.7358722).max(rel(r.f_plus, 2870546289.4717444));
    ensure(worst < 1e-9 && frozen < 1e-12, || {
        format!("worst relative error {worst:.2e}, reference error {frozen:.2e}")
    })?;
    Ok(format!("worst relative error {worst:.2e}"))
}

fn azimuthal_invariance() -> Outcome {
    let p = SpinParams::default();
    let mut g = GaussianStream::new(11, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let b = random_vector(&mut g, 10e-3);
        let theta = random_angle(&mut g);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), theta);
        let r0 = resonance_frequencies(&p, &nv1(b)).map_err(|e| e.to_string())?;
        let r1 = resonance_frequencies(&p, &nv1(rz * b)).map_err(|e| e.to_string())?;
        worst = worst
            .max(rel(r1.f_minus, r0.f_minus))
            .max(rel(r1.f_plus, r0.f_plus));
    }
    // The same freedom in the orientation set itself.
    let base = default_orientation_set();
    let mut rots = *base.rotations();
    for r in rots.iter_mut() {
        *r = Rotation3::from_axis_angle(&Vector3::z_axis(), random_angle(&mut g)).into_inner() * *r;
    }
    let turned = OrientationSet::new(rots, Matrix3::identity()).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        let b = RealFieldVector::from_vector(random_vector(&mut g, 10e-3), Frame::Crystal);
        let a = ensemble_resonances(&p, &base, &b).map_err(|e| e.to_string())?;
        let c = ensemble_resonances(&p, &turned, &b).map_err(|e| e.to_string())?;
        for k in 0..8 {
            worst = worst.max(rel(c[k], a[k]));
        }
    }
    ensure(worst < 1e-9, || {
        format!("worst relative change {worst:.2e}")
    })?;
    Ok(format!("worst relative change {worst:.2e}"))
}

fn oracle_round_trip() -> Outcome {
    let truth_ac = all_components_truth();
    let quiet = SyntheticScenario {
        noise_std: 0.0,
        ..SyntheticScenario::default()
    }
    .with_b_ac(truth_ac);
    let config = PipelineConfig::new(quiet.m_fm_hz);
    let r = run(&config, &quiet)?;
    let got_ac = r.ac.b_ac.to_array6();
    let want_ac = truth_ac.to_array6();
    let got_dc = r.dc.b_dc.to_array();
    let want_dc = quiet.b_dc.to_array();
    let mut worst: f64 = 0.0;
    for i in 0..6 {
        worst = worst.max(rel(got_ac[i], want_ac[i]));
    }
    for i in 0..3 {
        worst = worst.max(rel(got_dc[i], want_dc[i]));
    }
    ensure(worst < 1e-3, || {
        format!("noise-free worst component error {:.3}%", 100.0 * worst)
    })?;

    let mut config = config;
    config.bootstrap.n_replicas = 100;
    let mut hits = [0usize; 9];
    let runs = 100;
    for k in 0..runs {
        let s = SyntheticScenario {
            noise_std: 0.01,
            seed: 1000 + k,
            ..quiet.clone()
        };
        config.bootstrap.seed = k;
        let pair = generate_pair(&s).map_err(|e| e.to_string())?;
        let rep = bootstrap(&config, &pair.fm, &pair.ac, &Seeds::default())
            .map_err(|e| format!("seed {k}: {e}"))?;
        for i in 0..6 {
            if (rep.baseline.b_ac[i] - want_ac[i]).abs() < 3.0 * rep.component_std[i] {
                hits[i] += 1;
            }
        }
        for i in 0..3 {
            if (rep.baseline.b_dc[i] - want_dc[i]).abs() < 3.0 * rep.dc_std[i] {
                hits[6 + i] += 1;
            }
        }
    }
    let min_hits = *hits.iter().min().unwrap_or(&0);
    ensure(min_hits >= 95, || {
        format!("coverage per component {hits:?} of {runs}")
    })?;
    Ok(format!(
        "noise-free worst {:.2e}%, SNR-100 coverage per component {hits:?}/{runs}",
        100.0 * worst
    ))
}

fn rotating_coil_base() -> SyntheticScenario {
    SyntheticScenario::default().with_b_ac(rotating_coil_field(
        1e-6,
        0.0583,
        &Vector3::new(0.3, -0.2, 1.0),
        0.0,
    ))
}

fn eccentricity_reproduction() -> Outcome {
    let base = rotating_coil_base();
    let spec = RotationSpec {
        n_angles: 12,
        axis: [0.3, -0.2, 1.0],
    };
    let config = PipelineConfig::new(base.m_fm_hz);
    let records = generate_rotation_series(&base, &spec).map_err(|e| e.to_string())?;
    let mut ecc = Vec::new();
    for rec in &records {
        let r = analyze(&config, &rec.pair.fm, &rec.pair.ac, &Seeds::default())
            .map_err(|e| e.to_string())?;
        ecc.push(r.ellipse.ok_or("no ellipse")?.eccentricity);
    }
    let lo = ecc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ecc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ensure(
        ecc.len() == 12 && ecc.iter().all(|e| (e - 0.9983).abs() <= 0.002),
        || format!("eccentricities {ecc:.5?}"),
    )?;
    Ok(format!(
        "eccentricity range [{lo:.5}, {hi:.5}] over {} angles",
        ecc.len()
    ))
}

fn coil_model(m_c: f64, alpha: f64, beta: f64, kappa: f64) -> CoupledCoilModel {
    CoupledCoilModel {
        mag_a: 1e-6,
        mag_b: 0.8e-6,
        dir_a: RealFieldVector::from_vector(
            Vector3::new(1.0, 0.1, 0.05).normalize(),
            Frame::Crystal,
        ),
        dir_b: RealFieldVector::from_vector(
            Vector3::new(-0.05, 1.0, 0.1).normalize(),
            Frame::Crystal,
        ),
        m_c,
        alpha,
        beta,
        kappa,
    }
}

fn reconstruct_all(
    config: &PipelineConfig,
    scenarios: &[SyntheticScenario; 3],
) -> Result<Vec<ComplexFieldVector>, String> {
    scenarios
        .iter()
        .map(|s| run(config, s).map(|r| r.ac.b_ac))
        .collect()
}

fn crossed_coils() -> Outcome {
    let quiet = SyntheticScenario {
        noise_std: 0.0,
        ..SyntheticScenario::default()
    };
    let config = PipelineConfig::new(quiet.m_fm_hz);

    let model = coil_model(0.1, 0.3, -0.2 + FRAC_PI_2, 0.5);
    let f = reconstruct_all(
        &config,
        &crossed_coil_scenarios(&quiet, &model).map_err(|e| e.to_string())?,
    )?;
    let fit = fit_coupled_coils(&f[0], &f[1], &f[2]).map_err(|e| e.to_string())?;
    let mc_err = rel(fit.model.m_c, 0.1);
    ensure(mc_err < 0.01, || {
        format!("m_c = {} (error {:.3}%)", fit.model.m_c, 100.0 * mc_err)
    })?;

    let circular = CoupledCoilModel {
        mag_b: 1e-6,
        dir_b: RealFieldVector::from_vector(
            Vector3::new(-0.1, 1.0, 0.0).normalize(),
            Frame::Crystal,
        ),
        dir_a: RealFieldVector::from_vector(
            Vector3::new(1.0, 0.1, 0.0).normalize(),
            Frame::Crystal,
        ),
        ..coil_model(0.0, 0.0, FRAC_PI_2, 0.0)
    };
    let scen = crossed_coil_scenarios(&quiet, &circular).map_err(|e| e.to_string())?;
    let r = run(&config, &scen[2])?;
    let ecc = r.ellipse.ok_or("no ellipse")?.eccentricity;
    ensure(ecc < 0.05, || format!("circular drive eccentricity {ecc}"))?;
    Ok(format!(
        "m_c = {:.6} (error {:.2e}%), circular eccentricity {ecc:.2e}",
        fit.model.m_c,
        100.0 * mc_err
    ))
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn bootstrap_validity() -> Outcome {
    let mut notes = Vec::new();
    for noise in [0.01, 0.03] {
        let base = SyntheticScenario {
            noise_std: noise,
            seed: 5,
            ..SyntheticScenario::default()
        }
        .with_b_ac(all_components_truth());
        let mut config = PipelineConfig::new(base.m_fm_hz);
        config.bootstrap.n_replicas = 1000;
        config.bootstrap.seed = 42;
        let pair = generate_pair(&base).map_err(|e| e.to_string())?;
        let rep =
            bootstrap(&config, &pair.fm, &pair.ac, &Seeds::default()).map_err(|e| e.to_string())?;

        let seeds = Seeds {
            fm_centers: Some(
                analyze(&config, &pair.fm, &pair.ac, &Seeds::default())
                    .map_err(|e| e.to_string())?
                    .fm_fits
                    .iter()
                    .map(|f| f.center)
                    .collect(),
            ),
            b_dc: None,
        };
        let mut comps: Vec<Vec<f64>> = vec![Vec::new(); 8];
        for k in 0..1000u64 {
            let s = SyntheticScenario {
                seed: 10_000 + k,
                ..base.clone()
            };
            let p = generate_pair(&s).map_err(|e| e.to_string())?;
            let r = analyze(&config, &p.fm, &p.ac, &seeds)
                .map_err(|e| format!("direct run {k}: {e}"))?;
            let c = r.ac.b_ac.to_array6();
            for i in 0..6 {
                comps[i].push(c[i]);
            }
            let e = r.ellipse.ok_or("no ellipse")?;
            comps[6].push(e.major_length());
            comps[7].push(e.minor_length());
        }
        let boot: Vec<f64> = rep
            .component_std
            .iter()
            .copied()
            .chain([rep.std_major, rep.std_minor])
            .collect();
        let ratios: Vec<f64> = boot
            .iter()
            .zip(&comps)
            .map(|(b, c)| b / std_dev(c))
            .collect();
        ensure(ratios.iter().all(|r| (0.5..=2.0).contains(r)), || {
            format!("noise {noise}: bootstrap/direct ratios {ratios:.3?}")
        })?;
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        notes.push(format!("noise {noise}: ratios in [{lo:.2}, {hi:.2}]"));
    }

    let base = rotating_coil_base();
    let mut config = PipelineConfig::new(base.m_fm_hz);
    config.bootstrap.n_replicas = 200;
    config.bootstrap.seed = 9;
    let pair = generate_pair(&base).map_err(|e| e.to_string())?;
    let a = bootstrap(&config, &pair.fm, &pair.ac, &Seeds::default()).map_err(|e| e.to_string())?;
    let b = bootstrap(&config, &pair.fm, &pair.ac, &Seeds::default()).map_err(|e| e.to_string())?;
    ensure(
        a.geometric_mean_uncertainty == (a.std_major * a.std_minor).sqrt(),
        || "geometric-mean identity violated".into(),
    )?;
    let ja = serde_json::to_string(&a).map_err(|e| e.to_string())?;
    let jb = serde_json::to_string(&b).map_err(|e| e.to_string())?;
    ensure(ja == jb && a == b, || "reports differ for one seed".into())?;
    let gm = a.geometric_mean_uncertainty;
    ensure((1e-9..=100e-9).contains(&gm), || {
        format!("geometric mean {:.3} nT", gm * 1e9)
    })?;
    notes.push(format!("bracket {:.2} nT", gm * 1e9));
    Ok(notes.join("; "))
}

fn property_suite() -> Outcome {
    let p = SpinParams::default();
    let orient = default_orientation_set();
    let mut g = GaussianStream::new(3, 0);

    for _ in 0..200 {
        let dc = random_vector(&mut g, 3e-3);
        let v = random_vector(&mut g, 1e-6);
        for br in Branch::BOTH {
            let a = real_modulation(&p, &dc, &v, br);
            let b = real_modulation(&p, &dc, &-v, br);
            ensure(b == -a, || format!("parity: {a} vs {b}"))?;
        }
    }

    let mut worst_decomp: f64 = 0.0;
    for _ in 0..50 {
        let dc = RealFieldVector::from_vector(random_vector(&mut g, 3e-3), Frame::Crystal);
        let data: [Complex64; 8] =
            std::array::from_fn(|_| Complex64::new(g.next_standard(), g.next_standard()) * 2e4);
        let mods = ModulationSet::new(data).map_err(|e| e.to_string())?;
        let re = random_vector(&mut g, 1e-6);
        let im = random_vector(&mut g, 1e-6);
        let b = ComplexFieldVector::from_vectors(re, im, Frame::Crystal);
        let full = ac_cost(&mods, &dc, &p, &orient, &b);
        let re_mods = ModulationSet::new(data.map(|z| Complex64::new(z.re, 0.0)))
            .map_err(|e| e.to_string())?;
        let im_mods = ModulationSet::new(data.map(|z| Complex64::new(z.im, 0.0)))
            .map_err(|e| e.to_string())?;
        let zero = Vector3::zeros();
        let c_re = ac_cost(
            &re_mods,
            &dc,
            &p,
            &orient,
            &ComplexFieldVector::from_vectors(re, zero, Frame::Crystal),
        );
        let c_im = ac_cost(
            &im_mods,
            &dc,
            &p,
            &orient,
            &ComplexFieldVector::from_vectors(im, zero, Frame::Crystal),
        );
        worst_decomp = worst_decomp.max(rel(c_re + c_im, full));
    }
    ensure(worst_decomp < 1e-12, || {
        format!("decomposition error {worst_decomp:.2e}")
    })?;

    let mut worst_phase: f64 = 0.0;
    let mut worst_ext: f64 = 0.0;
    for _ in 0..20 {
        let b = ComplexFieldVector::from_vectors(
            random_vector(&mut g, 1e-6),
            random_vector(&mut g, 1e-6),
            Frame::Crystal,
        );
        let e0 = ellipse_from_phasor(&b, 64).map_err(|e| e.to_string())?;
        let theta = random_angle(&mut g);
        let e1 = ellipse_from_phasor(&b.scaled(Complex64::from_polar(1.0, theta)), 64)
            .map_err(|e| e.to_string())?;
        let scale = e0.major_length();
        for (u, v) in [
            (&e0.semi_major, &e1.semi_major),
            (&e0.semi_minor, &e1.semi_minor),
        ] {
            let (u, v) = (u.to_vector(), v.to_vector());
            let d = (u - v).norm().min((u + v).norm()) / scale;
            worst_phase = worst_phase.max(d);
        }
        worst_phase = worst_phase.max((e0.eccentricity - e1.eccentricity).abs());

        let (hi, lo) = sweep_extrema(b.components(), 100_000);
        worst_ext = worst_ext
            .max(rel(hi, e0.major_length()))
            .max(rel(lo, e0.minor_length()));
    }
    ensure(worst_phase < 1e-9, || {
        format!("phase invariance error {worst_phase:.2e}")
    })?;
    ensure(worst_ext < 1e-6, || {
        format!("extremal error {worst_ext:.2e}")
    })?;

    // Guard on a direct modulation set at |M| = 0.5 sigma.
    let sigma = 1e6;
    let fits: Vec<LineshapeFit> = (0..8)
        .map(|k| LineshapeFit {
            center: 2.8e9 + 1e7 * k as f64,
            sigma,
            amplitude: Complex64::new(1.0, 0.0),
            amplitude_std: 0.0,
            residual_rms: 0.0,
            converged: true,
        })
        .collect();
    let assignment = Assignment::new(ResonanceLabel::all()).map_err(|e| e.to_string())?;
    let mut mods = ModulationSet::zeros();
    mods.set(
        ResonanceLabel::from_slot(3),
        Complex64::from_polar(0.5 * sigma, 0.7),
    );
    let w = linearity_guard(&mods, &fits, &assignment);
    ensure(w.len() == 1, || format!("guard on direct set: {w:?}"))?;

    // And through the pipeline on spectra from the nonlinear response.
    let s = SyntheticScenario {
        response: ResponseModel::Nonlinear,
        noise_std: 0.0,
        ..SyntheticScenario::default()
    };
    let unit = ComplexFieldVector::from_vectors(
        Vector3::new(0.0, 0.0, 1e-6),
        Vector3::zeros(),
        Frame::Crystal,
    );
    let m1 = ensemble_modulations(&p, &orient, &s.b_dc, &unit).map_err(|e| e.to_string())?;
    let max1 = m1.entries.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let s = s.with_b_ac(unit.scaled(Complex64::new(0.5 * s.linewidth_sigma_hz / max1, 0.0)));
    let r = run(&PipelineConfig::new(s.m_fm_hz), &s)?;
    let top = r
        .warnings
        .iter()
        .filter_map(|w| match w {
            Warning::NonlinearModulation { ratio, .. } => Some(*ratio),
            _ => None,
        })
        .fold(0.0, f64::max);
    ensure(top > 0.2, || {
        format!("pipeline guard did not fire: {:?}", r.warnings)
    })?;
    Ok(format!(
        "decomposition {worst_decomp:.1e}, phase {worst_phase:.1e}, extremal {worst_ext:.1e}, guard ratio {top:.3}"
    ))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        (
            "eigenfrequency correctness",
            Duration::from_secs(1),
            eigenfrequencies,
        ),
        (
            "azimuthal gauge invariance",
            Duration::from_secs(5),
            azimuthal_invariance,
        ),
        (
            "oracle round trip",
            Duration::from_secs(120),
            oracle_round_trip,
        ),
        (
            "eccentricity reproduction",
            Duration::from_secs(120),
            eccentricity_reproduction,
        ),
        ("crossed-coil model", Duration::from_secs(30), crossed_coils),
        (
            "bootstrap validity",
            Duration::from_secs(600),
            bootstrap_validity,
        ),
        ("property suite", Duration::from_secs(60), property_suite),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let t = Instant::now();
        let out = f();
        let dt = t.elapsed();
        let out = match out {
            Ok(detail) if dt > limit => Err(format!("{detail}; runtime {dt:.2?} over {limit:.0?}")),
            o => o,
        };
        match out {
            Ok(detail) => println!("PASS  {name}: {detail} ({dt:.2?})"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} ({dt:.2?})");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
