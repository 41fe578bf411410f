//! `nvphasor` command-line tool.
//!
//! Errors are printed to stderr as one JSON object `{code, stage, message}`.
//! Exit status: 0 success, 2 input error, 3 convergence failure, 4 ambiguous
//! resonance assignment, 1 anything else. `NVPHASOR_THREADS` caps the worker
//! pool used for bootstrap replicas and multi-spectrum batches.

mod failure;
mod files;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use nvphasor::bootstrap::bootstrap;
use nvphasor::io::{write_ellipse_csv, write_spectrum_csv};
use nvphasor::pipeline::{analyze_ac, fm_stage, PipelineConfig, Seeds};
use nvphasor::polarization::{ellipse_from_phasor, fit_coupled_coils, MIN_ELLIPSE_POINTS};
use nvphasor::report::{BootstrapDocument, CoilDocument, FitReport, Provenance};
use nvphasor::synth::{
    crossed_coil_scenarios, generate_pair, generate_rotation_series, GroundTruth, ScenarioFile,
    SyntheticPair, SyntheticScenario,
};
use nvphasor::warning::Warning;

use failure::Failure;
use files::{provenance, Input, OutDir};

const THREADS_VAR: &str = "NVPHASOR_THREADS";

#[derive(Parser)]
#[command(
    name = "nvphasor",
    version,
    about = "Phasor vector magnetometry from quadrature ODMR spectra"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct DC and complex AC fields from an FM reference and AC spectra.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fm: PathBuf,
        /// One or more AC spectra sharing the FM reference.
        #[arg(long, required = true, num_args = 1..)]
        ac: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Generate synthetic spectra and ground truth from a scenario file.
    Synth {
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Monte-Carlo bootstrap uncertainties for one AC spectrum.
    Bootstrap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fm: PathBuf,
        #[arg(long)]
        ac: PathBuf,
        /// Number of replicas (overrides the config).
        #[arg(short = 'n', long)]
        replicas: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Multiplier on the residual-derived noise level.
        #[arg(long)]
        noise_scale: Option<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Polarization-ellipse point clouds from fit results.
    Ellipse {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long, default_value_t = 360)]
        points: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Fit the crossed-coil mutual-coupling model to three fit results.
    Coils {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        ab: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| match cli.command {
        Command::Fit {
            config,
            fm,
            ac,
            out,
        } => cmd_fit(&config, &fm, &ac, &out),
        Command::Synth {
            scenario,
            seed,
            out,
        } => cmd_synth(&scenario, seed, &out),
        Command::Bootstrap {
            config,
            fm,
            ac,
            replicas,
            seed,
            noise_scale,
            out,
        } => cmd_bootstrap(&config, &fm, &ac, replicas, seed, noise_scale, &out),
        Command::Ellipse {
            results,
            points,
            out,
        } => cmd_ellipse(&results, points, &out),
        Command::Coils { a, b, ab, out } => cmd_coils(&a, &b, &ab, &out),
    });
    match outcome {
        Ok(written) => {
            for p in written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::Usage(format!(
            "{THREADS_VAR} must be a positive integer, got `{v}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("{THREADS_VAR}: {e}")))
}

fn read_config(path: &Path) -> Result<(Input, PipelineConfig), Failure> {
    let input = Input::read(path)?;
    let config = PipelineConfig::from_json(&input.text).map_err(|e| Failure::parse(path, e))?;
    Ok((input, config))
}

fn with_path(path: &Path, e: nvphasor::Error) -> Failure {
    Failure::Core {
        path: Some(path.to_path_buf()),
        stage: "pipeline",
        source: e,
    }
}

fn cmd_fit(config: &Path, fm: &Path, ac: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, Failure> {
    let (config_in, config) = read_config(config)?;
    let fm_in = Input::read(fm)?;
    let fm_spec = fm_in.spectrum()?;
    let ac_ins = ac
        .iter()
        .map(|p| Input::read(p))
        .collect::<Result<Vec<_>, _>>()?;
    let ac_specs = ac_ins
        .iter()
        .map(Input::spectrum)
        .collect::<Result<Vec<_>, _>>()?;

    let mut names: Vec<String> = ac_ins
        .iter()
        .map(|i| format!("{}.fit.json", i.stem(".csv")))
        .collect();
    names.sort();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Failure::Usage(format!(
            "two AC inputs would both write {}",
            w[0]
        )));
    }

    let stage = fm_stage(&config, &fm_spec, &Seeds::default()).map_err(|e| with_path(fm, e))?;
    let results: Vec<_> = ac_specs
        .par_iter()
        .map(|s| analyze_ac(&config, &stage, s))
        .collect();

    let dir = OutDir::create(out)?;
    let mut reports = Vec::with_capacity(results.len());
    for (input, r) in ac_ins.iter().zip(results) {
        let result = r.map_err(|e| with_path(&input.path, e))?;
        reports.push(FitReport {
            provenance: provenance(&config_in, &[&fm_in, input]),
            fm_input: fm_in.path.display().to_string(),
            ac_input: input.path.display().to_string(),
            result,
        });
    }
    ac_ins
        .iter()
        .zip(&reports)
        .map(|(input, report)| dir.write_json(&format!("{}.fit.json", input.stem(".csv")), report))
        .collect()
}

#[derive(Serialize)]
struct TruthDocument<'a> {
    provenance: &'a Provenance,
    scenario: &'a SyntheticScenario,
    truth: &'a GroundTruth,
    warnings: &'a [Warning],
}

#[derive(Serialize)]
struct IndexEntry {
    name: String,
    fm: String,
    ac: String,
    truth: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    angle_rad: Option<f64>,
}

#[derive(Serialize)]
struct IndexDocument<'a> {
    provenance: &'a Provenance,
    kind: &'static str,
    config: String,
    entries: Vec<IndexEntry>,
}

fn synth_config(s: &SyntheticScenario) -> PipelineConfig {
    PipelineConfig {
        params: s.params,
        orientations: s.orientations.clone(),
        ..PipelineConfig::new(s.m_fm_hz)
    }
}

fn cmd_synth(scenario: &Path, seed: Option<u64>, out: &Path) -> Result<Vec<PathBuf>, Failure> {
    let input = Input::read(scenario)?;
    let mut file = ScenarioFile::from_json(&input.text).map_err(|e| Failure::parse(scenario, e))?;
    if let Some(s) = seed {
        file.scenario.seed = s;
    }
    let prov = provenance(&input, &[]);
    let base = &file.scenario;

    let mut jobs: Vec<(String, Option<f64>, SyntheticScenario, SyntheticPair)> = Vec::new();
    let kind = if let Some(spec) = &file.rotation {
        for rec in generate_rotation_series(base, spec)? {
            jobs.push((
                format!("angle_{:02}", rec.index),
                Some(rec.angle_rad),
                rec.scenario,
                rec.pair,
            ));
        }
        "rotation"
    } else if let Some(model) = &file.coils {
        let scenarios = crossed_coil_scenarios(base, model)?;
        for (name, s) in ["coil_a", "coil_b", "coil_ab"].into_iter().zip(scenarios) {
            let pair = generate_pair(&s)?;
            jobs.push((name.to_string(), None, s, pair));
        }
        "coils"
    } else {
        jobs.push(("single".into(), None, base.clone(), generate_pair(base)?));
        "single"
    };

    let dir = OutDir::create(out)?;
    let mut written = vec![dir.write_json("config.json", &synth_config(base))?];
    let mut entries = Vec::new();
    for (name, angle, s, mut pair) in jobs {
        let prefix = if kind == "single" {
            String::new()
        } else {
            format!("{name}_")
        };
        let (fm_name, ac_name, truth_name) = (
            format!("{prefix}fm.csv"),
            format!("{prefix}ac.csv"),
            format!("{prefix}truth.json"),
        );
        for spec in [&mut pair.fm, &mut pair.ac] {
            spec.metadata_mut().insert(
                "tool".into(),
                format!("{} {}", files::TOOL, env!("CARGO_PKG_VERSION")),
            );
            spec.metadata_mut()
                .insert("scenario_sha256".into(), input.sha256.clone());
        }
        written.push(dir.write(&fm_name, write_spectrum_csv(&pair.fm).as_bytes())?);
        written.push(dir.write(&ac_name, write_spectrum_csv(&pair.ac).as_bytes())?);
        let doc = TruthDocument {
            provenance: &prov,
            scenario: &s,
            truth: &pair.truth,
            warnings: &pair.warnings,
        };
        written.push(dir.write_json(&truth_name, &doc)?);
        entries.push(IndexEntry {
            name,
            fm: fm_name,
            ac: ac_name,
            truth: truth_name,
            angle_rad: angle,
        });
    }
    let index = IndexDocument {
        provenance: &prov,
        kind,
        config: "config.json".into(),
        entries,
    };
    written.push(dir.write_json("index.json", &index)?);
    Ok(written)
}

#[allow(clippy::too_many_arguments)]
fn cmd_bootstrap(
    config: &Path,
    fm: &Path,
    ac: &Path,
    replicas: Option<usize>,
    seed: Option<u64>,
    noise_scale: Option<f64>,
    out: &Path,
) -> Result<Vec<PathBuf>, Failure> {
    let (config_in, mut config) = read_config(config)?;
    if let Some(n) = replicas {
        config.bootstrap.n_replicas = n;
    }
    if let Some(s) = seed {
        config.bootstrap.seed = s;
    }
    if let Some(k) = noise_scale {
        config.bootstrap.noise_scale = k;
    }
    config.validate().map_err(Failure::from)?;
    let fm_in = Input::read(fm)?;
    let ac_in = Input::read(ac)?;
    let report = bootstrap(
        &config,
        &fm_in.spectrum()?,
        &ac_in.spectrum()?,
        &Seeds::default(),
    )
    .map_err(|e| with_path(ac, e))?;
    let doc = BootstrapDocument {
        provenance: provenance(&config_in, &[&fm_in, &ac_in]),
        fm_input: fm_in.path.display().to_string(),
        ac_input: ac_in.path.display().to_string(),
        report,
    };
    let dir = OutDir::create(out)?;
    Ok(vec![dir.write_json(
        &format!("{}.bootstrap.json", ac_in.stem(".csv")),
        &doc,
    )?])
}

fn read_report(path: &Path) -> Result<(Input, FitReport), Failure> {
    let input = Input::read(path)?;
    let report = FitReport::from_json(&input.text).map_err(|e| Failure::parse(path, e))?;
    Ok((input, report))
}

fn cmd_ellipse(results: &[PathBuf], points: usize, out: &Path) -> Result<Vec<PathBuf>, Failure> {
    if points < MIN_ELLIPSE_POINTS {
        return Err(Failure::Usage(format!(
            "--points must be at least {MIN_ELLIPSE_POINTS}"
        )));
    }
    let dir = OutDir::create(out)?;
    let mut written = Vec::new();
    for path in results {
        let (input, report) = read_report(path)?;
        let e =
            ellipse_from_phasor(&report.result.ac.b_ac, points).map_err(|e| with_path(path, e))?;
        let mut text = format!(
            "# tool={} {}\n# config_sha256={}\n# input={}\n# input_sha256={}\n",
            files::TOOL,
            env!("CARGO_PKG_VERSION"),
            report.provenance.config_sha256,
            input.path.display(),
            input.sha256,
        );
        text.push_str(&write_ellipse_csv(&e));
        written.push(dir.write(
            &format!("{}.ellipse.csv", input.stem(".fit.json")),
            text.as_bytes(),
        )?);
    }
    Ok(written)
}

fn cmd_coils(a: &Path, b: &Path, ab: &Path, out: &Path) -> Result<Vec<PathBuf>, Failure> {
    let (ia, ra) = read_report(a)?;
    let (ib, rb) = read_report(b)?;
    let (iab, rab) = read_report(ab)?;
    let fields = [&ra.result.ac.b_ac, &rb.result.ac.b_ac, &rab.result.ac.b_ac];
    let fit = fit_coupled_coils(fields[0], fields[1], fields[2]).map_err(Failure::from)?;
    let mut ecc = [0.0; 3];
    for (slot, (f, input)) in ecc.iter_mut().zip(fields.iter().zip([&ia, &ib, &iab])) {
        *slot = ellipse_from_phasor(f, MIN_ELLIPSE_POINTS)
            .map_err(|e| with_path(&input.path, e))?
            .eccentricity;
    }
    let mut prov = provenance(&ia, &[&ia, &ib, &iab]);
    prov.config_sha256 = ra.provenance.config_sha256.clone();
    let doc = CoilDocument {
        provenance: prov,
        fit,
        eccentricities: ecc,
    };
    let dir = OutDir::create(out)?;
    Ok(vec![dir.write_json("coils.json", &doc)?])
}
