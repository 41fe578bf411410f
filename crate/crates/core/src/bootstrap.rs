//! Monte-Carlo bootstrap: perturb the measured spectra with Gaussian noise
//! at the level of the baseline fit residuals and replay the whole analysis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lineshape::{residual_std, QuadratureSpectrum};
use crate::noise::GaussianStream;
use crate::pipeline::{analyze_ac, fm_stage, FitResult, PipelineConfig, Seeds, MIN_REPLICAS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub fm_x: f64,
    pub fm_y: f64,
    pub ac_x: f64,
    pub ac_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSummary {
    /// Crystal frame, tesla.
    pub b_dc: [f64; 3],
    /// `[Re x, Re y, Re z, Im x, Im y, Im z]`, crystal frame, tesla.
    pub b_ac: [f64; 6],
    pub cost_hz2: f64,
    pub iterations: usize,
    pub semi_major_t: f64,
    pub semi_minor_t: f64,
    pub eccentricity: f64,
}

impl ReplicaSummary {
    pub fn from_result(r: &FitResult) -> Self {
        let (major, minor, ecc) = r
            .ellipse
            .as_ref()
            .map(|e| (e.major_length(), e.minor_length(), e.eccentricity))
            .unwrap_or((0.0, 0.0, 0.0));
        Self {
            b_dc: r.dc.b_dc.to_array(),
            b_ac: r.ac.b_ac.to_array6(),
            cost_hz2: r.ac.cost,
            iterations: r.ac.iterations,
            semi_major_t: major,
            semi_minor_t: minor,
            eccentricity: ecc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub n_replicas: usize,
    pub n_failed: usize,
    pub seed: u64,
    pub noise_scale: f64,
    /// Injected per-channel standard deviations.
    pub noise_std: NoiseLevels,
    pub baseline: ReplicaSummary,
    pub std_major: f64,
    pub std_minor: f64,
    /// `√(std_major · std_minor)`.
    pub geometric_mean_uncertainty: f64,
    pub component_std: [f64; 6],
    pub component_covariance: [[f64; 6]; 6],
    pub dc_std: [f64; 3],
    pub eccentricity_std: f64,
    pub replicas: Vec<ReplicaSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

/// Sample covariance of row vectors. Deviations are taken from the first
/// row before centering so identical rows give exactly zero.
fn covariance<const N: usize>(rows: &[[f64; N]]) -> [[f64; N]; N] {
    let mut out = [[0.0; N]; N];
    let n = rows.len();
    if n < 2 {
        return out;
    }
    let origin = rows[0];
    let shifted: Vec<[f64; N]> = rows
        .iter()
        .map(|r| std::array::from_fn(|i| r[i] - origin[i]))
        .collect();
    let mean: [f64; N] =
        std::array::from_fn(|i| shifted.iter().map(|r| r[i]).sum::<f64>() / n as f64);
    for r in &shifted {
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for v in out.iter_mut().flatten() {
        *v /= (n - 1) as f64;
    }
    out
}

fn std_of(values: impl Iterator<Item = f64>) -> f64 {
    let rows: Vec<[f64; 1]> = values.map(|v| [v]).collect();
    covariance(&rows)[0][0].sqrt()
}

fn perturbed(
    s: &QuadratureSpectrum,
    seed: u64,
    stream: u64,
    sx: f64,
    sy: f64,
) -> Result<QuadratureSpectrum> {
    let mut g = GaussianStream::new(seed, stream);
    let mut x = s.x_channel().to_vec();
    let mut y = s.y_channel().to_vec();
    g.perturb(&mut x, sx);
    g.perturb(&mut y, sy);
    s.with_channels(x, y)
}

/// Runs the baseline analysis and `config.bootstrap.n_replicas` noisy
/// replays. Replica `r` perturbs the FM spectrum with ChaCha stream `2r` and
/// the AC spectrum with stream `2r + 1` (all x deviates, then all y).
pub fn bootstrap(
    config: &PipelineConfig,
    fm: &QuadratureSpectrum,
    ac: &QuadratureSpectrum,
    seeds: &Seeds,
) -> Result<BootstrapReport> {
    let settings = &config.bootstrap;
    if settings.n_replicas < MIN_REPLICAS {
        return Err(Error::invalid(format!(
            "bootstrap needs at least {MIN_REPLICAS} replicas"
        )));
    }
    let stage = fm_stage(config, fm, seeds)?;
    let base = analyze_ac(config, &stage, ac)?;
    let (fx, fy) = residual_std(fm, &stage.fits);
    let (ax, ay) = residual_std(ac, &base.ac_fits);
    let k = settings.noise_scale;
    let noise = NoiseLevels {
        fm_x: k * fx,
        fm_y: k * fy,
        ac_x: k * ax,
        ac_y: k * ay,
    };
    let replica_seeds = Seeds {
        fm_centers: Some(stage.fits.iter().map(|f| f.center).collect()),
        b_dc: Some(stage.dc.b_dc),
    };

    let seed = settings.seed;
    let outcomes: Vec<std::result::Result<ReplicaSummary, String>> = (0..settings.n_replicas
        as u64)
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<ReplicaSummary> {
                let fm_r = perturbed(fm, seed, 2 * r, noise.fm_x, noise.fm_y)?;
                let ac_r = perturbed(ac, seed, 2 * r + 1, noise.ac_x, noise.ac_y)?;
                let st = fm_stage(config, &fm_r, &replica_seeds)?;
                Ok(ReplicaSummary::from_result(&analyze_ac(
                    config, &st, &ac_r,
                )?))
            };
            run().map_err(|e| format!("replica {r}: {e}"))
        })
        .collect();

    let mut replicas = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(s) => replicas.push(s),
            Err(e) => failures.push(e),
        }
    }
    let total = settings.n_replicas;
    if failures.len() as f64 > settings.max_failure_fraction * total as f64 || replicas.len() < 2 {
        return Err(Error::UnstablePipeline {
            failed: failures.len(),
            total,
            first_failure: failures.first().cloned().unwrap_or_default(),
        });
    }

    let std_major = std_of(replicas.iter().map(|r| r.semi_major_t));
    let std_minor = std_of(replicas.iter().map(|r| r.semi_minor_t));
    let ac_rows: Vec<[f64; 6]> = replicas.iter().map(|r| r.b_ac).collect();
    let cov = covariance(&ac_rows);
    let dc_rows: Vec<[f64; 3]> = replicas.iter().map(|r| r.b_dc).collect();
    let dc_cov = covariance(&dc_rows);
    failures.truncate(20);
    Ok(BootstrapReport {
        n_replicas: total,
        n_failed: total - replicas.len(),
        seed,
        noise_scale: k,
        noise_std: noise,
        baseline: ReplicaSummary::from_result(&base),
        std_major,
        std_minor,
        geometric_mean_uncertainty: (std_major * std_minor).sqrt(),
        component_std: std::array::from_fn(|i| cov[i][i].sqrt()),
        component_covariance: cov,
        dc_std: std::array::from_fn(|i| dc_cov[i][i].sqrt()),
        eccentricity_std: std_of(replicas.iter().map(|r| r.eccentricity)),
        replicas,
        failures,
    })
}
