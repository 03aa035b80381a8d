//! Sensing-signal simulation and labeled dataset generation.
//!
//! After each actuation the channel evolves autonomously from the unknown
//! acquisition state, so sampled sensing signals are exact matrix-exponential
//! trajectories `y[k] = C·exp(A·k·dt)·x_a`. Dataset generation draws per-signal
//! jitter on the fault magnitudes and acquisition state, adds Gaussian
//! measurement noise and labels every signal with its ground-truth class.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix4, RowVector4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{
    build_system_matrices, faulted_dynamics, ChannelParams, FaultSpec, FaultVariant,
    PerturbedParam,
};
use crate::{Error, Result};

/// A uniformly sampled real-valued time series with its acquisition window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub samples: Vec<f64>,
    /// Acquisition start time [s].
    pub t_a: f64,
    /// Sample period [s].
    pub dt: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, t_a: f64, dt: f64) -> Result<Self> {
        let s = Self { samples, t_a, dt };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sample period must be positive, got {}",
                self.dt
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::Empty("signal has no samples".into()));
        }
        if let Some(k) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Simulation { step: k });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Final sample time `t_a + (len-1)·dt`.
    pub fn t_f(&self) -> f64 {
        self.t_a + (self.samples.len() - 1) as f64 * self.dt
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Checks that `other` shares this signal's sampling grid.
    pub fn same_grid(&self, other: &Signal) -> bool {
        let close = |a: f64, b: f64| {
            (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
        };
        close(self.t_a, other.t_a) && close(self.dt, other.dt) && self.len() == other.len()
    }
}

/// Sampling grid shared by every signal of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub t_a: f64,
    pub dt: f64,
    pub n: usize,
}

impl Default for GridConfig {
    /// 50 µs acquisition window at 10 MHz: enough to show several periods of
    /// the channel's ring-down.
    fn default() -> Self {
        Self {
            t_a: 0.0,
            dt: 1.0e-7,
            n: 500,
        }
    }
}

impl GridConfig {
    /// Window duration covered by the rectangle rule, `n·dt`.
    pub fn window(&self) -> f64 {
        self.n as f64 * self.dt
    }
}

/// Samples the autonomous output `y[k] = C·exp(A·k·dt)·x_a` for `k = 0..n`.
///
/// One matrix exponential of `A·dt` is computed and applied recursively, so
/// the samples are exact up to rounding regardless of step size.
pub fn simulate_autonomous(
    a_dyn: &Matrix4<f64>,
    c: &RowVector4<f64>,
    x_a: &Vector4<f64>,
    t_a: f64,
    dt: f64,
    n: usize,
) -> Result<Signal> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sample period must be positive, got {dt}"
        )));
    }
    let step = (a_dyn * dt).exp();
    let mut x = *x_a;
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let y = (c * x)[0];
        if !y.is_finite() {
            return Err(Error::Simulation { step: k });
        }
        samples.push(y);
        x = step * x;
    }
    Ok(Signal { samples, t_a, dt })
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation `sigma`,
/// deterministically for a given seed.
pub fn add_noise(s: &Signal, sigma: f64, seed: u64) -> Result<Signal> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be nonnegative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(s.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let samples = s
        .samples
        .iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    Ok(Signal {
        samples,
        t_a: s.t_a,
        dt: s.dt,
    })
}

/// Configuration of a labeled dataset generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub params: ChannelParams,
    /// Nominal acquisition state the per-signal states are jittered around.
    pub x_a_nominal: [f64; 4],
    pub grid: GridConfig,
    /// Signals to generate per class.
    pub counts: BTreeMap<FaultVariant, usize>,
    /// Fault magnitudes per variant (multiplicative factors on the healthy
    /// parameters).
    pub deltas: BTreeMap<FaultVariant, FaultSpec>,
    /// Relative uniform jitter applied per signal to every delta factor.
    pub delta_jitter: f64,
    /// Relative uniform jitter applied per signal to every component of the
    /// acquisition state.
    pub x_a_jitter: f64,
    /// Noise standard deviation relative to the peak of the nominal healthy
    /// signal; ignored when `noise_sigma_abs` is set.
    pub noise_sigma_rel: f64,
    pub noise_sigma_abs: Option<f64>,
    pub seed: u64,
}

impl Default for GenerationConfig {
    /// The reference composition: 2,475 healthy signals plus 225 per fault
    /// class (3,825 in total) on the default grid.
    fn default() -> Self {
        let mut counts = BTreeMap::new();
        counts.insert(FaultVariant::Healthy, 2475);
        for v in FaultVariant::FAULTS {
            counts.insert(v, 225);
        }
        let deltas = FaultVariant::FAULTS
            .iter()
            .map(|&v| (v, FaultSpec::default_for(v)))
            .collect();
        Self {
            params: ChannelParams::reference(),
            x_a_nominal: [0.21, 0.21, 0.16, 0.22],
            grid: GridConfig::default(),
            counts,
            deltas,
            delta_jitter: 0.2,
            x_a_jitter: 0.1,
            noise_sigma_rel: 0.02,
            noise_sigma_abs: None,
            seed: 42,
        }
    }
}

impl GenerationConfig {
    pub fn total_count(&self) -> usize {
        self.counts.values().sum()
    }

    /// SHA-256 digest of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn x_a(&self) -> Vector4<f64> {
        Vector4::from_column_slice(&self.x_a_nominal)
    }
}

/// A generated dataset: (signal, ground-truth class) pairs plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub entries: Vec<(Signal, FaultVariant)>,
    pub seed: u64,
    pub config_digest: String,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn of_class(&self, class: FaultVariant) -> impl Iterator<Item = &Signal> {
        self.entries
            .iter()
            .filter(move |(_, v)| *v == class)
            .map(|(s, _)| s)
    }
}

/// Stable per-entry stream derivation: one generator per (seed, index) pair so
/// entries are independent of generation order.
fn entry_rng(seed: u64, index: u64) -> ChaCha8Rng {
    // splitmix64 finalizer over the combined key.
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

fn jittered_spec(spec: &FaultSpec, jitter: f64, rng: &mut ChaCha8Rng) -> FaultSpec {
    let deltas: BTreeMap<PerturbedParam, f64> = spec
        .deltas
        .iter()
        .map(|(&p, &f)| {
            let u: f64 = rng.random_range(-1.0..=1.0);
            (p, f * (1.0 + jitter * u))
        })
        .collect();
    FaultSpec {
        variant: spec.variant,
        deltas,
    }
}

/// Peak amplitude of the noise-free healthy signal at the nominal acquisition
/// state; the reference level for the relative noise setting.
pub fn nominal_healthy_peak(cfg: &GenerationConfig) -> Result<f64> {
    let m = build_system_matrices(&cfg.params)?;
    let y = simulate_autonomous(&m.a, &m.c, &cfg.x_a(), cfg.grid.t_a, cfg.grid.dt, cfg.grid.n)?;
    Ok(y.max_abs())
}

/// Generates the labeled dataset described by `cfg`.
///
/// Entries are laid out class by class in canonical order. Every entry draws
/// its jitter and noise from an RNG stream derived from `(seed, entry index)`,
/// so the dataset is a pure function of the configuration.
pub fn generate_dataset(cfg: &GenerationConfig) -> Result<LabeledDataset> {
    let matrices = build_system_matrices(&cfg.params)?;
    for (variant, &count) in &cfg.counts {
        if variant.is_fault() && count > 0 && !cfg.deltas.contains_key(variant) {
            return Err(Error::InvalidFault(format!(
                "no delta magnitudes configured for {variant}"
            )));
        }
    }
    let sigma = match cfg.noise_sigma_abs {
        Some(s) => s,
        None => cfg.noise_sigma_rel * nominal_healthy_peak(cfg)?,
    };

    let mut entries = Vec::with_capacity(cfg.total_count());
    let mut index = 0u64;
    for variant in FaultVariant::ALL {
        let count = cfg.counts.get(&variant).copied().unwrap_or(0);
        for _ in 0..count {
            let mut rng = entry_rng(cfg.seed, index);
            let spec = if variant.is_fault() {
                jittered_spec(&cfg.deltas[&variant], cfg.delta_jitter, &mut rng)
            } else {
                FaultSpec::healthy()
            };
            let a_dyn = faulted_dynamics(&matrices, &spec)?;
            let mut x_a = cfg.x_a();
            for i in 0..4 {
                let u: f64 = rng.random_range(-1.0..=1.0);
                x_a[i] *= 1.0 + cfg.x_a_jitter * u;
            }
            let clean = simulate_autonomous(
                &a_dyn,
                &matrices.c,
                &x_a,
                cfg.grid.t_a,
                cfg.grid.dt,
                cfg.grid.n,
            )?;
            let noise_seed = rng.random::<u64>();
            let noisy = add_noise(&clean, sigma, noise_seed)?;
            entries.push((noisy, variant));
            index += 1;
        }
    }

    Ok(LabeledDataset {
        entries,
        seed: cfg.seed,
        config_digest: cfg.digest(),
    })
}

/// Writes a dataset as CSV: header `label,t_a,dt,y_0,...,y_{n-1}`, one row per
/// signal. Floats use the shortest round-trip decimal form, so equal datasets
/// serialize to identical bytes.
pub fn write_dataset_csv<P: AsRef<Path>>(dataset: &LabeledDataset, path: P) -> Result<()> {
    let n = dataset
        .entries
        .first()
        .map(|(s, _)| s.len())
        .ok_or_else(|| Error::Empty("cannot write an empty dataset".into()))?;
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "label,t_a,dt")?;
    for k in 0..n {
        write!(w, ",y_{k}")?;
    }
    writeln!(w)?;
    for (signal, label) in &dataset.entries {
        write!(w, "{label},{},{}", signal.t_a, signal.dt)?;
        for v in &signal.samples {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset_csv`].
pub fn read_dataset_csv<P: AsRef<Path>>(path: P) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("missing CSV header".into()))??;
    if !header.starts_with("label,t_a,dt") {
        return Err(Error::Format(format!("unexpected header `{header}`")));
    }
    let mut entries = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label: FaultVariant = fields
            .next()
            .ok_or_else(|| Error::Format(format!("row {line_no}: missing label")))?
            .parse()?;
        let parse = |s: Option<&str>, what: &str| -> Result<f64> {
            s.ok_or_else(|| Error::Format(format!("row {line_no}: missing {what}")))?
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("row {line_no}: bad {what}: {e}")))
        };
        let t_a = parse(fields.next(), "t_a")?;
        let dt = parse(fields.next(), "dt")?;
        let samples: Vec<f64> = fields
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {line_no}: bad sample: {e}")))
            })
            .collect::<Result<_>>()?;
        entries.push((Signal::new(samples, t_a, dt)?, label));
    }
    Ok(LabeledDataset {
        entries,
        seed: 0,
        config_digest: String::new(),
    })
}

/// Sidecar metadata stored next to a dataset CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub config: GenerationConfig,
    pub seed: u64,
    pub config_digest: String,
}

pub fn write_dataset_sidecar<P: AsRef<Path>>(cfg: &GenerationConfig, path: P) -> Result<()> {
    let sidecar = DatasetSidecar {
        config: cfg.clone(),
        seed: cfg.seed,
        config_digest: cfg.digest(),
    };
    let mut json = serde_json::to_string_pretty(&sidecar)?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}
