//! Synthetic survey generator with planted mineralization halos.
//!
//! Background log-concentrations are spatially correlated gaussian fields
//! (kernel-smoothed white noise on a coarse grid), exponentiated to positive
//! concentrations. Deposits are planted uniformly at random; inside each
//! halo the target and pathfinder elements are multiplied by an enrichment
//! factor that decays with a gaussian profile and never drops below one.
//! Everything is a pure function of the config: same seed, same bytes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{ConcentrationUnit, DepositSite, ElementDescriptor, Sample, Survey};
use crate::nn::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub width: f64,
    pub height: f64,
    pub n_elements: usize,
    /// Spatial correlation range of the background fields.
    pub correlation_range: f64,
    pub n_deposits: usize,
    pub halo_radius: f64,
    /// Multiplicative enrichment at a deposit; must exceed 1.
    pub enrichment_factor: f64,
    /// Element enriched alongside the pathfinders and used as the detection
    /// target.
    pub target_element: usize,
    /// Elements co-enriched with the target inside halos.
    pub pathfinders: Vec<usize>,
    /// Standard deviation of iid log-space noise per reading.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 2000,
            width: 10.0,
            height: 10.0,
            n_elements: 12,
            correlation_range: 1.2,
            n_deposits: 8,
            halo_radius: 0.3,
            enrichment_factor: 6.0,
            target_element: 0,
            pathfinders: vec![1, 2],
            noise_level: 0.25,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Config("synth needs n_samples >= 2".into()));
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::Config("synth extent must be positive".into()));
        }
        if self.n_elements == 0 {
            return Err(Error::Config("synth needs n_elements >= 1".into()));
        }
        if self.enrichment_factor <= 1.0 {
            return Err(Error::Config(format!(
                "enrichment_factor {} must exceed 1",
                self.enrichment_factor
            )));
        }
        if self.halo_radius <= 0.0 {
            return Err(Error::Config("halo_radius must be positive".into()));
        }
        if self.correlation_range <= 0.0 {
            return Err(Error::Config("correlation_range must be positive".into()));
        }
        if self.target_element >= self.n_elements
            || self.pathfinders.iter().any(|&p| p >= self.n_elements)
        {
            return Err(Error::Config(
                "target/pathfinder indices out of element range".into(),
            ));
        }
        if self.noise_level < 0.0 {
            return Err(Error::Config("noise_level must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Which samples the generator actually enriched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub deposit_positions: Vec<[f64; 2]>,
    /// True for samples within `halo_radius` of any deposit.
    pub in_halo: Vec<bool>,
}

/// Element symbols given to synthetic surveys; Au is deliberately ppb to
/// exercise the mixed-unit schema.
const SYMBOLS: [(&str, ConcentrationUnit); 16] = [
    ("Au", ConcentrationUnit::Ppb),
    ("As", ConcentrationUnit::Ppm),
    ("Sb", ConcentrationUnit::Ppm),
    ("Cu", ConcentrationUnit::Ppm),
    ("Pb", ConcentrationUnit::Ppm),
    ("Zn", ConcentrationUnit::Ppm),
    ("Ni", ConcentrationUnit::Ppm),
    ("Co", ConcentrationUnit::Ppm),
    ("Cr", ConcentrationUnit::Ppm),
    ("Ba", ConcentrationUnit::Ppm),
    ("Sr", ConcentrationUnit::Ppm),
    ("Mn", ConcentrationUnit::Ppm),
    ("V", ConcentrationUnit::Ppm),
    ("La", ConcentrationUnit::Ppm),
    ("W", ConcentrationUnit::Ppm),
    ("Mo", ConcentrationUnit::Ppm),
];

fn element_descriptor(index: usize) -> ElementDescriptor {
    if let Some((sym, unit)) = SYMBOLS.get(index) {
        ElementDescriptor::new(sym, *unit)
    } else {
        ElementDescriptor::new(&format!("E{}", index + 1), ConcentrationUnit::Ppm)
    }
}

/// Smoothed-noise gaussian field sampled at arbitrary points: unit marginal
/// variance, correlation length ~`range`.
struct KernelField {
    nodes: Vec<[f64; 2]>,
    weights: Vec<f64>,
    range: f64,
}

impl KernelField {
    fn new(width: f64, height: f64, range: f64, rng: &mut ChaCha8Rng) -> Self {
        let spacing = range / 1.5;
        let nx = ((width / spacing).ceil() as usize + 3).max(4);
        let ny = ((height / spacing).ceil() as usize + 3).max(4);
        let mut nodes = Vec::with_capacity(nx * ny);
        let mut weights = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                nodes.push([
                    (ix as f64 - 1.0) * spacing,
                    (iy as f64 - 1.0) * spacing,
                ]);
                weights.push(normal(rng));
            }
        }
        KernelField {
            nodes,
            weights,
            range,
        }
    }

    fn value(&self, p: [f64; 2]) -> f64 {
        let mut num = 0.0;
        let mut norm2 = 0.0;
        let denom = 2.0 * self.range * self.range;
        for (node, w) in self.nodes.iter().zip(&self.weights) {
            let dx = p[0] - node[0];
            let dy = p[1] - node[1];
            let k = (-(dx * dx + dy * dy) / denom).exp();
            num += k * w;
            norm2 += k * k;
        }
        if norm2 > 0.0 {
            num / norm2.sqrt()
        } else {
            0.0
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Enrichment multiplier at distance `d` from a deposit.
fn enrichment_multiplier(cfg: &SynthConfig, d: f64) -> f64 {
    let sigma = cfg.halo_radius / 2.0;
    (cfg.enrichment_factor * (-d * d / (2.0 * sigma * sigma)).exp()).max(1.0)
}

/// Generate a survey with planted halos plus its deposits and ground truth.
pub fn generate_survey(cfg: &SynthConfig) -> Result<(Survey, Vec<DepositSite>, GroundTruth)> {
    cfg.validate()?;

    // Jittered grid covering the extent.
    let aspect = cfg.width / cfg.height;
    let nx = ((cfg.n_samples as f64 * aspect).sqrt().ceil() as usize).max(1);
    let ny = cfg.n_samples.div_ceil(nx);
    let cell_w = cfg.width / nx as f64;
    let cell_h = cfg.height / ny as f64;
    let mut pos_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x90]));
    let mut positions = Vec::with_capacity(cfg.n_samples);
    'outer: for iy in 0..ny {
        for ix in 0..nx {
            if positions.len() >= cfg.n_samples {
                break 'outer;
            }
            positions.push([
                (ix as f64 + 0.5 + pos_rng.gen_range(-0.4..0.4)) * cell_w,
                (iy as f64 + 0.5 + pos_rng.gen_range(-0.4..0.4)) * cell_h,
            ]);
        }
    }

    // Deposits uniformly at random, kept away from the border by one halo
    // radius so halos stay inside the sampled area.
    let mut dep_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0xde]));
    let margin = cfg.halo_radius.min(cfg.width / 4.0).min(cfg.height / 4.0);
    let deposits: Vec<DepositSite> = (0..cfg.n_deposits)
        .map(|k| DepositSite {
            site_id: format!("D{:03}", k + 1),
            project_id: "SYNTH".to_string(),
            position: [
                dep_rng.gen_range(margin..cfg.width - margin),
                dep_rng.gen_range(margin..cfg.height - margin),
            ],
        })
        .collect();

    // Background fields and per-element base levels.
    let mut concentrations = vec![vec![0.0f64; cfg.n_elements]; cfg.n_samples];
    for c in 0..cfg.n_elements {
        let mut field_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0xf1e1d, c as u64]));
        let field = KernelField::new(cfg.width, cfg.height, cfg.correlation_range, &mut field_rng);
        let base = (20.0 + 7.0 * c as f64).ln();
        let mut noise_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0xa01, c as u64]));
        for (i, p) in positions.iter().enumerate() {
            let log_value = base + field.value(*p) + cfg.noise_level * normal(&mut noise_rng);
            concentrations[i][c] = log_value.exp();
        }
    }

    // Plant halos: multiplicative enrichment of target and pathfinders, the
    // strongest halo wins where halos overlap.
    let enriched: Vec<usize> = std::iter::once(cfg.target_element)
        .chain(cfg.pathfinders.iter().cloned())
        .collect();
    let mut in_halo = vec![false; cfg.n_samples];
    for (i, p) in positions.iter().enumerate() {
        let nearest = deposits
            .iter()
            .map(|d| (p[0] - d.position[0]).hypot(p[1] - d.position[1]))
            .fold(f64::INFINITY, f64::min);
        if nearest <= cfg.halo_radius {
            in_halo[i] = true;
        }
        let mult = enrichment_multiplier(cfg, nearest);
        if mult > 1.0 {
            for &c in &enriched {
                concentrations[i][c] *= mult;
            }
        }
    }

    let elements: Vec<ElementDescriptor> = (0..cfg.n_elements).map(element_descriptor).collect();
    let samples: Vec<Sample> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| Sample {
            id: format!("S{:06}", i + 1),
            sample_type: "synthetic".to_string(),
            position: *p,
            values: concentrations[i].clone(),
            missing: vec![false; cfg.n_elements],
        })
        .collect();
    let survey = Survey {
        samples,
        elements,
        crs_tag: "GDA2020".to_string(),
    };
    survey.validate()?;

    let truth = GroundTruth {
        deposit_positions: deposits.iter().map(|d| d.position).collect(),
        in_halo,
    };
    Ok((survey, deposits, truth))
}

/// Write the ground-truth sidecar (SAMPLEID, in_halo as 0/1).
pub fn write_ground_truth_csv<P: AsRef<std::path::Path>>(
    path: P,
    survey: &Survey,
    truth: &GroundTruth,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut wtr = csv::Writer::from_writer(file);
    wtr.write_record(["SAMPLEID", "in_halo"])?;
    for (s, &flag) in survey.samples.iter().zip(&truth.in_halo) {
        wtr.write_record([s.id.as_str(), if flag { "1" } else { "0" }])?;
    }
    wtr.flush()?;
    Ok(())
}
