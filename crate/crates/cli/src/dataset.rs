//! Synthetic dataset generators and assembly of training datasets from the
//! configuration. Generation is a pure function of the seed.

use crate::config::DatasetSpec;
use crate::{idx, CliError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2fp8_core::nn::Dataset;
use s2fp8_core::Tensor;

pub fn build_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset, CliError> {
    match spec {
        DatasetSpec::Blobs {
            train,
            val,
            features,
            classes,
            separation,
        } => Ok(gen_blobs(*train, *val, *features, *classes, *separation, seed)),
        DatasetSpec::LogUniformSpectrum {
            train,
            val,
            features,
            classes,
            log2_lo,
            log2_hi,
        } => Ok(gen_spectrum(
            *train, *val, *features, *classes, *log2_lo, *log2_hi, seed,
        )),
        DatasetSpec::Idx {
            train_images,
            train_labels,
            val_images,
            val_labels,
            classes,
        } => {
            let train_x = flatten_images(idx::load_idx(train_images)?)?;
            let train_y = to_labels(idx::load_idx(train_labels)?, *classes)?;
            let val_x = flatten_images(idx::load_idx(val_images)?)?;
            let val_y = to_labels(idx::load_idx(val_labels)?, *classes)?;
            let data = Dataset {
                train_x,
                train_y,
                val_x,
                val_y,
                classes: *classes,
            };
            data.validate()?;
            Ok(data)
        }
    }
}

fn flatten_images(t: Tensor) -> Result<Tensor, CliError> {
    if t.rank() != 3 {
        return Err(CliError::io(format!(
            "expected a rank-3 image tensor, got rank {}",
            t.rank()
        )));
    }
    let n = t.shape()[0];
    let px = t.shape()[1] * t.shape()[2];
    Ok(t.reshape(vec![n, px])?)
}

fn to_labels(t: Tensor, classes: usize) -> Result<Vec<usize>, CliError> {
    if t.rank() != 1 {
        return Err(CliError::io(format!(
            "expected a rank-1 label tensor, got rank {}",
            t.rank()
        )));
    }
    t.data()
        .iter()
        .map(|&v| {
            let label = v as usize;
            if label < classes {
                Ok(label)
            } else {
                Err(CliError::config(format!(
                    "label {label} out of range for {classes} classes"
                )))
            }
        })
        .collect()
}

/// Box-Muller standard normal.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Gaussian blobs: class `c` is centered `separation` standard deviations
/// from the origin along axis `c % features`, pushed further out for every
/// wrap, with alternating sign. Labels cycle round-robin.
pub fn gen_blobs(
    train: usize,
    val: usize,
    features: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut center = vec![0.0; features];
            let axis = c % features;
            let ring = (c / features) as f64 + 1.0;
            let sign = if (c / features).is_multiple_of(2) { 1.0 } else { -1.0 };
            center[axis] = sign * ring * separation;
            center
        })
        .collect();
    let mut make = |count: usize| {
        let mut xs = Vec::with_capacity(count * features);
        let mut ys = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % classes;
            for &c in &centers[class] {
                xs.push((c + normal(&mut rng)) as f32);
            }
            ys.push(class);
        }
        (Tensor::new(vec![count, features], xs).unwrap(), ys)
    };
    let (train_x, train_y) = make(train);
    let (val_x, val_y) = make(val);
    Dataset {
        train_x,
        train_y,
        val_x,
        val_y,
        classes,
    }
}

/// Log-uniform-spectrum task: each class owns a fixed ±1 sign template and
/// a sample is its class template with per-feature magnitudes `2^u`. The
/// exponent of feature `j` is uniform over the `j`-th equal slice of
/// `[log2_lo, log2_hi]`, so together the features tile the interval and the
/// tensor's magnitude spectrum is log-uniform. Linearly separable through
/// the signs alone; every downstream tensor (weights, gradients, logits)
/// inherits a wide, evenly spread log-magnitude distribution.
pub fn gen_spectrum(
    train: usize,
    val: usize,
    features: usize,
    classes: usize,
    log2_lo: f64,
    log2_hi: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates = sign_templates(features, classes, &mut rng);
    let band = (log2_hi - log2_lo) / features as f64;
    let mut make = |count: usize| {
        let mut xs = Vec::with_capacity(count * features);
        let mut ys = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % classes;
            for (j, &sign) in templates[class].iter().enumerate() {
                let u = log2_lo + (j as f64 + rng.random::<f64>()) * band;
                xs.push((sign * u.exp2()) as f32);
            }
            ys.push(class);
        }
        (Tensor::new(vec![count, features], xs).unwrap(), ys)
    };
    let (train_x, train_y) = make(train);
    let (val_x, val_y) = make(val);
    Dataset {
        train_x,
        train_y,
        val_x,
        val_y,
        classes,
    }
}

fn sign_templates(features: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut templates: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for c in 0..classes {
        if c % 2 == 1 {
            // Opposite of the previous class: maximally separated pair.
            let prev: Vec<f64> = templates[c - 1].iter().map(|v| -v).collect();
            templates.push(prev);
            continue;
        }
        // Draw until reasonably far from every existing template.
        let min_distance = features / 4;
        loop {
            let cand: Vec<f64> = (0..features)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let ok = templates.iter().all(|t| {
                let hamming = t.iter().zip(&cand).filter(|(a, b)| a != b).count();
                hamming >= min_distance && hamming <= features - min_distance
            });
            if ok {
                templates.push(cand);
                break;
            }
        }
    }
    templates
}
