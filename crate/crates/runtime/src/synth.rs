//! Desk-scale synthetic datasets shipped with the framework.
//!
//! Classification: 16x16 grayscale images, class 0 a centered Gaussian blob,
//! class 1 vertical stripes, both under heavy additive noise and per-sample
//! shape variation. Regression: seven predictors drawn to mimic the
//! cholesterol table's ranges with LDL-C a documented linear combination
//! plus noise (see README).

use std::path::Path;

use splitstream_core::metrics::write_pgm;
use splitstream_core::{derive_seed, Error, Result, Tensor32, XorShift64};

pub const IMAGE_SIDE: usize = 16;

/// Blob sample (class 0): amplitude, center and width all jitter per sample.
fn blob_image(rng: &mut XorShift64) -> Vec<f32> {
    let cx = 7.5 + rng.uniform(-3.0, 3.0);
    let cy = 7.5 + rng.uniform(-3.0, 3.0);
    let sigma = rng.uniform(1.5, 4.5);
    let amp = rng.uniform(0.35, 1.0);
    let noise = 0.35;
    let mut data = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            let v = amp * (-d2 / (2.0 * sigma * sigma)).exp() + rng.normal(noise);
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    data
}

/// Stripe sample (class 1): vertical sinusoidal stripes with random period,
/// phase and contrast.
fn stripe_image(rng: &mut XorShift64) -> Vec<f32> {
    let period = 3.0 + rng.uniform(0.0, 5.0);
    let phase = rng.uniform(0.0, period);
    let amp = rng.uniform(0.35, 1.0);
    let noise = 0.35;
    let mut data = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
    for _y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let s = 0.5 + 0.5 * (std::f64::consts::TAU * (x as f64 + phase) / period).sin();
            let v = amp * s + rng.normal(noise);
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    data
}

/// In-memory synthetic classification set: first the blob class (label 0),
/// then the stripe class (label 1), matching the on-disk loader's
/// (neg, pos) directory order.
pub fn gen_classification(n: usize, seed: u64) -> Vec<(Tensor32, f32)> {
    let mut rng = XorShift64::new(derive_seed(seed, "synth-cls", &[]));
    let negatives = n - n / 2;
    let mut out = Vec::with_capacity(n);
    for _ in 0..negatives {
        out.push((
            Tensor32::new(vec![IMAGE_SIDE, IMAGE_SIDE, 1], blob_image(&mut rng)).unwrap(),
            0.0,
        ));
    }
    for _ in negatives..n {
        out.push((
            Tensor32::new(vec![IMAGE_SIDE, IMAGE_SIDE, 1], stripe_image(&mut rng)).unwrap(),
            1.0,
        ));
    }
    out
}

/// Writes the classification set as `<dir>/neg/*.pgm` and `<dir>/pos/*.pgm`
/// so runs exercise the real image loaders.
pub fn write_classification_dataset(dir: &Path, n: usize, seed: u64) -> Result<()> {
    if n < 10 {
        return Err(Error::config(format!("synthetic set needs at least 10 samples, got {n}")));
    }
    let samples = gen_classification(n, seed);
    for (i, (img, label)) in samples.iter().enumerate() {
        let class = if *label == 0.0 { "neg" } else { "pos" };
        let bytes: Vec<u8> =
            img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let path = dir.join(class).join(format!("{i:05}.pgm"));
        write_pgm(&path, IMAGE_SIDE, IMAGE_SIDE, &bytes)?;
    }
    Ok(())
}

/// One synthetic cholesterol row:
/// (Age, Sex, Height, Weight, TC, HDL-C, TG, LDL-C).
/// LDL-C = TC - HDL-C - TG/5 + N(0, 6), floored at 5.
fn regression_row(rng: &mut XorShift64) -> [f64; 8] {
    let age = rng.uniform(30.0, 85.0).round();
    let sex = if rng.next_f64() < 0.5 { 0.0 } else { 1.0 };
    let height = if sex > 0.5 { rng.normal(6.0) + 172.0 } else { rng.normal(6.0) + 158.0 };
    let weight = (height - 105.0) + rng.normal(8.0);
    let tc = rng.uniform(110.0, 260.0);
    let hdl = rng.uniform(25.0, 80.0);
    let tg = rng.uniform(50.0, 300.0);
    let ldl = (tc - hdl - tg / 5.0 + rng.normal(6.0)).max(5.0);
    [age, sex, height, weight, tc, hdl, tg, ldl]
}

pub fn gen_regression(n: usize, seed: u64) -> Vec<[f64; 8]> {
    let mut rng = XorShift64::new(derive_seed(seed, "synth-reg", &[]));
    (0..n).map(|_| regression_row(&mut rng)).collect()
}

/// Writes the regression set in the cholesterol CSV schema.
pub fn write_regression_csv(path: &Path, n: usize, seed: u64) -> Result<()> {
    if n < 10 {
        return Err(Error::config(format!("synthetic set needs at least 10 samples, got {n}")));
    }
    let rows = gen_regression(n, seed);
    let mut text = String::from("Age,Sex,Height,Weight,TC,HDL-C,TG,LDL-C\n");
    for r in rows {
        let sex = if r[1] > 0.5 { "Male" } else { "Female" };
        text.push_str(&format!(
            "{},{},{:.1},{:.2},{:.1},{:.1},{:.1},{:.2}\n",
            r[0], sex, r[2], r[3], r[4], r[5], r[6], r[7]
        ));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::data(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, text)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}
