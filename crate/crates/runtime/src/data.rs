//! Local dataset ingestion: grayscale images (PGM/PNG) laid out one
//! directory per class, and the cholesterol CSV.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use splitstream_core::{Error, Result, Tensor32};

/// One local training sample. `sample_id` is unique within (and local to)
/// its client.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: u64,
    pub features: Tensor32,
    pub label: f32,
}

/// Binary PGM (P5) loader, maxval up to 255, pixels scaled to [0, 1].
pub fn load_pgm(path: &Path) -> Result<Tensor32> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let bad = |msg: &str| Error::data(format!("{}: {msg}", path.display()));
    if !bytes.starts_with(b"P5") {
        return Err(bad("not a binary PGM (P5) file"));
    }
    // Header tokens may be separated by arbitrary whitespace and '#' comments.
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("malformed header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + width * height {
        return Err(bad("truncated pixel data"));
    }
    let data: Vec<f32> = bytes[pos..pos + width * height]
        .iter()
        .map(|b| *b as f32 / maxval as f32)
        .collect();
    Tensor32::new(vec![height, width, 1], data)
}

/// Grayscale loader for 8-bit PNGs; color images collapse to the channel
/// mean.
pub fn load_png(path: &Path) -> Result<Tensor32> {
    let bad = |msg: String| Error::data(format!("{}: {msg}", path.display()));
    let file =
        fs::File::open(path).map_err(|e| bad(format!("cannot open: {e}")))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| bad(format!("bad png: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad("image too large".to_string()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(format!("bad png: {e}")))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(bad(format!("only 8-bit PNG is supported, got {:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(bad(format!("unsupported color type {other:?}"))),
    };
    let mut data = Vec::with_capacity(w * h);
    for px in buf[..w * h * channels].chunks_exact(channels) {
        let luma = match channels {
            1 | 2 => px[0] as f32,
            _ => (px[0] as f32 + px[1] as f32 + px[2] as f32) / 3.0,
        };
        data.push(luma / 255.0);
    }
    Tensor32::new(vec![h, w, 1], data)
}

/// Corner-aligned bilinear resize of an H x W x 1 image. Output values stay
/// within the input's [min, max].
pub fn resize_bilinear(img: &Tensor32, out_h: usize, out_w: usize) -> Result<Tensor32> {
    let (h, w) = match img.dims() {
        [h, w, 1] => (*h, *w),
        other => return Err(Error::config(format!("resize expects HxWx1, got {other:?}"))),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::config("resize target must be positive".to_string()));
    }
    if out_h == h && out_w == w {
        return Ok(img.clone());
    }
    let map = |o: usize, out_n: usize, n: usize| -> f64 {
        if out_n > 1 {
            o as f64 * (n - 1) as f64 / (out_n - 1) as f64
        } else {
            (n - 1) as f64 / 2.0
        }
    };
    let mut data = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let sy = map(oy, out_h, h);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = map(ox, out_w, w);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let v = img.at3(y0, x0, 0) as f64 * (1.0 - fy) * (1.0 - fx)
                + img.at3(y0, x1, 0) as f64 * (1.0 - fy) * fx
                + img.at3(y1, x0, 0) as f64 * fy * (1.0 - fx)
                + img.at3(y1, x1, 0) as f64 * fy * fx;
            data.push(v as f32);
        }
    }
    Tensor32::new(vec![out_h, out_w, 1], data)
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("pgm") | Some("png")
    )
}

fn decode_image(path: &Path) -> Result<Tensor32> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("pgm") => load_pgm(path),
        Some("png") => load_png(path),
        _ => Err(Error::data(format!("{}: unsupported image format", path.display()))),
    }
}

/// Loads `<root>/<class>/<images>`, resizing everything to
/// `target_h x target_w`. Samples are ordered lexicographically by
/// (subdirectory, filename); the subdirectory named `positive_class` gets
/// label 1, all others 0.
pub fn load_image_dataset(
    root: &Path,
    target_h: usize,
    target_w: usize,
    positive_class: &str,
) -> Result<Vec<Sample>> {
    let mut class_dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", root.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.is_empty() {
        return Err(Error::config(format!("{} contains no class directories", root.display())));
    }
    class_dirs.sort();
    let mut samples = Vec::new();
    let mut saw_positive = false;
    for dir in &class_dirs {
        let class_name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let label = if class_name == positive_class {
            saw_positive = true;
            1.0
        } else {
            0.0
        };
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", dir.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        if files.is_empty() {
            return Err(Error::config(format!("class directory {} is empty", dir.display())));
        }
        files.sort();
        for file in files {
            let img = decode_image(&file)?;
            let img = resize_bilinear(&img, target_h, target_w)?;
            samples.push(Sample { sample_id: samples.len() as u64, features: img, label });
        }
    }
    if !saw_positive {
        return Err(Error::config(format!(
            "no class directory named {positive_class:?} under {}",
            root.display()
        )));
    }
    Ok(samples)
}

pub const TABULAR_HEADER: &str = "Age,Sex,Height,Weight,TC,HDL-C,TG,LDL-C";
pub const TABULAR_FEATURES: usize = 7;

/// Parses the cholesterol CSV: seven raw predictor columns (Sex encoded
/// Male=1, Female=0) and the raw LDL-C label. Normalization happens later,
/// against training-split statistics only.
pub fn load_tabular_csv(path: &Path) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::config(format!("{}: empty file", path.display())))?;
    if header.trim() != TABULAR_HEADER {
        return Err(Error::config(format!(
            "{}: header must be exactly {TABULAR_HEADER:?}, got {header:?}",
            path.display()
        )));
    }
    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        if fields.len() != 8 {
            return Err(Error::data(format!(
                "line {line_no}: expected 8 fields, got {}",
                fields.len()
            )));
        }
        let numeric = |s: &str, what: &str| -> Result<f32> {
            s.parse::<f32>()
                .map_err(|_| Error::data(format!("line {line_no}: bad {what} value {s:?}")))
        };
        let sex = match fields[1] {
            "Male" => 1.0,
            "Female" => 0.0,
            other => {
                return Err(Error::data(format!(
                    "line {line_no}: Sex must be Male or Female, got {other:?}"
                )))
            }
        };
        let features = vec![
            numeric(fields[0], "Age")?,
            sex,
            numeric(fields[2], "Height")?,
            numeric(fields[3], "Weight")?,
            numeric(fields[4], "TC")?,
            numeric(fields[5], "HDL-C")?,
            numeric(fields[6], "TG")?,
        ];
        let label = numeric(fields[7], "LDL-C")?;
        samples.push(Sample {
            sample_id: samples.len() as u64,
            features: Tensor32::new(vec![TABULAR_FEATURES], features)?,
            label,
        });
    }
    if samples.is_empty() {
        return Err(Error::config(format!("{}: no data rows", path.display())));
    }
    Ok(samples)
}

/// Per-column z-score statistics, fitted on the training split only.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TabularStats {
    /// Mean and standard deviation of each predictor over `indices`. The
    /// standard deviation is floored at 1e-8 so constant columns z-score to
    /// zero.
    pub fn fit(samples: &[Sample], indices: &[usize]) -> Result<TabularStats> {
        if indices.is_empty() {
            return Err(Error::config("cannot fit stats on an empty split".to_string()));
        }
        let k = TABULAR_FEATURES;
        let mut mean = vec![0f64; k];
        for &i in indices {
            for (j, v) in samples[i].features.data().iter().enumerate() {
                mean[j] += *v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= indices.len() as f64);
        let mut var = vec![0f64; k];
        for &i in indices {
            for (j, v) in samples[i].features.data().iter().enumerate() {
                let d = *v as f64 - mean[j];
                var[j] += d * d;
            }
        }
        let std = var
            .iter()
            .map(|v| (v / indices.len() as f64).sqrt().max(1e-8))
            .collect();
        Ok(TabularStats { mean, std })
    }

    /// Z-scores every sample's predictors in place.
    pub fn apply(&self, samples: &mut [Sample]) {
        for sample in samples {
            for (j, v) in sample.features.data_mut().iter_mut().enumerate() {
                *v = ((*v as f64 - self.mean[j]) / self.std[j]) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use splitstream_core::metrics::write_pgm;

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("splitstream-data-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn pgm_round_trip_through_writer() {
        let dir = temp_dir("pgm");
        let path = dir.join("img.pgm");
        write_pgm(&path, 3, 2, &[0, 51, 102, 153, 204, 255]).unwrap();
        let img = load_pgm(&path).unwrap();
        assert_eq!(img.dims(), &[2, 3, 1]);
        assert!((img.data()[0] - 0.0).abs() < 1e-6);
        assert!((img.data()[5] - 1.0).abs() < 1e-6);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn resize_identity_when_dims_match() {
        let img = Tensor32::new(vec![2, 2, 1], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(resize_bilinear(&img, 2, 2).unwrap(), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Tensor32::filled(vec![5, 7, 1], 0.42);
        for (h, w) in [(3, 3), (10, 14), (1, 1)] {
            let out = resize_bilinear(&img, h, w).unwrap();
            assert!(out.data().iter().all(|v| (*v - 0.42).abs() < 1e-6), "{h}x{w}");
        }
    }

    // Oracle values computed with an independent corner-aligned bilinear
    // script before this implementation existed.
    #[test]
    fn resize_checkerboard_samples_corners() {
        let data: Vec<f32> =
            (0..16).map(|i| (((i / 4) + (i % 4)) % 2) as f32).collect();
        let img = Tensor32::new(vec![4, 4, 1], data).unwrap();
        let out = resize_bilinear(&img, 2, 2).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn upsampled_ramp_stays_linear() {
        let data: Vec<f32> = (0..16).map(|i| (i % 4) as f32).collect();
        let img = Tensor32::new(vec![4, 4, 1], data).unwrap();
        let out = resize_bilinear(&img, 4, 8).unwrap();
        for y in 0..4 {
            for x in 0..8 {
                let expect = x as f64 * 3.0 / 7.0;
                assert!(
                    (out.at3(y, x, 0) as f64 - expect).abs() < 1e-6,
                    "({y},{x}): {} vs {expect}",
                    out.at3(y, x, 0)
                );
            }
        }
    }

    #[test]
    fn resize_respects_source_range() {
        let mut rng = splitstream_core::XorShift64::new(3);
        let img = Tensor32::new(
            vec![6, 6, 1],
            (0..36).map(|_| rng.uniform(0.0, 1.0) as f32).collect(),
        )
        .unwrap();
        let (lo, hi) = img.data().iter().fold((f32::MAX, f32::MIN), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
        let out = resize_bilinear(&img, 13, 4).unwrap();
        for v in out.data() {
            assert!(*v >= lo - 1e-6 && *v <= hi + 1e-6);
        }
    }

    #[test]
    fn dataset_orders_lexicographically_and_labels_by_rule() {
        let dir = temp_dir("ds");
        for (class, count) in [("neg", 2usize), ("pos", 3usize)] {
            let sub = dir.join(class);
            fs::create_dir_all(&sub).unwrap();
            for i in 0..count {
                write_pgm(&sub.join(format!("{i}.pgm")), 4, 4, &[128; 16]).unwrap();
            }
        }
        let samples = load_image_dataset(&dir, 4, 4, "pos").unwrap();
        assert_eq!(samples.len(), 5);
        let labels: Vec<f32> = samples.iter().map(|s| s.label).collect();
        // neg sorts before pos.
        assert_eq!(labels, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(labels.iter().filter(|&&l| l == 1.0).count(), 3);
        assert_eq!(samples[0].sample_id, 0);
        assert_eq!(samples[4].sample_id, 4);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn empty_class_directory_is_config_error() {
        let dir = temp_dir("empty");
        fs::create_dir_all(dir.join("pos")).unwrap();
        fs::create_dir_all(dir.join("neg")).unwrap();
        write_pgm(&dir.join("pos/a.pgm"), 2, 2, &[0; 4]).unwrap();
        let err = load_image_dataset(&dir, 2, 2, "pos").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn tabular_rows_parse_like_the_study_samples() {
        let dir = temp_dir("csv");
        let path = dir.join("chol.csv");
        fs::write(
            &path,
            "Age,Sex,Height,Weight,TC,HDL-C,TG,LDL-C\n\
             62,Male,175.0,68.20,178,50,83,111.4\n\
             73,Female,144.8,50.45,144,30,100,94.0\n",
        )
        .unwrap();
        let samples = load_tabular_csv(&path).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].features.data(), &[62.0, 1.0, 175.0, 68.20, 178.0, 50.0, 83.0]);
        assert_eq!(samples[0].label, 111.4);
        assert_eq!(samples[1].features.data()[1], 0.0); // Female -> 0
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn malformed_row_names_line_number() {
        let dir = temp_dir("csvbad");
        let path = dir.join("chol.csv");
        fs::write(
            &path,
            "Age,Sex,Height,Weight,TC,HDL-C,TG,LDL-C\n\
             62,Male,175.0,68.20,178,50,83,111.4\n\
             oops,Male,1,2,3,4,5,6\n",
        )
        .unwrap();
        match load_tabular_csv(&path) {
            Err(Error::Data(msg)) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn wrong_header_is_config_error() {
        let dir = temp_dir("csvhdr");
        let path = dir.join("chol.csv");
        fs::write(&path, "Age,Sex,Height\n1,2,3\n").unwrap();
        assert!(matches!(load_tabular_csv(&path), Err(Error::Config(_))));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn constant_column_zscores_to_zero() {
        let samples: Vec<Sample> = (0..5)
            .map(|i| Sample {
                sample_id: i,
                features: Tensor32::new(vec![7], vec![3.3; 7]).unwrap(),
                label: 0.0,
            })
            .collect();
        let idx: Vec<usize> = (0..5).collect();
        let stats = TabularStats::fit(&samples, &idx).unwrap();
        let mut normalized = samples.clone();
        stats.apply(&mut normalized);
        for s in &normalized {
            assert!(s.features.data().iter().all(|v| *v == 0.0));
        }
    }
}
