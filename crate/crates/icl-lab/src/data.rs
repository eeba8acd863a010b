//! Image sourcing: CIFAR-10 binary batches (labels discarded) or a
//! synthetic fallback, reduced to normalized 8x8 grayscale pools.
//!
//! Pipeline: load -> grayscale (unweighted channel mean) -> 4x4 block-average
//! downscale -> z-score against the scalar mean/std of the whole pool. The
//! pipeline is a pure function of the file bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::IMAGE_SIDE;

/// 1 label byte + 3 channels x 32 x 32 pixels.
pub const CIFAR_RECORD_BYTES: usize = 3073;
pub const CIFAR_SIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolSource {
    Cifar10,
    Synthetic,
}

/// Normalized pool of [n, 1, 8, 8] images plus the statistics used to
/// normalize them. Immutable once built; evaluation reuses the training
/// statistics by construction.
pub struct ImagePool {
    images: Tensor<f32>,
    pub mean: f64,
    pub std: f64,
    pub source: PoolSource,
}

impl ImagePool {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, i: usize) -> Tensor<f32> {
        let px = IMAGE_SIDE * IMAGE_SIDE;
        Tensor::new(
            &[1, IMAGE_SIDE, IMAGE_SIDE],
            self.images.data()[i * px..(i + 1) * px].to_vec(),
        )
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    /// First 80% of the pool by index; prompts for training draw from here.
    pub fn train_images(&self) -> Vec<Tensor<f32>> {
        self.split_range(true).map(|i| self.image(i)).collect()
    }

    /// Held-out last 20%, used for evaluation prompts.
    pub fn eval_images(&self) -> Vec<Tensor<f32>> {
        self.split_range(false).map(|i| self.image(i)).collect()
    }

    fn split_range(&self, train: bool) -> std::ops::Range<usize> {
        let cut = self.len() * 4 / 5;
        if train {
            0..cut
        } else {
            cut..self.len()
        }
    }
}

/// Parse CIFAR-10 binary batches from a file or a directory of `*.bin`
/// files (sorted by name). Returns raw images [n, 3, 32, 32] scaled to
/// [0, 1]; labels are discarded.
pub fn load_cifar10(path: &Path) -> Result<Tensor<f32>> {
    let files: Vec<std::path::PathBuf> = if path.is_dir() {
        let mut bins: Vec<_> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|x| x.to_str()) == Some("bin"))
            .collect();
        bins.sort();
        if bins.is_empty() {
            return Err(Error::Data(format!("no .bin batch files under {}", path.display())));
        }
        bins
    } else {
        vec![path.to_path_buf()]
    };

    let mut images = Vec::new();
    let mut count = 0usize;
    for file in &files {
        let bytes = fs::read(file)?;
        if bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::Format(format!(
                "{}: size {} is not a multiple of the {CIFAR_RECORD_BYTES}-byte record",
                file.display(),
                bytes.len()
            )));
        }
        let records = bytes.len() / CIFAR_RECORD_BYTES;
        images.reserve(records * 3 * CIFAR_SIDE * CIFAR_SIDE);
        for rec in bytes.chunks(CIFAR_RECORD_BYTES) {
            // rec[0] is the label; pixels are channel-major R,G,B, row-major
            // within each channel.
            images.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
        }
        count += records;
    }
    Ok(Tensor::new(&[count, 3, CIFAR_SIDE, CIFAR_SIDE], images))
}

/// Unweighted channel mean: (r + g + b) / 3.
pub fn to_gray(rgb: &Tensor<f32>) -> Tensor<f32> {
    assert_eq!(
        rgb.shape(),
        &[3, CIFAR_SIDE, CIFAR_SIDE],
        "to_gray: expected [3, {CIFAR_SIDE}, {CIFAR_SIDE}], got {:?}",
        rgb.shape()
    );
    let hw = CIFAR_SIDE * CIFAR_SIDE;
    let d = rgb.data();
    let gray: Vec<f32> = (0..hw)
        .map(|i| (d[i] + d[hw + i] + d[2 * hw + i]) / 3.0)
        .collect();
    Tensor::new(&[1, CIFAR_SIDE, CIFAR_SIDE], gray)
}

/// 4x4 non-overlapping block average (area interpolation), 32 -> 8.
pub fn downscale(x: &Tensor<f32>) -> Tensor<f32> {
    assert_eq!(x.shape().len(), 3, "downscale: expected [1, s, s], got {:?}", x.shape());
    let side = x.shape()[1];
    assert!(
        x.shape() == [1, side, side] && side.is_multiple_of(4),
        "downscale: expected [1, s, s] with s divisible by 4, got {:?}",
        x.shape()
    );
    let out_side = side / 4;
    let mut out = Tensor::zeros(&[1, out_side, out_side]);
    for oy in 0..out_side {
        for ox in 0..out_side {
            let mut acc = 0.0f64;
            for iy in 0..4 {
                for ix in 0..4 {
                    acc += x.data()[(oy * 4 + iy) * side + ox * 4 + ix] as f64;
                }
            }
            out.data_mut()[oy * out_side + ox] = (acc / 16.0) as f32;
        }
    }
    out
}

/// Z-score a stack of [n, 1, 8, 8] images against its global scalar
/// mean/std (population statistics over every pixel).
pub fn normalize(images: Tensor<f32>, source: PoolSource) -> Result<ImagePool> {
    let n = images.shape()[0];
    assert_eq!(
        images.shape(),
        &[n, 1, IMAGE_SIDE, IMAGE_SIDE],
        "normalize: expected [n, 1, {IMAGE_SIDE}, {IMAGE_SIDE}], got {:?}",
        images.shape()
    );
    let count = images.numel() as f64;
    let mean = images.data().iter().map(|&v| v as f64).sum::<f64>() / count;
    let var = images
        .data()
        .iter()
        .map(|&v| (v as f64 - mean) * (v as f64 - mean))
        .sum::<f64>()
        / count;
    let std = var.sqrt();
    if std <= 0.0 || !std.is_finite() {
        return Err(Error::Data(format!(
            "degenerate image pool: zero variance (mean={mean}, n={n})"
        )));
    }
    let mut images = images;
    for v in images.data_mut() {
        *v = ((*v as f64 - mean) / std) as f32;
    }
    Ok(ImagePool { images, mean, std, source })
}

/// Full CIFAR pipeline: load, grayscale, downscale, normalize.
pub fn cifar_pool(path: &Path) -> Result<ImagePool> {
    let raw = load_cifar10(path)?;
    let n = raw.shape()[0];
    if n < 41 {
        return Err(Error::Data(format!(
            "pool has {n} images; prompts need at least 41"
        )));
    }
    let px = IMAGE_SIDE * IMAGE_SIDE;
    let mut small = Tensor::zeros(&[n, 1, IMAGE_SIDE, IMAGE_SIDE]);
    let chw = 3 * CIFAR_SIDE * CIFAR_SIDE;
    for i in 0..n {
        let img = Tensor::new(
            &[3, CIFAR_SIDE, CIFAR_SIDE],
            raw.data()[i * chw..(i + 1) * chw].to_vec(),
        );
        let gray = to_gray(&img);
        let ds = downscale(&gray);
        small.data_mut()[i * px..(i + 1) * px].copy_from_slice(ds.data());
    }
    normalize(small, PoolSource::Cifar10)
}

/// Synthetic pool: smooth low-frequency fields (a 4x4 Gaussian grid,
/// bilinearly upsampled to 8x8), normalized like the real data. Lets every
/// test and the scaled-down training runs work without the dataset.
pub fn synthetic_pool(n: usize, seed: u64) -> ImagePool {
    assert!(n >= 41, "synthetic_pool: need at least 41 images (max prompt length), got {n}");
    let mut rng = Rng::seed_from(seed);
    let px = IMAGE_SIDE * IMAGE_SIDE;
    let mut images = Tensor::zeros(&[n, 1, IMAGE_SIDE, IMAGE_SIDE]);
    for i in 0..n {
        let coarse: Vec<f64> = (0..16).map(|_| rng.normal_f64()).collect();
        let img = &mut images.data_mut()[i * px..(i + 1) * px];
        for r in 0..IMAGE_SIDE {
            for c in 0..IMAGE_SIDE {
                // Bilinear sample of the 4x4 grid at pixel centers.
                let fy = ((r as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 3.0);
                let fx = ((c as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 3.0);
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(3), (x0 + 1).min(3));
                let (wy, wx) = (fy - y0 as f64, fx - x0 as f64);
                let v = coarse[y0 * 4 + x0] * (1.0 - wy) * (1.0 - wx)
                    + coarse[y0 * 4 + x1] * (1.0 - wy) * wx
                    + coarse[y1 * 4 + x0] * wy * (1.0 - wx)
                    + coarse[y1 * 4 + x1] * wy * wx;
                img[r * IMAGE_SIDE + c] = v as f32;
            }
        }
    }
    normalize(images, PoolSource::Synthetic).expect("synthetic pool cannot be degenerate")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_records(dir: &Path, name: &str, records: &[Vec<u8>]) -> std::path::PathBuf {
        let mut bytes = Vec::new();
        for r in records {
            assert_eq!(r.len(), CIFAR_RECORD_BYTES);
            bytes.extend_from_slice(r);
        }
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("icl-lab-data-{tag}-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn batch_file_record_count() {
        let dir = tmpdir("count");
        let rec = vec![0u8; CIFAR_RECORD_BYTES];
        let records: Vec<Vec<u8>> = (0..10_000).map(|_| rec.clone()).collect();
        let p = write_records(&dir, "big_batch.bin", &records);
        let imgs = load_cifar10(&p).unwrap();
        assert_eq!(imgs.shape()[0], 10_000);
    }

    #[test]
    fn record_layout_round_trips_bit_exactly() {
        let dir = tmpdir("layout");
        let mut rec = vec![0u8; CIFAR_RECORD_BYTES];
        rec[0] = 7; // label, discarded
        for (i, b) in rec[1..].iter_mut().enumerate() {
            *b = (i * 31 % 256) as u8;
        }
        let p = write_records(&dir, "one.bin", &[rec.clone()]);
        let imgs = load_cifar10(&p).unwrap();
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let byte = rec[1 + c * 1024 + y * 32 + x];
                    assert_eq!(imgs.at(&[0, c, y, x]), byte as f32 / 255.0);
                }
            }
        }
    }

    #[test]
    fn all_255_record_is_all_ones() {
        let dir = tmpdir("ones");
        let mut rec = vec![255u8; CIFAR_RECORD_BYTES];
        rec[0] = 0;
        let p = write_records(&dir, "ones.bin", &[rec]);
        let imgs = load_cifar10(&p).unwrap();
        assert!(imgs.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tmpdir("trunc");
        let p = dir.join("broken.bin");
        fs::write(&p, vec![0u8; CIFAR_RECORD_BYTES + 5]).unwrap();
        match load_cifar10(&p) {
            Err(Error::Format(msg)) => assert!(msg.contains("3073")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_an_io_error() {
        match load_cifar10(Path::new("/nonexistent/batches.bin")) {
            Err(Error::Io(_)) => {}
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn gray_of_equal_channels_is_identity() {
        let mut rgb = Tensor::zeros(&[3, 32, 32]);
        for c in 0..3 {
            for i in 0..1024 {
                rgb.data_mut()[c * 1024 + i] = 0.37;
            }
        }
        let g = to_gray(&rgb);
        for &v in g.data() {
            assert!((v - 0.37).abs() < 1e-7);
        }
    }

    #[test]
    fn gray_of_pure_red_is_one_third() {
        let mut rgb = Tensor::zeros(&[3, 32, 32]);
        for i in 0..1024 {
            rgb.data_mut()[i] = 1.0;
        }
        let g = to_gray(&rgb);
        for &v in g.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn gray_matches_per_pixel_oracle() {
        let mut rng = Rng::seed_from(1);
        let rgb = Tensor::<f32>::randn(&[3, 32, 32], 1.0, &mut rng);
        let g = to_gray(&rgb);
        for y in 0..32 {
            for x in 0..32 {
                let want =
                    (rgb.at(&[0, y, x]) + rgb.at(&[1, y, x]) + rgb.at(&[2, y, x])) / 3.0;
                assert!((g.at(&[0, y, x]) - want).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn downscale_constant_is_constant() {
        let x = Tensor::full(&[1, 32, 32], 0.625f32);
        let d = downscale(&x);
        assert_eq!(d.shape(), &[1, 8, 8]);
        for &v in d.data() {
            assert!((v - 0.625).abs() < 1e-7);
        }
    }

    #[test]
    fn downscale_checkerboard_is_half() {
        let mut x = Tensor::zeros(&[1, 32, 32]);
        for y in 0..32 {
            for c in 0..32 {
                x.data_mut()[y * 32 + c] = ((y + c) % 2) as f32;
            }
        }
        let d = downscale(&x);
        for &v in d.data() {
            assert!((v - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn downscale_matches_block_mean_oracle() {
        let mut rng = Rng::seed_from(2);
        let x = Tensor::<f32>::randn(&[1, 32, 32], 1.0, &mut rng);
        let d = downscale(&x);
        for oy in 0..8 {
            for ox in 0..8 {
                let mut acc = 0.0f64;
                for iy in 0..4 {
                    for ix in 0..4 {
                        acc += x.at(&[0, oy * 4 + iy, ox * 4 + ix]) as f64;
                    }
                }
                assert!((d.at(&[0, oy, ox]) as f64 - acc / 16.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn downscale_preserves_global_mean() {
        let mut rng = Rng::seed_from(3);
        let x = Tensor::<f32>::randn(&[1, 32, 32], 1.0, &mut rng);
        let d = downscale(&x);
        let mean_in: f64 = x.data().iter().map(|&v| v as f64).sum::<f64>() / 1024.0;
        let mean_out: f64 = d.data().iter().map(|&v| v as f64).sum::<f64>() / 64.0;
        assert!((mean_in - mean_out).abs() < 1e-6);
    }

    #[test]
    fn normalized_pool_has_unit_stats() {
        let pool = synthetic_pool(100, 5);
        let n = pool.images().numel() as f64;
        let mean: f64 = pool.images().data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = pool
            .images()
            .data()
            .iter()
            .map(|&v| (v as f64 - mean) * (v as f64 - mean))
            .sum::<f64>()
            / n;
        assert!(mean.abs() < 1e-3, "mean={mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-3, "std={}", var.sqrt());
    }

    #[test]
    fn normalize_zero_one_pool_gives_plus_minus_one() {
        let mut imgs = Tensor::zeros(&[2, 1, 8, 8]);
        for i in 64..128 {
            imgs.data_mut()[i] = 1.0;
        }
        let pool = normalize(imgs, PoolSource::Synthetic).unwrap();
        for i in 0..64 {
            assert!((pool.images().data()[i] + 1.0).abs() < 1e-6);
            assert!((pool.images().data()[64 + i] - 1.0).abs() < 1e-6);
        }
        assert!((pool.mean - 0.5).abs() < 1e-9);
        assert!((pool.std - 0.5).abs() < 1e-9);
    }

    #[test]
    fn normalize_is_idempotent_up_to_reestimation() {
        let pool = synthetic_pool(64, 9);
        let again = normalize(pool.images().clone(), PoolSource::Synthetic).unwrap();
        for (a, b) in pool.images().data().iter().zip(again.images().data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_pool_is_a_data_error() {
        let imgs = Tensor::full(&[50, 1, 8, 8], 0.5f32);
        match normalize(imgs, PoolSource::Synthetic) {
            Err(Error::Data(msg)) => assert!(msg.contains("zero variance")),
            other => panic!("expected data error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn synthetic_pool_is_deterministic_per_seed() {
        let a = synthetic_pool(50, 123);
        let b = synthetic_pool(50, 123);
        assert_eq!(a.images(), b.images());
        let c = synthetic_pool(50, 124);
        assert_ne!(a.images(), c.images());
    }

    #[test]
    fn synthetic_pool_shape_and_split() {
        let pool = synthetic_pool(100, 1);
        assert_eq!(pool.images().shape(), &[100, 1, 8, 8]);
        assert_eq!(pool.train_images().len(), 80);
        assert_eq!(pool.eval_images().len(), 20);
        assert!(pool.images().all_finite());
    }

    #[test]
    fn cifar_pipeline_is_deterministic_and_normalized() {
        let dir = tmpdir("pipe");
        let mut records = Vec::new();
        let mut state = 11u64;
        for _ in 0..60 {
            let mut rec = vec![0u8; CIFAR_RECORD_BYTES];
            for b in rec.iter_mut() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *b = (state >> 56) as u8;
            }
            records.push(rec);
        }
        let p = write_records(&dir, "batch.bin", &records);
        let a = cifar_pool(&p).unwrap();
        let b = cifar_pool(&p).unwrap();
        assert_eq!(a.images(), b.images());
        assert_eq!(a.source, PoolSource::Cifar10);
        let n = a.images().numel() as f64;
        let mean: f64 = a.images().data().iter().map(|&v| v as f64).sum::<f64>() / n;
        assert!(mean.abs() < 1e-3);
    }
}
