//! Raster preprocessing and pixel-level fusion: denoising, alignment
//! validation, channel stacking, and the dataset-quality audits
//! (completeness, cross-map consistency, residual noise).

use std::fmt;

use crate::error::{Error, Result};
use crate::raster::{Modality, Raster};

/// Constraint constants consumed by the audit checks. Comparisons against
/// them are pure threshold tests; helpers below keep the conventions
/// (squared vs plain bounds) in one place.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintThresholds {
    /// Minimum feature-completeness integral.
    pub completeness_min: f64,
    /// Maximum per-pixel variance across feature-map replicas.
    pub consistency_max: f64,
    /// Noise level bound; the per-sample noise norm is compared to its square.
    pub noise_max: f64,
    /// Swarm convergence diagnostic bound.
    pub convergence_max: f64,
    /// Gradient bound; the gradient norm is compared to its square.
    pub grad_norm_max: f64,
    /// Minimum pixel accuracy.
    pub accuracy_min: f64,
    /// Maximum mean test loss.
    pub test_error_max: f64,
    /// Bound on the combined L2^2 + L1 weight norm.
    pub reg_bound: f64,
}

impl Default for ConstraintThresholds {
    fn default() -> ConstraintThresholds {
        ConstraintThresholds {
            completeness_min: 0.0,
            consistency_max: 1e-3,
            noise_max: 1.0,
            convergence_max: 1.0,
            grad_norm_max: 10.0,
            accuracy_min: 0.85,
            test_error_max: 0.5,
            reg_bound: 1e9,
        }
    }
}

impl ConstraintThresholds {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("completeness_min", self.completeness_min),
            ("consistency_max", self.consistency_max),
            ("noise_max", self.noise_max),
            ("convergence_max", self.convergence_max),
            ("grad_norm_max", self.grad_norm_max),
            ("accuracy_min", self.accuracy_min),
            ("test_error_max", self.test_error_max),
            ("reg_bound", self.reg_bound),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "threshold {name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn accuracy_pass(&self, pixel_accuracy: f64) -> bool {
        pixel_accuracy >= self.accuracy_min
    }

    /// The gradient norm is bounded by the *square* of the configured value.
    pub fn grad_norm_pass(&self, grad_norm: f64) -> bool {
        grad_norm <= self.grad_norm_max * self.grad_norm_max
    }

    pub fn test_error_pass(&self, mean_test_loss: f64) -> bool {
        mean_test_loss <= self.test_error_max
    }

    /// The per-sample noise norm is bounded by the square of the noise level.
    pub fn noise_pass(&self, noise_norm: f64) -> bool {
        noise_norm <= self.noise_max * self.noise_max
    }
}

/// Outcome of the spatial alignment validation.
///
/// `georef_match` is the gating condition for fusion. The residual maxima
/// are forward-difference diagnostics of the cross-modality channel-mean
/// differences; they are reported but advisory.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub georef_match: bool,
    pub max_x_residual: f64,
    pub max_y_residual: f64,
    pub tolerance: f64,
}

impl AlignmentReport {
    /// Strict reading: georeferences match and both residuals are in bound.
    pub fn pass(&self) -> bool {
        self.georef_match
            && self.max_x_residual <= self.tolerance
            && self.max_y_residual <= self.tolerance
    }

    /// Gating condition used by [`fuse`].
    pub fn georef_pass(&self) -> bool {
        self.georef_match
    }
}

impl fmt::Display for AlignmentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "georef_match={} max_x_residual={} max_y_residual={} tolerance={}",
            self.georef_match, self.max_x_residual, self.max_y_residual, self.tolerance
        )
    }
}

const GAUSSIAN_RADIUS: usize = 2;

/// Unnormalized 5x5 sigma=1 kernel weights.
fn gaussian_weight(dy: isize, dx: isize) -> f64 {
    (-((dy * dy + dx * dx) as f64) / 2.0).exp()
}

/// Gaussian blur of one plane, kernel renormalized where it overhangs the
/// border. Kept in f64 so tests can check the normalization exactly.
fn gaussian_blur_plane(plane: &[f32], width: usize, height: usize) -> Vec<f64> {
    let r = GAUSSIAN_RADIUS as isize;
    let mut out = vec![0.0f64; width * height];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for dy in -r..=r {
                let yy = y + dy;
                if yy < 0 || yy >= height as isize {
                    continue;
                }
                for dx in -r..=r {
                    let xx = x + dx;
                    if xx < 0 || xx >= width as isize {
                        continue;
                    }
                    let w = gaussian_weight(dy, dx);
                    acc += w * plane[yy as usize * width + xx as usize] as f64;
                    wsum += w;
                }
            }
            out[y as usize * width + x as usize] = acc / wsum;
        }
    }
    out
}

/// 3x3 median of one plane, borders handled by edge replication.
fn median_filter_plane(plane: &[f32], width: usize, height: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; width * height];
    let mut window = [0.0f32; 9];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut k = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let yy = (y + dy).clamp(0, height as isize - 1) as usize;
                    let xx = (x + dx).clamp(0, width as isize - 1) as usize;
                    window[k] = plane[yy * width + xx];
                    k += 1;
                }
            }
            window.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out[y as usize * width + x as usize] = window[4];
        }
    }
    out
}

/// Modality-specific noise removal: Gaussian blur for lidar/optical,
/// 3x3 median despeckling for SAR. Fused rasters are rejected; denoise the
/// sources before fusing.
pub fn denoise(raster: &Raster) -> Result<Raster> {
    let (w, h) = (raster.width(), raster.height());
    let mut out = raster.clone();
    match raster.modality {
        Modality::Lidar | Modality::Optical => {
            for c in 0..raster.channels() {
                let blurred = gaussian_blur_plane(raster.plane(c), w, h);
                for (dst, v) in out.plane_mut(c).iter_mut().zip(blurred) {
                    *dst = v as f32;
                }
            }
        }
        Modality::Sar => {
            for c in 0..raster.channels() {
                let filtered = median_filter_plane(raster.plane(c), w, h);
                out.plane_mut(c).copy_from_slice(&filtered);
            }
        }
        Modality::Fused => {
            return Err(Error::InvalidArgument(
                "cannot denoise a fused raster; denoise the sources before fusing".into(),
            ));
        }
    }
    Ok(out)
}

fn max_abs_forward_diff_x(map: &[f64], width: usize, height: usize) -> f64 {
    let mut max = 0.0f64;
    for y in 0..height {
        for x in 0..width.saturating_sub(1) {
            let d = (map[y * width + x + 1] - map[y * width + x]).abs();
            max = max.max(d);
        }
    }
    max
}

fn max_abs_forward_diff_y(map: &[f64], width: usize, height: usize) -> f64 {
    let mut max = 0.0f64;
    for y in 0..height.saturating_sub(1) {
        for x in 0..width {
            let d = (map[(y + 1) * width + x] - map[y * width + x]).abs();
            max = max.max(d);
        }
    }
    max
}

/// Validate spatial alignment of the three source rasters.
///
/// `georef_match` requires exact equality of `(width, height, origin,
/// pixel_size)` across all three. The residuals are the maxima of forward
/// differences of `mean(lidar) - mean(sar)` along x and `mean(optical) -
/// mean(sar)` along y; they always accompany the report.
pub fn check_alignment(
    lidar: &Raster,
    sar: &Raster,
    optical: &Raster,
    tolerance: f64,
) -> AlignmentReport {
    let georef_match = lidar.same_georef(sar) && sar.same_georef(optical);
    let same_grid = lidar.width() == sar.width()
        && lidar.height() == sar.height()
        && sar.width() == optical.width()
        && sar.height() == optical.height();
    let (max_x, max_y) = if same_grid {
        let (w, h) = (lidar.width(), lidar.height());
        let mean_l = lidar.channel_mean();
        let mean_s = sar.channel_mean();
        let mean_o = optical.channel_mean();
        let diff_ls: Vec<f64> = mean_l.iter().zip(&mean_s).map(|(a, b)| a - b).collect();
        let diff_os: Vec<f64> = mean_o.iter().zip(&mean_s).map(|(a, b)| a - b).collect();
        (
            max_abs_forward_diff_x(&diff_ls, w, h),
            max_abs_forward_diff_y(&diff_os, w, h),
        )
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    AlignmentReport {
        georef_match,
        max_x_residual: max_x,
        max_y_residual: max_y,
        tolerance,
    }
}

/// Stack the three sources channel-wise in the fixed order
/// `[lidar | sar | optical]`. Sample values are copied exactly.
pub fn fuse(lidar: &Raster, sar: &Raster, optical: &Raster) -> Result<Raster> {
    let report = check_alignment(lidar, sar, optical, f64::INFINITY);
    if !report.georef_pass() {
        return Err(Error::Misaligned(report.to_string()));
    }
    let channels = lidar.channels() + sar.channels() + optical.channels();
    let mut samples = Vec::with_capacity(lidar.width() * lidar.height() * channels);
    samples.extend_from_slice(lidar.samples());
    samples.extend_from_slice(sar.samples());
    samples.extend_from_slice(optical.samples());
    Raster::from_samples(
        lidar.width(),
        lidar.height(),
        channels,
        lidar.origin_x,
        lidar.origin_y,
        lidar.pixel_size,
        Modality::Fused,
        samples,
    )
}

/// Per-sample normalized squared Frobenius norm of `raw - cleaned`.
pub fn noise_norm(raw: &Raster, cleaned: &Raster) -> Result<f64> {
    if raw.width() != cleaned.width()
        || raw.height() != cleaned.height()
        || raw.channels() != cleaned.channels()
    {
        return Err(Error::ShapeMismatch(format!(
            "noise norm operands {}x{}x{} vs {}x{}x{}",
            raw.width(),
            raw.height(),
            raw.channels(),
            cleaned.width(),
            cleaned.height(),
            cleaned.channels()
        )));
    }
    let sum: f64 = raw
        .samples()
        .iter()
        .zip(cleaned.samples())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / raw.samples().len() as f64)
}

/// Riemann-sum integral of a single-channel feature map against the
/// completeness threshold: cell area is `pixel_size^2`.
pub fn feature_completeness(
    feature_map: &Raster,
    thresholds: &ConstraintThresholds,
) -> Result<(f64, bool)> {
    if feature_map.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "feature completeness expects a single channel, got {}",
            feature_map.channels()
        )));
    }
    let cell = feature_map.pixel_size * feature_map.pixel_size;
    let sum: f64 = feature_map.samples().iter().map(|&v| v as f64).sum();
    let integral = sum * cell;
    Ok((integral, integral >= thresholds.completeness_min))
}

/// Maximum per-position population variance across N feature-map replicas.
pub fn feature_variance(
    feature_maps: &[Raster],
    thresholds: &ConstraintThresholds,
) -> Result<(f64, bool)> {
    if feature_maps.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "feature variance needs at least 2 maps, got {}",
            feature_maps.len()
        )));
    }
    let first = &feature_maps[0];
    for m in &feature_maps[1..] {
        if m.width() != first.width()
            || m.height() != first.height()
            || m.channels() != first.channels()
        {
            return Err(Error::ShapeMismatch(
                "feature maps must share width, height and channels".into(),
            ));
        }
    }
    let n = feature_maps.len() as f64;
    let len = first.samples().len();
    let mut max_var = 0.0f64;
    for idx in 0..len {
        let mean: f64 = feature_maps.iter().map(|m| m.samples()[idx] as f64).sum::<f64>() / n;
        let var: f64 = feature_maps
            .iter()
            .map(|m| {
                let d = m.samples()[idx] as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        max_var = max_var.max(var);
    }
    Ok((max_var, max_var <= thresholds.consistency_max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(w: usize, h: usize, c: usize, v: f32, modality: Modality) -> Raster {
        Raster::from_samples(w, h, c, 0.0, 0.0, 1.0, modality, vec![v; w * h * c]).unwrap()
    }

    #[test]
    fn filters_preserve_constants() {
        let lidar = flat(7, 6, 1, 3.25, Modality::Lidar);
        assert_eq!(denoise(&lidar).unwrap().samples(), lidar.samples());
        let sar = flat(7, 6, 1, 0.4, Modality::Sar);
        assert_eq!(denoise(&sar).unwrap().samples(), sar.samples());
    }

    #[test]
    fn median_removes_single_impulse() {
        for (x, y) in [(3, 3), (0, 0), (6, 0), (0, 5)] {
            let mut sar = flat(7, 6, 1, 0.0, Modality::Sar);
            sar.set(0, x, y, 9.0);
            let clean = denoise(&sar).unwrap();
            assert!(clean.samples().iter().all(|&v| v == 0.0), "impulse at ({x},{y})");
        }
    }

    #[test]
    fn gaussian_impulse_center_matches_kernel_weight() {
        let mut lidar = flat(9, 9, 1, 0.0, Modality::Lidar);
        lidar.set(0, 4, 4, 1.0);
        let blurred = denoise(&lidar).unwrap();
        // oracle: normalized center weight of the discretized 5x5 sigma=1 kernel
        let mut wsum = 0.0f64;
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                wsum += (-((dy * dy + dx * dx) as f64) / 2.0).exp();
            }
        }
        let center = 1.0 / wsum;
        assert!((blurred.get(0, 4, 4) as f64 - center).abs() < 1e-7);
    }

    #[test]
    fn gaussian_effective_weights_sum_to_one_everywhere() {
        let ones = vec![1.0f32; 6 * 5];
        let blurred = gaussian_blur_plane(&ones, 6, 5);
        for v in blurred {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn denoise_rejects_fused_and_keeps_geometry() {
        let fused = flat(4, 4, 5, 1.0, Modality::Fused);
        assert!(denoise(&fused).is_err());
        let optical = flat(5, 3, 3, 0.5, Modality::Optical);
        let out = denoise(&optical).unwrap();
        assert_eq!((out.width(), out.height(), out.channels()), (5, 3, 3));
        assert_eq!(out.pixel_size, optical.pixel_size);
    }

    #[test]
    fn alignment_georef_equality() {
        let lidar = flat(4, 4, 1, 1.0, Modality::Lidar);
        let sar = flat(4, 4, 1, 0.3, Modality::Sar);
        let optical = flat(4, 4, 3, 0.5, Modality::Optical);
        assert!(check_alignment(&lidar, &sar, &optical, 1.0).georef_match);

        let mut shifted = sar.clone();
        shifted.origin_x += shifted.pixel_size;
        assert!(!check_alignment(&lidar, &shifted, &optical, 1.0).georef_match);
    }

    #[test]
    fn alignment_residual_zero_for_constant_difference() {
        // lidar - sar constant everywhere -> x residual exactly 0
        let mut lidar = flat(5, 4, 1, 0.0, Modality::Lidar);
        let mut k = 0.0;
        for y in 0..4 {
            for x in 0..5 {
                lidar.set(0, x, y, k);
                k += 0.25;
            }
        }
        let mut sar = lidar.clone();
        sar.modality = Modality::Sar;
        for v in sar.samples_mut() {
            *v -= 2.0;
        }
        let optical = flat(5, 4, 3, 0.5, Modality::Optical);
        let report = check_alignment(&lidar, &sar, &optical, 1.0);
        assert_eq!(report.max_x_residual, 0.0);
        assert!(report.max_y_residual > 0.0); // optical - sar varies along y
    }

    #[test]
    fn fuse_stacks_and_slices_back() {
        let mut lidar = flat(4, 3, 1, 0.0, Modality::Lidar);
        let mut sar = flat(4, 3, 1, 0.0, Modality::Sar);
        let mut optical = flat(4, 3, 3, 0.0, Modality::Optical);
        for (i, v) in lidar.samples_mut().iter_mut().enumerate() {
            *v = i as f32;
        }
        for (i, v) in sar.samples_mut().iter_mut().enumerate() {
            *v = 100.0 + i as f32;
        }
        for (i, v) in optical.samples_mut().iter_mut().enumerate() {
            *v = 200.0 + i as f32;
        }
        let fused = fuse(&lidar, &sar, &optical).unwrap();
        assert_eq!(fused.channels(), 5);
        assert_eq!(fused.modality, Modality::Fused);
        assert_eq!(fused.plane(0), lidar.plane(0));
        let optical_back = fused.extract_channels(2, 3, Modality::Optical).unwrap();
        assert_eq!(optical_back.samples(), optical.samples());
    }

    #[test]
    fn fuse_rejects_misaligned_inputs() {
        let lidar = flat(4, 3, 1, 0.0, Modality::Lidar);
        let sar = flat(5, 3, 1, 0.0, Modality::Sar);
        let optical = flat(4, 3, 3, 0.0, Modality::Optical);
        match fuse(&lidar, &sar, &optical) {
            Err(Error::Misaligned(msg)) => assert!(msg.contains("georef_match=false")),
            other => panic!("expected Misaligned, got {other:?}"),
        }
    }

    #[test]
    fn noise_norm_examples() {
        let a = flat(4, 4, 2, 1.5, Modality::Lidar);
        assert_eq!(noise_norm(&a, &a).unwrap(), 0.0);

        let b = flat(4, 4, 2, 0.5, Modality::Lidar);
        assert!((noise_norm(&a, &b).unwrap() - 1.0).abs() < 1e-12);

        let raw = Raster::from_samples(2, 1, 1, 0.0, 0.0, 1.0, Modality::Sar, vec![1.0, 2.0]).unwrap();
        let cleaned = flat(2, 1, 1, 0.0, Modality::Sar);
        assert!((noise_norm(&raw, &cleaned).unwrap() - 2.5).abs() < 1e-12);

        // symmetry
        assert_eq!(noise_norm(&raw, &cleaned).unwrap(), noise_norm(&cleaned, &raw).unwrap());
        assert!(noise_norm(&a, &flat(3, 4, 2, 0.0, Modality::Lidar)).is_err());
    }

    #[test]
    fn completeness_riemann_sum() {
        let thresholds = ConstraintThresholds {
            completeness_min: 50.0,
            ..ConstraintThresholds::default()
        };
        let ones = flat(10, 10, 1, 1.0, Modality::Lidar);
        let (integral, pass) = feature_completeness(&ones, &thresholds).unwrap();
        assert_eq!(integral, 100.0);
        assert!(pass);

        let zeros = flat(10, 10, 1, 0.0, Modality::Lidar);
        let thresholds_pos = ConstraintThresholds {
            completeness_min: 1.0,
            ..ConstraintThresholds::default()
        };
        assert!(!feature_completeness(&zeros, &thresholds_pos).unwrap().1);

        // half ones on a 4x4 grid with pixel_size 2: 8 * 4 = 32
        let mut half = Raster::zeros(4, 4, 1, 0.0, 0.0, 2.0, Modality::Lidar).unwrap();
        for i in 0..8 {
            half.samples_mut()[i] = 1.0;
        }
        let (integral, _) = feature_completeness(&half, &ConstraintThresholds::default()).unwrap();
        assert_eq!(integral, 32.0);
    }

    #[test]
    fn variance_across_replicas() {
        let a = flat(3, 3, 1, 0.5, Modality::Lidar);
        let identical = vec![a.clone(), a.clone(), a.clone()];
        let (max_var, pass) = feature_variance(&identical, &ConstraintThresholds::default()).unwrap();
        assert_eq!(max_var, 0.0);
        assert!(pass);

        let mut b = a.clone();
        b.set(0, 1, 1, 2.5); // differs by 2 at one pixel
        let (max_var, _) = feature_variance(&[a.clone(), b.clone()], &ConstraintThresholds::default()).unwrap();
        assert!((max_var - 1.0).abs() < 1e-12);

        let strict = ConstraintThresholds {
            consistency_max: 0.0,
            ..ConstraintThresholds::default()
        };
        assert!(!feature_variance(&[a.clone(), b], &strict).unwrap().1);
        assert!(feature_variance(&[a], &ConstraintThresholds::default()).is_err());
    }
}
