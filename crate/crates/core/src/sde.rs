//! Reversible ODE versus irreversible SDE transport of an image under the
//! swirl velocity field.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, NoiseSource};
use crate::tensor::l2_norm;

/// Row-major `rows × cols × channels` image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(rows: usize, cols: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::dim("image dimensions must be positive"));
        }
        if pixels.len() != rows * cols * channels {
            return Err(Error::dim(format!(
                "{rows}x{cols}x{channels} image needs {} pixels, got {}",
                rows * cols * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            pixels,
        })
    }

    pub fn filled(rows: usize, cols: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, channels, vec![value; rows * cols * channels])
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.cols + j) * self.channels + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.pixels[self.index(i, j, k)]
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.channels == other.channels
    }

    /// Copy with every pixel clamped into `[0, 1]`, for export.
    pub fn clamped(&self) -> ImageGrid {
        ImageGrid {
            pixels: self.pixels.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// Smooth synthetic test pattern with values in `[0, 1]`.
    pub fn test_pattern(rows: usize, cols: usize, channels: usize) -> Result<Self> {
        let mut pixels = Vec::with_capacity(rows * cols * channels);
        for i in 0..rows {
            for j in 0..cols {
                for k in 0..channels {
                    let u = i as f64 / rows as f64;
                    let v = j as f64 / cols as f64;
                    let phase = k as f64 * 0.7;
                    pixels.push(0.5 + 0.25 * (2.0 * PI * u + phase).sin() + 0.25 * (2.0 * PI * v).cos() * u);
                }
            }
        }
        Self::new(rows, cols, channels, pixels)
    }
}

/// Source index map of the swirl displacement: output `(i, j)` reads input
/// `(src_i, src_j)`.
fn swirl_source(i: usize, j: usize, rows: usize, cols: usize) -> (usize, usize) {
    let angle = 2.0 * PI * i as f64 / 180.0;
    let offset_j = (j as f64 + 50.0 * angle.cos()).floor().rem_euclid(cols as f64) as usize;
    let offset_i = (i as f64 + 50.0 * angle.sin()).floor().rem_euclid(rows as f64) as usize;
    ((i + offset_j) % rows, (j + offset_i) % cols)
}

/// Displaced image of the swirl map, applied to every channel.
pub fn swirl_field(img: &ImageGrid) -> ImageGrid {
    let mut out = img.clone();
    for i in 0..img.rows {
        for j in 0..img.cols {
            let (si, sj) = swirl_source(i, j, img.rows, img.cols);
            for k in 0..img.channels {
                out.pixels[img.index(i, j, k)] = img.get(si, sj, k);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeMode {
    Ode,
    SdeAdditive,
    SdeMultiplicative,
}

impl SdeMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ode" => Ok(SdeMode::Ode),
            "sde_additive" | "additive" => Ok(SdeMode::SdeAdditive),
            "sde_multiplicative" | "multiplicative" => Ok(SdeMode::SdeMultiplicative),
            other => Err(Error::Parse(format!("unknown sde mode `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SdeMode::Ode => "ode",
            SdeMode::SdeAdditive => "sde_additive",
            SdeMode::SdeMultiplicative => "sde_multiplicative",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeRunConfig {
    pub mode: SdeMode,
    pub gamma: f64,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
}

impl Default for SdeRunConfig {
    fn default() -> Self {
        Self {
            mode: SdeMode::Ode,
            gamma: 0.0,
            dt: 0.01,
            t_end: 1.0,
            seed: 0,
        }
    }
}

impl SdeRunConfig {
    /// Number of integration steps `t_end / dt`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.t_end > 0.0) || !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::invalid("dt and t_end must be positive, gamma nonnegative"));
        }
        let ratio = self.t_end / self.dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::invalid(format!(
                "t_end/dt = {ratio} is not a positive integer"
            )));
        }
        Ok(steps as usize)
    }
}

/// Integrates `steps` explicit Euler (or Euler–Maruyama) steps of
/// `dx = ±F(x) dt + noise` with `F(x) = swirl(x) − x`. Returns the final state
/// and the trajectory of `steps + 1` states, starting with `img`.
pub fn propagate(
    img: &ImageGrid,
    cfg: &SdeRunConfig,
    direction: Direction,
    rng: &mut dyn NoiseSource,
) -> Result<(ImageGrid, Vec<ImageGrid>)> {
    let steps = cfg.steps()?;
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let noisy = cfg.mode != SdeMode::Ode && cfg.gamma > 0.0;
    let scale = cfg.gamma * cfg.dt.sqrt();
    let mut x = img.clone();
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(x.clone());
    let mut draws = vec![0.0; x.pixels.len()];
    for _ in 0..steps {
        let swirled = swirl_field(&x);
        if noisy {
            rng.fill_standard_normal(&mut draws);
        }
        for (p, (&s, &z)) in x.pixels.iter_mut().zip(swirled.pixels.iter().zip(&draws)) {
            let drift = sign * cfg.dt * (s - *p);
            let diffusion = if !noisy {
                0.0
            } else if cfg.mode == SdeMode::SdeAdditive {
                scale * z
            } else {
                scale * *p * z
            };
            *p += drift + diffusion;
        }
        trajectory.push(x.clone());
    }
    Ok((x, trajectory))
}

/// `‖a − b‖₂ / ‖a‖₂`.
pub fn reconstruction_error(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::dim(format!(
            "images differ in shape: {}x{}x{} vs {}x{}x{}",
            a.rows, a.cols, a.channels, b.rows, b.cols, b.channels
        )));
    }
    let diff: Vec<f64> = a.pixels.iter().zip(&b.pixels).map(|(x, y)| x - y).collect();
    let num = l2_norm(&diff);
    if num == 0.0 {
        return Ok(0.0);
    }
    let den = l2_norm(&a.pixels);
    if den == 0.0 {
        return Err(Error::invalid("reference image is all zeros"));
    }
    Ok(num / den)
}

/// Result of a forward-then-backward run.
#[derive(Clone, Debug)]
pub struct RoundTrip {
    pub terminal: ImageGrid,
    pub reconstructed: ImageGrid,
    pub error: f64,
    pub forward_trajectory: Vec<ImageGrid>,
    pub backward_trajectory: Vec<ImageGrid>,
}

/// Forward to `t_end`, then backward to 0, with noise streams derived from `cfg.seed`.
pub fn round_trip(img: &ImageGrid, cfg: &SdeRunConfig) -> Result<RoundTrip> {
    let (terminal, forward_trajectory) = propagate(img, cfg, Direction::Forward, &mut stream(cfg.seed, 0))?;
    let (reconstructed, backward_trajectory) =
        propagate(&terminal, cfg, Direction::Backward, &mut stream(cfg.seed, 1))?;
    let error = reconstruction_error(img, &reconstructed)?;
    Ok(RoundTrip {
        terminal,
        reconstructed,
        error,
        forward_trajectory,
        backward_trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::NoNoise;

    fn indexed(rows: usize, cols: usize) -> ImageGrid {
        ImageGrid::new(rows, cols, 1, (0..rows * cols).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn constant_image_is_fixed() {
        let img = ImageGrid::filled(7, 5, 3, 0.4).unwrap();
        assert_eq!(swirl_field(&img), img);
    }

    #[test]
    fn four_by_four_index_map() {
        let out = swirl_field(&indexed(4, 4));
        let expected = [8., 13., 2., 7., 10., 15., 0., 5., 13., 2., 7., 8., 0., 5., 10., 15.];
        assert_eq!(out.pixels, expected);
    }

    #[test]
    fn output_values_come_from_input() {
        // The map is a relocation but not a bijection: some sources are read twice.
        let img = indexed(16, 12);
        let out = swirl_field(&img);
        assert!(out.pixels.iter().all(|v| img.pixels.contains(v)));
    }

    #[test]
    fn channels_move_together() {
        let gray = indexed(6, 6);
        let rgb = ImageGrid::new(6, 6, 2, gray.pixels.iter().flat_map(|&v| [v, -v]).collect()).unwrap();
        let g = swirl_field(&gray);
        let c = swirl_field(&rgb);
        for p in 0..36 {
            assert_eq!(c.pixels[2 * p], g.pixels[p]);
            assert_eq!(c.pixels[2 * p + 1], -g.pixels[p]);
        }
    }

    #[test]
    fn trajectory_shape() {
        let img = ImageGrid::test_pattern(8, 8, 1).unwrap();
        let cfg = SdeRunConfig {
            dt: 0.1,
            ..SdeRunConfig::default()
        };
        let (last, traj) = propagate(&img, &cfg, Direction::Forward, &mut NoNoise).unwrap();
        assert_eq!(traj.len(), 11);
        assert_eq!(traj[0], img);
        assert_eq!(traj[10], last);
    }

    #[test]
    fn one_unit_step_reproduces_swirl() {
        let img = ImageGrid::test_pattern(9, 7, 1).unwrap();
        let cfg = SdeRunConfig {
            dt: 1.0,
            t_end: 1.0,
            ..SdeRunConfig::default()
        };
        let (out, _) = propagate(&img, &cfg, Direction::Forward, &mut NoNoise).unwrap();
        let sw = swirl_field(&img);
        for (a, b) in out.pixels.iter().zip(&sw.pixels) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gamma_sde_equals_ode() {
        let img = ImageGrid::test_pattern(16, 16, 1).unwrap();
        let ode = round_trip(&img, &SdeRunConfig::default()).unwrap();
        for mode in [SdeMode::SdeAdditive, SdeMode::SdeMultiplicative] {
            let cfg = SdeRunConfig {
                mode,
                ..SdeRunConfig::default()
            };
            let sde = round_trip(&img, &cfg).unwrap();
            assert_eq!(sde.reconstructed, ode.reconstructed);
        }
    }

    #[test]
    fn ode_reverses_and_sde_does_not() {
        let img = ImageGrid::test_pattern(32, 32, 1).unwrap();
        let ode = round_trip(&img, &SdeRunConfig::default()).unwrap();
        assert!(ode.error < 0.05, "ode error {}", ode.error);
        for seed in 0..3 {
            let cfg = SdeRunConfig {
                mode: SdeMode::SdeAdditive,
                gamma: 1.0,
                seed,
                ..SdeRunConfig::default()
            };
            let sde = round_trip(&img, &cfg).unwrap();
            assert!(sde.error >= 10.0 * ode.error);
        }
    }

    #[test]
    fn invalid_step_count() {
        let cfg = SdeRunConfig {
            dt: 0.3,
            ..SdeRunConfig::default()
        };
        assert!(cfg.steps().is_err());
    }

    #[test]
    fn error_metric() {
        let a = ImageGrid::new(1, 2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(reconstruction_error(&a, &a).unwrap(), 0.0);
        let b = ImageGrid::new(1, 2, 1, vec![6.0, 8.0]).unwrap();
        assert!((reconstruction_error(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let c = ImageGrid::new(1, 2, 1, vec![3.0, 5.0]).unwrap();
        assert!((reconstruction_error(&a, &c).unwrap() - 0.2).abs() < 1e-15);
        let d = ImageGrid::new(2, 1, 1, vec![3.0, 4.0]).unwrap();
        assert!(reconstruction_error(&a, &d).is_err());
    }
}
