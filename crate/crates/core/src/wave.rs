//! Finite-difference 2-D acoustic wave solver and the source-localization
//! dataset built from it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::par::{map_indexed, Exec};

/// Solver and dataset parameters. The domain is the unit square with an
/// `n x n` grid including the (zero) boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveConfig {
    pub n: usize,
    /// Wave speed in m/s.
    pub c: f64,
    /// `c * dt / dx`.
    pub cfl: f64,
    pub n_steps: usize,
    /// Gaussian source width in domain units.
    pub gaussian_width: f64,
    /// Grid points excluded from source positions on every side.
    pub border: usize,
    /// Zones per side; labels run over `zones^2` classes.
    pub zones: usize,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self {
            n: 64,
            c: 1484.0,
            cfl: 0.5,
            n_steps: 100,
            gaussian_width: 0.05,
            border: 10,
            zones: 3,
        }
    }
}

impl WaveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::config(format!("grid size {} is too small", self.n)));
        }
        if !(self.cfl > 0.0 && self.cfl <= std::f64::consts::FRAC_1_SQRT_2) {
            return Err(Error::config(format!(
                "CFL number {} violates 0 < CFL <= 1/sqrt(2)",
                self.cfl
            )));
        }
        if !(self.c > 0.0) || !(self.gaussian_width > 0.0) {
            return Err(Error::config(
                "wave speed and source width must be positive",
            ));
        }
        if self.n_steps == 0 || self.zones == 0 {
            return Err(Error::config("n_steps and zones must be at least 1"));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.cfl * self.dx() / self.c
    }

    /// Source positions `(row, col)` with the border excluded.
    pub fn interior(&self) -> Vec<(usize, usize)> {
        let lo = self.border;
        let hi = self.n.saturating_sub(self.border);
        (lo..hi)
            .flat_map(|r| (lo..hi).map(move |c| (r, c)))
            .collect()
    }
}

/// Pressure field on the full grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    pub n: usize,
    pub u: Vec<f64>,
    pub step: usize,
    pub dx: f64,
    pub dt: f64,
}

/// Advances `u0` (with zero initial velocity) by `steps` leapfrog steps.
/// The first step uses the Taylor start `u1 = u0 + r^2/2 * lap(u0)`, which
/// keeps the scheme second order.
pub fn propagate(cfg: &WaveConfig, mut u0: Vec<f64>, steps: usize) -> Result<WaveField> {
    cfg.validate()?;
    let n = cfg.n;
    if u0.len() != n * n {
        return Err(Error::Contract(format!(
            "field has {} values for a {n}x{n} grid",
            u0.len()
        )));
    }
    zero_boundary(&mut u0, n);
    let r2 = cfg.cfl * cfg.cfl;
    let mut prev = u0;
    let mut cur = vec![0.0; n * n];
    if steps > 0 {
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let k = i * n + j;
                cur[k] = prev[k] + 0.5 * r2 * lap(&prev, n, k);
            }
        }
    } else {
        cur.clone_from(&prev);
    }
    let mut next = vec![0.0; n * n];
    for _ in 1..steps {
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let k = i * n + j;
                next[k] = 2.0 * cur[k] - prev[k] + r2 * lap(&cur, n, k);
            }
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(WaveField {
        n,
        u: cur,
        step: steps,
        dx: cfg.dx(),
        dt: cfg.dt(),
    })
}

#[inline]
fn lap(u: &[f64], n: usize, k: usize) -> f64 {
    u[k - n] + u[k + n] + u[k - 1] + u[k + 1] - 4.0 * u[k]
}

fn zero_boundary(u: &mut [f64], n: usize) {
    for i in 0..n {
        u[i] = 0.0;
        u[(n - 1) * n + i] = 0.0;
        u[i * n] = 0.0;
        u[i * n + n - 1] = 0.0;
    }
}

/// Gaussian initial condition `exp(-(r / width)^2)` centered on a grid point.
pub fn gaussian_source(cfg: &WaveConfig, source: (usize, usize)) -> Vec<f64> {
    let n = cfg.n;
    let dx = cfg.dx();
    let (sy, sx) = (source.0 as f64 * dx, source.1 as f64 * dx);
    let mut u = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (y, x) = (i as f64 * dx, j as f64 * dx);
            let r2 = (x - sx).powi(2) + (y - sy).powi(2);
            u[i * n + j] = (-r2 / (cfg.gaussian_width * cfg.gaussian_width)).exp();
        }
    }
    u
}

/// Field `cfg.n_steps` steps after a Gaussian eruption at `source`.
pub fn simulate_wave(source: (usize, usize), cfg: &WaveConfig) -> Result<WaveField> {
    cfg.validate()?;
    let (r, c) = source;
    let lo = cfg.border;
    let hi = cfg.n.saturating_sub(cfg.border);
    if r < lo || r >= hi || c < lo || c >= hi {
        return Err(Error::Domain(format!(
            "source ({r}, {c}) is outside the interior {lo}..{hi}"
        )));
    }
    propagate(cfg, gaussian_source(cfg, source), cfg.n_steps)
}

/// Row-major zone index of a grid point.
pub fn zone_label(source: (usize, usize), n: usize, zones: usize) -> Result<usize> {
    let (r, c) = source;
    if r >= n || c >= n || zones == 0 {
        return Err(Error::Domain(format!(
            "point ({r}, {c}) outside a {n}x{n} grid"
        )));
    }
    Ok((r * zones / n) * zones + c * zones / n)
}

/// Echoed into `manifest.json` next to the generated container files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveManifest {
    pub config: WaveConfig,
    pub samples: usize,
    pub train: usize,
    pub test: usize,
    pub split_seed: u64,
    pub test_fraction: f64,
    /// Normalization bounds applied to every field.
    pub field_min: f64,
    pub field_max: f64,
    pub label_histogram: BTreeMap<usize, usize>,
}

pub struct WaveDataset {
    pub train: Dataset,
    pub test: Dataset,
    pub manifest: WaveManifest,
}

pub const TEST_FRACTION: f64 = 0.2;

/// One sample per interior source, globally min-max normalized to `[0, 1]`
/// and split 80:20 by `seed`.
pub fn generate_dataset(cfg: &WaveConfig, seed: u64, exec: Exec) -> Result<WaveDataset> {
    cfg.validate()?;
    let sources = cfg.interior();
    if sources.is_empty() {
        return Err(Error::config(format!(
            "border {} leaves no interior on a {} grid",
            cfg.border, cfg.n
        )));
    }
    let fields = map_indexed(exec, sources.len(), |i| {
        simulate_wave(sources[i], cfg).map(|f| f.u)
    });
    let fields: Vec<Vec<f64>> = fields.into_iter().collect::<Result<_>>()?;
    let (lo, hi) = fields
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut data = Vec::with_capacity(fields.len() * cfg.n * cfg.n);
    for f in &fields {
        data.extend(f.iter().map(|&v| ((v - lo) / span) as f32));
    }
    let mut labels = Vec::with_capacity(sources.len());
    let mut hist = BTreeMap::new();
    for &s in &sources {
        let l = zone_label(s, cfg.n, cfg.zones)?;
        *hist.entry(l).or_insert(0) += 1;
        labels.push(l as u16);
    }
    let all = Dataset::new(vec![cfg.n, cfg.n], data, labels)?;
    let (train, test) = all.split(TEST_FRACTION, seed)?;
    Ok(WaveDataset {
        manifest: WaveManifest {
            config: cfg.clone(),
            samples: all.len(),
            train: train.len(),
            test: test.len(),
            split_seed: seed,
            test_fraction: TEST_FRACTION,
            field_min: lo,
            field_max: hi,
            label_histogram: hist,
        },
        train,
        test,
    })
}

/// Max error against the standing wave `sin(pi x) sin(pi y) cos(sqrt(2) pi c t)`
/// after evolving to `t_end`, for an `n`-point grid.
pub fn standing_wave_error(n: usize, cfl: f64, t_end: f64) -> Result<f64> {
    let c = 1.0;
    let cfg = WaveConfig {
        n,
        c,
        cfl,
        n_steps: 1,
        gaussian_width: 1.0,
        border: 0,
        zones: 1,
    };
    let dx = cfg.dx();
    let steps = (t_end / cfg.dt()).round() as usize;
    let t = steps as f64 * cfg.dt();
    let pi = std::f64::consts::PI;
    let mode = |i: usize, j: usize| (pi * i as f64 * dx).sin() * (pi * j as f64 * dx).sin();
    let u0: Vec<f64> = (0..n * n).map(|k| mode(k / n, k % n)).collect();
    let f = propagate(&cfg, u0, steps)?;
    let w = (2.0f64).sqrt() * pi * c;
    Ok((0..n * n)
        .map(|k| (f.u[k] - mode(k / n, k % n) * (w * t).cos()).abs())
        .fold(0.0, f64::max))
}

/// Error ratio between an `n`-point grid and the refined `2n - 1` grid at
/// the same CFL number (so `dx` and `dt` both halve).
pub fn convergence_factor(n: usize, cfl: f64, t_end: f64) -> Result<f64> {
    Ok(standing_wave_error(n, cfl, t_end)? / standing_wave_error(2 * n - 1, cfl, t_end)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WaveConfig {
        WaveConfig {
            n: 33,
            border: 4,
            n_steps: 40,
            ..Default::default()
        }
    }

    #[test]
    fn zone_examples() {
        assert_eq!(zone_label((10, 10), 64, 3).unwrap(), 0);
        assert_eq!(zone_label((32, 32), 64, 3).unwrap(), 4);
        assert_eq!(zone_label((63, 5), 64, 1).unwrap(), 0);
        assert!(zone_label((64, 0), 64, 3).is_err());
    }

    #[test]
    fn centered_source_is_reflection_symmetric() {
        let cfg = small();
        let f = simulate_wave((16, 16), &cfg).unwrap();
        let n = cfg.n;
        for i in 0..n {
            for j in 0..n {
                let v = f.u[i * n + j];
                assert!((v - f.u[i * n + (n - 1 - j)]).abs() < 1e-12);
                assert!((v - f.u[(n - 1 - i) * n + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_field_stays_zero_and_boundaries_are_pinned() {
        let cfg = small();
        let f = propagate(&cfg, vec![0.0; 33 * 33], 50).unwrap();
        assert!(f.u.iter().all(|&v| v == 0.0));
        let g = simulate_wave((5, 20), &cfg).unwrap();
        for i in 0..33 {
            assert_eq!(g.u[i], 0.0);
            assert_eq!(g.u[i * 33], 0.0);
            assert_eq!(g.u[i * 33 + 32], 0.0);
            assert_eq!(g.u[32 * 33 + i], 0.0);
        }
    }

    #[test]
    fn energy_stays_bounded() {
        let cfg = small();
        let u0 = gaussian_source(&cfg, (12, 20));
        let e0: f64 = u0.iter().map(|v| v * v).sum();
        for steps in [50, 100, 200] {
            let e: f64 = propagate(&cfg, u0.clone(), steps)
                .unwrap()
                .u
                .iter()
                .map(|v| v * v)
                .sum();
            assert!(e.is_finite() && e < 10.0 * e0, "{steps}: {e} vs {e0}");
        }
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let cfg = WaveConfig {
            cfl: 0.8,
            ..small()
        };
        assert!(matches!(
            simulate_wave((16, 16), &cfg),
            Err(Error::Config { .. })
        ));
        assert!(simulate_wave((1, 16), &small()).is_err());
    }

    #[test]
    fn dataset_counts_and_labels() {
        let cfg = WaveConfig {
            n: 24,
            border: 3,
            n_steps: 10,
            ..Default::default()
        };
        let d = generate_dataset(&cfg, 1, Exec::Sequential).unwrap();
        assert_eq!(d.manifest.samples, 18 * 18);
        assert_eq!(d.test.len(), (0.2f64 * 324.0).floor() as usize);
        assert_eq!(d.train.len() + d.test.len(), 324);
        assert_eq!(d.manifest.label_histogram.len(), 9);
        let (lo, hi) = d
            .train
            .data
            .iter()
            .chain(&d.test.data)
            .fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert_eq!((lo, hi), (0.0, 1.0));
        let again = generate_dataset(&cfg, 1, Exec::Parallel).unwrap();
        assert_eq!(again.train, d.train);
    }

    #[test]
    fn scheme_is_second_order() {
        let f = convergence_factor(17, 0.5, 0.25).unwrap();
        assert!((3.0..=5.0).contains(&f), "{f}");
    }
}
