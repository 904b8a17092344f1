//! Repetition containers, time normalization, the approximate-periodicity
//! check, the synthetic test-data generator and dataset file I/O.

mod io;
mod synth;

pub use io::{
    DatasetMeta, format_float, read_dataset, read_dataset_meta, read_trajectories, write_dataset,
    write_dataset_with_meta, write_trajectories,
};
pub use synth::{BaseSignal, SynthChannel, SynthConfig, SynthOutput, synth_dataset};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One time-normalized repetition: times in the global interval
/// `[i-1, i]` and one value vector per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Repetition {
    times: Vec<f64>,
    channels: Vec<Vec<f64>>,
}

impl Repetition {
    pub fn new(times: Vec<f64>, channels: Vec<Vec<f64>>) -> Self {
        Self { times, channels }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Ordered set of repetitions of one approximately periodic process.
#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionSet {
    reps: Vec<Repetition>,
    dim: usize,
    period: f64,
}

impl RepetitionSet {
    pub fn new(reps: Vec<Repetition>, dim: usize, period: f64) -> Result<Self> {
        if reps.is_empty() {
            return Err(Error::TooFewRepetitions { got: 0 });
        }
        if dim == 0 || !(period > 0.0 && period.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "dim {dim} and period {period} must be positive"
            )));
        }
        for (index, rep) in reps.iter().enumerate() {
            if rep.times.is_empty() {
                return Err(Error::EmptySegment { index });
            }
            if rep.channels.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: rep.channels.len(),
                });
            }
            for ch in &rep.channels {
                if ch.len() != rep.times.len() {
                    return Err(Error::DimensionMismatch {
                        expected: rep.times.len(),
                        got: ch.len(),
                    });
                }
            }
            for sample in 1..rep.times.len() {
                if rep.times[sample] <= rep.times[sample - 1] {
                    return Err(Error::NonMonotoneTime { index, sample });
                }
            }
        }
        Ok(Self { reps, dim, period })
    }

    /// Univariate constructor from `(times, values)` pairs.
    pub fn univariate(reps: Vec<(Vec<f64>, Vec<f64>)>, period: f64) -> Result<Self> {
        let reps = reps
            .into_iter()
            .map(|(t, y)| Repetition::new(t, vec![y]))
            .collect();
        Self::new(reps, 1, period)
    }

    pub fn repetitions(&self) -> &[Repetition] {
        &self.reps
    }

    pub fn r(&self) -> usize {
        self.reps.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Total number of samples across repetitions.
    pub fn n_points(&self) -> usize {
        self.reps.iter().map(|r| r.len()).sum()
    }

    /// All times concatenated in repetition order (global placement).
    pub fn concat_times(&self) -> Vec<f64> {
        self.reps.iter().flat_map(|r| r.times.iter().copied()).collect()
    }

    /// All values of one channel concatenated in repetition order.
    pub fn concat_values(&self, channel: usize) -> Vec<f64> {
        self.reps
            .iter()
            .flat_map(|r| r.channels[channel].iter().copied())
            .collect()
    }

    /// Subset of repetitions (used for mini-batches), keeping global times.
    pub fn select(&self, indices: &[usize]) -> RepetitionSet {
        RepetitionSet {
            reps: indices.iter().map(|&i| self.reps[i].clone()).collect(),
            dim: self.dim,
            period: self.period,
        }
    }
}

/// Maps raw contiguous segments of arbitrary duration onto unit intervals:
/// segment `i` goes affinely onto `[0, 1]` and is then offset to `[i-1, i]`.
/// Values are untouched; only the linear reparameterization is provided.
pub fn normalize_repetitions(segments: &[(Vec<f64>, Vec<f64>)]) -> Result<RepetitionSet> {
    if segments.is_empty() {
        return Err(Error::TooFewRepetitions { got: 0 });
    }
    let mut reps = Vec::with_capacity(segments.len());
    for (index, (times, values)) in segments.iter().enumerate() {
        if times.len() < 2 {
            return Err(Error::EmptySegment { index });
        }
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                got: values.len(),
            });
        }
        for sample in 1..times.len() {
            if times[sample] <= times[sample - 1] {
                return Err(Error::NonMonotoneTime { index, sample });
            }
        }
        let a = times[0];
        let span = times[times.len() - 1] - a;
        let offset = index as f64;
        let mapped: Vec<f64> = times.iter().map(|&t| (t - a) / span + offset).collect();
        reps.push((mapped, values.clone()));
    }
    RepetitionSet::univariate(reps, 1.0)
}

/// Outcome of the approximate-periodicity check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicityReport {
    pub max_sup_distance: f64,
    pub epsilon: f64,
    pub grid_size: usize,
    pub pass: bool,
}

/// Computes the maximum pairwise sup-distance between repetitions after
/// piecewise-linear interpolation onto a shared grid of `grid_size`
/// points on the unit interval; passes iff it stays within `epsilon`.
pub fn check_approximate_periodicity(
    rs: &RepetitionSet,
    epsilon: f64,
    grid_size: usize,
) -> Result<PeriodicityReport> {
    if rs.r() < 2 {
        return Err(Error::TooFewRepetitions { got: rs.r() });
    }
    if grid_size < 2 {
        return Err(Error::ConfigInvalid(format!(
            "grid_size must be at least 2, got {grid_size}"
        )));
    }
    let grid: Vec<f64> = (0..grid_size)
        .map(|k| k as f64 / (grid_size - 1) as f64)
        .collect();
    // Per repetition and channel: values interpolated on the local grid.
    let mut curves: Vec<Vec<Vec<f64>>> = Vec::with_capacity(rs.r());
    for (i, rep) in rs.repetitions().iter().enumerate() {
        let local: Vec<f64> = rep.times().iter().map(|&t| t - i as f64).collect();
        let per_channel = (0..rs.dim())
            .map(|c| {
                grid.iter()
                    .map(|&u| linear_interp(&local, rep.channel(c), u))
                    .collect()
            })
            .collect();
        curves.push(per_channel);
    }
    let mut max_dist = 0.0_f64;
    for i in 0..curves.len() {
        for j in (i + 1)..curves.len() {
            for c in 0..rs.dim() {
                for k in 0..grid_size {
                    max_dist = max_dist.max((curves[i][c][k] - curves[j][c][k]).abs());
                }
            }
        }
    }
    Ok(PeriodicityReport {
        max_sup_distance: max_dist,
        epsilon,
        grid_size,
        pass: max_dist <= epsilon,
    })
}

/// Piecewise-linear interpolation with constant extrapolation at the ends.
fn linear_interp(times: &[f64], values: &[f64], t: f64) -> f64 {
    if t <= times[0] {
        return values[0];
    }
    if t >= times[times.len() - 1] {
        return values[values.len() - 1];
    }
    let idx = times.partition_point(|&x| x < t);
    let (t0, t1) = (times[idx - 1], times[idx]);
    let (v0, v1) = (values[idx - 1], values[idx]);
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

/// Equispaced evaluation grid covering `repetitions` whole periods with
/// `samples_per_rep` points each. Built as `rep * p + s * (p / spr)` so
/// phase-aligned points across repetitions differ by whole periods as
/// exactly as the arithmetic allows.
pub fn phase_grid(repetitions: usize, samples_per_rep: usize, period: f64) -> Vec<f64> {
    let step = period / samples_per_rep as f64;
    let mut grid = Vec::with_capacity(repetitions * samples_per_rep);
    for rep in 0..repetitions {
        let base = rep as f64 * period;
        for s in 0..samples_per_rep {
            grid.push(base + s as f64 * step);
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_single_segment_halves_times() {
        let rs = normalize_repetitions(&[(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 3.0])]).unwrap();
        assert_eq!(rs.repetitions()[0].times(), &[0.0, 0.5, 1.0]);
        assert_eq!(rs.repetitions()[0].channel(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn normalize_offsets_consecutive_segments() {
        let rs = normalize_repetitions(&[
            (vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 0.0]),
            (vec![1.0, 2.5, 4.0], vec![0.0, 1.0, 0.0]),
        ])
        .unwrap();
        assert_eq!(rs.repetitions()[0].times(), &[0.0, 0.5, 1.0]);
        assert_eq!(rs.repetitions()[1].times(), &[1.0, 1.5, 2.0]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let rs = normalize_repetitions(&[
            (vec![0.0, 0.7, 2.0], vec![0.1, 0.2, 0.3]),
            (vec![2.0, 2.1, 5.0], vec![0.4, 0.5, 0.6]),
        ])
        .unwrap();
        let again = normalize_repetitions(
            &rs.repetitions()
                .iter()
                .map(|r| (r.times().to_vec(), r.channel(0).to_vec()))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        for (a, b) in rs.repetitions().iter().zip(again.repetitions()) {
            for (x, y) in a.times().iter().zip(b.times()) {
                assert!((x - y).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn normalize_rejects_bad_segments() {
        assert!(matches!(
            normalize_repetitions(&[(vec![1.0], vec![1.0])]),
            Err(Error::EmptySegment { index: 0 })
        ));
        assert!(matches!(
            normalize_repetitions(&[(vec![0.0, 0.0], vec![1.0, 2.0])]),
            Err(Error::NonMonotoneTime { index: 0, sample: 1 })
        ));
    }

    #[test]
    fn periodicity_check_identical_and_offset() {
        // Dyadic times survive the global-offset round trip exactly.
        let times: Vec<f64> = (0..17).map(|i| i as f64 / 16.0).collect();
        let vals: Vec<f64> = times.iter().map(|&t| (2.0 * std::f64::consts::PI * t).sin()).collect();
        let shifted: Vec<f64> = times.iter().map(|&t| t + 1.0).collect();
        let identical = RepetitionSet::univariate(
            vec![(times.clone(), vals.clone()), (shifted.clone(), vals.clone())],
            1.0,
        )
        .unwrap();
        let report = check_approximate_periodicity(&identical, 0.1, 64).unwrap();
        assert_eq!(report.max_sup_distance, 0.0);
        assert!(report.pass);

        let offset_vals: Vec<f64> = vals.iter().map(|v| v + 0.25).collect();
        let offset = RepetitionSet::univariate(
            vec![(times, vals), (shifted, offset_vals)],
            1.0,
        )
        .unwrap();
        let report = check_approximate_periodicity(&offset, 0.1, 64).unwrap();
        assert!((report.max_sup_distance - 0.25).abs() < 1e-12);
        assert!(!report.pass);
    }

    #[test]
    fn periodicity_check_needs_two_reps() {
        let rs = RepetitionSet::univariate(vec![(vec![0.0, 1.0], vec![0.0, 0.0])], 1.0).unwrap();
        assert!(matches!(
            check_approximate_periodicity(&rs, 0.1, 16),
            Err(Error::TooFewRepetitions { got: 1 })
        ));
    }

    #[test]
    fn phase_grid_shape_and_alignment() {
        let g = phase_grid(3, 4, 1.0);
        assert_eq!(g.len(), 12);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[4], 1.0);
        for s in 0..4 {
            assert_eq!(g[4 + s] - g[s], 1.0);
            assert_eq!(g[8 + s] - g[s], 2.0);
        }
    }
}
