//! Noise schedules and the per-step scalars derived from them.
//!
//! Steps are 1-based throughout (`t ∈ 1..=T`), with `ᾱ_0 := 1`, so the
//! posterior at `t = 1` is deterministic (`β̃_1 = 0`).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    beta_tildes: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one beta".into()));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, &b)| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidArgument(format!("beta_{} = {b} outside (0, 1)", i + 1)));
        }

        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let beta_tildes: Vec<f64> = (0..betas.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bars[i]) * betas[i]
            })
            .collect();
        let sigmas = beta_tildes.iter().map(|b| b.sqrt()).collect();

        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            beta_tildes,
            sigmas,
        })
    }

    /// `steps` evenly spaced betas from `beta_start` to `beta_end`, both inclusive.
    pub fn linear(beta_start: f64, beta_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule length must be ≥ 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start ≤ beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            let last = (steps - 1) as f64;
            (0..steps).map(|i| beta_start + span * i as f64 / last).collect()
        };
        Self::from_betas(betas)
    }

    /// Number of diffusion steps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta_tildes(&self) -> &[f64] {
        &self.beta_tildes
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.len() {
            Err(Error::InvalidArgument(format!("step {t} outside 1..={}", self.len())))
        } else {
            Ok(t - 1)
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.index(t)?])
    }

    /// `ᾱ_{t-1}`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> Result<f64> {
        let i = self.index(t)?;
        Ok(if i == 0 { 1.0 } else { self.alpha_bars[i - 1] })
    }

    pub fn beta_tilde(&self, t: usize) -> Result<f64> {
        Ok(self.beta_tildes[self.index(t)?])
    }

    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok(self.sigmas[self.index(t)?])
    }

    /// ELBO weight of step `t`: `1/(2α_1)` at `t = 1`, otherwise
    /// `β_t² / (2σ_t² α_t (1-ᾱ_t))` with `σ_t² = β̃_t`.
    pub fn gamma(&self, t: usize) -> Result<f64> {
        let i = self.index(t)?;
        let alpha = self.alphas[i];
        if i == 0 {
            return Ok(1.0 / (2.0 * alpha));
        }
        let beta = self.betas[i];
        let var = self.beta_tildes[i];
        Ok(beta * beta / (2.0 * var * alpha * (1.0 - self.alpha_bars[i])))
    }

    /// The per-step KL coefficient `β_t / (2α_t(1-ᾱ_{t-1}))` for `t ≥ 2`.
    /// Algebraically equal to [`gamma`](Self::gamma) once `σ_t² = β̃_t`.
    pub fn kl_coefficient(&self, t: usize) -> Result<f64> {
        let i = self.index(t)?;
        if i == 0 {
            return Err(Error::InvalidArgument("KL coefficient is defined for t ≥ 2".into()));
        }
        Ok(self.betas[i] / (2.0 * self.alphas[i] * (1.0 - self.alpha_bars[i - 1])))
    }

    pub fn gammas(&self) -> Vec<f64> {
        (1..=self.len()).map(|t| self.gamma(t).expect("in range")).collect()
    }

    /// One decimal beta per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for b in &self.betas {
            let _ = writeln!(out, "{b:?}");
        }
        out
    }

    /// Parses the one-beta-per-line format; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut betas = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let beta = line
                .parse::<f64>()
                .map_err(|e| Error::format("schedule", format!("line {}: `{line}`: {e}", lineno + 1)))?;
            betas.push(beta);
        }
        Self::from_betas(betas)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// True when every beta is strictly larger than the one before it.
    pub fn is_strictly_increasing(&self) -> bool {
        self.betas.windows(2).all(|w| w[0] < w[1])
    }
}

/// Exhaustive search over strictly increasing combinations drawn from `grid`
/// (one ascending candidate list per position). Returns the minimiser of
/// `objective`; ties go to the lexicographically smallest schedule.
/// Combinations whose objective is not finite are skipped.
pub fn grid_search_fast_schedule<F>(grid: &[Vec<f64>], mut objective: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty search grid".into()));
    }
    for (i, options) in grid.iter().enumerate() {
        if options.is_empty() {
            return Err(Error::InvalidArgument(format!("grid position {i} is empty")));
        }
        if options.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument(format!(
                "grid position {i} is not sorted ascending"
            )));
        }
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut current = Vec::with_capacity(grid.len());
    search(grid, &mut current, &mut objective, &mut best)?;
    best.map(|(_, s)| s).ok_or(Error::NoFeasibleSchedule)
}

// Depth-first in index order, which is lexicographic order since every
// candidate list is ascending; strict `<` keeps the first of equal scores.
fn search<F>(
    grid: &[Vec<f64>],
    current: &mut Vec<f64>,
    objective: &mut F,
    best: &mut Option<(f64, Vec<f64>)>,
) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let pos = current.len();
    if pos == grid.len() {
        let score = objective(current)?;
        if score.is_finite() && best.as_ref().is_none_or(|(b, _)| score < *b) {
            *best = Some((score, current.clone()));
        }
        return Ok(());
    }
    let floor = current.last().copied();
    for &value in &grid[pos] {
        if floor.is_some_and(|f| value <= f) {
            continue;
        }
        current.push(value);
        search(grid, current, objective, best)?;
        current.pop();
    }
    Ok(())
}

/// Candidate grids used for fast-schedule search: every position takes
/// `{1, …, 9} × 10^e` for that position's exponent.
pub fn decade_grid(exponents: &[i32]) -> Vec<Vec<f64>> {
    exponents
        .iter()
        .map(|&e| {
            (1..=9)
                .map(|k| {
                    // dividing keeps 0.3 as the nearest double to 3/10
                    if e < 0 {
                        k as f64 / 10f64.powi(-e)
                    } else {
                        k as f64 * 10f64.powi(e)
                    }
                })
                .collect()
        })
        .collect()
}

/// Per-position exponents for the standard `T_infer ∈ {2, 6, 12}` grids.
pub fn standard_grid_exponents(t_infer: usize) -> Option<&'static [i32]> {
    match t_infer {
        2 => Some(&[-1, -1]),
        6 => Some(&[-4, -3, -2, -2, -1, -1]),
        12 => Some(&[-4, -4, -3, -3, -2, -2, -2, -2, -1, -1, -1, -1]),
        _ => None,
    }
}

#[cfg(test)]
#[allow(clippy::excessive_precision, clippy::inconsistent_digit_grouping)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_endpoints_and_first_alpha_bar() {
        let s = NoiseSchedule::linear(1e-4, 5e-2, 50).unwrap();
        assert_eq!(s.len(), 50);
        assert_eq!(s.betas()[0], 1e-4);
        assert_eq!(s.betas()[49], 5e-2);
        assert_relative_eq!(s.alpha_bar(1).unwrap(), 0.9999, max_relative = 1e-15);
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(0.5, 0.5, 1).unwrap();
        assert_eq!(s.betas(), &[0.5]);
        assert_eq!(s.alpha_bar(1).unwrap(), 0.5);
        assert_eq!(s.beta_tilde(1).unwrap(), 0.0);
    }

    // Frozen from a 50-digit mpmath evaluation of Π(1 - β_t).
    #[test]
    fn alpha_bar_matches_high_precision_product() {
        let s = NoiseSchedule::linear(1e-4, 5e-2, 50).unwrap();
        assert_relative_eq!(
            s.alpha_bar(50).unwrap(),
            0.279_672_500_192_884_290_988_985,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            s.alpha_bar(25).unwrap(),
            0.732_996_469_722_836_894_886_255,
            max_relative = 1e-12
        );
    }

    #[test]
    fn gamma_values() {
        let s = NoiseSchedule::linear(1e-4, 5e-2, 50).unwrap();
        assert_eq!(s.gamma(1).unwrap(), 1.0 / (2.0 * s.alpha(1).unwrap()));
        assert_relative_eq!(s.gamma(1).unwrap(), 0.500_050_005_000_500_05, max_relative = 1e-14);
        // mpmath, 50 digits
        assert_relative_eq!(
            s.gamma(25).unwrap(),
            0.050_607_402_529_378_877_725_946_85,
            max_relative = 1e-12
        );
    }

    #[test]
    fn gamma_forms_agree() {
        let s = NoiseSchedule::linear(1e-4, 5e-2, 50).unwrap();
        for t in 2..=50 {
            assert_relative_eq!(s.gamma(t).unwrap(), s.kl_coefficient(t).unwrap(), max_relative = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(NoiseSchedule::linear(1e-4, 5e-2, 0).is_err());
        assert!(NoiseSchedule::linear(0.0, 5e-2, 10).is_err());
        assert!(NoiseSchedule::linear(0.2, 0.1, 10).is_err());
        assert!(NoiseSchedule::linear(0.1, 1.0, 10).is_err());
        let s = NoiseSchedule::linear(0.1, 0.2, 3).unwrap();
        assert!(s.gamma(0).is_err());
        assert!(s.gamma(4).is_err());
    }

    #[test]
    fn text_format_round_trip_with_comments() {
        let s = NoiseSchedule::parse_text("# fast schedule\n0.3\n\n0.9 # last\n").unwrap();
        assert_eq!(s.betas(), &[0.3, 0.9]);
        let again = NoiseSchedule::parse_text(&s.to_text()).unwrap();
        assert_eq!(again, s);
        assert!(NoiseSchedule::parse_text("0.2\nabc\n").is_err());
    }

    #[test]
    fn grid_search_excludes_non_increasing() {
        let grid = vec![vec![0.1, 0.2], vec![0.1, 0.3]];
        let best = grid_search_fast_schedule(&grid, |s| Ok(s.iter().sum())).unwrap();
        assert_eq!(best, vec![0.1, 0.3]);
    }

    #[test]
    fn grid_search_singleton_passthrough() {
        let grid = vec![vec![0.01], vec![0.2], vec![0.7]];
        let best = grid_search_fast_schedule(&grid, |_| Ok(1.0)).unwrap();
        assert_eq!(best, vec![0.01, 0.2, 0.7]);
    }

    #[test]
    fn grid_search_no_feasible() {
        let grid = vec![vec![0.5], vec![0.1, 0.5]];
        assert!(matches!(
            grid_search_fast_schedule(&grid, |_| Ok(0.0)),
            Err(Error::NoFeasibleSchedule)
        ));
    }

    #[test]
    fn grid_search_ties_break_lexicographically() {
        let grid = decade_grid(&[-1, -1]);
        let best = grid_search_fast_schedule(&grid, |_| Ok(3.0)).unwrap();
        assert_eq!(best, vec![0.1, 0.2]);
    }
}
