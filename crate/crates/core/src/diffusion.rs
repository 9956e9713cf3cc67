//! Absorbing-state forward process over relational edges.
//!
//! Each real-relation cell is either present or in the absorbing state `M`.
//! Present cells survive to step `t` with probability `alpha[t]`; `M` never
//! leaves. The no-edge channel is derived and never noised.

use crate::error::{Error, Result};
use crate::kg::AdjacencyState;
use crate::rng::{CellRng, Purpose};

/// Linear cumulative survival schedule `alpha[t] = 1 - t / T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    alpha: Vec<f64>,
}

pub fn make_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::InvalidSteps(steps));
    }
    let alpha = (0..=steps).map(|t| 1.0 - t as f64 / steps as f64).collect();
    Ok(NoiseSchedule { steps, alpha })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.steps {
            Err(Error::InvalidStep { t, total: self.steps })
        } else {
            Ok(())
        }
    }

    /// `T * alpha[t]`, an exact integer for the linear schedule.
    fn scaled_alpha(&self, t: usize) -> f64 {
        (self.steps - t) as f64
    }

    /// Per-step survival `alpha[t] / alpha[t-1]`, zero once `alpha[t-1]` is zero.
    pub fn step_survival(&self, t: usize) -> f64 {
        let prev = self.scaled_alpha(t - 1);
        if prev == 0.0 {
            0.0
        } else {
            self.scaled_alpha(t) / prev
        }
    }

    /// Probability that a masked cell is resolved at step `t`:
    /// `(alpha[t-1] - alpha[t]) / (1 - alpha[t])`.
    ///
    /// Evaluated on the integer numerators so the result is the correctly
    /// rounded `1 / t`.
    pub fn unmask_probability(&self, t: usize) -> f64 {
        let (prev, cur) = (self.scaled_alpha(t - 1), self.scaled_alpha(t));
        (prev - cur) / (self.steps as f64 - cur)
    }
}

/// Row-stochastic 2x2 matrix over `[present, M]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix(pub [[f64; 2]; 2]);

impl TransitionMatrix {
    pub fn with_survival(keep: f64) -> Self {
        TransitionMatrix([[keep, 1.0 - keep], [0.0, 1.0]])
    }

    pub fn identity() -> Self {
        Self::with_survival(1.0)
    }

    pub fn matmul(&self, rhs: &TransitionMatrix) -> TransitionMatrix {
        let (a, b) = (&self.0, &rhs.0);
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        TransitionMatrix(out)
    }
}

/// Single-step `Q_t` or cumulative `Q̄_t`. The cumulative matrix is defined for `t = 0`.
pub fn transition_matrix(schedule: &NoiseSchedule, t: usize, cumulative: bool) -> Result<TransitionMatrix> {
    schedule.check(t)?;
    if cumulative {
        return Ok(TransitionMatrix::with_survival(schedule.alpha(t)));
    }
    if t == 0 {
        return Err(Error::InvalidStep { t, total: schedule.steps });
    }
    Ok(TransitionMatrix::with_survival(schedule.step_survival(t)))
}

/// Samples `E_t` from a clean state: every present cell independently survives with `alpha[t]`.
pub fn forward_sample(
    clean: &AdjacencyState,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &CellRng,
) -> Result<AdjacencyState> {
    schedule.check(t)?;
    let keep = schedule.alpha(t);
    let mut out = clean.clone();
    if keep >= 1.0 {
        return Ok(out);
    }
    let n = clean.n();
    let nr = clean.num_relations();
    for i in 0..n {
        for j in 0..n {
            for k in 0..nr {
                if clean.get(i, j, k) && rng.uniform(Purpose::ForwardNoise, t, i, j, k) >= keep {
                    out.set(i, j, k, false);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Present,
    Masked,
}

/// Reverse-step distribution over `[present, M]` for one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellDistribution {
    pub present: f64,
    pub masked: f64,
}

/// Posterior mixture for `e_{t-1}` given `e_t` and the predicted existence probability.
pub fn reverse_cell_distribution(
    state: CellState,
    p_exist: f64,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<CellDistribution> {
    if !(0.0..=1.0).contains(&p_exist) {
        return Err(Error::InvalidProbability(p_exist));
    }
    if t == 0 || t > schedule.steps() {
        return Err(Error::InvalidStep { t, total: schedule.steps() });
    }
    Ok(match state {
        CellState::Present => CellDistribution { present: 1.0, masked: 0.0 },
        CellState::Masked => {
            let present = schedule.unmask_probability(t) * p_exist;
            CellDistribution { present, masked: 1.0 - present }
        }
    })
}
