//! Bank of extended Kalman filters over a grid of PD candidates, scored by a
//! replayed model-matching criterion and selected with hysteresis.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::estimation::{EkfConfig, EkfState};
use crate::pkpd::{bis_output, DiscreteModel, Infusion, PdParams, StateVec, ThetaVector};
use crate::population::LogNormal;

/// Per-axis probability levels and log-normal spreads of the θ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub c50p_levels: Vec<f64>,
    pub c50r_levels: Vec<f64>,
    pub gamma_levels: Vec<f64>,
    pub c50p_log_std: f64,
    pub c50r_log_std: f64,
    pub gamma_log_std: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            c50p_levels: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            c50r_levels: vec![0.2, 0.5, 0.8],
            gamma_levels: vec![0.2, 0.5, 0.8],
            c50p_log_std: 0.18,
            c50r_log_std: 0.76,
            gamma_log_std: 0.30,
        }
    }
}

impl GridSpec {
    /// A grid holding only the base θ.
    pub fn single() -> Self {
        GridSpec {
            c50p_levels: vec![0.5],
            c50r_levels: vec![0.5],
            gamma_levels: vec![0.5],
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.c50p_levels.len() * self.c50r_levels.len() * self.gamma_levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(SimError::Config("model grid has an empty axis".into()));
        }
        for &p in self
            .c50p_levels
            .iter()
            .chain(&self.c50r_levels)
            .chain(&self.gamma_levels)
        {
            if !(p > 0.0 && p < 1.0) {
                return Err(SimError::ParameterDomain {
                    name: "grid level",
                    value: p,
                });
            }
        }
        for (name, s) in [
            ("c50p_log_std", self.c50p_log_std),
            ("c50r_log_std", self.c50r_log_std),
            ("gamma_log_std", self.gamma_log_std),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(SimError::ParameterDomain { name, value: s });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrid {
    pub candidates: Vec<ThetaVector>,
    pub spec: GridSpec,
    base: ThetaVector,
}

impl ModelGrid {
    /// Cartesian grid, C50p outermost and γ innermost.
    pub fn build(base: ThetaVector, spec: &GridSpec) -> Result<Self> {
        base.validate()?;
        spec.validate()?;
        let axis = |nominal: f64, log_std: f64, levels: &[f64]| -> Vec<f64> {
            let d = LogNormal { nominal, log_std };
            levels.iter().map(|&p| d.quantile(p)).collect()
        };
        let p = axis(base.c50p, spec.c50p_log_std, &spec.c50p_levels);
        let r = axis(base.c50r, spec.c50r_log_std, &spec.c50r_levels);
        let g = axis(base.gamma, spec.gamma_log_std, &spec.gamma_levels);
        let mut candidates = Vec::with_capacity(spec.len());
        for &c50p in &p {
            for &c50r in &r {
                for &gamma in &g {
                    candidates.push(ThetaVector { c50p, c50r, gamma });
                }
            }
        }
        Ok(ModelGrid {
            candidates,
            spec: spec.clone(),
            base,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Candidate closest to the base θ in log space.
    pub fn nominal_index(&self) -> usize {
        let b = self.base;
        let dist = |t: &ThetaVector| {
            (t.c50p / b.c50p).ln().powi(2)
                + (t.c50r / b.c50r).ln().powi(2)
                + (t.gamma / b.gamma).ln().powi(2)
        };
        let mut best = 0;
        for (i, t) in self.candidates.iter().enumerate() {
            if dist(t) < dist(&self.candidates[best]) {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    /// Observation window in controller samples.
    pub n_c: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Switching threshold.
    pub delta: f64,
    /// Samples before switching is allowed; `None` means `n_c`.
    pub warmup: Option<usize>,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            n_c: 30,
            alpha: 0.0,
            beta: 1.0,
            lambda: 0.05,
            delta: 30.0,
            warmup: None,
        }
    }
}

impl SelectorConfig {
    pub fn warmup_samples(&self) -> usize {
        self.warmup.unwrap_or(self.n_c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_c < 1 {
            return Err(SimError::Config("n_c must be at least 1".into()));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("delta", self.delta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::ParameterDomain { name, value: v });
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(SimError::ParameterDomain {
                name: "lambda",
                value: self.lambda,
            });
        }
        Ok(())
    }
}

/// Model-matching criterion from prediction errors ordered oldest to newest.
///
/// `J = α ε(k)² + β Σ_{l=0}^{N_c} e^{-λl} ε(k-l)²`, truncated to the errors
/// available.
pub fn criterion(errors: &[f64], config: &SelectorConfig) -> f64 {
    let Some(&latest) = errors.last() else {
        return 0.0;
    };
    let window: f64 = errors
        .iter()
        .rev()
        .take(config.n_c + 1)
        .enumerate()
        .map(|(l, e)| (-config.lambda * l as f64).exp() * e * e)
        .sum();
    config.alpha * latest * latest + config.beta * window
}

/// Open-loop replay from a stored estimate.
///
/// `inputs[i]` is applied between `outputs[i]` and `outputs[i + 1]`. Returns
/// `ε(l) = h(x(l), θ) - y(l)` for every output.
pub fn replay_errors(
    start: &StateVec,
    inputs: &[Infusion],
    outputs: &[f64],
    pd: &PdParams,
    model: &DiscreteModel,
) -> Vec<f64> {
    let mut x = *start;
    let mut errors = Vec::with_capacity(outputs.len());
    for (i, &y) in outputs.iter().enumerate() {
        errors.push(bis_output(&x, pd) - y);
        if let Some(u) = inputs.get(i) {
            x = model.advance(&x, u);
        }
    }
    errors
}

/// Hysteresis selection: move to the best candidate only when it beats the
/// incumbent by more than `delta`. Ties go to the lowest index.
pub fn select_model(criteria: &[f64], current: usize, delta: f64) -> usize {
    let mut best = current;
    let mut best_j = criteria[current];
    for (i, &j) in criteria.iter().enumerate() {
        if j < best_j || (j == best_j && i < best) {
            best = i;
            best_j = j;
        }
    }
    if criteria[current] - best_j > delta {
        best
    } else {
        current
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankOutput {
    pub selected: usize,
    pub theta: ThetaVector,
    /// Posterior estimate of the selected filter.
    pub estimate: StateVec,
    pub switched: bool,
}

/// Filters, their stored estimates, and the shared input/output history.
#[derive(Debug, Clone)]
pub struct ModelBank {
    grid: ModelGrid,
    selector: SelectorConfig,
    ekf: EkfConfig,
    model: DiscreteModel,
    filters: Vec<EkfState>,
    history: Vec<VecDeque<StateVec>>,
    outputs: VecDeque<f64>,
    inputs: VecDeque<Infusion>,
    pending: Option<Infusion>,
    criteria: Vec<f64>,
    selected: usize,
    steps: usize,
}

impl ModelBank {
    /// `model` is the shared (nominal PK) dynamics at the controller period.
    pub fn new(
        grid: ModelGrid,
        selector: SelectorConfig,
        ekf: EkfConfig,
        model: DiscreteModel,
    ) -> Result<Self> {
        selector.validate()?;
        ekf.validate()?;
        if grid.is_empty() {
            return Err(SimError::Config("empty model grid".into()));
        }
        let filters: Vec<EkfState> = grid
            .candidates
            .iter()
            .map(|t| EkfState::new(*t, &ekf))
            .collect();
        let n = filters.len();
        let selected = grid.nominal_index();
        Ok(ModelBank {
            grid,
            selector,
            ekf,
            model,
            filters,
            history: vec![VecDeque::with_capacity(selector.n_c + 1); n],
            outputs: VecDeque::with_capacity(selector.n_c + 1),
            inputs: VecDeque::with_capacity(selector.n_c),
            pending: None,
            criteria: vec![0.0; n],
            selected,
            steps: 0,
        })
    }

    pub fn grid(&self) -> &ModelGrid {
        &self.grid
    }

    pub fn filters(&self) -> &[EkfState] {
        &self.filters
    }

    pub fn criteria(&self) -> &[f64] {
        &self.criteria
    }

    pub fn selected(&self) -> usize {
        self.selected
    }

    /// Processes one measurement: time-updates every filter with the input
    /// committed since the last call, applies the measurement update, replays
    /// the window, scores, and selects.
    pub fn step(&mut self, y: f64) -> Result<BankOutput> {
        let n_c = self.selector.n_c;
        let pending = self.pending.take();
        for (filter, history) in self.filters.iter_mut().zip(self.history.iter_mut()) {
            if let Some(u) = &pending {
                filter.predict(u, &self.model, &self.ekf);
            }
            filter.correct(y, &self.ekf)?;
            if history.len() == n_c + 1 {
                history.pop_front();
            }
            history.push_back(filter.x_hat);
        }
        if let Some(u) = pending {
            if self.inputs.len() == n_c {
                self.inputs.pop_front();
            }
            self.inputs.push_back(u);
        }
        if self.outputs.len() == n_c + 1 {
            self.outputs.pop_front();
        }
        self.outputs.push_back(y);

        // inputs.len() == outputs.len() - 1 by construction
        let outputs: Vec<f64> = self.outputs.iter().copied().collect();
        let inputs: Vec<Infusion> = self.inputs.iter().copied().collect();
        for (i, filter) in self.filters.iter().enumerate() {
            let start = &self.history[i][0];
            let errors = replay_errors(start, &inputs, &outputs, &filter.pd, &self.model);
            self.criteria[i] = criterion(&errors, &self.selector);
        }

        let previous = self.selected;
        if self.steps >= self.selector.warmup_samples() {
            self.selected = select_model(&self.criteria, previous, self.selector.delta);
        }
        self.steps += 1;
        let active = &self.filters[self.selected];
        Ok(BankOutput {
            selected: self.selected,
            theta: active.theta(),
            estimate: active.x_hat,
            switched: self.selected != previous,
        })
    }

    /// Records the input applied from this sample to the next one.
    pub fn commit(&mut self, u: Infusion) {
        self.pending = Some(u);
    }
}
