//! Gaussian-emission hidden Markov model over per-frame feature vectors.
//!
//! Emissions are diagonal-covariance Gaussians (dimension 1 is the scalar
//! case). The initial state distribution is always the stationary
//! distribution of the transition matrix. All recursions run in the log domain.

use crate::error::{Error, Result};

pub const VAR_MIN: f64 = 1e-8;
pub const DEFAULT_STATES: usize = 2;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Emission {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Self {
        assert_eq!(mean.len(), var.len(), "mean/variance dimension mismatch");
        let var = var.into_iter().map(|v| v.max(VAR_MIN)).collect();
        Emission { mean, var }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, y: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.var)
            .zip(y)
            .map(|((m, v), x)| {
                let d = x - m;
                -0.5 * (LN_2PI + v.ln() + d * d / v)
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    /// Row-stochastic `n × n` matrix, `transition[i][j] = P(X_{t+1} = j | X_t = i)`.
    pub transition: Vec<Vec<f64>>,
    pub emissions: Vec<Emission>,
    pub initial: Vec<f64>,
}

impl HmmModel {
    /// Builds a model whose initial distribution is the stationary
    /// distribution of `transition`, falling back to uniform when that is not
    /// unique.
    pub fn new(transition: Vec<Vec<f64>>, emissions: Vec<Emission>) -> Result<Self> {
        let n = transition.len();
        if n == 0 || emissions.len() != n {
            return Err(Error::invalid(
                "transition matrix and emissions disagree on state count",
            ));
        }
        let dim = emissions[0].dim();
        if emissions.iter().any(|e| e.dim() != dim) {
            return Err(Error::invalid("emissions have differing dimensions"));
        }
        check_stochastic(&transition)?;
        let initial = stationary_or_uniform(&transition);
        Ok(HmmModel {
            transition,
            emissions,
            initial,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transition.len()
    }

    pub fn dim(&self) -> usize {
        self.emissions[0].dim()
    }

    fn log_transition(&self) -> Vec<Vec<f64>> {
        self.transition
            .iter()
            .map(|row| row.iter().map(|p| p.ln()).collect())
            .collect()
    }

    fn log_emissions(&self, obs: &ObservationSequence) -> Vec<Vec<f64>> {
        obs.vectors
            .iter()
            .map(|y| self.emissions.iter().map(|e| e.log_density(y)).collect())
            .collect()
    }
}

fn check_stochastic(p: &[Vec<f64>]) -> Result<()> {
    let n = p.len();
    for row in p {
        if row.len() != n {
            return Err(Error::invalid("transition matrix is not square"));
        }
        if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("transition matrix has negative or non-finite entries"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("transition row sums to {sum}")));
        }
    }
    Ok(())
}

/// Per-time feature vectors of a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence {
    pub vectors: Vec<Vec<f64>>,
}

impl ObservationSequence {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::invalid("observation sequence is empty"));
        };
        let d = first.len();
        if d == 0 || vectors.iter().any(|v| v.len() != d) {
            return Err(Error::invalid("observation vectors must share a nonzero dimension"));
        }
        if vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("observations must be finite"));
        }
        Ok(ObservationSequence { vectors })
    }

    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }
}

fn check_dims(model: &HmmModel, obs: &ObservationSequence) {
    assert_eq!(model.dim(), obs.dim(), "observation dimension does not match the model");
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Solves `π P = π`, `Σ π = 1` directly.
///
/// Replacing one equation of `(Pᵀ − I) π = 0` with the normalization gives a
/// square system that is nonsingular exactly when the stationary distribution
/// is unique.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_stochastic(p)?;
    let n = p.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = p[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[n - 1][j] = 1.0;
    }
    a[n - 1][n] = 1.0;

    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::NonUniqueStationary);
        }
        a.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..=n {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * pi[k]).sum();
        pi[row] = (a[row][n] - s) / a[row][row];
    }
    for v in &mut pi {
        *v = v.max(0.0);
    }
    let total: f64 = pi.iter().sum();
    Ok(pi.into_iter().map(|v| v / total).collect())
}

fn stationary_or_uniform(p: &[Vec<f64>]) -> Vec<f64> {
    stationary_distribution(p).unwrap_or_else(|_| vec![1.0 / p.len() as f64; p.len()])
}

/// Log-domain forward table: `log_alpha[t][i] = ln P(X_t = i, y_1..y_t)`.
#[derive(Debug, Clone)]
pub struct Forward {
    pub log_alpha: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

pub fn forward(model: &HmmModel, obs: &ObservationSequence) -> Forward {
    check_dims(model, obs);
    forward_with(model, &model.log_transition(), &model.log_emissions(obs))
}

fn forward_with(model: &HmmModel, log_p: &[Vec<f64>], log_b: &[Vec<f64>]) -> Forward {
    let n = model.n_states();
    let mut log_alpha: Vec<Vec<f64>> = Vec::with_capacity(log_b.len());
    log_alpha.push((0..n).map(|i| model.initial[i].ln() + log_b[0][i]).collect());
    for b in &log_b[1..] {
        let prev = log_alpha.last().unwrap();
        let next = (0..n)
            .map(|j| log_sum_exp((0..n).map(|i| prev[i] + log_p[i][j])) + b[j])
            .collect();
        log_alpha.push(next);
    }
    let log_likelihood = log_sum_exp(log_alpha.last().unwrap().iter().copied());
    Forward {
        log_alpha,
        log_likelihood,
    }
}

/// Log-domain backward table: `log_beta[t][i] = ln P(y_{t+1}..y_T | X_t = i)`.
pub fn backward(model: &HmmModel, obs: &ObservationSequence) -> Vec<Vec<f64>> {
    check_dims(model, obs);
    backward_with(model.n_states(), &model.log_transition(), &model.log_emissions(obs))
}

fn backward_with(n: usize, log_p: &[Vec<f64>], log_b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t_len = log_b.len();
    let mut log_beta = vec![vec![0.0; n]; t_len];
    for t in (0..t_len - 1).rev() {
        for i in 0..n {
            log_beta[t][i] = log_sum_exp((0..n).map(|j| log_p[i][j] + log_b[t + 1][j] + log_beta[t + 1][j]));
        }
    }
    log_beta
}

/// State posteriors `γ_t(i) ∝ α_t(i) β_t(i)`, each row normalized.
pub fn posterior(log_alpha: &[Vec<f64>], log_beta: &[Vec<f64>]) -> Vec<Vec<f64>> {
    log_alpha
        .iter()
        .zip(log_beta)
        .map(|(a, b)| {
            let joint: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
            let norm = log_sum_exp(joint.iter().copied());
            joint.iter().map(|v| (v - norm).exp()).collect()
        })
        .collect()
}

/// Most probable state path; ties go to the lower state index.
pub fn viterbi(model: &HmmModel, obs: &ObservationSequence) -> Vec<usize> {
    check_dims(model, obs);
    let n = model.n_states();
    let log_p = model.log_transition();
    let log_b = model.log_emissions(obs);
    let t_len = obs.len();
    let mut delta: Vec<f64> = (0..n).map(|i| model.initial[i].ln() + log_b[0][i]).collect();
    let mut back = vec![vec![0usize; n]; t_len];
    for t in 1..t_len {
        let mut next = vec![f64::NEG_INFINITY; n];
        for j in 0..n {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (i, d) in delta.iter().enumerate() {
                let score = d + log_p[i][j];
                if score > best_score {
                    best_score = score;
                    best = i;
                }
            }
            back[t][j] = best;
            next[j] = best_score + log_b[t][j];
        }
        delta = next;
    }
    let mut state = 0;
    for i in 1..n {
        if delta[i] > delta[state] {
            state = i;
        }
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = state;
    for t in (1..t_len).rev() {
        state = back[t][state];
        path[t - 1] = state;
    }
    path
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaumWelchSettings {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for BaumWelchSettings {
    fn default() -> Self {
        BaumWelchSettings {
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaumWelchFit {
    pub model: HmmModel,
    /// Log-likelihood of the seed and of every accepted iterate.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// EM re-estimation of transitions and emissions.
///
/// After each M-step the initial distribution is reset to the stationary
/// distribution of the new transition matrix. Because that coupling is not
/// part of the standard M-step, a transition update that would lower the
/// likelihood is pulled back toward the previous matrix by halving.
pub fn baum_welch(obs: &ObservationSequence, seed: &HmmModel, settings: &BaumWelchSettings) -> Result<BaumWelchFit> {
    let n = seed.n_states();
    if obs.len() < n {
        return Err(Error::TooFewObservations {
            frames: obs.len(),
            states: n,
        });
    }
    check_dims(seed, obs);
    let mut model = seed.clone();
    let mut log_b = model.log_emissions(obs);
    let mut log_p = model.log_transition();
    let mut fwd = forward_with(&model, &log_p, &log_b);
    let mut trace = vec![fwd.log_likelihood];
    let mut iterations = 0;

    while iterations < settings.max_iters {
        iterations += 1;
        let log_beta = backward_with(n, &log_p, &log_b);
        let (new_p, emissions) = m_step(&model, obs, &fwd, &log_beta, &log_p, &log_b);

        let mut accepted = None;
        let mut step = 1.0;
        for attempt in 0..=21 {
            if attempt == 21 {
                step = 0.0;
            }
            let p: Vec<Vec<f64>> = model
                .transition
                .iter()
                .zip(&new_p)
                .map(|(old, new)| normalize_row(old.iter().zip(new).map(|(a, b)| a + step * (b - a)).collect()))
                .collect();
            let candidate = HmmModel {
                initial: stationary_or_uniform(&p),
                transition: p,
                emissions: emissions.clone(),
            };
            let cand_b = candidate.log_emissions(obs);
            let cand_p = candidate.log_transition();
            let cand_fwd = forward_with(&candidate, &cand_p, &cand_b);
            if cand_fwd.log_likelihood >= fwd.log_likelihood {
                accepted = Some((candidate, cand_b, cand_p, cand_fwd));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_b, next_p, next_fwd)) = accepted else {
            break;
        };
        let previous = fwd.log_likelihood;
        model = next;
        log_b = next_b;
        log_p = next_p;
        fwd = next_fwd;
        trace.push(fwd.log_likelihood);
        if (fwd.log_likelihood - previous) <= settings.tol * previous.abs().max(1e-300) {
            break;
        }
    }
    Ok(BaumWelchFit {
        model,
        trace,
        iterations,
    })
}

fn normalize_row(row: Vec<f64>) -> Vec<f64> {
    let s: f64 = row.iter().sum();
    row.into_iter().map(|v| v / s).collect()
}

fn m_step(
    model: &HmmModel,
    obs: &ObservationSequence,
    fwd: &Forward,
    log_beta: &[Vec<f64>],
    log_p: &[Vec<f64>],
    log_b: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Emission>) {
    let n = model.n_states();
    let d = obs.dim();
    let ll = fwd.log_likelihood;
    let gamma = posterior(&fwd.log_alpha, log_beta);

    let mut xi = vec![vec![0.0; n]; n];
    for t in 0..obs.len() - 1 {
        for i in 0..n {
            for j in 0..n {
                xi[i][j] += (fwd.log_alpha[t][i] + log_p[i][j] + log_b[t + 1][j] + log_beta[t + 1][j] - ll).exp();
            }
        }
    }
    let transition = xi
        .into_iter()
        .zip(&model.transition)
        .map(|(row, old)| {
            let s: f64 = row.iter().sum();
            if s > 0.0 && s.is_finite() {
                row.into_iter().map(|v| v / s).collect()
            } else {
                old.clone()
            }
        })
        .collect();

    let emissions = (0..n)
        .map(|i| {
            let weight: f64 = gamma.iter().map(|g| g[i]).sum();
            if !(weight > 0.0) {
                return model.emissions[i].clone();
            }
            let mut mean = vec![0.0; d];
            for (g, y) in gamma.iter().zip(&obs.vectors) {
                for (m, x) in mean.iter_mut().zip(y) {
                    *m += g[i] * x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= weight);
            let mut var = vec![0.0; d];
            for (g, y) in gamma.iter().zip(&obs.vectors) {
                for ((v, x), m) in var.iter_mut().zip(y).zip(&mean) {
                    *v += g[i] * (x - m) * (x - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= weight);
            Emission::new(mean, var)
        })
        .collect();
    (transition, emissions)
}

/// Seed for [`baum_welch`]: frames sorted by their first feature (energy) and
/// split into `n` equal groups, per-group mean/variance as emissions,
/// 0.9 self-transition probability.
pub fn seed_model(obs: &ObservationSequence, n: usize) -> Result<HmmModel> {
    let t_len = obs.len();
    if n == 0 {
        return Err(Error::invalid("need at least one state"));
    }
    if t_len < n {
        return Err(Error::TooFewObservations {
            frames: t_len,
            states: n,
        });
    }
    let mut order: Vec<usize> = (0..t_len).collect();
    order.sort_by(|&a, &b| obs.vectors[a][0].total_cmp(&obs.vectors[b][0]).then(a.cmp(&b)));
    let d = obs.dim();
    let emissions = (0..n)
        .map(|g| {
            let members = &order[g * t_len / n..(g + 1) * t_len / n];
            let count = members.len() as f64;
            let mean: Vec<f64> = (0..d)
                .map(|k| members.iter().map(|&t| obs.vectors[t][k]).sum::<f64>() / count)
                .collect();
            let var: Vec<f64> = (0..d)
                .map(|k| {
                    members
                        .iter()
                        .map(|&t| (obs.vectors[t][k] - mean[k]).powi(2))
                        .sum::<f64>()
                        / count
                })
                .collect();
            Emission::new(mean, var)
        })
        .collect();
    let transition = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| match (n, i == j) {
                    (1, _) => 1.0,
                    (_, true) => 0.9,
                    (_, false) => 0.1 / (n - 1) as f64,
                })
                .collect()
        })
        .collect();
    HmmModel::new(transition, emissions)
}

/// Output of [`reduce_restore`].
#[derive(Debug, Clone)]
pub struct Reduction {
    pub path: Vec<usize>,
    pub model: HmmModel,
    /// Each frame replaced by the emission mean of its decoded state.
    pub restored: ObservationSequence,
}

/// Quantizes a feature sequence to `n` state means: seed, fit, decode, restore.
pub fn reduce_restore(obs: &ObservationSequence, n: usize) -> Result<Reduction> {
    let seed = seed_model(obs, n)?;
    let fit = baum_welch(obs, &seed, &BaumWelchSettings::default())?;
    let path = viterbi(&fit.model, obs);
    let restored = ObservationSequence {
        vectors: path.iter().map(|&s| fit.model.emissions[s].mean.clone()).collect(),
    };
    Ok(Reduction {
        path,
        model: fit.model,
        restored,
    })
}
