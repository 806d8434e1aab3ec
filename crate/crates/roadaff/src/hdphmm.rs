//! Sticky HDP-HMM segmentation of angular-speed series.
//!
//! Weak-limit approximation: the Dirichlet process is truncated to L
//! components, which turns the hierarchical construction into finite
//! Dirichlet draws and lets a blocked Gibbs sampler alternate between the
//! state sequence (forward filter, backward sample) and the parameters
//! (global weights, transition rows, Gaussian emissions). The sticky bias
//! kappa is added to each row's own component, favoring self-transitions so
//! states persist over contiguous stretches of road.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::trajectory::AngularSpeedSeries;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

/// Driving actions, ordered as the label-vector classes everywhere in the
/// crate: index 0 = Left, 1 = Straight, 2 = Right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Left,
    Straight,
    Right,
}

pub const CLASSES: [Action; 3] = [Action::Left, Action::Straight, Action::Right];

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Straight => 1,
            Action::Right => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        CLASSES.get(i).copied()
    }

    /// Left and Right swap under horizontal mirroring; Straight is fixed.
    pub fn mirrored(self) -> Action {
        match self {
            Action::Left => Action::Right,
            Action::Straight => Action::Straight,
            Action::Right => Action::Left,
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Action::Left => "left",
            Action::Straight => "straight",
            Action::Right => "right",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Action> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Ok(Action::Left),
            "straight" => Ok(Action::Straight),
            "right" => Ok(Action::Right),
            other => Err(Error::InvalidLabel(format!("unknown action {other:?}"))),
        }
    }
}

/// Normal-Inverse-Gamma prior on each state's emission (mean, variance).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EmissionPrior {
    pub mean0: f64,
    /// Pseudo-count weight on mean0 (often written lambda or kappa0).
    pub precision_scale: f64,
    pub shape: f64,
    pub rate: f64,
}

impl Default for EmissionPrior {
    fn default() -> Self {
        // Centered on zero angular speed with prior variance near the
        // noise floor of measured angular speeds (rate/(shape-1) = 0.02).
        EmissionPrior {
            mean0: 0.0,
            precision_scale: 0.1,
            shape: 2.0,
            rate: 0.02,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HdpHmmConfig {
    pub truncation_l: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub emission_prior: EmissionPrior,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for HdpHmmConfig {
    fn default() -> Self {
        HdpHmmConfig {
            truncation_l: 10,
            gamma: 1.0,
            alpha: 1.0,
            kappa: 50.0,
            emission_prior: EmissionPrior::default(),
            iterations: 500,
            burn_in: 250,
            seed: 0,
        }
    }
}

impl HdpHmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.truncation_l < 3 {
            return Err(Error::InvalidConfig(format!(
                "truncation_l must be >= 3, got {}",
                self.truncation_l
            )));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn_in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.gamma > 0.0) || !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig(
                "concentrations gamma and alpha must be positive".into(),
            ));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::InvalidConfig("kappa must be nonnegative".into()));
        }
        let p = &self.emission_prior;
        if !(p.precision_scale > 0.0) || !(p.shape > 0.0) || !(p.rate > 0.0) {
            return Err(Error::InvalidConfig(
                "emission prior parameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The post-burn-in Gibbs sample with the highest joint log-likelihood.
///
/// `arc_positions` is carried over from the input series so segment
/// boundaries can be expressed in route coordinates later.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFit {
    pub beta: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub emission_means: Vec<f64>,
    pub emission_vars: Vec<f64>,
    pub state_sequence: Vec<usize>,
    /// Entry 0 is the likelihood of the initialization; entry i the
    /// likelihood after Gibbs iteration i.
    pub log_likelihood_trace: Vec<f64>,
    pub occupied_states: usize,
    pub arc_positions: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_arc: f64,
    pub end_arc: f64,
    pub action: Action,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionSequence {
    pub actions: Vec<Action>,
    pub segments: Vec<Segment>,
}

struct GibbsState {
    beta: Vec<f64>,
    // Row-major L x L transition matrix.
    pi: Vec<Vec<f64>>,
    means: Vec<f64>,
    vars: Vec<f64>,
    z: Vec<usize>,
}

pub fn fit(series: &AngularSpeedSeries, cfg: &HdpHmmConfig) -> Result<ModelFit> {
    cfg.validate()?;
    if series.len() < 10 {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            min: 10,
        });
    }
    let y = &series.values;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("angular-speed series".into()));
    }
    let l = cfg.truncation_l;
    let t_len = y.len();
    let mut rng = seeded_rng(cfg.seed);

    // Initialization: uniform random assignments, then one parameter pass.
    let mut st = GibbsState {
        beta: vec![1.0 / l as f64; l],
        pi: vec![vec![1.0 / l as f64; l]; l],
        means: vec![0.0; l],
        vars: vec![1.0; l],
        z: (0..t_len).map(|_| rng.random_range(0..l)).collect(),
    };
    resample_parameters(&mut st, y, cfg, &mut rng);

    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(joint_log_likelihood(&st, y));

    let mut best: Option<(f64, GibbsState)> = None;
    for iter in 1..=cfg.iterations {
        sample_states(&mut st, y, &mut rng);
        resample_parameters(&mut st, y, cfg, &mut rng);
        let ll = joint_log_likelihood(&st, y);
        trace.push(ll);
        if iter > cfg.burn_in && best.as_ref().map_or(true, |(b, _)| ll > *b) {
            best = Some((
                ll,
                GibbsState {
                    beta: st.beta.clone(),
                    pi: st.pi.clone(),
                    means: st.means.clone(),
                    vars: st.vars.clone(),
                    z: st.z.clone(),
                },
            ));
        }
    }
    let (_, sel) = best.expect("burn_in < iterations guarantees one kept sample");

    let mut seen = vec![false; l];
    for &s in &sel.z {
        seen[s] = true;
    }
    Ok(ModelFit {
        beta: sel.beta,
        transition: sel.pi,
        emission_means: sel.means,
        emission_vars: sel.vars,
        state_sequence: sel.z,
        log_likelihood_trace: trace,
        occupied_states: seen.iter().filter(|&&b| b).count(),
        arc_positions: series.arc_positions.clone(),
    })
}

/// Joint likelihood of the sampled path: initial weight, transitions, and
/// Gaussian emissions. Used for sample selection and the convergence trace.
fn joint_log_likelihood(st: &GibbsState, y: &[f64]) -> f64 {
    let mut ll = st.beta[st.z[0]].max(f64::MIN_POSITIVE).ln();
    for t in 1..y.len() {
        ll += st.pi[st.z[t - 1]][st.z[t]].max(f64::MIN_POSITIVE).ln();
    }
    for (t, &v) in y.iter().enumerate() {
        ll += normal_log_pdf(v, st.means[st.z[t]], st.vars[st.z[t]]);
    }
    ll
}

fn normal_log_pdf(y: f64, mean: f64, var: f64) -> f64 {
    let d = y - mean;
    -0.5 * (std::f64::consts::TAU * var).ln() - d * d / (2.0 * var)
}

/// Forward filter, backward sample. Filtering runs in the linear domain with
/// per-step normalization; emission weights are rescaled by their row max
/// first so well-separated states cannot underflow.
fn sample_states(st: &mut GibbsState, y: &[f64], rng: &mut ChaCha8Rng) {
    let l = st.beta.len();
    let t_len = y.len();

    let mut emit = vec![0.0f64; t_len * l];
    for t in 0..t_len {
        let row = &mut emit[t * l..(t + 1) * l];
        for k in 0..l {
            row[k] = normal_log_pdf(y[t], st.means[k], st.vars[k]);
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in row.iter_mut() {
            *v = (*v - m).exp();
        }
    }

    let mut alpha = vec![0.0f64; t_len * l];
    for k in 0..l {
        alpha[k] = st.beta[k] * emit[k];
    }
    normalize_in_place(&mut alpha[0..l]);
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * l);
        let prev = &prev[(t - 1) * l..];
        let cur = &mut cur[..l];
        for k in 0..l {
            let mut flow = 0.0;
            for j in 0..l {
                flow += prev[j] * st.pi[j][k];
            }
            cur[k] = flow * emit[t * l + k];
        }
        normalize_in_place(cur);
    }

    let mut weights = vec![0.0f64; l];
    st.z[t_len - 1] = sample_categorical(&alpha[(t_len - 1) * l..], rng);
    for t in (0..t_len - 1).rev() {
        let next = st.z[t + 1];
        for k in 0..l {
            weights[k] = alpha[t * l + k] * st.pi[k][next];
        }
        st.z[t] = sample_categorical(&weights, rng);
    }
}

fn normalize_in_place(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for x in v.iter_mut() {
            *x /= s;
        }
    } else {
        let u = 1.0 / v.len() as f64;
        for x in v.iter_mut() {
            *x = u;
        }
    }
}

fn sample_categorical(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return rng.random_range(0..weights.len());
    }
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Steps (2)-(4) of the blocked sweep: auxiliary table counts with the
/// sticky override correction, then beta, transition rows, and emissions.
fn resample_parameters(st: &mut GibbsState, y: &[f64], cfg: &HdpHmmConfig, rng: &mut ChaCha8Rng) {
    let l = st.beta.len();

    // Transition counts n[j][k] from the current path.
    let mut n = vec![vec![0usize; l]; l];
    for w in st.z.windows(2) {
        n[w[0]][w[1]] += 1;
    }

    // Table counts: m[j][k] = number of "tables" behind the n[j][k]
    // transitions under the Chinese-restaurant construction.
    let mut m = vec![vec![0usize; l]; l];
    for j in 0..l {
        for k in 0..l {
            let base = cfg.alpha * st.beta[k] + if j == k { cfg.kappa } else { 0.0 };
            let mut count = 0usize;
            for i in 0..n[j][k] {
                let p = base / (i as f64 + base);
                if rng.random::<f64>() < p {
                    count += 1;
                }
            }
            m[j][k] = count;
        }
    }

    // Sticky override: some self-transition tables are due to kappa, not
    // the shared weights, and must not inflate beta.
    if cfg.kappa > 0.0 {
        let rho = cfg.kappa / (cfg.alpha + cfg.kappa);
        for j in 0..l {
            let p = rho / (rho + st.beta[j] * (1.0 - rho));
            let mut overrides = 0usize;
            for _ in 0..m[j][j] {
                if rng.random::<f64>() < p {
                    overrides += 1;
                }
            }
            m[j][j] -= overrides;
        }
    }

    // beta ~ Dir(gamma/L + column sums of corrected table counts).
    let mut conc: Vec<f64> = (0..l)
        .map(|k| {
            let col: usize = (0..l).map(|j| m[j][k]).sum();
            cfg.gamma / l as f64 + col as f64
        })
        .collect();
    st.beta = sample_dirichlet(&conc, rng);

    // Transition rows ~ Dir(alpha * beta + kappa * e_j + counts).
    for j in 0..l {
        for k in 0..l {
            conc[k] =
                cfg.alpha * st.beta[k] + if j == k { cfg.kappa } else { 0.0 } + n[j][k] as f64;
        }
        st.pi[j] = sample_dirichlet(&conc, rng);
    }

    // Emissions from the Normal-Inverse-Gamma posterior per state;
    // unoccupied states resample from the prior and stay available.
    let p = &cfg.emission_prior;
    for k in 0..l {
        let assigned: Vec<f64> = y
            .iter()
            .zip(&st.z)
            .filter(|(_, &s)| s == k)
            .map(|(&v, _)| v)
            .collect();
        let n_k = assigned.len() as f64;
        let (lambda_n, mu_n, a_n, b_n) = if assigned.is_empty() {
            (p.precision_scale, p.mean0, p.shape, p.rate)
        } else {
            let mean = assigned.iter().sum::<f64>() / n_k;
            let ss: f64 = assigned.iter().map(|v| (v - mean).powi(2)).sum();
            let lambda_n = p.precision_scale + n_k;
            let mu_n = (p.precision_scale * p.mean0 + n_k * mean) / lambda_n;
            let a_n = p.shape + n_k / 2.0;
            let b_n = p.rate
                + 0.5 * ss
                + 0.5 * p.precision_scale * n_k * (mean - p.mean0).powi(2) / lambda_n;
            (lambda_n, mu_n, a_n, b_n)
        };
        let precision = Gamma::new(a_n, 1.0 / b_n)
            .expect("posterior shape and scale are positive")
            .sample(rng);
        let var = (1.0 / precision).max(1e-12);
        let std = (var / lambda_n).sqrt();
        let normal: f64 = rng.sample(rand_distr::StandardNormal);
        st.vars[k] = var;
        st.means[k] = mu_n + std * normal;
    }
}

fn sample_dirichlet(concentration: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut draws: Vec<f64> = concentration
        .iter()
        .map(|&c| {
            // Tiny concentrations underflow the gamma sampler to 0.0,
            // which normalization tolerates as long as one draw survives.
            let shape = c.max(1e-12);
            Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
        })
        .collect();
    normalize_in_place(&mut draws);
    draws
}

pub fn decode(fit: &ModelFit) -> Vec<usize> {
    fit.state_sequence.clone()
}

/// Map each occupied state to a driving action by its emission mean:
/// inside the band is Straight, above is Left, below is Right (positive
/// angular speed is counter-clockwise).
pub fn semantic_relabel(fit: &ModelFit, straight_band: f64) -> ActionSequence {
    let label = |state: usize| -> Action {
        let m = fit.emission_means[state];
        if m > straight_band {
            Action::Left
        } else if m < -straight_band {
            Action::Right
        } else {
            Action::Straight
        }
    };
    let actions: Vec<Action> = fit.state_sequence.iter().map(|&s| label(s)).collect();

    let mut segments: Vec<Segment> = Vec::new();
    let mut start_idx = 0;
    for i in 1..=actions.len() {
        if i == actions.len() || actions[i] != actions[start_idx] {
            // Segments partition the series: each ends where the next begins.
            let end_arc = if i == actions.len() {
                fit.arc_positions[i - 1]
            } else {
                fit.arc_positions[i]
            };
            segments.push(Segment {
                start_arc: fit.arc_positions[start_idx],
                end_arc,
                action: actions[start_idx],
            });
            start_idx = i;
        }
    }
    ActionSequence { actions, segments }
}
