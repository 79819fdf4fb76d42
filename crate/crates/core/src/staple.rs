//! STAPLE: expectation-maximization fusion of binary segmentations.
//!
//! Each rater `j` has a sensitivity `p_j` and specificity `q_j`. The E-step
//! computes the posterior foreground probability `W_i` of every voxel given
//! the current parameters; the M-step re-estimates the parameters from the
//! posteriors. Products over raters are accumulated in log space and all
//! parameters are kept in `[1e-7, 1 - 1e-7]`.
//!
//! The first posterior is the raw vote fraction, so iteration 1 is an M-step
//! on the majority-vote estimate. Iteration `k` then runs: M-step, convergence
//! check against iteration `k - 1`, E-step. The reported consensus is always
//! the E-step of the final parameters.

use crate::error::{Error, Result};
use crate::volume::{Geometry, Mask, ValueKind, Volume};

pub const PROBABILITY_FLOOR: f64 = 1e-7;
pub const PROBABILITY_CEIL: f64 = 1.0 - 1e-7;

/// Candidate segmentations of the same grid.
#[derive(Clone, Debug)]
pub struct RaterStack {
    masks: Vec<Mask>,
    names: Vec<String>,
}

impl RaterStack {
    pub fn new(masks: Vec<Mask>, names: Vec<String>) -> Result<Self> {
        if masks.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "STAPLE needs at least 2 raters, got {}",
                masks.len()
            )));
        }
        if names.len() != masks.len() {
            return Err(Error::InvalidParameter(format!(
                "{} rater names for {} masks",
                names.len(),
                masks.len()
            )));
        }
        let first = *masks[0].geometry();
        for m in &masks[1..] {
            first.check_same(m.geometry())?;
        }
        Ok(Self { masks, names })
    }

    /// Names raters `rater0`, `rater1`, ...
    pub fn unnamed(masks: Vec<Mask>) -> Result<Self> {
        let names = (0..masks.len()).map(|j| format!("rater{j}")).collect();
        Self::new(masks, names)
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn geometry(&self) -> &Geometry {
        self.masks[0].geometry()
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Mean foreground fraction over all raters.
    pub fn mean_foreground_fraction(&self) -> f64 {
        let total: usize = self.masks.iter().map(Mask::count).sum();
        total as f64 / (self.masks.len() * self.geometry().len()) as f64
    }
}

/// Prior probability of foreground.
#[derive(Clone, Debug)]
pub enum Prior {
    /// Spatially uniform, equal to the mean rater foreground fraction.
    MeanFraction,
    Uniform(f64),
    PerVoxel(Volume),
}

#[derive(Clone, Debug)]
pub struct StapleOptions {
    pub prior: Prior,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for StapleOptions {
    fn default() -> Self {
        Self {
            prior: Prior::MeanFraction,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StapleResult {
    pub consensus_prob: Volume,
    pub consensus_mask: Mask,
    pub sensitivities: Vec<f64>,
    pub specificities: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Observed-data log-likelihood of the parameters at each iteration.
    pub log_likelihood: Vec<f64>,
}

fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROBABILITY_FLOOR, PROBABILITY_CEIL)
}

struct Params {
    p: Vec<f64>,
    q: Vec<f64>,
}

/// Per-voxel prior values, validated into (0, 1).
fn resolve_prior(stack: &RaterStack, prior: &Prior) -> Result<Vec<f64>> {
    let n = stack.geometry().len();
    let check = |v: f64| -> Result<f64> {
        if v > 0.0 && v < 1.0 {
            Ok(v)
        } else {
            Err(Error::InvalidParameter(format!("STAPLE prior must lie in (0, 1), got {v}")))
        }
    };
    match prior {
        Prior::MeanFraction => Ok(vec![check(stack.mean_foreground_fraction())?; n]),
        Prior::Uniform(v) => Ok(vec![check(*v)?; n]),
        Prior::PerVoxel(volume) => {
            stack.geometry().check_shape(volume.geometry())?;
            volume.data().iter().map(|&v| check(v)).collect()
        }
    }
}

/// Log of the foreground and background likelihood terms at every voxel.
fn log_terms(stack: &RaterStack, prior: &[f64], params: &Params) -> (Vec<f64>, Vec<f64>) {
    let mut log_a: Vec<f64> = prior.iter().map(|&pi| pi.ln()).collect();
    let mut log_b: Vec<f64> = prior.iter().map(|&pi| (1.0 - pi).ln()).collect();
    for (j, mask) in stack.masks().iter().enumerate() {
        let (lp, l1p) = (params.p[j].ln(), (1.0 - params.p[j]).ln());
        let (lq, l1q) = (params.q[j].ln(), (1.0 - params.q[j]).ln());
        for ((a, b), &d) in log_a.iter_mut().zip(log_b.iter_mut()).zip(mask.data()) {
            if d {
                *a += lp;
                *b += l1q;
            } else {
                *a += l1p;
                *b += lq;
            }
        }
    }
    (log_a, log_b)
}

/// Posterior foreground probabilities and the observed-data log-likelihood.
fn e_step(stack: &RaterStack, prior: &[f64], params: &Params) -> (Vec<f64>, f64) {
    let (log_a, log_b) = log_terms(stack, prior, params);
    let mut log_likelihood = 0.0;
    let posterior = log_a
        .iter()
        .zip(&log_b)
        .map(|(&la, &lb)| {
            let hi = la.max(lb);
            log_likelihood += hi + ((la - hi).exp() + (lb - hi).exp()).ln();
            1.0 / (1.0 + (lb - la).exp())
        })
        .collect();
    (posterior, log_likelihood)
}

fn m_step(stack: &RaterStack, posterior: &[f64], previous: Option<&Params>) -> Params {
    let fg_mass: f64 = posterior.iter().sum();
    let bg_mass: f64 = posterior.iter().map(|w| 1.0 - w).sum();
    let mut p = Vec::with_capacity(stack.len());
    let mut q = Vec::with_capacity(stack.len());
    for (j, mask) in stack.masks().iter().enumerate() {
        let mut hit = 0.0;
        let mut reject = 0.0;
        for (&w, &d) in posterior.iter().zip(mask.data()) {
            if d {
                hit += w;
            } else {
                reject += 1.0 - w;
            }
        }
        // With no posterior mass on one side the estimate is undefined;
        // keep the previous value.
        let pj = if fg_mass > 0.0 {
            hit / fg_mass
        } else {
            previous.map_or(PROBABILITY_CEIL, |prev| prev.p[j])
        };
        let qj = if bg_mass > 0.0 {
            reject / bg_mass
        } else {
            previous.map_or(PROBABILITY_CEIL, |prev| prev.q[j])
        };
        p.push(clamp_probability(pj));
        q.push(clamp_probability(qj));
    }
    Params { p, q }
}

fn max_change(a: &Params, b: &Params) -> f64 {
    a.p.iter()
        .zip(&b.p)
        .chain(a.q.iter().zip(&b.q))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Fuses the rater masks into a probabilistic consensus.
pub fn staple_fuse(stack: &RaterStack, options: &StapleOptions) -> Result<StapleResult> {
    if options.max_iters < 1 {
        return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
    }
    if !(options.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be > 0, got {}", options.tol)));
    }
    let prior = resolve_prior(stack, &options.prior)?;
    let n = stack.geometry().len();
    let raters = stack.len() as f64;

    let mut posterior = vec![0.0; n];
    for mask in stack.masks() {
        for (w, &d) in posterior.iter_mut().zip(mask.data()) {
            if d {
                *w += 1.0;
            }
        }
    }
    posterior.iter_mut().for_each(|w| *w /= raters);

    let mut params: Option<Params> = None;
    let mut log_likelihood = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=options.max_iters {
        iterations = k;
        let next = m_step(stack, &posterior, params.as_ref());
        let settled = params
            .as_ref()
            .is_some_and(|prev| max_change(prev, &next) < options.tol);
        let (w, ll) = e_step(stack, &prior, &next);
        posterior = w;
        log_likelihood.push(ll);
        params = Some(next);
        if settled {
            converged = true;
            break;
        }
    }
    let params = params.expect("at least one iteration");
    log::debug!(
        "staple: {iterations} iterations, converged = {converged}, log-likelihood = {:?}",
        log_likelihood.last()
    );

    let consensus_prob = Volume::new(
        posterior.iter().map(|w| w.clamp(0.0, 1.0)).collect(),
        *stack.geometry(),
        ValueKind::Probability,
    )?
    .with_orientation(stack.masks()[0].orientation().cloned());
    let consensus_mask = Mask::new(posterior.iter().map(|&w| w >= 0.5).collect(), *stack.geometry())?
        .with_orientation(stack.masks()[0].orientation().cloned());

    Ok(StapleResult {
        consensus_prob,
        consensus_mask,
        sensitivities: params.p,
        specificities: params.q,
        iterations,
        converged,
        log_likelihood,
    })
}
