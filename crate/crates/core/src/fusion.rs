//! Algebra of discrete action distributions.
//!
//! Everything here is a pure function of its inputs. A [`FusionEnsemble`]
//! bundles a main policy with sub-policies and evaluates them at an
//! observation before handing the distributions to the operators below.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the total mass of a distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("action distribution needs at least 2 actions, got {0}")]
    TooFewActions(usize),
    #[error("probability {value} at index {index} is negative or not finite")]
    InvalidProbability { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("no active sub-policy")]
    NoActiveSubPolicy,
    #[error("product of member distributions is zero everywhere")]
    AllZeroProduct,
    #[error("action-set mismatch: expected {expected} actions, got {actual}")]
    CardinalityMismatch { expected: usize, actual: usize },
    #[error("active mask has length {mask}, but there are {subs} sub-policies")]
    MaskLength { mask: usize, subs: usize },
    #[error("epsilon must be finite")]
    NonFiniteEpsilon,
}

/// Probability vector over a discrete action set.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ActionDistribution(Vec<f64>);

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, FusionError> {
        if probs.len() < 2 {
            return Err(FusionError::TooFewActions(probs.len()));
        }
        for (index, &value) in probs.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(FusionError::InvalidProbability { index, value });
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(FusionError::NotNormalized(total));
        }
        Ok(Self(probs))
    }

    /// Normalizes non-negative weights. Fails if they are all zero.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, FusionError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(FusionError::NotNormalized(total));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self, FusionError> {
        if n < 2 {
            return Err(FusionError::TooFewActions(n));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn one_hot(n: usize, index: usize) -> Result<Self, FusionError> {
        if n < 2 {
            return Err(FusionError::TooFewActions(n));
        }
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Ok(Self(probs))
    }

    /// Softmax of a logit vector, shifted by the max logit.
    pub fn softmax(logits: &[f64]) -> Result<Self, FusionError> {
        if logits.len() < 2 {
            return Err(FusionError::TooFewActions(logits.len()));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self::new(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prob(&self, action: usize) -> f64 {
        self.0[action]
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl fmt::Debug for ActionDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl TryFrom<Vec<f64>> for ActionDistribution {
    type Error = FusionError;

    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ActionDistribution> for Vec<f64> {
    fn from(value: ActionDistribution) -> Self {
        value.0
    }
}

/// Shannon entropy divided by `ln |A|`, so it lies in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct NormalizedEntropy(f64);

impl NormalizedEntropy {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `-Σ p ln p / ln |A|` with `0 ln 0 = 0`.
pub fn normalized_entropy(d: &ActionDistribution) -> NormalizedEntropy {
    let raw: f64 = d
        .probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    let value = raw / (d.len() as f64).ln();
    NormalizedEntropy(value.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionMethod {
    #[serde(rename = "MP", alias = "mixture")]
    Mixture,
    #[serde(rename = "PP", alias = "product")]
    Product,
    #[serde(rename = "ET", alias = "entropy-threshold")]
    EntropyThreshold,
    #[serde(rename = "EW", alias = "entropy-weighted")]
    EntropyWeighted,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 4] = [
        FusionMethod::Mixture,
        FusionMethod::Product,
        FusionMethod::EntropyThreshold,
        FusionMethod::EntropyWeighted,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            FusionMethod::Mixture => "MP",
            FusionMethod::Product => "PP",
            FusionMethod::EntropyThreshold => "ET",
            FusionMethod::EntropyWeighted => "EW",
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl std::str::FromStr for FusionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MP" | "MIXTURE" => Ok(FusionMethod::Mixture),
            "PP" | "PRODUCT" => Ok(FusionMethod::Product),
            "ET" | "ENTROPY-THRESHOLD" => Ok(FusionMethod::EntropyThreshold),
            "EW" | "ENTROPY-WEIGHTED" => Ok(FusionMethod::EntropyWeighted),
            other => Err(format!("unknown fusion method `{other}`")),
        }
    }
}

/// Distributions of every ensemble member at one observation.
#[derive(Debug, Clone, Copy)]
pub struct Members<'a> {
    pub main: &'a ActionDistribution,
    pub subs: &'a [ActionDistribution],
    pub active: &'a [bool],
}

impl<'a> Members<'a> {
    pub fn new(
        main: &'a ActionDistribution,
        subs: &'a [ActionDistribution],
        active: &'a [bool],
    ) -> Result<Self, FusionError> {
        if active.len() != subs.len() {
            return Err(FusionError::MaskLength {
                mask: active.len(),
                subs: subs.len(),
            });
        }
        for sub in subs {
            if sub.len() != main.len() {
                return Err(FusionError::CardinalityMismatch {
                    expected: main.len(),
                    actual: sub.len(),
                });
            }
        }
        Ok(Self { main, subs, active })
    }

    fn active_subs(&self) -> impl Iterator<Item = (usize, &'a ActionDistribution)> + '_ {
        self.subs
            .iter()
            .enumerate()
            .filter(|(i, _)| self.active[*i])
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Index of the active sub-policy with the lowest normalized entropy.
/// Ties go to the lowest index.
pub fn min_entropy_index(members: &Members<'_>) -> Result<(usize, NormalizedEntropy), FusionError> {
    let mut best: Option<(usize, NormalizedEntropy)> = None;
    for (i, d) in members.active_subs() {
        let h = normalized_entropy(d);
        match best {
            Some((_, bh)) if h.0 >= bh.0 => {}
            _ => best = Some((i, h)),
        }
    }
    best.ok_or(FusionError::NoActiveSubPolicy)
}

pub fn fuse_mixture(members: &Members<'_>) -> Result<ActionDistribution, FusionError> {
    let k = members.active_count();
    if k == 0 {
        return Err(FusionError::NoActiveSubPolicy);
    }
    let mut acc = members.main.probs().to_vec();
    for (_, d) in members.active_subs() {
        for (a, p) in acc.iter_mut().zip(d.probs()) {
            *a += p;
        }
    }
    let scale = 1.0 / (k + 1) as f64;
    Ok(ActionDistribution(acc.into_iter().map(|v| v * scale).collect()))
}

/// Normalized elementwise product, accumulated in log space so that long
/// products of small probabilities do not underflow.
pub fn fuse_product(members: &Members<'_>) -> Result<ActionDistribution, FusionError> {
    if members.active_count() == 0 {
        return Err(FusionError::NoActiveSubPolicy);
    }
    let mut log_mass: Vec<f64> = members.main.probs().iter().map(|p| p.ln()).collect();
    for (_, d) in members.active_subs() {
        for (l, p) in log_mass.iter_mut().zip(d.probs()) {
            *l += p.ln();
        }
    }
    let max = log_mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(FusionError::AllZeroProduct);
    }
    let weights: Vec<f64> = log_mass.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(ActionDistribution(weights.into_iter().map(|w| w / z).collect()))
}

/// Which member an entropy-threshold decision selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selected {
    Main,
    Sub(usize),
}

pub fn entropy_threshold_choice(
    members: &Members<'_>,
    epsilon: f64,
) -> Result<Selected, FusionError> {
    if !epsilon.is_finite() {
        return Err(FusionError::NonFiniteEpsilon);
    }
    let (k, hk) = min_entropy_index(members)?;
    let h0 = normalized_entropy(members.main);
    if hk.0 < h0.0 + epsilon {
        Ok(Selected::Sub(k))
    } else {
        Ok(Selected::Main)
    }
}

pub fn fuse_entropy_threshold(
    members: &Members<'_>,
    epsilon: f64,
) -> Result<ActionDistribution, FusionError> {
    Ok(match entropy_threshold_choice(members, epsilon)? {
        Selected::Sub(k) => members.subs[k].clone(),
        Selected::Main => members.main.clone(),
    })
}

pub fn fuse_entropy_weighted(members: &Members<'_>) -> Result<ActionDistribution, FusionError> {
    let (k, hk) = min_entropy_index(members)?;
    let w_main = hk.0;
    let w_sub = 1.0 - w_main;
    let probs = members
        .main
        .probs()
        .iter()
        .zip(members.subs[k].probs())
        .map(|(p0, pk)| w_main * p0 + w_sub * pk)
        .collect();
    Ok(ActionDistribution(probs))
}

/// Result of one fusion evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub distribution: ActionDistribution,
    /// Minimum-entropy active sub-policy, when any sub is active.
    pub k_star: Option<(usize, NormalizedEntropy)>,
    /// The product was undefined and the main policy was used instead.
    pub fell_back: bool,
}

/// Dispatches on `method`. With no active sub-policy the main policy is
/// returned unchanged; a zero product falls back to the main policy.
pub fn fuse(
    method: FusionMethod,
    epsilon: f64,
    members: &Members<'_>,
) -> Result<Fused, FusionError> {
    if !epsilon.is_finite() {
        return Err(FusionError::NonFiniteEpsilon);
    }
    if members.active_count() == 0 {
        return Ok(Fused {
            distribution: members.main.clone(),
            k_star: None,
            fell_back: false,
        });
    }
    let k_star = Some(min_entropy_index(members)?);
    let result = match method {
        FusionMethod::Mixture => fuse_mixture(members),
        FusionMethod::Product => fuse_product(members),
        FusionMethod::EntropyThreshold => fuse_entropy_threshold(members, epsilon),
        FusionMethod::EntropyWeighted => fuse_entropy_weighted(members),
    };
    match result {
        Ok(distribution) => Ok(Fused {
            distribution,
            k_star,
            fell_back: false,
        }),
        Err(FusionError::AllZeroProduct) => Ok(Fused {
            distribution: members.main.clone(),
            k_star,
            fell_back: true,
        }),
        Err(e) => Err(e),
    }
}

/// Draws an action by inverse-CDF sampling with one uniform draw.
pub fn sample_action<R: Rng + ?Sized>(d: &ActionDistribution, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in d.probs().iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}

/// Anything that maps an input to an action distribution.
pub trait PolicyHandle: Send + Sync {
    type Input: ?Sized;

    fn num_actions(&self) -> usize;

    fn distribution(&self, input: &Self::Input) -> ActionDistribution;
}

impl<P: PolicyHandle + ?Sized> PolicyHandle for Box<P> {
    type Input = P::Input;

    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }

    fn distribution(&self, input: &Self::Input) -> ActionDistribution {
        (**self).distribution(input)
    }
}

impl<P: PolicyHandle + ?Sized> PolicyHandle for std::sync::Arc<P> {
    type Input = P::Input;

    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }

    fn distribution(&self, input: &Self::Input) -> ActionDistribution {
        (**self).distribution(input)
    }
}

/// Every member's distribution at one input, plus the fusion result.
#[derive(Debug, Clone)]
pub struct FusionTrace {
    pub main: ActionDistribution,
    pub subs: Vec<ActionDistribution>,
    pub fused: Fused,
}

/// Main policy, sub-policies and the fusion settings that combine them.
pub struct FusionEnsemble<P> {
    main: P,
    subs: Vec<P>,
    method: FusionMethod,
    epsilon: f64,
    active: Vec<bool>,
    fallbacks: AtomicU64,
}

impl<P: PolicyHandle> FusionEnsemble<P> {
    pub fn new(main: P, subs: Vec<P>, method: FusionMethod, epsilon: f64) -> Result<Self, FusionError> {
        if !epsilon.is_finite() {
            return Err(FusionError::NonFiniteEpsilon);
        }
        let n = main.num_actions();
        for sub in &subs {
            if sub.num_actions() != n {
                return Err(FusionError::CardinalityMismatch {
                    expected: n,
                    actual: sub.num_actions(),
                });
            }
        }
        let active = vec![true; subs.len()];
        Ok(Self {
            main,
            subs,
            method,
            epsilon,
            active,
            fallbacks: AtomicU64::new(0),
        })
    }

    /// Ensemble that always plays `main`.
    pub fn single(main: P) -> Self {
        Self {
            main,
            subs: Vec::new(),
            method: FusionMethod::EntropyWeighted,
            epsilon: 0.0,
            active: Vec::new(),
            fallbacks: AtomicU64::new(0),
        }
    }

    pub fn method(&self) -> FusionMethod {
        self.method
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn main(&self) -> &P {
        &self.main
    }

    pub fn subs(&self) -> &[P] {
        &self.subs
    }

    pub fn num_actions(&self) -> usize {
        self.main.num_actions()
    }

    pub fn set_method(&mut self, method: FusionMethod) {
        self.method = method;
    }

    pub fn set_epsilon(&mut self, epsilon: f64) -> Result<(), FusionError> {
        if !epsilon.is_finite() {
            return Err(FusionError::NonFiniteEpsilon);
        }
        self.epsilon = epsilon;
        Ok(())
    }

    pub fn set_active(&mut self, active: Vec<bool>) -> Result<(), FusionError> {
        if active.len() != self.subs.len() {
            return Err(FusionError::MaskLength {
                mask: active.len(),
                subs: self.subs.len(),
            });
        }
        self.active = active;
        Ok(())
    }

    /// Number of product fusions that fell back to the main policy.
    pub fn fallback_count(&self) -> u64 {
        self.fallbacks.load(Ordering::Relaxed)
    }

    pub fn trace(&self, input: &P::Input) -> Result<FusionTrace, FusionError> {
        let main = self.main.distribution(input);
        let subs: Vec<ActionDistribution> = self
            .subs
            .iter()
            .zip(&self.active)
            .map(|(p, &on)| {
                if on {
                    p.distribution(input)
                } else {
                    // Inactive members are never read by the operators.
                    main.clone()
                }
            })
            .collect();
        let members = Members::new(&main, &subs, &self.active)?;
        let fused = fuse(self.method, self.epsilon, &members)?;
        if fused.fell_back {
            self.fallbacks.fetch_add(1, Ordering::Relaxed);
            log::debug!("product fusion undefined, falling back to main policy");
        }
        Ok(FusionTrace { main, subs, fused })
    }

    pub fn fused_distribution(&self, input: &P::Input) -> Result<ActionDistribution, FusionError> {
        Ok(self.trace(input)?.fused.distribution)
    }
}

impl<P: PolicyHandle> fmt::Debug for FusionEnsemble<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FusionEnsemble")
            .field("subs", &self.subs.len())
            .field("method", &self.method)
            .field("epsilon", &self.epsilon)
            .field("active", &self.active)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(p: &[f64]) -> ActionDistribution {
        ActionDistribution::new(p.to_vec()).unwrap()
    }

    // Independent entropy oracle: log base |A| directly.
    fn entropy_oracle(p: &[f64]) -> f64 {
        let n = p.len() as f64;
        p.iter()
            .map(|&x| if x == 0.0 { 0.0 } else { -x * x.log(n) })
            .sum()
    }

    #[test]
    fn rejects_invalid_distributions() {
        assert!(matches!(
            ActionDistribution::new(vec![1.0]),
            Err(FusionError::TooFewActions(1))
        ));
        assert!(ActionDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(ActionDistribution::new(vec![1.5, -0.5]).is_err());
        assert!(ActionDistribution::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(normalized_entropy(&ActionDistribution::uniform(4).unwrap()).value(), 1.0);
        assert_eq!(normalized_entropy(&dist(&[1.0, 0.0, 0.0, 0.0])).value(), 0.0);
        let half = [0.5, 0.5, 0.0, 0.0];
        let expected = entropy_oracle(&half);
        assert!((expected - 0.5).abs() < 1e-15);
        assert!((normalized_entropy(&dist(&half)).value() - expected).abs() < 1e-12);
    }

    #[test]
    fn min_entropy_examples() {
        let peaked = dist(&[0.97, 0.01, 0.01, 0.01]);
        let uniform = ActionDistribution::uniform(4).unwrap();
        let main = uniform.clone();
        let subs = vec![peaked.clone(), uniform.clone()];
        let active = vec![true, true];
        let m = Members::new(&main, &subs, &active).unwrap();
        let (k, h) = min_entropy_index(&m).unwrap();
        assert_eq!(k, 0);
        assert!((h.value() - entropy_oracle(peaked.probs())).abs() < 1e-12);
        assert!((h.value() - 0.121).abs() < 1e-3);

        let subs = vec![peaked.clone(), peaked.clone()];
        let m = Members::new(&main, &subs, &active).unwrap();
        assert_eq!(min_entropy_index(&m).unwrap().0, 0);

        let single = vec![uniform.clone()];
        let on = vec![true];
        let m = Members::new(&main, &single, &on).unwrap();
        assert_eq!(min_entropy_index(&m).unwrap().0, 0);

        let off = vec![false];
        let m = Members::new(&main, &single, &off).unwrap();
        assert_eq!(min_entropy_index(&m), Err(FusionError::NoActiveSubPolicy));
    }

    #[test]
    fn mixture_examples() {
        let main = dist(&[1.0, 0.0]);
        let subs = vec![dist(&[0.0, 1.0])];
        let on = vec![true];
        let m = Members::new(&main, &subs, &on).unwrap();
        assert_eq!(fuse_mixture(&m).unwrap().probs(), &[0.5, 0.5]);

        let subs = vec![dist(&[0.0, 1.0]), dist(&[0.5, 0.5])];
        let on = vec![true, true];
        let m = Members::new(&main, &subs, &on).unwrap();
        let out = fuse_mixture(&m).unwrap();
        assert!((out.prob(0) - 0.5).abs() < 1e-15);
        assert!((out.prob(1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn product_examples() {
        let main = dist(&[0.8, 0.2]);
        let subs = vec![dist(&[0.8, 0.2])];
        let on = vec![true];
        let m = Members::new(&main, &subs, &on).unwrap();
        let out = fuse_product(&m).unwrap();
        assert!((out.prob(0) - 16.0 / 17.0).abs() < 1e-12);
        assert!((out.prob(1) - 1.0 / 17.0).abs() < 1e-12);

        let main = dist(&[1.0, 0.0]);
        let subs = vec![dist(&[0.0, 1.0])];
        let m = Members::new(&main, &subs, &on).unwrap();
        assert_eq!(fuse_product(&m), Err(FusionError::AllZeroProduct));
        let fused = fuse(FusionMethod::Product, 0.0, &m).unwrap();
        assert!(fused.fell_back);
        assert_eq!(&fused.distribution, &main);
    }

    #[test]
    fn entropy_threshold_examples() {
        let on = vec![true];
        let main = ActionDistribution::uniform(4).unwrap();
        let subs = vec![dist(&[0.97, 0.01, 0.01, 0.01])];
        let m = Members::new(&main, &subs, &on).unwrap();
        assert_eq!(fuse_entropy_threshold(&m, 0.0).unwrap(), subs[0]);

        let main = dist(&[1.0, 0.0, 0.0, 0.0]);
        let subs = vec![ActionDistribution::uniform(4).unwrap()];
        let m = Members::new(&main, &subs, &on).unwrap();
        assert_eq!(fuse_entropy_threshold(&m, 0.0).unwrap(), main);
        // Equality falls to the main policy.
        assert_eq!(fuse_entropy_threshold(&m, 1.0).unwrap(), main);
        assert_eq!(fuse_entropy_threshold(&m, 1.0 + 1e-9).unwrap(), subs[0]);
        assert_eq!(
            fuse_entropy_threshold(&m, f64::NAN),
            Err(FusionError::NonFiniteEpsilon)
        );
    }

    #[test]
    fn entropy_weighted_examples() {
        let on = vec![true];
        let main = dist(&[0.7, 0.3]);
        let subs = vec![dist(&[0.1, 0.9])];
        let m = Members::new(&main, &subs, &on).unwrap();
        let out = fuse_entropy_weighted(&m).unwrap();
        let h = entropy_oracle(&[0.1, 0.9]);
        assert!((h - 0.4690).abs() < 1e-4);
        let oracle = [h * 0.7 + (1.0 - h) * 0.1, h * 0.3 + (1.0 - h) * 0.9];
        assert!((out.prob(0) - oracle[0]).abs() < 1e-12);
        assert!((out.prob(1) - oracle[1]).abs() < 1e-12);
        assert!((out.prob(0) - 0.3814).abs() < 1e-4);

        let subs = vec![ActionDistribution::uniform(2).unwrap()];
        let m = Members::new(&main, &subs, &on).unwrap();
        assert_eq!(fuse_entropy_weighted(&m).unwrap(), main);
        let subs = vec![dist(&[0.0, 1.0])];
        let m = Members::new(&main, &subs, &on).unwrap();
        assert_eq!(fuse_entropy_weighted(&m).unwrap(), subs[0]);
    }

    #[test]
    fn dispatch_with_no_active_subs_returns_main() {
        let main = dist(&[0.3, 0.7]);
        let subs = vec![dist(&[0.9, 0.1])];
        let off = vec![false];
        let m = Members::new(&main, &subs, &off).unwrap();
        for method in FusionMethod::ALL {
            let fused = fuse(method, 0.0, &m).unwrap();
            assert_eq!(fused.distribution, main);
            assert!(fused.k_star.is_none());
        }
    }

    #[test]
    fn mask_and_cardinality_errors() {
        let main = dist(&[0.5, 0.5]);
        let subs = vec![ActionDistribution::uniform(3).unwrap()];
        assert!(matches!(
            Members::new(&main, &subs, &[true]),
            Err(FusionError::CardinalityMismatch { .. })
        ));
        let subs = vec![ActionDistribution::uniform(2).unwrap()];
        assert!(matches!(
            Members::new(&main, &subs, &[]),
            Err(FusionError::MaskLength { .. })
        ));
    }

    #[test]
    fn sampling_one_hot_and_repeatability() {
        let d = ActionDistribution::one_hot(4, 2).unwrap();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(sample_action(&d, &mut rng), 2);
        }
        let d = dist(&[0.1, 0.2, 0.3, 0.4]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100).map(|_| sample_action(&d, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
    }

    #[test]
    fn sampling_frequencies() {
        let d = ActionDistribution::uniform(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_action(&d, &mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn serde_rejects_unnormalized() {
        assert!(serde_json::from_str::<ActionDistribution>("[0.5, 0.4]").is_err());
        let d: ActionDistribution = serde_json::from_str("[0.25, 0.75]").unwrap();
        assert_eq!(d.probs(), &[0.25, 0.75]);
        assert_eq!(
            serde_json::to_string(&FusionMethod::EntropyWeighted).unwrap(),
            "\"EW\""
        );
    }
}
