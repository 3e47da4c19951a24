//! Node model parameters and their validation.

use thiserror::Error;

/// Tolerance for "this probability list sums to one".
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Traffic class of a queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PriorityClass {
    Lp,
    Hp,
}

impl PriorityClass {
    pub const BOTH: [PriorityClass; 2] = [PriorityClass::Lp, PriorityClass::Hp];

    pub fn label(self) -> &'static str {
        match self {
            PriorityClass::Lp => "lp",
            PriorityClass::Hp => "hp",
        }
    }
}

/// Long-run packet-loss bound for one traffic class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossLimit {
    /// No constraint row is generated for this class.
    Unbounded,
    /// Long-run average loss must stay at or below this value.
    Bounded(f64),
}

impl LossLimit {
    pub fn bound(self) -> Option<f64> {
        match self {
            LossLimit::Unbounded => None,
            LossLimit::Bounded(v) => Some(v),
        }
    }

    pub fn is_bounded(self) -> bool {
        matches!(self, LossLimit::Bounded(_))
    }
}

/// All scalar and distribution parameters of the harvesting node.
///
/// Energy is measured in abstract units, queues in packets, probabilities per
/// slot. `arrival_lp[a]` is the probability that `a` LP packets arrive in a
/// slot (likewise `arrival_hp`), and `harvest_dist` lists `(w, sigma_w)`
/// pairs: harvesting yields `w` units with probability `sigma_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub e_max: u32,
    pub q_lp_max: u32,
    pub q_hp_max: u32,
    /// Energy consumed by one transmission attempt.
    pub k_tx: u32,
    /// Probability that a transmission attempt succeeds.
    pub mu: f64,
    pub harvest_dist: Vec<(u32, f64)>,
    pub arrival_lp: Vec<f64>,
    pub arrival_hp: Vec<f64>,
    pub weight_lp: f64,
    pub weight_hp: f64,
    pub loss_limit_lp: LossLimit,
    pub loss_limit_hp: LossLimit,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("{name} must be at least 1")]
    ZeroCapacity { name: &'static str },
    #[error("k_tx ({k_tx}) exceeds battery capacity e_max ({e_max}); no transmission would ever be feasible")]
    TxCostExceedsBattery { k_tx: u32, e_max: u32 },
    #[error("{name} must lie in [0, 1], got {value}")]
    ProbabilityRange { name: &'static str, value: f64 },
    #[error("{name} must be nonnegative, got {value}")]
    NegativeWeight { name: &'static str, value: f64 },
    #[error("{name} must be a nonempty probability list")]
    EmptyDistribution { name: &'static str },
    #[error("{name} sums to {sum}, expected 1")]
    DistributionSum { name: &'static str, sum: f64 },
    #[error("harvest_dist has a repeated energy amount ({w})")]
    DuplicateHarvestAmount { w: u32 },
    #[error("{name} loss limit is finite but the mean arrival rate is zero; the loss formula divides by the mean rate")]
    ZeroArrivalWithLossLimit { name: &'static str },
    #[error("loss limit for {name} must lie in [0, 1], got {value}")]
    LossLimitRange { name: &'static str, value: f64 },
}

fn check_prob_list(name: &'static str, probs: &[f64]) -> Result<(), ParamsError> {
    if probs.is_empty() {
        return Err(ParamsError::EmptyDistribution { name });
    }
    for &p in probs {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(ParamsError::ProbabilityRange { name, value: p });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(ParamsError::DistributionSum { name, sum });
    }
    Ok(())
}

impl ModelParams {
    /// Check every structural invariant; all model construction goes through
    /// this first.
    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.e_max < 1 {
            return Err(ParamsError::ZeroCapacity { name: "e_max" });
        }
        if self.q_lp_max < 1 {
            return Err(ParamsError::ZeroCapacity { name: "q_lp_max" });
        }
        if self.q_hp_max < 1 {
            return Err(ParamsError::ZeroCapacity { name: "q_hp_max" });
        }
        if self.k_tx < 1 {
            return Err(ParamsError::ZeroCapacity { name: "k_tx" });
        }
        if self.k_tx > self.e_max {
            return Err(ParamsError::TxCostExceedsBattery {
                k_tx: self.k_tx,
                e_max: self.e_max,
            });
        }
        if !(0.0..=1.0).contains(&self.mu) || !self.mu.is_finite() {
            return Err(ParamsError::ProbabilityRange {
                name: "mu",
                value: self.mu,
            });
        }
        for (name, w) in [("weight_lp", self.weight_lp), ("weight_hp", self.weight_hp)] {
            if w < 0.0 || !w.is_finite() {
                return Err(ParamsError::NegativeWeight { name, value: w });
            }
        }

        if self.harvest_dist.is_empty() {
            return Err(ParamsError::EmptyDistribution {
                name: "harvest_dist",
            });
        }
        let sigmas: Vec<f64> = self.harvest_dist.iter().map(|&(_, s)| s).collect();
        check_prob_list("harvest_dist", &sigmas)?;
        for (i, &(w, _)) in self.harvest_dist.iter().enumerate() {
            if self.harvest_dist[..i].iter().any(|&(w2, _)| w2 == w) {
                return Err(ParamsError::DuplicateHarvestAmount { w });
            }
        }

        check_prob_list("arrival_lp", &self.arrival_lp)?;
        check_prob_list("arrival_hp", &self.arrival_hp)?;

        for class in PriorityClass::BOTH {
            let limit = self.loss_limit(class);
            if let Some(bound) = limit.bound() {
                if !(0.0..=1.0).contains(&bound) || !bound.is_finite() {
                    return Err(ParamsError::LossLimitRange {
                        name: class.label(),
                        value: bound,
                    });
                }
                if self.mean_arrival(class) <= 0.0 {
                    return Err(ParamsError::ZeroArrivalWithLossLimit {
                        name: class.label(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn arrivals(&self, class: PriorityClass) -> &[f64] {
        match class {
            PriorityClass::Lp => &self.arrival_lp,
            PriorityClass::Hp => &self.arrival_hp,
        }
    }

    pub fn queue_cap(&self, class: PriorityClass) -> u32 {
        match class {
            PriorityClass::Lp => self.q_lp_max,
            PriorityClass::Hp => self.q_hp_max,
        }
    }

    pub fn weight(&self, class: PriorityClass) -> f64 {
        match class {
            PriorityClass::Lp => self.weight_lp,
            PriorityClass::Hp => self.weight_hp,
        }
    }

    pub fn loss_limit(&self, class: PriorityClass) -> LossLimit {
        match class {
            PriorityClass::Lp => self.loss_limit_lp,
            PriorityClass::Hp => self.loss_limit_hp,
        }
    }

    /// Mean packets arriving per slot for a class.
    pub fn mean_arrival(&self, class: PriorityClass) -> f64 {
        self.arrivals(class)
            .iter()
            .enumerate()
            .map(|(a, &p)| a as f64 * p)
            .sum()
    }
}
