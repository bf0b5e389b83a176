//! Bit-arrival processes: the `i`-th source bit reaches the encoder at
//! channel use `T_i`, with `T_1 = 1`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalSchedule {
    /// `T_i = n (i - 1) + 1`.
    Periodic { n: u64 },
    /// I.i.d. inter-arrival times on `n_min..=n_max` with the given pmf.
    IidBounded { n_min: u64, n_max: u64, pmf: Vec<f64> },
}

impl ArrivalSchedule {
    pub fn periodic(n: u64) -> Result<Self> {
        let s = Self::Periodic { n };
        s.validate()?;
        Ok(s)
    }

    pub fn uniform(n_min: u64, n_max: u64) -> Result<Self> {
        if n_max < n_min {
            return Err(Error::InvalidParameter(format!("empty support {n_min}..={n_max}")));
        }
        let len = (n_max - n_min + 1) as usize;
        let s = Self::IidBounded {
            n_min,
            n_max,
            pmf: vec![1.0 / len as f64; len],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Periodic { n } if *n == 0 => Err(Error::InvalidParameter("budget n must be at least 1".into())),
            Self::Periodic { .. } => Ok(()),
            Self::IidBounded { n_min, n_max, pmf } => {
                if *n_min == 0 || n_min >= n_max {
                    return Err(Error::InvalidParameter(format!(
                        "inter-arrival support needs 1 <= n_min < n_max, got {n_min}..={n_max}"
                    )));
                }
                if pmf.len() as u64 != n_max - n_min + 1 {
                    return Err(Error::InvalidParameter("pmf length must match the support".into()));
                }
                if pmf.iter().any(|&w| !(w >= 0.0)) {
                    return Err(Error::InvalidParameter("pmf entries must be nonnegative".into()));
                }
                let total: f64 = pmf.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!("pmf sums to {total}, not 1")));
                }
                Ok(())
            }
        }
    }

    /// Smallest and largest inter-arrival time.
    pub fn bounds(&self) -> (u64, u64) {
        match self {
            Self::Periodic { n } => (*n, *n),
            Self::IidBounded { n_min, n_max, .. } => (*n_min, *n_max),
        }
    }

    pub fn process(&self, seed: u64) -> Result<ArrivalProcess> {
        self.validate()?;
        let sampler = match self {
            Self::Periodic { .. } => None,
            Self::IidBounded { pmf, .. } => Some(
                WeightedIndex::new(pmf).map_err(|e| Error::InvalidParameter(format!("pmf: {e}")))?,
            ),
        };
        Ok(ArrivalProcess {
            schedule: self.clone(),
            sampler,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_arrival: 1,
            t: 0,
            arrivals: Vec::new(),
        })
    }
}

/// Realized arrival times, generated one channel use at a time.
#[derive(Clone, Debug)]
pub struct ArrivalProcess {
    schedule: ArrivalSchedule,
    sampler: Option<WeightedIndex<f64>>,
    rng: ChaCha8Rng,
    next_arrival: u64,
    t: u64,
    arrivals: Vec<u64>,
}

impl ArrivalProcess {
    /// Advances to the next channel use and returns how many bits arrive at it.
    pub fn advance(&mut self) -> u64 {
        self.t += 1;
        let mut count = 0;
        while self.next_arrival == self.t {
            count += 1;
            self.arrivals.push(self.t);
            self.next_arrival += self.draw_gap();
        }
        count
    }

    fn draw_gap(&mut self) -> u64 {
        match (&self.schedule, &self.sampler) {
            (ArrivalSchedule::Periodic { n }, _) => *n,
            (ArrivalSchedule::IidBounded { n_min, .. }, Some(sampler)) => n_min + sampler.sample(&mut self.rng) as u64,
            (ArrivalSchedule::IidBounded { .. }, None) => unreachable!("iid schedule always has a sampler"),
        }
    }

    /// Arrival times `T_1, T_2, ...` realized so far.
    pub fn arrival_times(&self) -> &[u64] {
        &self.arrivals
    }

    /// `b(t)` for the current channel use.
    pub fn bits_arrived(&self) -> u64 {
        self.arrivals.len() as u64
    }
}
