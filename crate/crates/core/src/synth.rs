//! One-factor synthetic market with a sparse planted index.
//!
//! Stock returns follow `r_ti = beta_i m_t + e_ti` with a common market
//! factor `m_t ~ N(0.0004, 0.01)`, `beta_i ~ U(0.5, 1.5)` and idiosyncratic
//! noise `e_ti ~ N(0, 0.015)`. The index return is `sum_i w*_i r_ti + n_t`
//! with `k0` nonzero Dirichlet(1) weights and `n_t ~ N(0, noise)`.

use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, Uniform};

use crate::error::{Error, Result};
use crate::model::ReturnsPanel;

const MARKET_MEAN: f64 = 0.0004;
const MARKET_VOL: f64 = 0.01;
const IDIOSYNCRATIC_VOL: f64 = 0.015;
const START_PRICE: f64 = 100.0;
const START_INDEX: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    /// Number of daily returns; the price table has one more row.
    pub d: usize,
    pub sparse_k: usize,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub panel: ReturnsPanel,
    /// Planted index weights, length N.
    pub truth: Vec<f64>,
    /// `(d + 1) x N` prices starting at 100; row 0 precedes the first return.
    pub prices: DMatrix<f64>,
    pub index_prices: Vec<f64>,
    /// `d + 1` weekdays starting 2000-01-03.
    pub price_dates: Vec<NaiveDate>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    let SynthConfig { n, d, sparse_k, noise, seed } = *cfg;
    if n < 2 || d < 2 {
        return Err(Error::InvalidParameter(format!("need n >= 2 and d >= 2, got n={n}, d={d}")));
    }
    if sparse_k < 1 || sparse_k > n {
        return Err(Error::InvalidParameter(format!("sparse_k must lie in 1..={n}, got {sparse_k}")));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let market = Normal::new(MARKET_MEAN, MARKET_VOL).expect("valid normal");
    let idio = Normal::new(0.0, IDIOSYNCRATIC_VOL).expect("valid normal");
    let beta_dist = Uniform::new(0.5, 1.5).expect("valid range");

    let betas: Vec<f64> = (0..n).map(|_| beta_dist.sample(&mut rng)).collect();
    let mut returns = DMatrix::zeros(d, n);
    for t in 0..d {
        let m = market.sample(&mut rng);
        for (i, beta) in betas.iter().enumerate() {
            returns[(t, i)] = beta * m + idio.sample(&mut rng);
        }
    }

    let mut truth = vec![0.0; n];
    let chosen = sample(&mut rng, n, sparse_k);
    let draws: Vec<f64> = (0..sparse_k).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = draws.iter().sum();
    for (i, x) in chosen.iter().zip(&draws) {
        truth[i] = x / total;
    }

    let truth_v = DVector::from_column_slice(&truth);
    let mut target = &returns * &truth_v;
    if noise > 0.0 {
        let eps = Normal::new(0.0, noise).expect("valid normal");
        for v in target.iter_mut() {
            *v += eps.sample(&mut rng);
        }
    }

    let price_dates = weekdays(d + 1);
    let mut prices = DMatrix::from_element(d + 1, n, START_PRICE);
    let mut index_prices = vec![START_INDEX; d + 1];
    for t in 0..d {
        for i in 0..n {
            prices[(t + 1, i)] = prices[(t, i)] * (1.0 + returns[(t, i)]);
        }
        index_prices[t + 1] = index_prices[t] * (1.0 + target[t]);
    }
    let tickers = (0..n).map(|i| format!("S{i:03}")).collect();
    let panel = ReturnsPanel::new(returns, target, price_dates[1..].to_vec(), tickers)?;
    Ok(SynthData {
        panel,
        truth,
        prices,
        index_prices,
        price_dates,
    })
}

fn weekdays(count: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(count)
        .collect()
}
