//! Highest-other-bid (HOB) distributions.
//!
//! The learner wins a round iff its bid is at least the HOB, so the HOB CDF
//! `F_h(b)` is exactly the winning probability of bid `b`. Conditional on
//! winning, a second-price auction charges `E[m_h | m_h ≤ b]`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::model::{AuctionFormat, BidGrid};

/// Parametric HOB law for one round, supported on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HobDist {
    Uniform,
    /// Normal(`mean`, `std`) truncated to `[0, 1]` and renormalised.
    TruncatedNormal { mean: f64, std: f64 },
    Beta { alpha: f64, beta: f64 },
}

/// Standard normal CDF, density and quantile.
struct StdNormal;

impl StdNormal {
    fn cdf(&self, z: f64) -> f64 {
        0.5 * erfc(-z / std::f64::consts::SQRT_2)
    }

    fn pdf(&self, z: f64) -> f64 {
        (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
    }
}

const STD_NORMAL: StdNormal = StdNormal;

/// Below this much normal mass on `[0, 1]` the truncated normal is treated as
/// a point mass at the nearest endpoint.
const MIN_TRUNCATED_MASS: f64 = 1e-300;

impl HobDist {
    fn point_mass(&self) -> Option<f64> {
        match *self {
            HobDist::TruncatedNormal { mean, std } => {
                if std <= 0.0 {
                    return Some(mean.clamp(0.0, 1.0));
                }
                let z0 = STD_NORMAL.cdf(-mean / std);
                let z1 = STD_NORMAL.cdf((1.0 - mean) / std);
                (z1 - z0 <= MIN_TRUNCATED_MASS).then(|| mean.clamp(0.0, 1.0))
            }
            _ => None,
        }
    }

    pub fn cdf(&self, b: f64) -> f64 {
        if b < 0.0 {
            return 0.0;
        }
        if b >= 1.0 {
            return 1.0;
        }
        if let Some(at) = self.point_mass() {
            return if b >= at { 1.0 } else { 0.0 };
        }
        match *self {
            HobDist::Uniform => b,
            HobDist::TruncatedNormal { mean, std } => {
                let lo = STD_NORMAL.cdf(-mean / std);
                let hi = STD_NORMAL.cdf((1.0 - mean) / std);
                ((STD_NORMAL.cdf((b - mean) / std) - lo) / (hi - lo)).clamp(0.0, 1.0)
            }
            HobDist::Beta { alpha, beta } => beta_reg(alpha, beta, b),
        }
    }

    /// `E[m · 1{m ≤ b}]`, the numerator of the second-price payment.
    pub fn partial_mean(&self, b: f64) -> f64 {
        let b = b.clamp(0.0, 1.0);
        if let Some(at) = self.point_mass() {
            return if b >= at { at } else { 0.0 };
        }
        match *self {
            HobDist::Uniform => 0.5 * b * b,
            HobDist::TruncatedNormal { mean, std } => {
                let (za, zb) = (-mean / std, (b - mean) / std);
                let mass = STD_NORMAL.cdf((1.0 - mean) / std) - STD_NORMAL.cdf(za);
                let part = mean * (STD_NORMAL.cdf(zb) - STD_NORMAL.cdf(za))
                    - std * (STD_NORMAL.pdf(zb) - STD_NORMAL.pdf(za));
                (part / mass).max(0.0)
            }
            HobDist::Beta { alpha, beta } => {
                if b >= 1.0 {
                    alpha / (alpha + beta)
                } else {
                    alpha / (alpha + beta) * beta_reg(alpha + 1.0, beta, b)
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if let Some(at) = self.point_mass() {
            return at;
        }
        match *self {
            HobDist::Uniform => rng.random::<f64>(),
            HobDist::TruncatedNormal { mean, std } => {
                let lo = STD_NORMAL.cdf(-mean / std);
                let hi = STD_NORMAL.cdf((1.0 - mean) / std);
                let u = lo + (hi - lo) * rng.random::<f64>();
                (mean + std * STD_NORMAL.inverse_cdf(u)).clamp(0.0, 1.0)
            }
            HobDist::Beta { alpha, beta } => rand_distr::Beta::new(alpha, beta)
                .expect("positive beta shape parameters")
                .sample(rng),
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            HobDist::Uniform => true,
            HobDist::TruncatedNormal { mean, std } => mean.is_finite() && std >= 0.0,
            HobDist::Beta { alpha, beta } => alpha > 0.0 && beta > 0.0,
        }
    }
}

/// Per-round sorted HOB observations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmpiricalHob {
    samples: Vec<Vec<f64>>,
}

impl EmpiricalHob {
    pub fn new(horizon: usize) -> Self {
        EmpiricalHob {
            samples: vec![Vec::new(); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self, h: usize) -> &[f64] {
        &self.samples[h - 1]
    }

    pub fn ingest(&mut self, h: usize, m: f64) {
        let row = &mut self.samples[h - 1];
        let at = row.partition_point(|&x| x <= m);
        row.insert(at, m);
    }

    fn row(&self, h: usize) -> Result<&[f64]> {
        let row = &self.samples[h - 1];
        if row.is_empty() {
            Err(Error::NoSamples(h))
        } else {
            Ok(row)
        }
    }

    /// `(1/t) #{s : m_h^s ≤ b}`.
    pub fn cdf(&self, h: usize, b: f64) -> Result<f64> {
        let row = self.row(h)?;
        Ok(row.partition_point(|&x| x <= b) as f64 / row.len() as f64)
    }

    /// Mean of the stored samples that are `≤ b`, or 0 if there are none.
    pub fn conditional_mean(&self, h: usize, b: f64) -> Result<f64> {
        let row = self.row(h)?;
        let k = row.partition_point(|&x| x <= b);
        Ok(if k == 0 {
            0.0
        } else {
            row[..k].iter().sum::<f64>() / k as f64
        })
    }

    /// Writes `round,value` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["round", "value"]).map_err(csv_err)?;
        for (i, row) in self.samples.iter().enumerate() {
            for &m in row {
                w.write_record([(i + 1).to_string(), m.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, horizon: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            round: usize,
            value: f64,
        }
        let mut model = EmpiricalHob::new(horizon);
        for row in csv::Reader::from_reader(input).deserialize::<Row>() {
            let row = row.map_err(csv_err)?;
            if row.round == 0 || row.round > horizon || !(0.0..=1.0).contains(&row.value) {
                return Err(Error::InvalidArgument(format!(
                    "HOB sample ({}, {}) outside rounds 1..={horizon} or values [0, 1]",
                    row.round, row.value
                )));
            }
            model.ingest(row.round, row.value);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

/// True or estimated HOB distributions for every round of an episode.
#[derive(Debug, Clone, PartialEq)]
pub enum HobModel {
    Parametric(Vec<HobDist>),
    Empirical(EmpiricalHob),
}

impl HobModel {
    pub fn uniform(horizon: usize) -> Self {
        HobModel::Parametric(vec![HobDist::Uniform; horizon])
    }

    pub fn horizon(&self) -> usize {
        match self {
            HobModel::Parametric(d) => d.len(),
            HobModel::Empirical(e) => e.horizon(),
        }
    }

    /// `P(m_h ≤ b)`, which is also the probability that bid `b` wins.
    pub fn cdf(&self, h: usize, b: f64) -> Result<f64> {
        match self {
            HobModel::Parametric(d) => Ok(d[h - 1].cdf(b)),
            HobModel::Empirical(e) => e.cdf(h, b),
        }
    }

    /// Expected payment conditional on winning with bid `b`.
    ///
    /// When `F_h(b) = 0` the second-price payment is 0/0; it is reported as 0
    /// since it only ever appears multiplied by the winning probability.
    pub fn payment(&self, h: usize, b: f64, format: AuctionFormat) -> Result<f64> {
        if format == AuctionFormat::FirstPrice {
            return Ok(b);
        }
        match self {
            HobModel::Parametric(d) => {
                let f = d[h - 1].cdf(b);
                Ok(if f <= 0.0 {
                    0.0
                } else {
                    (d[h - 1].partial_mean(b) / f).clamp(0.0, b)
                })
            }
            HobModel::Empirical(e) => e.conditional_mean(h, b),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, h: usize, rng: &mut R) -> Result<f64> {
        match self {
            HobModel::Parametric(d) => Ok(d[h - 1].sample(rng)),
            HobModel::Empirical(_) => Err(Error::NotParametric),
        }
    }

    /// Appends an observation; only meaningful for the empirical variant.
    pub fn ingest(&mut self, h: usize, m: f64) -> Result<()> {
        match self {
            HobModel::Empirical(e) => {
                e.ingest(h, m);
                Ok(())
            }
            HobModel::Parametric(_) => Err(Error::InvalidArgument(
                "cannot ingest observations into a parametric HOB model".into(),
            )),
        }
    }
}

/// Winning probability and conditional payment tabulated on a bid grid.
///
/// This is everything the planner needs from a HOB model.
#[derive(Debug, Clone, PartialEq)]
pub struct HobTable {
    grid: BidGrid,
    horizon: usize,
    win_prob: Vec<f64>,
    payment: Vec<f64>,
}

impl HobTable {
    pub fn tabulate(model: &HobModel, grid: &BidGrid, format: AuctionFormat) -> Result<Self> {
        let horizon = model.horizon();
        let mut win_prob = Vec::with_capacity(horizon * grid.len());
        let mut payment = Vec::with_capacity(horizon * grid.len());
        for h in 1..=horizon {
            for &b in grid.bids() {
                win_prob.push(model.cdf(h, b)?);
                payment.push(model.payment(h, b, format)?);
            }
        }
        Ok(HobTable {
            grid: grid.clone(),
            horizon,
            win_prob,
            payment,
        })
    }

    pub fn grid(&self) -> &BidGrid {
        &self.grid
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn win_prob(&self, h: usize, bid_index: usize) -> f64 {
        self.win_prob[(h - 1) * self.grid.len() + bid_index]
    }

    pub fn payment(&self, h: usize, bid_index: usize) -> f64 {
        self.payment[(h - 1) * self.grid.len() + bid_index]
    }

    /// Largest `sup_b |F_h(b) - G_h(b)|` over rounds, on the grid.
    pub fn cdf_distance(&self, other: &HobTable) -> f64 {
        self.win_prob
            .iter()
            .zip(&other.win_prob)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Running per-grid-point counts and sums of HOB observations.
///
/// Produces the same [`HobTable`] as tabulating an [`EmpiricalHob`] holding
/// the same observations, in `O(H·|B|)` instead of `O(H·t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTally {
    grid: BidGrid,
    horizon: usize,
    total: Vec<u64>,
    /// `below[h][i] = #{m ≤ b_i}`.
    below: Vec<u64>,
    /// `sum_below[h][i] = Σ{m : m ≤ b_i}`.
    sum_below: Vec<f64>,
}

impl GridTally {
    pub fn new(grid: BidGrid, horizon: usize) -> Self {
        let n = horizon * grid.len();
        GridTally {
            grid,
            horizon,
            total: vec![0; horizon],
            below: vec![0; n],
            sum_below: vec![0.0; n],
        }
    }

    pub fn observations(&self, h: usize) -> u64 {
        self.total[h - 1]
    }

    pub fn ingest(&mut self, h: usize, m: f64) {
        let g = self.grid.len();
        self.total[h - 1] += 1;
        let first = self.grid.bids().partition_point(|&b| b < m);
        let base = (h - 1) * g;
        for i in first..g {
            self.below[base + i] += 1;
            self.sum_below[base + i] += m;
        }
    }

    pub fn table(&self, format: AuctionFormat) -> Result<HobTable> {
        let g = self.grid.len();
        let mut win_prob = Vec::with_capacity(self.below.len());
        let mut payment = Vec::with_capacity(self.below.len());
        for h in 1..=self.horizon {
            let t = self.total[h - 1];
            if t == 0 {
                return Err(Error::NoSamples(h));
            }
            for (i, &b) in self.grid.bids().iter().enumerate() {
                let k = self.below[(h - 1) * g + i];
                win_prob.push(k as f64 / t as f64);
                payment.push(match format {
                    AuctionFormat::FirstPrice => b,
                    AuctionFormat::SecondPrice if k == 0 => 0.0,
                    AuctionFormat::SecondPrice => self.sum_below[(h - 1) * g + i] / k as f64,
                });
            }
        }
        Ok(HobTable {
            grid: self.grid.clone(),
            horizon: self.horizon,
            win_prob,
            payment,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn empirical(values: &[f64]) -> HobModel {
        let mut e = EmpiricalHob::new(1);
        for &v in values {
            e.ingest(1, v);
        }
        HobModel::Empirical(e)
    }

    /// Composite Simpson's rule for `∫_0^b F`.
    fn integral_cdf(d: &HobDist, b: f64) -> f64 {
        let n = 4000;
        let step = b / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * d.cdf(i as f64 * step);
        }
        acc * step / 3.0
    }

    #[test]
    fn uniform_cdf_and_payment() {
        let m = HobModel::uniform(1);
        assert_eq!(m.cdf(1, 0.3).unwrap(), 0.3);
        assert!((m.payment(1, 0.6, AuctionFormat::SecondPrice).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(m.payment(1, 0.7, AuctionFormat::FirstPrice).unwrap(), 0.7);
        assert_eq!(m.cdf(1, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn empirical_cdf_and_payment() {
        let m = empirical(&[0.2, 0.4, 0.6]);
        assert!((m.cdf(1, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.payment(1, 0.5, AuctionFormat::SecondPrice).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(m.payment(1, 0.7, AuctionFormat::FirstPrice).unwrap(), 0.7);
        assert_eq!(m.cdf(1, 1.0).unwrap(), 1.0);
        assert_eq!(m.payment(1, 0.1, AuctionFormat::SecondPrice).unwrap(), 0.0);
    }

    #[test]
    fn single_atom() {
        let m = empirical(&[0.4]);
        assert_eq!(m.cdf(1, 0.4).unwrap(), 1.0);
        assert_eq!(m.cdf(1, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn empty_empirical_errors() {
        let m = HobModel::Empirical(EmpiricalHob::new(2));
        assert!(matches!(m.cdf(2, 0.5), Err(Error::NoSamples(2))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(m.sample(1, &mut rng), Err(Error::NotParametric)));
    }

    #[test]
    fn parametric_payment_matches_integral_form() {
        let dists = [
            HobDist::Uniform,
            HobDist::TruncatedNormal { mean: 0.4, std: 0.2 },
            HobDist::TruncatedNormal { mean: 1.3, std: 0.5 },
            HobDist::Beta { alpha: 2.0, beta: 5.0 },
            HobDist::Beta { alpha: 0.7, beta: 1.4 },
        ];
        for d in dists {
            let m = HobModel::Parametric(vec![d]);
            for b in [0.05, 0.3, 0.55, 0.8, 1.0] {
                let f = d.cdf(b);
                let via_integral = b - integral_cdf(&d, b) / f;
                let p = m.payment(1, b, AuctionFormat::SecondPrice).unwrap();
                assert!((p - via_integral).abs() < 1e-6, "{d:?} b={b}: {p} vs {via_integral}");
            }
        }
    }

    #[test]
    fn degenerate_normal_draws_its_mean() {
        let d = HobDist::TruncatedNormal { mean: 0.5, std: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            assert_eq!(d.sample(&mut rng), 0.5);
        }
        let tiny = HobDist::TruncatedNormal { mean: 0.5, std: 1e-9 };
        for _ in 0..100 {
            assert!((tiny.sample(&mut rng) - 0.5).abs() < 1e-6);
        }
        assert_eq!(d.cdf(0.49), 0.0);
        assert_eq!(d.cdf(0.5), 1.0);
    }

    #[test]
    fn uniform_sampler_ks_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut xs: Vec<f64> = (0..100_000).map(|_| HobDist::Uniform.sample(&mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn tally_matches_empirical_table() {
        let grid = BidGrid::uniform(11);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tally = GridTally::new(grid.clone(), 3);
        let mut emp = EmpiricalHob::new(3);
        let truth = HobDist::Beta { alpha: 2.0, beta: 3.0 };
        for _ in 0..500 {
            for h in 1..=3 {
                let m = if h == 2 { (truth.sample(&mut rng) * 10.0).round() / 10.0 } else { truth.sample(&mut rng) };
                tally.ingest(h, m);
                emp.ingest(h, m);
            }
        }
        let emp = HobModel::Empirical(emp);
        for format in [AuctionFormat::SecondPrice, AuctionFormat::FirstPrice] {
            let a = tally.table(format).unwrap();
            let b = HobTable::tabulate(&emp, &grid, format).unwrap();
            for h in 1..=3 {
                for i in 0..grid.len() {
                    assert_eq!(a.win_prob(h, i), b.win_prob(h, i));
                    assert!((a.payment(h, i) - b.payment(h, i)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let m = empirical(&[0.25, 0.5, 0.125]);
        let HobModel::Empirical(e) = m else { unreachable!() };
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("round,value\n"));
        assert_eq!(EmpiricalHob::read_csv(buf.as_slice(), 1).unwrap(), e);
        assert!(EmpiricalHob::read_csv("round,value\n3,0.5\n".as_bytes(), 1).is_err());
    }

    proptest! {
        #[test]
        fn cdf_monotone_and_payment_bounded(
            mean in -0.5f64..1.5, std in 0.01f64..1.0,
            alpha in 0.3f64..6.0, beta in 0.3f64..6.0,
            samples in proptest::collection::vec(0.0f64..=1.0, 1..40),
        ) {
            let grid = BidGrid::uniform(41);
            let models = [
                HobModel::Parametric(vec![HobDist::TruncatedNormal { mean, std }]),
                HobModel::Parametric(vec![HobDist::Beta { alpha, beta }]),
                empirical(&samples),
            ];
            for m in &models {
                let mut prev = 0.0;
                for &b in grid.bids() {
                    let f = m.cdf(1, b).unwrap();
                    prop_assert!(f + 1e-12 >= prev);
                    prev = f;
                    let p = m.payment(1, b, AuctionFormat::SecondPrice).unwrap();
                    prop_assert!(p >= 0.0 && p <= b + 1e-12);
                }
                prop_assert_eq!(m.cdf(1, 1.0).unwrap(), 1.0);
            }
        }

        #[test]
        fn empirical_payment_identity(
            samples in proptest::collection::vec(0.0f64..=1.0, 1..60),
            b in 0.0f64..=1.0,
        ) {
            let m = empirical(&samples);
            let t = samples.len() as f64;
            let f = m.cdf(1, b).unwrap();
            let p = m.payment(1, b, AuctionFormat::SecondPrice).unwrap();
            let below: f64 = samples.iter().filter(|&&x| x <= b).sum();
            prop_assert!((b * f - below / t - f * (b - p)).abs() < 1e-12);
        }
    }
}
