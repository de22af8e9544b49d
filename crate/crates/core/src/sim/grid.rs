use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::runner::{replicate_seed, run_replicate};
use super::stats::Summary;
use super::{AgentSpec, Experiment, ScenarioConfig, SimError, Strategy};
use crate::economics::{self, from_fraction, from_money, render_fixed, AlphaThreshold, Rational};
use crate::ledger::Issuance;
use crate::protocol::{MembershipMode, ProtocolConfig};
use crate::structure::Params;
use crate::units::{AgentId, Fraction, MonetaryAmount, TokenAmount, MICRO};

/// One point of the leak-expectation grid. `α` is `query_stake / supply`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakCell {
    pub p_detect: Fraction,
    pub beta: Fraction,
    pub gamma: Fraction,
    pub query_stake: TokenAmount,
    pub supply: TokenAmount,
    /// Memberships sold after the leak (`k`).
    pub future_sales: u64,
    /// Counterfeit sales (`ℓ`).
    pub counterfeit_sales: u64,
    pub price: MonetaryAmount,
}

impl LeakCell {
    pub(crate) fn validate(&self) -> Result<(), (&'static str, String)> {
        for (name, f) in [
            ("p_detect", self.p_detect),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !f.is_unit_interval() {
                return Err((name, format!("{f} is outside [0, 1]")));
            }
        }
        if self.query_stake.is_zero() {
            return Err(("query_stake", "must be positive".into()));
        }
        if self.price.is_zero() {
            return Err(("price", "must be positive".into()));
        }
        // The leaker and every later buyer take their stake from the founder.
        let needed = self.query_stake.micros() as u128 * (self.future_sales as u128 + 1);
        if needed > self.supply.micros() as u128 {
            return Err((
                "supply",
                format!("cannot cover {} query stakes", self.future_sales + 1),
            ));
        }
        Ok(())
    }

    pub fn alpha(&self) -> Rational {
        Rational::new(
            self.query_stake.micros().into(),
            self.supply.micros().into(),
        )
    }

    pub fn closed_form(&self) -> Rational {
        economics::dishonest_ev(
            &from_fraction(self.p_detect),
            &from_fraction(self.beta),
            &from_fraction(self.gamma),
            &self.alpha(),
            self.future_sales,
            self.counterfeit_sales,
            &from_money(self.price),
        )
    }

    /// The scenario this cell stands for: a founder holding the whole
    /// supply, a leaker joining at tick 0 and leaking at tick 1, and `k`
    /// buyers arriving one per tick afterwards.
    pub fn scenario(&self, master_seed: u64) -> ScenarioConfig {
        let mut agents = vec![
            AgentSpec {
                id: AgentId::new("founder"),
                strategy: Strategy::LazyHolder,
                tokens: self.supply,
                cash: MonetaryAmount::ZERO,
            },
            AgentSpec {
                id: AgentId::new("leaker"),
                strategy: Strategy::Leaker { leak_tick: 1 },
                tokens: TokenAmount::ZERO,
                cash: self.price,
            },
        ];
        for i in 0..self.future_sales {
            agents.push(AgentSpec {
                id: AgentId::new(format!("buyer-{i:02}")),
                strategy: Strategy::MembershipBuyer {
                    price: self.price,
                    arrival_tick: 2 + i,
                },
                tokens: TokenAmount::ZERO,
                cash: self.price,
            });
        }
        ScenarioConfig {
            schema: super::SCENARIO_SCHEMA.to_string(),
            params: Params {
                query_stake: self.query_stake,
                ..Params::default()
            },
            protocol: ProtocolConfig {
                membership_mode: MembershipMode::SteadyState,
                membership_price: self.price,
                ..ProtocolConfig::default()
            },
            issuance: Issuance::Predetermined,
            agents,
            horizon: self.future_sales + 3,
            replicates: 1,
            master_seed,
            access_mode: super::AccessMode::Membership,
            ground_truth: Fraction::ONE,
            p_detect: self.p_detect,
            beta: self.beta,
            gamma: self.gamma,
            counterfeit_sales: self.counterfeit_sales,
            token_unit_value: MonetaryAmount::ZERO,
            drop_probability: Fraction::ZERO,
            experiment: Experiment::Scenario,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCellReport {
    pub cell: LeakCell,
    pub alpha: String,
    pub threshold: String,
    pub closed_form: String,
    /// Leaker net in a replicate where the leak is caught.
    pub detected_net: String,
    /// Leaker net in a replicate where it is not.
    pub undetected_net: String,
    pub replicates: u64,
    pub detected: u64,
    pub monte_carlo_mean: String,
    pub stderr: String,
    pub within_3_stderr: bool,
    /// Closed form is farther than three standard errors from zero, so the
    /// sign of the estimate is expected to match.
    pub sign_decisive: bool,
    pub sign_agrees: bool,
    /// `ev < 0` exactly when `α` is below the threshold.
    pub threshold_consistent: bool,
}

fn cell_seed(master_seed: u64, cell: usize) -> u64 {
    let s = replicate_seed(master_seed ^ 0x7472_6565, cell as u64);
    u64::from_le_bytes(s[..8].try_into().expect("8 bytes"))
}

/// Detection draw of replicate `index` of a cell scenario. Mirrors the
/// replicate stream: one draw seeds the fault model, the next decides
/// detection.
fn detection_draw(seed: u64, index: u64, p: Fraction) -> bool {
    let mut rng = ChaCha8Rng::from_seed(replicate_seed(seed, index));
    let _fault_seed: u64 = rng.random();
    rng.random_range(0..MICRO) < p.micros()
}

fn leaker_net(cfg: &ScenarioConfig, detected: bool) -> Result<i64, SimError> {
    let out = run_replicate(cfg, 0, false, Some(detected))?;
    Ok(out.nets[&AgentId::new("leaker")].micros())
}

fn sign(r: &Rational) -> i32 {
    use num_traits::Signed;
    if r.is_positive() {
        1
    } else if r.is_negative() {
        -1
    } else {
        0
    }
}

/// Estimates the leaker's expected net in every cell. Each replicate's only
/// random input is its detection draw, so the engine runs once per branch
/// and every replicate reuses the branch's net.
pub fn estimate_theorem2(
    master_seed: u64,
    cells: &[LeakCell],
    replicates: u64,
) -> Result<Vec<GridCellReport>, SimError> {
    cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| {
            let seed = cell_seed(master_seed, i);
            let cfg = cell.scenario(seed);
            let caught = leaker_net(&cfg, true)?;
            let missed = leaker_net(&cfg, false)?;
            let detected = (0..replicates)
                .filter(|&r| detection_draw(seed, r, cell.p_detect))
                .count() as u64;
            let mut s = Summary::new();
            s.push_n(caught, detected);
            s.push_n(missed, replicates - detected);
            let cf = cell.closed_form();
            let stderr_sq = s.stderr_sq();
            let decisive = &cf * &cf > Rational::from_integer(9.into()) * stderr_sq;
            let threshold = economics::dishonest_alpha_threshold(
                &from_fraction(cell.p_detect),
                &from_fraction(cell.beta),
                &from_fraction(cell.gamma),
                cell.future_sales,
                cell.counterfeit_sales,
            );
            let below = match &threshold {
                AlphaThreshold::Finite(t) => cell.alpha() < *t,
                AlphaThreshold::Unbounded => true,
            };
            let threshold_consistent = match threshold {
                AlphaThreshold::Finite(_) => below == (sign(&cf) < 0),
                // No ownership term: the sign is fixed by p and γℓ alone.
                AlphaThreshold::Unbounded => true,
            };
            Ok(GridCellReport {
                cell: cell.clone(),
                alpha: economics::render_plain(&cell.alpha()),
                threshold: threshold.to_string(),
                closed_form: render_fixed(&cf),
                detected_net: render_fixed(&economics::micro_ratio(caught as i128)),
                undetected_net: render_fixed(&economics::micro_ratio(missed as i128)),
                replicates,
                detected,
                monte_carlo_mean: render_fixed(&s.mean()),
                stderr: render_fixed(&s.stderr()),
                within_3_stderr: s.within(&cf, 3),
                sign_decisive: decisive,
                sign_agrees: !decisive || s.mean_sign() == sign(&cf),
                threshold_consistent,
            })
        })
        .collect::<Vec<Result<_, _>>>()
        .into_iter()
        .collect()
}

/// `count` cells drawn from `seed`. Probabilities and fractions are whole
/// percentages and prices whole units, so every payout is exact in
/// micro-units.
pub fn generate_cells(seed: u64, count: u32) -> Vec<LeakCell> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pct = |v: u64| Fraction::from_micros(v * MICRO / 100);
    let supply_units = 10_000u64;
    (0..count)
        .map(|_| {
            let k = rng.random_range(1..=10u64);
            let max_stake = (supply_units / (k + 1)).min(800);
            LeakCell {
                p_detect: pct(rng.random_range(0..=100)),
                beta: pct(rng.random_range(0..=100)),
                gamma: pct(rng.random_range(0..=50)),
                query_stake: TokenAmount::from_units(rng.random_range(1..=max_stake)),
                supply: TokenAmount::from_units(supply_units),
                future_sales: k,
                counterfeit_sales: rng.random_range(0..=5),
                price: MonetaryAmount::from_units(rng.random_range(10..=1000)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::economics::parse_rational;

    fn cell() -> LeakCell {
        LeakCell {
            p_detect: Fraction::from_micros(300_000),
            beta: Fraction::from_micros(500_000),
            gamma: Fraction::from_micros(100_000),
            query_stake: TokenAmount::from_units(400),
            supply: TokenAmount::from_units(10_000),
            future_sales: 6,
            counterfeit_sales: 2,
            price: MonetaryAmount::from_units(250),
        }
    }

    #[test]
    fn branch_nets_match_the_closed_form_terms() {
        let c = cell();
        let cfg = c.scenario(9);
        cfg.validate().unwrap();
        assert_eq!(leaker_net(&cfg, true).unwrap(), -250_000_000);
        // (βαk + γℓ)·D = (0.5·0.04·6 + 0.1·2)·250 = 80
        assert_eq!(leaker_net(&cfg, false).unwrap(), 80_000_000);
        assert_eq!(c.closed_form(), parse_rational("-19").unwrap());
    }

    #[test]
    fn memoized_draws_match_full_replicates() {
        let c = cell();
        let seed = 77;
        let cfg = c.scenario(seed);
        let caught = leaker_net(&cfg, true).unwrap();
        let missed = leaker_net(&cfg, false).unwrap();
        for r in 0..40 {
            let full = run_replicate(&cfg, r, false, None).unwrap();
            let expected = if detection_draw(seed, r, c.p_detect) {
                caught
            } else {
                missed
            };
            assert_eq!(
                full.nets[&AgentId::new("leaker")].micros(),
                expected,
                "replicate {r}"
            );
        }
    }

    #[test]
    fn certain_detection_costs_the_price() {
        let mut c = cell();
        c.p_detect = Fraction::ONE;
        let rows = estimate_theorem2(1, &[c], 500).unwrap();
        assert_eq!(rows[0].detected, 500);
        assert_eq!(rows[0].monte_carlo_mean, "-250.000000");
        assert_eq!(rows[0].stderr, "0.000000");
        assert!(rows[0].within_3_stderr);
    }

    #[test]
    fn generated_cells_are_valid_and_reproducible() {
        let a = generate_cells(5, 30);
        assert_eq!(a, generate_cells(5, 30));
        assert!(a.iter().all(|c| c.validate().is_ok()));
    }
}
