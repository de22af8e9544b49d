use std::collections::BTreeMap;

use clap::{Args, ValueEnum};
use num_traits::{One, Signed, ToPrimitive};
use tdm_core::economics::{self, parse_rational, render_plain, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Formula {
    /// ℓ = kD / (cN)
    Liveness,
    /// αkD
    Honest,
    /// −pD + (1 − p)(βαk + γℓ)D
    Dishonest,
    /// Largest α at which leaking still loses money
    Threshold,
    /// αkD − E
    Contribution,
    /// E·#T / (k·reward)
    MinPrice,
    /// R / #T
    UnitValue,
}

#[derive(Args, Debug)]
pub struct EconArgs {
    pub formula: Formula,
    /// Future sales.
    #[arg(long = "k")]
    k: Option<String>,
    /// Price of one sale or membership.
    #[arg(long = "D")]
    price: Option<String>,
    /// Cost of one liveness check.
    #[arg(long = "c")]
    check_cost: Option<String>,
    /// Number of elements.
    #[arg(long = "N")]
    elements: Option<String>,
    /// Ownership fraction.
    #[arg(long)]
    alpha: Option<String>,
    /// Detection probability.
    #[arg(long = "p")]
    p_detect: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    /// Counterfeit sales.
    #[arg(long)]
    ell: Option<String>,
    /// Acquisition cost.
    #[arg(long = "E")]
    cost: Option<String>,
    /// Token supply.
    #[arg(long)]
    supply: Option<String>,
    /// Candidate reward in tokens.
    #[arg(long)]
    reward: Option<String>,
    /// Future rewards.
    #[arg(long = "R")]
    future_rewards: Option<String>,
    /// Sweep one parameter: `NAME=START:END:STEP`, END inclusive.
    #[arg(long)]
    grid: Option<String>,
}

/// Parameters each formula reads, with defaults for the optional ones.
fn inputs(f: Formula) -> &'static [(&'static str, Option<&'static str>)] {
    match f {
        Formula::Liveness => &[("k", None), ("D", None), ("c", None), ("N", None)],
        Formula::Honest => &[("alpha", None), ("k", None), ("D", None)],
        Formula::Dishonest => &[
            ("p", None),
            ("beta", Some("1")),
            ("gamma", Some("0")),
            ("alpha", None),
            ("k", None),
            ("ell", Some("0")),
            ("D", None),
        ],
        Formula::Threshold => &[
            ("p", None),
            ("beta", Some("1")),
            ("gamma", Some("0")),
            ("k", Some("1")),
            ("ell", Some("0")),
        ],
        Formula::Contribution => &[("alpha", None), ("k", None), ("D", None), ("E", None)],
        Formula::MinPrice => &[("E", None), ("supply", None), ("k", None), ("reward", None)],
        Formula::UnitValue => &[("R", None), ("supply", None)],
    }
}

const COUNTS: [&str; 3] = ["k", "N", "ell"];
const FRACTIONS: [&str; 4] = ["alpha", "p", "beta", "gamma"];

type Values = BTreeMap<&'static str, Rational>;

impl EconArgs {
    fn given(&self) -> BTreeMap<&'static str, &str> {
        let all = [
            ("k", &self.k),
            ("D", &self.price),
            ("c", &self.check_cost),
            ("N", &self.elements),
            ("alpha", &self.alpha),
            ("p", &self.p_detect),
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("ell", &self.ell),
            ("E", &self.cost),
            ("supply", &self.supply),
            ("reward", &self.reward),
            ("R", &self.future_rewards),
        ];
        all.into_iter()
            .filter_map(|(name, v)| v.as_deref().map(|v| (name, v)))
            .collect()
    }
}

fn parse(name: &str, s: &str) -> Result<Rational, String> {
    parse_rational(s).map_err(|e| format!("--{name}: {e}"))
}

fn count(v: &Values, name: &str) -> Result<u64, String> {
    let r = &v[name];
    if !r.is_integer() || r.is_negative() {
        return Err(format!(
            "--{name} must be a non-negative integer, got {}",
            render_plain(r)
        ));
    }
    r.to_integer()
        .to_u64()
        .ok_or_else(|| format!("--{name} is too large"))
}

fn check(v: &Values) -> Result<(), String> {
    for (name, r) in v {
        if r.is_negative() {
            return Err(format!("--{name} must not be negative"));
        }
        if FRACTIONS.contains(name) && *r > Rational::one() {
            return Err(format!("--{name} must be in [0, 1]"));
        }
    }
    Ok(())
}

fn evaluate(f: Formula, v: &Values) -> Result<String, String> {
    check(v)?;
    for name in COUNTS {
        if v.contains_key(name) {
            count(v, name)?;
        }
    }
    let g = |n: &str| &v[n];
    let out = match f {
        Formula::Liveness => {
            economics::liveness_budget(count(v, "k")?, g("D"), g("c"), count(v, "N")?)
                .map(|r| render_plain(&r))
                .map_err(|e| e.to_string())?
        }
        Formula::Honest => render_plain(&economics::honest_ev(g("alpha"), count(v, "k")?, g("D"))),
        Formula::Dishonest => render_plain(&economics::dishonest_ev(
            g("p"),
            g("beta"),
            g("gamma"),
            g("alpha"),
            count(v, "k")?,
            count(v, "ell")?,
            g("D"),
        )),
        Formula::Threshold => economics::dishonest_alpha_threshold(
            g("p"),
            g("beta"),
            g("gamma"),
            count(v, "k")?,
            count(v, "ell")?,
        )
        .to_string(),
        Formula::Contribution => render_plain(&economics::contribution_ev(
            g("alpha"),
            count(v, "k")?,
            g("D"),
            g("E"),
        )),
        Formula::MinPrice => {
            economics::min_data_price(g("E"), g("supply"), count(v, "k")?, g("reward"))
                .map(|r| render_plain(&r))
                .map_err(|e| e.to_string())?
        }
        Formula::UnitValue => economics::token_unit_value(g("R"), g("supply"))
            .map(|r| render_plain(&r))
            .map_err(|e| e.to_string())?,
    };
    Ok(out)
}

fn parse_grid(spec: &str) -> Result<(String, Rational, Rational, Rational), String> {
    let bad = || format!("--grid expects NAME=START:END:STEP, got `{spec}`");
    let (name, range) = spec.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = range.split(':').collect();
    let [start, end, step] = parts.as_slice() else {
        return Err(bad());
    };
    let (start, end, step) = (parse(name, start)?, parse(name, end)?, parse(name, step)?);
    if !step.is_positive() {
        return Err("--grid step must be positive".into());
    }
    if end < start {
        return Err("--grid END must not be below START".into());
    }
    Ok((name.to_string(), start, end, step))
}

const MAX_GRID_ROWS: usize = 100_000;

pub fn cmd_econ(args: &EconArgs) -> Result<(), String> {
    let given = args.given();
    let wanted = inputs(args.formula);
    for name in given.keys() {
        if !wanted.iter().any(|(w, _)| w == name) {
            return Err(format!("--{name} is not used by {:?}", args.formula));
        }
    }
    let sweep = args.grid.as_deref().map(parse_grid).transpose()?;
    let mut values = Values::new();
    for (name, default) in wanted {
        let swept = sweep.as_ref().is_some_and(|(n, ..)| n == name);
        match (given.get(name), default) {
            _ if swept => {}
            (Some(s), _) => {
                values.insert(name, parse(name, s)?);
            }
            (None, Some(d)) => {
                values.insert(name, parse(name, d)?);
            }
            (None, None) => return Err(format!("{:?} needs --{name}", args.formula)),
        }
    }
    let Some((name, start, end, step)) = sweep else {
        println!("{}", evaluate(args.formula, &values)?);
        return Ok(());
    };
    let key = wanted
        .iter()
        .map(|(w, _)| *w)
        .find(|w| *w == name)
        .ok_or_else(|| format!("{:?} has no parameter `{name}` to sweep", args.formula))?;
    let rows = ((&end - &start) / &step)
        .floor()
        .to_integer()
        .to_usize()
        .unwrap_or(usize::MAX);
    if rows >= MAX_GRID_ROWS {
        return Err(format!("--grid would print more than {MAX_GRID_ROWS} rows"));
    }
    println!("{name}\t{:?}", args.formula);
    let mut x = start;
    while x <= end {
        values.insert(key, x.clone());
        println!("{}\t{}", render_plain(&x), evaluate(args.formula, &values)?);
        x += &step;
    }
    Ok(())
}
