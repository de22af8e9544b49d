use std::path::PathBuf;

use tdm_core::economics::{contribution_ev, parse_rational, render_fixed};
use tdm_core::protocol::log::EventLog;
use tdm_core::sim::{self, run_replicate, AgentSpec, ScenarioConfig, SimError, Strategy};
use tdm_core::{AgentId, Fraction, MonetaryAmount, TokenAmount};

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

fn mean_net(report: &sim::SimReport, agent: &str) -> String {
    report
        .agents
        .iter()
        .find(|a| a.id.as_str() == agent)
        .unwrap()
        .mean_net
        .clone()
}

#[test]
fn honest_maker_earns_its_ownership_share() {
    let cfg = scenario("maker_return");
    let report = sim::run(&cfg).unwrap();
    let row = &report.maker_return[0];
    assert_eq!(row.alpha.as_deref(), Some("1/101"));
    assert_eq!(row.sales, 10);
    let oracle = contribution_ev(
        &parse_rational("1/101").unwrap(),
        10,
        &parse_rational("1000").unwrap(),
        &parse_rational("50").unwrap(),
    );
    assert_eq!(render_fixed(&oracle), "49.009901");
    assert_eq!(row.closed_form, "49.009901");
    // each payout is rounded down to the micro-unit
    assert_eq!(row.realized, "49.009900");
    assert_eq!(mean_net(&report, "maker"), "49.009900");
}

#[test]
fn same_seed_same_report() {
    let cfg = scenario("mixed");
    let a = sim::run(&cfg).unwrap();
    let b = sim::run(&cfg).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    assert_eq!(a.event_log, b.event_log);
    let mut other = cfg.clone();
    other.master_seed += 1;
    assert_ne!(
        sim::run(&other).unwrap().final_state_digest,
        a.final_state_digest
    );
}

#[test]
fn mixed_scenario_exercises_every_strategy() {
    let report = sim::run(&scenario("mixed")).unwrap();
    let e = &report.events;
    assert!(e.proposals > 0 && e.accepted > 0 && e.rejected > 0, "{e:?}");
    assert!(e.challenges > 0 && e.upheld > 0 && e.dismissed > 0, "{e:?}");
    assert!(e.liveness_probes > 0 && e.liveness_passed > 0, "{e:?}");
    assert!(
        e.leaks == 40 && e.leaks_detected > 0 && e.leaks_detected < 40,
        "{e:?}"
    );
    assert!(e.memberships >= 40, "{e:?}");
    assert_eq!(mean_net(&report, "idle"), "0.000000");
    assert_eq!(report.comparisons.len(), 1);
}

#[test]
fn replicate_zero_log_replays_to_the_reported_digest() {
    let report = sim::run(&scenario("mixed")).unwrap();
    let log = EventLog::parse(report.event_log.as_deref().unwrap()).unwrap();
    let engine = log.replay().unwrap();
    assert_eq!(Some(engine.state_digest()), report.final_state_digest);
}

#[test]
fn liveness_probes_respect_the_budget() {
    let cfg = scenario("mixed");
    for i in 0..5 {
        let out = run_replicate(&cfg, i, false, None).unwrap();
        // k·D/c = 4·500/1 = 2000 checks shared over at least one element
        assert!(out.max_probes_per_element <= 2000);
        assert!(out.events.liveness_probes >= out.max_probes_per_element);
    }
}

#[test]
fn certain_detection_costs_the_leaker_the_price() {
    let mut cfg = scenario("mixed");
    cfg.p_detect = Fraction::ONE;
    cfg.replicates = 5;
    cfg.token_unit_value = MonetaryAmount::ZERO;
    cfg.agents
        .retain(|a| !matches!(a.strategy, Strategy::MembershipBuyer { .. }));
    let report = sim::run(&cfg).unwrap();
    let leaker = report
        .agents
        .iter()
        .find(|a| a.id.as_str() == "leaker")
        .unwrap();
    assert_eq!(leaker.min_net, "-500.000000");
    assert_eq!(leaker.max_net, "-500.000000");
}

#[test]
fn transaction_buyers_never_own_tokens() {
    let cfg = scenario("transaction");
    let out = run_replicate(&cfg, 0, false, None).unwrap();
    assert_eq!(out.events.access_payments, 5);
    assert_eq!(out.events.memberships, 0);
    for i in 0..5 {
        let buyer = AgentId::new(format!("buyer-{i:02}"));
        assert_eq!(out.cash[&buyer].micros(), -1_000_000_000);
        assert_eq!(out.nets[&buyer].micros(), -1_000_000_000);
    }
    assert_eq!(out.nets[&AgentId::new("bystander")].micros(), 0);
}

#[test]
fn sybil_duplicates_are_refused_with_dedup() {
    let mut cfg = scenario("sybil_defended");
    cfg.replicates = 20;
    let report = sim::run(&cfg).unwrap();
    assert!(report.events.duplicates_refused > 0);
    assert_eq!(
        report
            .agents
            .iter()
            .find(|a| a.id.as_str() == "sybil")
            .unwrap()
            .max_net,
        "0.000000"
    );
}

#[test]
fn sybil_profits_without_defenses() {
    let mut cfg = scenario("sybil_undefended");
    cfg.replicates = 20;
    let report = sim::run(&cfg).unwrap();
    let net = parse_rational(&mean_net(&report, "sybil")).unwrap();
    assert!(net > parse_rational("0").unwrap(), "{net}");
}

#[test]
fn madman_stops_after_its_budget() {
    let mut cfg = scenario("mixed");
    cfg.replicates = 3;
    for a in &mut cfg.agents {
        if let Strategy::Madman { loss_budget } = &mut a.strategy {
            *loss_budget = MonetaryAmount::ZERO;
        }
    }
    let capped = sim::run(&cfg).unwrap();
    let free = sim::run(&scenario_with_replicates("mixed", 3)).unwrap();
    assert!(
        capped.events.challenges < free.events.challenges,
        "{:?} vs {:?}",
        capped.events,
        free.events
    );
}

fn scenario_with_replicates(name: &str, n: u64) -> ScenarioConfig {
    let mut c = scenario(name);
    c.replicates = n;
    c
}

#[test]
fn invalid_configs_name_the_field() {
    let mut cfg = scenario("maker_return");
    cfg.agents.push(cfg.agents[0].clone());
    match sim::run(&cfg) {
        Err(SimError::Config { field, .. }) => assert_eq!(field, "agents[12].id"),
        other => panic!("{other:?}"),
    }
    let mut cfg = scenario("maker_return");
    cfg.beta = Fraction::from_micros(1_500_000);
    match sim::run(&cfg) {
        Err(SimError::Config { field, .. }) => assert_eq!(field, "beta"),
        other => panic!("{other:?}"),
    }
    let mut cfg = scenario("maker_return");
    cfg.agents.push(AgentSpec {
        id: AgentId::new("x"),
        strategy: Strategy::Troll {
            garbage_rate: Fraction::from_micros(2_000_000),
        },
        tokens: TokenAmount::ZERO,
        cash: MonetaryAmount::ZERO,
    });
    match sim::run(&cfg) {
        Err(SimError::Config { field, .. }) => {
            assert_eq!(field, "agents[12].strategy.garbage_rate")
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn depth_scan_from_config() {
    let report = sim::run(&scenario("depth_dilution")).unwrap();
    let rows = &report.depth_dilution;
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.verified && !r.degenerate));
    assert!(rows.windows(2).all(|w| w[1].cost < w[0].cost));
    assert_eq!(rows[0].cost, MonetaryAmount::from_units(1_333_400));
}
