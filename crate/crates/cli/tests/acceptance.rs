//! Acceptance gate: one PASS/FAIL line per criterion, with the individual
//! checks listed underneath. Exits nonzero if any criterion fails.

#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use horizon_cli::batch::{self, BatchConfig, BatchOutput, METRICS_COLUMNS};
use horizon_cli::HumanPolicy;
use horizon_core::belief::{
    init_beliefs, intensity_grid, BeliefState, CellTier, EvidenceEvent, IntensityGrid, IntensityRow, ModelParams,
    VisualParams,
};
use horizon_core::catalog::{pareto_report, TaskCatalog};
use horizon_core::conformance::conformance_appendix_a;
use horizon_core::convergence::{ConvergenceSnapshot, MIN_WIDTH_PERCENT};
use horizon_core::domain::{
    Caps, IssueId, Offer, OptionIndex, Role, SessionLog, TaskIssue, Timing, Turn, OPTIONS_PER_ISSUE,
};
use horizon_core::metrics::sequence_entropy;
use horizon_core::session::replay;
use horizon_core::store::{decode_log, encode_session};
use horizon_core::{ScriptedAgent, SessionConfig};
use oracle::Ev;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// One criterion's verdict plus a line per check.
struct Criterion {
    name: &'static str,
    lines: Vec<String>,
    failed: bool,
}

impl Criterion {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            lines: Vec::new(),
            failed: false,
        }
    }

    fn check(&mut self, ok: bool, detail: impl Into<String>) {
        self.failed |= !ok;
        self.lines
            .push(format!("    {} {}", if ok { "ok  " } else { "FAIL" }, detail.into()));
    }

    fn within(&mut self, name: &str, actual: f64, expected: f64, tol: f64) {
        let ok = (actual - expected).abs() <= tol;
        self.check(ok, format!("{name}: {actual:.4} (expected {expected} ±{tol})"));
    }

    fn exact(&mut self, name: &str, actual: f64, expected: f64) {
        self.check(
            actual == expected,
            format!("{name}: {actual} (expected exactly {expected})"),
        );
    }

    fn report(&self) -> String {
        let mut out = format!("{} {}\n", if self.failed { "FAIL" } else { "PASS" }, self.name);
        for line in &self.lines {
            let _ = writeln!(out, "{line}");
        }
        out
    }
}

fn shipped_task(n: usize) -> Vec<TaskIssue> {
    TaskCatalog::shipped().issues()[..n].to_vec()
}

fn appendix_a() -> Criterion {
    let mut c = Criterion::new("appendix_a_golden_conformance");
    let started = Instant::now();
    let report = conformance_appendix_a();
    let elapsed = started.elapsed();
    let value = |name: &str| report.check(name).map(|ch| ch.actual).unwrap_or(f64::NAN);
    c.within("boundary_confidence", value("boundary_confidence"), 0.92, 0.01);
    c.within("s_consistency", value("s_consistency"), 0.86, 0.02);
    c.exact("agent_weight", value("agent_weight"), 1.0);
    c.within("eta", value("eta"), 2.59, 0.01);
    c.within("posterior_option_5", value("posterior_option_5"), 0.52, 0.01);
    c.within("posterior_option_4", value("posterior_option_4"), 0.45, 0.01);
    c.exact("intensity_option_5", value("intensity_option_5"), 0.6);
    c.exact("intensity_option_2", value("intensity_option_2"), 0.0);
    c.check(
        report.passed(),
        format!("all {} report checks pass", report.checks.len()),
    );
    c.check(elapsed < Duration::from_secs(1), format!("runtime {elapsed:?} < 1s"));
    c
}

fn table_1() -> Criterion {
    let mut c = Criterion::new("table_1_fixture");
    let catalog = TaskCatalog::shipped();
    let Some(fixture) = catalog.fixture() else {
        c.check(false, "fixture issue present");
        return c;
    };
    let m = &fixture.payoffs;
    let report = pareto_report(m);
    // Recomputed here from the raw columns.
    let joint: Vec<f64> = (0..OPTIONS_PER_ISSUE)
        .map(|j| m.human_payoffs[j] + m.agent_payoffs[j])
        .collect();
    let expected = [100.0, 100.0, 110.0, 120.0, 130.0, 135.0, 130.0];
    c.check(joint == expected, format!("joint payoffs from columns {joint:?}"));
    c.check(
        report.joint_payoffs == expected,
        format!("report joint payoffs {:?}", report.joint_payoffs),
    );
    c.check(
        report.joint_optimum_index.label() == 6 && report.joint_optimum_value == 135.0,
        format!(
            "joint optimum label {} = {}",
            report.joint_optimum_index.label(),
            report.joint_optimum_value
        ),
    );
    c.exact("midpoint shortfall", report.shortfall(OptionIndex::MIDDLE), 15.0);
    c
}

fn event(task: &[TaskIssue], issue: usize, agent: bool, option: usize, r: f64, turn: u32) -> EvidenceEvent {
    EvidenceEvent {
        issue_id: task[issue].id().clone(),
        proposer: if agent { Role::Agent } else { Role::Human },
        proposed: OptionIndex::new(option).unwrap(),
        turn_number: turn,
        r_concession: r,
    }
}

fn pmf_normalization(c: &mut Criterion) {
    let task = shipped_task(3);
    let params = ModelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst: f64 = 0.0;
    let mut updates = 0usize;
    let mut in_range = true;
    for _ in 0..10_000 {
        let mut state = init_beliefs(task.iter().map(|t| t.id().clone()));
        let len = rng.gen_range(1..40);
        for k in 0..len {
            let agent = rng.gen_bool(0.5);
            let r = if agent { 0.0 } else { rng.gen_range(0.0..1.0) };
            let ev = event(
                &task,
                rng.gen_range(0..3),
                agent,
                rng.gen_range(0..OPTIONS_PER_ISSUE),
                r,
                k + 1,
            );
            state.apply(&ev, &params).unwrap();
            updates += 1;
            for belief in &state.issues {
                worst = worst.max((belief.pmf.iter().sum::<f64>() - 1.0).abs());
                in_range &= belief.pmf.iter().all(|p| (0.0..=1.0).contains(p));
            }
        }
    }
    c.check(
        worst <= 1e-9 && in_range,
        format!("pmf normalization: 10000 sequences, {updates} updates, max |sum-1| = {worst:.2e} (tol 1e-9)"),
    );
}

fn mismatch(state: &BeliefState, task: &[TaskIssue], events: &[Ev]) -> f64 {
    let views = oracle::evaluate(events, task.len());
    let grid = intensity_grid(state, task, &VisualParams::default()).unwrap();
    let mut worst: f64 = 0.0;
    for (i, view) in views.iter().enumerate() {
        let belief = state.issue(task[i].id()).unwrap();
        if belief.zopa.map(|z| (z.lower.get(), z.upper.get())) != view.zopa {
            return f64::INFINITY;
        }
        worst = worst.max((belief.boundary_confidence - view.confidence).abs());
        for j in 0..oracle::K {
            worst = worst.max((belief.pmf[j] - view.pmf[j]).abs());
            worst = worst.max((grid.rows[i].intensities[j] - oracle::intensity(view, &task[i], j)).abs());
        }
    }
    worst
}

/// Every sequence over `alphabet` of length <= depth, extending `events`.
fn walk(
    state: &BeliefState,
    task: &[TaskIssue],
    events: &mut Vec<Ev>,
    depth: usize,
    alphabet: &[Ev],
    params: &ModelParams,
) -> (usize, f64) {
    let mut worst = mismatch(state, task, events);
    let mut visited = 1;
    if depth == 0 {
        return (visited, worst);
    }
    for ev in alphabet {
        let mut next = state.clone();
        next.apply(
            &event(task, ev.issue, ev.agent, ev.option, ev.r, events.len() as u32 + 1),
            params,
        )
        .unwrap();
        events.push(*ev);
        let (v, w) = walk(&next, task, events, depth - 1, alphabet, params);
        events.pop();
        visited += v;
        worst = worst.max(w);
    }
    (visited, worst)
}

fn oracle_equivalence(c: &mut Criterion) {
    let task = shipped_task(3);
    let params = ModelParams::default();
    let root = init_beliefs(task.iter().map(|t| t.id().clone()));
    let mut agent_moves = Vec::new();
    for issue in 0..3 {
        for option in 0..OPTIONS_PER_ISSUE {
            agent_moves.push(Ev {
                issue,
                agent: true,
                option,
                r: 0.0,
            });
        }
    }
    // Agent proposals drive the boundary and weights; enumerate all of them.
    let (visited, worst) = agent_moves
        .par_iter()
        .map(|first| {
            let mut state = root.clone();
            state
                .apply(&event(&task, first.issue, first.agent, first.option, 0.0, 1), &params)
                .unwrap();
            let mut events = vec![*first];
            walk(&state, &task, &mut events, 4, &agent_moves, &params)
        })
        .reduce(|| (1, mismatch(&root, &task, &[])), |a, b| (a.0 + b.0, a.1.max(b.1)));
    c.check(
        worst <= 1e-9,
        format!("oracle, all agent histories of length <= 5 on 3 issues: {visited} states, max deviation {worst:.2e}"),
    );

    // Mixed proposers over a reduced alphabet with discrete concession rates.
    let mut mixed = Vec::new();
    for issue in 0..3 {
        for option in [0, 3, 4, 6] {
            mixed.push(Ev {
                issue,
                agent: true,
                option,
                r: 0.0,
            });
        }
        for (option, r) in [(1, 0.0), (5, 0.4), (2, 1.0)] {
            mixed.push(Ev {
                issue,
                agent: false,
                option,
                r,
            });
        }
    }
    let (visited, worst) = mixed
        .par_iter()
        .map(|first| {
            let mut state = root.clone();
            state
                .apply(
                    &event(&task, first.issue, first.agent, first.option, first.r, 1),
                    &params,
                )
                .unwrap();
            let mut events = vec![*first];
            walk(&state, &task, &mut events, 4, &mixed, &params)
        })
        .reduce(|| (1, 0.0), |a, b| (a.0 + b.0, a.1.max(b.1)));
    c.check(
        worst <= 1e-9,
        format!(
            "oracle, mixed-proposer histories of length <= 5 on 3 issues: {visited} states, max deviation {worst:.2e}"
        ),
    );
}

fn log_from_choices(task: &[TaskIssue], rows: &[Vec<usize>]) -> SessionLog {
    let turns = rows
        .iter()
        .enumerate()
        .map(|(k, row)| Turn {
            turn_number: k as u32 + 1,
            human_offer: Offer::new(
                Role::Human,
                task.iter()
                    .zip(row)
                    .map(|(t, &o)| (t.id().clone(), OptionIndex::new(o).unwrap()))
                    .collect(),
            ),
            agent_offer: None,
            timing: Timing::default(),
        })
        .collect();
    SessionLog {
        session_id: "fuzz".into(),
        dimensionality: task.len(),
        task: task.to_vec(),
        turns,
        outcome: None,
        caps: Caps::default(),
    }
}

fn entropy_properties(c: &mut Criterion) {
    let task = shipped_task(3);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let max = (OPTIONS_PER_ISSUE as f64).log2();
    let (mut bounded, mut invariant) = (true, true);
    for _ in 0..1_000 {
        let turns = rng.gen_range(1..16);
        let rows: Vec<Vec<usize>> = (0..turns)
            .map(|_| (0..3).map(|_| rng.gen_range(0..OPTIONS_PER_ISSUE)).collect())
            .collect();
        let h = sequence_entropy(&log_from_choices(&task, &rows));
        bounded &= (0.0..=max + 1e-12).contains(&h);
        let mut shuffled = rows.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        invariant &= (sequence_entropy(&log_from_choices(&task, &shuffled)) - h).abs() <= 1e-12;
    }
    c.check(bounded, "entropy within [0, log2 7] over 1000 fuzzed logs");
    c.check(
        invariant,
        "entropy invariant under turn permutation over 1000 fuzzed logs",
    );
}

fn tiers_grid(masks: &[u32]) -> IntensityGrid {
    IntensityGrid {
        rows: masks
            .iter()
            .enumerate()
            .map(|(i, &mask)| IntensityRow {
                issue_id: IssueId::new(format!("i{i}")),
                intensities: [0.0; OPTIONS_PER_ISSUE],
                tiers: std::array::from_fn(|j| {
                    if mask & (1 << j) != 0 {
                        CellTier::Promising
                    } else {
                        CellTier::Acceptable
                    }
                }),
                zopa: None,
            })
            .collect(),
    }
}

fn width_properties(c: &mut Criterion) {
    let width =
        |task: &[TaskIssue], masks: &[u32]| ConvergenceSnapshot::compute(&tiers_grid(masks), task).width_percentage;
    let in_bounds = |w: f64| (MIN_WIDTH_PERCENT..=100.0).contains(&w);

    let task = shipped_task(1);
    let mut ok = true;
    for mask in 0..(1u32 << OPTIONS_PER_ISSUE) {
        let w = width(&task, &[mask]);
        ok &= in_bounds(w);
        for j in 0..OPTIONS_PER_ISSUE {
            ok &= width(&task, &[mask | (1 << j)]) >= w;
        }
    }
    c.check(ok, "width bounded and monotone, exhaustive over 128 single-issue grids");

    let task = shipped_task(7);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ok = true;
    for _ in 0..5_000 {
        let masks: Vec<u32> = (0..7).map(|_| rng.gen_range(0..128)).collect();
        let w = width(&task, &masks);
        ok &= in_bounds(w);
        let mut more = masks.clone();
        more[rng.gen_range(0..7)] |= 1 << rng.gen_range(0..OPTIONS_PER_ISSUE);
        ok &= width(&task, &more) >= w;
    }
    c.check(
        ok,
        format!("width bounded in [{MIN_WIDTH_PERCENT:.4}, 100] and monotone over 5000 sampled 7-issue grids"),
    );
}

fn replay_determinism(c: &mut Criterion, batch: &BatchOutput) {
    let mut identical = 0;
    let mut checked = 0;
    for text in batch.logs.values().take(100) {
        checked += 1;
        let stored = decode_log(text).unwrap();
        let h = &stored.header;
        let config = SessionConfig {
            caps: h.caps,
            ..SessionConfig::new(h.session_id.clone(), h.condition, h.agent, h.seed)
        };
        let mut agent = ScriptedAgent::new(h.seed);
        let Ok(mut session) = replay(&stored.to_log(), config, &mut agent) else {
            continue;
        };
        let Ok(metrics) = session.finalize(None) else {
            continue;
        };
        if encode_session(&session, &metrics) == *text {
            identical += 1;
        }
    }
    c.check(
        checked == 100 && identical == checked,
        format!("{identical}/{checked} stored scripted sessions replay to byte-identical logs"),
    );
}

fn leak_scan(c: &mut Criterion, batch: &BatchOutput, doubled: &BatchOutput) {
    let catalog = TaskCatalog::shipped();
    let mut hits = 0;
    for line in &batch.traffic {
        if line.contains("agent_payoffs") {
            hits += 1;
        }
        for issue in catalog.issues() {
            let col = &issue.payoffs.agent_payoffs;
            let ints: Vec<String> = col.iter().map(|v| format!("{v}")).collect();
            let floats: Vec<String> = col.iter().map(|v| format!("{v:?}")).collect();
            if line.contains(&format!("[{}]", ints.join(","))) || line.contains(&format!("[{}]", floats.join(","))) {
                hits += 1;
            }
        }
    }
    c.check(
        hits == 0,
        format!(
            "{} traffic lines scanned, {hits} agent payoff occurrences",
            batch.traffic.len()
        ),
    );
    c.check(
        batch.traffic == doubled.traffic,
        "traffic byte-identical when every agent payoff is doubled",
    );
}

fn property_suites(batch: &BatchOutput, doubled: &BatchOutput) -> Criterion {
    let mut c = Criterion::new("property_suites");
    pmf_normalization(&mut c);
    oracle_equivalence(&mut c);
    entropy_properties(&mut c);
    width_properties(&mut c);
    replay_determinism(&mut c, batch);
    leak_scan(&mut c, batch, doubled);
    c
}

fn performance() -> Criterion {
    let mut c = Criterion::new("performance_n7");
    let task = shipped_task(7);
    let params = ModelParams::default();
    let visual = VisualParams::default();
    let mut state = init_beliefs(task.iter().map(|t| t.id().clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = Duration::ZERO;
    let mut total = Duration::ZERO;
    let turns = 15;
    for turn in 1..=turns {
        let started = Instant::now();
        for agent in [false, true] {
            for issue in 0..7 {
                let r = if agent { 0.0 } else { rng.gen_range(0.0..1.0) };
                let ev = event(&task, issue, agent, rng.gen_range(0..OPTIONS_PER_ISSUE), r, turn);
                state.apply(&ev, &params).unwrap();
            }
        }
        let grid = intensity_grid(&state, &task, &visual).unwrap();
        let snap = ConvergenceSnapshot::compute(&grid, &task);
        std::hint::black_box(snap);
        let elapsed = started.elapsed();
        worst = worst.max(elapsed);
        total += elapsed;
    }
    c.check(
        worst <= Duration::from_millis(1_400),
        format!(
            "worst turn {worst:?} <= 1.4s over {turns} turns (mean {:?})",
            total / turns
        ),
    );
    c.check(
        worst <= Duration::from_millis(50),
        format!("worst turn {worst:?} <= 50ms target"),
    );
    c
}

fn batch_harness(config: &BatchConfig, output: &BatchOutput, elapsed: Duration) -> Criterion {
    let mut c = Criterion::new("batch_harness");
    c.check(
        elapsed < Duration::from_secs(60),
        format!(
            "{} sessions over n in {:?}, {} reps, {} policies in {elapsed:?} < 60s",
            output.rows.len(),
            config.dimensionalities,
            config.repetitions,
            config.policies.len()
        ),
    );
    for policy in &config.policies {
        let rows = output.rows.iter().filter(|r| r.policy == *policy).count();
        c.check(rows == 80, format!("{policy}: {rows} metrics rows (expected 80)"));
    }

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    batch::write_outputs(output, &a).unwrap();
    let again = batch::run_batch(config).unwrap();
    batch::write_outputs(&again, &b).unwrap();
    let read = |p: std::path::PathBuf| std::fs::read_to_string(p).unwrap_or_default();
    let metrics = read(a.join("metrics.csv"));
    let header = metrics.lines().next().unwrap_or_default();
    c.check(
        header == METRICS_COLUMNS.join(","),
        format!("metrics.csv header has the {} stable columns", METRICS_COLUMNS.len()),
    );
    let same = ["metrics.csv", "summary.csv", "traffic.jsonl"]
        .iter()
        .all(|f| read(a.join(f)) == read(b.join(f)));
    c.check(
        same && output.logs == again.logs,
        "same config twice gives identical files",
    );

    let empty = batch::run_batch(&BatchConfig {
        repetitions: 0,
        ..config.clone()
    })
    .unwrap();
    let e = dir.path().join("empty");
    batch::write_outputs(&empty, &e).unwrap();
    c.check(
        read(e.join("metrics.csv")) == format!("{header}\n"),
        "zero repetitions give a header-only table",
    );

    let regressions = batch::turn_count_regressions(&output.summary);
    for row in &output.summary {
        c.lines.push(format!(
            "         {:<20} n={} mean_total_turns={:.2} agreements={}/{}",
            row.policy, row.dimensionality, row.mean_total_turns, row.agreements, row.sessions
        ));
    }
    c.check(
        regressions.is_empty(),
        format!("mean total_turns non-decreasing in n for every stock policy (regressions: {regressions:?})"),
    );
    c
}

fn doubled_agent_catalog() -> TaskCatalog {
    let issues = TaskCatalog::shipped()
        .issues()
        .iter()
        .cloned()
        .map(|mut issue| {
            for p in issue.payoffs.agent_payoffs.iter_mut() {
                *p *= 2.0;
            }
            issue
        })
        .collect();
    TaskCatalog::new(issues).unwrap()
}

fn main() {
    let config = BatchConfig {
        dimensionalities: vec![1, 3, 5, 7],
        repetitions: 20,
        policies: HumanPolicy::ALL.to_vec(),
        ..BatchConfig::default()
    };
    let started = Instant::now();
    let output = batch::run_batch(&config).expect("batch runs");
    let elapsed = started.elapsed();
    let doubled = batch::run_batch_with(&config, doubled_agent_catalog(), horizon_service::scripted_only())
        .expect("batch runs on the rescaled catalog");

    let criteria = [
        appendix_a(),
        table_1(),
        property_suites(&output, &doubled),
        performance(),
        batch_harness(&config, &output, elapsed),
    ];
    let mut failed = 0;
    println!();
    for c in &criteria {
        print!("{}", c.report());
        failed += c.failed as usize;
    }
    println!("\nacceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
