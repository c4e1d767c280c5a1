//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{aggregation_checks, adam_first_step, formula_checks, forward_check, gradient_check, Check};
use fedcav_core::experiment::{self, eval_episodes, train_single, Command, EvalMode, ExperimentConfig, Overrides};
use fedcav_core::federation::{run_federation, FederationConfig};
use fedcav_core::metrics::IndicatorSet;
use fedcav_core::selection::{savings_report, SelectionConfig};
use fedcav_core::sim::EpisodeOptions;
use fedcav_core::{AggregationMode, PolicyParams};

const DENSITIES: [f64; 4] = [300.0, 900.0, 1500.0, 2100.0];
const RUNTIME_BUDGET: Duration = Duration::from_secs(600);

struct Verdict {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

impl Verdict {
    fn print(&self) {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        println!("{tag}  {} {}: {}", self.id, self.title, self.detail);
    }
}

fn per_seed(cfg: &ExperimentConfig, params: Option<&PolicyParams>, mode: EvalMode, density: f64) -> Vec<IndicatorSet> {
    eval_episodes(cfg, params, mode, density, EpisodeOptions::default())
        .unwrap()
        .iter()
        .map(|log| IndicatorSet::from_log(log, &cfg.sim).unwrap())
        .collect()
}

fn c1_rule_safety(base: &ExperimentConfig) -> Verdict {
    let start = Instant::now();
    let mut cfg = base.clone();
    cfg.evaluation.episodes = 10;
    cfg.evaluation.steps = 2000;
    let mut parts = Vec::new();
    let mut total = 0;
    for d in DENSITIES {
        let n: u64 = per_seed(&cfg, None, EvalMode::Rule, d).iter().map(|i| i.n_collision).sum();
        total += n;
        parts.push(format!("{d}:{n}"));
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict {
        id: "C1",
        title: "rule safety",
        pass: total == 0 && secs < 60.0,
        detail: format!("collisions per density [{}] over 10 seeds x 2000 steps, {secs:.1}s (limit 0, < 60s)", parts.join(" ")),
    }
}

/// C2 and C3 share the four single-intersection models.
fn c2_c3(base: &ExperimentConfig) -> (Verdict, Verdict) {
    let mut cfg = base.clone();
    cfg.evaluation.episodes = 5;
    let mut mixed = Vec::new();
    let mut comfort = Vec::new();
    let mut c3_pass = true;
    let mut max_steps = 0;
    for d in DENSITIES {
        let t = train_single(&cfg, d, SelectionConfig::default(), &format!("il/{d}")).unwrap();
        max_steps = max_steps.max(t.train_steps());
        let mix: u64 = per_seed(&cfg, Some(&t.params), EvalMode::ModelRule, d).iter().map(|i| i.n_collision).sum();
        mixed.push(format!("{d}:{mix}"));

        let rule = per_seed(&cfg, None, EvalMode::Rule, d);
        let model = per_seed(&cfg, Some(&t.params), EvalMode::Model, d);
        let wins = rule.iter().zip(&model).filter(|(r, m)| m.discomfort < r.discomfort).count();
        let mean = |xs: &[IndicatorSet]| xs.iter().map(|i| i.discomfort).sum::<f64>() / xs.len() as f64;
        let reduction = 100.0 * (1.0 - mean(&model) / mean(&rule));
        let ok = wins >= 4 && reduction >= 30.0;
        c3_pass &= ok;
        comfort.push(format!(
            "{d}: J rule {:.1} model {:.1}, wins {wins}/5, reduction {reduction:.1}%{}",
            mean(&rule),
            mean(&model),
            if ok { "" } else { " (short)" }
        ));
    }
    let c2_pass = mixed.iter().all(|s| s.ends_with(":0")) && max_steps <= 6000;
    (
        Verdict {
            id: "C2",
            title: "mixed-policy safety",
            pass: c2_pass,
            detail: format!(
                "eps=0.5 collisions at training density [{}] over 5 seeds after {max_steps} steps (limit 0, <= 6000 steps)",
                mixed.join(" ")
            ),
        },
        Verdict {
            id: "C3",
            title: "IL comfort gain",
            pass: c3_pass,
            detail: format!("{} (need >= 4/5 wins and >= 30% at every density)", comfort.join("; ")),
        },
    )
}

fn c4_density_aware(base: &ExperimentConfig) -> Verdict {
    let mut cfg = base.clone();
    let mut wins = 0;
    let mut pairs = Vec::new();
    let seeds = 0..5u64;
    let n = seeds.end as usize;
    for seed in seeds {
        cfg.seed = seed;
        let j = |mode| {
            let fed = FederationConfig {
                mode,
                ..cfg.federation.clone()
            };
            let log = run_federation(&fed, &cfg.sim, &cfg.rules, &cfg.training, seed).unwrap();
            let runs = per_seed(&cfg, Some(log.final_global()), EvalMode::Model, 2100.0);
            runs.iter().map(|i| i.discomfort).sum::<f64>() / runs.len() as f64
        };
        let (js, jd) = (j(AggregationMode::SameProportion), j(AggregationMode::DensityAware));
        if jd < js {
            wins += 1;
        }
        pairs.push(format!("{jd:.1}/{js:.1}"));
    }
    Verdict {
        id: "C4",
        title: "density-aware aggregation gain",
        pass: 2 * wins > n,
        detail: format!(
            "J at 2100 density/same per seed [{}], density-aware lower on {wins}/{n} (need majority)",
            pairs.join(" ")
        ),
    }
}

fn c5_selection(base: &ExperimentConfig) -> Verdict {
    let sc = &base.selection;
    let mut rows = Vec::new();
    for p in [0.01, 0.02, 0.05, 0.10] {
        let t = train_single(base, sc.density, sc.selection(p), "sweep").unwrap();
        let s = savings_report(&t.selector.log, 6000).unwrap();
        rows.push((p, s, t.converged_at()));
    }
    let monotone = rows.windows(2).all(|w| w[1].1 >= w[0].1);
    let top = rows[3].1;
    let converged = rows.iter().all(|r| r.2.is_some());
    let cells: Vec<String> = rows
        .iter()
        .map(|(p, s, c)| format!("p={p}: {s:.2}% conv@{}", c.map_or("none".into(), |c| c.to_string())))
        .collect();
    Verdict {
        id: "C5",
        title: "selection savings",
        pass: monotone && (8.0..=13.0).contains(&top) && converged,
        detail: format!(
            "[{}] monotone={monotone}, p=10% in [8,13]={}, all converged={converged}",
            cells.join(", "),
            (8.0..=13.0).contains(&top)
        ),
    }
}

fn from_checks(id: &'static str, title: &'static str, checks: &[Check]) -> Verdict {
    let detail = checks.iter().map(Check::line).collect::<Vec<_>>().join("; ");
    Verdict {
        id,
        title,
        pass: checks.iter().all(Check::pass),
        detail,
    }
}

fn c6_formulas() -> Verdict {
    let mut checks = formula_checks(10_000, 2024);
    checks.push(forward_check(100, 2025));
    let grads: Vec<Check> = (0..3).map(gradient_check).collect();
    let worst = grads.iter().map(|c| c.worst).fold(0.0, f64::max);
    checks.push(Check::new("gradient", worst, 1e-3));
    checks.push(adam_first_step(2026));
    from_checks("C6", "formula oracles", &checks)
}

fn c7_aggregation() -> Verdict {
    from_checks("C7", "aggregation algebra", &aggregation_checks(1000, 2027))
}

fn artifact_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for cmd in ["simulate", "train_il", "train_fl", "sweep_selection", "evaluate"] {
        let m: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.join(format!("{cmd}.manifest.json"))).unwrap()).unwrap();
        for (k, v) in m["files"].as_object().unwrap() {
            if k.ends_with(".csv") || k.ends_with(".json") {
                out.insert(format!("{cmd}:{k}"), v["sha256"].as_str().unwrap().to_string());
            }
        }
    }
    out
}

fn c8_determinism(cfg: &ExperimentConfig) -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let run_all = |dir: &Path| {
        let ov = Overrides::default();
        for cmd in [Command::Simulate, Command::TrainIl, Command::TrainFl, Command::SweepSelection] {
            experiment::run(cmd, cfg, &ov, dir).unwrap();
        }
        let ev = Overrides {
            model: Some(dir.join("il/model_d2100.bin")),
            ..Overrides::default()
        };
        experiment::run(Command::Evaluate, cfg, &ev, dir).unwrap();
        artifact_hashes(dir)
    };
    let a = run_all(&tmp.path().join("a"));
    let b = run_all(&tmp.path().join("b"));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    Verdict {
        id: "C8",
        title: "determinism",
        pass: a.len() == b.len() && differing.is_empty() && !a.is_empty(),
        detail: format!(
            "{} CSV/JSON artifacts across 5 subcommands, {} differ between reruns",
            a.len(),
            differing.len()
        ),
    }
}

fn main() -> ExitCode {
    let cfg = ExperimentConfig::default();
    let start = Instant::now();
    let mut verdicts = vec![c1_rule_safety(&cfg)];
    verdicts.last().unwrap().print();
    let (c2, c3) = c2_c3(&cfg);
    c2.print();
    c3.print();
    verdicts.extend([c2, c3]);
    type Run = fn(&ExperimentConfig) -> Verdict;
    let rest: [Run; 5] = [c4_density_aware, c5_selection, |_| c6_formulas(), |_| c7_aggregation(), c8_determinism];
    for run in rest {
        let v = run(&cfg);
        v.print();
        verdicts.push(v);
    }
    let elapsed = start.elapsed();
    let c9 = Verdict {
        id: "C9",
        title: "desk-scale runtime",
        pass: elapsed < RUNTIME_BUDGET,
        detail: format!("criteria 1-8 took {:.1}s (limit {}s)", elapsed.as_secs_f64(), RUNTIME_BUDGET.as_secs()),
    };
    c9.print();
    verdicts.push(c9);

    let failed: Vec<&str> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    println!(
        "acceptance: {}/{} criteria pass{}",
        verdicts.len() - failed.len(),
        verdicts.len(),
        if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(" ")) }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
