//! End-to-end toy replication: two seeds of each objective, every curve and
//! grid, and a pass/fail report of the directional checks.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use replab::analysis::{augmentation_invariance, class_structure_cka, internal_structure, LayerCurve, ParityFilter};
use replab::ingest::{atomic_write_str, write_labels};
use replab::probe::{probe_curve, ProbeConfig, ProbeResult};
use replab::similarity::diag_max_curve;
use replab::toytrain::ToyConfig;
use replab::{CkaMatrix, Error, Method, Parity, Result};
use serde::Serialize;

use crate::commands::{curves_svg, run_toy, write_toy_run, ToyRun};
use crate::svg::{heatmap, HeatmapStyle};
use crate::table::{cka_matrix_table, curve_table, diag_max_table, fmt_num, probe_table};

pub const SEEDS: [u64; 2] = [0, 1];
pub const METHODS: [Method; 2] = [Method::Supervised, Method::Contrastive];

/// Minimum cross-seed even-layer diagonal mean for each method.
pub const CROSS_SEED_MIN: f64 = 0.8;
/// Minimum rise of contrastive invariance from the first even layer to the
/// last head layer; the supervised model must stay below it.
pub const INVARIANCE_RISE: f64 = 0.1;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub id: String,
    pub description: String,
    /// Named quantities the verdict is computed from.
    pub values: Vec<(String, f64)>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
    /// Wall time; kept out of the written report so reruns are byte-identical.
    #[serde(skip)]
    pub seconds: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let values: Vec<String> = c.values.iter().map(|(k, v)| format!("{k}={}", fmt_num(*v))).collect();
            let _ = writeln!(
                s,
                "{} {}: {} [{}]",
                if c.passed { "PASS" } else { "FAIL" },
                c.id,
                c.description,
                values.join(", ")
            );
        }
        let _ = writeln!(
            s,
            "{} of {} checks passed",
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len()
        );
        s
    }
}

/// Maps on scoped threads, keeping input order.
fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    std::thread::scope(|s| {
        let handles: Vec<_> = items.iter().map(|x| s.spawn(|| f(x))).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn value_at(curve: &LayerCurve, pick: impl Fn(&LayerCurve) -> Option<f64>, what: &str) -> Result<f64> {
    pick(curve).ok_or_else(|| Error::DegenerateRepresentation(format!("{what} is undefined")))
}

fn first_even(c: &LayerCurve) -> Option<f64> {
    c.first_of(Parity::Even).and_then(|p| p.value)
}

fn last_even(c: &LayerCurve) -> Option<f64> {
    c.last_of(Parity::Even).and_then(|p| p.value)
}

fn last_head(c: &LayerCurve) -> Option<f64> {
    c.last_of(Parity::Head).and_then(|p| p.value)
}

fn diag_mean(grid: &CkaMatrix, what: &str) -> Result<f64> {
    grid.diagonal_mean()
        .ok_or_else(|| Error::DegenerateRepresentation(format!("{what}: no defined diagonal cell")))
}

fn probe_at(results: &[ProbeResult], layer: Option<usize>) -> Option<f64> {
    results
        .iter()
        .find(|r| Some(r.tag.layer_index) == layer && r.tag.parity == Parity::Even)
        .map(|r| r.test_accuracy)
}

fn write_grid(dir: &Path, name: &str, grid: &CkaMatrix, title: &str) -> Result<()> {
    cka_matrix_table(grid).write(&dir.join(format!("{name}.csv")))?;
    let style = HeatmapStyle {
        title: Some(title.to_string()),
        ..HeatmapStyle::default()
    };
    atomic_write_str(&dir.join(format!("{name}.svg")), &heatmap(grid, &style))
}

/// Runs the replication under `cfg` (seeds are overridden) and writes every
/// artifact plus `report.txt` and `report.json` to `out_dir`.
pub fn cmd_replicate(cfg: &ToyConfig, out_dir: &Path) -> Result<Report> {
    let start = Instant::now();
    cfg.validate()?;
    let jobs: Vec<(Method, u64)> = METHODS.iter().flat_map(|&m| SEEDS.iter().map(move |&s| (m, s))).collect();
    let runs = par_map(&jobs, |&(m, s)| run_toy(&cfg.clone().with_seed(s), m))
        .into_iter()
        .collect::<Result<Vec<ToyRun>>>()?;
    let run = |m: Method, s: u64| -> &ToyRun {
        &runs[jobs.iter().position(|&j| j == (m, s)).expect("every job ran")]
    };
    let labels = &runs[0].labels;
    let probe_cfg = ProbeConfig::default();

    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    for r in &runs {
        write_toy_run(r, &out_dir.join("runs").join(&r.info.model_id), &cfg.clone().with_seed(r.info.seed))?;
    }
    write_labels(labels, &out_dir.join("labels.npy"))?;

    let mut checks = Vec::new();

    // a. cross-seed stability
    let mut values = Vec::new();
    for m in METHODS {
        let grid = internal_structure(&run(m, 0).eval, &run(m, 1).eval, ParityFilter::Even)?;
        write_grid(out_dir, &format!("cka_{m}_s0_vs_s1_even"), &grid, &format!("{m}: seed 0 vs seed 1, even layers"))?;
        values.push((format!("{m}_diag_mean"), diag_mean(&grid, "cross-seed grid")?));
    }
    checks.push(Check {
        id: "7a".into(),
        description: format!("cross-seed even-layer diagonal mean CKA >= {CROSS_SEED_MIN} for each method"),
        passed: values.iter().all(|(_, v)| *v >= CROSS_SEED_MIN),
        values,
    });

    // b. cross-method: post-residual layers agree more than residual ones
    let mut even_means = Vec::new();
    let mut odd_means = Vec::new();
    for s in SEEDS {
        let (sl, cl) = (&run(Method::Supervised, s).eval, &run(Method::Contrastive, s).eval);
        for (parity, filter, acc) in [
            (Parity::Even, ParityFilter::Even, &mut even_means),
            (Parity::Odd, ParityFilter::Odd, &mut odd_means),
        ] {
            let grid = internal_structure(sl, cl, filter)?;
            let name = format!("cka_supervised_vs_contrastive_s{s}_{parity}");
            write_grid(out_dir, &name, &grid, &format!("supervised vs contrastive, seed {s}, {parity} layers"))?;
            diag_max_table(&diag_max_curve(&grid)?).write(&out_dir.join(format!("diagmax_s{s}_{parity}.csv")))?;
            acc.push(diag_mean(&grid, "cross-method grid")?);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (even, odd) = (mean(&even_means), mean(&odd_means));
    checks.push(Check {
        id: "7b".into(),
        description: "cross-method even-layer diagonal mean CKA exceeds the odd-layer one".into(),
        values: vec![("even_diag_mean".into(), even), ("odd_diag_mean".into(), odd)],
        passed: even > odd,
    });

    // c. augmentation invariance, both models under the strong family
    let mut values = Vec::new();
    let mut passed = true;
    let mut inv_curves = Vec::new();
    for m in METHODS {
        for s in SEEDS {
            let r = run(m, s);
            let curve = augmentation_invariance(&r.views[0], &r.views[1])?;
            curve_table(&curve, "cka").write(&out_dir.join(format!("invariance_{}.csv", r.info.model_id)))?;
            let start = value_at(&curve, first_even, "invariance at the first even layer")?;
            let (end, ok) = match m {
                Method::Contrastive => {
                    let end = value_at(&curve, last_head, "invariance at the last head layer")?;
                    (end, end - start >= INVARIANCE_RISE)
                }
                Method::Supervised => {
                    let end = value_at(&curve, last_even, "invariance at the last even layer")?;
                    (end, end - start < INVARIANCE_RISE)
                }
            };
            passed &= ok;
            values.push((format!("{}_first_even", r.info.model_id), start));
            values.push((format!("{}_final", r.info.model_id), end));
            inv_curves.push((r.info.model_id.clone(), curve));
        }
    }
    let even_or_head = |c: &LayerCurve| LayerCurve {
        points: c.points.iter().filter(|p| p.tag.parity != Parity::Odd).cloned().collect(),
    };
    let plotted: Vec<(String, LayerCurve)> = inv_curves.iter().map(|(n, c)| (n.clone(), even_or_head(c))).collect();
    let refs: Vec<(String, &LayerCurve)> = plotted.iter().rev().map(|(n, c)| (n.clone(), c)).collect();
    atomic_write_str(
        &out_dir.join("invariance.svg"),
        &curves_svg("augmentation invariance (strong views)", &refs),
    )?;
    checks.push(Check {
        id: "7c".into(),
        description: format!(
            "contrastive invariance rises by >= {INVARIANCE_RISE} from the first even layer to the last head layer; supervised does not rise by {INVARIANCE_RISE} over its even layers"
        ),
        values,
        passed,
    });

    // d. class structure at the final even layer
    let mut values = Vec::new();
    let mut passed = true;
    let mut class_curves = Vec::new();
    for s in SEEDS {
        let mut finals = Vec::new();
        for m in METHODS {
            let r = run(m, s);
            let curve = class_structure_cka(&r.eval, labels)?;
            curve_table(&curve, "cka").write(&out_dir.join(format!("classsim_{}.csv", r.info.model_id)))?;
            let v = value_at(&curve, last_even, "class CKA at the last even layer")?;
            values.push((format!("{}_final_even", r.info.model_id), v));
            finals.push(v);
            class_curves.push((r.info.model_id.clone(), even_or_head(&curve)));
        }
        passed &= finals[0] > finals[1];
    }
    let refs: Vec<(String, &LayerCurve)> = class_curves.iter().rev().map(|(n, c)| (n.clone(), c)).collect();
    atomic_write_str(&out_dir.join("classsim.svg"), &curves_svg("CKA with the class structure", &refs))?;
    checks.push(Check {
        id: "7d".into(),
        description: "class-structure CKA at the final even layer is higher for supervised than contrastive".into(),
        values,
        passed,
    });

    // e. probes: final even layer at least as separable as the first
    let mut values = Vec::new();
    let mut passed = true;
    for m in METHODS {
        for s in SEEDS {
            let r = run(m, s);
            let results = probe_curve(&r.eval, labels, &probe_cfg)?;
            probe_table(&results).write(&out_dir.join(format!("probe_{}.csv", r.info.model_id)))?;
            let evens: Vec<usize> = r
                .eval
                .iter()
                .filter(|x| x.tag().parity == Parity::Even)
                .map(|x| x.tag().layer_index)
                .collect();
            let first = probe_at(&results, evens.first().copied()).expect("an even layer exists");
            let last = probe_at(&results, evens.last().copied()).expect("an even layer exists");
            passed &= last >= first;
            values.push((format!("{}_first_even", r.info.model_id), first));
            values.push((format!("{}_final_even", r.info.model_id), last));
        }
    }
    checks.push(Check {
        id: "7e".into(),
        description: "probe test accuracy at the final even layer >= at the first even layer, for both methods".into(),
        values,
        passed,
    });

    let report = Report {
        checks,
        seconds: start.elapsed().as_secs_f64(),
    };
    atomic_write_str(&out_dir.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    atomic_write_str(&out_dir.join("report.txt"), &report.to_text())?;
    Ok(report)
}
