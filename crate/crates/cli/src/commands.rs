//! One function per subcommand. Each computes all of its results before it
//! writes anything, and every file is written to a temporary name and renamed
//! into place, so a failing command leaves no partial outputs behind.

use std::path::{Path, PathBuf};

use replab::analysis::{
    augmentation_invariance, augmentation_invariance_grid, class_structure_cka, internal_structure, LayerCurve,
    ParityFilter,
};
use replab::ingest::{atomic_write_str, load_run, read_labels, write_labels};
use replab::probe::{probe_curve, ProbeConfig, ProbeResult};
use replab::similarity::diag_max_curve;
use replab::toytrain::{extract_representations, make_blobs, train, AugmentationSpec, ModelInfo, ToyConfig, TrainingLog, ToyResNet};
use replab::{CkaMatrix, Error, LabelMatrix, Method, Parity, RepMatrix, Result};

use crate::svg::{heatmap, line_plot, HeatmapStyle};
use crate::table::{cka_matrix_table, curve_table, diag_max_table, probe_table};

fn title_for(a: &[RepMatrix], b: &[RepMatrix]) -> String {
    let id = |r: &[RepMatrix]| r.first().map_or_else(String::new, |r| r.tag().model_id.clone());
    format!("{} vs {}", id(a), id(b))
}

fn grid_svg(grid: &CkaMatrix, title: String) -> String {
    heatmap(
        grid,
        &HeatmapStyle {
            title: Some(title),
            ..HeatmapStyle::default()
        },
    )
}

/// Plot of curves over the layers of the first one.
pub fn curves_svg(title: &str, curves: &[(String, &LayerCurve)]) -> String {
    let x_labels: Vec<String> = curves
        .first()
        .map(|(_, c)| c.points.iter().map(|p| p.tag.short_label()).collect())
        .unwrap_or_default();
    let series: Vec<(String, Vec<Option<f64>>)> = curves
        .iter()
        .map(|(name, c)| (name.clone(), c.points.iter().map(|p| p.value).collect()))
        .collect();
    line_plot(title, &x_labels, &series)
}

/// CKA grid between the layers of two runs.
pub fn cmd_cka(
    manifest_a: &Path,
    manifest_b: &Path,
    parity: ParityFilter,
    out_csv: &Path,
    out_svg: Option<&Path>,
) -> Result<CkaMatrix> {
    let a = load_run(manifest_a)?;
    let b = load_run(manifest_b)?;
    let grid = internal_structure(&a, &b, parity)?;
    let csv = cka_matrix_table(&grid).to_csv();
    let svg = out_svg.map(|_| grid_svg(&grid, title_for(&a, &b)));
    atomic_write_str(out_csv, &csv)?;
    if let (Some(path), Some(svg)) = (out_svg, svg) {
        atomic_write_str(path, &svg)?;
    }
    Ok(grid)
}

/// For each layer of run A: CKA with the same layer of run B, and the best
/// match among all of B's layers.
pub fn cmd_diagmax(manifest_a: &Path, manifest_b: &Path, parity: ParityFilter, out_csv: &Path) -> Result<CkaMatrix> {
    let a = load_run(manifest_a)?;
    let b = load_run(manifest_b)?;
    let grid = internal_structure(&a, &b, parity)?;
    let table = diag_max_table(&diag_max_curve(&grid)?);
    table.write(out_csv)?;
    Ok(grid)
}

pub enum Invariance {
    Curve(LayerCurve),
    Grid(CkaMatrix),
}

pub fn cmd_invariance(
    view1: &Path,
    view2: &Path,
    all_pairs: bool,
    out_csv: &Path,
    out_svg: Option<&Path>,
) -> Result<Invariance> {
    let a = load_run(view1)?;
    let b = load_run(view2)?;
    let title = format!("augmentation invariance: {}", title_for(&a, &b));
    let (result, csv, svg) = if all_pairs {
        let grid = augmentation_invariance_grid(&a, &b)?;
        let csv = cka_matrix_table(&grid).to_csv();
        let svg = grid_svg(&grid, title);
        (Invariance::Grid(grid), csv, svg)
    } else {
        let curve = augmentation_invariance(&a, &b)?;
        let csv = curve_table(&curve, "cka").to_csv();
        let svg = curves_svg(&title, &[("cka".into(), &curve)]);
        (Invariance::Curve(curve), csv, svg)
    };
    atomic_write_str(out_csv, &csv)?;
    if let Some(path) = out_svg {
        atomic_write_str(path, &svg)?;
    }
    Ok(result)
}

fn load_with_labels(manifest: &Path, labels_file: &Path) -> Result<(Vec<RepMatrix>, LabelMatrix)> {
    let reps = load_run(manifest)?;
    let labels = read_labels(labels_file)?;
    if let Some(bad) = reps.iter().find(|r| r.samples() != labels.samples()) {
        return Err(Error::Alignment {
            expected: labels.samples(),
            found: bad.samples(),
            tag: Box::new(bad.tag().clone()),
        });
    }
    let missing = labels.missing_classes();
    if !missing.is_empty() {
        eprintln!("warning: classes {missing:?} have no samples");
    }
    Ok((reps, labels))
}

pub fn cmd_classsim(manifest: &Path, labels_file: &Path, out_csv: &Path) -> Result<LayerCurve> {
    let (reps, labels) = load_with_labels(manifest, labels_file)?;
    let curve = class_structure_cka(&reps, &labels)?;
    curve_table(&curve, "cka").write(out_csv)?;
    Ok(curve)
}

pub fn cmd_probe(manifest: &Path, labels_file: &Path, cfg: &ProbeConfig, out_csv: &Path) -> Result<Vec<ProbeResult>> {
    let (reps, labels) = load_with_labels(manifest, labels_file)?;
    let results = probe_curve(&reps, &labels, cfg)?;
    probe_table(&results).write(out_csv)?;
    Ok(results)
}

/// A trained toy model and its dumps on the evaluation partition.
pub struct ToyRun {
    pub info: ModelInfo,
    pub net: ToyResNet,
    pub log: TrainingLog,
    /// Unaugmented evaluation samples.
    pub eval: Vec<RepMatrix>,
    /// Two independently strong-augmented copies of the evaluation samples.
    pub views: [Vec<RepMatrix>; 2],
    pub labels: LabelMatrix,
}

impl ToyRun {
    pub fn of_parity(reps: &[RepMatrix], parity: Parity) -> Vec<RepMatrix> {
        reps.iter().filter(|r| r.tag().parity == parity).cloned().collect()
    }
}

/// Trains one model on the configured blobs and extracts every tap.
pub fn run_toy(cfg: &ToyConfig, objective: Method) -> Result<ToyRun> {
    cfg.validate()?;
    let data = make_blobs(&cfg.dataset)?;
    let mut net = cfg.network(objective)?;
    let log = train(objective, &mut net, &data.train, cfg)?;
    let info = ModelInfo::new(objective, cfg.seed(objective), cfg.block_group_spec()?);
    let x = data.eval.x.view();
    let eval = extract_representations(&net, x, &AugmentationSpec::identity(), 0, &info)?;
    let views = [
        extract_representations(&net, x, &cfg.strong_augmentation, cfg.view_seeds[0], &info)?,
        extract_representations(&net, x, &cfg.strong_augmentation, cfg.view_seeds[1], &info)?,
    ];
    Ok(ToyRun {
        info,
        net,
        log,
        eval,
        views,
        labels: data.eval.labels,
    })
}

/// Paths written by [`write_toy_run`].
pub struct ToyRunPaths {
    pub manifest: PathBuf,
    pub views: [PathBuf; 2],
    pub labels: PathBuf,
    pub log: PathBuf,
}

pub fn toy_run_paths(dir: &Path) -> ToyRunPaths {
    ToyRunPaths {
        manifest: dir.join("manifest.json"),
        views: [dir.join("view1").join("manifest.json"), dir.join("view2").join("manifest.json")],
        labels: dir.join("labels.npy"),
        log: dir.join("training_log.json"),
    }
}

pub fn write_toy_run(run: &ToyRun, dir: &Path, cfg: &ToyConfig) -> Result<ToyRunPaths> {
    use replab::ingest::{write_run, Dtype};
    let paths = toy_run_paths(dir);
    let dataset_id = format!("blobs-seed{}", cfg.dataset.seed);
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    write_labels(&run.labels, &paths.labels)?;
    let log = serde_json::to_string_pretty(&run.log)? + "\n";
    atomic_write_str(&paths.log, &log)?;
    atomic_write_str(&dir.join("config.json"), &cfg.to_json())?;
    for (reps, manifest) in run.views.iter().zip(&paths.views) {
        let d = manifest.parent().expect("view manifests live in a subdirectory");
        write_run(d, "manifest.json", &format!("{dataset_id}-augmented"), reps, Dtype::F8)?;
    }
    // the top-level manifest goes last
    write_run(dir, "manifest.json", &dataset_id, &run.eval, Dtype::F8)?;
    Ok(paths)
}

/// Trains a toy model and writes its dumps, labels and training log to `out_dir`.
pub fn cmd_toy(config_file: Option<&Path>, objective: Method, seed: u64, out_dir: &Path) -> Result<ToyRun> {
    let cfg = match config_file {
        Some(path) => ToyConfig::read(path)?,
        None => ToyConfig::default(),
    }
    .with_seed(seed);
    let run = run_toy(&cfg, objective)?;
    write_toy_run(&run, out_dir, &cfg)?;
    Ok(run)
}
