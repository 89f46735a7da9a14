//! Experiment driver: expands a config into per-seed runs, executes them
//! (optionally across threads), and lands results, checkpoints, gap
//! tables, and analysis reports on disk.
//!
//! Models hold `Rc` internally and never cross threads; workers build
//! their own model from a plain [`ModelSpec`]. Output order is fixed by
//! task order, not completion order, so reruns of the same config produce
//! byte-identical files regardless of `jobs`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::analysis::{homogeneity, invariance_gap};
use crate::config::{ExperimentConfig, OutputFormat};
use crate::data::results::{rows_from_run, write_csv, write_json, MetricRow};
use crate::data::DatasetMeta;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::{Model, ModelSpec, PoolFamily};
use crate::train::{split_dataset, train_run, RunResult, TrainConfig};

/// `(family, variant)` labels for result rows, read off the serialized
/// form so the names always match the config schema. Families without a
/// variant get an empty string.
pub fn family_variant(f: &PoolFamily) -> (String, String) {
    let v = serde_json::to_value(f).expect("family serializes");
    let get = |k: &str| {
        v.get(k)
            .and_then(|s| s.as_str())
            .unwrap_or_default()
            .to_string()
    };
    (get("family"), get("variant"))
}

/// Stable identifier for one seed-run, e.g. `diffpool-uniform-s3`.
pub fn run_id(family: &str, variant: &str, seed: u64) -> String {
    if variant.is_empty() {
        format!("{family}-s{seed}")
    } else {
        format!("{family}-{variant}-s{seed}")
    }
}

/// One unit of work: everything a worker thread needs, all `Send`.
#[derive(Debug, Clone)]
struct Task {
    run_id: String,
    seed: u64,
    family: String,
    variant: String,
    spec: ModelSpec,
    train: TrainConfig,
    checkpoint: Option<PathBuf>,
}

/// A finished seed-run.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub run_id: String,
    pub seed: u64,
    pub family: String,
    pub variant: String,
    pub result: RunResult,
}

fn execute(task: &Task, graphs: &[Graph]) -> Result<SeedRun> {
    let model = Model::new(task.spec.clone())?;
    let (tr, va, te) = split_dataset(graphs.len(), task.seed);
    let result = train_run(&model, graphs, &tr, &va, &te, &task.train)?;
    if let Some(path) = &task.checkpoint {
        model.save_checkpoint(path)?;
    }
    Ok(SeedRun {
        run_id: task.run_id.clone(),
        seed: task.seed,
        family: task.family.clone(),
        variant: task.variant.clone(),
        result,
    })
}

/// Run tasks on up to `jobs` threads, returning results in task order.
/// The first error in task order wins.
fn execute_all(tasks: &[Task], graphs: &[Graph], jobs: usize) -> Result<Vec<SeedRun>> {
    let jobs = jobs.max(1).min(tasks.len().max(1));
    let done: Mutex<Vec<Option<Result<SeedRun>>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let out = execute(&tasks[i], graphs);
                done.lock().expect("result store")[i] = Some(out);
            });
        }
    });
    done.into_inner()
        .expect("result store")
        .into_iter()
        .map(|slot| slot.expect("every task ran"))
        .collect()
}

/// Flatten runs into result rows under the documented schema.
pub fn rows_for(runs: &[SeedRun]) -> Vec<MetricRow> {
    runs.iter()
        .flat_map(|r| rows_from_run(&r.run_id, r.seed, &r.family, &r.variant, &r.result))
        .collect()
}

/// Sibling path with a suffix spliced in before a new extension:
/// `results.csv` + (`_gaps`, `csv`) → `results_gaps.csv`.
pub fn derived_path(base: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = base
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("output");
    base.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn write_rows(path: &Path, format: OutputFormat, rows: &[MetricRow]) -> Result<()> {
    match format {
        OutputFormat::Csv => write_csv(path, rows),
        OutputFormat::Json => write_json(path, rows),
    }
}

/// `poolprobe train`: one run per seed, results file + optional
/// checkpoints. Nothing is written until the config validates.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    let (graphs, meta) = cfg.load_dataset()?;
    if let Some(dir) = &cfg.output.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let (family, variant) = family_variant(&cfg.model.family);
    let tasks: Vec<Task> = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let id = run_id(&family, &variant, seed);
            Task {
                checkpoint: cfg
                    .output
                    .checkpoint_dir
                    .as_ref()
                    .map(|d| d.join(format!("{id}.json"))),
                run_id: id,
                seed,
                family: family.clone(),
                variant: variant.clone(),
                spec: cfg.model.to_spec(&meta, seed),
                train: TrainConfig {
                    seed,
                    ..cfg.train.clone()
                },
            }
        })
        .collect();
    let runs = execute_all(&tasks, &graphs, jobs)?;
    write_rows(&cfg.output.path, cfg.output.format, &rows_for(&runs))?;
    Ok(runs)
}

/// One cell of the sweep gap table: both families' mean test metric at
/// one hyperparameter setting, and their difference.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GapRow {
    pub pool_layers: usize,
    pub hidden_dim: usize,
    pub initial_convs: usize,
    pub family_a: String,
    pub mean_a: f64,
    pub family_b: String,
    pub mean_b: f64,
    /// `mean_a - mean_b`.
    pub gap: f64,
}

pub const GAP_HEADER: &str =
    "pool_layers,hidden_dim,initial_convs,family_a,mean_a,family_b,mean_b,gap";

/// Write the gap table as CSV next to the main results file.
pub fn write_gap_csv(path: &Path, rows: &[GapRow]) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(w, "{GAP_HEADER}").map_err(io_err)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.pool_layers,
            r.hidden_dim,
            r.initial_convs,
            r.family_a,
            r.mean_a,
            r.family_b,
            r.mean_b,
            r.gap
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// `poolprobe sweep`: cross-product of the grid axes × both families ×
/// all seeds. Returns `(all runs, gap table)` after writing the merged
/// results file and `<stem>_gaps.csv`.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<(Vec<SeedRun>, Vec<GapRow>)> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep: section missing from config"))?;
    let (graphs, meta) = cfg.load_dataset()?;

    let mut tasks: Vec<Task> = Vec::new();
    let mut cells: Vec<(usize, usize, usize)> = Vec::new();
    for &pl in &sweep.pool_layers {
        for &hd in &sweep.hidden_dims {
            for &ic in &sweep.initial_convs {
                cells.push((pl, hd, ic));
                for fam in [&sweep.family_a, &sweep.family_b] {
                    let (family, variant) = family_variant(fam);
                    for &seed in &cfg.seeds {
                        let label = if variant.is_empty() {
                            family.clone()
                        } else {
                            format!("{family}-{variant}")
                        };
                        let mut section = cfg.model.clone();
                        section.family = *fam;
                        section.pool_layers = pl;
                        section.hidden_dim = hd;
                        section.initial_convs = ic;
                        tasks.push(Task {
                            run_id: format!("{label}-p{pl}-h{hd}-c{ic}-s{seed}"),
                            seed,
                            family: family.clone(),
                            variant: variant.clone(),
                            spec: section.to_spec(&meta, seed),
                            train: TrainConfig {
                                seed,
                                ..cfg.train.clone()
                            },
                            checkpoint: None,
                        });
                    }
                }
            }
        }
    }

    let runs = execute_all(&tasks, &graphs, jobs)?;
    write_rows(&cfg.output.path, cfg.output.format, &rows_for(&runs))?;

    let label_a = family_variant(&sweep.family_a);
    let label_b = family_variant(&sweep.family_b);
    let runs_per_family = cfg.seeds.len();
    let runs_per_cell = 2 * runs_per_family;
    let mean = |chunk: &[SeedRun]| {
        chunk.iter().map(|r| r.result.test_metric).sum::<f64>() / chunk.len() as f64
    };
    let gaps: Vec<GapRow> = cells
        .iter()
        .enumerate()
        .map(|(i, &(pl, hd, ic))| {
            let cell = &runs[i * runs_per_cell..(i + 1) * runs_per_cell];
            let mean_a = mean(&cell[..runs_per_family]);
            let mean_b = mean(&cell[runs_per_family..]);
            GapRow {
                pool_layers: pl,
                hidden_dim: hd,
                initial_convs: ic,
                family_a: join_label(&label_a),
                mean_a,
                family_b: join_label(&label_b),
                mean_b,
                gap: mean_a - mean_b,
            }
        })
        .collect();
    write_gap_csv(
        &derived_path(&cfg.output.path, "_gaps", "csv"),
        &gaps,
    )?;
    Ok((runs, gaps))
}

fn join_label((family, variant): &(String, String)) -> String {
    if variant.is_empty() {
        family.clone()
    } else {
        format!("{family}-{variant}")
    }
}

/// Everything `poolprobe analyze` measured.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AnalyzeSummary {
    pub checkpoint: String,
    pub num_graphs: usize,
    pub invariance_perms: usize,
    pub max_gap: f64,
    pub mean_gap: f64,
    pub per_graph: Vec<GraphGap>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GraphGap {
    pub graph_id: u64,
    pub gap: f64,
}

fn check_compatible(spec: &ModelSpec, meta: &DatasetMeta) -> Result<()> {
    let mut bad = Vec::new();
    if spec.in_dim != meta.feature_dim {
        bad.push(format!(
            "input width {} vs dataset feature width {}",
            spec.in_dim, meta.feature_dim
        ));
    }
    if spec.out_dim != meta.task.out_dim() {
        bad.push(format!(
            "output width {} vs dataset target width {}",
            spec.out_dim,
            meta.task.out_dim()
        ));
    }
    if spec.n_max < meta.n_max {
        bad.push(format!(
            "checkpoint n_max {} below dataset n_max {}",
            spec.n_max, meta.n_max
        ));
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::config(format!(
            "checkpoint incompatible with dataset: {}",
            bad.join("; ")
        )))
    }
}

/// `poolprobe analyze`: load a checkpoint, measure homogeneity and the
/// invariance gap on the first few corpus graphs, write the homogeneity
/// CSV, optional raw embedding dump, and the invariance JSON report.
pub fn run_analyze(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<AnalyzeSummary> {
    use std::io::Write;
    cfg.validate()?;
    let model = Model::load_checkpoint(checkpoint)?;
    let (graphs, meta) = cfg.load_dataset()?;
    check_compatible(model.spec(), &meta)?;
    let take = cfg.analysis.analysis_graphs.min(graphs.len());
    let subjects = &graphs[..take];

    let hom_path = derived_path(&cfg.output.path, "_homogeneity", "csv");
    let file = std::fs::File::create(&hom_path)
        .map_err(|e| Error::io(hom_path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(hom_path.display().to_string(), e);
    writeln!(
        w,
        "graph_id,stage,rows,cols,norm_col_variance,mean_pairwise_cosine"
    )
    .map_err(io_err)?;
    let mut dump: Vec<(u64, String, crate::mat::Mat)> = Vec::new();
    for g in subjects {
        let t = crate::autodiff::Tape::new();
        let out = model.forward(&t, g)?;
        for (stage, z) in &out.embeddings {
            let h = homogeneity(z);
            writeln!(
                w,
                "{},{},{},{},{},{}",
                g.id,
                stage,
                z.rows(),
                z.cols(),
                h.norm_col_variance,
                h.mean_pairwise_cosine
            )
            .map_err(io_err)?;
            if cfg.analysis.dump_embeddings {
                dump.push((g.id, stage.clone(), z.clone()));
            }
        }
    }
    drop(w);

    if cfg.analysis.dump_embeddings {
        let dump_path = derived_path(&cfg.output.path, "_embeddings", "csv");
        let file = std::fs::File::create(&dump_path)
            .map_err(|e| Error::io(dump_path.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(dump_path.display().to_string(), e);
        writeln!(w, "graph_id,stage,row,col,value").map_err(io_err)?;
        for (id, stage, z) in &dump {
            for i in 0..z.rows() {
                for j in 0..z.cols() {
                    writeln!(w, "{id},{stage},{i},{j},{}", z[(i, j)]).map_err(io_err)?;
                }
            }
        }
    }

    let mut per_graph = Vec::with_capacity(subjects.len());
    for g in subjects {
        let gap = invariance_gap(&model, g, cfg.analysis.invariance_perms, cfg.train.seed)?;
        per_graph.push(GraphGap {
            graph_id: g.id,
            gap,
        });
    }
    let max_gap = per_graph.iter().map(|r| r.gap).fold(0.0_f64, f64::max);
    let mean_gap =
        per_graph.iter().map(|r| r.gap).sum::<f64>() / per_graph.len().max(1) as f64;
    let summary = AnalyzeSummary {
        checkpoint: checkpoint.display().to_string(),
        num_graphs: take,
        invariance_perms: cfg.analysis.invariance_perms,
        max_gap,
        mean_gap,
        per_graph,
    };
    let inv_path = derived_path(&cfg.output.path, "_invariance", "json");
    let file = std::fs::File::create(&inv_path)
        .map_err(|e| Error::io(inv_path.display().to_string(), e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &summary)
        .map_err(|e| Error::config(format!("writing {}: {e}", inv_path.display())))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_config(out: &Path) -> ExperimentConfig {
        serde_json::from_str(&format!(
            r#"{{
                "dataset": {{"source": "synthetic", "task": "cycles_vs_grids",
                             "n_graphs": 24, "min_nodes": 8, "max_nodes": 12,
                             "noise": 0.3, "seed": 5}},
                "model": {{"family": "graclus", "hidden_dim": 4,
                           "initial_convs": 1, "pool_layers": 1}},
                "train": {{"max_epochs": 3, "batch_size": 8}},
                "seeds": [1, 2],
                "output": {{"path": {:?}}}
            }}"#,
            out.to_str().unwrap()
        ))
        .unwrap()
    }

    #[test]
    fn family_variant_labels_follow_the_config_schema() {
        use crate::models::{DiffPoolVariant, GmnVariant};
        assert_eq!(
            family_variant(&PoolFamily::Graclus),
            ("graclus".into(), String::new())
        );
        assert_eq!(
            family_variant(&PoolFamily::Diffpool {
                variant: DiffPoolVariant::InvariantNormal
            }),
            ("diffpool".into(), "invariant_normal".into())
        );
        assert_eq!(
            family_variant(&PoolFamily::Gmn {
                variant: GmnVariant::Random
            }),
            ("gmn".into(), "random".into())
        );
        assert_eq!(run_id("graclus", "", 3), "graclus-s3");
        assert_eq!(run_id("gmn", "random", 3), "gmn-random-s3");
    }

    #[test]
    fn derived_paths_splice_suffixes() {
        assert_eq!(
            derived_path(Path::new("/tmp/results.csv"), "_gaps", "csv"),
            PathBuf::from("/tmp/results_gaps.csv")
        );
        assert_eq!(
            derived_path(Path::new("out.json"), "_invariance", "json"),
            PathBuf::from("out_invariance.json")
        );
    }

    #[test]
    fn experiment_writes_one_block_per_seed() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("results.csv");
        let cfg = small_config(&out);
        let runs = run_experiment(&cfg, 1).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].run_id, "graclus-s1");
        assert_eq!(runs[1].run_id, "graclus-s2");
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("run_id,seed,family"), "{text}");
        assert!(text.contains("graclus-s1"), "missing seed-1 rows");
        assert!(text.contains("graclus-s2"), "missing seed-2 rows");
    }

    #[test]
    fn parallel_and_serial_runs_write_identical_bytes() {
        let dir = tempdir().unwrap();
        let out1 = dir.path().join("serial.csv");
        let out2 = dir.path().join("parallel.csv");
        let mut cfg1 = small_config(&out1);
        cfg1.seeds = vec![1, 2, 3];
        let mut cfg2 = cfg1.clone();
        cfg2.output.path = out2.clone();
        run_experiment(&cfg1, 1).unwrap();
        run_experiment(&cfg2, 3).unwrap();
        assert_eq!(
            std::fs::read(&out1).unwrap(),
            std::fs::read(&out2).unwrap()
        );
    }

    #[test]
    fn checkpoints_land_per_seed_and_reload() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("results.csv");
        let mut cfg = small_config(&out);
        cfg.output.checkpoint_dir = Some(dir.path().join("ckpt"));
        run_experiment(&cfg, 1).unwrap();
        let model = Model::load_checkpoint(&dir.path().join("ckpt/graclus-s1.json")).unwrap();
        assert_eq!(model.spec().seed, 1);
        assert!(dir.path().join("ckpt/graclus-s2.json").exists());
    }

    #[test]
    fn invalid_config_writes_nothing() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("results.csv");
        let mut cfg = small_config(&out);
        cfg.seeds.clear();
        assert!(run_experiment(&cfg, 1).is_err());
        assert!(!out.exists(), "output written despite invalid config");
    }

    #[test]
    fn sweep_counts_runs_and_gap_cells() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("sweep.csv");
        let mut cfg = small_config(&out);
        cfg.seeds = vec![1];
        cfg.sweep = Some(serde_json::from_str(
            r#"{"family_a": {"family": "graclus"},
                "family_b": {"family": "complement"},
                "pool_layers": [1, 2], "hidden_dims": [4, 8],
                "initial_convs": [1]}"#,
        )
        .unwrap());
        let (runs, gaps) = run_sweep(&cfg, 2).unwrap();
        // 2x2x1 grid x 2 families x 1 seed
        assert_eq!(runs.len(), 8);
        assert_eq!(gaps.len(), 4);
        let gap_text =
            std::fs::read_to_string(dir.path().join("sweep_gaps.csv")).unwrap();
        assert!(gap_text.starts_with(GAP_HEADER), "{gap_text}");
        assert_eq!(gap_text.lines().count(), 5);
    }

    #[test]
    fn identical_sweep_families_give_zero_gaps() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("sweep.csv");
        let mut cfg = small_config(&out);
        cfg.seeds = vec![1];
        cfg.sweep = Some(serde_json::from_str(
            r#"{"family_a": {"family": "graclus"},
                "family_b": {"family": "graclus"},
                "pool_layers": [1], "hidden_dims": [4]}"#,
        )
        .unwrap());
        let (_, gaps) = run_sweep(&cfg, 1).unwrap();
        assert_eq!(gaps.len(), 1);
        assert_eq!(gaps[0].gap, 0.0);
    }

    #[test]
    fn analyze_writes_reports_with_per_stage_rows() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("results.csv");
        let mut cfg = small_config(&out);
        cfg.output.checkpoint_dir = Some(dir.path().join("ckpt"));
        cfg.analysis.dump_embeddings = true;
        cfg.analysis.analysis_graphs = 2;
        cfg.analysis.invariance_perms = 3;
        run_experiment(&cfg, 1).unwrap();

        let summary =
            run_analyze(&cfg, &dir.path().join("ckpt/graclus-s1.json")).unwrap();
        assert_eq!(summary.num_graphs, 2);
        assert!(summary.max_gap.is_finite());

        let hom = std::fs::read_to_string(dir.path().join("results_homogeneity.csv")).unwrap();
        // header + (initial conv + one pool stage) per graph
        assert_eq!(hom.lines().count(), 1 + 2 * 2, "{hom}");

        let (graphs, _) = cfg.load_dataset().unwrap();
        let dump = std::fs::read_to_string(dir.path().join("results_embeddings.csv")).unwrap();
        // conv0 stage alone contributes n rows x hidden columns per graph
        let conv0_rows = dump
            .lines()
            .filter(|l| l.contains(",conv0,"))
            .count();
        let expect: usize = graphs[..2].iter().map(|g| g.num_nodes() * 4).sum();
        assert_eq!(conv0_rows, expect);

        let report: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("results_invariance.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(report["per_graph"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn analyze_rejects_mismatched_checkpoints() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("results.csv");
        let mut cfg = small_config(&out);
        cfg.output.checkpoint_dir = Some(dir.path().join("ckpt"));
        run_experiment(&cfg, 1).unwrap();

        // same checkpoint, dataset with a wider target: triangle regression
        let mut other = cfg.clone();
        other.dataset = serde_json::from_str(
            r#"{"source": "synthetic", "task": "triangle_count",
                "n_graphs": 12, "min_nodes": 5, "max_nodes": 9}"#,
        )
        .unwrap();
        let err = run_analyze(&other, &dir.path().join("ckpt/graclus-s1.json"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("incompatible"), "{err}");
    }
}
