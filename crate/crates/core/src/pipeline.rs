//! End-to-end runs: split, standardize, build the sensor hypergraph from the
//! training segment, train, evaluate. Also the structure report and the
//! hyperparameter sweep.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::info;

use crate::data::{
    abs_correlation_matrix, make_windows, pearson, split_chronological, standardize, SensorSeries,
    SplitRatios, Splits, Standardization, WindowedDataset,
};
use crate::error::{Error, Result, ResultExt};
use crate::hypergraph::{
    build_hypergraph, normalized_adjacency, write_matrix_csv, write_matrix_pgm, Hypergraph,
    SpectralOperators,
};
use crate::model::{Model, ModelConfig};
use crate::train::{
    compute_metrics, fit_ridge, predict_dataset, train, MetricsReport, RidgeModel, TrainConfig,
    TrainOutcome,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ratios: SplitRatios,
    pub stride: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ratios: SplitRatios::default(),
            stride: 1,
        }
    }
}

/// Which segment to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Standardized splits, their windows and the frozen sensor hypergraph.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub splits: Splits,
    pub stats: Standardization,
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
    pub hypergraph: Hypergraph,
    pub operators: SpectralOperators,
}

impl Prepared {
    pub fn windows(&self, split: Split) -> &WindowedDataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn prepare(series: &SensorSeries, spec: &RunSpec) -> Result<Prepared> {
    let cfg = &spec.model;
    if series.sensors() != cfg.sensors {
        return Err(Error::Dimension(format!(
            "data has {} sensors, model is configured for {}",
            series.sensors(),
            cfg.sensors
        )));
    }
    cfg.validate()?;
    let raw = split_chronological(series, spec.ratios, cfg.window)?;
    let (splits, stats) = standardize(&raw)?;
    let hypergraph = build_hypergraph(&splits.train.node_features(), cfg.knn_k)
        .context(|| "building the sensor hypergraph from the training split".into())?;
    let operators = normalized_adjacency(&hypergraph, cfg.degree_mode)?;
    let train = make_windows(&splits.train, cfg.window, spec.stride)?;
    let val = make_windows(&splits.val, cfg.window, spec.stride)?;
    let test = make_windows(&splits.test, cfg.window, spec.stride)?;
    Ok(Prepared {
        splits,
        stats,
        train,
        val,
        test,
        hypergraph,
        operators,
    })
}

/// Scores predictions in engineering units (both sides de-standardized).
pub fn score(stats: &Standardization, yhat_std: &[f64], y_std: &[f64], target: &str) -> Result<MetricsReport> {
    let yhat: Vec<f64> = yhat_std.iter().map(|&v| stats.destandardize_target(v)).collect();
    let y: Vec<f64> = y_std.iter().map(|&v| stats.destandardize_target(v)).collect();
    Ok(compute_metrics(&yhat, &y)?.with_target(target))
}

pub fn evaluate(model: &Model, prepared: &Prepared, split: Split, target: &str) -> Result<MetricsReport> {
    let data = prepared.windows(split);
    let pred = predict_dataset(model, &prepared.operators.adjacency, data)?;
    score(&prepared.stats, &pred, &data.targets, target)
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub outcome: TrainOutcome,
    pub test: MetricsReport,
    pub prepared: Prepared,
}

/// Prepare, train, and score the best-validation model on the test split.
pub fn run_experiment(series: &SensorSeries, spec: &RunSpec) -> Result<Experiment> {
    let prepared = prepare(series, spec)?;
    let init = Model::new(spec.model.clone())?;
    info!("{init}");
    let outcome = train(
        &init,
        &prepared.operators.adjacency,
        &prepared.train,
        &prepared.val,
        &spec.train,
    )?;
    let test = evaluate(&outcome.best, &prepared, Split::Test, &series.target_name)?;
    Ok(Experiment {
        outcome,
        test,
        prepared,
    })
}

/// Ridge regression on flattened standardized windows, scored on the test
/// split.
pub fn ridge_baseline(prepared: &Prepared, lambda: f64, target: &str) -> Result<(RidgeModel, MetricsReport)> {
    let model = fit_ridge(&prepared.train, lambda)?;
    let pred = model.predict(&prepared.test);
    let report = score(&prepared.stats, &pred, &prepared.test.targets, target)?;
    Ok((model, report))
}

#[derive(Debug, Clone)]
pub struct GraphReport {
    /// Pearson correlation between the off-diagonal entries of `N` and of the
    /// absolute sensor correlation matrix; `None` when `N`'s off-diagonal is
    /// constant.
    pub alignment: Option<f64>,
    pub files: Vec<PathBuf>,
}

impl GraphReport {
    pub fn alignment_string(&self) -> String {
        match self.alignment {
            Some(a) => format!("{a}"),
            None => "undefined (N off-diagonal constant)".into(),
        }
    }
}

fn off_diagonal(m: &crate::tensor::Tensor) -> Vec<f64> {
    let n = m.shape()[0];
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m.get2(i, j))
        .collect()
}

/// Alignment between the propagation operator and data correlation.
pub fn alignment_score(adjacency: &crate::tensor::Tensor, correlation: &crate::tensor::Tensor) -> Option<f64> {
    pearson(&off_diagonal(adjacency), &off_diagonal(correlation))
}

/// Writes `adjacency.{csv,pgm}`, `correlation.{csv,pgm}` and `report.txt`
/// into `out_dir`.
pub fn inspect_graph(series: &SensorSeries, spec: &RunSpec, out_dir: &Path) -> Result<GraphReport> {
    let prepared = prepare(series, spec)?;
    let adjacency = &prepared.operators.adjacency;
    let correlation = abs_correlation_matrix(&prepared.splits.train);
    let alignment = alignment_score(adjacency, &correlation);

    fs::create_dir_all(out_dir)?;
    let files: Vec<PathBuf> = ["adjacency.csv", "adjacency.pgm", "correlation.csv", "correlation.pgm", "report.txt"]
        .iter()
        .map(|f| out_dir.join(f))
        .collect();
    write_matrix_csv(adjacency, &files[0])?;
    write_matrix_pgm(adjacency, &files[1])?;
    write_matrix_csv(&correlation, &files[2])?;
    write_matrix_pgm(&correlation, &files[3])?;

    let report = GraphReport { alignment, files };
    let text = format!(
        "sensors={}\nknn_k={}\ndegree_mode={}\ndelta={}\nalignment={}\n",
        series.sensors(),
        spec.model.knn_k,
        spec.model.degree_mode,
        prepared.hypergraph.delta,
        report.alignment_string()
    );
    fs::write(&report.files[4], text)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub kernel_size: usize,
    pub mixer_blocks: usize,
    pub result: std::result::Result<MetricsReport, String>,
}

pub const SWEEP_CSV_HEADER: &str = "kernel_size,mixer_blocks,status,nmae,nrmse,mape,r2,n,error";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        match &self.result {
            Ok(m) => format!("{},{},ok,{},", self.kernel_size, self.mixer_blocks, m.csv_fields()),
            Err(e) => format!(
                "{},{},failed,,,,,,\"{}\"",
                self.kernel_size,
                self.mixer_blocks,
                e.replace('"', "'").replace('\n', " ")
            ),
        }
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// One full train/evaluate per (kernel size, mixer count) pair. Failing
/// points are recorded and the sweep continues. Points run on worker
/// threads; each run is itself single-threaded and seeded, so results do not
/// depend on scheduling.
pub fn hyperparameter_sweep(
    series: &SensorSeries,
    base: &RunSpec,
    kernels: &[usize],
    mixers: &[usize],
) -> Result<Vec<SweepRow>> {
    if kernels.is_empty() || mixers.is_empty() {
        return Err(Error::Config("sweep grid must not be empty".into()));
    }
    let grid: Vec<(usize, usize)> = kernels
        .iter()
        .flat_map(|&k| mixers.iter().map(move |&m| (k, m)))
        .collect();
    let slots: Vec<Mutex<Option<SweepRow>>> = grid.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(grid.len());

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("sweep counter");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&(k, m)) = grid.get(i) else { break };
                let mut spec = base.clone();
                spec.model.kernel_size = k;
                spec.model.mixer_blocks = m;
                let result = run_experiment(series, &spec)
                    .map(|e| e.test)
                    .map_err(|e| e.to_string());
                if let Err(e) = &result {
                    log::warn!("sweep point kernel={k} mixers={m} failed: {e}");
                }
                *slots[i].lock().expect("sweep slot") = Some(SweepRow {
                    kernel_size: k,
                    mixer_blocks: m,
                    result,
                });
            });
        }
    });

    Ok(slots
        .into_iter()
        .map(|s| s.into_inner().expect("sweep slot").expect("every point ran"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn tiny_spec() -> RunSpec {
        RunSpec {
            model: ModelConfig {
                sensors: 6,
                window: 10,
                channels: 4,
                kernel_size: 3,
                st_blocks: 1,
                mixer_blocks: 1,
                readout_hidden: 8,
                knn_k: 3,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 2,
                batch_size: 32,
                ..TrainConfig::default()
            },
            ..RunSpec::default()
        }
    }

    fn tiny_series() -> SensorSeries {
        synth_generate(&SynthConfig {
            sensors: 6,
            groups: vec![3, 3],
            length: 400,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn sensor_count_must_match() {
        let mut spec = tiny_spec();
        spec.model.sensors = 7;
        spec.model.knn_k = 2;
        assert!(matches!(prepare(&tiny_series(), &spec), Err(Error::Dimension(_))));
    }

    #[test]
    fn inspect_writes_five_files() {
        let dir = tempfile::tempdir().unwrap();
        let report = inspect_graph(&tiny_series(), &tiny_spec(), dir.path()).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 5);
        assert!(report.alignment.is_some());
        let csv = fs::read_to_string(dir.path().join("adjacency.csv")).unwrap();
        assert_eq!(csv.lines().count(), 6);
        let pgm = fs::read_to_string(dir.path().join("correlation.pgm")).unwrap();
        assert!(pgm.starts_with("P2 6 6 255\n"));
    }

    #[test]
    fn k1_alignment_is_undefined() {
        let mut spec = tiny_spec();
        spec.model.knn_k = 1;
        let dir = tempfile::tempdir().unwrap();
        let report = inspect_graph(&tiny_series(), &spec, dir.path()).unwrap();
        assert_eq!(report.alignment, None);
        let text = fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(text.contains("alignment=undefined (N off-diagonal constant)"));
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        let rows = hyperparameter_sweep(&tiny_series(), &tiny_spec(), &[3, 50], &[1]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].result.is_ok());
        assert!(rows[1].result.is_err());
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().starts_with("50,1,failed,"));
        assert!(hyperparameter_sweep(&tiny_series(), &tiny_spec(), &[], &[1]).is_err());
    }

    #[test]
    fn singleton_sweep_matches_standalone_run() {
        let spec = tiny_spec();
        let series = tiny_series();
        let rows = hyperparameter_sweep(&series, &spec, &[3], &[1]).unwrap();
        let solo = run_experiment(&series, &spec).unwrap();
        assert_eq!(rows[0].result.as_ref().unwrap(), &solo.test);
    }
}
