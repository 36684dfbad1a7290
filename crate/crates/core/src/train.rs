//! Loss, regression metrics, the mini-batch training loop and the ridge
//! baseline.

use std::fmt;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::hypergraph::format_g17;
use crate::linalg::cholesky_solve;
use crate::model::{Model, ModelParams};
use crate::optim::{AdamConfig, AdamState};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Mean of squared residuals.
pub fn mse_loss(yhat: &[f64], y: &[f64]) -> Result<f64> {
    if yhat.len() != y.len() || y.is_empty() {
        return Err(Error::Dimension(format!(
            "mse between {} predictions and {} targets",
            yhat.len(),
            y.len()
        )));
    }
    Ok(yhat.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

/// Regression quality on one split. NMAE and NRMSE are percentages of the
/// target range; MAPE is a percentage and is `None` when some target is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub nmae: f64,
    pub nrmse: f64,
    pub mape: Option<f64>,
    pub r2: f64,
    pub n: usize,
    pub target_name: String,
}

pub fn compute_metrics(yhat: &[f64], y: &[f64]) -> Result<MetricsReport> {
    if yhat.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            yhat.len(),
            y.len()
        )));
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "metrics need at least 2 samples, got {n}"
        )));
    }
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::DegenerateTarget(
            "target range is zero; NMAE/NRMSE are undefined".into(),
        ));
    }
    let nf = n as f64;
    let mae = yhat.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / nf;
    let sse: f64 = yhat.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    let mean = y.iter().sum::<f64>() / nf;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let mape = if y.contains(&0.0) {
        None
    } else {
        Some(100.0 * yhat.iter().zip(y).map(|(a, b)| ((a - b) / b).abs()).sum::<f64>() / nf)
    };
    Ok(MetricsReport {
        nmae: 100.0 * mae / range,
        nrmse: 100.0 * (sse / nf).sqrt() / range,
        mape,
        r2: 1.0 - sse / sst,
        n,
        target_name: String::new(),
    })
}

impl MetricsReport {
    pub fn with_target(mut self, name: &str) -> Self {
        self.target_name = name.to_string();
        self
    }

    pub fn mape_string(&self) -> String {
        self.mape.map_or_else(|| "undefined".to_string(), format_g17)
    }

    /// One `name=value` per line.
    pub fn to_key_values(&self) -> String {
        format!(
            "target={}\nn={}\nnmae={}\nnrmse={}\nmape={}\nr2={}\n",
            self.target_name,
            self.n,
            format_g17(self.nmae),
            format_g17(self.nrmse),
            self.mape_string(),
            format_g17(self.r2)
        )
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut m = MetricsReport {
            nmae: f64::NAN,
            nrmse: f64::NAN,
            mape: None,
            r2: f64::NAN,
            n: 0,
            target_name: String::new(),
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("metrics line {line:?} lacks '='")))?;
            let num = |v: &str| -> Result<f64> {
                v.parse()
                    .map_err(|_| Error::Format(format!("bad metric value {v:?} for {k}")))
            };
            match k {
                "target" => m.target_name = v.to_string(),
                "n" => {
                    m.n = v
                        .parse()
                        .map_err(|_| Error::Format(format!("bad sample count {v:?}")))?
                }
                "nmae" => m.nmae = num(v)?,
                "nrmse" => m.nrmse = num(v)?,
                "mape" => m.mape = if v == "undefined" { None } else { Some(num(v)?) },
                "r2" => m.r2 = num(v)?,
                other => return Err(Error::Format(format!("unknown metric key {other:?}"))),
            }
        }
        Ok(m)
    }

    pub const CSV_HEADER: &'static str = "nmae,nrmse,mape,r2,n";

    pub fn csv_fields(&self) -> String {
        format!(
            "{},{},{},{},{}",
            format_g17(self.nmae),
            format_g17(self.nrmse),
            self.mape_string(),
            format_g17(self.r2),
            self.n
        )
    }

    pub fn is_finite(&self) -> bool {
        self.nmae.is_finite()
            && self.nrmse.is_finite()
            && self.r2.is_finite()
            && self.mape.is_none_or(f64::is_finite)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "NMAE={:.4} NRMSE={:.4} MAPE={} R2={:.4} (n={})",
            self.nmae,
            self.nrmse,
            self.mape.map_or("undefined".into(), |m| format!("{m:.4}")),
            self.r2,
            self.n
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            lr: 0.001,
            seed: 42,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.lr)));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be positive".into()));
        }
        Ok(())
    }
}

/// Train and validation MSE (standardized units) after an epoch. Epoch 0 is
/// the untrained model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation MSE.
    pub best: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_mse,val_mse\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{}\n",
            r.epoch,
            format_g17(r.train_mse),
            format_g17(r.val_mse)
        ));
    }
    out
}

const EVAL_BATCH: usize = 256;

/// Eval-mode predictions for every window of `data`.
pub fn predict_dataset(model: &Model, adjacency: &Tensor, data: &WindowedDataset) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        out.extend(model.predict_batch(adjacency, &data.batch(chunk))?);
    }
    Ok(out)
}

fn dataset_mse(model: &Model, adjacency: &Tensor, data: &WindowedDataset) -> Result<f64> {
    mse_loss(&predict_dataset(model, adjacency, data)?, &data.targets)
}

/// Mini-batch Adam on the MSE objective over shuffled training windows.
/// Deterministic for a given seed; returns the best-validation parameters.
pub fn train(
    initial: &Model,
    adjacency: &Tensor,
    train_data: &WindowedDataset,
    val_data: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::InsufficientData("training and validation sets must be non-empty".into()));
    }
    for (name, d) in [("training", train_data), ("validation", val_data)] {
        if d.sensors != initial.config.sensors || d.window != initial.config.window {
            return Err(Error::Dimension(format!(
                "{name} windows are {}×{}, model expects {}×{}",
                d.sensors, d.window, initial.config.sensors, initial.config.window
            )));
        }
    }

    let mut model = initial.clone();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        model.params.iter().map(|p| p.value.len()),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let initial_val = dataset_mse(&model, adjacency, val_data)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_mse: dataset_mse(&model, adjacency, train_data)?,
        val_mse: initial_val,
    }];
    let mut best_params: ModelParams = model.params.clone();
    let mut best_val = initial_val;
    let mut best_epoch = 0;
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let x = train_data.batch(batch);
            let y = train_data.batch_targets(batch);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let pred = model.forward(&mut tape, &bound, adjacency, &x, Some(&mut rng))?;
            let loss = tape.mse(pred, &y)?;
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    lr: cfg.lr,
                    loss: lv,
                });
            }
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = bound.all.iter().map(|&v| grads.wrt(v)).collect();
            adam.step(&mut model.params.values_mut(), &g)?;
        }

        let train_mse = dataset_mse(&model, adjacency, train_data).map_err(|e| diverged(e, epoch, cfg))?;
        let val_mse = dataset_mse(&model, adjacency, val_data).map_err(|e| diverged(e, epoch, cfg))?;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
                lr: cfg.lr,
                loss: train_mse,
            });
        }
        debug!("epoch {epoch}: train_mse={train_mse:.6} val_mse={val_mse:.6}");
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
        });
        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_params = model.params.clone();
        } else if cfg.patience.is_some_and(|p| epoch - best_epoch >= p) {
            info!("early stop at epoch {epoch} (best epoch {best_epoch})");
            break;
        }
    }

    Ok(TrainOutcome {
        best: Model {
            config: model.config.clone(),
            params: best_params,
        },
        best_epoch,
        history,
    })
}

fn diverged(e: Error, epoch: usize, cfg: &TrainConfig) -> Error {
    match e {
        Error::Numerical(_) => Error::Divergence {
            epoch,
            batch: 0,
            lr: cfg.lr,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Linear model on flattened `D·W` windows with an unpenalized intercept.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

pub fn fit_ridge(data: &WindowedDataset, lambda: f64) -> Result<RidgeModel> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge lambda {lambda} must be >= 0")));
    }
    let n = data.len();
    if n == 0 {
        return Err(Error::InsufficientData("ridge needs at least one window".into()));
    }
    let p = data.sensors * data.window;
    let nf = n as f64;
    let mut x_mean = vec![0.0; p];
    for i in 0..n {
        for (m, v) in x_mean.iter_mut().zip(data.window_slice(i)) {
            *m += v / nf;
        }
    }
    let y_mean = data.targets.iter().sum::<f64>() / nf;

    // centered normal equations (XᵀX + λI) w = Xᵀy, upper triangle first
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut row = vec![0.0; p];
    for i in 0..n {
        for ((r, v), m) in row.iter_mut().zip(data.window_slice(i)).zip(&x_mean) {
            *r = v - m;
        }
        let yc = data.targets[i] - y_mean;
        for a in 0..p {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            rhs[a] += ra * yc;
            let g = &mut gram[a * p..(a + 1) * p];
            for b in a..p {
                g[b] += ra * row[b];
            }
        }
    }
    for a in 0..p {
        gram[a * p + a] += lambda;
        for b in 0..a {
            gram[a * p + b] = gram[b * p + a];
        }
    }
    let weights = cholesky_solve(&gram, &rhs, p).map_err(|e| match e {
        Error::Numerical(msg) => Error::Numerical(format!(
            "ridge normal matrix is singular ({msg}); use lambda > 0"
        )),
        other => other,
    })?;
    let intercept = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(RidgeModel {
        weights,
        intercept,
        lambda,
    })
}

impl RidgeModel {
    pub fn predict(&self, data: &WindowedDataset) -> Vec<f64> {
        (0..data.len())
            .map(|i| {
                self.intercept
                    + self
                        .weights
                        .iter()
                        .zip(data.window_slice(i))
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, SensorSeries};

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(mse_loss(&[0.0], &[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn metric_examples() {
        let y = [1.0, 2.0, 3.0];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!((m.nmae, m.nrmse, m.mape, m.r2), (0.0, 0.0, Some(0.0), 1.0));

        let m = compute_metrics(&[2.0, 2.0, 2.0], &y).unwrap();
        assert_eq!(m.r2, 0.0);

        let m = compute_metrics(&[1.1, 1.9, 3.2], &y).unwrap();
        assert!((m.nmae - 100.0 * (0.4 / 3.0) / 2.0).abs() < 1e-12);
        assert!((m.nmae - 6.667).abs() < 1e-3);
        assert!((m.r2 - 0.97).abs() < 1e-12);

        assert!(matches!(
            compute_metrics(&[1.0, 1.0], &[2.0, 2.0]),
            Err(Error::DegenerateTarget(_))
        ));
        assert!(compute_metrics(&[1.0], &[1.0]).is_err());
        assert_eq!(compute_metrics(&[0.5, 1.0], &[0.0, 1.0]).unwrap().mape, None);
    }

    #[test]
    fn metrics_text_round_trip() {
        let m = compute_metrics(&[1.1, 1.9, 3.2], &[1.0, 2.0, 3.0])
            .unwrap()
            .with_target("PT501");
        let back = MetricsReport::from_key_values(&m.to_key_values()).unwrap();
        assert_eq!(back, m);
        let undefined = compute_metrics(&[0.5, 1.0], &[0.0, 1.0]).unwrap();
        assert!(undefined.to_key_values().contains("mape=undefined"));
        assert_eq!(
            MetricsReport::from_key_values(&undefined.to_key_values()).unwrap(),
            undefined
        );
    }

    fn linear_windows(n: usize) -> WindowedDataset {
        let t = n + 2;
        let x: Vec<f64> = (0..t * 2).map(|i| ((i * 37) % 17) as f64 / 7.0 - 1.0).collect();
        let y: Vec<f64> = (0..t)
            .map(|i| 0.5 + 2.0 * x[i * 2] - x[i * 2 + 1] + 0.25 * x[i.saturating_sub(1) * 2])
            .collect();
        let s = SensorSeries::new(vec!["a".into(), "b".into()], x, "y".into(), y).unwrap();
        make_windows(&s, 2, 1).unwrap()
    }

    #[test]
    fn ridge_fits_realizable_target() {
        let data = linear_windows(60);
        let model = fit_ridge(&data, 1e-9).unwrap();
        let m = compute_metrics(&model.predict(&data), &data.targets).unwrap();
        assert!(m.r2 > 0.999, "{m}");
    }

    #[test]
    fn ridge_shrinks_to_mean() {
        let data = linear_windows(40);
        let model = fit_ridge(&data, 1e12).unwrap();
        let mean = data.targets.iter().sum::<f64>() / data.len() as f64;
        assert!(model.weights.iter().all(|w| w.abs() < 1e-8));
        assert!((model.intercept - mean).abs() < 1e-6);
    }

    #[test]
    fn ridge_singular_without_penalty() {
        // two identical sensors make the Gram matrix singular
        let x: Vec<f64> = (0..20).flat_map(|i| [i as f64, i as f64]).collect();
        let s = SensorSeries::new(
            vec!["a".into(), "b".into()],
            x,
            "y".into(),
            (0..20).map(f64::from).collect(),
        )
        .unwrap();
        let data = make_windows(&s, 1, 1).unwrap();
        let err = fit_ridge(&data, 0.0).unwrap_err().to_string();
        assert!(err.contains("lambda > 0"), "{err}");
    }

    #[test]
    fn history_csv_format() {
        let h = [EpochRecord {
            epoch: 0,
            train_mse: 1.5,
            val_mse: 2.0,
        }];
        assert_eq!(history_csv(&h), "epoch,train_mse,val_mse\n0,1.5,2\n");
    }
}
