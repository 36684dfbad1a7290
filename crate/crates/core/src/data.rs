//! Sensor series ingestion, chronological splitting, standardization,
//! sliding windows, and the synthetic multi-group process generator.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hypergraph::format_g17;
use crate::tensor::Tensor;

/// Floor applied to the standard deviation of constant columns.
pub const STD_FLOOR: f64 = 1e-8;

/// Auxiliary sensor readings plus the dominant (target) variable.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSeries {
    pub names: Vec<String>,
    /// Row-major `T × D` readings, one row per timestep.
    pub values: Vec<f64>,
    pub target_name: String,
    pub target: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl SensorSeries {
    pub fn new(
        names: Vec<String>,
        values: Vec<f64>,
        target_name: String,
        target: Vec<f64>,
    ) -> Result<Self> {
        let d = names.len();
        if d == 0 {
            return Err(Error::Schema("no sensor columns".into()));
        }
        if values.len() != d * target.len() {
            return Err(Error::Dimension(format!(
                "{} readings for {d} sensors and {} timesteps",
                values.len(),
                target.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in names.iter().chain(std::iter::once(&target_name)) {
            if !seen.insert(n.as_str()) {
                return Err(Error::Schema(format!("duplicate column name {n:?}")));
            }
        }
        Ok(SensorSeries {
            names,
            values,
            target_name,
            target,
            sample_rate_hz: 1.0,
        })
    }

    pub fn sensors(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn at(&self, t: usize, sensor: usize) -> f64 {
        self.values[t * self.sensors() + sensor]
    }

    /// One sensor's full series.
    pub fn column(&self, sensor: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.at(t, sensor)).collect()
    }

    /// Rows `start..end` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> SensorSeries {
        let d = self.sensors();
        SensorSeries {
            names: self.names.clone(),
            values: self.values[start * d..end * d].to_vec(),
            target_name: self.target_name.clone(),
            target: self.target[start..end].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// `D × T` matrix with one row per sensor, used as hypergraph node
    /// features.
    pub fn node_features(&self) -> Tensor {
        let (t, d) = (self.len(), self.sensors());
        let mut data = vec![0.0; t * d];
        for s in 0..d {
            for i in 0..t {
                data[s * t + i] = self.at(i, s);
            }
        }
        Tensor::new(vec![d, t], data).expect("non-empty series")
    }
}

/// Reads a headered CSV; `target_column` becomes the target and every other
/// column a sensor.
pub fn load_csv(path: &Path, target_column: &str) -> Result<SensorSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(e, path))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(e, path))?
        .iter()
        .map(str::to_string)
        .collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| {
            Error::Schema(format!(
                "target column {target_column:?} not found in {}",
                path.display()
            ))
        })?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut target = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        // header is line 1
        let row = row_idx + 2;
        let record = record.map_err(|e| csv_error(e, path))?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: format!("{} fields", record.len()),
                message: format!("expected {} fields", headers.len()),
            });
        }
        for (i, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: headers[i].clone(),
                message: if cell.is_empty() {
                    "missing value".into()
                } else {
                    format!("non-numeric value {cell:?}")
                },
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: headers[i].clone(),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            if i == target_idx {
                target.push(v);
            } else {
                values.push(v);
            }
        }
    }
    if target.is_empty() {
        return Err(Error::EmptyData(format!("{} has no data rows", path.display())));
    }
    SensorSeries::new(names, values, target_column.to_string(), target)
}

fn csv_error(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Writes the series in the ingestion schema (sensors first, target last).
pub fn write_csv(series: &SensorSeries, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(e, path))?;
    let mut header: Vec<&str> = series.names.iter().map(String::as_str).collect();
    header.push(&series.target_name);
    w.write_record(&header).map_err(|e| csv_error(e, path))?;
    let d = series.sensors();
    for t in 0..series.len() {
        let mut row: Vec<String> = series.values[t * d..(t + 1) * d]
            .iter()
            .map(|&v| format_g17(v))
            .collect();
        row.push(format_g17(series.target[t]));
        w.write_record(&row).map_err(|e| csv_error(e, path))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|&x| !(x > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios {r:?} must be positive and sum to 1"
            )));
        }
        Ok(())
    }

    /// Segment boundaries `(b1, b2)`: train `0..b1`, val `b1..b2`, test `b2..T`.
    pub fn boundaries(&self, t: usize) -> (usize, usize) {
        let b1 = (self.train * t as f64 + 1e-9).floor() as usize;
        let b2 = ((self.train + self.val) * t as f64 + 1e-9).floor() as usize;
        (b1.min(t), b2.min(t))
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: SensorSeries,
    pub val: SensorSeries,
    pub test: SensorSeries,
}

/// Contiguous train/validation/test segments in time order. Every segment
/// must hold at least one full window.
pub fn split_chronological(
    series: &SensorSeries,
    ratios: SplitRatios,
    window: usize,
) -> Result<Splits> {
    ratios.validate()?;
    let t = series.len();
    let (b1, b2) = ratios.boundaries(t);
    for (name, len) in [("training", b1), ("validation", b2 - b1), ("test", t - b2)] {
        if len < window || len == 0 {
            return Err(Error::InsufficientData(format!(
                "{name} segment has {len} timesteps, window needs {window}"
            )));
        }
    }
    Ok(Splits {
        train: series.slice(0, b1),
        val: series.slice(b1, b2),
        test: series.slice(b2, t),
    })
}

/// Per-sensor and target location/scale from the training segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Standardization {
    pub fn fit(train: &SensorSeries) -> Self {
        let d = train.sensors();
        let mut mean = Vec::with_capacity(d);
        let mut std = Vec::with_capacity(d);
        for s in 0..d {
            let (m, sd) = mean_std((0..train.len()).map(|t| train.at(t, s)));
            if sd < STD_FLOOR {
                warn!(
                    "sensor {:?} is constant over the training split; it standardizes to zeros",
                    train.names[s]
                );
            }
            mean.push(m);
            std.push(sd.max(STD_FLOOR));
        }
        let (target_mean, tsd) = mean_std(train.target.iter().copied());
        if tsd < STD_FLOOR {
            warn!("target {:?} is constant over the training split", train.target_name);
        }
        Standardization {
            mean,
            std,
            target_mean,
            target_std: tsd.max(STD_FLOOR),
        }
    }

    pub fn apply(&self, series: &SensorSeries) -> Result<SensorSeries> {
        let d = series.sensors();
        if d != self.mean.len() {
            return Err(Error::Dimension(format!(
                "standardization fitted on {} sensors, series has {d}",
                self.mean.len()
            )));
        }
        let mut out = series.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            let s = i % d;
            *v = (*v - self.mean[s]) / self.std[s];
        }
        for y in out.target.iter_mut() {
            *y = (*y - self.target_mean) / self.target_std;
        }
        Ok(out)
    }

    pub fn destandardize_target(&self, y: f64) -> f64 {
        y * self.target_std + self.target_mean
    }
}

/// Fits on `train` and standardizes every split with the training statistics.
pub fn standardize(splits: &Splits) -> Result<(Splits, Standardization)> {
    let stats = Standardization::fit(&splits.train);
    Ok((
        Splits {
            train: stats.apply(&splits.train)?,
            val: stats.apply(&splits.val)?,
            test: stats.apply(&splits.test)?,
        },
        stats,
    ))
}

/// Sliding windows over one contiguous segment.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub sensors: usize,
    pub window: usize,
    /// `[N, D, W]` row-major.
    windows: Vec<f64>,
    pub targets: Vec<f64>,
    /// Timestep (within the source segment) of each window's last column.
    pub end_index: Vec<usize>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Window `i` as a `D·W` slice (row per sensor).
    pub fn window_slice(&self, i: usize) -> &[f64] {
        let n = self.sensors * self.window;
        &self.windows[i * n..(i + 1) * n]
    }

    pub fn window(&self, i: usize) -> Tensor {
        Tensor::new(vec![self.sensors, self.window], self.window_slice(i).to_vec())
            .expect("window shape")
    }

    /// Stacks the selected windows into `[B, D, W]`.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let n = self.sensors * self.window;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.window_slice(i));
        }
        Tensor::new(vec![indices.len(), self.sensors, self.window], data).expect("batch shape")
    }

    pub fn batch_targets(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.targets[i]).collect()
    }
}

/// Windows `X_t = [x_{t-W+1}, ..., x_t]` (as `D × W`) paired with `y_t`.
pub fn make_windows(series: &SensorSeries, window: usize, stride: usize) -> Result<WindowedDataset> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window and stride must be positive".into()));
    }
    let (t, d) = (series.len(), series.sensors());
    if window > t {
        return Err(Error::InsufficientData(format!(
            "window {window} exceeds series length {t}"
        )));
    }
    let count = (t - window) / stride + 1;
    let mut windows = Vec::with_capacity(count * d * window);
    let mut targets = Vec::with_capacity(count);
    let mut end_index = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * stride;
        for s in 0..d {
            windows.extend((start..start + window).map(|r| series.at(r, s)));
        }
        let end = start + window - 1;
        targets.push(series.target[end]);
        end_index.push(end);
    }
    Ok(WindowedDataset {
        sensors: d,
        window,
        windows,
        targets,
        end_index,
    })
}

/// Baseline level of the synthetic target, keeping it away from zero so
/// percentage errors stay meaningful.
pub const TARGET_LEVEL: f64 = 10.0;

/// How the synthetic target combines the group drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    /// `tanh(z0)·z1 + 0.5·z2² + 0.3·z0`, all lagged (extra groups ignored).
    /// Both kinds add [`TARGET_LEVEL`].
    Nonlinear,
    /// Fixed weighted sum of the lagged drivers.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sensors: usize,
    /// Group sizes; groups are contiguous sensor ranges in order.
    pub groups: Vec<usize>,
    pub length: usize,
    pub noise_std: f64,
    /// Adds a mild tanh distortion to every sensor's response.
    pub nonlinear_sensors: bool,
    /// Every sensor reads its group driver unchanged (gain 1, offset 0).
    pub identity_response: bool,
    pub target: TargetKind,
    /// Delay (in steps) between drivers and target.
    pub target_lag: usize,
    /// Number of operating regimes; each shifts the group drivers' levels.
    pub segments: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sensors: 12,
            groups: vec![4, 4, 4],
            length: 6000,
            noise_std: 0.1,
            nonlinear_sensors: true,
            identity_response: false,
            target: TargetKind::Nonlinear,
            target_lag: 5,
            segments: 1,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() || self.groups.contains(&0) {
            return Err(Error::Config(format!(
                "groups {:?} must be non-empty positive sizes",
                self.groups
            )));
        }
        if self.groups.iter().sum::<usize>() != self.sensors {
            return Err(Error::Config(format!(
                "group sizes {:?} do not partition {} sensors",
                self.groups, self.sensors
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        if self.length == 0 || self.segments == 0 || self.segments > self.length {
            return Err(Error::Config(format!(
                "length {} and segments {} must be positive with segments <= length",
                self.length, self.segments
            )));
        }
        Ok(())
    }

    /// Group index of every sensor.
    pub fn group_of(&self) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, &n)| std::iter::repeat_n(g, n))
            .collect()
    }
}

/// Parses comma-separated group sizes such as `4,4,4`.
pub fn parse_groups(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("malformed group sizes {s:?}")))
        })
        .collect()
}

struct Response {
    gain: f64,
    offset: f64,
    bend: f64,
}

/// Deterministic synthetic process with group-correlated sensors.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SensorSeries> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t_len = cfg.length;
    let n_groups = cfg.groups.len();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let drivers: Vec<Vec<f64>> = (0..n_groups)
        .map(|_| latent_driver(t_len, cfg.segments, &mut rng, &unit))
        .collect();

    let responses: Vec<Response> = (0..cfg.sensors)
        .map(|_| Response {
            gain: 1.0,
            offset: 0.0,
            bend: 0.0,
        })
        .collect();
    let responses = if cfg.identity_response {
        responses
    } else {
        random_responses(cfg, &mut rng)
    };

    let group_of = cfg.group_of();
    let mut values = Vec::with_capacity(t_len * cfg.sensors);
    for t in 0..t_len {
        for (s, r) in responses.iter().enumerate() {
            let z = drivers[group_of[s]][t];
            let noise = if cfg.noise_std > 0.0 {
                cfg.noise_std * unit.sample(&mut rng)
            } else {
                0.0
            };
            values.push(r.gain * z + r.bend * z.tanh() + r.offset + noise);
        }
    }

    let linear_weights: Vec<f64> = (0..n_groups).map(|g| 1.0 / (g as f64 + 1.0)).collect();
    let target = (0..t_len)
        .map(|t| {
            let lt = t.saturating_sub(cfg.target_lag);
            let z = |g: usize| drivers[g % n_groups][lt];
            match cfg.target {
                TargetKind::Nonlinear => {
                    TARGET_LEVEL + z(0).tanh() * z(1) + 0.5 * z(2).powi(2) + 0.3 * z(0)
                }
                TargetKind::Linear => {
                    TARGET_LEVEL + (0..n_groups).map(|g| linear_weights[g] * z(g)).sum::<f64>()
                }
            }
        })
        .collect();

    let names = (0..cfg.sensors).map(|s| format!("s{:02}", s + 1)).collect();
    SensorSeries::new(names, values, "y".into(), target)
}

fn random_responses(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Response> {
    (0..cfg.sensors)
        .map(|_| Response {
            gain: rng.random_range(0.6..1.4),
            offset: rng.random_range(-2.0..2.0),
            bend: if cfg.nonlinear_sensors {
                rng.random_range(-0.3..0.3)
            } else {
                0.0
            },
        })
        .collect()
}

/// Smooth unit-scale driver: three slow sinusoids plus an AR(1) term, with a
/// level shift per regime segment.
fn latent_driver(
    t_len: usize,
    segments: usize,
    rng: &mut ChaCha8Rng,
    unit: &Normal<f64>,
) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let period: f64 = rng.random_range(40.0..400.0);
            let amp: f64 = rng.random_range(0.4..1.0);
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            (amp, 2.0 * PI / period, phase)
        })
        .collect();
    let levels: Vec<f64> = (0..segments)
        .map(|s| if s == 0 { 0.0 } else { rng.random_range(-1.0..1.0) })
        .collect();
    let seg_len = t_len.div_ceil(segments);
    let mut ar = 0.0;
    let mut raw: Vec<f64> = (0..t_len)
        .map(|t| {
            ar = 0.97 * ar + 0.1 * unit.sample(rng);
            let wave: f64 = waves
                .iter()
                .map(|(a, w, p)| a * (w * t as f64 + p).sin())
                .sum();
            wave + ar + levels[t / seg_len]
        })
        .collect();
    let (m, sd) = mean_std(raw.iter().copied());
    for v in raw.iter_mut() {
        *v = (*v - m) / sd.max(STD_FLOOR);
    }
    raw
}

/// Pearson correlation of two equal-length series; `None` if either is
/// constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// `D × D` matrix of absolute Pearson correlations between sensors. Constant
/// sensors correlate 0 with everything but themselves.
pub fn abs_correlation_matrix(series: &SensorSeries) -> Tensor {
    let d = series.sensors();
    let cols: Vec<Vec<f64>> = (0..d).map(|s| series.column(s)).collect();
    let mut out = Tensor::eye(d);
    for i in 0..d {
        for j in (i + 1)..d {
            let r = pearson(&cols[i], &cols[j]).map_or(0.0, f64::abs);
            out.set2(i, j, r);
            out.set2(j, i, r);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn series(t: usize, d: usize) -> SensorSeries {
        let names = (0..d).map(|i| format!("x{i}")).collect();
        let values = (0..t * d).map(|i| i as f64).collect();
        let target = (0..t).map(|i| 100.0 + i as f64).collect();
        SensorSeries::new(names, values, "y".into(), target).unwrap()
    }

    #[test]
    fn load_small_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "a,y,b\n1,10,2\n3,11,4\n5,12,6\n").unwrap();
        let s = load_csv(&p, "y").unwrap();
        assert_eq!((s.len(), s.sensors()), (3, 2));
        assert_eq!(s.names, vec!["a", "b"]);
        assert_eq!(s.values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(s.target, vec![10.0, 11.0, 12.0]);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "a,y\n").unwrap();
        assert!(matches!(load_csv(&p, "y"), Err(Error::EmptyData(_))));
        fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(load_csv(&p, "y"), Err(Error::Schema(_))));
        fs::write(&p, "a,y\n1,2\n3,oops\n").unwrap();
        match load_csv(&p, "y") {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "y");
            }
            other => panic!("{other:?}"),
        }
        fs::write(&p, "a,y\n1,\n").unwrap();
        assert!(matches!(load_csv(&p, "y"), Err(Error::Parse { .. })));
        assert!(matches!(
            load_csv(&dir.path().join("nope.csv"), "y"),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let mut s = series(4, 3);
        s.values[5] = 0.1 + 0.2;
        write_csv(&s, &p).unwrap();
        assert_eq!(load_csv(&p, "y").unwrap(), s);
    }

    #[test]
    fn split_examples() {
        let s = series(10, 2);
        let sp = split_chronological(&s, SplitRatios::default(), 1).unwrap();
        assert_eq!((sp.train.len(), sp.val.len(), sp.test.len()), (6, 2, 2));
        let mut joined = sp.train.values.clone();
        joined.extend(&sp.val.values);
        joined.extend(&sp.test.values);
        assert_eq!(joined, s.values);

        let s = series(5, 2);
        assert!(matches!(
            split_chronological(&s, SplitRatios::default(), 3),
            Err(Error::InsufficientData(_))
        ));
        let bad = SplitRatios {
            train: 0.5,
            val: 0.2,
            test: 0.2,
        };
        assert!(split_chronological(&series(100, 1), bad, 1).is_err());
    }

    #[test]
    fn standardize_examples() {
        let mut s = series(20, 2);
        for t in 0..20 {
            s.values[t * 2 + 1] = 3.0;
        }
        let sp = split_chronological(&s, SplitRatios::default(), 2).unwrap();
        let (std_sp, stats) = standardize(&sp).unwrap();
        let col = std_sp.train.column(0);
        let (m, sd) = mean_std(col.iter().copied());
        assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        assert!(std_sp.test.column(1).iter().all(|&v| v == 0.0));
        for (z, y) in std_sp.val.target.iter().zip(&sp.val.target) {
            assert!((stats.destandardize_target(*z) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn window_examples() {
        assert_eq!(make_windows(&series(5, 2), 3, 1).unwrap().len(), 3);
        let s = SensorSeries::new(
            vec!["x".into()],
            vec![1.0, 2.0, 3.0, 4.0],
            "y".into(),
            vec![10.0, 20.0, 30.0, 40.0],
        )
        .unwrap();
        let w = make_windows(&s, 2, 1).unwrap();
        assert_eq!(w.window_slice(0), &[1.0, 2.0]);
        assert_eq!(w.window_slice(1), &[2.0, 3.0]);
        assert_eq!(w.window_slice(2), &[3.0, 4.0]);
        assert_eq!(w.targets, vec![20.0, 30.0, 40.0]);
        assert!(matches!(make_windows(&s, 5, 1), Err(Error::InsufficientData(_))));
        assert_eq!(make_windows(&s, 2, 2).unwrap().len(), 2);
    }

    #[test]
    fn windows_are_sensor_rows() {
        let s = series(6, 2);
        let w = make_windows(&s, 3, 1).unwrap();
        // window 1 covers t = 1..=3; row for sensor 1 is values[t*2+1]
        assert_eq!(w.window_slice(1), &[2.0, 4.0, 6.0, 3.0, 5.0, 7.0]);
        assert_eq!(w.batch(&[1, 0]).shape(), &[2, 2, 3]);
    }

    #[test]
    fn synth_shared_driver_and_determinism() {
        let cfg = SynthConfig {
            sensors: 2,
            groups: vec![2],
            length: 200,
            noise_std: 0.0,
            identity_response: true,
            ..SynthConfig::default()
        };
        let s = synth_generate(&cfg).unwrap();
        assert_eq!(s.column(0), s.column(1));

        let d = SynthConfig::default();
        assert_eq!(synth_generate(&d).unwrap(), synth_generate(&d).unwrap());
    }

    #[test]
    fn synth_config_validation() {
        let cfg = SynthConfig {
            groups: vec![4, 4],
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&cfg), Err(Error::Config(_))));
        assert!(parse_groups("4,,4").is_err());
        assert!(parse_groups("4,x").is_err());
        assert_eq!(parse_groups("4, 4,4").unwrap(), vec![4, 4, 4]);
    }

    #[test]
    fn node_features_are_sensor_rows() {
        let s = series(3, 2);
        let f = s.node_features();
        assert_eq!(f.shape(), &[2, 3]);
        assert_eq!(f.data(), &[0.0, 2.0, 4.0, 1.0, 3.0, 5.0]);
    }
}
