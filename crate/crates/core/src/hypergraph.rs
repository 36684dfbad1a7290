//! KNN hypergraph over sensor nodes and its spectral operators.
//!
//! Every node `v_j` anchors one hyperedge `e_j = {v_j} ∪ (k-1 nearest
//! others)`. Incident pairs carry the Gaussian-kernel weight
//! `exp(-dist(v_i, v_j)^2 / delta)` where `delta` is the mean distance over
//! all ordered node pairs. The propagation operator is
//!
//! ```text
//! N = Dv^{-1/2} H diag(w_e) De^{-1} Hᵀ Dv^{-1/2},    L = I - N
//! ```
//!
//! with `w_e` the mean incident weight of hyperedge `e`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, SymmetricEigen};
use crate::tensor::Tensor;

/// How vertex degrees are summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegreeMode {
    /// `d(v) = Σ_e h(v, e)`.
    #[default]
    Count,
    /// `d(v) = Σ_e w(v, e)`.
    Weighted,
}

impl std::str::FromStr for DegreeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(DegreeMode::Count),
            "weighted" => Ok(DegreeMode::Weighted),
            other => Err(Error::Config(format!(
                "unknown degree mode {other:?} (expected count or weighted)"
            ))),
        }
    }
}

impl std::fmt::Display for DegreeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DegreeMode::Count => "count",
            DegreeMode::Weighted => "weighted",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Hypergraph {
    /// |V|×|E| incidence, entries in {0, 1}.
    pub incidence: Tensor,
    /// |V|×|E| incident weights, zero where the incidence is zero.
    pub weights: Tensor,
    pub k: usize,
    /// Kernel scale used for the weights.
    pub delta: f64,
}

/// Euclidean distances between the rows of `features` (|V|×F).
pub fn pairwise_distances(features: &Tensor) -> Result<Tensor> {
    let (n, f) = features.dims2()?;
    if n == 0 || f == 0 {
        return Err(Error::InvalidArgument("empty node set".into()));
    }
    let rows: Vec<&[f64]> = features.data().chunks(f).collect();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = rows[i]
                .iter()
                .zip(rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            out.set2(i, j, d);
            out.set2(j, i, d);
        }
    }
    Ok(out)
}

/// Indices of the `k` members of the hyperedge anchored at `anchor`: the
/// anchor itself, then the `k - 1` closest other nodes. Ties go to the lower
/// index.
fn knn_members(dist: &Tensor, anchor: usize, k: usize) -> Vec<usize> {
    let n = dist.shape()[0];
    let mut others: Vec<usize> = (0..n).filter(|&i| i != anchor).collect();
    others.sort_by(|&a, &b| {
        dist.get2(a, anchor)
            .total_cmp(&dist.get2(b, anchor))
            .then(a.cmp(&b))
    });
    let mut members = Vec::with_capacity(k);
    members.push(anchor);
    members.extend(others.into_iter().take(k - 1));
    members
}

/// Builds the KNN hypergraph from one feature row per node.
pub fn build_hypergraph(features: &Tensor, k: usize) -> Result<Hypergraph> {
    let dist = pairwise_distances(features)?;
    let n = dist.shape()[0];
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "neighborhood size k = {k} must lie in 1..={n}"
        )));
    }
    if !features.is_finite() {
        return Err(Error::InvalidArgument("node features must be finite".into()));
    }
    if n < 2 {
        return Err(Error::DegenerateScale(
            "a single node has no pairwise distances to set the kernel scale".into(),
        ));
    }
    let delta = dist.sum() / (n * (n - 1)) as f64;
    if delta <= 0.0 {
        return Err(Error::DegenerateScale(
            "all node features are identical (mean pairwise distance is 0)".into(),
        ));
    }

    let mut incidence = Tensor::zeros(&[n, n]);
    let mut weights = Tensor::zeros(&[n, n]);
    for j in 0..n {
        for i in knn_members(&dist, j, k) {
            let d = dist.get2(i, j);
            incidence.set2(i, j, 1.0);
            // exp underflows to 0 only for absurd distance ratios; keep the
            // weight strictly positive so it stays consistent with H.
            weights.set2(i, j, (-d * d / delta).exp().max(f64::MIN_POSITIVE));
        }
    }
    Ok(Hypergraph {
        incidence,
        weights,
        k,
        delta,
    })
}

impl Hypergraph {
    pub fn num_nodes(&self) -> usize {
        self.incidence.shape()[0]
    }

    pub fn num_edges(&self) -> usize {
        self.incidence.shape()[1]
    }

    /// Diagonals of `Dv` and `De`.
    pub fn degrees(&self, mode: DegreeMode) -> (Vec<f64>, Vec<f64>) {
        let (nv, ne) = (self.num_nodes(), self.num_edges());
        let vsrc = match mode {
            DegreeMode::Count => &self.incidence,
            DegreeMode::Weighted => &self.weights,
        };
        let dv = (0..nv)
            .map(|i| (0..ne).map(|e| vsrc.get2(i, e)).sum())
            .collect();
        let de = (0..ne)
            .map(|e| (0..nv).map(|i| self.incidence.get2(i, e)).sum())
            .collect();
        (dv, de)
    }

    /// Per-hyperedge scalar weight: mean of the incident weights.
    pub fn edge_weights(&self) -> Vec<f64> {
        (0..self.num_edges())
            .map(|e| {
                let (mut s, mut c) = (0.0, 0.0);
                for i in 0..self.num_nodes() {
                    if self.incidence.get2(i, e) != 0.0 {
                        s += self.weights.get2(i, e);
                        c += 1.0;
                    }
                }
                if c > 0.0 {
                    s / c
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// `(Dv, De)` as diagonal matrices.
pub fn degree_matrices(hg: &Hypergraph, mode: DegreeMode) -> (Tensor, Tensor) {
    let (dv, de) = hg.degrees(mode);
    (diag(&dv), diag(&de))
}

fn diag(values: &[f64]) -> Tensor {
    let n = values.len();
    let mut t = Tensor::zeros(&[n, n]);
    for (i, &v) in values.iter().enumerate() {
        t.set2(i, i, v);
    }
    t
}

#[derive(Debug, Clone)]
pub struct SpectralOperators {
    /// Normalized weighted adjacency `N`.
    pub adjacency: Tensor,
    /// `L = I - N`.
    pub laplacian: Tensor,
    pub eigen: Option<SymmetricEigen>,
}

/// Derives `N` and `L` from the hypergraph.
pub fn normalized_adjacency(hg: &Hypergraph, mode: DegreeMode) -> Result<SpectralOperators> {
    let (dv, de) = hg.degrees(mode);
    if let Some(i) = dv.iter().position(|&d| d <= 0.0) {
        return Err(Error::DegenerateGraph(format!("vertex {i} has zero degree")));
    }
    if let Some(e) = de.iter().position(|&d| d <= 0.0) {
        return Err(Error::DegenerateGraph(format!("hyperedge {e} is empty")));
    }
    let we = hg.edge_weights();
    let (nv, ne) = (hg.num_nodes(), hg.num_edges());

    // N = M Mᵀ with M = Dv^{-1/2} H (diag(w_e) De^{-1})^{1/2}
    let mut m = Tensor::zeros(&[nv, ne]);
    for i in 0..nv {
        for e in 0..ne {
            let h = hg.incidence.get2(i, e);
            if h != 0.0 {
                m.set2(i, e, h * (we[e] / de[e]).sqrt() / dv[i].sqrt());
            }
        }
    }
    let mut adjacency = m.matmul(&m.t()?)?;
    // exact symmetry
    for i in 0..nv {
        for j in (i + 1)..nv {
            let v = 0.5 * (adjacency.get2(i, j) + adjacency.get2(j, i));
            adjacency.set2(i, j, v);
            adjacency.set2(j, i, v);
        }
    }
    let mut laplacian = adjacency.map(|v| -v);
    for i in 0..nv {
        laplacian.set2(i, i, 1.0 - adjacency.get2(i, i));
    }
    Ok(SpectralOperators {
        adjacency,
        laplacian,
        eigen: None,
    })
}

impl SpectralOperators {
    /// Attaches the eigendecomposition of `L`.
    pub fn with_eigen(mut self) -> Result<Self> {
        let eigen = symmetric_eigen(&self.laplacian).map_err(|e| {
            e.with_context(format!(
                "eigendecomposition of the {}×{} hypergraph Laplacian",
                self.laplacian.shape()[0],
                self.laplacian.shape()[0]
            ))
        })?;
        self.eigen = Some(eigen);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.shape()[0]
    }
}

/// `Φ g(Λ) Φᵀ x` in the eigenbasis of the Laplacian.
pub fn spectral_filter(
    x: &[f64],
    g: impl Fn(f64) -> f64,
    ops: &SpectralOperators,
) -> Result<Vec<f64>> {
    let eigen = ops
        .eigen
        .as_ref()
        .ok_or_else(|| Error::Numerical("spectral operators carry no eigendecomposition".into()))?;
    let n = eigen.values.len();
    if x.len() != n {
        return Err(Error::Dimension(format!(
            "signal of length {} on a {n}-node graph",
            x.len()
        )));
    }
    let phi = &eigen.vectors;
    let coeffs: Vec<f64> = (0..n)
        .map(|k| {
            let proj: f64 = (0..n).map(|i| phi.get2(i, k) * x[i]).sum();
            g(eigen.values[k]) * proj
        })
        .collect();
    Ok((0..n)
        .map(|i| (0..n).map(|k| phi.get2(i, k) * coeffs[k]).sum())
        .collect())
}

/// Formats like C's `%.17g`.
pub fn format_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if !(-4..17).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (16 - exp).max(0) as usize;
    strip_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Row-major CSV, no header, one row per line.
pub fn write_matrix_csv(m: &Tensor, path: &Path) -> Result<()> {
    let (rows, cols) = m.dims2()?;
    let mut out = String::new();
    for i in 0..rows {
        let line: Vec<String> = (0..cols).map(|j| format_g17(m.get2(i, j))).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_context(e, path))
}

/// Plain (P2) 8-bit grayscale image with values linearly scaled from
/// [min, max] to [0, 255]. A constant matrix maps to mid-gray 128.
pub fn write_matrix_pgm(m: &Tensor, path: &Path) -> Result<()> {
    let (rows, cols) = m.dims2()?;
    let (lo, hi) = m
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let mut out = format!("P2 {cols} {rows} 255\n");
    for i in 0..rows {
        let line: Vec<String> = (0..cols)
            .map(|j| {
                let px = if range > 0.0 && range.is_finite() {
                    ((m.get2(i, j) - lo) / range * 255.0).round() as u8
                } else {
                    128
                };
                px.to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| io_context(e, path))?;
    f.write_all(out.as_bytes()).map_err(|e| io_context(e, path))?;
    Ok(())
}

/// Writes `N` as `<dir>/<stem>.csv` and `<dir>/<stem>.pgm`.
pub fn export_adjacency(ops: &SpectralOperators, dir: &Path, stem: &str) -> Result<()> {
    write_matrix_csv(&ops.adjacency, &dir.join(format!("{stem}.csv")))?;
    write_matrix_pgm(&ops.adjacency, &dir.join(format!("{stem}.pgm")))
}

fn io_context(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(values: &[f64]) -> Tensor {
        Tensor::new(vec![values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn distance_examples() {
        let d = pairwise_distances(&Tensor::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap())
            .unwrap();
        assert_eq!(d.data(), &[0.0, 5.0, 5.0, 0.0]);
        assert_eq!(pairwise_distances(&col(&[2.0])).unwrap().data(), &[0.0]);
        let d = pairwise_distances(&col(&[0.0, 1.0, 5.0])).unwrap();
        assert_eq!(d.data(), &[0.0, 1.0, 5.0, 1.0, 0.0, 4.0, 5.0, 4.0, 0.0]);
    }

    #[test]
    fn k1_is_identity() {
        let hg = build_hypergraph(&col(&[0.3, -1.0, 2.0, 7.0]), 1).unwrap();
        assert_eq!(hg.incidence, Tensor::eye(4));
        assert_eq!(hg.weights, Tensor::eye(4));
        let ops = normalized_adjacency(&hg, DegreeMode::Count).unwrap();
        assert_eq!(ops.adjacency, Tensor::eye(4));
        assert!(ops.laplacian.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_node_hand_example() {
        let hg = build_hypergraph(&col(&[0.0, 1.0, 5.0]), 2).unwrap();
        assert!((hg.delta - 10.0 / 3.0).abs() < 1e-15);
        assert_eq!(hg.incidence.get2(0, 0), 1.0);
        assert_eq!(hg.incidence.get2(1, 0), 1.0);
        assert_eq!(hg.incidence.get2(2, 0), 0.0);
        assert!((hg.weights.get2(1, 0) - (-0.3f64).exp()).abs() < 1e-15);
        assert!((hg.weights.get2(1, 0) - 0.7408).abs() < 1e-4);
        // node 2's nearest other node is 1 (distance 4)
        assert_eq!(hg.incidence.get2(1, 2), 1.0);
    }

    #[test]
    fn construction_errors() {
        let f = col(&[0.0, 1.0]);
        assert!(matches!(build_hypergraph(&f, 3), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_hypergraph(&f, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            build_hypergraph(&col(&[4.0, 4.0, 4.0]), 2),
            Err(Error::DegenerateScale(_))
        ));
    }

    #[test]
    fn ties_prefer_lower_index() {
        // node 1 is equidistant from 0 and 2
        let hg = build_hypergraph(&col(&[0.0, 1.0, 2.0]), 2).unwrap();
        assert_eq!(hg.incidence.get2(0, 1), 1.0);
        assert_eq!(hg.incidence.get2(2, 1), 0.0);
    }

    #[test]
    fn degree_examples() {
        let eye = Hypergraph {
            incidence: Tensor::eye(3),
            weights: Tensor::eye(3),
            k: 1,
            delta: 1.0,
        };
        let (dv, de) = degree_matrices(&eye, DegreeMode::Count);
        assert_eq!(dv, Tensor::eye(3));
        assert_eq!(de, Tensor::eye(3));

        let full = Hypergraph {
            incidence: Tensor::full(&[2, 2], 1.0),
            weights: Tensor::full(&[2, 2], 0.5),
            k: 2,
            delta: 1.0,
        };
        let (dv, de) = degree_matrices(&full, DegreeMode::Count);
        assert_eq!(dv.data(), &[2.0, 0.0, 0.0, 2.0]);
        assert_eq!(de.data(), &[2.0, 0.0, 0.0, 2.0]);
        let (dvw, _) = degree_matrices(&full, DegreeMode::Weighted);
        assert_eq!(dvw.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn spectral_filter_trivial_filters() {
        let hg = build_hypergraph(&col(&[0.0, 0.4, 1.1, 3.0, 3.2]), 3).unwrap();
        let ops = normalized_adjacency(&hg, DegreeMode::Count)
            .unwrap()
            .with_eigen()
            .unwrap();
        let x = [1.0, -2.0, 0.5, 3.0, 0.0];
        let same = spectral_filter(&x, |_| 1.0, &ops).unwrap();
        let zero = spectral_filter(&x, |_| 0.0, &ops).unwrap();
        for i in 0..5 {
            assert!((same[i] - x[i]).abs() < 1e-12);
            assert_eq!(zero[i], 0.0);
        }
        let no_eigen = normalized_adjacency(&hg, DegreeMode::Count).unwrap();
        assert!(spectral_filter(&x, |_| 1.0, &no_eigen).is_err());
    }

    #[test]
    fn g17_formatting() {
        assert_eq!(format_g17(1.0), "1");
        assert_eq!(format_g17(0.0), "0");
        assert_eq!(format_g17(0.1), "0.10000000000000001");
        assert_eq!(format_g17(-2.5), "-2.5");
        assert_eq!(format_g17(1e-7), "9.9999999999999995e-08");
        assert_eq!(format_g17(1e20), "1e+20");
        assert_eq!(format_g17(123456.0), "123456");
        for v in [0.1234567890123, 1.0 / 3.0, -7.25e-5, 6.02e23] {
            assert_eq!(format_g17(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn export_identity_and_constant() {
        let dir = tempfile::tempdir().unwrap();
        let ops = SpectralOperators {
            adjacency: Tensor::eye(2),
            laplacian: Tensor::zeros(&[2, 2]),
            eigen: None,
        };
        export_adjacency(&ops, dir.path(), "adj").unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("adj.csv")).unwrap(), "1,0\n0,1\n");
        assert_eq!(
            fs::read_to_string(dir.path().join("adj.pgm")).unwrap(),
            "P2 2 2 255\n255 0\n0 255\n"
        );

        let c = Tensor::full(&[2, 3], 0.7);
        let p = dir.path().join("c.pgm");
        write_matrix_pgm(&c, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "P2 3 2 255\n128 128 128\n128 128 128\n");

        let bad = dir.path().join("missing").join("x.csv");
        assert!(matches!(write_matrix_csv(&c, &bad), Err(Error::Io(_))));
    }
}
