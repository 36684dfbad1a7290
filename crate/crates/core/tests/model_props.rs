mod common;

use common::{rng, uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sthcss_core::hypergraph::{build_hypergraph, normalized_adjacency, DegreeMode};
use sthcss_core::model::{gtc_forward, Model, ModelConfig, StVars};
use sthcss_core::tape::Tape;
use sthcss_core::tensor::Tensor;

fn gtc_rows(x: &Tensor, kernels: &[Tensor; 4], dilation: usize) -> Tensor {
    let mut tape = Tape::new();
    let p = StVars {
        filter_w: tape.constant(kernels[0].clone()),
        filter_b: tape.constant(kernels[1].clone()),
        gate_w: tape.constant(kernels[2].clone()),
        gate_b: tape.constant(kernels[3].clone()),
        theta: tape.constant(Tensor::eye(1)),
    };
    let xv = tape.constant(x.clone());
    let out = gtc_forward(&mut tape, xv, &p, dilation).unwrap();
    tape.value(out).clone()
}

/// Output at t is bit-identical whatever happens to inputs after t.
#[test]
fn gated_convolution_is_causal() {
    let w = 16;
    for k in [3usize, 7] {
        for d in [1usize, 2] {
            let mut r = rng((k * 10 + d) as u64);
            let kernels = [
                uniform(&[k], &mut r),
                uniform(&[1], &mut r),
                uniform(&[k], &mut r),
                uniform(&[1], &mut r),
            ];
            let x = uniform(&[2, w], &mut r);
            let base = gtc_rows(&x, &kernels, d);
            for t in 0..w {
                for s in (t + 1)..w {
                    let mut y = x.clone();
                    for row in 0..2 {
                        y.set2(row, s, y.get2(row, s) + 10.0 + s as f64);
                    }
                    let pert = gtc_rows(&y, &kernels, d);
                    for row in 0..2 {
                        assert_eq!(
                            pert.get2(row, t).to_bits(),
                            base.get2(row, t).to_bits(),
                            "K={k} d={d}: output {t} moved when input {s} changed"
                        );
                    }
                }
                // sanity: the current input does reach output t
                let mut y = x.clone();
                y.set2(0, t, y.get2(0, t) + 1.0);
                assert_ne!(gtc_rows(&y, &kernels, d).get2(0, t), base.get2(0, t));
            }
        }
    }
}

#[test]
fn dropout_preserves_expectation() {
    let trials = 100_000;
    let x = Tensor::full(&[trials], 1.0);
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for p in [0.1, 0.2, 0.5] {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = tape.dropout(v, p, &mut r, true).unwrap();
        let vals = tape.value(out).data();
        let mean = vals.iter().sum::<f64>() / trials as f64;
        assert!((mean - 1.0).abs() < 0.01, "p={p}: mean {mean}");
        let kept = vals.iter().filter(|&&v| v != 0.0).count() as f64 / trials as f64;
        assert!((kept - (1.0 - p)).abs() < 0.01);
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / (1.0 - p)).abs() < 1e-12));
    }
    // eval mode is the identity and draws nothing
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let mut a = ChaCha8Rng::seed_from_u64(1);
    let out = tape.dropout(v, 0.5, &mut a, false).unwrap();
    assert_eq!(out, v);
    let mut b = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(rand::Rng::random::<u64>(&mut a), rand::Rng::random::<u64>(&mut b));
}

/// Relabelling sensors (inputs, adjacency and every sensor-indexed
/// parameter) relabels the node features before the readout.
#[test]
fn node_features_follow_sensor_permutation() {
    let d = 5;
    let cfg = ModelConfig {
        sensors: d,
        window: 9,
        channels: 3,
        kernel_size: 3,
        readout_hidden: 4,
        knn_k: 2,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg.clone()).unwrap();
    let perm = [3usize, 0, 4, 1, 2];
    let mut r = rng(5);
    let feats = uniform(&[d, 20], &mut r);
    let adj = normalized_adjacency(&build_hypergraph(&feats, 3).unwrap(), DegreeMode::Count)
        .unwrap()
        .adjacency;
    let x = uniform(&[2, d, 9], &mut r);

    let permute_rows = |t: &Tensor| -> Tensor {
        let shape = t.shape().to_vec();
        let inner: usize = shape[1..].iter().product();
        let mut out = t.clone();
        for (new, &old) in perm.iter().enumerate() {
            out.data_mut()[new * inner..(new + 1) * inner]
                .copy_from_slice(&t.data()[old * inner..(old + 1) * inner]);
        }
        out
    };
    let permute_both = |t: &Tensor| -> Tensor {
        let mut out = t.clone();
        for i in 0..d {
            for j in 0..d {
                out.set2(i, j, t.get2(perm[i], perm[j]));
            }
        }
        out
    };

    let mut pmodel = model.clone();
    let names: Vec<String> = model.params.iter().map(|p| p.name.clone()).collect();
    for name in &names {
        let v = model.params.get(name).unwrap();
        let new = if name.contains(".feat") && v.rank() == 2 {
            permute_both(v)
        } else if name.contains(".feat") {
            permute_rows(v)
        } else {
            continue;
        };
        *pmodel.params.get_mut(name).unwrap() = new;
    }
    let mut px = x.clone();
    for b in 0..2 {
        let slice = Tensor::new(vec![d, 9], x.data()[b * d * 9..(b + 1) * d * 9].to_vec()).unwrap();
        px.data_mut()[b * d * 9..(b + 1) * d * 9].copy_from_slice(permute_rows(&slice).data());
    }

    let nodes = |m: &Model, a: &Tensor, x: &Tensor| -> Tensor {
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let out = m.forward_nodes(&mut tape, &bound, a, x, None).unwrap();
        tape.value(out).clone()
    };
    let base = nodes(&model, &adj, &x);
    let moved = nodes(&pmodel, &permute_both(&adj), &px);
    let c = cfg.channels;
    for b in 0..2 {
        for (new, &old) in perm.iter().enumerate() {
            for ch in 0..c {
                let a = moved.data()[(b * d + new) * c + ch];
                let e = base.data()[(b * d + old) * c + ch];
                assert!((a - e).abs() < 1e-12, "batch {b} node {old}->{new}: {a} vs {e}");
            }
        }
    }
}
