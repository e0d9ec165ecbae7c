//! Independent reference implementations shared by the integration tests
//! and the acceptance runner. Everything here is plain loops in f64.

#![allow(dead_code)]

use dscan::rng::{stream, Stream};
use dscan::tensor::{Padding, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    stream(seed, Stream::Synth)
}

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, rng)
}

/// "Same" padding split used by the operators: `ceil(n/s)` outputs, the
/// odd pixel of the total pad goes to the trailing side.
pub fn same_pad(n: usize, k: usize, s: usize) -> (usize, usize) {
    let out = n.div_ceil(s);
    let total = ((out - 1) * s + k).saturating_sub(n);
    (total / 2, out)
}

/// An f64 copy of a tensor for the reference implementations.
#[derive(Clone, Debug)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl From<&Tensor> for Arr {
    fn from(t: &Tensor) -> Self {
        Arr {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }
}

fn idx4(shape: &[usize], a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * shape[1] + b) * shape[2] + c) * shape[3] + d
}

/// `y[n,oy,ox,co] = sum x[n, oy*s+ky-pt, ox*s+kx-pl, ci] * k[ky,kx,ci,co]`.
pub fn conv2d(
    x: &Arr,
    k: &Arr,
    stride: usize,
    pad: (usize, usize),
    out: (usize, usize),
) -> Vec<f64> {
    let (xs, ks) = (&x.shape[..], &k.shape[..]);
    let (n, h, w, cin) = (xs[0], xs[1], xs[2], xs[3]);
    let (kk, cout) = (ks[0], ks[3]);
    let mut y = vec![0.0; n * out.0 * out.1 * cout];
    let ys = [n, out.0, out.1, cout];
    for b in 0..n {
        for oy in 0..out.0 {
            for ox in 0..out.1 {
                for co in 0..cout {
                    let mut acc = 0.0;
                    for ky in 0..kk {
                        for kx in 0..kk {
                            let iy = (oy * stride + ky) as isize - pad.0 as isize;
                            let ix = (ox * stride + kx) as isize - pad.1 as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                acc += x.data[idx4(xs, b, iy as usize, ix as usize, ci)]
                                    * k.data[idx4(ks, ky, kx, ci, co)];
                            }
                        }
                    }
                    y[idx4(&ys, b, oy, ox, co)] = acc;
                }
            }
        }
    }
    y
}

/// Same as [`conv2d`] with one filter per channel, `k[ky,kx,c]`.
pub fn depthwise(
    x: &Arr,
    k: &Arr,
    stride: usize,
    pad: (usize, usize),
    out: (usize, usize),
) -> Vec<f64> {
    let xs = &x.shape[..];
    let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
    let kk = k.shape[0];
    let ys = [n, out.0, out.1, c];
    let mut y = vec![0.0; n * out.0 * out.1 * c];
    for b in 0..n {
        for oy in 0..out.0 {
            for ox in 0..out.1 {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for ky in 0..kk {
                        for kx in 0..kk {
                            let iy = (oy * stride + ky) as isize - pad.0 as isize;
                            let ix = (ox * stride + kx) as isize - pad.1 as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x.data[idx4(xs, b, iy as usize, ix as usize, ch)]
                                * k.data[(ky * kk + kx) * c + ch];
                        }
                    }
                    y[idx4(&ys, b, oy, ox, ch)] = acc;
                }
            }
        }
    }
    y
}

/// Scatter form: every input pixel adds `x * k[ky,kx,co,ci]` at
/// `(iy*s+ky-pt, ix*s+kx-pl)` of an `out` grid.
pub fn transposed(
    x: &Arr,
    k: &Arr,
    stride: usize,
    pad: (usize, usize),
    out: (usize, usize),
) -> Vec<f64> {
    let (xs, ks) = (&x.shape[..], &k.shape[..]);
    let (n, h, w, cin) = (xs[0], xs[1], xs[2], xs[3]);
    let (kk, cout) = (ks[0], ks[2]);
    let ys = [n, out.0, out.1, cout];
    let mut y = vec![0.0; n * out.0 * out.1 * cout];
    for b in 0..n {
        for iy in 0..h {
            for ix in 0..w {
                for ky in 0..kk {
                    for kx in 0..kk {
                        let oy = (iy * stride + ky) as isize - pad.0 as isize;
                        let ox = (ix * stride + kx) as isize - pad.1 as isize;
                        if oy < 0 || ox < 0 || oy >= out.0 as isize || ox >= out.1 as isize {
                            continue;
                        }
                        for co in 0..cout {
                            for ci in 0..cin {
                                y[idx4(&ys, b, oy as usize, ox as usize, co)] += x.data
                                    [idx4(xs, b, iy, ix, ci)]
                                    * k.data[idx4(ks, ky, kx, co, ci)];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn add_bias(y: &mut [f64], b: &Arr) {
    let c = b.data.len();
    for row in y.chunks_mut(c) {
        row.iter_mut().zip(&b.data).for_each(|(v, b)| *v += b);
    }
}

/// Train-mode batch normalization over every axis but the last, with the
/// biased batch variance.
pub fn batch_norm(x: &Arr, gamma: &Arr, beta: &Arr, eps: f64) -> Vec<f64> {
    let c = *x.shape.last().unwrap();
    let m = x.data.len() / c;
    let mut y = vec![0.0; x.data.len()];
    for ch in 0..c {
        let vals: Vec<f64> = (0..m).map(|i| x.data[i * c + ch]).collect();
        let mean = vals.iter().sum::<f64>() / m as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
        for i in 0..m {
            y[i * c + ch] = gamma.data[ch] * (vals[i] - mean) / (var + eps).sqrt() + beta.data[ch];
        }
    }
    y
}

/// `x[N,Din] * w[Din,Dout] + b`.
pub fn fully_connected(x: &Arr, w: &Arr, b: &Arr) -> Vec<f64> {
    let (n, din, dout) = (x.shape[0], x.shape[1], w.shape[1]);
    let mut y = vec![0.0; n * dout];
    for i in 0..n {
        for o in 0..dout {
            y[i * dout + o] = b.data[o]
                + (0..din)
                    .map(|j| x.data[i * din + j] * w.data[j * dout + o])
                    .sum::<f64>();
        }
    }
    y
}

pub fn reconstruction_loss(pred: &Arr, target: &Arr) -> f64 {
    let n = pred.shape[0] as f64;
    pred.data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n
}

/// Student-t soft assignment, one row per embedding.
pub fn soft_assign(z: &Arr, u: &Arr, alpha: f64) -> Vec<Vec<f64>> {
    let (n, d, k) = (z.shape[0], z.shape[1], u.shape[0]);
    (0..n)
        .map(|i| {
            let raw: Vec<f64> = (0..k)
                .map(|j| {
                    let d2: f64 = (0..d)
                        .map(|t| (z.data[i * d + t] - u.data[j * d + t]).powi(2))
                        .sum();
                    (1.0 + d2 / alpha).powf(-(alpha + 1.0) / 2.0)
                })
                .collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect()
        })
        .collect()
}

pub fn kl(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    p.iter()
        .flatten()
        .zip(q.iter().flatten())
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / qv).ln())
        .sum()
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y).abs())
        .fold(0.0, f64::max)
}

/// Normalized mutual information from entropies computed with `ln` on
/// integer counts. A single-group partition has zero entropy exactly.
pub fn nmi_by_entropy(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![vec![0usize; kb]; ka];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x][y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let p = |c: usize| c as f64 / n as f64;
    let h = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| -p(c) * p(c).ln())
            .sum()
    };
    let ga = ca.iter().filter(|&&c| c > 0).count();
    let gb = cb.iter().filter(|&&c| c > 0).count();
    match (ga, gb) {
        (1, 1) => return 1.0,
        (1, _) | (_, 1) => return 0.0,
        _ => {}
    }
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            if joint[i][j] > 0 {
                mi += p(joint[i][j]) * (p(joint[i][j]) / (p(ca[i]) * p(cb[j]))).ln();
            }
        }
    }
    mi / (h(&ca) * h(&cb)).sqrt()
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// Best accuracy over every injective relabeling of clusters onto classes
/// (clusters beyond the class count map to nothing).
pub fn ca_by_permutation(pred: &[usize], truth: &[usize]) -> f64 {
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let size = kp.max(kt);
    let mut best = 0;
    for perm in permutations(&(0..size).collect::<Vec<_>>()) {
        let hits = pred
            .iter()
            .zip(truth)
            .filter(|(&p, &t)| perm[p] == t)
            .count();
        best = best.max(hits);
    }
    best as f64 / pred.len() as f64
}

/// Every label vector of length `n` over `0..k`.
pub fn all_labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..k).map(move |l| {
                    let mut w = v.clone();
                    w.push(l);
                    w
                })
            })
            .collect();
    }
    out
}

pub fn uniform_labels(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

pub mod grad {
    use super::{
        add_bias, batch_norm, conv2d, depthwise, fully_connected, kl, reconstruction_loss,
        same_pad, soft_assign, transposed, Arr,
    };
    use dscan::cluster::{target_distribution, Matrix};
    use dscan::tensor::{BatchNormMode, Padding, RunningStats, Tape, Tensor, Var, BN_EPSILON};
    use rand::seq::index::sample;
    use rand_chacha::ChaCha8Rng;

    pub const STEP: f64 = 1e-3;
    pub const COORDS: usize = 12;

    pub struct Check {
        pub name: String,
        pub coords: usize,
        pub max_rel_err: f64,
    }

    type Build<'a> = &'a dyn Fn(&mut Tape, &[Var]) -> Var;
    type Oracle<'a> = &'a dyn Fn(&[Arr]) -> Vec<f64>;

    /// Compares the tape gradient of `sum(w * f(inputs))` with respect to
    /// input `which` against central differences of the same objective
    /// evaluated in f64 by `oracle`, on `COORDS` random coordinates.
    pub fn check(
        name: &str,
        inputs: Vec<Tensor>,
        which: usize,
        f: Build,
        oracle: Oracle,
        rng: &mut ChaCha8Rng,
    ) -> Check {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.param(x)).collect();
        let y = f(&mut t, &vars);
        let out_shape = t.value(y).shape().to_vec();
        let w = Tensor::randn(out_shape, 1.0, rng);
        let m = t.mul_const(y, &w).unwrap();
        let loss = t.sum(m);
        let grads = t.backward(loss).unwrap();
        let analytic = grads
            .get(vars[which])
            .expect("gradient reaches the input")
            .to_vec();

        let base: Vec<Arr> = inputs.iter().map(Arr::from).collect();
        let w64 = Arr::from(&w).data;
        let n = base[which].data.len();
        let picks = sample(rng, n, COORDS.min(n)).into_vec();
        let mut worst = 0.0f64;
        for &i in &picks {
            let eval = |delta: f64| {
                let mut moved = base.clone();
                moved[which].data[i] += delta;
                let y = oracle(&moved);
                assert_eq!(y.len(), w64.len(), "{name}: oracle output size");
                y.iter().zip(&w64).map(|(a, b)| a * b).sum::<f64>()
            };
            let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            let a = analytic[i] as f64;
            let denom = a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max((a - numeric).abs() / denom);
        }
        Check {
            name: name.to_string(),
            coords: picks.len(),
            max_rel_err: worst,
        }
    }

    pub fn suite(rng: &mut ChaCha8Rng) -> Vec<Check> {
        let mut out = Vec::new();
        let g = |shape: &[usize], r: &mut ChaCha8Rng| Tensor::randn(shape.to_vec(), 1.0, r);

        let x = g(&[2, 5, 6, 2], rng);
        let k = g(&[3, 3, 2, 12], rng);
        let b = g(&[12], rng);
        let (pt, oh) = same_pad(5, 3, 2);
        let (pl, ow) = same_pad(6, 3, 2);
        let conv: Build = &|t, v| t.conv2d(v[0], v[1], Some(v[2]), 2, Padding::Same).unwrap();
        let conv_ref: Oracle = &|a| {
            let mut y = conv2d(&a[0], &a[1], 2, (pt, pl), (oh, ow));
            add_bias(&mut y, &a[2]);
            y
        };
        for (i, what) in ["input", "kernel", "bias"].iter().enumerate() {
            out.push(check(
                &format!("conv2d d/d{what}"),
                vec![x.clone(), k.clone(), b.clone()],
                i,
                conv,
                conv_ref,
                rng,
            ));
        }

        let kd = g(&[3, 3, 2], rng);
        let (pt1, oh1) = same_pad(5, 3, 1);
        let (pl1, ow1) = same_pad(6, 3, 1);
        let dw: Build = &|t, v| {
            t.depthwise_conv2d(v[0], v[1], None, 1, Padding::Same)
                .unwrap()
        };
        let dw_ref: Oracle = &|a| depthwise(&a[0], &a[1], 1, (pt1, pl1), (oh1, ow1));
        for (i, what) in ["input", "kernel"].iter().enumerate() {
            out.push(check(
                &format!("depthwise_conv2d d/d{what}"),
                vec![x.clone(), kd.clone()],
                i,
                dw,
                dw_ref,
                rng,
            ));
        }

        let kp = g(&[1, 1, 2, 6], rng);
        let pw: Build = &|t, v| t.pointwise_conv2d(v[0], v[1], None).unwrap();
        let pw_ref: Oracle = &|a| conv2d(&a[0], &a[1], 1, (0, 0), (5, 6));
        for (i, what) in ["input", "kernel"].iter().enumerate() {
            out.push(check(
                &format!("pointwise_conv2d d/d{what}"),
                vec![x.clone(), kp.clone()],
                i,
                pw,
                pw_ref,
                rng,
            ));
        }

        // direct path (C_in = 2) and matrix-product path (C_in = 3)
        for cin in [2, 3] {
            let xt = g(&[2, 3, 4, cin], rng);
            let kt = g(&[3, 3, 12, cin], rng);
            let bt = g(&[12], rng);
            let tc: Build = &|t, v| {
                t.transposed_conv2d(v[0], v[1], Some(v[2]), 2, Padding::Same)
                    .unwrap()
            };
            let tc_ref: Oracle = &|a| {
                let mut y = transposed(&a[0], &a[1], 2, (0, 0), (6, 8));
                add_bias(&mut y, &a[2]);
                y
            };
            for (i, what) in ["input", "kernel", "bias"].iter().enumerate() {
                out.push(check(
                    &format!("transposed_conv2d(c_in={cin}) d/d{what}"),
                    vec![xt.clone(), kt.clone(), bt.clone()],
                    i,
                    tc,
                    tc_ref,
                    rng,
                ));
            }
        }

        let xb = g(&[3, 2, 2, 12], rng);
        let gamma = g(&[12], rng);
        let beta = g(&[12], rng);
        let bn: Build = &|t, v| {
            let mut stats = RunningStats::new(12);
            t.batch_norm(v[0], v[1], v[2], &mut stats, BatchNormMode::Train)
                .unwrap()
        };
        let bn_ref: Oracle = &|a| batch_norm(&a[0], &a[1], &a[2], BN_EPSILON as f64);
        for (i, what) in ["input", "gamma", "beta"].iter().enumerate() {
            out.push(check(
                &format!("batch_norm d/d{what}"),
                vec![xb.clone(), gamma.clone(), beta.clone()],
                i,
                bn,
                bn_ref,
                rng,
            ));
        }

        let xf = g(&[4, 5], rng);
        let wf = g(&[5, 12], rng);
        let bf = g(&[12], rng);
        let fc: Build = &|t, v| t.fully_connected(v[0], v[1], Some(v[2])).unwrap();
        let fc_ref: Oracle = &|a| fully_connected(&a[0], &a[1], &a[2]);
        for (i, what) in ["input", "weight", "bias"].iter().enumerate() {
            out.push(check(
                &format!("fully_connected d/d{what}"),
                vec![xf.clone(), wf.clone(), bf.clone()],
                i,
                fc,
                fc_ref,
                rng,
            ));
        }

        let pred = g(&[3, 4, 2, 1], rng);
        let target = g(&[3, 4, 2, 1], rng);
        let rl: Build = &|t, v| t.reconstruction_loss(v[0], v[1]).unwrap();
        let rl_ref: Oracle = &|a| vec![reconstruction_loss(&a[0], &a[1])];
        out.push(check(
            "reconstruction_loss d/dprediction",
            vec![pred, target],
            0,
            rl,
            rl_ref,
            rng,
        ));

        // L_c = KL(P || Q(Z, U)) with P fixed from the starting point
        let z = g(&[6, 3], rng);
        let u = g(&[4, 3], rng);
        let q0 = dscan::cluster::soft_assign(
            &Matrix::from_tensor(&z).unwrap(),
            &Matrix::from_tensor(&u).unwrap(),
            1.0,
        )
        .unwrap();
        let p = target_distribution(&q0).unwrap();
        let p_rows: Vec<Vec<f64>> = (0..p.rows()).map(|i| p.row(i).to_vec()).collect();
        let p_t = p.to_tensor();
        let lc: Build = &|t, v| {
            let q = t.soft_assign(v[0], v[1], 1.0).unwrap();
            let pv = t.constant(p_t.clone());
            t.kl_divergence(pv, q).unwrap()
        };
        let lc_ref: Oracle = &|a| vec![kl(&p_rows, &soft_assign(&a[0], &a[1], 1.0))];
        out.push(check(
            "clustering_loss d/dZ",
            vec![z.clone(), u.clone()],
            0,
            lc,
            lc_ref,
            rng,
        ));
        out.push(check(
            "clustering_loss d/dcenters",
            vec![z, u],
            1,
            lc,
            lc_ref,
            rng,
        ));
        out
    }
}

/// Label vectors of length `n` over at most `k` labels in restricted-growth
/// form (first occurrences in order 0, 1, 2, ...): one per partition.
pub fn canonical_labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    all_labelings(n, k)
        .into_iter()
        .filter(|v| {
            let mut next = 0;
            v.iter().all(|&l| {
                if l < next {
                    true
                } else if l == next {
                    next += 1;
                    true
                } else {
                    false
                }
            })
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct MetricSweep {
    pub pairs: u64,
    pub ca_mismatches: u64,
    pub worst_nmi_diff: f64,
    pub self_failures: u64,
}

/// Compares the library metrics with the brute-force oracles on every
/// prediction of length `1..=max_len` over `max_labels` labels against
/// every ground-truth partition. Both metrics only see partitions, so one
/// labeling per partition covers every truth vector.
pub fn exhaustive_metric_check(max_len: usize, max_labels: usize) -> MetricSweep {
    use dscan::metrics::ContingencyTable;
    let mut s = MetricSweep::default();
    for n in 1..=max_len {
        let preds = all_labelings(n, max_labels);
        let truths = canonical_labelings(n, max_labels);
        for p in &preds {
            let t = ContingencyTable::new(p, p).unwrap();
            if t.accuracy() != 1.0 || t.nmi() != 1.0 {
                s.self_failures += 1;
            }
            for q in &truths {
                let t = ContingencyTable::new(p, q).unwrap();
                s.pairs += 1;
                let (_, correct) = t.best_mapping();
                let brute = ca_by_permutation(p, q);
                if correct as f64 / n as f64 != brute {
                    s.ca_mismatches += 1;
                }
                s.worst_nmi_diff = s.worst_nmi_diff.max((t.nmi() - nmi_by_entropy(p, q)).abs());
            }
        }
    }
    s
}

pub fn run_conv(x: &Tensor, k: &Tensor, stride: usize, padding: Padding) -> Tensor {
    let mut t = Tape::new();
    let (xv, kv) = (t.constant(x.clone()), t.constant(k.clone()));
    let y = t.conv2d(xv, kv, None, stride, padding).unwrap();
    t.value(y).clone()
}

/// Max difference between depthwise-then-pointwise and one standard
/// convolution with the outer-product kernel, on a random configuration.
pub fn dsc_factorization_error(r: &mut ChaCha8Rng) -> f64 {
    let h = r.random_range(3..10);
    let w = r.random_range(3..10);
    let cin = r.random_range(1..7);
    let cout = r.random_range(1..9);
    let k = [1, 3, 5][r.random_range(0..3)];
    let s = r.random_range(1..3);
    let padding = if r.random() {
        Padding::Same
    } else {
        Padding::Valid
    };
    if matches!(padding, Padding::Valid) && (k > h || k > w) {
        return dsc_factorization_error(r);
    }
    let x = randn(&[2, h, w, cin], r);
    // kernels at their He-initialization scale, as in the network
    let kd = Tensor::randn([k, k, cin], (2.0 / (k * k) as f32).sqrt(), r);
    let kp = Tensor::randn([1, 1, cin, cout], (2.0 / cin as f32).sqrt(), r);
    let mut t = Tape::new();
    let (xv, dv, pv) = (
        t.constant(x.clone()),
        t.constant(kd.clone()),
        t.constant(kp.clone()),
    );
    let mid = t.depthwise_conv2d(xv, dv, None, s, padding).unwrap();
    let y = t.pointwise_conv2d(mid, pv, None).unwrap();
    let mut full = vec![0.0f32; k * k * cin * cout];
    for tap in 0..k * k {
        for ci in 0..cin {
            for co in 0..cout {
                full[(tap * cin + ci) * cout + co] =
                    kd.data()[tap * cin + ci] * kp.data()[ci * cout + co];
            }
        }
    }
    let kf = Tensor::new([k, k, cin, cout], full).unwrap();
    let std = run_conv(&x, &kf, s, padding);
    t.value(y).max_abs_diff(&std) as f64
}
