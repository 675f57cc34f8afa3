use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::blocks::{GeometryRefine, Linear, NeighborConv, OffsetAttention};
use super::gradcheck::{check_gradients, GradCheckOptions};
use super::graph::{Graph, Mask};
use super::model::{Network, NetworkConfig, RowPredictor};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

type Mat = Vec<Vec<f64>>;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn mm(a: &Mat, w: &Tensor) -> Mat {
    a.iter()
        .map(|row| {
            (0..w.cols())
                .map(|j| row.iter().enumerate().map(|(k, &x)| x * w.get(k, j)).sum())
                .collect()
        })
        .collect()
}

fn close(a: &Mat, b: &Tensor, tol: f64) {
    assert_eq!(a.len(), b.rows());
    for (r, row) in a.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let w = b.get(r, c);
            assert!((v - w).abs() <= tol * (1.0 + v.abs()), "[{r},{c}] {v} vs {w}");
        }
    }
}

/// Scalar loop version of the neighbor convolution.
fn oracle_conv(store: &ParamStore, conv: &NeighborConv, x: &Mat, mask: &[bool]) -> Mat {
    let ws = store.get(conv.w_self);
    let wn = store.get(conv.w_neigh);
    let b = store.get(conv.bias);
    let (din, dout) = (ws.rows(), ws.cols());
    let mut out = vec![vec![0.0; dout]; x.len()];
    for i in 0..x.len() {
        if !mask[i] {
            continue;
        }
        let g0 = i - i % 8;
        let others: Vec<usize> = (g0..g0 + 8).filter(|&j| j != i && mask[j]).collect();
        let mut mean = vec![0.0; din];
        for &j in &others {
            for k in 0..din {
                mean[k] += x[j][k] / others.len() as f64;
            }
        }
        for o in 0..dout {
            let mut s = b.get(0, o);
            for k in 0..din {
                s += ws.get(k, o) * x[i][k] + wn.get(k, o) * mean[k];
            }
            out[i][o] = s;
        }
    }
    out
}

fn oracle_linear(store: &ParamStore, lin: &Linear, x: &Mat) -> Mat {
    let mut y = mm(x, store.get(lin.w));
    if let Some(b) = lin.b {
        for row in &mut y {
            for (v, bv) in row.iter_mut().zip(store.get(b).data()) {
                *v += bv;
            }
        }
    }
    y
}

/// Naive softmax attention per 8-slot block.
fn oracle_attention(store: &ParamStore, att: &OffsetAttention, f: &Mat, mask: &[bool]) -> Mat {
    let q = mm(f, store.get(att.wq));
    let k = mm(f, store.get(att.wk));
    let v = mm(f, store.get(att.wv));
    let d = q[0].len();
    let mut attn = vec![vec![0.0; d]; f.len()];
    for i in 0..f.len() {
        if !mask[i] {
            continue;
        }
        let g0 = i - i % 8;
        let js: Vec<usize> = (g0..g0 + 8).filter(|&j| mask[j]).collect();
        let s: Vec<f64> = js
            .iter()
            .map(|&j| (0..d).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for (t, &j) in js.iter().enumerate() {
            for c in 0..d {
                attn[i][c] += e[t] / z * v[j][c];
            }
        }
    }
    let off: Mat = f.iter().zip(&attn).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
    let h = oracle_linear(store, &att.lbr, &off);
    f.iter()
        .zip(&h)
        .enumerate()
        .map(|(i, (a, b))| {
            if mask[i] {
                a.iter().zip(b).map(|(x, y)| x + y.max(0.0)).collect()
            } else {
                vec![0.0; a.len()]
            }
        })
        .collect()
}

fn oracle_refine(store: &ParamStore, r: &GeometryRefine, f: &Mat, n: &Mat, mask: &[bool]) -> Mat {
    let x: Mat = f.iter().zip(n).map(|(a, b)| a.iter().chain(b).copied().collect()).collect();
    let h = oracle_conv(store, &r.nc1, &x, mask);
    let h: Mat = h.into_iter().map(|row| row.into_iter().map(|v| v.max(0.0)).collect()).collect();
    let h = oracle_conv(store, &r.nc2, &h, mask);
    f.iter().zip(&h).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

fn block_mask(rng: &mut ChaCha8Rng, blocks: usize) -> Mask {
    let mut m = Vec::with_capacity(blocks * 8);
    for _ in 0..blocks {
        let n = rng.gen_range(1..=8);
        for s in 0..8 {
            m.push(s < n);
        }
    }
    Arc::from(m)
}

#[test]
fn square_gradient() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).unwrap().item(), 6.0);
}

#[test]
fn unused_parameter_gets_zero_gradient() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::scalar(2.0)).unwrap();
    store.add("unused", Tensor::filled(2, 2, 1.0)).unwrap();
    let mut g = Graph::with_params(&store);
    let av = g.param(a);
    let y = g.mul(av, av).unwrap();
    let grads = g.backward(y).unwrap().params(&store);
    assert_eq!(grads[0].item(), 4.0);
    assert_eq!(grads[1], Tensor::zeros(2, 2));
}

#[test]
fn backward_rejects_nan() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(f64::NAN));
    let s = g.sum(x);
    assert!(g.backward(s).is_err());
}

#[test]
fn neighbor_conv_identity_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let conv = NeighborConv::register(&mut store, "c", 4, 4, &mut rng).unwrap();
    let mut eye = Tensor::zeros(4, 4);
    for i in 0..4 {
        eye.set(i, i, 1.0);
    }
    *store.get_mut(conv.w_self) = eye;
    *store.get_mut(conv.w_neigh) = Tensor::zeros(4, 4);
    let x = rand_tensor(&mut rng, 8, 4, 1.0);
    let mask: Mask = Arc::from(vec![true; 8]);
    let mut g = Graph::with_params(&store);
    let xv = g.input(x.clone());
    let y = conv.forward(&mut g, xv, &mask, 8).unwrap();
    assert_eq!(g.value(y), &x);

    let mut store = ParamStore::new();
    let conv = NeighborConv::register(&mut store, "c", 4, 5, &mut rng).unwrap();
    let row: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::from_vec(8, 4, row.repeat(8)).unwrap();
    let mut g = Graph::with_params(&store);
    let xv = g.input(x);
    let y = conv.forward(&mut g, xv, &mask, 8).unwrap();
    let out = g.value(y);
    for r in 1..8 {
        assert_eq!(out.row(r), out.row(0));
    }
}

#[test]
fn neighbor_conv_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let conv = NeighborConv::register(&mut store, "c", 16, 12, &mut rng).unwrap();
    *store.get_mut(conv.bias) = rand_tensor(&mut rng, 1, 12, 0.5);
    for _ in 0..20 {
        let mask = block_mask(&mut rng, 3);
        let x = rand_tensor(&mut rng, 24, 16, 2.0);
        let mut g = Graph::with_params(&store);
        let xv = g.input(x.clone());
        let y = conv.forward(&mut g, xv, &mask, 8).unwrap();
        close(&oracle_conv(&store, &conv, &mat(&x), &mask), g.value(y), 1e-9);
    }
}

#[test]
fn attention_singleton_returns_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let att = OffsetAttention::register(&mut store, "a", 6, &mut rng).unwrap();
    let mut m = vec![false; 8];
    m[0] = true;
    let mask: Mask = Arc::from(m);
    let x = rand_tensor(&mut rng, 8, 6, 1.0);
    let mut g = Graph::with_params(&store);
    let xv = g.input(x.clone());
    let wq = g.param(att.wq);
    let wk = g.param(att.wk);
    let wv = g.param(att.wv);
    let q = g.matmul(xv, wq).unwrap();
    let k = g.matmul(xv, wk).unwrap();
    let v = g.matmul(xv, wv).unwrap();
    let a = g.attention(q, k, v, mask.clone(), 8).unwrap();
    assert_eq!(g.value(a).row(0), g.value(v).row(0));
    assert!(g.value(a).row(1).iter().all(|&x| x == 0.0));
}

#[test]
fn attention_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let att = OffsetAttention::register(&mut store, "a", 32, &mut rng).unwrap();
    *store.get_mut(att.lbr.b.unwrap()) = rand_tensor(&mut rng, 1, 32, 0.5);
    for blocks in [1, 2, 4] {
        let mask = block_mask(&mut rng, blocks);
        let x = rand_tensor(&mut rng, blocks * 8, 32, 1.0);
        let mut g = Graph::with_params(&store);
        let xv = g.input(x.clone());
        let y = att.forward(&mut g, xv, &mask, 8).unwrap();
        close(&oracle_attention(&store, &att, &mat(&x), &mask), g.value(y), 1e-8);
    }
    let full: Mask = Arc::from(vec![true; 8]);
    let x = rand_tensor(&mut rng, 8, 32, 1.0);
    let mut g = Graph::with_params(&store);
    let xv = g.input(x.clone());
    let y = att.forward(&mut g, xv, &full, 8).unwrap();
    close(&oracle_attention(&store, &att, &mat(&x), &full), g.value(y), 1e-8);
}

#[test]
fn attention_is_bitwise_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let att = OffsetAttention::register(&mut store, "a", 16, &mut rng).unwrap();
    for _ in 0..50 {
        let mask = block_mask(&mut rng, 1);
        let x = rand_tensor(&mut rng, 8, 16, 3.0);
        let mut perm: Vec<usize> = (0..8).collect();
        for i in (1..8).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let xp = Tensor::from_rows(&perm.iter().map(|&p| x.row(p).to_vec()).collect::<Vec<_>>()).unwrap();
        let mp: Mask = perm.iter().map(|&p| mask[p]).collect::<Vec<_>>().into();
        let mut g = Graph::with_params(&store);
        let a = g.input(x);
        let ya = att.forward(&mut g, a, &mask, 8).unwrap();
        let b = g.input(xp);
        let yb = att.forward(&mut g, b, &mp, 8).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            let ra: Vec<u64> = g.value(ya).row(p).iter().map(|v| v.to_bits()).collect();
            let rb: Vec<u64> = g.value(yb).row(i).iter().map(|v| v.to_bits()).collect();
            assert_eq!(ra, rb);
        }
    }
}

#[test]
fn geometry_refine_behaviour() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let r = GeometryRefine::register(&mut store, "r", 8, &mut rng).unwrap();
    let mask: Mask = Arc::from(vec![true; 8]);
    let f = rand_tensor(&mut rng, 8, 8, 1.0);
    let run = |store: &ParamStore, normals: Tensor| {
        let mut g = Graph::with_params(store);
        let fv = g.input(f.clone());
        let nv = g.input(normals);
        let y = r.forward(&mut g, fv, nv, &mask, 8).unwrap();
        g.value(y).clone()
    };
    let n1 = rand_tensor(&mut rng, 8, 3, 1.0);
    let n2 = rand_tensor(&mut rng, 8, 3, 1.0);
    assert_ne!(run(&store, n1.clone()), run(&store, n2));
    close(&oracle_refine(&store, &r, &mat(&f), &mat(&n1), &mask), &run(&store, n1), 1e-8);
    let mut zeroed = store.clone();
    *zeroed.get_mut(r.nc2.w_self) = Tensor::zeros(8, 8);
    *zeroed.get_mut(r.nc2.w_neigh) = Tensor::zeros(8, 8);
    assert_eq!(run(&zeroed, Tensor::zeros(8, 3)), f);
}

fn block_check<F>(store: &ParamStore, inputs: Vec<Tensor>, f: F)
where
    F: Fn(&mut Graph, &[super::Var]) -> crate::Result<super::Var>,
{
    let report = check_gradients(store, &inputs, f, GradCheckOptions::default()).unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

/// A fixed random projection so every output element matters to the loss.
fn project(g: &mut Graph, y: super::Var, seed: u64) -> crate::Result<super::Var> {
    let [r, c] = g.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.input(rand_tensor(&mut rng, r, c, 1.0));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

#[test]
fn gradients_of_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mask = block_mask(&mut rng, 1);
    let mut store = ParamStore::new();
    let conv = NeighborConv::register(&mut store, "conv", 16, 16, &mut rng).unwrap();
    let att = OffsetAttention::register(&mut store, "att", 16, &mut rng).unwrap();
    let refine = GeometryRefine::register(&mut store, "ref", 16, &mut rng).unwrap();
    let hsq = Linear::register(&mut store, "hsq", 16, 16, true, &mut rng).unwrap();
    for id in store.ids().collect::<Vec<ParamId>>() {
        let [r, c] = store.get(id).shape();
        if r == 1 {
            *store.get_mut(id) = rand_tensor(&mut rng, r, c, 0.3);
        }
    }
    let x = rand_tensor(&mut rng, 8, 16, 1.0);
    let normals = rand_tensor(&mut rng, 8, 3, 1.0);
    block_check(&store, vec![x.clone()], |g, v| {
        let y = conv.forward(g, v[0], &mask, 8)?;
        project(g, y, 1)
    });
    block_check(&store, vec![x.clone()], |g, v| {
        let y = att.forward(g, v[0], &mask, 8)?;
        project(g, y, 2)
    });
    block_check(&store, vec![x.clone(), normals], |g, v| {
        let y = refine.forward(g, v[0], v[1], &mask, 8)?;
        project(g, y, 3)
    });
    block_check(&store, vec![x], |g, v| {
        let y = hsq.forward(g, v[0])?;
        let s = g.sigmoid(y);
        let s = g.scale(s, 3.95);
        let d = g.add_scalar(s, 0.05);
        project(g, d, 4)
    });
}

fn toy_network(seed: u64) -> (Network, ParamStore) {
    let mut store = ParamStore::new();
    let net = Network::register(&NetworkConfig::toy(), &mut store, seed).unwrap();
    (net, store)
}

#[test]
fn fnet_zero_input_gives_zero_latents() {
    let (net, mut store) = toy_network(8);
    for id in store.ids().collect::<Vec<ParamId>>() {
        if store.name(id).ends_with(".b") {
            let [r, c] = store.get(id).shape();
            *store.get_mut(id) = Tensor::zeros(r, c);
        }
    }
    let mask: Mask = Arc::from(vec![true; 16]);
    let mut g = Graph::with_params(&store);
    let f = g.input(Tensor::zeros(16, 6));
    let n = g.input(Tensor::zeros(16, 3));
    let y = net.fnet(&mut g, 2, f, n, &mask).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    let lat = g.input(Tensor::zeros(2, 8));
    let pos = g.input(Tensor::zeros(16, 3));
    let c = net.synthesize(&mut g, 2, lat, pos, &mask).unwrap();
    assert!(g.value(c).data().iter().all(|&v| v == 0.0));
}

#[test]
fn fnet_duplicate_blocks_and_repeatability() {
    let (net, store) = toy_network(9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let one = rand_tensor(&mut rng, 8, 6, 0.5);
    let normals_one = rand_tensor(&mut rng, 8, 3, 1.0);
    let mut rows = mat(&one);
    rows.extend(mat(&one));
    let feats = Tensor::from_rows(&rows).unwrap();
    let mut nrows = mat(&normals_one);
    nrows.extend(mat(&normals_one));
    let normals = Tensor::from_rows(&nrows).unwrap();
    let mask: Mask = Arc::from(vec![true; 16]);
    let run = || {
        let mut g = Graph::with_params(&store);
        let f = g.input(feats.clone());
        let n = g.input(normals.clone());
        let y = net.fnet(&mut g, 4, f, n, &mask).unwrap();
        g.value(y).clone()
    };
    let y = run();
    assert_eq!(y.row(0), y.row(1));
    assert_eq!(y, run());
}

#[test]
fn synthesis_matches_composed_oracle() {
    let (net, store) = toy_network(11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mask = block_mask(&mut rng, 2);
    let lat = rand_tensor(&mut rng, 2, 8, 2.0);
    let pos = rand_tensor(&mut rng, 16, 3, 1.0);
    let mut g = Graph::with_params(&store);
    let lv = g.input(lat.clone());
    let pv = g.input(pos.clone());
    let out = net.synthesize(&mut g, 3, lv, pv, &mask).unwrap();

    let nets = &net.layers[2];
    let h: Mat = oracle_linear(&store, &nets.refnet_in, &mat(&lat))
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    let mut f: Mat = (0..16).map(|i| h[i / 8].iter().chain(pos.row(i)).copied().collect()).collect();
    for conv in &nets.refnet_convs {
        f = oracle_conv(&store, conv, &f, &mask)
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
    }
    let f = oracle_attention(&store, &net.recon_attn, &f, &mask);
    let o: Mat = oracle_linear(&store, &net.recon_head, &f)
        .into_iter()
        .map(|r| r.into_iter().map(|v| 255.0 * v).collect())
        .collect();
    close(&o, g.value(out), 1e-8);
}

#[test]
fn gradients_of_compositions() {
    let (net, store) = toy_network(13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mask = block_mask(&mut rng, 2);
    let feats = rand_tensor(&mut rng, 16, 6, 0.5);
    let normals = rand_tensor(&mut rng, 16, 3, 1.0);
    let opts = GradCheckOptions {
        coords_per_tensor: Some(6),
        seed: 15,
        ..Default::default()
    };
    let report = check_gradients(
        &store,
        &[feats, normals],
        |g, v| {
            let y = net.fnet(g, 4, v[0], v[1], &mask)?;
            project(g, y, 5)
        },
        opts,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");

    let lat = rand_tensor(&mut rng, 2, 8, 1.0);
    let pos = rand_tensor(&mut rng, 16, 3, 1.0);
    let report = check_gradients(
        &store,
        &[lat, pos],
        |g, v| {
            let c = net.synthesize(g, 2, v[0], v[1], &mask)?;
            let c = g.scale(c, 1.0 / 255.0);
            project(g, c, 6)
        },
        opts,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn param_head_zero_weights() {
    let (net, mut store) = toy_network(16);
    let nets = net.layers[0].clone();
    for lin in [nets.head_hidden, nets.head_mu, nets.head_log_scale] {
        let [r, c] = store.get(lin.w).shape();
        *store.get_mut(lin.w) = Tensor::zeros(r, c);
        let b = lin.b.unwrap();
        let [r, c] = store.get(b).shape();
        *store.get_mut(b) = Tensor::zeros(r, c);
    }
    let mut g = Graph::with_params(&store);
    let ctx = g.input(Tensor::filled(3, 8, 0.7));
    let a = g.input(Tensor::filled(1, 8, -0.2));
    let (mu, b) = net.param_head(&mut g, 1, ctx, a).unwrap();
    assert!(g.value(mu).data().iter().all(|&v| v == 0.0));
    assert!(g.value(b).data().iter().all(|&v| v == 1.0));
}

#[test]
fn context_is_causal_and_windowed() {
    let (net, store) = toy_network(17);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let rows = rand_tensor(&mut rng, 10, 8, 1.0);
    let mut g = Graph::with_params(&store);
    let r = g.input(rows.clone());
    let ctx = net.context(&mut g, 2, r).unwrap();
    let ctx = g.value(ctx).clone();
    assert!(ctx.row(0).iter().all(|&v| v == 0.0));
    let w = store.get(net.layers[1].context.w);
    for t in 0..10 {
        for o in 0..8 {
            let mut s = 0.0;
            for k in 1..=4 {
                if t >= k {
                    for c in 0..8 {
                        s += rows.get(t - k, c) * w.get((k - 1) * 8 + c, o);
                    }
                }
            }
            assert!((s - ctx.get(t, o)).abs() < 1e-9);
        }
    }
    // rows older than the window do not matter
    let mut changed = rows.clone();
    for c in 0..8 {
        changed.set(0, c, 99.0);
    }
    let mut g = Graph::with_params(&store);
    let r = g.input(changed);
    let ctx2 = net.context(&mut g, 2, r).unwrap();
    assert_eq!(g.value(ctx2).row(7), ctx.row(7));
}

#[test]
fn row_predictor_matches_batched_path() {
    let (net, store) = toy_network(19);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let rows = rand_tensor(&mut rng, 7, 8, 1.0);
    let adapted = rand_tensor(&mut rng, 1, 8, 1.0);
    let mut g = Graph::with_params(&store);
    let r = g.input(rows.clone());
    let a = g.input(adapted.clone());
    let ctx = net.context(&mut g, 3, r).unwrap();
    let (mu, b) = net.param_head(&mut g, 3, ctx, a).unwrap();
    let pred = RowPredictor::new(&net, &store, 3, adapted);
    for t in 0..7 {
        let prev: Vec<&[f64]> = (0..t).map(|i| rows.row(i)).collect();
        let (m, s) = pred.predict(&prev).unwrap();
        assert_eq!(m.as_slice(), g.value(mu).row(t));
        assert_eq!(s.as_slice(), g.value(b).row(t));
    }
}

#[test]
fn kink_skipping_drops_only_switching_coordinates() {
    let x = Tensor::from_vec(1, 4, vec![0.0, 0.5, -0.7, 1e-5]).unwrap();
    let f = |g: &mut Graph, v: &[super::Var]| {
        let r = g.relu(v[0]);
        Ok(g.sum(r))
    };
    let plain = check_gradients(&ParamStore::new(), &[x.clone()], f, GradCheckOptions::default()).unwrap();
    assert!(plain.max_rel_error > 0.4);
    let opts = GradCheckOptions {
        skip_kinks: true,
        ..Default::default()
    };
    let report = check_gradients(&ParamStore::new(), &[x], f, opts).unwrap();
    assert_eq!((report.checked, report.skipped), (2, 2));
    assert!(report.max_rel_error < 1e-9);
}
