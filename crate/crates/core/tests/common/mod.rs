//! Independent oracles and the acceptance criteria shared by the test targets.
//!
//! Each criterion returns `Ok(detail)` or `Err(reason)` so the acceptance
//! target can print one line per criterion while the focused targets assert.

#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use sha2::{Digest, Sha256};
use ssl_ensemble::combiners::{combine, combine_backward, CombinerKind, CombinerParams};
use ssl_ensemble::ctc::{ctc_loss_grad, Vocab};
use ssl_ensemble::eval::{align_counts, evaluate_head};
use ssl_ensemble::feature_store::{synth_corpus, SynthConfig};
use ssl_ensemble::head::{HeadItem, HeadModel};
use ssl_ensemble::nn::{
    init_params, layer_norm, layer_norm_backward, linear_backward, linear_forward, Encoder, EncoderConfig, HeadConfig,
    Mode, PaddedBatch, ParamStore, SelfAttention, LAYER_NORM_EPS,
};
use ssl_ensemble::rng::{Purpose, Stream};
use ssl_ensemble::tensor::Mat;
use ssl_ensemble::trainer::{train, train_head, TrainConfig};

pub type Check = Result<String, String>;
pub type GradCheck = fn() -> Result<f64, String>;

// ---------------------------------------------------------------- random data

pub fn stream(seed: u64) -> Stream {
    Stream::new(seed, Purpose::Noise, &[0xC0FFEE])
}

pub fn randn(s: &mut Stream, rows: usize, cols: usize, scale: f64) -> Mat<f64> {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| scale * s.normal()).collect()).unwrap()
}

pub fn randv(s: &mut Stream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * s.normal()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ------------------------------------------------------- finite differences

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative error, so entries whose true gradient is
/// zero are compared absolutely at this scale. Roundoff in a central
/// difference of an O(10) objective with step 1e-5 is about 1e-10.
pub const FD_FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + FD_STEP;
            let up = f(&p);
            p[i] = x[i] - FD_STEP;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest relative error; `Err` names the worst entry when above `tol`.
pub fn compare(name: &str, analytic: &[f64], numeric: &[f64], tol: f64) -> Result<f64, String> {
    assert_eq!(analytic.len(), numeric.len(), "{name}: length mismatch");
    let mut worst = (0.0, 0);
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_err(a, n);
        if e > worst.0 || e.is_nan() {
            worst = (e, i);
        }
    }
    if worst.0 <= tol {
        Ok(worst.0)
    } else {
        Err(format!(
            "{name}[{}]: analytic {} vs numeric {} (rel {:.2e} > {tol:.0e})",
            worst.1, analytic[worst.1], numeric[worst.1], worst.0
        ))
    }
}

// ------------------------------------------------------------- CTC oracles

fn collapse_oracle(path: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for (t, &s) in path.iter().enumerate() {
        if s != 0 && (t == 0 || path[t - 1] != s) {
            out.push(s);
        }
    }
    out
}

/// Σ over all `V^T` paths collapsing to `target` of the product of softmax
/// probabilities.
pub fn ctc_paths_prob(logits: &Mat<f64>, target: &[usize]) -> f64 {
    let (t_len, v) = logits.shape();
    let probs: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            let row = logits.row(t);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|x| x / z).collect()
        })
        .collect();
    let mut total = 0.0;
    for code in 0..v.pow(t_len as u32) {
        let mut c = code;
        let path: Vec<usize> = (0..t_len)
            .map(|_| {
                let s = c % v;
                c /= v;
                s
            })
            .collect();
        if collapse_oracle(&path) == target {
            total += path.iter().enumerate().map(|(t, &s)| probs[t][s]).product::<f64>();
        }
    }
    total
}

fn feasible(target: &[usize], frames: usize) -> bool {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count() <= frames
}

pub fn crit_ctc_oracle() -> Check {
    let start = Instant::now();
    let mut s = stream(1);
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    while cases < 240 {
        let t = 1 + s.below(6);
        let v = 2 + s.below(3);
        let len = s.below(4);
        let target: Vec<usize> = (0..len).map(|_| 1 + s.below(v - 1)).collect();
        if !feasible(&target, t) {
            continue;
        }
        let logits = randn(&mut s, t, v, 1.5);
        let loss = ctc_loss_grad(&logits, &target).map_err(|e| e.to_string())?.loss;
        let oracle = ctc_paths_prob(&logits, &target);
        let err = ((-loss).exp() - oracle).abs() / oracle;
        worst = worst.max(err);
        if !(err <= 1e-6) {
            return Err(format!("T={t} V={v} target {target:?}: exp(-loss) {} vs paths {oracle}", (-loss).exp()));
        }
        cases += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 10.0 {
        return Err(format!("took {secs:.1}s"));
    }
    Ok(format!("{cases} instances, max rel err {worst:.1e}, {secs:.2}s"))
}

fn all_targets(max_len: usize, labels: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for t in &frontier {
            for l in 1..=labels {
                let mut u: Vec<usize> = t.clone();
                u.push(l);
                next.push(u);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn crit_ctc_normalization() -> Check {
    let start = Instant::now();
    let mut s = stream(2);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for t in 1..=4 {
        for v in 2..=3 {
            for _ in 0..5 {
                let logits = randn(&mut s, t, v, 2.0);
                let mut total = 0.0;
                for target in all_targets(t, v - 1).into_iter().filter(|y| feasible(y, t)) {
                    total += (-ctc_loss_grad(&logits, &target).map_err(|e| e.to_string())?.loss).exp();
                }
                worst = worst.max((total - 1.0).abs());
                instances += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if worst > 1e-6 || secs >= 5.0 {
        return Err(format!("max |Σ−1| {worst:.1e}, {secs:.2}s"));
    }
    Ok(format!("{instances} instances, max |Σ−1| {worst:.1e}, {secs:.2}s"))
}

// ---------------------------------------------------------- gradient checks

pub fn grad_ctc() -> Result<f64, String> {
    let mut s = stream(10);
    let mut worst: f64 = 0.0;
    for target in [vec![1usize, 2], vec![3, 3], vec![], vec![2, 1, 2]] {
        let logits = randn(&mut s, 6, 4, 1.0);
        let analytic = ctc_loss_grad(&logits, &target).unwrap().grad_logits;
        let numeric = numeric_grad(logits.as_slice(), |x| {
            ctc_loss_grad(&Mat::from_vec(6, 4, x.to_vec()).unwrap(), &target).unwrap().loss
        });
        worst = worst.max(compare(&format!("ctc {target:?}"), analytic.as_slice(), &numeric, 1e-4)?);
    }
    Ok(worst)
}

pub fn grad_linear() -> Result<f64, String> {
    let mut s = stream(11);
    let (x, w, b, r) = (randn(&mut s, 3, 4, 1.0), randv(&mut s, 20, 1.0), randv(&mut s, 5, 1.0), randn(&mut s, 3, 5, 1.0));
    let g = linear_backward(&x, &w, &r).unwrap();
    let obj = |x: &Mat<f64>, w: &[f64], b: &[f64]| dot(linear_forward(x, w, b).unwrap().as_slice(), r.as_slice());
    let nx = numeric_grad(x.as_slice(), |v| obj(&Mat::from_vec(3, 4, v.to_vec()).unwrap(), &w, &b));
    let nw = numeric_grad(&w, |v| obj(&x, v, &b));
    let nb = numeric_grad(&b, |v| obj(&x, &w, v));
    Ok(compare("linear dx", g.dx.as_slice(), &nx, 1e-4)?
        .max(compare("linear dw", &g.dw, &nw, 1e-4)?)
        .max(compare("linear db", &g.db, &nb, 1e-4)?))
}

pub fn grad_layer_norm() -> Result<f64, String> {
    let mut s = stream(12);
    let (x, r) = (randn(&mut s, 3, 6, 1.5), randn(&mut s, 3, 6, 1.0));
    let gain: Vec<f64> = randv(&mut s, 6, 0.5).iter().map(|v| 1.0 + v).collect();
    let shift = randv(&mut s, 6, 0.5);
    let (_, cache) = layer_norm(&x, &gain, &shift, LAYER_NORM_EPS).unwrap();
    let (mut dg, mut ds) = (vec![0.0; 6], vec![0.0; 6]);
    let dx = layer_norm_backward(&cache, &gain, &r, &mut dg, &mut ds);
    let obj = |x: &Mat<f64>, g: &[f64], sh: &[f64]| dot(layer_norm(x, g, sh, LAYER_NORM_EPS).unwrap().0.as_slice(), r.as_slice());
    let nx = numeric_grad(x.as_slice(), |v| obj(&Mat::from_vec(3, 6, v.to_vec()).unwrap(), &gain, &shift));
    let ng = numeric_grad(&gain, |v| obj(&x, v, &shift));
    let ns = numeric_grad(&shift, |v| obj(&x, &gain, v));
    Ok(compare("layer_norm dx", dx.as_slice(), &nx, 1e-4)?
        .max(compare("layer_norm dgain", &dg, &ng, 1e-4)?)
        .max(compare("layer_norm dshift", &ds, &ns, 1e-4)?))
}

/// A head store with every value perturbed, so biases, shifts and gains are generic.
pub fn jittered_store(cfg: &HeadConfig, seed: u64, scale: f64) -> ParamStore<f64> {
    let mut store = init_params::<f64>(cfg, seed).unwrap();
    let mut s = stream(seed ^ 0xABCD);
    for v in store.values_mut() {
        *v += scale * s.normal();
    }
    store
}

pub fn micro_head_config(layers: usize, combiner: CombinerKind, dims: Vec<usize>) -> HeadConfig {
    HeadConfig {
        encoder: EncoderConfig {
            d_ff: 16,
            ..EncoderConfig::new(layers, 8, 2)
        },
        combiner,
        d_c: 6,
        vocab: Vocab::new("abc".chars()).unwrap(),
        model_tags: (0..dims.len()).map(|m| format!("m{m}")).collect(),
        input_dims: dims,
    }
}

pub fn grad_attention() -> Result<f64, String> {
    let cfg = micro_head_config(1, CombinerKind::Concat, vec![4]);
    let mut store = jittered_store(&cfg, 13, 0.2);
    let attn = SelfAttention::resolve(&store, "encoder.layers.0.attn", 8, 2).unwrap();
    let mut s = stream(13);
    let x = randn(&mut s, 5, 8, 1.0);
    let r = randn(&mut s, 5, 8, 1.0);
    let mask = vec![true, true, true, false, false];
    let (_, cache) = attn.forward(store.values(), &x, &mask).unwrap();
    store.zero_grads();
    let (values, grads) = store.values_and_grads_mut();
    let dx = attn.backward(values, grads, &cache, &r);
    let obj = |vals: &[f64], x: &Mat<f64>| dot(attn.forward(vals, x, &mask).unwrap().0.as_slice(), r.as_slice());
    let nx = numeric_grad(x.as_slice(), |v| obj(store.values(), &Mat::from_vec(5, 8, v.to_vec()).unwrap()));
    let np = numeric_grad(store.values(), |v| obj(v, &x));
    Ok(compare("attention dx", dx.as_slice(), &nx, 1e-4)?.max(compare("attention params", store.grads(), &np, 1e-4)?))
}

pub fn grad_encoder() -> Result<f64, String> {
    let mut cfg = micro_head_config(2, CombinerKind::Concat, vec![4]);
    cfg.encoder.dropout_rate = 0.2;
    let mut store = jittered_store(&cfg, 14, 0.2);
    let enc = Encoder::resolve(&store, &cfg.encoder).unwrap();
    let mut s = stream(14);
    let items = vec![randn(&mut s, 4, 8, 1.0), randn(&mut s, 3, 8, 1.0)];
    let batch = PaddedBatch::from_items(&items, 0).unwrap();
    let rs = batch.with_values(vec![randn(&mut s, 4, 8, 1.0), randn(&mut s, 4, 8, 1.0)]);
    // dropout masks are a pure function of the seed, so the objective is smooth
    let mode = Mode::Train { seed: 99 };
    let obj = |vals: &[f64], b: &PaddedBatch<f64>| {
        let (out, _) = enc.forward(vals, b, mode).unwrap();
        out.values.iter().zip(&rs.values).map(|(o, r)| dot(o.as_slice(), r.as_slice())).sum::<f64>()
    };
    let (_, cache) = enc.forward(store.values(), &batch, mode).unwrap();
    store.zero_grads();
    let (values, grads) = store.values_and_grads_mut();
    let dx = enc.backward(values, grads, &cache, &rs).unwrap();
    let np = numeric_grad(store.values(), |v| obj(v, &batch));
    let mut worst = compare("encoder params", store.grads(), &np, 1e-4)?;
    for i in 0..2 {
        let nx = numeric_grad(batch.values[i].as_slice(), |v| {
            let mut b = batch.clone();
            b.values[i] = Mat::from_vec(4, 8, v.to_vec()).unwrap();
            obj(store.values(), &b)
        });
        worst = worst.max(compare(&format!("encoder dx[{i}]"), dx.values[i].as_slice(), &nx, 1e-4)?);
    }
    Ok(worst)
}

fn combiner_params(kind: CombinerKind, dims: &[usize], s: &mut Stream) -> CombinerParams<f64> {
    match kind {
        CombinerKind::Concat => CombinerParams::concat(),
        CombinerKind::Sum => CombinerParams::sum(),
        CombinerKind::WeightedAverage => CombinerParams::weighted(randv(s, dims.len(), 1.0)),
        CombinerKind::AttentionMix => {
            CombinerParams::attention(dims.iter().map(|&d| randn(s, d, 4, 0.7)).collect(), randv(s, 4, 1.0))
        }
    }
}

/// Flattens the learnable combiner parameters.
fn flat(p: &CombinerParams<f64>) -> Vec<f64> {
    let mut v = p.mix_logits.clone();
    for m in &p.attn_proj {
        v.extend_from_slice(m.as_slice());
    }
    v.extend_from_slice(&p.query);
    v
}

fn unflat(template: &CombinerParams<f64>, v: &[f64]) -> CombinerParams<f64> {
    let mut p = template.clone();
    let mut at = 0;
    let mut take = |n: usize| {
        at += n;
        v[at - n..at].to_vec()
    };
    p.mix_logits = take(p.mix_logits.len());
    for m in p.attn_proj.iter_mut() {
        *m = Mat::from_vec(m.rows(), m.cols(), take(m.as_slice().len())).unwrap();
    }
    p.query = take(p.query.len());
    p
}

pub fn grad_combiners() -> Result<f64, String> {
    let mut s = stream(15);
    let mut worst: f64 = 0.0;
    for kind in [CombinerKind::Concat, CombinerKind::Sum, CombinerKind::WeightedAverage, CombinerKind::AttentionMix] {
        let dims = if kind == CombinerKind::Concat || kind == CombinerKind::AttentionMix { vec![3, 5] } else { vec![3, 3] };
        let mats: Vec<Mat<f64>> = dims.iter().map(|&d| randn(&mut s, 4, d, 1.0)).collect();
        let params = combiner_params(kind, &dims, &mut s);
        let out = combine(&mats, &params).unwrap();
        let r = randn(&mut s, out.rows(), out.cols(), 1.0);
        let g = combine_backward(&mats, &params, &r).unwrap();
        let obj = |ms: &[Mat<f64>], p: &CombinerParams<f64>| dot(combine(ms, p).unwrap().as_slice(), r.as_slice());
        for m in 0..mats.len() {
            let n = numeric_grad(mats[m].as_slice(), |v| {
                let mut ms = mats.clone();
                ms[m] = Mat::from_vec(4, dims[m], v.to_vec()).unwrap();
                obj(&ms, &params)
            });
            worst = worst.max(compare(&format!("{kind} d_input[{m}]"), g.inputs[m].as_slice(), &n, 1e-4)?);
        }
        let theta = flat(&params);
        if !theta.is_empty() {
            let n = numeric_grad(&theta, |v| obj(&mats, &unflat(&params, v)));
            let mut a = g.mix_logits.clone();
            for m in &g.attn_proj {
                a.extend_from_slice(m.as_slice());
            }
            a.extend_from_slice(&g.query);
            worst = worst.max(compare(&format!("{kind} params"), &a, &n, 1e-4)?);
        }
    }
    Ok(worst)
}

/// Whole head at 64-bit: 1 utterance, 5 frames, d_model 8, one layer,
/// attention mixing over two models.
pub fn grad_pipeline() -> Result<f64, String> {
    let cfg = micro_head_config(1, CombinerKind::AttentionMix, vec![3, 4]);
    let store = jittered_store(&cfg, 16, 0.1);
    let mut model = HeadModel::new(cfg.clone(), store.clone()).unwrap();
    let mut s = stream(16);
    let item = HeadItem {
        features: vec![randn(&mut s, 5, 3, 1.0), randn(&mut s, 5, 4, 1.0)],
        target: vec![1, 2, 2],
    };
    let items = vec![item];
    model.store_mut().zero_grads();
    model.loss_and_grad(&items, Mode::Eval, 0).map_err(|e| e.to_string())?;
    let analytic = model.store().grads().to_vec();
    let numeric = numeric_grad(store.values(), |v| {
        let mut st = store.clone();
        st.values_mut().copy_from_slice(v);
        HeadModel::new(cfg.clone(), st).unwrap().loss(&items, Mode::Eval, 0).unwrap().loss
    });
    compare("pipeline params", &analytic, &numeric, 1e-3)
}

pub fn crit_gradients() -> Check {
    let start = Instant::now();
    let parts: [(&str, GradCheck); 7] = [
        ("ctc", grad_ctc),
        ("linear", grad_linear),
        ("layer_norm", grad_layer_norm),
        ("attention", grad_attention),
        ("encoder", grad_encoder),
        ("combiners", grad_combiners),
        ("pipeline", grad_pipeline),
    ];
    let mut detail = Vec::new();
    for (name, f) in parts {
        detail.push(format!("{name} {:.1e}", f()?));
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return Err(format!("took {secs:.1}s"));
    }
    Ok(format!("max rel err: {}; {secs:.2}s", detail.join(", ")))
}

// ------------------------------------------------------------ mask hygiene

pub fn crit_mask_hygiene() -> Check {
    let cfg = micro_head_config(2, CombinerKind::AttentionMix, vec![3, 4]);
    let store = jittered_store(&cfg, 20, 0.1);
    let enc = Encoder::resolve(&store, &cfg.encoder).unwrap();
    let mut s = stream(20);
    let items = vec![randn(&mut s, 3, 8, 1.0), randn(&mut s, 6, 8, 1.0)];
    let clean = PaddedBatch::from_items(&items, 9).unwrap();
    let mut dirty = clean.clone();
    for (v, mask) in dirty.values.iter_mut().zip(&clean.frame_mask) {
        for (t, &real) in mask.iter().enumerate() {
            if !real {
                v.row_mut(t).iter_mut().for_each(|x| *x = 1e3 * s.normal());
            }
        }
    }
    let (a, _) = enc.forward(store.values(), &clean, Mode::Eval).unwrap();
    let (b, _) = enc.forward(store.values(), &dirty, Mode::Eval).unwrap();
    let mut enc_diff: f64 = 0.0;
    for i in 0..2 {
        enc_diff = enc_diff.max(a.unpadded(i).max_abs_diff(&b.unpadded(i)));
    }
    if enc_diff > 1e-6 {
        return Err(format!("encoder output moved by {enc_diff:.2e} with padded contents"));
    }

    let model = HeadModel::new(cfg, store).unwrap();
    let head_items: Vec<HeadItem<f64>> = [(4, vec![1, 2]), (7, vec![3, 1, 1])]
        .into_iter()
        .map(|(t, target)| HeadItem {
            features: vec![randn(&mut s, t, 3, 1.0), randn(&mut s, t, 4, 1.0)],
            target,
        })
        .collect();
    let base = model.loss(&head_items, Mode::Eval, 0).unwrap().loss;
    let mut loss_diff: f64 = 0.0;
    for pad_to in [8, 12, 20] {
        loss_diff = loss_diff.max((model.loss(&head_items, Mode::Eval, pad_to).unwrap().loss - base).abs());
    }
    if loss_diff > 1e-5 {
        return Err(format!("batch loss moved by {loss_diff:.2e} with extra padding"));
    }
    Ok(format!("encoder max diff {enc_diff:.1e}, loss max diff {loss_diff:.1e}"))
}

pub fn crit_permutation() -> Check {
    let mut cfg = micro_head_config(2, CombinerKind::Concat, vec![4]);
    cfg.encoder.positions = false;
    let store = jittered_store(&cfg, 21, 0.1);
    let enc = Encoder::resolve(&store, &cfg.encoder).unwrap();
    let mut s = stream(21);
    let mut worst: f64 = 0.0;
    for trial in 0..5 {
        let frames = 4 + trial;
        let x = randn(&mut s, frames, 8, 1.0);
        let mut perm: Vec<usize> = (0..frames).collect();
        s.shuffle(&mut perm);
        let mut px = Mat::zeros(frames, 8);
        for (t, &p) in perm.iter().enumerate() {
            px.row_mut(t).copy_from_slice(x.row(p));
        }
        // padding after the real frames must not break equivariance either
        let run = |m: &Mat<f64>| {
            let b = PaddedBatch::from_items(std::slice::from_ref(m), frames + 2).unwrap();
            enc.forward(store.values(), &b, Mode::Eval).unwrap().0.unpadded(0)
        };
        let (y, py) = (run(&x), run(&px));
        for (t, &p) in perm.iter().enumerate() {
            for (a, b) in py.row(t).iter().zip(y.row(p)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    if worst > 1e-5 {
        return Err(format!("max deviation {worst:.2e}"));
    }
    Ok(format!("5 permutations, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- WER oracle

const MAX_EXHAUSTIVE_LEN: usize = 8;

/// Index subsets of `0..n`, grouped by size, for every `n` up to the limit.
fn subsets_by_size(n: usize) -> &'static [Vec<Vec<usize>>] {
    static TABLE: OnceLock<Vec<Vec<Vec<Vec<usize>>>>> = OnceLock::new();
    assert!(n <= MAX_EXHAUSTIVE_LEN, "exhaustive alignment limited to length {MAX_EXHAUSTIVE_LEN}");
    &TABLE.get_or_init(|| {
        (0..=MAX_EXHAUSTIVE_LEN)
            .map(|n| {
                let mut out = vec![Vec::new(); n + 1];
                for mask in 0u32..(1 << n) {
                    let set: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                    out[set.len()].push(set);
                }
                out
            })
            .collect()
    })[n]
}

/// Minimum cost over every monotone matching of reference and hypothesis
/// positions, with the set of `(pairs, unequal pairs)` that attain it. A
/// matching pairs the `k` chosen reference positions with the `k` chosen
/// hypothesis positions in order; the rest are deletions and insertions.
pub fn exhaustive_alignment(r: &[u8], h: &[u8]) -> (usize, Vec<(usize, usize)>) {
    let (n, m) = (r.len(), h.len());
    let (rs, hs) = (subsets_by_size(n), subsets_by_size(m));
    let mut best = usize::MAX;
    let mut how = Vec::new();
    for k in 0..=n.min(m) {
        for rpos in &rs[k] {
            for hpos in &hs[k] {
                let unequal = rpos.iter().zip(hpos).filter(|(&i, &j)| r[i] != h[j]).count();
                let cost = unequal + (n - k) + (m - k);
                if cost < best {
                    best = cost;
                    how.clear();
                }
                if cost == best && !how.contains(&(k, unequal)) {
                    how.push((k, unequal));
                }
            }
        }
    }
    (best, how)
}

fn all_sequences(max_len: usize, alphabet: u8) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier: Vec<Vec<u8>> = vec![vec![]];
    for _ in 0..max_len {
        let next: Vec<Vec<u8>> = frontier
            .iter()
            .flat_map(|p| (0..alphabet).map(move |c| [p.as_slice(), &[c]].concat()))
            .collect();
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn crit_wer_oracle() -> Check {
    let start = Instant::now();
    let seqs = all_sequences(6, 3);
    let mut pairs = 0usize;
    for r in &seqs {
        for h in &seqs {
            let c = align_counts(r, h);
            let (best, how) = exhaustive_alignment(r, h);
            let k = r.len() - c.deletions;
            if c.total() != best || h.len() - c.insertions != k || !how.contains(&(k, c.substitutions)) {
                return Err(format!("{r:?} vs {h:?}: {c:?}, oracle cost {best} via {how:?}"));
            }
            pairs += 1;
        }
    }

    let mut s = stream(30);
    let rand_seq = |s: &mut Stream| -> Vec<u8> {
        let a = 1 + s.below(4) as u8;
        (0..s.below(9)).map(|_| s.below(a as usize) as u8).collect()
    };
    for _ in 0..500 {
        let (a, b, c) = (rand_seq(&mut s), rand_seq(&mut s), rand_seq(&mut s));
        let ab = align_counts(&a, &b);
        let ba = align_counts(&b, &a);
        if ab.total() != ba.total() || ab.insertions != ba.deletions || ab.deletions != ba.insertions {
            return Err(format!("symmetry: {a:?} {b:?}: {ab:?} vs {ba:?}"));
        }
        if (ab.total() == 0) != (a == b) {
            return Err(format!("identity: {a:?} {b:?}"));
        }
        let (ac, bc) = (align_counts(&a, &c).total(), align_counts(&b, &c).total());
        if ac > ab.total() + bc {
            return Err(format!("triangle: {a:?} {b:?} {c:?}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 30.0 {
        return Err(format!("took {secs:.1}s"));
    }
    Ok(format!("{pairs} exhaustive pairs, 500 metric triples, {secs:.2}s"))
}

// ---------------------------------------------------------------- pipeline

pub fn tree_digest(dir: &Path) -> BTreeMap<PathBuf, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, String>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let bytes = fs::read(&p).unwrap();
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), format!("{:x}", Sha256::digest(&bytes)));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn feature_digest(dir: &Path) -> BTreeMap<PathBuf, String> {
    tree_digest(&dir.join("feats"))
}

pub fn small_synth(seed: u64, utterances: usize) -> SynthConfig {
    SynthConfig {
        num_utterances: utterances,
        seed,
        ..SynthConfig::default()
    }
}

pub fn small_train(tags: &[&str], layers: usize, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        model_tags: tags.iter().map(|t| t.to_string()).collect(),
        num_layers: layers,
        d_model: 16,
        num_heads: 2,
        epochs,
        seed,
        ..TrainConfig::default()
    }
}

pub fn crit_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = small_synth(7, 40);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ma = synth_corpus(&cfg, &a).map_err(|e| e.to_string())?;
    synth_corpus(&cfg, &b).map_err(|e| e.to_string())?;
    let (ta, tb) = (tree_digest(&a), tree_digest(&b));
    if ta != tb {
        return Err("synthetic trees differ".into());
    }
    let tcfg = TrainConfig {
        dropout: 0.1,
        sort_by_length: false,
        ..small_train(&["m0", "m1"], 2, 2, 7)
    };
    let (ca, cb) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    train(&ma, &tcfg, &ca, &mut std::io::sink()).map_err(|e| e.to_string())?;
    train(&ma, &tcfg, &cb, &mut std::io::sink()).map_err(|e| e.to_string())?;
    let (ba, bb) = (fs::read(&ca).unwrap(), fs::read(&cb).unwrap());
    if ba != bb {
        return Err("checkpoints differ".into());
    }
    Ok(format!("{} synthetic files identical, checkpoint of {} bytes identical", ta.len(), ba.len()))
}

pub fn crit_frozen_contract() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = synth_corpus(&small_synth(8, 30), dir.path()).map_err(|e| e.to_string())?;
    let manifest_bytes = fs::read(dir.path().join("manifest.jsonl")).unwrap();
    let before = feature_digest(dir.path());
    for combiner in [CombinerKind::Concat, CombinerKind::AttentionMix] {
        let cfg = TrainConfig {
            combiner,
            ..small_train(&["m0", "m1"], 1, 2, 8)
        };
        train(&manifest, &cfg, &dir.path().join("h.ckpt"), &mut std::io::sink()).map_err(|e| e.to_string())?;
    }
    if feature_digest(dir.path()) != before || fs::read(dir.path().join("manifest.jsonl")).unwrap() != manifest_bytes {
        return Err("feature files or manifest changed during training".into());
    }
    Ok(format!("{} feature files hashed identical after 2 training runs", before.len()))
}

/// Zero-noise corpus whose transcripts have no adjacent repeated characters.
/// A head without encoder layers maps identical frames to identical
/// posteriors, so it cannot separate a doubled character at zero noise.
pub const ZERO_NOISE_SEED: u64 = 154;

pub fn zero_noise_synth() -> SynthConfig {
    SynthConfig {
        noise_sigma: 0.0,
        num_utterances: 16,
        utterance_len_range: (2, 4),
        seed: ZERO_NOISE_SEED,
        ..SynthConfig::default()
    }
}

pub fn crit_head_depths() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = synth_corpus(&small_synth(9, 24), dir.path().join("noisy")).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    for layers in [0, 2, 8] {
        let cfg = small_train(&["m0", "m1"], layers, 2, 9);
        let (_, report) = train_head(&manifest, &cfg, &mut std::io::sink()).map_err(|e| format!("{layers} layers: {e}"))?;
        if report.epoch_losses.len() != 2 || report.epoch_losses.iter().any(|l| !l.is_finite()) {
            return Err(format!("{layers} layers: bad losses {:?}", report.epoch_losses));
        }
        detail.push(format!("{layers}L loss {:.2}", report.epoch_losses[1]));
    }

    let clean = synth_corpus(&zero_noise_synth(), dir.path().join("clean")).map_err(|e| e.to_string())?;
    if let Some(r) = clean.records.iter().find(|r| r.transcript.as_bytes().windows(2).any(|w| w[0] == w[1])) {
        return Err(format!("precondition: {:?} has a doubled character", r.transcript));
    }
    let cfg = TrainConfig {
        model_tags: vec!["m0".into(), "m1".into()],
        num_layers: 0,
        epochs: 80,
        learning_rate: 1e-2,
        batch_size: 4,
        seed: ZERO_NOISE_SEED,
        ..TrainConfig::default()
    };
    let (model, _) = train_head(&clean, &cfg, &mut std::io::sink()).map_err(|e| e.to_string())?;
    let report = evaluate_head(&clean, &model).map_err(|e| e.to_string())?;
    if report.wer.error_rate != 0.0 {
        return Err(format!("0-layer zero-noise training-set report: {report}"));
    }
    detail.push(format!("0L zero-noise train {report}"));
    Ok(detail.join("; "))
}

pub struct DirectionalRun {
    pub seed: u64,
    pub wer_a: f64,
    pub wer_b: f64,
    pub wer_ensemble: f64,
}

pub const DIRECTIONAL_EPOCHS: usize = 20;

pub fn directional_run(seed: u64) -> Result<DirectionalRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SynthConfig {
        num_utterances: 400,
        noise_sigma: 0.3,
        seed,
        ..SynthConfig::default()
    };
    let all = synth_corpus(&cfg, dir.path()).map_err(|e| e.to_string())?;
    let (train_set, test_set) = all.split_at(300).map_err(|e| e.to_string())?;
    let wer = |tags: &[&str]| -> Result<f64, String> {
        let tcfg = TrainConfig {
            model_tags: tags.iter().map(|t| t.to_string()).collect(),
            num_layers: 2,
            d_model: 32,
            num_heads: 4,
            epochs: DIRECTIONAL_EPOCHS,
            seed,
            ..TrainConfig::default()
        };
        let (model, _) = train_head(&train_set, &tcfg, &mut std::io::sink()).map_err(|e| e.to_string())?;
        Ok(evaluate_head(&test_set, &model).map_err(|e| e.to_string())?.wer.error_rate)
    };
    Ok(DirectionalRun {
        seed,
        wer_a: wer(&["m0"])?,
        wer_b: wer(&["m1"])?,
        wer_ensemble: wer(&["m0", "m1"])?,
    })
}

pub fn crit_directional() -> Check {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut strong = 0;
    let mut all_better = true;
    for seed in 1..=5 {
        let r = directional_run(seed)?;
        let best = r.wer_a.min(r.wer_b);
        all_better &= r.wer_ensemble < best;
        if r.wer_ensemble <= 0.9 * best {
            strong += 1;
        }
        lines.push(format!(
            "seed {} A {:.1} B {:.1} A+B {:.1}",
            r.seed,
            100.0 * r.wer_a,
            100.0 * r.wer_b,
            100.0 * r.wer_ensemble
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{}; {strong}/5 seeds at <= 0.9 x best; {secs:.0}s", lines.join(", "));
    if all_better && strong >= 4 && secs <= 600.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}
