//! Shared generators and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nnc_core::allocator::AllocationPlan;
use nnc_core::interpreter::Tensor;
use nnc_core::ir::{Conv1dAttrs, Graph, GraphBuilder, Layer, LayerKind, PoolAttrs, Shape};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Which layer features a random model may use.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelOpts {
    pub residual: bool,
    pub padded: bool,
    pub strided: bool,
    /// BatchNorm, ZeroPad1D, AvgPool1D and a trailing SoftMax.
    pub extras: bool,
}

fn same_padding(kernel: usize) -> (usize, usize) {
    let left = (kernel - 1) / 2;
    (left, kernel - 1 - left)
}

/// Random sequential 1D CNN, optionally with a residual block, ending in a
/// Dense classifier. Weights are drawn from `seed`.
pub fn random_model(seed: u64, opts: ModelOpts) -> Graph {
    let mut r = rng(seed);
    let input = Shape::new(r.gen_range(1..=3), r.gen_range(24..=48));
    let mut b = GraphBuilder::new("input", input);
    let mut prev = "input".to_string();
    let step = |b: &mut GraphBuilder, id: String, input: &str, layer: Layer| -> String {
        b.simple(&id, input, layer).unwrap();
        id
    };
    for i in 0..r.gen_range(1..=2) {
        if opts.extras && r.gen_bool(0.4) {
            let layer = Layer::ZeroPad1D {
                pad_left: r.gen_range(0..=2),
                pad_right: r.gen_range(1..=2),
            };
            prev = step(&mut b, format!("pad{i}"), &prev, layer);
        }
        let kernel = r.gen_range(1..=5);
        let (pad_left, pad_right) = if opts.padded && r.gen_bool(0.5) {
            same_padding(kernel)
        } else {
            (0, 0)
        };
        let attrs = Conv1dAttrs {
            filters: r.gen_range(2..=6),
            kernel,
            stride: if opts.strided && r.gen_bool(0.5) { 2 } else { 1 },
            pad_left,
            pad_right,
            fused_relu: false,
        };
        let id = format!("conv{i}");
        b.conv1d(&id, &prev, attrs).unwrap();
        prev = id;
        if opts.extras && r.gen_bool(0.5) {
            let id = format!("bn{i}");
            b.batch_norm(&id, &prev, 1e-3).unwrap();
            prev = id;
        }
        if r.gen_bool(0.8) {
            prev = step(&mut b, format!("relu{i}"), &prev, Layer::ReLU);
        }
        if b.shape_of(&prev).samples >= 8 {
            if r.gen_bool(0.5) {
                prev = step(&mut b, format!("pool{i}"), &prev, Layer::MaxPool1D(PoolAttrs::new(2)));
            } else if opts.extras && r.gen_bool(0.4) {
                prev = step(&mut b, format!("avg{i}"), &prev, Layer::AvgPool1D(PoolAttrs::new(2)));
            }
        }
    }
    if opts.residual {
        let channels = b.shape_of(&prev).channels;
        let conv = |r: &mut ChaCha8Rng, filters| {
            let kernel = if opts.padded { r.gen_range(1..=3) * 2 - 1 } else { 1 };
            let (pad_left, pad_right) = same_padding(kernel);
            Conv1dAttrs {
                filters,
                kernel,
                stride: 1,
                pad_left,
                pad_right,
                fused_relu: false,
            }
        };
        let filters = r.gen_range(2..=6);
        let a = conv(&mut r, filters);
        b.conv1d("res_a", &prev, a).unwrap();
        b.simple("res_a_relu", "res_a", Layer::ReLU).unwrap();
        let c = conv(&mut r, channels);
        b.conv1d("res_b", "res_a_relu", c).unwrap();
        b.add("res_add", &[&prev, "res_b"]).unwrap();
        prev = step(&mut b, "res_relu".into(), "res_add", Layer::ReLU);
    }
    prev = step(&mut b, "flatten".into(), &prev, Layer::Flatten);
    if r.gen_bool(0.5) {
        b.dense("hidden", &prev, r.gen_range(4..=12)).unwrap();
        prev = step(&mut b, "hidden_relu".into(), "hidden", Layer::ReLU);
    }
    b.dense("classifier", &prev, r.gen_range(2..=5)).unwrap();
    if opts.extras {
        b.simple("softmax", "classifier", Layer::SoftMax).unwrap();
    }
    let mut g = b.finish();
    g.reinit_weights(seed ^ 0x5eed);
    g
}

pub fn random_inputs(seed: u64, shape: Shape, count: usize) -> Vec<Tensor<f64>> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| Tensor::new(shape, (0..shape.len()).map(|_| r.gen_range(-1.0..1.0)).collect()))
        .collect()
}

/// Random DAG of ReLU, 1x1 Conv1D and multi-input Add nodes. Dangling
/// results are joined into a final Add so every node is consumed.
pub fn random_dag(seed: u64) -> Graph {
    let mut r = rng(seed);
    let samples = r.gen_range(1..=8);
    let mut b = GraphBuilder::new("input", Shape::new(r.gen_range(1..=4), samples));
    let mut ids = vec!["input".to_string()];
    let mut used: BTreeMap<String, bool> = BTreeMap::new();
    let conv = |filters| Conv1dAttrs::valid(filters, 1);
    for i in 0..r.gen_range(1..=20) {
        let id = format!("n{i}");
        let src = if i == 0 {
            ids[0].clone()
        } else {
            ids[r.gen_range(0..ids.len())].clone()
        };
        let same: Vec<String> = ids
            .iter()
            .filter(|o| b.shape_of(o) == b.shape_of(&src))
            .cloned()
            .collect();
        match r.gen_range(0..3) {
            0 => {
                b.simple(&id, &src, Layer::ReLU).unwrap();
                used.insert(src, true);
            }
            1 if same.len() >= 2 => {
                let k = r.gen_range(2..=same.len().min(3));
                let mut picked: Vec<String> = Vec::new();
                while picked.len() < k {
                    let o = same[r.gen_range(0..same.len())].clone();
                    if !picked.contains(&o) {
                        picked.push(o);
                    }
                }
                let refs: Vec<&str> = picked.iter().map(String::as_str).collect();
                b.add(&id, &refs).unwrap();
                for p in picked {
                    used.insert(p, true);
                }
            }
            _ => {
                b.conv1d(&id, &src, conv(r.gen_range(1..=6))).unwrap();
                used.insert(src, true);
            }
        }
        ids.push(id);
    }
    let last = ids.last().unwrap().clone();
    let target = b.shape_of(&last).channels;
    let dangling: Vec<String> = ids[1..ids.len() - 1]
        .iter()
        .filter(|id| !used.contains_key(*id))
        .cloned()
        .collect();
    if dangling.is_empty() {
        return b.finish_at(&last);
    }
    let mut joined = vec![last];
    for d in dangling {
        let id = format!("fix_{d}");
        b.conv1d(&id, &d, conv(target)).unwrap();
        joined.push(id);
    }
    let refs: Vec<&str> = joined.iter().map(String::as_str).collect();
    b.add("join", &refs).unwrap();
    b.finish_at("join")
}

/// Replays `order` against `plan` and reports the first conflict: a value
/// overwritten before its last reader ran, a read of a buffer that no
/// longer holds the expected value, an undersized pool, or a bad order.
pub fn simulate_live_ranges(graph: &Graph, order: &[String], plan: &AllocationPlan) -> Result<(), String> {
    let mut readers_left: BTreeMap<&str, usize> = BTreeMap::new();
    for node in graph.nodes.values() {
        for i in &node.inputs {
            *readers_left.entry(i.as_str()).or_default() += 1;
        }
    }
    let mut executed: BTreeMap<&str, bool> = BTreeMap::new();
    let mut holder: Vec<Option<&str>> = vec![None; plan.pool_sizes.len()];
    let shapes = nnc_core::ir::infer_shapes(graph).map_err(|e| e.to_string())?;
    if order.len() != graph.nodes.len() {
        return Err("order does not cover the graph".into());
    }
    for id in order {
        let node = &graph.nodes[id];
        for i in &node.inputs {
            if !executed.contains_key(i.as_str()) {
                return Err(format!("`{id}` runs before its input `{i}`"));
            }
            if graph.nodes[i].kind() != LayerKind::Input {
                let p = plan.pool_of(i).ok_or(format!("`{i}` has no pool"))?;
                if holder[p] != Some(i.as_str()) {
                    return Err(format!("`{id}` reads `{i}` from pool {p}, which holds {:?}", holder[p]));
                }
            }
        }
        if node.kind() != LayerKind::Input {
            let p = plan.pool_of(id).ok_or(format!("`{id}` has no pool"))?;
            if plan.pool_sizes[p] < shapes[id].len() {
                return Err(format!("pool {p} is too small for `{id}`"));
            }
            if let Some(prev) = holder[p] {
                let live = readers_left[prev] > 0 || prev == graph.output;
                if live {
                    return Err(format!("`{id}` overwrites live `{prev}` in pool {p}"));
                }
            }
            holder[p] = Some(id.as_str());
        }
        for i in &node.inputs {
            *readers_left.get_mut(i.as_str()).unwrap() -= 1;
        }
        executed.insert(id.as_str(), true);
    }
    if graph.nodes[&graph.output].kind() != LayerKind::Input {
        let p = plan.pool_of(&graph.output).unwrap();
        if holder[p] != Some(graph.output.as_str()) {
            return Err("output was overwritten".into());
        }
    }
    Ok(())
}

pub fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

pub fn pow2(e: i32) -> BigRational {
    let p = BigRational::from_integer(BigInt::one() << e.unsigned_abs() as usize);
    if e >= 0 {
        p
    } else {
        p.recip()
    }
}

/// `n = w - m - 1` with `m = 1 + floor(log2(max|x|))`, by exact search.
pub fn oracle_frac_bits(values: &[f64], width: u32) -> Option<i32> {
    let max = values.iter().map(|&v| rational(v).abs()).max()?;
    if max.is_zero() {
        return None;
    }
    let mut k = 0i32;
    while max >= pow2(k + 1) {
        k += 1;
    }
    while max < pow2(k) {
        k -= 1;
    }
    Some(width as i32 - (1 + k) - 1)
}

/// `clamp(floor(x * 2^n))` to the signed `w`-bit range, exactly.
pub fn oracle_quantize(x: f64, width: u32, frac: i32) -> i64 {
    let scaled = (rational(x) * pow2(frac)).floor().to_integer();
    let lo = BigInt::from(-(1i64 << (width - 1)));
    let hi = BigInt::from((1i64 << (width - 1)) - 1);
    scaled.clamp(lo, hi).to_i64().unwrap()
}

/// Finite doubles spread over many binades, including exact powers of two
/// and their neighbours.
pub fn random_real(r: &mut ChaCha8Rng) -> f64 {
    let sign = if r.gen_bool(0.5) { -1.0 } else { 1.0 };
    match r.gen_range(0..4) {
        0 => sign * 2f64.powi(r.gen_range(-30..=20)),
        1 => {
            let p = 2f64.powi(r.gen_range(-30..=20));
            let bits = p.to_bits();
            sign * f64::from_bits(if r.gen_bool(0.5) { bits + 1 } else { bits - 1 })
        }
        2 => sign * r.gen_range(0.0..1.0) * 2f64.powi(r.gen_range(-30..=20)),
        _ => sign * r.gen_range(-8.0f64..8.0).abs(),
    }
}
