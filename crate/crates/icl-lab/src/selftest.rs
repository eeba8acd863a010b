//! Runtime verification suite behind the `selftest` CLI command: gradient
//! checks for every differentiable op and oracle comparisons for the
//! forward kernels, solver, schedule, and data pipeline. Each check returns
//! Ok or a description of the first failure.

use crate::baselines::{knn3, least_squares, SupportSet};
use crate::data::synthetic_pool;
use crate::linalg::pinv_solve;
use crate::rng::Rng;
use crate::tasks::{curriculum_at, eval_target, mask_image, sample_target, FunctionClass, TargetFunction};
use crate::tensor::gradcheck::GradCheck;
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{kernels, Tensor};
use crate::train::context_weights;

type Check = (&'static str, fn() -> Result<(), String>);

pub fn checks() -> Vec<Check> {
    vec![
        ("grad_matmul", grad_matmul),
        ("grad_conv2d", grad_conv2d),
        ("grad_pointwise", grad_pointwise),
        ("grad_attention", grad_attention),
        ("grad_structural", grad_structural),
        ("oracle_matmul", oracle_matmul),
        ("oracle_conv2d", oracle_conv2d),
        ("softmax_rows_sum_to_one", softmax_rows_sum_to_one),
        ("layernorm_row_stats", layernorm_row_stats),
        ("least_squares_exact_recovery", ls_exact_recovery),
        ("knn_matches_sort_oracle", knn_oracle),
        ("curriculum_schedule", curriculum_schedule),
        ("loss_weight_vector", loss_weight_vector),
        ("data_pipeline_stats", data_pipeline_stats),
    ]
}

/// Run every check, printing one status line each; Err carries the failing
/// check names.
pub fn run_all(mut out: impl std::io::Write) -> std::io::Result<Result<(), Vec<String>>> {
    let mut failed = Vec::new();
    for (name, f) in checks() {
        match f() {
            Ok(()) => writeln!(out, "[PASS] {name}")?,
            Err(msg) => {
                writeln!(out, "[FAIL] {name}: {msg}")?;
                failed.push(name.to_string());
            }
        }
    }
    Ok(if failed.is_empty() { Ok(()) } else { Err(failed) })
}

fn sum_sq(g: &mut Graph<f64>, v: Var) -> Var {
    let sq = g.mul(v, v);
    g.sum_all(sq)
}

fn grad_matmul() -> Result<(), String> {
    let mut rng = Rng::seed_from(101);
    for i in 0..3 {
        let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
        GradCheck::default().check_inputs("matmul", &[a, b], i, |g, v| {
            let c = g.matmul(v[0], v[1]);
            g.sum_all(c)
        })?;
    }
    Ok(())
}

fn grad_conv2d() -> Result<(), String> {
    let mut rng = Rng::seed_from(102);
    for i in 0..3 {
        let x = Tensor::randn(&[1, 1, 6, 6], 1.0, &mut rng);
        let w = Tensor::randn(&[2, 1, 3, 3], 1.0, &mut rng);
        GradCheck::default().check_inputs("conv2d", &[x, w], i, |g, v| {
            let c = g.conv2d(v[0], v[1], 1, 1);
            sum_sq(g, c)
        })?;
    }
    Ok(())
}

fn grad_pointwise() -> Result<(), String> {
    let mut rng = Rng::seed_from(103);
    for i in 0..3 {
        let x = Tensor::<f64>::randn(&[3, 5], 1.0, &mut rng)
            .map(|v| if v.abs() < 1e-2 { v + 0.05 } else { v });
        GradCheck::default().check_inputs("relu", std::slice::from_ref(&x), i, |g, v| {
            let r = g.relu(v[0]);
            sum_sq(g, r)
        })?;
        GradCheck::default().check_inputs("gelu", std::slice::from_ref(&x), i, |g, v| {
            let r = g.gelu(v[0]);
            sum_sq(g, r)
        })?;
        let w = Tensor::randn(&[3, 5], 1.0, &mut rng);
        GradCheck::default().check_inputs("softmax", &[x.clone(), w.clone()], i, |g, v| {
            let s = g.softmax_rows(v[0]);
            let m = g.mul(s, v[1]);
            g.sum_all(m)
        })?;
        GradCheck::default().check_inputs("layernorm", &[x, w], i, |g, v| {
            let s = g.layernorm_rows(v[0]);
            let m = g.mul(s, v[1]);
            g.sum_all(m)
        })?;
    }
    Ok(())
}

fn grad_attention() -> Result<(), String> {
    let mut rng = Rng::seed_from(104);
    let seq = 4;
    let mut mask = Tensor::<f64>::zeros(&[seq, seq]);
    for i in 0..seq {
        for j in (i + 1)..seq {
            mask.data_mut()[i * seq + j] = kernels::MASKED;
        }
    }
    for i in 0..3 {
        let q = Tensor::randn(&[seq, 4], 1.0, &mut rng);
        let k = Tensor::randn(&[seq, 4], 1.0, &mut rng);
        let v = Tensor::randn(&[seq, 4], 1.0, &mut rng);
        let mask = mask.clone();
        GradCheck::default().check_inputs("mha", &[q, k, v], i, move |g, vars| {
            let o = g.mha(vars[0], vars[1], vars[2], 1, seq, 2, &mask);
            sum_sq(g, o)
        })?;
    }
    Ok(())
}

fn grad_structural() -> Result<(), String> {
    let mut rng = Rng::seed_from(105);
    let x = Tensor::randn(&[4, 3], 1.0, &mut rng);
    GradCheck::default().check_inputs("gather_rows", &[x], 0, |g, v| {
        let c = g.gather_rows(v[0], vec![0, 2, 2, 1]);
        sum_sq(g, c)
    })?;
    let img = Tensor::randn(&[1, 1, 8, 8], 1.0, &mut rng);
    GradCheck::default().check_inputs("patches", &[img], 0, |g, v| {
        let c = g.patches(v[0], 4);
        sum_sq(g, c)
    })?;
    let x = Tensor::randn(&[6, 3], 1.0, &mut rng);
    GradCheck::default().check_inputs("mean_pool", &[x], 0, |g, v| {
        let c = g.mean_pool_groups(v[0], 3);
        sum_sq(g, c)
    })?;
    Ok(())
}

fn oracle_matmul() -> Result<(), String> {
    let mut rng = Rng::seed_from(106);
    for _ in 0..5 {
        let a = Tensor::<f64>::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[4, 2], 1.0, &mut rng);
        let c = kernels::matmul(&a, &b, false);
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for l in 0..4 {
                    acc += a.at(&[i, l]) * b.at(&[l, j]);
                }
                if (c.at(&[i, j]) - acc).abs() > 1e-6 {
                    return Err(format!("matmul[{i},{j}] = {} vs oracle {acc}", c.at(&[i, j])));
                }
            }
        }
    }
    Ok(())
}

fn oracle_conv2d() -> Result<(), String> {
    let mut rng = Rng::seed_from(107);
    let x = Tensor::<f64>::randn(&[1, 1, 8, 8], 1.0, &mut rng);
    let w = Tensor::<f64>::randn(&[1, 1, 2, 2], 1.0, &mut rng);
    let (y, _) = kernels::conv2d_fwd(&x, &w, 2, 0);
    for oy in 0..4 {
        for ox in 0..4 {
            let mut acc = 0.0;
            for ky in 0..2 {
                for kx in 0..2 {
                    acc += x.at(&[0, 0, oy * 2 + ky, ox * 2 + kx]) * w.at(&[0, 0, ky, kx]);
                }
            }
            if (y.at(&[0, 0, oy, ox]) - acc).abs() > 1e-6 {
                return Err(format!("conv2d[{oy},{ox}] = {} vs oracle {acc}", y.at(&[0, 0, oy, ox])));
            }
        }
    }
    Ok(())
}

fn softmax_rows_sum_to_one() -> Result<(), String> {
    let mut rng = Rng::seed_from(108);
    let x = Tensor::<f64>::randn(&[10, 7], 2.0, &mut rng);
    let s = kernels::softmax_rows(&x);
    for (r, row) in s.data().chunks(7).enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&v| v < 0.0) {
            return Err(format!("row {r} sums to {sum}"));
        }
    }
    Ok(())
}

fn layernorm_row_stats() -> Result<(), String> {
    let mut rng = Rng::seed_from(109);
    let x = Tensor::<f64>::randn(&[6, 16], 3.0, &mut rng);
    let (y, _) = kernels::layernorm_rows(&x);
    for (r, row) in y.data().chunks(16).enumerate() {
        let mean: f64 = row.iter().sum::<f64>() / 16.0;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
        if mean.abs() > 1e-6 {
            return Err(format!("row {r} mean {mean}"));
        }
        if (var - 1.0).abs() > 1e-4 {
            return Err(format!("row {r} var {var}"));
        }
    }
    Ok(())
}

fn ls_exact_recovery() -> Result<(), String> {
    let mut rng = Rng::seed_from(110);
    for d in [2usize, 3] {
        let f: TargetFunction<f64> = sample_target(FunctionClass::Linear, 500 + d as u64);
        let m = d * d + 3;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..m {
            let img = mask_image(&Tensor::randn(&[1, 8, 8], 1.0, &mut rng), d);
            ys.push(eval_target(&f, &img));
            xs.extend_from_slice(img.data());
        }
        let s = SupportSet::new(Tensor::new(&[m, 64], xs), ys, d);
        let q = mask_image(&Tensor::randn(&[1, 8, 8], 1.0, &mut rng), d);
        let err = (least_squares(&s, q.data()).value - eval_target(&f, &q)).powi(2);
        if err >= 1e-8 {
            return Err(format!("d={d}: query mse {err}"));
        }
    }
    // minimal-norm hand case
    let mut x = Tensor::zeros(&[1, 64]);
    x.data_mut()[0] = 2.0;
    let w = pinv_solve(&x, &[4.0], 1e-8);
    if (w[0] - 2.0).abs() > 1e-10 || w[1..].iter().any(|&v| v.abs() > 1e-10) {
        return Err("minimal-norm solution of the 1-row system is wrong".into());
    }
    Ok(())
}

fn knn_oracle() -> Result<(), String> {
    let mut rng = Rng::seed_from(111);
    for inst in 0..20 {
        let m = 10;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut imgs = Vec::new();
        for _ in 0..m {
            let img = mask_image(&Tensor::randn(&[1, 8, 8], 1.0, &mut rng), 4);
            xs.extend_from_slice(img.data());
            ys.push(rng.normal_f64());
            imgs.push(img);
        }
        let s = SupportSet::new(Tensor::new(&[m, 64], xs), ys.clone(), 4);
        let q = mask_image(&Tensor::randn(&[1, 8, 8], 1.0, &mut rng), 4);
        let mut pairs: Vec<(f64, usize)> = imgs
            .iter()
            .enumerate()
            .map(|(i, img)| {
                (
                    img.data().iter().zip(q.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                    i,
                )
            })
            .collect();
        pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want = (ys[pairs[0].1] + ys[pairs[1].1] + ys[pairs[2].1]) / 3.0;
        let got = knn3(&s, q.data()).value;
        if got != want {
            return Err(format!("instance {inst}: knn {got} vs oracle {want}"));
        }
    }
    Ok(())
}

fn curriculum_schedule() -> Result<(), String> {
    let cases = [
        (0usize, 2usize, 11usize),
        (4999, 2, 11),
        (5000, 3, 16),
        (29999, 7, 36),
        (30000, 8, 41),
        (1_000_000_000, 8, 41),
    ];
    for (step, d, n) in cases {
        let got = curriculum_at(step, 5, 5000);
        if got != (d, n) {
            return Err(format!("step {step}: got {got:?}, want ({d}, {n})"));
        }
    }
    Ok(())
}

fn loss_weight_vector() -> Result<(), String> {
    let w = context_weights::<f64>(4, 4);
    if w != vec![0.25, 1.0, 2.25, 4.0] {
        return Err(format!("weights for n=4: {w:?}"));
    }
    Ok(())
}

fn data_pipeline_stats() -> Result<(), String> {
    let pool = synthetic_pool(100, 17);
    let n = pool.images().numel() as f64;
    let mean: f64 = pool.images().data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var: f64 = pool
        .images()
        .data()
        .iter()
        .map(|&v| (v as f64 - mean) * (v as f64 - mean))
        .sum::<f64>()
        / n;
    if mean.abs() > 1e-3 {
        return Err(format!("pool mean {mean}"));
    }
    if (var.sqrt() - 1.0).abs() > 1e-3 {
        return Err(format!("pool std {}", var.sqrt()));
    }
    Ok(())
}
