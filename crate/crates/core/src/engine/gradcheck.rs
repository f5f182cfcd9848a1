//! Finite-difference verification of the reverse-mode rules, in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Denominator floor of the relative error, so gradients that are exactly
/// zero compare by absolute error instead of amplifying rounding noise.
pub const REL_FLOOR: f64 = 1e-2;
pub const DEFAULT_TOL: f64 = 1e-5;

/// Every differentiable tape operation covered by the suite.
pub const OPS: [&str; 11] = [
    "conv2d",
    "maxpool2d",
    "upsample2x",
    "concat_channels",
    "relu",
    "sigmoid",
    "flatten",
    "linear",
    "bce_loss",
    "mse_loss",
    "weighted_sum",
];

/// Builds a scalar objective from the leaves bound to the inputs.
pub type Objective<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckResult {
    pub max_rel_error: f64,
    pub checked: usize,
}

fn eval(f: &Objective<'_>, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).data()[0])
}

/// Compares analytic gradients of `f` with central finite differences at
/// every input element. `corrupt` perturbs one analytic entry (negative control).
pub fn grad_check(f: &Objective<'_>, inputs: &[Tensor<f64>], corrupt: bool) -> Result<GradCheckResult> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::shape("grad_check objective must be scalar"));
    }
    let grads = tape.backward(out)?;
    let mut analytic: Vec<Tensor<f64>> = inputs
        .iter()
        .zip(&vars)
        .map(|(t, &v)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    if corrupt {
        let g = &mut analytic[0].data_mut()[0];
        *g += 1.0;
    }

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let x0 = input.data()[i];
            probe[k].data_mut()[i] = x0 + FD_STEP;
            let fp = eval(f, &probe)?;
            probe[k].data_mut()[i] = x0 - FD_STEP;
            let fm = eval(f, &probe)?;
            probe[k].data_mut()[i] = x0;
            let num = (fp - fm) / (2.0 * FD_STEP);
            let ana = analytic[k].data()[i];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(REL_FLOOR);
            worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
            checked += 1;
        }
    }
    Ok(GradCheckResult {
        max_rel_error: worst,
        checked,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpReport {
    pub op: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Normal values kept at least `gap` away from zero (clear of the ReLU kink).
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    normal(rng, shape).map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
}

/// Distinct values, pairwise at least 0.05 apart (no max-pool ties).
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ranks.swap(i, rng.gen_range(0..=i));
    }
    let data = ranks
        .into_iter()
        .map(|r| 0.1 * r as f64 + rng.gen_range(-0.025..0.025))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Random inputs and objective for one instance of `op`.
#[allow(clippy::type_complexity)]
fn instance(op: &str, rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor<f64>>, Box<Objective<'static>>)> {
    let mut dim = |lo: usize, hi: usize| rng.gen_range(lo..=hi);
    let weighted = |w: Tensor<f64>, body: Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>| -> Box<Objective<'static>> {
        Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
            let y = body(t, v)?;
            t.weighted_sum(y, &w)
        })
    };
    let out = match op {
        "conv2d" => {
            let (n, ci, co, h, w) = (dim(1, 2), dim(1, 3), dim(1, 3), dim(2, 6), dim(2, 6));
            let k = [1, 3, 5][dim(0, 2)];
            let x = normal(rng, &[n, ci, h, w]);
            let wt = normal(rng, &[co, ci, k, k]);
            let b = normal(rng, &[co]);
            let ow = normal(rng, &[n, co, h, w]);
            (vec![x, wt, b], weighted(ow, Box::new(|t, v| t.conv2d(v[0], v[1], v[2]))))
        }
        "maxpool2d" => {
            let shape = [dim(1, 2), dim(1, 3), 2 * dim(1, 3), 2 * dim(1, 3)];
            let x = distinct(rng, &shape);
            let ow = normal(rng, &[shape[0], shape[1], shape[2] / 2, shape[3] / 2]);
            (vec![x], weighted(ow, Box::new(|t, v| t.maxpool2d(v[0]))))
        }
        "upsample2x" => {
            let shape = [dim(1, 2), dim(1, 3), dim(1, 4), dim(1, 4)];
            let x = normal(rng, &shape);
            let ow = normal(rng, &[shape[0], shape[1], 2 * shape[2], 2 * shape[3]]);
            (vec![x], weighted(ow, Box::new(|t, v| t.upsample2x(v[0]))))
        }
        "concat_channels" => {
            let (n, ca, cb, h, w) = (dim(1, 2), dim(1, 3), dim(1, 3), dim(1, 4), dim(1, 4));
            let a = normal(rng, &[n, ca, h, w]);
            let b = normal(rng, &[n, cb, h, w]);
            let ow = normal(rng, &[n, ca + cb, h, w]);
            (vec![a, b], weighted(ow, Box::new(|t, v| t.concat_channels(v[0], v[1]))))
        }
        "relu" => {
            let shape = [dim(1, 3), dim(1, 8)];
            let x = away_from_zero(rng, &shape, 0.05);
            let ow = normal(rng, &shape);
            (vec![x], weighted(ow, Box::new(|t, v| Ok(t.relu(v[0])))))
        }
        "sigmoid" => {
            let shape = [dim(1, 3), dim(1, 8)];
            let x = normal(rng, &shape).map(|v| 3.0 * v);
            let ow = normal(rng, &shape);
            (vec![x], weighted(ow, Box::new(|t, v| Ok(t.sigmoid(v[0])))))
        }
        "flatten" => {
            let shape = [dim(1, 2), dim(1, 3), dim(1, 3), dim(1, 3)];
            let x = normal(rng, &shape);
            let ow = normal(rng, &[shape[0], shape[1] * shape[2] * shape[3]]);
            (vec![x], weighted(ow, Box::new(|t, v| t.flatten(v[0]))))
        }
        "linear" => {
            let (n, f, o) = (dim(1, 4), dim(1, 6), dim(1, 5));
            let x = normal(rng, &[n, f]);
            let w = normal(rng, &[o, f]);
            let b = normal(rng, &[o]);
            let ow = normal(rng, &[n, o]);
            (vec![x, w, b], weighted(ow, Box::new(|t, v| t.linear(v[0], v[1], v[2]))))
        }
        "bce_loss" => {
            let shape = [dim(1, 2), 1, dim(1, 4), dim(1, 4)];
            let p = uniform(rng, &shape, 0.05, 0.95);
            let target = uniform(rng, &shape, 0.0, 1.0);
            let f: Box<Objective<'static>> = Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.bce_loss(v[0], &target));
            (vec![p], f)
        }
        "mse_loss" => {
            let shape = [dim(1, 4), 3];
            let p = normal(rng, &shape);
            let target = normal(rng, &shape);
            let f: Box<Objective<'static>> = Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.mse_loss(v[0], &target));
            (vec![p], f)
        }
        "weighted_sum" => {
            let shape = [dim(1, 3), dim(1, 5)];
            let x = normal(rng, &shape);
            let ow = normal(rng, &shape);
            let f: Box<Objective<'static>> = Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.weighted_sum(v[0], &ow));
            (vec![x], f)
        }
        other => return Err(Error::Config(format!("unknown op {other:?}; expected one of {OPS:?}"))),
    };
    Ok(out)
}

/// Resolves an op selector: `all` or a single name from [`OPS`].
pub fn select_ops(selector: &str) -> Result<Vec<&'static str>> {
    if selector == "all" {
        return Ok(OPS.to_vec());
    }
    OPS.iter()
        .find(|&&o| o == selector)
        .map(|&o| vec![o])
        .ok_or_else(|| Error::Config(format!("unknown op {selector:?}; expected all or one of {OPS:?}")))
}

/// Runs `instances` random checks of each op in `ops`.
pub fn run_suite(ops: &[&str], instances: usize, tol: f64, seed: u64, corrupt: bool) -> Result<Vec<OpReport>> {
    ops.iter()
        .enumerate()
        .map(|(oi, &op)| {
            let mut worst = 0.0f64;
            for i in 0..instances {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((oi as u64) << 32) ^ i as u64);
                let (inputs, f) = instance(op, &mut rng)?;
                worst = worst.max(grad_check(f.as_ref(), &inputs, corrupt)?.max_rel_error);
            }
            Ok(OpReport {
                op: op.to_string(),
                instances,
                max_rel_error: worst,
                passed: worst <= tol,
            })
        })
        .collect()
}

pub fn suite_table(reports: &[OpReport]) -> String {
    let mut s = format!("{:<16} {:>9} {:>14}  result\n", "op", "instances", "max_rel_err");
    for r in reports {
        s.push_str(&format!(
            "{:<16} {:>9} {:>14.3e}  {}\n",
            r.op,
            r.instances,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        let reports = run_suite(&OPS, 20, DEFAULT_TOL, 1, false).unwrap();
        for r in &reports {
            assert!(r.passed, "{}", suite_table(&reports));
        }
    }

    #[test]
    fn corrupted_gradient_fails() {
        for r in run_suite(&["conv2d", "bce_loss"], 3, DEFAULT_TOL, 1, true).unwrap() {
            assert!(!r.passed);
        }
    }

    #[test]
    fn unknown_op_is_an_error() {
        assert!(select_ops("softmax").is_err());
        assert_eq!(select_ops("all").unwrap().len(), OPS.len());
        assert_eq!(select_ops("relu").unwrap(), vec!["relu"]);
        assert!(run_suite(&["nope"], 1, DEFAULT_TOL, 0, false).is_err());
    }
}
