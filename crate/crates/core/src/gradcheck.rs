//! Central finite-difference certification of hand-written backward passes.
//!
//! An operation under test maps a list of variable tensors to an output
//! tensor. The harness draws the variables and a fixed random cotangent `r`
//! from a seed, then compares the analytic vector-Jacobian product
//! `backward(vars, r)` against
//!
//! ```text
//! sum_i r_i * (out_i(θ + h) - out_i(θ - h)) / ((θ + h) - (θ - h))
//! ```
//!
//! evaluated in f64 with `h = 1e-5 * max(|θ|, 1)`. The denominator uses the
//! step that was actually realised in floating point. Probes whose two
//! evaluations fall on different sides of a non-smooth point (see
//! [`GradOp::kink_signature`]) are rejected.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};

pub const FD_RELATIVE_STEP: f64 = 1e-5;
const DENOMINATOR_FLOOR: f64 = 1e-8;

pub trait GradOp {
    fn name(&self) -> String;

    fn variable_names(&self, count: usize) -> Vec<String> {
        (0..count).map(|i| format!("input{i}")).collect()
    }

    fn forward<T: Element>(&self, vars: &[Tensor<T>]) -> Result<Tensor<T>>;

    fn backward<T: Element>(&self, vars: &[Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>>;

    /// Draws the variables at which the check runs. The default is standard
    /// normal entries; ops with kinks override this to reject draws near them.
    fn draw(&self, shapes: &[Vec<usize>], rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
        shapes.iter().map(|s| Tensor::randn(s, 1.0, rng)).collect()
    }

    /// Fingerprint of every discrete decision taken by the forward pass
    /// (activation masks, argmax positions). Constant for smooth ops.
    fn kink_signature(&self, _vars: &[Tensor<f64>]) -> Result<u64> {
        Ok(0)
    }

    /// f64 forward together with its kink signature. Ops that can read the
    /// signature off the same pass override this to avoid a second forward.
    fn forward_with_signature(&self, vars: &[Tensor<f64>]) -> Result<(Tensor<f64>, u64)> {
        Ok((self.forward(vars)?, self.kink_signature(vars)?))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariableError {
    pub name: String,
    pub max_relative_error: f64,
    pub probes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub op: String,
    pub precision: DType,
    pub tolerance: f64,
    pub variables: Vec<VariableError>,
    pub max_relative_error: f64,
    pub rejected_probes: usize,
    pub pass: bool,
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(
            f,
            "{:<28} {:>4}  max rel err {:>10.3e}  tol {:>7.0e}  {}",
            self.op,
            match self.precision {
                DType::F32 => "f32",
                DType::F64 => "f64",
            },
            self.max_relative_error,
            self.tolerance,
            verdict
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub tolerance: f64,
    pub seed: u64,
    /// Precision of the analytic pass; finite differences always run in f64.
    pub precision: DType,
    /// Variables with more entries than this are probed at a random subset.
    pub max_probes_per_variable: usize,
}

impl CheckOptions {
    pub fn f64(tolerance: f64, seed: u64) -> Self {
        Self {
            tolerance,
            seed,
            precision: DType::F64,
            max_probes_per_variable: 48,
        }
    }

    pub fn f32(tolerance: f64, seed: u64) -> Self {
        Self {
            precision: DType::F32,
            ..Self::f64(tolerance, seed)
        }
    }

    pub fn with_max_probes(mut self, probes: usize) -> Self {
        self.max_probes_per_variable = probes;
        self
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Draws variables of the given shapes and checks `op` at them.
pub fn gradient_check<O: GradOp>(op: &O, input_shapes: &[Vec<usize>], opts: CheckOptions) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut vars = op.draw(input_shapes, &mut rng);
    if opts.precision == DType::F32 {
        // Both passes must see the same point.
        vars = vars.iter().map(|v| v.cast::<f32>().cast::<f64>()).collect();
    }
    check_at(op, &vars, opts, &mut rng)
}

/// Checks `op` at caller-provided variables.
pub fn gradient_check_at<O: GradOp>(op: &O, vars: &[Tensor<f64>], opts: CheckOptions) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    check_at(op, vars, opts, &mut rng)
}

fn ensure_finite<T: Element>(op: &str, what: &str, t: &Tensor<T>) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("gradient check of {op}: {what}"),
        })
    }
}

fn check_at<O: GradOp>(op: &O, vars: &[Tensor<f64>], opts: CheckOptions, rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let name = op.name();
    let (base_out, base_signature) = op.forward_with_signature(vars)?;
    ensure_finite(&name, "forward output", &base_out)?;
    let cotangent = Tensor::<f64>::randn(base_out.shape(), 1.0, rng);

    let analytic: Vec<Tensor<f64>> = match opts.precision {
        DType::F64 => op.backward::<f64>(vars, &cotangent)?,
        DType::F32 => {
            let v32: Vec<Tensor<f32>> = vars.iter().map(|v| v.cast()).collect();
            op.backward::<f32>(&v32, &cotangent.cast())?
                .iter()
                .map(|g| g.cast())
                .collect()
        }
    };
    if analytic.len() != vars.len() {
        return Err(Error::invalid(
            "gradient_check",
            format!("{name}: backward returned {} gradients for {} variables", analytic.len(), vars.len()),
        ));
    }
    for (g, v) in analytic.iter().zip(vars) {
        if g.shape() != v.shape() {
            return Err(Error::shape(
                "gradient_check",
                format!("{name} gradient"),
                format!("{:?}", v.shape()),
                format!("{:?}", g.shape()),
            ));
        }
        ensure_finite(&name, "analytic gradient", g)?;
    }

    let names = op.variable_names(vars.len());
    let mut work: Vec<Tensor<f64>> = vars.to_vec();
    let mut variables = Vec::with_capacity(vars.len());
    let mut rejected = 0;

    for (vi, var) in vars.iter().enumerate() {
        let coords: Vec<usize> = if var.len() <= opts.max_probes_per_variable {
            (0..var.len()).collect()
        } else {
            let mut c = sample(rng, var.len(), opts.max_probes_per_variable).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst: f64 = 0.0;
        let mut probes = 0;
        for &idx in &coords {
            let theta = var.data()[idx];
            let h = FD_RELATIVE_STEP * theta.abs().max(1.0);
            let (plus, minus) = (theta + h, theta - h);

            work[vi].data_mut()[idx] = plus;
            let (out_plus, sig_plus) = op.forward_with_signature(&work)?;
            work[vi].data_mut()[idx] = minus;
            let (out_minus, sig_minus) = op.forward_with_signature(&work)?;
            work[vi].data_mut()[idx] = theta;

            if sig_plus != base_signature || sig_minus != base_signature {
                rejected += 1;
                continue;
            }
            ensure_finite(&name, "perturbed output", &out_plus)?;
            ensure_finite(&name, "perturbed output", &out_minus)?;
            let step = plus - minus;
            let numeric: f64 = cotangent
                .data()
                .iter()
                .zip(out_plus.data().iter().zip(out_minus.data()))
                .map(|(r, (p, m))| r * ((p - m) / step))
                .sum();
            let err = relative_error(analytic[vi].data()[idx], numeric);
            worst = worst.max(err);
            probes += 1;
        }
        variables.push(VariableError {
            name: names.get(vi).cloned().unwrap_or_else(|| format!("input{vi}")),
            max_relative_error: worst,
            probes,
        });
    }

    let max_relative_error = variables.iter().map(|v| v.max_relative_error).fold(0.0, f64::max);
    let probes: usize = variables.iter().map(|v| v.probes).sum();
    Ok(GradReport {
        op: name,
        precision: opts.precision,
        tolerance: opts.tolerance,
        variables,
        max_relative_error,
        rejected_probes: rejected,
        pass: probes > 0 && max_relative_error < opts.tolerance,
    })
}
