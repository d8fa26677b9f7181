//! The finite-difference suite behind `aae gradcheck`.
//!
//! Every differentiable op is checked on randomized small instances, plus
//! the full tiny U-Net for each encoder family with excitation active.
//! Instances are drawn away from relu kinks and argmax ties; an instance
//! whose perturbation still switches a branch is redrawn.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::excitation::{self, DownscaleMode, GradientMode};
use crate::metrics::MaskImage;
use crate::network::{EncoderKind, NetworkSpec, Site, UNet};
use crate::tensor::{grad_check_report, relative_error, Tape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Random instances per op check.
pub const INSTANCES: usize = 20;
const MAX_REDRAWS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub instances: usize,
    pub probes: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Set when no branch-stable instance could be drawn.
    pub note: Option<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.note.is_none() && self.max_rel_error <= self.tolerance
    }
}

pub type Graph = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var> + Sync>;

pub struct Instance {
    pub inputs: Vec<Tensor>,
    pub graph: Graph,
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Values with magnitude in `[margin, 1)` and random sign.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(margin..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Shuffled, evenly spaced values centred on zero; pairwise distinct by `gap`.
pub fn distinct(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let offset = 0.5 * (n as f64 - 1.0) * gap;
    let data = idx.iter().map(|&i| i as f64 * gap - offset).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Random projection so every output element gets a distinct upstream grad.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = uniform(&mut rng, tape.value(y).shape(), -1.0, 1.0);
    tape.weighted_sum(y, &w)
}

/// Checks `count` instances drawn from `make`, redrawing those whose
/// perturbation crosses a branch.
pub fn check<F>(name: &str, count: usize, eps: f64, seed: u64, make: F) -> Result<CheckOutcome>
where
    F: Fn(&mut ChaCha8Rng, u64) -> Instance,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CheckOutcome {
        name: name.to_string(),
        instances: 0,
        probes: 0,
        max_rel_error: 0.0,
        tolerance: TOLERANCE,
        note: None,
    };
    let mut redraws = 0;
    while out.instances < count {
        let inst = make(&mut rng, out.instances as u64 + redraws as u64);
        let report = grad_check_report(&inst.graph, &inst.inputs, eps, |_, _| true)?;
        if report.branch_changes > 0 {
            redraws += 1;
            if redraws > MAX_REDRAWS {
                out.note = Some(format!("no branch-stable instance after {MAX_REDRAWS} redraws"));
                break;
            }
            continue;
        }
        out.instances += 1;
        out.probes += report.probes;
        if report.max_rel_error > out.max_rel_error {
            log::debug!("{name}: worst probe {:?} {:?}", report.worst, report.worst_values);
            out.max_rel_error = report.max_rel_error;
        }
    }
    Ok(out)
}

fn op_instance(inputs: Vec<Tensor>, graph: Graph) -> Instance {
    Instance { inputs, graph }
}

/// Tiny network used for end-to-end checks: 2 stages, width 2, 8×8 input,
/// excitation at every site.
pub fn tiny_unet(kind: EncoderKind, gradient_mode: GradientMode) -> Result<UNet> {
    let spec = NetworkSpec {
        encoder_kind: kind,
        stages: 2,
        base_width: 2,
        in_channels: 1,
        ae_sites: vec![Site::Encoder(1), Site::Encoder(2), Site::Concat(1), Site::Concat(2)],
    };
    UNet::new(spec, DownscaleMode::Any, gradient_mode)
}

/// End-to-end instance: all parameters are inputs. The objective is a
/// random projection of the sigmoid output; BCE against saturated outputs
/// loses ~1e-10 absolute precision in `ln(1−p)`, which swamps a central
/// difference at eps = 1e-5. BCE has its own checks above.
pub fn unet_instance(net: &UNet, rng: &mut ChaCha8Rng, alpha: f64, seed: u64) -> Instance {
    let store = net.init_params(rng.random());
    let mut inputs: Vec<Tensor> = store.iter().map(|(_, t)| t.clone()).collect();
    // nonzero biases so no unit sits exactly at a kink for every pixel
    for (i, t) in inputs.iter_mut().enumerate() {
        if i % 2 == 1 {
            for v in t.data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    let image = uniform(rng, &[1, 8, 8], 0.0, 1.0);
    let mask = MaskImage::from_fn(8, 8, |_, _| rng.random::<f64>() < 0.4);
    let net = net.clone();
    let graph: Graph = Box::new(move |tape, params| {
        let x = tape.constant(image.clone());
        let (out, _) = net.record(tape, params, x, Some((&mask, alpha)))?;
        project(tape, out, seed)
    });
    Instance { inputs, graph }
}

/// Detach mode keeps only the identity path, so the input gradient must
/// equal the upstream gradient exactly. Finite differences of the full
/// function would include the excitation term and are not the oracle here.
pub fn check_detach(count: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut probes = 0;
    for k in 0..count {
        let (c, h, w) = (
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        );
        let mask = MaskImage::from_fn(2 * h, 2 * w, |_, _| rng.random::<f64>() < 0.5);
        let alpha = rng.random_range(0.1..2.0);
        let x = distinct(&mut rng, &[c, h, w], 0.05);
        let mut tape = Tape::new();
        let v = tape.leaf(x);
        let y = excitation::assisted_excitation(&mut tape, v, &mask, alpha, DownscaleMode::Any, GradientMode::Detach)?;
        let loss = project(&mut tape, y, k as u64)?;
        tape.backward(loss)?;
        let mut wrng = ChaCha8Rng::seed_from_u64(k as u64 ^ 0x5eed);
        let weights = uniform(&mut wrng, &[c, h, w], -1.0, 1.0);
        let g = tape.grad(v).expect("leaf gradient");
        for (a, b) in g.iter().zip(weights.data()) {
            worst = worst.max(relative_error(*a, *b));
        }
        probes += g.len();
    }
    Ok(CheckOutcome {
        name: "assisted_excitation (detach)".into(),
        instances: count,
        probes,
        max_rel_error: worst,
        tolerance: TOLERANCE,
        note: None,
    })
}

/// Runs the complete suite.
pub fn run_suite(eps: f64) -> Result<Vec<CheckOutcome>> {
    let n = INSTANCES;
    let mut results = Vec::new();

    results.push(check("conv2d stride 1 pad 1", n, eps, 1, |rng, s| {
        let c = rng.random_range(1..=3);
        let o = rng.random_range(1..=3);
        let (h, w) = (rng.random_range(3..=5), rng.random_range(3..=5));
        op_instance(
            vec![
                uniform(rng, &[c, h, w], -1.0, 1.0),
                uniform(rng, &[o, c, 3, 3], -1.0, 1.0),
                uniform(rng, &[o], -1.0, 1.0),
            ],
            Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
                project(t, y, s)
            }),
        )
    })?);

    results.push(check("conv2d stride 2 pad 0", n, eps, 2, |rng, s| {
        let c = rng.random_range(1..=3);
        let k = rng.random_range(1..=3);
        let (h, w) = (rng.random_range(k..=6), rng.random_range(k..=6));
        op_instance(
            vec![
                uniform(rng, &[c, h, w], -1.0, 1.0),
                uniform(rng, &[2, c, k, k], -1.0, 1.0),
                uniform(rng, &[2], -1.0, 1.0),
            ],
            Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], 2, 0)?;
                project(t, y, s)
            }),
        )
    })?);

    results.push(check("relu", n, eps, 3, |rng, s| {
        let shape = [rng.random_range(1..=3), 3, 4];
        op_instance(
            vec![away_from_zero(rng, &shape, 10.0 * eps)],
            Box::new(move |t, v| {
                let y = t.relu(v[0]);
                project(t, y, s)
            }),
        )
    })?);

    results.push(check("maxpool2", n, eps, 4, |rng, s| {
        let shape = [
            rng.random_range(1..=3),
            rng.random_range(2..=5),
            rng.random_range(2..=5),
        ];
        op_instance(
            vec![distinct(rng, &shape, 0.05)],
            Box::new(move |t, v| {
                let y = t.maxpool2(v[0])?;
                project(t, y, s)
            }),
        )
    })?);

    results.push(check("upsample2", n, eps, 5, |rng, s| {
        let shape = [
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        ];
        op_instance(
            vec![uniform(rng, &shape, -1.0, 1.0)],
            Box::new(move |t, v| {
                let y = t.upsample2(v[0])?;
                project(t, y, s)
            }),
        )
    })?);

    results.push(check("concat_channels", n, eps, 6, |rng, s| {
        let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let (c1, c2) = (rng.random_range(1..=3), rng.random_range(1..=3));
        op_instance(
            vec![
                uniform(rng, &[c1, h, w], -1.0, 1.0),
                uniform(rng, &[c2, h, w], -1.0, 1.0),
            ],
            Box::new(move |t, v| {
                let y = t.concat_channels(v[0], v[1])?;
                project(t, y, s)
            }),
        )
    })?);

    results.push(check("sigmoid", n, eps, 7, |rng, s| {
        op_instance(
            vec![uniform(rng, &[2, 3, 3], -6.0, 6.0)],
            Box::new(move |t, v| {
                let y = t.sigmoid(v[0]);
                project(t, y, s)
            }),
        )
    })?);

    results.push(check("add", n, eps, 8, |rng, s| {
        op_instance(
            vec![uniform(rng, &[2, 2, 3], -1.0, 1.0), uniform(rng, &[2, 2, 3], -1.0, 1.0)],
            Box::new(move |t, v| {
                let y = t.add(v[0], v[1])?;
                project(t, y, s)
            }),
        )
    })?);

    results.push(check("bce_loss", n, eps, 9, |rng, _| {
        let target = Tensor::from_fn([2, 3, 3], |_| f64::from(rng.random::<bool>()));
        op_instance(
            vec![uniform(rng, &[2, 3, 3], 0.05, 0.95)],
            Box::new(move |t, v| t.bce_loss(v[0], &target)),
        )
    })?);

    results.push(check("conv2d+relu+bce", n, eps, 10, |rng, _| {
        let target = Tensor::from_fn([2, 4, 4], |_| f64::from(rng.random::<bool>()));
        op_instance(
            vec![
                uniform(rng, &[2, 4, 4], -1.0, 1.0),
                uniform(rng, &[2, 2, 3, 3], -0.5, 0.5),
                uniform(rng, &[2], -0.1, 0.1),
            ],
            Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
                let r = t.relu(y);
                let p = t.sigmoid(r);
                t.bce_loss(p, &target)
            }),
        )
    })?);

    results.push(check("assisted_excitation (flow)", n, eps, 11, |rng, s| {
        let (c, h, w) = (
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        );
        let mask = MaskImage::from_fn(2 * h, 2 * w, |_, _| rng.random::<f64>() < 0.5);
        let alpha = rng.random_range(0.1..2.0);
        op_instance(
            vec![distinct(rng, &[c, h, w], 0.05)],
            Box::new(move |t, v| {
                let y = excitation::assisted_excitation(t, v[0], &mask, alpha, DownscaleMode::Any, GradientMode::Flow)?;
                project(t, y, s)
            }),
        )
    })?);
    results.push(check_detach(n, 12)?);

    for (kind, seed) in [
        (EncoderKind::AlexLike, 21),
        (EncoderKind::VggLike, 22),
        (EncoderKind::ResLike, 23),
    ] {
        let net = tiny_unet(kind, GradientMode::Flow)?;
        results.push(check(
            &format!("tiny U-Net ({kind}, excitation α=0.7)"),
            5,
            eps,
            seed,
            |rng, s| unet_instance(&net, rng, 0.7, s),
        )?);
    }
    Ok(results)
}
