use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Samples compared against the central difference.
    pub checked: usize,
    /// Samples dropped because the perturbation crossed a kink.
    pub skipped: usize,
    /// Checked samples whose gradient was below the resolution floor.
    pub floored: usize,
}

/// Relative accuracy the noise floor is calibrated for.
const RESOLUTION: f64 = 1e-4;

/// Compares analytic gradients with central differences at `samples`
/// randomly chosen scalar parameters.
///
/// `loss_fn` receives a fresh graph plus one param node per entry of
/// `params`, and must return a scalar node. It is called once for the
/// analytic pass and twice per sample, so it must be deterministic.
/// A sample is skipped when `θ ± eps` changes a relu sign or a max-pool
/// winner relative to the unperturbed evaluation.
///
/// The relative error is `|a - n| / max(|a|, |n|, floor)`, where `floor`
/// is the smallest gradient the central difference resolves to `1e-4`
/// given the rounding of the loss values (about `ε_mach · |loss| / eps ·
/// 1e4`, and at least `1e-8`).
pub fn check_gradient<F>(
    params: &mut [Tensor],
    mut loss_fn: F,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let total: usize = params.iter().map(Tensor::len).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("no parameters to check".into()));
    }

    let mut eval = |params: &[Tensor]| -> Result<(f64, u64, Graph, NodeId, Vec<NodeId>)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
        let root = loss_fn(&mut g, &ids)?;
        let loss = g.value(root).item();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss}")));
        }
        Ok((loss, g.kink_signature(), g, root, ids))
    };

    let (_, base_sig, graph, root, ids) = eval(params)?;
    let grads = graph.backward(root)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| grads.get_or_zeros(&graph, id)).collect();
    drop(graph);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        floored: 0,
    };
    for _ in 0..samples {
        let mut flat = rng.gen_range(0..total);
        let mut which = 0;
        while flat >= params[which].len() {
            flat -= params[which].len();
            which += 1;
        }
        let original = params[which].data()[flat];

        params[which].data_mut()[flat] = original + eps;
        let plus = eval(params);
        params[which].data_mut()[flat] = original - eps;
        let minus = eval(params);
        params[which].data_mut()[flat] = original;
        let ((fp, sp, ..), (fm, sm, ..)) = (plus?, minus?);

        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[which].data()[flat];
        // Rounding in the two loss values limits how small a gradient
        // the central difference can resolve to RESOLUTION relative
        // accuracy; below that, errors are measured against the floor.
        let noise = 4.0 * f64::EPSILON * fp.abs().max(fm.abs()).max(1.0) / (2.0 * eps);
        let floor = (noise / RESOLUTION).max(1e-8);
        let scale = a.abs().max(numeric.abs());
        if scale < floor {
            report.floored += 1;
        }
        let rel = (a - numeric).abs() / scale.max(floor);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
