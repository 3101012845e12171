//! Central-finite-difference gradient verification. Test support: the
//! checker re-runs a graph-building closure with perturbed parameters and
//! never looks at the analytic backward path it is judging.

use crate::rng::{uniform_usize, Rng};

use super::graph::{Graph, NodeId};
use super::store::ParameterStore;

/// Absolute slack for f32 loss evaluations: with losses of order 1 and
/// h = 1e-3, the difference quotient carries roughly eps_f32 / (2h) of
/// roundoff, so ~3e-5 of noise is unavoidable regardless of the true
/// gradient.
pub const FD_ABS_TOL: f64 = 5e-5;

/// Compare analytic gradients of `build`'s scalar output against central
/// finite differences on up to `n_samples` randomly chosen parameter
/// coordinates.
///
/// A coordinate passes when |ad - fd| <= atol + rel_tol * max(|ad|, |fd|),
/// the usual criterion for f32 gradient checks.
#[allow(clippy::too_many_arguments)]
pub fn check_against_finite_differences(
    store: &mut ParameterStore,
    build: &dyn Fn(&mut Graph, &ParameterStore) -> NodeId,
    param_names: &[&str],
    n_samples: usize,
    h: f32,
    rel_tol: f32,
    rng: &mut Rng,
) -> Result<(), String> {
    check_with_tolerances(store, build, param_names, n_samples, h, rel_tol, FD_ABS_TOL, rng)
}

#[allow(clippy::too_many_arguments)]
pub fn check_with_tolerances(
    store: &mut ParameterStore,
    build: &dyn Fn(&mut Graph, &ParameterStore) -> NodeId,
    param_names: &[&str],
    n_samples: usize,
    h: f32,
    rel_tol: f32,
    atol: f64,
    rng: &mut Rng,
) -> Result<(), String> {
    store.zero_grads();
    {
        let mut g = Graph::new();
        let loss = build(&mut g, store);
        g.backward_into(loss, store)
            .map_err(|e| format!("backward failed: {e}"))?;
    }

    let eval = |store: &ParameterStore| -> (f64, Vec<bool>) {
        let mut g = Graph::new();
        let loss = build(&mut g, store);
        (g.value(loss).item() as f64, g.relu_input_signs())
    };
    let (_, base_signs) = eval(store);

    // Oversample: coordinates whose +-h sweep flips a ReLU sign sit on a
    // kink where the difference quotient measures nothing; they are
    // skipped and replaced by further samples.
    let candidates: Vec<(usize, usize)> = {
        let mut all = Vec::new();
        for (pi, name) in param_names.iter().enumerate() {
            let numel = store.value(name).map_err(|e| e.to_string())?.numel();
            for ci in 0..numel {
                all.push((pi, ci));
            }
        }
        let mut picked = Vec::with_capacity(all.len().min(8 * n_samples));
        while !all.is_empty() && picked.len() < 8 * n_samples {
            picked.push(all.swap_remove(uniform_usize(rng, all.len())));
        }
        picked
    };

    let mut checked = 0usize;
    let mut skipped = 0usize;
    for (pi, ci) in candidates {
        if checked >= n_samples {
            break;
        }
        let name = param_names[pi];
        let analytic = store.grad(name).map_err(|e| e.to_string())?[ci] as f64;
        let original = store.value(name).map_err(|e| e.to_string())?.data()[ci];

        store.value_mut(name).unwrap().data_mut()[ci] = original + h;
        let (plus, signs_plus) = eval(store);
        store.value_mut(name).unwrap().data_mut()[ci] = original - h;
        let (minus, signs_minus) = eval(store);
        store.value_mut(name).unwrap().data_mut()[ci] = original;

        if signs_plus != base_signs || signs_minus != base_signs {
            skipped += 1;
            continue;
        }
        checked += 1;

        let fd = (plus - minus) / (2.0 * h as f64);
        let bound = atol + rel_tol as f64 * analytic.abs().max(fd.abs());
        if (analytic - fd).abs() > bound {
            return Err(format!(
                "gradient mismatch at {name}[{ci}]: analytic {analytic:.6e}, \
                 finite-difference {fd:.6e}, |diff| {:.3e} > {bound:.3e}",
                (analytic - fd).abs()
            ));
        }
    }
    if checked == 0 {
        return Err(format!(
            "no differentiable coordinates found ({skipped} kink crossings)"
        ));
    }
    Ok(())
}
