//! Central finite-difference gradient verification.

use super::graph::{Graph, NodeRef};
use super::param::ParamSet;
use super::KernelError;

/// Compare reverse-mode gradients to central finite differences.
///
/// `build` must construct the full loss from the parameters attached to the
/// graph and be deterministic (fix any rng seed inside it). Returns the
/// maximum over parameter elements of
/// `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn finite_diff_check<F>(build: F, params: &ParamSet, eps: f64) -> Result<f64, KernelError>
where
    F: Fn(&mut Graph) -> Result<NodeRef, KernelError>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(KernelError::InvalidEps(eps));
    }
    let eval = |ps: &ParamSet| -> Result<f64, KernelError> {
        let mut g = Graph::new();
        g.attach(ps);
        let loss = build(&mut g)?;
        if g.value(loss).numel() != 1 {
            return Err(KernelError::NonScalarLoss { shape: g.value(loss).shape().to_vec() });
        }
        Ok(g.value(loss).get(0))
    };

    let l0 = eval(params)?;
    let l1 = eval(params)?;
    if l0 != l1 {
        return Err(KernelError::NonDeterministic { delta: (l0 - l1).abs() });
    }

    // one taped pass for the analytic gradients
    let mut g = Graph::new();
    g.attach(params);
    let loss = build(&mut g)?;
    let analytic = g.grad(loss)?;

    let mut max_rel = 0.0_f64;
    let mut work = params.clone();
    for (name, grad) in &analytic {
        for i in 0..grad.numel() {
            let orig = work.value(name)?.get(i);
            // use the realized perturbation so representation rounding in
            // `orig +- eps` does not pollute the quotient
            let (hi, lo) = (orig + eps, orig - eps);
            work.get_mut(name)?.value.data_mut()[i] = hi;
            let lp = eval(&work)?;
            work.get_mut(name)?.value.data_mut()[i] = lo;
            let lm = eval(&work)?;
            work.get_mut(name)?.value.data_mut()[i] = orig;
            let fd = (lp - lm) / (hi - lo);
            let ad = grad.get(i);
            let rel = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
