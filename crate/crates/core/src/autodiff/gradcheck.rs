use super::{Graph, Tensor, Var};
use crate::error::Result;
use crate::rng::SeedRng;

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|ad - fd| / max(1, |ad|, |fd|)`.
    pub max_rel_err: f64,
    /// `(param index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs())
}

/// Checks every coordinate of every parameter. `f` must be deterministic
/// (dropout off) and build a scalar from the leaves it is handed.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_sampled(f, params, h, tol, None)
}

/// As [`grad_check`], but with `sample = Some((k, rng))` only `k` random
/// coordinates per parameter are perturbed.
pub fn grad_check_sampled<F>(
    f: F,
    params: &[Tensor],
    h: f64,
    tol: f64,
    mut sample: Option<(usize, &mut SeedRng)>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad(v)).collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, checked: 0, tol, passed: true };
    for pi in 0..params.len() {
        let n = params[pi].len();
        let coords: Vec<usize> = match sample.as_mut() {
            Some((k, rng)) if *k < n => (0..*k).map(|_| rng.below(n)).collect(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = params[pi].data()[c];
            work[pi].data_mut()[c] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[c] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[c] = orig;

            let fd = (up - down) / (2.0 * h);
            let err = relative_error(analytic[pi].data()[c], fd);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err.max(report.max_rel_err);
                report.worst = Some((pi, c));
            }
        }
    }
    report.passed = report.max_rel_err < tol;
    Ok(report)
}
