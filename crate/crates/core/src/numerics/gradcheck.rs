use super::{Graph, RngState, Tensor, Var};
use crate::Result;

/// Central-difference step.
pub const DEFAULT_STEP: f64 = 1e-4;

const DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates_checked: usize,
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` builds a scalar from the bound parameters and must be deterministic.
/// With `sample = Some((k, seed))` only `k` random coordinates are checked,
/// otherwise every coordinate of every parameter is.
pub fn finite_diff_check<F>(
    params: &[Tensor],
    f: F,
    h: f64,
    sample: Option<(usize, u64)>,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    assert!(h > 0.0, "finite difference step must be positive");

    let analytic: Vec<Tensor> = {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| g.param(p.clone())).collect();
        let loss = f(&g, &vars)?;
        g.backward(loss)?;
        vars.iter()
            .zip(params)
            .map(|(v, p)| v.grad().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    };

    let mut coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |c| (pi, c)))
        .collect();
    if let Some((k, seed)) = sample {
        let mut rng = RngState::new(seed);
        let picked = rng.sample_without_replacement(coords.len(), k);
        coords = picked.into_iter().map(|i| coords[i]).collect();
    }

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = ps.iter().map(|p| g.constant(p.clone())).collect();
        Ok(f(&g, &vars)?.item())
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates_checked: coords.len(),
    };
    for (pi, c) in coords {
        let orig = work[pi].data()[c];
        work[pi].data_mut()[c] = orig + h;
        let up = eval(&work)?;
        work[pi].data_mut()[c] = orig - h;
        let down = eval(&work)?;
        work[pi].data_mut()[c] = orig;

        let numeric = (up - down) / (2.0 * h);
        let exact = analytic[pi].data()[c];
        let denom = exact.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
        let rel = (exact - numeric).abs() / denom;
        if rel > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = rel;
            report.worst = Some((pi, c));
            report.analytic_at_worst = exact;
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}
