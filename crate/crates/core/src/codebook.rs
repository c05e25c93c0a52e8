//! Diagonal-covariance Gaussian mixtures fit with EM, the generative
//! vocabulary behind every Fisher vector in the pipeline.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone)]
pub struct GmmModel {
    /// Mixing weights, a strictly positive simplex.
    pub weights: Array1<f64>,
    /// G x d component means.
    pub means: Array2<f64>,
    /// G x d diagonal variances, floored during fitting.
    pub variances: Array2<f64>,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Precompute the log-space tables used by posteriors and FV encoding.
    pub fn scorer(&self) -> GmmScorer {
        let g = self.components();
        let d = self.dim();
        let mut log_w = Vec::with_capacity(g);
        let mut log_const = Vec::with_capacity(g);
        let mut inv_sigma = Array2::<f64>::zeros((g, d));
        for k in 0..g {
            log_w.push(self.weights[k].ln());
            let mut c = 0.0;
            for j in 0..d {
                let var = self.variances[[k, j]];
                c += (2.0 * std::f64::consts::PI * var).ln();
                inv_sigma[[k, j]] = 1.0 / var.sqrt();
            }
            log_const.push(-0.5 * c);
        }
        GmmScorer {
            gmm: self.clone(),
            log_w,
            log_const,
            inv_sigma,
        }
    }
}

/// GMM with precomputed constants for fast log-space evaluation.
#[derive(Debug, Clone)]
pub struct GmmScorer {
    pub gmm: GmmModel,
    log_w: Vec<f64>,
    log_const: Vec<f64>,
    /// 1 / sigma, per component and dimension.
    pub inv_sigma: Array2<f64>,
}

impl GmmScorer {
    pub fn components(&self) -> usize {
        self.gmm.components()
    }

    pub fn dim(&self) -> usize {
        self.gmm.dim()
    }

    /// Per-component posteriors and the sample log-likelihood, computed in
    /// log space. `gamma` must have length G.
    pub fn posteriors_into(&self, x: &[f64], gamma: &mut [f64]) -> f64 {
        let g = self.components();
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        debug_assert_eq!(gamma.len(), g);
        let mut max_lp = f64::NEG_INFINITY;
        for k in 0..g {
            let mu = self.gmm.means.row(k);
            let is = self.inv_sigma.row(k);
            let mut q = 0.0;
            for j in 0..d {
                let z = (x[j] - mu[j]) * is[j];
                q += z * z;
            }
            let lp = self.log_w[k] + self.log_const[k] - 0.5 * q;
            gamma[k] = lp;
            if lp > max_lp {
                max_lp = lp;
            }
        }
        let mut sum = 0.0;
        for v in gamma.iter_mut() {
            *v = (*v - max_lp).exp();
            sum += *v;
        }
        for v in gamma.iter_mut() {
            *v /= sum;
        }
        max_lp + sum.ln()
    }
}

/// Soft assignment of one sample to the mixture components.
pub fn posteriors(model: &GmmModel, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    if x.len() != model.dim() {
        return Err(Error::Dimension {
            what: "posteriors",
            expected: model.dim(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("posteriors: non-finite input".into()));
    }
    let scorer = model.scorer();
    let mut gamma = vec![0.0; model.components()];
    scorer.posteriors_into(x.as_standard_layout().as_slice().unwrap(), &mut gamma);
    Ok(Array1::from(gamma))
}

/// EM fitting options; the defaults are used by [`fit_gmm`].
#[derive(Debug, Clone)]
pub struct GmmOptions {
    pub iters: usize,
    pub restarts: usize,
    /// Early stop when the relative log-likelihood change drops below this.
    pub tol: f64,
    /// Variance floor as a fraction of the per-dimension data variance.
    pub floor_frac: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            iters: 100,
            restarts: 3,
            tol: 1e-6,
            floor_frac: 1e-6,
        }
    }
}

/// Fit with default options. Deterministic given `seed`.
pub fn fit_gmm(data: ArrayView2<f64>, g: usize, seed: u64, iters: usize) -> Result<GmmModel> {
    let opts = GmmOptions {
        iters,
        ..GmmOptions::default()
    };
    Ok(fit_gmm_traced(data, g, seed, &opts)?.0)
}

/// Fit and return the per-iteration log-likelihood trace of the winning
/// restart (mean log-likelihood per sample).
pub fn fit_gmm_traced(
    data: ArrayView2<f64>,
    g: usize,
    seed: u64,
    opts: &GmmOptions,
) -> Result<(GmmModel, Vec<f64>)> {
    let (n, d) = data.dim();
    if g == 0 {
        return Err(Error::InvalidInput("gmm needs at least one component".into()));
    }
    if n < 10 * g {
        return Err(Error::InvalidInput(format!(
            "gmm with {g} components needs at least {} samples, got {n}",
            10 * g
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("gmm: non-finite sample".into()));
    }

    // per-dimension variance floor
    let mut mean = Array1::<f64>::zeros(d);
    for row in data.rows() {
        mean = mean + row;
    }
    mean /= n as f64;
    let mut var = Array1::<f64>::zeros(d);
    for row in data.rows() {
        for j in 0..d {
            let c = row[j] - mean[j];
            var[j] += c * c;
        }
    }
    var /= n as f64;
    let floor = var.mapv(|v| (v * opts.floor_frac).max(1e-12));
    if var.iter().all(|&v| v <= 1e-30) {
        return Err(Error::InvalidInput("gmm: degenerate (zero-variance) data".into()));
    }

    let mut best: Option<(GmmModel, Vec<f64>)> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(restart as u64));
        let (model, trace) = em_run(data, g, &var, &floor, opts, &mut rng)?;
        let ll = *trace.last().unwrap();
        let better = match &best {
            None => true,
            Some((_, t)) => ll > *t.last().unwrap(),
        };
        if better {
            best = Some((model, trace));
        }
    }
    Ok(best.unwrap())
}

fn kmeanspp_centers(data: ArrayView2<f64>, g: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = data.nrows();
    let mut chosen = Vec::with_capacity(g);
    chosen.push(rng.random_range(0..n));
    let mut min_d2 = vec![f64::INFINITY; n];
    while chosen.len() < g {
        let last = data.row(*chosen.last().unwrap());
        let mut total = 0.0;
        for i in 0..n {
            let mut d2 = 0.0;
            for (a, b) in data.row(i).iter().zip(last.iter()) {
                let c = a - b;
                d2 += c * c;
            }
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            total += min_d2[i];
        }
        let idx = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d2) in min_d2.iter().enumerate() {
                acc += d2;
                if acc >= target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(idx);
    }
    chosen
}

fn em_run(
    data: ArrayView2<f64>,
    g: usize,
    data_var: &Array1<f64>,
    floor: &Array1<f64>,
    opts: &GmmOptions,
    rng: &mut impl Rng,
) -> Result<(GmmModel, Vec<f64>)> {
    let (n, d) = data.dim();
    let centers = kmeanspp_centers(data, g, rng);
    let mut means = Array2::<f64>::zeros((g, d));
    for (k, &idx) in centers.iter().enumerate() {
        means.row_mut(k).assign(&data.row(idx));
    }
    let mut variances = Array2::<f64>::zeros((g, d));
    for k in 0..g {
        for j in 0..d {
            variances[[k, j]] = data_var[j].max(floor[j]);
        }
    }
    let mut model = GmmModel {
        weights: Array1::from_elem(g, 1.0 / g as f64),
        means,
        variances,
    };

    let mut trace = Vec::new();
    let mut gamma = vec![0.0f64; g];
    for _iter in 0..opts.iters.max(1) {
        let scorer = model.scorer();
        let mut nk = vec![0.0f64; g];
        let mut sum_x = Array2::<f64>::zeros((g, d));
        let mut sum_x2 = Array2::<f64>::zeros((g, d));
        let mut ll = 0.0;
        for row in data.rows() {
            let x = row.as_slice().unwrap();
            ll += scorer.posteriors_into(x, &mut gamma);
            for k in 0..g {
                let gk = gamma[k];
                if gk == 0.0 {
                    continue;
                }
                nk[k] += gk;
                let mut sx = sum_x.row_mut(k);
                let mut sx2 = sum_x2.row_mut(k);
                for j in 0..d {
                    sx[j] += gk * x[j];
                    sx2[j] += gk * x[j] * x[j];
                }
            }
        }
        ll /= n as f64;
        trace.push(ll);

        // M-step
        let mut wsum = 0.0;
        for k in 0..g {
            let w = (nk[k] / n as f64).max(1e-10);
            model.weights[k] = w;
            wsum += w;
            if nk[k] > 0.0 {
                for j in 0..d {
                    let mu = sum_x[[k, j]] / nk[k];
                    model.means[[k, j]] = mu;
                    let v = sum_x2[[k, j]] / nk[k] - mu * mu;
                    model.variances[[k, j]] = v.max(floor[j]);
                }
            }
        }
        model.weights.mapv_inplace(|w| w / wsum);

        if trace.len() >= 2 {
            let prev = trace[trace.len() - 2];
            let cur = trace[trace.len() - 1];
            if (cur - prev).abs() / cur.abs().max(1.0) < opts.tol {
                break;
            }
        }
    }
    // final log-likelihood under the last M-step
    let scorer = model.scorer();
    let mut ll = 0.0;
    for row in data.rows() {
        ll += scorer.posteriors_into(row.as_slice().unwrap(), &mut gamma);
    }
    trace.push(ll / n as f64);
    Ok((model, trace))
}
