//! Unconstrained minimisation: BFGS with a backtracking line search and a
//! Nelder–Mead fallback, plus finite-difference gradients and Hessians.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Gradient supplied by the objective.
    Analytic,
    /// Central differences with step `h·max(1, |x_i|)`.
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    /// Converged when `‖∇f‖∞ ≤ gtol`.
    pub gtol: f64,
    /// Iteration also stops when the accepted step satisfies `‖Δx‖∞ ≤ xtol`.
    pub xtol: f64,
    pub gradient: GradientMode,
    pub gradient_step: f64,
    pub hessian_step: f64,
    pub nelder_mead_iter: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gtol: 1e-6,
            xtol: 1e-8,
            gradient: GradientMode::Analytic,
            gradient_step: 1e-6,
            hessian_step: 1e-4,
            nelder_mead_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub used_fallback: bool,
}

/// Objective with optional analytic gradient.
pub trait Objective {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

pub fn numerical_gradient<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let hi = h * x[i].abs().max(1.0);
        xp[i] = x[i] + hi;
        let fp = f(&xp)?;
        xp[i] = x[i] - hi;
        let fm = f(&xp)?;
        xp[i] = x[i];
        g.push((fp - fm) / (2.0 * hi));
    }
    Ok(g)
}

/// Symmetrised Hessian from central differences of a gradient.
pub fn numerical_hessian<G>(grad: G, x: &[f64], h: f64) -> Result<Vec<Vec<f64>>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut xp = x.to_vec();
    let mut h_mat = vec![vec![0.0; n]; n];
    for j in 0..n {
        let hj = h * x[j].abs().max(1.0);
        xp[j] = x[j] + hj;
        let gp = grad(&xp)?;
        xp[j] = x[j] - hj;
        let gm = grad(&xp)?;
        xp[j] = x[j];
        for i in 0..n {
            h_mat[i][j] = (gp[i] - gm[i]) / (2.0 * hj);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (h_mat[i][j] + h_mat[j][i]);
            h_mat[i][j] = m;
            h_mat[j][i] = m;
        }
    }
    Ok(h_mat)
}

struct Wrapped<'a, O: Objective> {
    obj: &'a O,
    mode: GradientMode,
    step: f64,
}

impl<O: Objective> Wrapped<'_, O> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.obj.value(x)
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self.mode {
            GradientMode::Analytic => self.obj.value_grad(x),
            GradientMode::Numerical => {
                let f = self.obj.value(x)?;
                let g = numerical_gradient(|z| self.obj.value(z), x, self.step)?;
                Ok((f, g))
            }
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `obj` from `x0`.
///
/// On line-search failure the inverse-Hessian approximation is reset once;
/// a second failure hands over to Nelder–Mead, after which BFGS restarts
/// from the simplex optimum.
pub fn minimize<O: Objective>(obj: &O, x0: &[f64], cfg: &OptimizerConfig) -> Result<OptimResult> {
    let w = Wrapped {
        obj,
        mode: cfg.gradient,
        step: cfg.gradient_step,
    };
    let mut x = x0.to_vec();
    let (mut f, mut g) = w.value_grad(&x)?;
    if !f.is_finite() {
        return Err(Error::Numeric("objective is not finite at the starting point".into()));
    }
    let n = x.len();
    let mut hinv = identity(n);
    let mut iterations = 0;
    let mut used_fallback = false;
    let mut fresh = true;
    let mut stalled = false;
    let mut small_steps = 0;

    while iterations < cfg.max_iter {
        if inf_norm(&g) <= cfg.gtol {
            break;
        }
        iterations += 1;
        let mut p: Vec<f64> = (0..n).map(|i| -dot(&hinv[i], &g)).collect();
        let mut slope = dot(&p, &g);
        if slope >= 0.0 || !slope.is_finite() {
            hinv = identity(n);
            p = g.iter().map(|v| -v).collect();
            slope = dot(&p, &g);
            fresh = true;
        }
        let alpha0 = if fresh { (1.0 / inf_norm(&p)).min(1.0) } else { 1.0 };
        match line_search(&w, &x, f, slope, &p, alpha0)? {
            Some((alpha, xn, fnew, gnew)) => {
                let s: Vec<f64> = p.iter().map(|v| alpha * v).collect();
                let yv: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &yv);
                if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
                    if fresh {
                        let scale = sy / dot(&yv, &yv);
                        hinv = identity(n);
                        hinv.iter_mut().enumerate().for_each(|(i, r)| r[i] = scale);
                    }
                    bfgs_update(&mut hinv, &s, &yv, sy);
                    fresh = false;
                }
                x = xn;
                f = fnew;
                g = gnew;
                stalled = false;
                small_steps = if inf_norm(&s) <= cfg.xtol { small_steps + 1 } else { 0 };
                if small_steps >= 3 {
                    break;
                }
            }
            None => {
                if !fresh {
                    hinv = identity(n);
                    fresh = true;
                    continue;
                }
                if used_fallback || stalled {
                    break;
                }
                let nm = nelder_mead(|z| w.value(z), &x, 0.05, cfg.nelder_mead_iter, 1e-14)?;
                used_fallback = true;
                stalled = true;
                if nm.1 < f {
                    x = nm.0;
                    let (fv, gv) = w.value_grad(&x)?;
                    f = fv;
                    g = gv;
                    stalled = false;
                }
                hinv = identity(n);
                fresh = true;
            }
        }
    }
    let grad_norm = inf_norm(&g);
    Ok(OptimResult {
        x,
        f,
        grad_norm,
        iterations,
        converged: grad_norm <= cfg.gtol,
        used_fallback,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut r = vec![0.0; n];
            r[i] = 1.0;
            r
        })
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

type Accepted = (f64, Vec<f64>, f64, Vec<f64>);

/// Backtracking Armijo search. Near the optimum, where `f` differences sink
/// below rounding noise, a step is also accepted if `f` does not rise beyond
/// that noise and the directional derivative shrinks in magnitude.
fn line_search<O: Objective>(
    w: &Wrapped<'_, O>,
    x: &[f64],
    f: f64,
    slope: f64,
    p: &[f64],
    alpha0: f64,
) -> Result<Option<Accepted>> {
    let noise = 1e-13 * f.abs().max(1.0);
    let mut alpha = alpha0;
    for _ in 0..60 {
        let xn: Vec<f64> = x.iter().zip(p).map(|(a, b)| a + alpha * b).collect();
        match w.value_grad(&xn) {
            Ok((fnew, gnew)) if fnew.is_finite() => {
                let dslope = dot(&gnew, p);
                let armijo = fnew <= f + 1e-4 * alpha * slope;
                let approx = fnew <= f + noise && dslope.abs() <= 0.9 * slope.abs();
                if armijo || approx {
                    return Ok(Some((alpha, xn, fnew, gnew)));
                }
            }
            Ok(_) | Err(Error::Numeric(_)) => {}
            Err(e) => return Err(e),
        }
        alpha *= 0.5;
    }
    Ok(None)
}

/// Nelder–Mead simplex search. Returns `(x, f, iterations)`.
pub fn nelder_mead<F>(f: F, x0: &[f64], step: f64, max_iter: usize, ftol: f64) -> Result<(Vec<f64>, f64, usize)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    let eval = |x: &[f64]| -> Result<f64> {
        match f(x) {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) | Err(Error::Numeric(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)?));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step * x0[i].abs().max(1.0);
        let v = eval(&x)?;
        simplex.push((x, v));
    }
    let mut it = 0;
    while it < max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= ftol * (best.abs() + worst.abs()).max(1e-300) {
            break;
        }
        it += 1;
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|s| s.0[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr)?;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe)?;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(-0.5);
                let fc = eval(&xc)?;
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc)?;
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    let xs: Vec<f64> = x_best.iter().zip(&s.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let fs = eval(&xs)?;
                    *s = (xs, fs);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    Ok((x, v, it))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn value(&self, x: &[f64]) -> Result<f64> {
            Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        }

        fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            let g0 = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
            let g1 = 200.0 * (x[1] - x[0] * x[0]);
            Ok((self.value(x)?, vec![g0, g1]))
        }
    }

    #[test]
    fn bfgs_solves_rosenbrock() {
        let r = minimize(&Rosenbrock, &[-1.2, 1.0], &OptimizerConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn numerical_mode_solves_rosenbrock() {
        let cfg = OptimizerConfig {
            gradient: GradientMode::Numerical,
            gtol: 1e-5,
            ..Default::default()
        };
        let r = minimize(&Rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_quadratic() {
        let (x, v, _) = nelder_mead(|x| Ok((x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2)), &[0.0, 0.0], 0.5, 5000, 1e-16).unwrap();
        assert!(v < 1e-10);
        assert!((x[0] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn hessian_is_symmetric() {
        let h = numerical_hessian(|x| Ok(Rosenbrock.value_grad(x)?.1), &[0.5, 0.7], 1e-4).unwrap();
        assert_eq!(h[0][1], h[1][0]);
        assert!((h[1][1] - 200.0).abs() < 1e-6);
    }
}
