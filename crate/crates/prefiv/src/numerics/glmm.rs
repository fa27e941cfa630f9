//! Logistic mixed models by Laplace approximation.
//!
//! The marginal likelihood integrates cluster-level random effects u_j ~
//! N(0, Σ) out of a Bernoulli-logit likelihood. Random effects are handled in
//! whitened coordinates u_j = L v_j with Σ = LLᵀ on a log-Cholesky scale, so
//! each cluster's integral is over v_j ~ N(0, I) and its second-order
//! expansion around the posterior mode v̂_j needs no Σ⁻¹:
//!
//!   log L_j ≈ ℓ_j(Xβ + Z_jL v̂_j) − ½‖v̂_j‖² − ½ log det G_j,
//!   G_j = LᵀZ_jᵀW_jZ_jL + I,  W_j = diag(μ(1−μ)).
//!
//! G_j ⪰ I for every Σ including singular ones, so the objective and its
//! gradient stay finite and mutually consistent when a variance component
//! collapses or the intercept/slope correlation walks to ±1; the Σ⁻¹ form
//! loses all precision exactly there and stalls the outer optimizer.
//!
//! The objective is maximized jointly over fixed coefficients and the
//! variance parameters. The gradient is analytic and includes the implicit
//! dependence of v̂_j and of the log-det term on every parameter; this is what
//! the finite-difference oracle in the test suite checks.
//!
//! Supported random structures: intercept (q = 1) and intercept + slope on a
//! supplied column (q = 2). Cluster sizes may differ; clusters are indexed by
//! arbitrary usize labels.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::logistic::{fit_logistic, LogisticOptions};
use super::{expit, log1pexp};
use crate::error::Error;

/// Random-effect structure. The slope variant carries the per-row covariate
/// (the time index, in this crate's usage) the random slope multiplies.
#[derive(Debug, Clone, Copy)]
pub enum RandomEffects<'a> {
    Intercept,
    InterceptAndSlope(&'a DVector<f64>),
}

#[derive(Debug, Clone)]
pub struct GlmmOptions {
    pub max_iter: usize,
    /// Outer convergence: ‖gradient‖∞ ≤ grad_tol_scale·√N.
    pub grad_tol_scale: f64,
    /// Posterior-mode Newton: ‖penalized score‖∞ ≤ inner_tol.
    pub inner_tol: f64,
    /// A diagonal of Σ below this flags the boundary (degenerate) fit.
    pub boundary_var: f64,
}

impl Default for GlmmOptions {
    fn default() -> Self {
        GlmmOptions {
            max_iter: 300,
            grad_tol_scale: 1e-4,
            inner_tol: 1e-10,
            boundary_var: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlmmFit {
    pub fixed_coef: DVector<f64>,
    /// Σ at the optimum: 1×1 (intercept) or 2×2 (intercept + slope).
    pub var_components: DMatrix<f64>,
    /// Log-Cholesky parameters behind `var_components`, as consumed by
    /// [`GlmmModel::laplace_loglik`].
    pub theta: DVector<f64>,
    /// Posterior modes per cluster, in dense cluster order.
    pub ranef: Vec<DVector<f64>>,
    /// Original cluster label for each dense index.
    pub cluster_labels: Vec<usize>,
    pub laplace_loglik: f64,
    pub converged: bool,
    /// A variance component collapsed; the fit degenerates to (close to) an
    /// ordinary logistic regression.
    pub boundary: bool,
    pub n_iter: usize,
}

/// Lower Cholesky floor on the log scale: σ² ≥ e^(2·THETA_MIN) ≈ 1e-10.
const THETA_MIN: f64 = -11.512925464970229;

type M2 = [[f64; 2]; 2];
type V2 = [f64; 2];

/// A prepared mixed-model problem. Exposes the Laplace objective and its
/// analytic gradient for testing; `fit` optimizes them.
pub struct GlmmModel {
    x: DMatrix<f64>,
    y: DVector<f64>,
    slope: Option<DVector<f64>>,
    clusters: Vec<Vec<usize>>,
    labels: Vec<usize>,
    p: usize,
    q: usize,
}

struct Unpacked {
    l00: f64,
    l11: f64,
    c: f64,
}

impl GlmmModel {
    pub fn new(
        design_fixed: &DMatrix<f64>,
        cluster_ids: &[usize],
        random: RandomEffects<'_>,
        y: &DVector<f64>,
    ) -> Result<Self, Error> {
        let (n, p) = design_fixed.shape();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                context: "GLMM response length vs design rows",
                expected: n,
                got: y.len(),
            });
        }
        if cluster_ids.len() != n {
            return Err(Error::DimensionMismatch {
                context: "GLMM cluster ids vs design rows",
                expected: n,
                got: cluster_ids.len(),
            });
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput("GLMM response must be coded 0/1".into()));
        }
        let (q, slope) = match random {
            RandomEffects::Intercept => (1, None),
            RandomEffects::InterceptAndSlope(t) => {
                if t.len() != n {
                    return Err(Error::DimensionMismatch {
                        context: "GLMM slope column vs design rows",
                        expected: n,
                        got: t.len(),
                    });
                }
                (2, Some(t.clone()))
            }
        };
        let mut dense: HashMap<usize, usize> = HashMap::new();
        let mut labels = Vec::new();
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for (i, &id) in cluster_ids.iter().enumerate() {
            let j = *dense.entry(id).or_insert_with(|| {
                labels.push(id);
                clusters.push(Vec::new());
                labels.len() - 1
            });
            clusters[j].push(i);
        }
        if clusters.len() < 2 {
            return Err(Error::TooFewClusters(clusters.len()));
        }
        Ok(GlmmModel {
            x: design_fixed.clone(),
            y: y.clone(),
            slope,
            clusters,
            labels,
            p,
            q,
        })
    }

    pub fn n_params(&self) -> (usize, usize) {
        (self.p, if self.q == 1 { 1 } else { 3 })
    }

    fn z1(&self, i: usize) -> f64 {
        match &self.slope {
            Some(t) => t[i],
            None => 0.0,
        }
    }

    fn unpack(&self, theta: &DVector<f64>) -> Result<Unpacked, Error> {
        let nt = if self.q == 1 { 1 } else { 3 };
        if theta.len() != nt {
            return Err(Error::DimensionMismatch {
                context: "GLMM variance parameter length",
                expected: nt,
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite variance parameters".into()));
        }
        if self.q == 1 {
            Ok(Unpacked {
                l00: theta[0].exp(),
                l11: 0.0,
                c: 0.0,
            })
        } else {
            // L = [[l00, 0], [c, l11]]
            Ok(Unpacked {
                l00: theta[0].exp(),
                l11: theta[1].exp(),
                c: theta[2],
            })
        }
    }

    /// dL/dθ_t on the log-Cholesky scale.
    fn chol_derivs(&self, up: &Unpacked) -> Vec<M2> {
        if self.q == 1 {
            vec![[[up.l00, 0.0], [0.0, 0.0]]]
        } else {
            vec![
                [[up.l00, 0.0], [0.0, 0.0]],
                [[0.0, 0.0], [0.0, up.l11]],
                [[0.0, 0.0], [1.0, 0.0]],
            ]
        }
    }

    /// Row i of M = ZL, the whitened random-effect design.
    fn m_row(&self, i: usize, up: &Unpacked) -> V2 {
        let z1 = self.z1(i);
        [up.l00 + z1 * up.c, z1 * up.l11]
    }

    /// Posterior mode of one cluster's whitened random effect v (u = Lv) by
    /// damped Newton; the penalized log-likelihood is strictly concave with
    /// Hessian G = MᵀWM + I ⪰ I, so the solve is well-conditioned for every
    /// Σ. Returns the penalized log-likelihood and G at the mode.
    fn cluster_mode(
        &self,
        rows: &[usize],
        xb: &DVector<f64>,
        up: &Unpacked,
        v: &mut V2,
        inner_tol: f64,
    ) -> (f64, M2) {
        let q = self.q;
        let pl = |v: &V2| -> f64 {
            let mut s = 0.0;
            for &i in rows {
                let m = self.m_row(i, up);
                let eta = xb[i] + m[0] * v[0] + m[1] * v[1];
                s += self.y[i] * eta - log1pexp(eta);
            }
            s - 0.5 * (v[0] * v[0] + v[1] * v[1])
        };
        let mut cur = pl(v);
        let mut gmat = [[1.0, 0.0], [0.0, 1.0]];
        for _ in 0..200 {
            let mut g = [0.0_f64; 2];
            gmat = [[1.0, 0.0], [0.0, 1.0]];
            for &i in rows {
                let m = self.m_row(i, up);
                let eta = xb[i] + m[0] * v[0] + m[1] * v[1];
                let mu = expit(eta);
                let w = mu * (1.0 - mu);
                let r = self.y[i] - mu;
                g[0] += m[0] * r;
                gmat[0][0] += w * m[0] * m[0];
                if q == 2 {
                    g[1] += m[1] * r;
                    gmat[1][0] += w * m[1] * m[0];
                    gmat[1][1] += w * m[1] * m[1];
                }
            }
            gmat[0][1] = gmat[1][0];
            for k in 0..q {
                g[k] -= v[k];
            }
            let ginf = g[0].abs().max(if q == 2 { g[1].abs() } else { 0.0 });
            if ginf <= inner_tol {
                break;
            }
            let delta = solve_sym(q, &gmat, &g);
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = [v[0] + step * delta[0], v[1] + step * delta[1]];
                let plt = pl(&trial);
                if plt.is_finite() && plt >= cur - 1e-12 * (1.0 + cur.abs()) {
                    let improved = plt > cur;
                    *v = trial;
                    cur = plt;
                    accepted = improved;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                // flat to rounding: recompute G at the final point and stop
                gmat = [[1.0, 0.0], [0.0, 1.0]];
                for &i in rows {
                    let m = self.m_row(i, up);
                    let eta = xb[i] + m[0] * v[0] + m[1] * v[1];
                    let mu = expit(eta);
                    let w = mu * (1.0 - mu);
                    gmat[0][0] += w * m[0] * m[0];
                    if q == 2 {
                        gmat[1][0] += w * m[1] * m[0];
                        gmat[1][1] += w * m[1] * m[1];
                    }
                }
                gmat[0][1] = gmat[1][0];
                break;
            }
        }
        (cur, gmat)
    }

    fn objective(
        &self,
        beta: &DVector<f64>,
        theta: &DVector<f64>,
        warm: &mut [V2],
        inner_tol: f64,
    ) -> Result<f64, Error> {
        let up = self.unpack(theta)?;
        let xb = &self.x * beta;
        let mut f = 0.0;
        for (j, rows) in self.clusters.iter().enumerate() {
            let (pl, gmat) = self.cluster_mode(rows, &xb, &up, &mut warm[j], inner_tol);
            let logdet_g = logdet_sym(self.q, &gmat)
                .ok_or_else(|| Error::Internal("cluster Hessian not positive definite".into()))?;
            f += pl - 0.5 * logdet_g;
        }
        Ok(f)
    }

    fn gradient(
        &self,
        beta: &DVector<f64>,
        theta: &DVector<f64>,
        warm: &mut [V2],
        inner_tol: f64,
    ) -> Result<DVector<f64>, Error> {
        let q = self.q;
        let p = self.p;
        let nt = if q == 1 { 1 } else { 3 };
        let up = self.unpack(theta)?;
        let xb = &self.x * beta;

        // Ȧ_t = dL/dθ_t; a row of dM/dθ_t is z_iᵀȦ_t
        let dls = self.chol_derivs(&up);
        let dm_row = |t: usize, z1: f64| -> V2 {
            let a = &dls[t];
            [a[0][0] + z1 * a[1][0], a[0][1] + z1 * a[1][1]]
        };

        let mut grad = DVector::<f64>::zeros(p + nt);
        let mut gb = vec![0.0_f64; p];
        let mut mwx = vec![[0.0_f64; 2]; p];
        let mut dvb = vec![[0.0_f64; 2]; p];
        let mut dvt = [[0.0_f64; 2]; 3];
        let mut accb = vec![0.0_f64; p];

        for (j, rows) in self.clusters.iter().enumerate() {
            let (_pl, gmat) = self.cluster_mode(rows, &xb, &up, &mut warm[j], inner_tol);
            let ginv = inv_sym(q, &gmat)
                .ok_or_else(|| Error::Internal("cluster Hessian not positive definite".into()))?;
            let v = warm[j];

            gb.iter_mut().for_each(|x| *x = 0.0);
            mwx.iter_mut().for_each(|x| *x = [0.0; 2]);
            let mut u2 = [[0.0_f64; 2]; 3];
            let mut u3 = [[0.0_f64; 2]; 3];
            let mut kmat = [[0.0_f64; 2]; 2]; // K = ZᵀWM

            // cluster-level contractions: score, MᵀWx_a, ZᵀWM, and the
            // pieces of the implicit mode shifts dv̂/dθ_t
            for &i in rows {
                let z1 = self.z1(i);
                let m = self.m_row(i, &up);
                let eta = xb[i] + m[0] * v[0] + m[1] * v[1];
                let mu = expit(eta);
                let w = mu * (1.0 - mu);
                let r = self.y[i] - mu;
                for a in 0..p {
                    let xa = self.x[(i, a)];
                    gb[a] += xa * r;
                    mwx[a][0] += w * xa * m[0];
                    if q == 2 {
                        mwx[a][1] += w * xa * m[1];
                    }
                }
                kmat[0][0] += w * m[0];
                kmat[0][1] += w * m[1];
                if q == 2 {
                    kmat[1][0] += w * z1 * m[0];
                    kmat[1][1] += w * z1 * m[1];
                }
                for t in 0..nt {
                    let dm = dm_row(t, z1);
                    let e = dm[0] * v[0] + dm[1] * v[1];
                    u2[t][0] += r * dm[0];
                    u2[t][1] += r * dm[1];
                    u3[t][0] += w * e * m[0];
                    u3[t][1] += w * e * m[1];
                }
            }

            // dv̂/dβ_a = −G⁻¹MᵀWx_a, dv̂/dθ_t = G⁻¹(Ȧ_tᵀZᵀr − MᵀW(dM v̂))
            for a in 0..p {
                let s = mat_vec(q, &ginv, &mwx[a]);
                dvb[a] = [-s[0], -s[1]];
            }
            for t in 0..nt {
                let rhs = [u2[t][0] - u3[t][0], u2[t][1] - u3[t][1]];
                dvt[t] = mat_vec(q, &ginv, &rhs);
            }

            // −½ d logdet G: the dW part goes through the total dη/dρ per row
            accb.iter_mut().for_each(|x| *x = 0.0);
            let mut acct = [0.0_f64; 3];
            for &i in rows {
                let z1 = self.z1(i);
                let m = self.m_row(i, &up);
                let eta = xb[i] + m[0] * v[0] + m[1] * v[1];
                let mu = expit(eta);
                let w3 = mu * (1.0 - mu) * (1.0 - 2.0 * mu);
                let s = quad_form(q, &ginv, &m);
                for a in 0..p {
                    let h = self.x[(i, a)] + dot(q, &m, &dvb[a]);
                    accb[a] += w3 * s * h;
                }
                for t in 0..nt {
                    let dm = dm_row(t, z1);
                    let e = dm[0] * v[0] + dm[1] * v[1];
                    let h = e + dot(q, &m, &dvt[t]);
                    acct[t] += w3 * s * h;
                }
            }

            for a in 0..p {
                grad[a] += gb[a] - 0.5 * accb[a];
            }
            for t in 0..nt {
                // rᵀ(dM v̂) = u2_t·v̂, and the dMᵀWM + MᵀWdM part of dG
                let atk = mat_tmul(q, &dls[t], &kmat);
                grad[p + t] += dot(q, &u2[t], &v) - trace_prod(q, &ginv, &atk) - 0.5 * acct[t];
            }
        }
        Ok(grad)
    }

    /// Laplace log-likelihood at arbitrary parameters (posterior modes solved
    /// internally from cold starts; deterministic).
    pub fn laplace_loglik(&self, fixed: &DVector<f64>, theta: &DVector<f64>) -> Result<f64, Error> {
        if fixed.len() != self.p {
            return Err(Error::DimensionMismatch {
                context: "GLMM fixed coefficient length",
                expected: self.p,
                got: fixed.len(),
            });
        }
        let mut warm = vec![[0.0_f64; 2]; self.clusters.len()];
        self.objective(fixed, theta, &mut warm, 1e-11)
    }

    /// Analytic gradient of [`Self::laplace_loglik`] with respect to
    /// (fixed coefficients, variance parameters), concatenated in that order.
    pub fn laplace_loglik_grad(
        &self,
        fixed: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<DVector<f64>, Error> {
        if fixed.len() != self.p {
            return Err(Error::DimensionMismatch {
                context: "GLMM fixed coefficient length",
                expected: self.p,
                got: fixed.len(),
            });
        }
        let mut warm = vec![[0.0_f64; 2]; self.clusters.len()];
        self.gradient(fixed, theta, &mut warm, 1e-11)
    }

    /// Maximize the Laplace objective by BFGS with backtracking, variance
    /// parameters floored on the log scale.
    pub fn fit(&self, opts: &GlmmOptions) -> Result<GlmmFit, Error> {
        let p = self.p;
        let nt = if self.q == 1 { 1 } else { 3 };
        let dim = p + nt;
        let n = self.x.nrows();
        let grad_tol = opts.grad_tol_scale * (n as f64).sqrt();

        let beta0 = match fit_logistic(&self.x, &self.y, &LogisticOptions::default()) {
            Ok(f) => f.coef,
            Err(Error::LogisticNotConverged { last, .. }) => last.coef,
            Err(e) => return Err(e),
        };
        let mut phi = DVector::<f64>::zeros(dim);
        phi.rows_mut(0, p).copy_from(&beta0);
        phi[p] = 0.5_f64.ln();
        if nt == 3 {
            phi[p + 1] = 0.1_f64.ln();
            phi[p + 2] = 0.0;
        }

        let mut warm = vec![[0.0_f64; 2]; self.clusters.len()];
        let split = |v: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
            (v.rows(0, p).into_owned(), v.rows(p, nt).into_owned())
        };

        let (b, t) = split(&phi);
        let mut f = -self.objective(&b, &t, &mut warm, opts.inner_tol)?;
        let mut g = -self.gradient(&b, &t, &mut warm, opts.inner_tol)?;

        let n_log_diag = if self.q == 1 { 1 } else { 2 };
        let proj_grad_inf = |phi: &DVector<f64>, g: &DVector<f64>| -> f64 {
            let mut m = 0.0_f64;
            for i in 0..dim {
                let at_floor = i >= p && i < p + n_log_diag && phi[i] <= THETA_MIN + 1e-12;
                // descending along −g wants phi[i] smaller when g[i] > 0;
                // blocked at the floor
                if !(at_floor && g[i] > 0.0) {
                    m = m.max(g[i].abs());
                }
            }
            m
        };

        let mut hinv = DMatrix::<f64>::identity(dim, dim);
        let mut converged = false;
        let mut n_iter = 0;
        let mut resets = 0;
        for it in 0..opts.max_iter {
            n_iter = it;
            if proj_grad_inf(&phi, &g) <= grad_tol {
                converged = true;
                break;
            }
            let mut d = -(&hinv * &g);
            if d.dot(&g) >= 0.0 {
                hinv = DMatrix::identity(dim, dim);
                d = -g.clone();
            }
            let mut step = 1.0_f64;
            let mut moved = false;
            for _ in 0..50 {
                let mut trial = &phi + &d * step;
                for i in p..p + n_log_diag {
                    if trial[i] < THETA_MIN {
                        trial[i] = THETA_MIN;
                    }
                }
                let s = &trial - &phi;
                if s.amax() < 1e-14 {
                    break;
                }
                let (tb, tt) = split(&trial);
                let ft = match self.objective(&tb, &tt, &mut warm, opts.inner_tol) {
                    Ok(v) if v.is_finite() => -v,
                    _ => {
                        step *= 0.5;
                        continue;
                    }
                };
                if ft <= f + 1e-4 * g.dot(&s) {
                    let gt = -self.gradient(&tb, &tt, &mut warm, opts.inner_tol)?;
                    let yv = &gt - &g;
                    let sy = s.dot(&yv);
                    if sy > 1e-12 * s.norm() * yv.norm() {
                        // BFGS inverse update
                        let rho = 1.0 / sy;
                        let hy = &hinv * &yv;
                        let yhy = yv.dot(&hy);
                        let coef = (1.0 + rho * yhy) * rho;
                        hinv += &s * s.transpose() * coef
                            - (&hy * s.transpose() + &s * hy.transpose()) * rho;
                    }
                    phi = trial;
                    f = ft;
                    g = gt;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                if resets == 0 {
                    hinv = DMatrix::identity(dim, dim);
                    resets += 1;
                    continue;
                }
                break;
            }
            resets = 0;
        }

        let grad_inf = proj_grad_inf(&phi, &g);
        if !converged && grad_inf > grad_tol {
            return Err(Error::GlmmNotConverged { grad_inf, n_iter });
        }

        // Ridge collapse. In unidentifiable designs the objective is
        // quartically flat in a variance component near zero (the O(σ²) term
        // cancels at the fixed-effect optimum), so the gradient test can stop
        // anywhere on the ridge — empirically up to σ² ≈ 0.05 at the default
        // tolerance. When a component lands in that zone, prefer the boundary
        // representative unless it measurably costs likelihood.
        {
            let (b, t) = split(&phi);
            let mut f_cur = self.objective(&b, &t, &mut warm, opts.inner_tol)?;
            for k in 0..n_log_diag {
                let sigma_kk = if k == 0 {
                    (2.0 * phi[p]).exp()
                } else {
                    phi[p + 2] * phi[p + 2] + (2.0 * phi[p + 1]).exp()
                };
                if sigma_kk >= 0.05 || phi[p + k] <= THETA_MIN + 1e-12 {
                    continue;
                }
                let mut trial = phi.clone();
                trial[p + k] = THETA_MIN;
                if k == 1 {
                    trial[p + 2] = 0.0;
                }
                let (tb, tt) = split(&trial);
                if let Ok(ft) = self.objective(&tb, &tt, &mut warm, opts.inner_tol) {
                    if ft >= f_cur - 1e-6 * (1.0 + f_cur.abs()) {
                        phi = trial;
                        f_cur = ft;
                        continue;
                    }
                }
                // restore warm modes at the kept parameters
                let (b, t) = split(&phi);
                self.objective(&b, &t, &mut warm, opts.inner_tol)?;
            }
        }

        // refresh posterior modes at the final parameters
        let (beta, theta) = split(&phi);
        let ll = self.objective(&beta, &theta, &mut warm, opts.inner_tol)?;
        let up = self.unpack(&theta)?;
        let sigma = if self.q == 1 {
            DMatrix::from_element(1, 1, up.l00 * up.l00)
        } else {
            let s00 = up.l00 * up.l00;
            let s01 = up.l00 * up.c;
            let s11 = up.c * up.c + up.l11 * up.l11;
            DMatrix::from_row_slice(2, 2, &[s00, s01, s01, s11])
        };
        let boundary = (0..self.q).any(|k| sigma[(k, k)] < opts.boundary_var);
        // modes back on the natural scale: û = Lv̂
        let ranef = warm
            .iter()
            .map(|v| {
                let mut u = DVector::zeros(self.q);
                u[0] = up.l00 * v[0];
                if self.q == 2 {
                    u[1] = up.c * v[0] + up.l11 * v[1];
                }
                u
            })
            .collect();

        Ok(GlmmFit {
            fixed_coef: beta,
            var_components: sigma,
            theta,
            ranef,
            cluster_labels: self.labels.clone(),
            laplace_loglik: ll,
            converged: true,
            boundary,
            n_iter,
        })
    }
}

/// Fit a logistic mixed model; see [`GlmmModel`] for the approximation.
pub fn fit_glmm_logistic(
    design_fixed: &DMatrix<f64>,
    cluster_ids: &[usize],
    random: RandomEffects<'_>,
    y: &DVector<f64>,
    opts: &GlmmOptions,
) -> Result<GlmmFit, Error> {
    GlmmModel::new(design_fixed, cluster_ids, random, y)?.fit(opts)
}

// --- tiny symmetric q ≤ 2 kernels ------------------------------------------

fn quad_form(q: usize, m: &M2, u: &V2) -> f64 {
    if q == 1 {
        m[0][0] * u[0] * u[0]
    } else {
        m[0][0] * u[0] * u[0] + 2.0 * m[0][1] * u[0] * u[1] + m[1][1] * u[1] * u[1]
    }
}

fn solve_sym(q: usize, m: &M2, b: &V2) -> V2 {
    if q == 1 {
        [b[0] / m[0][0], 0.0]
    } else {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        [
            (m[1][1] * b[0] - m[0][1] * b[1]) / det,
            (m[0][0] * b[1] - m[1][0] * b[0]) / det,
        ]
    }
}

fn inv_sym(q: usize, m: &M2) -> Option<M2> {
    if q == 1 {
        if m[0][0] <= 0.0 {
            return None;
        }
        Some([[1.0 / m[0][0], 0.0], [0.0, 0.0]])
    } else {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det <= 0.0 || m[0][0] <= 0.0 {
            return None;
        }
        Some([
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ])
    }
}

fn logdet_sym(q: usize, m: &M2) -> Option<f64> {
    if q == 1 {
        if m[0][0] <= 0.0 {
            None
        } else {
            Some(m[0][0].ln())
        }
    } else {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det <= 0.0 || m[0][0] <= 0.0 {
            None
        } else {
            Some(det.ln())
        }
    }
}

/// aᵀ·b.
fn mat_tmul(q: usize, a: &M2, b: &M2) -> M2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..q {
        for j in 0..q {
            for k in 0..q {
                out[i][j] += a[k][i] * b[k][j];
            }
        }
    }
    out
}

fn mat_vec(q: usize, a: &M2, v: &V2) -> V2 {
    if q == 1 {
        [a[0][0] * v[0], 0.0]
    } else {
        [
            a[0][0] * v[0] + a[0][1] * v[1],
            a[1][0] * v[0] + a[1][1] * v[1],
        ]
    }
}

fn dot(q: usize, a: &V2, b: &V2) -> f64 {
    if q == 1 {
        a[0] * b[0]
    } else {
        a[0] * b[0] + a[1] * b[1]
    }
}

/// tr(A·B), no symmetry assumed.
fn trace_prod(q: usize, a: &M2, b: &M2) -> f64 {
    if q == 1 {
        a[0][0] * b[0][0]
    } else {
        a[0][0] * b[0][0] + a[0][1] * b[1][0] + a[1][0] * b[0][1] + a[1][1] * b[1][1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Simulated logistic panel with per-cluster random intercepts (and
    /// optionally slopes); slope column is a 1..=12 time index.
    fn simulate(
        seed: u64,
        n_clusters: usize,
        n_per: usize,
        sd_intercept: f64,
        sd_slope: f64,
    ) -> (DMatrix<f64>, Vec<usize>, DVector<f64>, DVector<f64>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n = n_clusters * n_per;
        let mut x = DMatrix::<f64>::zeros(n, 2);
        let mut y = DVector::<f64>::zeros(n);
        let mut t = DVector::<f64>::zeros(n);
        let mut ids = Vec::with_capacity(n);
        let mut row = 0;
        for j in 0..n_clusters {
            let uj: f64 = rng.random::<f64>() * 2.0 - 1.0;
            let b0 = uj * sd_intercept * 1.732; // uniform with matching sd
            let bt: f64 = (rng.random::<f64>() * 2.0 - 1.0) * sd_slope * 1.732;
            for i in 0..n_per {
                let cov: f64 = rng.random::<f64>() * 2.0 - 1.0;
                let time = ((12 * (i + 1)).div_ceil(n_per)) as f64;
                let eta = -0.3 + 0.8 * cov + b0 + bt * time;
                x[(row, 0)] = 1.0;
                x[(row, 1)] = cov;
                t[row] = time;
                y[row] = if rng.random::<f64>() < expit(eta) { 1.0 } else { 0.0 };
                ids.push(j);
                row += 1;
            }
        }
        (x, ids, y, t)
    }

    #[test]
    fn gradient_matches_finite_differences_away_from_optimum() {
        let (x, ids, y, t) = simulate(11, 12, 25, 0.8, 0.05);
        for (random, nt) in [
            (RandomEffects::Intercept, 1usize),
            (RandomEffects::InterceptAndSlope(&t), 3),
        ] {
            let model = GlmmModel::new(&x, &ids, random, &y).unwrap();
            let beta = DVector::from_row_slice(&[-0.2, 0.6]);
            let theta = match nt {
                1 => DVector::from_row_slice(&[-0.4]),
                _ => DVector::from_row_slice(&[-0.4, -1.8, 0.1]),
            };
            let grad = model.laplace_loglik_grad(&beta, &theta).unwrap();
            let h = 1e-5;
            for k in 0..(2 + nt) {
                let mut bp = beta.clone();
                let mut bm = beta.clone();
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                if k < 2 {
                    bp[k] += h;
                    bm[k] -= h;
                } else {
                    tp[k - 2] += h;
                    tm[k - 2] -= h;
                }
                let fp = model.laplace_loglik(&bp, &tp).unwrap();
                let fm = model.laplace_loglik(&bm, &tm).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let denom = fd.abs().max(1.0);
                assert!(
                    (grad[k] - fd).abs() / denom <= 1e-4,
                    "component {k}: analytic {} vs fd {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn zero_variance_truth_degrades_to_logistic() {
        let (x, ids, y, _) = simulate(7, 20, 30, 0.0, 0.0);
        let fit = fit_glmm_logistic(&x, &ids, RandomEffects::Intercept, &y, &GlmmOptions::default())
            .unwrap();
        assert!(fit.var_components[(0, 0)] <= 0.01, "sigma2 = {}", fit.var_components[(0, 0)]);
        let plain = fit_logistic(&x, &y, &LogisticOptions::default()).unwrap();
        for k in 0..2 {
            assert!(
                (fit.fixed_coef[k] - plain.coef[k]).abs() <= 0.05,
                "coef {k}: {} vs {}",
                fit.fixed_coef[k],
                plain.coef[k]
            );
        }
    }

    #[test]
    fn recovers_intercept_variance_roughly() {
        let (x, ids, y, _) = simulate(23, 60, 60, 1.0, 0.0);
        let fit = fit_glmm_logistic(&x, &ids, RandomEffects::Intercept, &y, &GlmmOptions::default())
            .unwrap();
        let s2 = fit.var_components[(0, 0)];
        assert!(s2 > 0.4 && s2 < 2.2, "sigma2 = {s2}");
        assert!(!fit.boundary);
        // predicted random effects center near zero
        let mean: f64 = fit.ranef.iter().map(|u| u[0]).sum::<f64>() / fit.ranef.len() as f64;
        let sd: f64 = (fit.ranef.iter().map(|u| (u[0] - mean).powi(2)).sum::<f64>()
            / fit.ranef.len() as f64)
            .sqrt();
        assert!(mean.abs() <= 0.05 * sd, "mean {mean} sd {sd}");
    }

    #[test]
    fn extreme_clusters_get_shrunken_intercepts() {
        // two extreme clusters (all 0 / all 1) among moderate ones
        let mut rows: Vec<(f64, usize)> = Vec::new();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for j in 0..10usize {
            for _ in 0..20 {
                let y = match j {
                    0 => 0.0,
                    1 => 1.0,
                    _ => {
                        if rng.random::<f64>() < 0.5 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                rows.push((y, j));
            }
        }
        let n = rows.len();
        let x = DMatrix::<f64>::from_element(n, 1, 1.0);
        let y = DVector::from_iterator(n, rows.iter().map(|r| r.0));
        let ids: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let fit =
            fit_glmm_logistic(&x, &ids, RandomEffects::Intercept, &y, &GlmmOptions::default())
                .unwrap();
        // the all-0 and all-1 clusters have infinite empirical logits; their
        // posterior modes must be finite (shrinkage) and of the right sign
        assert!(fit.ranef[0][0].is_finite() && fit.ranef[0][0] < 0.0);
        assert!(fit.ranef[1][0].is_finite() && fit.ranef[1][0] > 0.0);
    }

    #[test]
    fn one_observation_per_cluster_hits_boundary() {
        let n = 60;
        let x = DMatrix::<f64>::from_element(n, 1, 1.0);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let y = DVector::from_fn(n, |_, _| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 });
        let ids: Vec<usize> = (0..n).collect();
        let fit =
            fit_glmm_logistic(&x, &ids, RandomEffects::Intercept, &y, &GlmmOptions::default())
                .unwrap();
        assert!(fit.boundary, "sigma2 = {}", fit.var_components[(0, 0)]);
    }

    #[test]
    fn rejects_single_cluster() {
        let x = DMatrix::<f64>::from_element(4, 1, 1.0);
        let y = DVector::from_row_slice(&[0.0, 1.0, 0.0, 1.0]);
        let ids = vec![3usize; 4];
        assert!(matches!(
            GlmmModel::new(&x, &ids, RandomEffects::Intercept, &y),
            Err(Error::TooFewClusters(1))
        ));
    }

    #[test]
    fn slope_model_recovers_signal() {
        let (x, ids, y, t) = simulate(41, 50, 80, 1.0, 0.2);
        let fit = fit_glmm_logistic(
            &x,
            &ids,
            RandomEffects::InterceptAndSlope(&t),
            &y,
            &GlmmOptions::default(),
        )
        .unwrap();
        assert!(fit.converged);
        let s_int = fit.var_components[(0, 0)];
        let s_slope = fit.var_components[(1, 1)];
        assert!(s_int > 0.3 && s_int < 2.5, "intercept var {s_int}");
        assert!(s_slope > 0.005 && s_slope < 0.2, "slope var {s_slope}");
    }
}
