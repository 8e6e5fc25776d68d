//! Random-intercept linear mixed model `y = β0 + β1·age + β2·sex + r_i + ε`
//! fitted by maximum likelihood with the variance ratio profiled out.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::table::ObservationTable;
use crate::error::{Error, Result};

const P: usize = 3;
pub const THETA_MAX: f64 = 1e3;
const THETA_MIN_LOG: f64 = -12.0; // ln θ lower end of the log-scale search
const GRID_POINTS: usize = 100;
const LOG_TOL: f64 = 1e-8;

/// Fitted fixed effects and variance components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    /// (β0 intercept, β1 age, β2 sex)
    pub beta: [f64; P],
    pub beta_se: [f64; P],
    pub sigma_r2: f64,
    pub sigma_e2: f64,
    /// σ_r² / σ_ε²
    pub theta: f64,
    #[serde(with = "crate::json_float")]
    pub loglik: f64,
    /// True when θ could not be identified and was held at 0.
    pub theta_fixed: bool,
    pub criterion: String,
}

impl LmmFit {
    pub fn predict(&self, age: f64, sex: u8) -> f64 {
        self.beta[0] + self.beta[1] * age + self.beta[2] * f64::from(sex)
    }
}

/// Per-subject sufficient statistics of the design.
struct Group {
    n: f64,
    xtx: [[f64; P]; P],
    xty: [f64; P],
    yty: f64,
    sx: [f64; P],
    sy: f64,
}

struct Profile {
    groups: Vec<Group>,
    n_obs: f64,
}

struct Eval {
    beta: [f64; P],
    xtwx: [[f64; P]; P],
    rwr: f64,
    logdet: f64,
}

fn row(age: f64, sex: u8) -> [f64; P] {
    [1.0, age, f64::from(sex)]
}

impl Profile {
    fn new(table: &ObservationTable) -> Self {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<Group> = Vec::new();
        for r in table.rows() {
            let g = *index.entry(r.subject_id.as_str()).or_insert_with(|| {
                groups.push(Group { n: 0.0, xtx: [[0.0; P]; P], xty: [0.0; P], yty: 0.0, sx: [0.0; P], sy: 0.0 });
                groups.len() - 1
            });
            let g = &mut groups[g];
            let x = row(r.age, r.sex);
            g.n += 1.0;
            for a in 0..P {
                for b in 0..P {
                    g.xtx[a][b] += x[a] * x[b];
                }
                g.xty[a] += x[a] * r.y;
                g.sx[a] += x[a];
            }
            g.yty += r.y * r.y;
            g.sy += r.y;
        }
        Self { groups, n_obs: table.len() as f64 }
    }

    /// GLS at a fixed θ using `W_i = I − c_i 11ᵀ`, `c_i = θ / (1 + n_i θ)`.
    fn eval(&self, theta: f64) -> Result<Eval> {
        let mut xtwx = [[0.0; P]; P];
        let mut xtwy = [0.0; P];
        let mut ytwy = 0.0;
        let mut logdet = 0.0;
        for g in &self.groups {
            let c = theta / (1.0 + g.n * theta);
            for a in 0..P {
                for b in 0..P {
                    xtwx[a][b] += g.xtx[a][b] - c * g.sx[a] * g.sx[b];
                }
                xtwy[a] += g.xty[a] - c * g.sx[a] * g.sy;
            }
            ytwy += g.yty - c * g.sy * g.sy;
            logdet += (g.n * theta).ln_1p();
        }
        let l = cholesky(&xtwx).ok_or_else(|| Error::Fit("design matrix is rank deficient".into()))?;
        let beta = chol_solve(&l, &xtwy);
        // rᵀWr = yᵀWy − βᵀXᵀWy at the GLS solution
        let rwr = (ytwy - beta.iter().zip(&xtwy).map(|(b, v)| b * v).sum::<f64>()).max(0.0);
        Ok(Eval { beta, xtwx, rwr, logdet })
    }

    fn loglik(&self, e: &Eval) -> f64 {
        let n = self.n_obs;
        let s2 = e.rwr / n;
        -0.5 * n * ((2.0 * std::f64::consts::PI).ln() + s2.ln() + 1.0) - 0.5 * e.logdet
    }

    fn loglik_at(&self, theta: f64) -> f64 {
        self.eval(theta).map(|e| self.loglik(&e)).unwrap_or(f64::NEG_INFINITY)
    }
}

fn cholesky(a: &[[f64; P]; P]) -> Option<[[f64; P]; P]> {
    let scale = (0..P).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    let mut l = [[0.0; P]; P];
    for i in 0..P {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 1e-12 * a[i][i].abs().max(scale * 1e-6)) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn chol_solve(l: &[[f64; P]; P], b: &[f64; P]) -> [f64; P] {
    let mut z = [0.0; P];
    for i in 0..P {
        z[i] = (b[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = [0.0; P];
    for i in (0..P).rev() {
        x[i] = (z[i] - (i + 1..P).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

fn inverse_diag(a: &[[f64; P]; P]) -> Option<[f64; P]> {
    let l = cholesky(a)?;
    let mut d = [0.0; P];
    for (j, dj) in d.iter_mut().enumerate() {
        let mut e = [0.0; P];
        e[j] = 1.0;
        *dj = chol_solve(&l, &e)[j];
    }
    Some(d)
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Maximum-likelihood fit over θ ∈ [0, 10³]: a log-spaced grid scan (plus
/// θ = 0) brackets the optimum, golden-section search refines it in ln θ.
pub fn fit_lmm(table: &ObservationTable) -> Result<LmmFit> {
    let profile = Profile::new(table);
    if profile.groups.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 subjects, got {}", profile.groups.len())));
    }
    let base = profile.eval(0.0)?;
    let scale = profile.groups.iter().map(|g| g.yty).sum::<f64>() + 1.0;
    let exact = base.rwr <= 1e-24 * scale;
    let single_visit = profile.groups.iter().all(|g| g.n == 1.0);
    let theta_fixed = single_visit || exact;

    let theta = if theta_fixed {
        0.0
    } else {
        let lo = THETA_MIN_LOG;
        let hi = THETA_MAX.ln();
        let grid: Vec<f64> = (0..GRID_POINTS).map(|k| lo + (hi - lo) * k as f64 / (GRID_POINTS - 1) as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|&u| profile.loglik_at(u.exp())).collect();
        let (k, _) =
            vals.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let a = grid[k.saturating_sub(1)];
        let b = grid[(k + 1).min(GRID_POINTS - 1)];
        let (u, fu) = golden_max(|u| profile.loglik_at(u.exp()), a, b, LOG_TOL);
        let (mut best_t, mut best_f) = if fu >= vals[k] { (u.exp(), fu) } else { (grid[k].exp(), vals[k]) };
        let f0 = profile.loglik(&base);
        if f0 >= best_f {
            best_t = 0.0;
            best_f = f0;
        }
        let _ = best_f;
        best_t
    };

    let e = profile.eval(theta)?;
    let sigma_e2 = e.rwr / profile.n_obs;
    let inv = inverse_diag(&e.xtwx).ok_or_else(|| Error::Fit("singular information matrix".into()))?;
    let mut beta_se = [0.0; P];
    for j in 0..P {
        beta_se[j] = (sigma_e2 * inv[j]).sqrt();
    }
    let loglik = if exact { f64::INFINITY } else { profile.loglik(&e) };
    Ok(LmmFit {
        beta: e.beta,
        beta_se,
        sigma_r2: theta * sigma_e2,
        sigma_e2,
        theta,
        loglik,
        theta_fixed,
        criterion: "ML".into(),
    })
}

/// Profiled log-likelihood at a given θ (β and σ² at their conditional optima).
pub fn profile_loglik(table: &ObservationTable, theta: f64) -> Result<f64> {
    let p = Profile::new(table);
    let e = p.eval(theta)?;
    Ok(p.loglik(&e))
}

/// `y − β0 − β1·age − β2·sex` per row; the random intercept is not subtracted.
pub fn residualize(table: &ObservationTable, fit: &LmmFit) -> Vec<f64> {
    table.rows().iter().map(|r| r.y - fit.predict(r.age, r.sex)).collect()
}
