//! Exact front-door identification on finite structural causal models.
//!
//! Graph: `U -> X`, `U -> Y`, `X -> A`, `A -> Y`, with `U` latent. The
//! interventional distribution `p(y | do(x))` is computed two ways: from
//! observational tables via `Σ_a p(a|x) Σ_x' p(y|a,x') p(x')`, and by graph
//! surgery on the model itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_DOMAIN: usize = 8;
pub const ROW_TOLERANCE: f64 = 1e-12;
pub const SOUNDNESS_TOLERANCE: f64 = 1e-9;
pub const WITNESS_GAP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteScm {
    pub p_u: Vec<f64>,
    /// `[u][x]`
    pub p_x_given_u: Vec<Vec<f64>>,
    /// `[x][a]`
    pub p_a_given_x: Vec<Vec<f64>>,
    /// `[a][u][y]`
    pub p_y_given_a_u: Vec<Vec<Vec<f64>>>,
}

fn check_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Scm(format!("{what}: probability outside [0, 1]")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::Scm(format!("{what}: row sums to {sum}")));
    }
    Ok(())
}

fn check_domain(n: usize, what: &str) -> Result<()> {
    if n == 0 || n > MAX_DOMAIN {
        return Err(Error::Scm(format!("{what} domain size {n} outside 1..={MAX_DOMAIN}")));
    }
    Ok(())
}

impl DiscreteScm {
    pub fn new(
        p_u: Vec<f64>,
        p_x_given_u: Vec<Vec<f64>>,
        p_a_given_x: Vec<Vec<f64>>,
        p_y_given_a_u: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let scm = Self {
            p_u,
            p_x_given_u,
            p_a_given_x,
            p_y_given_a_u,
        };
        scm.validate()?;
        Ok(scm)
    }

    pub fn sizes(&self) -> (usize, usize, usize, usize) {
        let nx = self.p_a_given_x.len();
        let na = self.p_y_given_a_u.len();
        let ny = self.p_y_given_a_u.first().and_then(|r| r.first()).map_or(0, Vec::len);
        (self.p_u.len(), nx, na, ny)
    }

    pub fn validate(&self) -> Result<()> {
        let (nu, nx, na, ny) = self.sizes();
        check_domain(nu, "U")?;
        check_domain(nx, "X")?;
        check_domain(na, "A")?;
        check_domain(ny, "Y")?;
        check_row(&self.p_u, "p(u)")?;
        if self.p_x_given_u.len() != nu {
            return Err(Error::Scm("p(x|u) needs one row per value of U".into()));
        }
        for (u, row) in self.p_x_given_u.iter().enumerate() {
            if row.len() != nx {
                return Err(Error::Scm(format!("p(x|u={u}) has {} entries, expected {nx}", row.len())));
            }
            check_row(row, &format!("p(x|u={u})"))?;
        }
        for (x, row) in self.p_a_given_x.iter().enumerate() {
            if row.len() != na {
                return Err(Error::Scm(format!("p(a|x={x}) has {} entries, expected {na}", row.len())));
            }
            check_row(row, &format!("p(a|x={x})"))?;
        }
        for (a, per_u) in self.p_y_given_a_u.iter().enumerate() {
            if per_u.len() != nu {
                return Err(Error::Scm(format!("p(y|a={a},u) needs one row per value of U")));
            }
            for (u, row) in per_u.iter().enumerate() {
                if row.len() != ny {
                    return Err(Error::Scm(format!("p(y|a={a},u={u}) has {} entries, expected {ny}", row.len())));
                }
                check_row(row, &format!("p(y|a={a},u={u})"))?;
            }
        }
        Ok(())
    }

    /// Full joint `p(u, x, a, y)` as a flat table indexed `[u][x][a][y]`.
    pub fn joint(&self) -> Vec<f64> {
        let (nu, nx, na, ny) = self.sizes();
        let mut out = Vec::with_capacity(nu * nx * na * ny);
        for u in 0..nu {
            for x in 0..nx {
                for a in 0..na {
                    for y in 0..ny {
                        out.push(self.p_u[u] * self.p_x_given_u[u][x] * self.p_a_given_x[x][a] * self.p_y_given_a_u[a][u][y]);
                    }
                }
            }
        }
        out
    }

    /// Model with every table row drawn from a flat Dirichlet.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, nu: usize, nx: usize, na: usize, ny: usize) -> Result<Self> {
        let p_u = dirichlet_row(rng, nu);
        let p_x_given_u = (0..nu).map(|_| dirichlet_row(rng, nx)).collect();
        let p_a_given_x = (0..nx).map(|_| dirichlet_row(rng, na)).collect();
        let p_y_given_a_u = (0..na).map(|_| (0..nu).map(|_| dirichlet_row(rng, ny)).collect()).collect();
        Self::new(p_u, p_x_given_u, p_a_given_x, p_y_given_a_u)
    }
}

/// Uniform draw from the probability simplex.
fn dirichlet_row<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let sum: f64 = draws.iter().sum();
    let mut row: Vec<f64> = draws.iter().map(|d| d / sum).collect();
    // Push the rounding residue into the largest entry.
    let residue = 1.0 - row.iter().sum::<f64>();
    let (imax, _) = row.iter().enumerate().fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    row[imax] += residue;
    row
}

/// Observational quantities obtained by summing the latent confounder out.
/// `None` marks a conditional whose conditioning event has probability zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservationalTables {
    pub p_x: Vec<f64>,
    /// `[x]`
    pub p_a_given_x: Vec<Option<Vec<f64>>>,
    /// `[a][x]`
    pub p_y_given_a_x: Vec<Vec<Option<Vec<f64>>>>,
}

fn normalize(row: Vec<f64>) -> Option<Vec<f64>> {
    let sum: f64 = row.iter().sum();
    (sum > 0.0).then(|| row.into_iter().map(|v| v / sum).collect())
}

pub fn marginalize(scm: &DiscreteScm) -> Result<ObservationalTables> {
    scm.validate()?;
    let (nu, nx, na, ny) = scm.sizes();
    let mut p_xay = vec![0.0; nx * na * ny];
    for u in 0..nu {
        for x in 0..nx {
            let pux = scm.p_u[u] * scm.p_x_given_u[u][x];
            for a in 0..na {
                let puxa = pux * scm.p_a_given_x[x][a];
                for y in 0..ny {
                    p_xay[(x * na + a) * ny + y] += puxa * scm.p_y_given_a_u[a][u][y];
                }
            }
        }
    }
    let p_xa: Vec<f64> = p_xay.chunks(ny).map(|r| r.iter().sum()).collect();
    let p_x: Vec<f64> = p_xa.chunks(na).map(|r| r.iter().sum()).collect();
    let p_a_given_x = (0..nx).map(|x| normalize(p_xa[x * na..(x + 1) * na].to_vec())).collect();
    let p_y_given_a_x = (0..na)
        .map(|a| {
            (0..nx)
                .map(|x| normalize(p_xay[(x * na + a) * ny..(x * na + a + 1) * ny].to_vec()))
                .collect()
        })
        .collect();
    let total: f64 = p_x.iter().sum();
    Ok(ObservationalTables {
        p_x: p_x.into_iter().map(|v| v / total).collect(),
        p_a_given_x,
        p_y_given_a_x,
    })
}

/// `p(y | do(x)) = Σ_a p(a|x) Σ_x' p(y|a,x') p(x')` from observational tables.
pub fn frontdoor_estimate(obs: &ObservationalTables, x: usize) -> Result<Vec<f64>> {
    let nx = obs.p_x.len();
    if x >= nx {
        return Err(Error::Invalid(format!("x = {x} outside domain 0..{nx}")));
    }
    let p_a = obs.p_a_given_x[x]
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("p(a | x={x}) is undefined: p(x={x}) = 0")))?;
    let ny = obs
        .p_y_given_a_x
        .iter()
        .flatten()
        .flatten()
        .map(Vec::len)
        .next()
        .ok_or_else(|| Error::Invalid("no defined p(y | a, x') row".into()))?;
    let mut out = vec![0.0; ny];
    for (a, &pa) in p_a.iter().enumerate() {
        if pa == 0.0 {
            continue;
        }
        for (xp, &pxp) in obs.p_x.iter().enumerate() {
            if pxp == 0.0 {
                continue;
            }
            let row = obs.p_y_given_a_x[a][xp]
                .as_ref()
                .ok_or(Error::UndefinedConditional { a, x: xp })?;
            for (o, &py) in out.iter_mut().zip(row) {
                *o += pa * py * pxp;
            }
        }
    }
    Ok(out)
}

/// Ground truth by graph surgery: fix `X := x` and enumerate `U` and `A`.
pub fn intervene_truth(scm: &DiscreteScm, x: usize) -> Result<Vec<f64>> {
    let (nu, nx, na, ny) = scm.sizes();
    if x >= nx {
        return Err(Error::Invalid(format!("x = {x} outside domain 0..{nx}")));
    }
    let mut out = vec![0.0; ny];
    for u in 0..nu {
        for a in 0..na {
            let w = scm.p_u[u] * scm.p_a_given_x[x][a];
            for (o, &py) in out.iter_mut().zip(&scm.p_y_given_a_u[a][u]) {
                *o += w * py;
            }
        }
    }
    Ok(out)
}

/// Observational `p(y | x)`, computed directly from the joint.
pub fn observational_conditional(scm: &DiscreteScm, x: usize) -> Option<Vec<f64>> {
    let (nu, nx, na, ny) = scm.sizes();
    let joint = scm.joint();
    let mut row = vec![0.0; ny];
    for u in 0..nu {
        for a in 0..na {
            for (y, r) in row.iter_mut().enumerate() {
                *r += joint[((u * nx + x) * na + a) * ny + y];
            }
        }
    }
    normalize(row)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub trial: usize,
    pub x: usize,
    pub y: usize,
    pub observational: f64,
    pub interventional: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoundnessReport {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub worst_discrepancy: f64,
    pub worst_trial: usize,
    pub max_normalization_error: f64,
    pub witness: Option<Witness>,
    pub passed: bool,
}

impl SoundnessReport {
    pub fn witness_found(&self) -> bool {
        self.witness.as_ref().is_some_and(|w| w.gap >= WITNESS_GAP)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        s.push_str("front-door soundness check\n");
        s.push_str(&format!("trials: {}\nseed: {}\n", self.trials, self.seed));
        s.push_str(&format!(
            "worst |estimate - truth|: {:.3e} (trial {})\n",
            self.worst_discrepancy, self.worst_trial
        ));
        s.push_str(&format!("max |sum_y estimate - 1|: {:.3e}\n", self.max_normalization_error));
        match &self.witness {
            Some(w) => s.push_str(&format!(
                "confounding witness: trial {} x={} y={}: p(y|x)={:.4} p(y|do(x))={:.4} gap={:.4}\n",
                w.trial, w.x, w.y, w.observational, w.interventional, w.gap
            )),
            None => s.push_str("confounding witness: none\n"),
        }
        s.push_str(&format!(
            "result: {} (tolerance {:.0e})\n",
            if self.passed { "PASS" } else { "FAIL" },
            self.tolerance
        ));
        s
    }
}

/// Seeded model for one trial; domain sizes drawn from 2..=4.
pub fn trial_scm(seed: u64, trial: usize) -> Result<DiscreteScm> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 + 1);
    let mut size = || rng.random_range(2..=4usize);
    let (nu, nx, na, ny) = (size(), size(), size(), size());
    DiscreteScm::random(&mut rng, nu, nx, na, ny)
}

/// Compares the front-door estimate with graph surgery over `trials` random models.
pub fn soundness_suite(trials: usize, seed: u64) -> Result<SoundnessReport> {
    if trials == 0 {
        return Err(Error::Invalid("trials must be >= 1".into()));
    }
    let mut worst = 0.0f64;
    let mut worst_trial = 0;
    let mut norm_err = 0.0f64;
    let mut witness: Option<Witness> = None;
    for t in 0..trials {
        let scm = trial_scm(seed, t)?;
        let obs = marginalize(&scm)?;
        let (_, nx, _, _) = scm.sizes();
        for x in 0..nx {
            let est = frontdoor_estimate(&obs, x)?;
            let truth = intervene_truth(&scm, x)?;
            norm_err = norm_err.max((est.iter().sum::<f64>() - 1.0).abs());
            for (e, v) in est.iter().zip(&truth) {
                let d = (e - v).abs();
                if d > worst {
                    worst = d;
                    worst_trial = t;
                }
            }
            if let Some(obs_row) = observational_conditional(&scm, x) {
                for (y, (o, v)) in obs_row.iter().zip(&truth).enumerate() {
                    let gap = (o - v).abs();
                    if witness.as_ref().is_none_or(|w| gap > w.gap) {
                        witness = Some(Witness {
                            trial: t,
                            x,
                            y,
                            observational: *o,
                            interventional: *v,
                            gap,
                        });
                    }
                }
            }
        }
    }
    Ok(SoundnessReport {
        trials,
        seed,
        tolerance: SOUNDNESS_TOLERANCE,
        worst_discrepancy: worst,
        worst_trial,
        max_normalization_error: norm_err,
        witness,
        passed: worst <= SOUNDNESS_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_scm(p_u: Vec<f64>, x_given_u: [[f64; 2]; 2], a_given_x: [[f64; 2]; 2], y_given_au: [[[f64; 2]; 2]; 2]) -> DiscreteScm {
        let nu = p_u.len();
        DiscreteScm::new(
            p_u,
            x_given_u[..nu].iter().map(|r| r.to_vec()).collect(),
            a_given_x.iter().map(|r| r.to_vec()).collect(),
            y_given_au.iter().map(|per_u| per_u[..nu].iter().map(|r| r.to_vec()).collect()).collect(),
        )
        .unwrap()
    }

    /// Brute-force conditional straight from the joint.
    fn joint_conditional(scm: &DiscreteScm, a: usize, x: usize) -> Vec<f64> {
        let (nu, nx, na, ny) = scm.sizes();
        let joint = scm.joint();
        let mut row = vec![0.0; ny];
        for u in 0..nu {
            for (y, r) in row.iter_mut().enumerate() {
                *r += joint[((u * nx + x) * na + a) * ny + y];
            }
        }
        let s: f64 = row.iter().sum();
        row.iter().map(|v| v / s).collect()
    }

    #[test]
    fn degenerate_confounder_removes_dependence_on_x() {
        let scm = binary_scm(
            vec![1.0],
            [[0.3, 0.7], [0.0, 0.0]],
            [[0.8, 0.2], [0.4, 0.6]],
            [[[0.1, 0.9], [0.0, 0.0]], [[0.6, 0.4], [0.0, 0.0]]],
        );
        let obs = marginalize(&scm).unwrap();
        for a in 0..2 {
            let r0 = obs.p_y_given_a_x[a][0].as_ref().unwrap();
            let r1 = obs.p_y_given_a_x[a][1].as_ref().unwrap();
            assert!(r0.iter().zip(r1).all(|(p, q)| (p - q).abs() < 1e-15));
        }
        for x in 0..2 {
            let truth = intervene_truth(&scm, x).unwrap();
            let conditional = observational_conditional(&scm, x).unwrap();
            assert!(truth.iter().zip(&conditional).all(|(p, q)| (p - q).abs() < 1e-12));
        }
    }

    #[test]
    fn symmetric_model_gives_symmetric_tables() {
        let scm = binary_scm(
            vec![0.5, 0.5],
            [[0.7, 0.3], [0.3, 0.7]],
            [[0.9, 0.1], [0.1, 0.9]],
            [[[0.8, 0.2], [0.6, 0.4]], [[0.4, 0.6], [0.2, 0.8]]],
        );
        let obs = marginalize(&scm).unwrap();
        assert!((obs.p_x[0] - 0.5).abs() < 1e-15);
        let a0 = obs.p_a_given_x[0].as_ref().unwrap();
        let a1 = obs.p_a_given_x[1].as_ref().unwrap();
        assert!((a0[0] - a1[1]).abs() < 1e-15);
        let y00 = obs.p_y_given_a_x[0][0].as_ref().unwrap();
        let y11 = obs.p_y_given_a_x[1][1].as_ref().unwrap();
        assert!((y00[0] - y11[1]).abs() < 1e-15);
    }

    #[test]
    fn tables_match_joint_enumeration() {
        for t in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(t);
            let scm = DiscreteScm::random(&mut rng, 2, 2, 2, 2).unwrap();
            let obs = marginalize(&scm).unwrap();
            for a in 0..2 {
                for x in 0..2 {
                    let want = joint_conditional(&scm, a, x);
                    let got = obs.p_y_given_a_x[a][x].as_ref().unwrap();
                    assert!(want.iter().zip(got).all(|(p, q)| (p - q).abs() < 1e-12));
                }
            }
        }
    }

    #[test]
    fn unconfounded_estimate_equals_conditional() {
        // Y ignores U: rows of p(y|a,u) identical across u.
        let scm = binary_scm(
            vec![0.3, 0.7],
            [[0.9, 0.1], [0.2, 0.8]],
            [[0.7, 0.3], [0.25, 0.75]],
            [[[0.1, 0.9], [0.1, 0.9]], [[0.65, 0.35], [0.65, 0.35]]],
        );
        let obs = marginalize(&scm).unwrap();
        for x in 0..2 {
            let est = frontdoor_estimate(&obs, x).unwrap();
            let cond = observational_conditional(&scm, x).unwrap();
            assert!(est.iter().zip(&cond).all(|(p, q)| (p - q).abs() < 1e-12));
        }
    }

    #[test]
    fn deterministic_mediator_collapses_inner_sum() {
        let scm = binary_scm(
            vec![0.4, 0.6],
            [[0.8, 0.2], [0.3, 0.7]],
            [[1.0, 0.0], [0.0, 1.0]],
            [[[0.9, 0.1], [0.2, 0.8]], [[0.5, 0.5], [0.05, 0.95]]],
        );
        let obs = marginalize(&scm).unwrap();
        // A = X: only the x' = a cell is defined, so Σ_x' collapses to p(y|a=x,x'=x) p(x')
        // summed over x' with p(a=x | x') > 0, i.e. x' = x alone; the missing cells carry weight.
        let err = frontdoor_estimate(&obs, 0).unwrap_err();
        assert!(matches!(err, Error::UndefinedConditional { a: 0, x: 1 }), "{err}");
    }

    #[test]
    fn near_deterministic_mediator_matches_hand_collapse() {
        let eps = 1e-3;
        let scm = binary_scm(
            vec![0.4, 0.6],
            [[0.8, 0.2], [0.3, 0.7]],
            [[1.0 - eps, eps], [eps, 1.0 - eps]],
            [[[0.9, 0.1], [0.2, 0.8]], [[0.5, 0.5], [0.05, 0.95]]],
        );
        let obs = marginalize(&scm).unwrap();
        for x in 0..2 {
            let mut hand = vec![0.0; 2];
            for a in 0..2 {
                let pa = scm.p_a_given_x[x][a];
                for xp in 0..2 {
                    let row = joint_conditional(&scm, a, xp);
                    for y in 0..2 {
                        hand[y] += pa * row[y] * obs.p_x[xp];
                    }
                }
            }
            let est = frontdoor_estimate(&obs, x).unwrap();
            let truth = intervene_truth(&scm, x).unwrap();
            for y in 0..2 {
                assert!((est[y] - hand[y]).abs() < 1e-12);
                assert!((est[y] - truth[y]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_outcome_is_mixture_over_mediator() {
        let scm = binary_scm(
            vec![0.5, 0.5],
            [[0.6, 0.4], [0.1, 0.9]],
            [[0.3, 0.7], [0.8, 0.2]],
            [[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]],
        );
        assert_eq!(intervene_truth(&scm, 0).unwrap(), vec![0.3, 0.7]);
        assert_eq!(intervene_truth(&scm, 1).unwrap(), vec![0.8, 0.2]);
    }

    #[test]
    fn rejects_bad_rows() {
        let err = DiscreteScm::new(vec![0.5, 0.6], vec![vec![1.0], vec![1.0]], vec![vec![1.0]], vec![vec![vec![1.0], vec![1.0]]]);
        assert!(err.is_err());
    }

    #[test]
    fn suite_is_deterministic_and_sound() {
        let a = soundness_suite(50, 9).unwrap();
        let b = soundness_suite(50, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.passed);
        assert!(a.max_normalization_error < 1e-9);
        assert!(soundness_suite(0, 9).is_err());
    }
}
