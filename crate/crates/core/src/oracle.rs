//! Constrained optimal value of the two-group population system by dynamic
//! programming on a discretized state/threshold grid.
//!
//! The constrained problem `max V_r s.t. V_g ≥ c̃` is approached through its
//! Lagrangian: for each multiplier on a fixed ladder, a backward pass over the
//! `(q₁, q₂)` grid (bilinear interpolation between nodes) yields a greedy
//! threshold policy, which is then rolled out exactly from the initial state.
//! The answer is the best reward value among rollouts meeting the constraint.
//! The ladder does not depend on `c̃`, so the answer is monotone in `c̃`.

use serde::{Deserialize, Serialize};

use crate::env::FairnessEnv;
use crate::error::{Error, Result};
use crate::metrics::DisparityKind;

/// Grid sizes: nodes per state axis and per threshold axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleResolution {
    pub state_points: usize,
    pub action_points: usize,
}

impl Default for OracleResolution {
    fn default() -> Self {
        OracleResolution {
            state_points: 33,
            action_points: 65,
        }
    }
}

pub const MAX_STATE_POINTS: usize = 64;
pub const MAX_ACTION_POINTS: usize = 129;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub value_r: f64,
    pub value_g: f64,
    /// Multiplier whose policy attained the optimum.
    pub multiplier: f64,
    pub actions: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
}

/// Multipliers tried: zero and a geometric ladder from 1e-3 to 1e6.
pub fn multiplier_ladder() -> Vec<f64> {
    let steps = 36;
    std::iter::once(0.0)
        .chain((0..=steps).map(|k| 10f64.powf(-3.0 + 9.0 * k as f64 / steps as f64)))
        .collect()
}

/// Per-group, per-(q node, threshold node) quantities. Loss contributions and
/// disparity statistics are separable across groups; only the final squared
/// gap couples them.
struct GroupTables {
    /// `α·f·q·tpr ± β·f·(1-q)(1-fpr)`
    gain: Vec<f64>,
    stat0: Vec<f64>,
    stat1: Vec<f64>,
    next_cell: Vec<usize>,
    next_frac: Vec<f64>,
}

struct Problem<'a> {
    env: &'a FairnessEnv,
    horizon: usize,
    s: usize,
    a: usize,
}

fn grid(points: usize, k: usize) -> f64 {
    k as f64 / (points - 1) as f64
}

impl Problem<'_> {
    fn locate(&self, x: f64) -> (usize, f64) {
        let t = x.clamp(0.0, 1.0) * (self.s - 1) as f64;
        let cell = (t.floor() as usize).min(self.s - 2);
        (cell, t - cell as f64)
    }

    /// Per-group quantities at qualification rate `q` for every threshold node.
    fn row(&self, group: usize, q: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let env = self.env;
        let f = env.groups.group_fractions[group];
        let spec = env.loss;
        let sign = if spec.printed_sign { -1.0 } else { 1.0 };
        let mut gain = Vec::with_capacity(self.a);
        let mut s0 = Vec::with_capacity(self.a);
        let mut s1 = Vec::with_capacity(self.a);
        let mut next = Vec::with_capacity(self.a);
        for k in 0..self.a {
            let act = grid(self.a, k);
            let rates = env.model.rates(group, q, act);
            gain.push(
                spec.alpha * f * q * rates.tpr + sign * spec.beta * f * (1.0 - q) * (1.0 - rates.fpr),
            );
            let (x0, x1) = match env.disparity {
                DisparityKind::DP => (q * rates.tpr + (1.0 - q) * rates.fpr, 0.0),
                DisparityKind::EOp => (rates.tpr, 0.0),
                DisparityKind::EO => (rates.tpr, rates.fpr),
                DisparityKind::QR => (q, 0.0),
            };
            s0.push(x0);
            s1.push(x1);
            next.push(crate::dynamics::next_rate(q, &rates, &env.utility)?);
        }
        Ok((gain, s0, s1, next))
    }

    fn tables(&self, group: usize) -> Result<GroupTables> {
        let mut t = GroupTables {
            gain: Vec::with_capacity(self.s * self.a),
            stat0: Vec::with_capacity(self.s * self.a),
            stat1: Vec::with_capacity(self.s * self.a),
            next_cell: Vec::with_capacity(self.s * self.a),
            next_frac: Vec::with_capacity(self.s * self.a),
        };
        for i in 0..self.s {
            let (gain, s0, s1, next) = self.row(group, grid(self.s, i))?;
            t.gain.extend(gain);
            t.stat0.extend(s0);
            t.stat1.extend(s1);
            for n in next {
                let (c, fr) = self.locate(n);
                t.next_cell.push(c);
                t.next_frac.push(fr);
            }
        }
        Ok(t)
    }

    fn interp(&self, v: &[f64], c1: usize, f1: f64, c2: usize, f2: f64) -> f64 {
        let s = self.s;
        let v00 = v[c1 * s + c2];
        let v01 = v[c1 * s + c2 + 1];
        let v10 = v[(c1 + 1) * s + c2];
        let v11 = v[(c1 + 1) * s + c2 + 1];
        (1.0 - f1) * ((1.0 - f2) * v00 + f2 * v01) + f1 * ((1.0 - f2) * v10 + f2 * v11)
    }

    /// Lagrangian value grids for layers `1..=H+1`; index `h-1`.
    fn backward(&self, tables: &[GroupTables; 2], nu: f64) -> Vec<Vec<f64>> {
        let (s, a) = (self.s, self.a);
        let mut layers = vec![vec![0.0; s * s]; self.horizon + 1];
        for h in (0..self.horizon).rev() {
            let (head, tail) = layers.split_at_mut(h + 1);
            let next = &tail[0];
            let cur = &mut head[h];
            for i1 in 0..s {
                for i2 in 0..s {
                    let mut best = f64::NEG_INFINITY;
                    for k1 in 0..a {
                        let x1 = i1 * a + k1;
                        let (g1, d01, d11) = (tables[0].gain[x1], tables[0].stat0[x1], tables[0].stat1[x1]);
                        let (c1, f1) = (tables[0].next_cell[x1], tables[0].next_frac[x1]);
                        for k2 in 0..a {
                            let x2 = i2 * a + k2;
                            let t2 = &tables[1];
                            let r = 1.0 - (1.0 - g1 - t2.gain[x2]).clamp(0.0, 1.0);
                            let d = 0.5
                                * ((d01 - t2.stat0[x2]).powi(2) + (d11 - t2.stat1[x2]).powi(2));
                            let g = 1.0 - d.clamp(0.0, 1.0);
                            let v = r + nu * g + self.interp(next, c1, f1, t2.next_cell[x2], t2.next_frac[x2]);
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    cur[i1 * s + i2] = best;
                }
            }
        }
        layers
    }

    /// Exact rollout of the policy greedy in the Lagrangian layers.
    fn rollout(&self, layers: &[Vec<f64>], nu: f64, initial: &[f64]) -> Result<OracleSolution> {
        let env = self.env;
        let mut q = initial.to_vec();
        let mut sol = OracleSolution {
            value_r: 0.0,
            value_g: 0.0,
            multiplier: nu,
            actions: Vec::new(),
            states: Vec::new(),
        };
        for h in 0..self.horizon {
            let rows = [self.row(0, q[0])?, self.row(1, q[1])?];
            let next = &layers[h + 1];
            let mut best = (f64::NEG_INFINITY, 0, 0);
            for k1 in 0..self.a {
                let (c1, f1) = self.locate(rows[0].3[k1]);
                for k2 in 0..self.a {
                    let (c2, f2) = self.locate(rows[1].3[k2]);
                    let r = 1.0 - (1.0 - rows[0].0[k1] - rows[1].0[k2]).clamp(0.0, 1.0);
                    let d = 0.5
                        * ((rows[0].1[k1] - rows[1].1[k2]).powi(2)
                            + (rows[0].2[k1] - rows[1].2[k2]).powi(2));
                    let g = 1.0 - d.clamp(0.0, 1.0);
                    let v = r + nu * g + self.interp(next, c1, f1, c2, f2);
                    if v > best.0 {
                        best = (v, k1, k2);
                    }
                }
            }
            let action = vec![grid(self.a, best.1), grid(self.a, best.2)];
            let eval = env.evaluate(&q, &action)?;
            sol.value_r += 1.0 - eval.loss;
            sol.value_g += 1.0 - eval.disparity;
            sol.states.push(q);
            sol.actions.push(action);
            q = eval.next_state;
        }
        Ok(sol)
    }
}

/// Best constrained reward value from `initial` over `horizon` steps.
pub fn oracle_optimal_value(
    env: &FairnessEnv,
    horizon: usize,
    constraint_level: f64,
    initial: &[f64],
    resolution: OracleResolution,
) -> Result<OracleSolution> {
    if env.group_count() != 2 {
        return Err(Error::Unsupported(format!(
            "oracle needs exactly two groups, got {}",
            env.group_count()
        )));
    }
    if initial.len() != 2 || initial.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(Error::validation("initial state must be two rates in [0, 1]"));
    }
    if horizon == 0 {
        return Err(Error::config("horizon must be at least 1"));
    }
    if !(2..=MAX_STATE_POINTS).contains(&resolution.state_points)
        || !(2..=MAX_ACTION_POINTS).contains(&resolution.action_points)
    {
        return Err(Error::config(format!(
            "oracle resolution {resolution:?} outside 2..={MAX_STATE_POINTS} state / 2..={MAX_ACTION_POINTS} action points"
        )));
    }
    if constraint_level < 0.0 {
        return Err(Error::config("constraint level must be nonnegative"));
    }
    if constraint_level > horizon as f64 {
        return Err(Error::Infeasible(format!(
            "constraint level {constraint_level} exceeds the horizon {horizon}; V_g ≤ H always"
        )));
    }
    let problem = Problem {
        env,
        horizon,
        s: resolution.state_points,
        a: resolution.action_points,
    };
    let tables = [problem.tables(0)?, problem.tables(1)?];
    let mut best: Option<OracleSolution> = None;
    let mut best_g = f64::NEG_INFINITY;
    for nu in multiplier_ladder() {
        let layers = problem.backward(&tables, nu);
        let sol = problem.rollout(&layers, nu, initial)?;
        best_g = best_g.max(sol.value_g);
        if sol.value_g >= constraint_level - 1e-9
            && best.as_ref().is_none_or(|b| sol.value_r > b.value_r)
        {
            best = Some(sol);
        }
    }
    best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no policy on the {}x{} threshold grid reaches V_g ≥ {constraint_level} from {initial:?}; best V_g found {best_g:.6}",
            resolution.action_points, resolution.action_points
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{outcome_rates, FeatureModel};
    use crate::metrics::LossSpec;

    fn env(kind: DisparityKind) -> FairnessEnv {
        FairnessEnv::gaussian(LossSpec::true_positive(), kind)
    }

    fn small() -> OracleResolution {
        OracleResolution {
            state_points: 9,
            action_points: 33,
        }
    }

    fn scan_max_tp(e: &FairnessEnv, q: &[f64], points: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for k1 in 0..points {
            for k2 in 0..points {
                let a = [grid(points, k1), grid(points, k2)];
                let r = outcome_rates(&FeatureModel::gaussian(), &e.groups, q, &a).unwrap();
                best = best.max(r.tp());
            }
        }
        best
    }

    #[test]
    fn single_step_unconstrained_matches_exhaustive_scan() {
        let e = env(DisparityKind::DP);
        let q = [0.3, 0.7];
        for points in [33, 65] {
            let res = OracleResolution {
                state_points: 5,
                action_points: points,
            };
            let sol = oracle_optimal_value(&e, 1, 0.0, &q, res).unwrap();
            assert!((sol.value_r - scan_max_tp(&e, &q, points)).abs() < 1e-12);
        }
        let coarse = oracle_optimal_value(&e, 1, 0.0, &q, OracleResolution { state_points: 5, action_points: 33 }).unwrap();
        let fine = oracle_optimal_value(&e, 1, 0.0, &q, OracleResolution { state_points: 5, action_points: 65 }).unwrap();
        assert!((coarse.value_r - fine.value_r).abs() < 1e-3);
    }

    #[test]
    fn full_fairness_is_feasible_from_symmetric_state() {
        let e = env(DisparityKind::DP);
        let h = 3;
        let sol = oracle_optimal_value(&e, h, h as f64, &[0.4, 0.4], small()).unwrap();
        assert!((sol.value_g - h as f64).abs() < 1e-9);
    }

    #[test]
    fn over_horizon_constraint_is_infeasible() {
        let e = env(DisparityKind::DP);
        assert!(matches!(
            oracle_optimal_value(&e, 3, 3.5, &[0.4, 0.6], small()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn qr_constraint_can_be_infeasible() {
        // QR disparity at the first step is fixed by the initial state.
        let e = env(DisparityKind::QR);
        assert!(matches!(
            oracle_optimal_value(&e, 2, 2.0, &[0.1, 0.9], small()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn relaxing_the_constraint_never_hurts() {
        let e = env(DisparityKind::EO);
        let h = 3;
        let mut last = f64::NEG_INFINITY;
        for c in [3.0, 2.99, 2.97, 2.9, 2.5, 0.0] {
            match oracle_optimal_value(&e, h, c, &[0.2, 0.8], small()) {
                Ok(sol) => {
                    assert!(sol.value_r >= last - 1e-12);
                    assert!(sol.value_g >= c - 1e-9);
                    last = sol.value_r;
                }
                Err(Error::Infeasible(_)) => assert_eq!(last, f64::NEG_INFINITY),
                Err(e) => panic!("{e}"),
            }
        }
        assert!(last.is_finite());
    }

    #[test]
    fn rollout_values_are_exact_sums() {
        let e = env(DisparityKind::DP);
        let sol = oracle_optimal_value(&e, 4, 3.8, &[0.3, 0.6], small()).unwrap();
        let (mut vr, mut vg) = (0.0, 0.0);
        for (s, a) in sol.states.iter().zip(&sol.actions) {
            let ev = e.evaluate(s, a).unwrap();
            vr += 1.0 - ev.loss;
            vg += 1.0 - ev.disparity;
        }
        assert!((vr - sol.value_r).abs() < 1e-12);
        assert!((vg - sol.value_g).abs() < 1e-12);
    }
}
