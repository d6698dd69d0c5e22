//! Prosumer model: battery dynamics, piecewise-linear energy cost and the
//! local subproblem solved by every leaf in each coordination round.
//!
//! Sign convention: positive power is consumption, so a positive battery
//! action charges the battery.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ConstraintId;
use crate::qp::{self, QpSettings, QuadraticProgram};
use crate::tree::NodeId;

/// Lossless battery with an integrator state of charge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    /// kWh
    pub capacity: f64,
    /// kWh
    pub soc0: f64,
    /// kW
    pub p_charge_max: f64,
    /// kW
    pub p_discharge_max: f64,
    /// step length in hours
    pub dt: f64,
}

impl Battery {
    pub fn check(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("battery step length must be positive, got {}", self.dt)));
        }
        if self.capacity < 0.0 || self.p_charge_max < 0.0 || self.p_discharge_max < 0.0 {
            return Err(Error::Infeasible(
                "battery capacity and power limits must be non-negative".into(),
            ));
        }
        if self.soc0 < 0.0 || self.soc0 > self.capacity {
            return Err(Error::Infeasible(format!(
                "initial state of charge {} outside [0, {}]",
                self.soc0, self.capacity
            )));
        }
        Ok(())
    }

    /// Largest violation of the power and state-of-charge limits by `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let soc = soc_trajectory(self, x);
        let power = x
            .iter()
            .map(|&v| (v - self.p_charge_max).max(-self.p_discharge_max - v).max(0.0))
            .fold(0.0, f64::max);
        let energy = soc
            .iter()
            .map(|&s| (s - self.capacity).max(-s).max(0.0))
            .fold(0.0, f64::max);
        power.max(energy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prosumer {
    pub id: NodeId,
    pub battery: Battery,
    /// Uncontrolled net power (kW), one entry per step.
    pub p_uncontrolled: Vec<f64>,
    /// Energy price when importing (currency/kWh).
    pub price_buy: f64,
    /// Energy price when exporting (currency/kWh).
    pub price_sell: f64,
}

impl Prosumer {
    pub fn horizon(&self) -> usize {
        self.p_uncontrolled.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.price_buy < self.price_sell {
            return Err(Error::validation(
                format!("prosumer {}", self.id),
                "price_buy must be at least price_sell",
            ));
        }
        self.battery.check()
    }
}

/// Energy bill of `p` when its battery follows `x`. Net export earns
/// `price_sell`, so the result may be negative.
pub fn cost(p: &Prosumer, x: &[f64]) -> Result<f64> {
    if x.len() != p.horizon() {
        return Err(Error::length("battery profile", p.horizon(), x.len()));
    }
    let dt = p.battery.dt;
    Ok(p
        .p_uncontrolled
        .iter()
        .zip(x)
        .map(|(pu, xt)| {
            let net = pu + xt;
            if net >= 0.0 {
                p.price_buy * net * dt
            } else {
                p.price_sell * net * dt
            }
        })
        .sum())
}

/// State of charge after each step: `s_t = s_{t−1} + x_t·dt`, `s_{−1} = soc0`.
pub fn soc_trajectory(b: &Battery, x: &[f64]) -> Vec<f64> {
    x.iter()
        .scan(b.soc0, |s, xt| {
            *s += xt * b.dt;
            Some(*s)
        })
        .collect()
}

/// Reference signal of one ancestor constraint, with this leaf's weight in it.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub constraint: ConstraintId,
    pub weight: f64,
    pub signal: Vec<f64>,
}

/// References of every constraint on the ancestors of a leaf, root first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReferenceBundle {
    pub entries: Vec<Reference>,
}

// Quadratic weight used when a prosumer is not coupled to any constraint, so
// the linear program it faces has a unique, smallest-action solution.
const TIE_BREAK: f64 = 1e-3;

/// Minimises `cost(x) + (1/2ρ)·Σ_B ‖r_B + a_B·x − a_B·x_prev‖²` over the
/// battery's feasible set.
pub fn local_update(
    p: &Prosumer,
    x_prev: &[f64],
    refs: &ReferenceBundle,
    rho: f64,
    settings: &QpSettings,
) -> Result<Vec<f64>> {
    let horizon = p.horizon();
    if !(rho > 0.0) {
        return Err(Error::Config(format!("rho must be positive, got {rho}")));
    }
    if x_prev.len() != horizon {
        return Err(Error::length("previous battery profile", horizon, x_prev.len()));
    }
    for r in &refs.entries {
        if r.signal.len() != horizon {
            return Err(Error::length("reference signal", horizon, r.signal.len()));
        }
    }
    p.battery.check()?;

    // ½ q‖x‖² + lᵀx
    let mut q: f64 = refs.entries.iter().map(|r| r.weight * r.weight).sum::<f64>() / rho;
    let mut lin = vec![0.0; horizon];
    for r in &refs.entries {
        for t in 0..horizon {
            lin[t] += r.weight * (r.signal[t] - r.weight * x_prev[t]) / rho;
        }
    }
    if q == 0.0 {
        q = TIE_BREAK;
    }

    let qp = battery_qp(p, q, &lin)?;
    let sol = qp::solve(&qp, settings).into_result()?;
    Ok(actions_from_soc(&p.battery, &sol.z))
}

/// Builds the subproblem in state-of-charge variables.
///
/// Variables are interleaved as `[s_0, c_0, s_1, c_1, …]`, where `s_t` is
/// the state of charge after step `t` and `c_t` the epigraph of the step
/// cost. The battery action is `x_t = (s_t − s_{t−1})/dt`, which keeps every
/// row within a band of width three.
fn battery_qp(p: &Prosumer, q: f64, lin: &[f64]) -> Result<QuadraticProgram> {
    let b = &p.battery;
    let horizon = p.horizon();
    let n = 2 * horizon;
    let dt = b.dt;
    let s = |t: usize| 2 * t;
    let c = |t: usize| 2 * t + 1;

    // x = D s + x_off, with x_off_0 = −soc0/dt
    let mut x_off = vec![0.0; horizon];
    if horizon > 0 {
        x_off[0] = -b.soc0 / dt;
    }
    // gradient wrt x at s = 0 of ½q‖x‖² + lᵀx is q·x_off + l; map through Dᵀ
    let gx: Vec<f64> = (0..horizon).map(|t| q * x_off[t] + lin[t]).collect();

    let mut h = vec![0.0; n * n];
    let mut g = vec![0.0; n];
    let w = q / (dt * dt);
    for t in 0..horizon {
        h[s(t) * n + s(t)] += w;
        g[s(t)] += gx[t] / dt;
        if t > 0 {
            h[s(t - 1) * n + s(t - 1)] += w;
            h[s(t) * n + s(t - 1)] -= w;
            h[s(t - 1) * n + s(t)] -= w;
            g[s(t - 1)] -= gx[t] / dt;
        }
        g[c(t)] = dt;
    }

    let rows = 4 * horizon;
    let mut a = vec![0.0; rows * n];
    let mut lb = vec![f64::NEG_INFINITY; rows];
    let mut ub = vec![f64::INFINITY; rows];
    let mut put = |r: usize, col: usize, v: f64| a[r * n + col] = v;
    for t in 0..horizon {
        let pu = p.p_uncontrolled[t];
        let shift = -x_off[t]; // x_t = (s_t − s_{t−1})/dt − shift
        let (r_buy, r_sell, r_pow, r_soc) = (4 * t, 4 * t + 1, 4 * t + 2, 4 * t + 3);

        // c_t ≥ p_b (P_u + x_t)
        put(r_buy, c(t), 1.0);
        put(r_buy, s(t), -p.price_buy / dt);
        // c_t ≥ p_s (P_u + x_t)
        put(r_sell, c(t), 1.0);
        put(r_sell, s(t), -p.price_sell / dt);
        // −p_dis ≤ x_t ≤ p_ch
        put(r_pow, s(t), 1.0 / dt);
        if t > 0 {
            put(r_buy, s(t - 1), p.price_buy / dt);
            put(r_sell, s(t - 1), p.price_sell / dt);
            put(r_pow, s(t - 1), -1.0 / dt);
        }
        lb[r_buy] = p.price_buy * (pu - shift);
        lb[r_sell] = p.price_sell * (pu - shift);
        lb[r_pow] = -b.p_discharge_max + shift;
        ub[r_pow] = b.p_charge_max + shift;
        // 0 ≤ s_t ≤ capacity
        put(r_soc, s(t), 1.0);
        lb[r_soc] = 0.0;
        ub[r_soc] = b.capacity;
    }
    QuadraticProgram::new(h, g, a, lb, ub)
}

fn actions_from_soc(b: &Battery, z: &[f64]) -> Vec<f64> {
    let horizon = z.len() / 2;
    let mut prev = b.soc0;
    (0..horizon)
        .map(|t| {
            let st = z[2 * t];
            let x = (st - prev) / b.dt;
            prev = st;
            x
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf() -> NodeId {
        NodeId::new(vec![1, 1]).unwrap()
    }

    fn prosumer(pu: Vec<f64>, pb: f64, ps: f64, battery: Battery) -> Prosumer {
        Prosumer {
            id: leaf(),
            battery,
            p_uncontrolled: pu,
            price_buy: pb,
            price_sell: ps,
        }
    }

    fn loose(dt: f64) -> Battery {
        Battery {
            capacity: 1000.0,
            soc0: 500.0,
            p_charge_max: 100.0,
            p_discharge_max: 100.0,
            dt,
        }
    }

    fn single_ref(weight: f64, signal: Vec<f64>) -> ReferenceBundle {
        ReferenceBundle {
            entries: vec![Reference {
                constraint: ConstraintId(0),
                weight,
                signal,
            }],
        }
    }

    #[test]
    fn cost_examples() {
        let p = prosumer(vec![1.0, -2.0], 0.25, 0.10, loose(1.0));
        assert!((cost(&p, &[0.5, 0.5]).unwrap() - 0.225).abs() < 1e-12);
        assert_eq!(cost(&p, &[-1.0, 2.0]).unwrap(), 0.0);

        let flat = prosumer(vec![1.0, -2.0, 0.3], 0.2, 0.2, loose(0.5));
        let x = [0.1, -0.4, 2.0];
        let expected: f64 = (0..3).map(|t| 0.2 * (flat.p_uncontrolled[t] + x[t]) * 0.5).sum();
        assert!((cost(&flat, &x).unwrap() - expected).abs() < 1e-12);

        assert!(matches!(cost(&p, &[0.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn soc_examples() {
        let b = Battery {
            capacity: 10.0,
            soc0: 5.0,
            p_charge_max: 5.0,
            p_discharge_max: 5.0,
            dt: 1.0,
        };
        assert_eq!(soc_trajectory(&b, &[1.0, -2.0]), vec![6.0, 4.0]);
        assert_eq!(soc_trajectory(&b, &[0.0; 3]), vec![5.0; 3]);
        let half = Battery {
            soc0: 0.0,
            dt: 0.5,
            ..b
        };
        assert_eq!(soc_trajectory(&half, &[2.0, 2.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn unconstrained_quadratic() {
        let p = prosumer(vec![0.0], 0.0, 0.0, loose(1.0));
        let x = local_update(&p, &[0.0], &single_ref(1.0, vec![2.0]), 1.0, &QpSettings::default())
            .unwrap();
        assert!((x[0] + 2.0).abs() < 1e-5, "{x:?}");
    }

    #[test]
    fn clamped_quadratic() {
        let b = Battery {
            p_discharge_max: 1.0,
            ..loose(1.0)
        };
        let p = prosumer(vec![0.0], 0.0, 0.0, b);
        let x = local_update(&p, &[0.0], &single_ref(1.0, vec![2.0]), 1.0, &QpSettings::default())
            .unwrap();
        assert!((x[0] + 1.0).abs() < 1e-5, "{x:?}");
    }

    #[test]
    fn kinked_cost_scalar() {
        // max(x,0) + x², minimum at 0 (grid oracle over [−2, 2])
        let grid_min = (0..=40_000)
            .map(|k| -2.0 + k as f64 * 1e-4)
            .map(|x: f64| (x, x.max(0.0) + x * x))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert!(grid_min.abs() < 1e-4);

        let p = prosumer(vec![0.0], 1.0, 0.0, loose(1.0));
        let tight = QpSettings {
            tol: 1e-10,
            ..QpSettings::default()
        };
        let x = local_update(&p, &[0.0], &single_ref(1.0, vec![0.0]), 0.5, &tight).unwrap();
        assert!((x[0] - grid_min).abs() < 1e-4, "{x:?}");
    }

    #[test]
    fn infeasible_battery_reported() {
        let b = Battery {
            soc0: 20.0,
            capacity: 10.0,
            ..loose(1.0)
        };
        let p = prosumer(vec![0.0], 0.0, 0.0, b);
        let err = local_update(&p, &[0.0], &single_ref(1.0, vec![0.0]), 1.0, &QpSettings::default())
            .unwrap_err();
        assert!(err.is_infeasible());
    }

    #[test]
    fn uncoupled_prefers_no_action() {
        // zero prices and no coupling: every schedule is optimal, pick x = 0
        let p = prosumer(vec![1.0, -1.0], 0.0, 0.0, loose(1.0));
        let x = local_update(&p, &[3.0, 3.0], &ReferenceBundle::default(), 1.0, &QpSettings::default())
            .unwrap();
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    #[test]
    fn uncoupled_self_consumption() {
        // charge from export at t0, discharge at t1: saves buy price
        let b = Battery {
            capacity: 10.0,
            soc0: 0.0,
            p_charge_max: 5.0,
            p_discharge_max: 5.0,
            dt: 1.0,
        };
        let p = prosumer(vec![-2.0, 2.0], 0.25, 0.1, b);
        let x = local_update(&p, &[0.0, 0.0], &ReferenceBundle::default(), 1.0, &QpSettings::default())
            .unwrap();
        assert!((x[0] - 2.0).abs() < 1e-4 && (x[1] + 2.0).abs() < 1e-4, "{x:?}");
    }
}
