//! Reference computations written from the model definitions, sharing no
//! code with the crate beyond its config types.

#![allow(dead_code)]

use aoi_sched::sim::{SimState, Stage, SystemConfig};
use aoi_sched::{DelayDistribution, DeviceConfig, Directive, PenaltyFunction};

/// Integer penalty `f(x)`.
pub fn penalty_at(f: &PenaltyFunction<f64>, x: f64) -> f64 {
    match *f {
        PenaltyFunction::Linear { c } => c * x,
        PenaltyFunction::Square { c } => c * x * x,
        PenaltyFunction::Power { alpha, p } => {
            if x <= 0.0 {
                0.0
            } else {
                alpha * x.powf(p)
            }
        }
        PenaltyFunction::Composite { a, b } => 1.0 - 1.0 / (1.0 + a * x).powf(b),
    }
}

/// PMF of a delay law as `(value, probability)` pairs, tail below 1e-15 dropped.
pub fn pmf(d: &DelayDistribution<f64>) -> Vec<(u32, f64)> {
    match *d {
        DelayDistribution::Deterministic { d } => vec![(d, 1.0)],
        DelayDistribution::UniformInt { a, b } => {
            let p = 1.0 / (b - a + 1) as f64;
            (a..=b).map(|k| (k, p)).collect()
        }
        DelayDistribution::PoissonShifted { lambda, min } => {
            let lam = lambda - min as f64;
            if lam == 0.0 {
                return vec![(min, 1.0)];
            }
            let mut out = Vec::new();
            let mut log_p = -lam;
            let mut k = 0u32;
            let mut mass = 0.0;
            loop {
                let p = log_p.exp();
                out.push((min + k, p));
                mass += p;
                k += 1;
                log_p += lam.ln() - (k as f64).ln();
                if k as f64 > lam && 1.0 - mass < 1e-15 {
                    break;
                }
            }
            out
        }
        DelayDistribution::GeometricOn { p, min } => {
            let mut out = Vec::new();
            let mut q = p;
            let mut k = 0;
            while q > 1e-17 || k == 0 {
                out.push((min + k, q));
                q *= 1.0 - p;
                k += 1;
            }
            out
        }
    }
}

pub fn convolve(a: &[(u32, f64)], b: &[(u32, f64)]) -> Vec<(u32, f64)> {
    let mut map = std::collections::BTreeMap::new();
    for &(x, p) in a {
        for &(y, q) in b {
            *map.entry(x + y).or_insert(0.0) += p * q;
        }
    }
    map.into_iter().collect()
}

pub fn mean(p: &[(u32, f64)]) -> f64 {
    p.iter().map(|&(x, q)| x as f64 * q).sum()
}

/// Priority functions of one device from first principles.
pub struct DeviceOracle {
    pub f: PenaltyFunction<f64>,
    /// `∫_0^n f̃` at integers `n`.
    integral: Vec<f64>,
    pub mean_local: f64,
    pub mean_tx: f64,
    pub mean_offload: f64,
    pub ef_local: f64,
    pub ef_offload: f64,
    pub e_local: f64,
    pub e_tx: f64,
    pub e_budget: f64,
}

const TABLE: usize = 1 << 16;

impl DeviceOracle {
    pub fn new(dev: &DeviceConfig<f64>) -> Self {
        let f = dev.penalty;
        let mut integral = vec![0.0; TABLE];
        for n in 1..TABLE {
            let (lo, hi) = (penalty_at(&f, (n - 1) as f64), penalty_at(&f, n as f64));
            integral[n] = integral[n - 1] + 0.5 * (lo + hi);
        }
        let local = pmf(&dev.local_delay);
        let offload = convolve(&pmf(&dev.tx_delay), &pmf(&dev.edge_delay));
        let cumulative = |h: i64| -> f64 { (0..=h).map(|x| penalty_at(&f, x as f64)).sum() };
        let ef = |p: &[(u32, f64)]| p.iter().map(|&(d, q)| q * cumulative(d as i64 - 1)).sum();
        Self {
            f,
            ef_local: ef(&local),
            ef_offload: ef(&offload),
            mean_local: mean(&local),
            mean_tx: mean(&pmf(&dev.tx_delay)),
            mean_offload: mean(&offload),
            integral,
            e_local: dev.e_local,
            e_tx: dev.e_tx,
            e_budget: dev.e_budget,
        }
    }

    /// Piecewise-linear interpolation of `f`, constant `f(0)` below zero.
    pub fn f_interp(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return penalty_at(&self.f, 0.0);
        }
        let n = x.floor();
        let t = x - n;
        (1.0 - t) * penalty_at(&self.f, n) + t * penalty_at(&self.f, n + 1.0)
    }

    pub fn f_integral(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return x * penalty_at(&self.f, 0.0);
        }
        let n = x.floor() as usize;
        let t = x - n as f64;
        let lo = penalty_at(&self.f, n as f64);
        let whole = if n < TABLE {
            self.integral[n]
        } else {
            (TABLE..=n).fold(self.integral[TABLE - 1], |acc, k| {
                acc + 0.5 * (penalty_at(&self.f, (k - 1) as f64) + penalty_at(&self.f, k as f64))
            })
        };
        whole + t * (lo + 0.5 * t * (penalty_at(&self.f, n as f64 + 1.0) - lo))
    }

    fn w(&self, offset: f64, ef: f64, x: f64) -> f64 {
        x * self.f_interp(x + offset) - (self.f_integral(x + offset) - ef)
    }

    pub fn w_local(&self, x: f64) -> f64 {
        self.w(self.mean_local - 1.0, self.ef_local, x)
    }

    pub fn w_offload(&self, x: f64) -> f64 {
        self.w(self.mean_offload - 1.0, self.ef_offload, x)
    }

    /// Long-run penalty under energy split `(x, y)`.
    pub fn objective(&self, x: f64, y: f64) -> f64 {
        let a = self.e_budget / (self.e_local * self.mean_local);
        let b = self.e_budget / (self.e_tx * self.mean_tx);
        let (c, d) = (self.mean_local - 1.0, self.mean_offload - 1.0);
        let rate = a * x + b * y;
        let g = (1.0 + a * c * x + b * d * y) / rate;
        rate * self.f_integral(g) - (a * self.ef_local * x + b * self.ef_offload * y)
    }

    /// Channel occupancy per unit offload share.
    pub fn channel_weight(&self) -> f64 {
        self.e_budget / self.e_tx
    }
}

/// Drift-plus-penalty weight of an action.
pub fn action_weight(oracles: &[DeviceOracle], state: &SimState<f64>, cfg: &SystemConfig<f64>, action: &[Directive]) -> f64 {
    let mut total = 0.0;
    for (n, dev) in state.devices.iter().enumerate() {
        if dev.stage != Stage::Idle {
            continue;
        }
        let o = &oracles[n];
        let h = dev.h as f64;
        let vq = cfg.v * dev.q;
        total += match action[n] {
            Directive::None => 0.0,
            Directive::StartLocal => o.w_local(h) / o.mean_local - vq * o.e_local,
            Directive::StartOffload => o.w_offload(h) / o.mean_tx - vq * o.e_tx,
        };
    }
    total
}

/// Maximum weight over every channel-feasible action, by enumeration.
pub fn brute_force_max(oracles: &[DeviceOracle], state: &SimState<f64>, cfg: &SystemConfig<f64>) -> f64 {
    let n = state.devices.len();
    let free = cfg.channels - state.busy_channels;
    let mut best = 0.0f64;
    let mut action = vec![Directive::None; n];
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let mut offloads = 0;
        let mut feasible = true;
        for (i, dev) in state.devices.iter().enumerate() {
            action[i] = match c % 3 {
                0 => Directive::None,
                1 => Directive::StartLocal,
                _ => {
                    offloads += 1;
                    Directive::StartOffload
                }
            };
            if action[i] != Directive::None && dev.stage != Stage::Idle {
                feasible = false;
            }
            c /= 3;
        }
        if feasible && offloads <= free {
            best = best.max(action_weight(oracles, state, cfg, &action));
        }
    }
    best
}

/// Objective values of one device on the grid `{(i·h, j·h) : i + j ≤ 1/h}`
/// minus the origin, with their offload shares.
struct DeviceGrid {
    values: Vec<f64>,
    offload: Vec<f64>,
    channel_weight: f64,
}

impl DeviceGrid {
    fn new(o: &DeviceOracle, step: f64) -> Self {
        let k = (1.0 / step).round() as usize;
        let (mut values, mut offload) = (Vec::new(), Vec::new());
        for i in 0..=k {
            for j in 0..=(k - i) {
                if i + j == 0 {
                    continue;
                }
                let (x, y) = (i as f64 * step, j as f64 * step);
                values.push(o.objective(x, y));
                offload.push(y);
            }
        }
        Self {
            values,
            offload,
            channel_weight: o.channel_weight(),
        }
    }

    /// `(min Lagrangian, channel usage at the minimizer)` at price `alpha`.
    fn minimize(&self, alpha: f64) -> (f64, f64) {
        let price = alpha * self.channel_weight;
        let mut best = (f64::INFINITY, 0.0);
        for (v, y) in self.values.iter().zip(&self.offload) {
            let l = v + price * y;
            if l < best.0 {
                best = (l, y * self.channel_weight);
            }
        }
        best
    }
}

/// Lower bound by per-device grid search and a search over the channel
/// price: maximizes the dual function `Σ_n min L_n(α) − α·M`.
pub fn grid_dual_bound(cfg: &SystemConfig<f64>, step: f64) -> (f64, f64) {
    // Identical devices share one grid, weighted by their count.
    let mut distinct: Vec<(&DeviceConfig<f64>, f64)> = Vec::new();
    for d in &cfg.devices {
        match distinct.iter_mut().find(|(e, _)| *e == d) {
            Some((_, count)) => *count += 1.0,
            None => distinct.push((d, 1.0)),
        }
    }
    let grids: Vec<(DeviceGrid, f64)> = distinct.iter().map(|&(d, k)| (DeviceGrid::new(&DeviceOracle::new(d), step), k)).collect();
    let m = cfg.channels as f64;
    let dual = |alpha: f64| -> (f64, f64) {
        let (mut q, mut usage) = (-alpha * m, 0.0);
        for (g, k) in &grids {
            let (l, u) = g.minimize(alpha);
            q += k * l;
            usage += k * u;
        }
        (q, usage)
    };
    let (q0, u0) = dual(0.0);
    if u0 <= m {
        return (q0, 0.0);
    }
    // Bracket the price, then bisect on the sign of the supergradient.
    let mut hi = 1.0;
    while dual(hi).1 > m {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dual(mid).1 > m {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    let (ql, qh) = (dual(lo).0, dual(hi).0);
    if ql >= qh {
        (ql, lo)
    } else {
        (qh, hi)
    }
}

/// Minimum of a unimodal function on `[lo, hi]` by golden-section search.
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}
