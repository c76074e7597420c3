//! No-U-turn Hamiltonian Monte Carlo with multinomial trajectory sampling,
//! a diagonal metric adapted in doubling windows, and dual-averaging step
//! size adaptation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::stats::log_add_exp;

pub trait LogDensity {
    fn dim(&self) -> usize;
    /// Log density and gradient; `-inf` marks an invalid point.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone)]
pub struct NutsConfig {
    pub n_warmup: usize,
    pub n_samples: usize,
    pub max_depth: usize,
    pub target_accept: f64,
    pub init_step: f64,
}

impl Default for NutsConfig {
    fn default() -> Self {
        NutsConfig {
            n_warmup: 400,
            n_samples: 400,
            max_depth: 7,
            target_accept: 0.8,
            init_step: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NutsDraw {
    pub position: Vec<f64>,
    pub log_density: f64,
    pub accept_stat: f64,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub step_size: f64,
}

#[derive(Clone)]
struct Point {
    x: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    lp: f64,
}

struct Sampler<'a, D: LogDensity> {
    target: &'a D,
    inv_metric: Vec<f64>,
    step: f64,
    max_depth: usize,
    n_leapfrog: usize,
    sum_metro: f64,
    divergent: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

impl<D: LogDensity> Sampler<'_, D> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        let h = -z.lp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for i in 0..z.p.len() {
            z.p[i] += 0.5 * eps * z.grad[i];
        }
        for i in 0..z.x.len() {
            z.x[i] += eps * self.inv_metric[i] * z.p[i];
        }
        z.lp = self.target.log_density_grad(&z.x, &mut z.grad);
        if z.lp.is_finite() {
            for i in 0..z.p.len() {
                z.p[i] += 0.5 * eps * z.grad[i];
            }
        }
    }

    fn sample_momentum<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.inv_metric
            .iter()
            .map(|m| {
                let n: f64 = StandardNormal.sample(rng);
                n / m.sqrt()
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree<R: Rng>(
        &mut self,
        depth: usize,
        z: &mut Point,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        h0: f64,
        sign: f64,
        log_sum_weight: &mut f64,
        propose: &mut Point,
        rng: &mut R,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(z, sign * self.step);
            self.n_leapfrog += 1;
            let h = if z.lp.is_finite() { self.hamiltonian(z) } else { f64::INFINITY };
            if h - h0 > 1000.0 {
                self.divergent = true;
                return false;
            }
            let delta = h0 - h;
            *log_sum_weight = log_add_exp(*log_sum_weight, delta);
            self.sum_metro += if delta > 0.0 { 1.0 } else { delta.exp() };
            *propose = z.clone();
            add_into(rho, &z.p);
            *p_sharp_beg = self.sharp(&z.p);
            *p_sharp_end = p_sharp_beg.clone();
            *p_beg = z.p.clone();
            *p_end = z.p.clone();
            return true;
        }
        let n = z.x.len();
        let mut p_sharp_left_end = vec![0.0; n];
        let mut p_left_end = vec![0.0; n];
        let mut rho_left = vec![0.0; n];
        let mut lsw_left = f64::NEG_INFINITY;
        if !self.build_tree(
            depth - 1,
            z,
            p_sharp_beg,
            &mut p_sharp_left_end,
            &mut rho_left,
            p_beg,
            &mut p_left_end,
            h0,
            sign,
            &mut lsw_left,
            propose,
            rng,
        ) {
            return false;
        }
        let mut propose_right = z.clone();
        let mut p_sharp_right_beg = vec![0.0; n];
        let mut p_right_beg = vec![0.0; n];
        let mut rho_right = vec![0.0; n];
        let mut lsw_right = f64::NEG_INFINITY;
        if !self.build_tree(
            depth - 1,
            z,
            &mut p_sharp_right_beg,
            p_sharp_end,
            &mut rho_right,
            &mut p_right_beg,
            p_end,
            h0,
            sign,
            &mut lsw_right,
            &mut propose_right,
            rng,
        ) {
            return false;
        }
        let lsw_sub = log_add_exp(lsw_left, lsw_right);
        *log_sum_weight = log_add_exp(*log_sum_weight, lsw_sub);
        if lsw_right > lsw_sub || rng.random::<f64>() < (lsw_right - lsw_sub).exp() {
            *propose = propose_right;
        }
        let mut rho_sub = rho_left.clone();
        add_into(&mut rho_sub, &rho_right);
        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_sub);
        let mut ext = rho_left;
        add_into(&mut ext, &p_right_beg);
        persist &= criterion(p_sharp_beg, &p_sharp_right_beg, &ext);
        let mut ext = rho_right;
        add_into(&mut ext, &p_left_end);
        persist &= criterion(&p_sharp_left_end, p_sharp_end, &ext);
        add_into(rho, &rho_sub);
        persist
    }

    fn transition<R: Rng>(&mut self, current: &Point, rng: &mut R) -> (Point, usize) {
        let mut z0 = current.clone();
        z0.p = self.sample_momentum(rng);
        let h0 = self.hamiltonian(&z0);
        let n = z0.x.len();
        self.n_leapfrog = 0;
        self.sum_metro = 0.0;
        self.divergent = false;

        let mut z_fwd = z0.clone();
        let mut z_bck = z0.clone();
        let mut sample = z0.clone();
        let mut p_fwd_fwd = z0.p.clone();
        let mut p_fwd_bck = z0.p.clone();
        let mut p_bck_fwd = z0.p.clone();
        let mut p_bck_bck = z0.p.clone();
        let s0 = self.sharp(&z0.p);
        let mut ps_fwd_fwd = s0.clone();
        let mut ps_fwd_bck = s0.clone();
        let mut ps_bck_fwd = s0.clone();
        let mut ps_bck_bck = s0;
        let mut rho = z0.p.clone();
        let mut log_sum_weight = 0.0;
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; n];
            let mut rho_bck = vec![0.0; n];
            let mut lsw_sub = f64::NEG_INFINITY;
            let mut propose = z0.clone();
            let valid = if rng.random::<f64>() > 0.5 {
                rho_bck.clone_from(&rho);
                p_bck_fwd.clone_from(&p_fwd_bck);
                ps_bck_fwd.clone_from(&ps_fwd_bck);
                self.build_tree(
                    depth,
                    &mut z_fwd,
                    &mut ps_fwd_bck,
                    &mut ps_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    h0,
                    1.0,
                    &mut lsw_sub,
                    &mut propose,
                    rng,
                )
            } else {
                rho_fwd.clone_from(&rho);
                p_fwd_bck.clone_from(&p_bck_fwd);
                ps_fwd_bck.clone_from(&ps_bck_fwd);
                self.build_tree(
                    depth,
                    &mut z_bck,
                    &mut ps_bck_fwd,
                    &mut ps_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    h0,
                    -1.0,
                    &mut lsw_sub,
                    &mut propose,
                    rng,
                )
            };
            if !valid {
                break;
            }
            depth += 1;
            if lsw_sub > log_sum_weight || rng.random::<f64>() < (lsw_sub - log_sum_weight).exp() {
                sample = propose;
            }
            log_sum_weight = log_add_exp(log_sum_weight, lsw_sub);
            rho = rho_bck.clone();
            add_into(&mut rho, &rho_fwd);
            let mut persist = criterion(&ps_bck_bck, &ps_fwd_fwd, &rho);
            let mut ext = rho_bck;
            add_into(&mut ext, &p_fwd_bck);
            persist &= criterion(&ps_bck_bck, &ps_fwd_bck, &ext);
            let mut ext = rho_fwd;
            add_into(&mut ext, &p_bck_fwd);
            persist &= criterion(&ps_bck_fwd, &ps_fwd_fwd, &ext);
            if !persist {
                break;
            }
        }
        (sample, depth)
    }

    fn accept_stat(&self) -> f64 {
        if self.n_leapfrog == 0 {
            0.0
        } else {
            self.sum_metro / self.n_leapfrog as f64
        }
    }

    /// Doubles or halves the step until the one-step acceptance crosses 0.8.
    fn find_reasonable_step<R: Rng>(&mut self, z: &Point, rng: &mut R) {
        let mut direction = 0.0;
        for _ in 0..50 {
            let mut w = z.clone();
            w.p = self.sample_momentum(rng);
            let h0 = self.hamiltonian(&w);
            self.leapfrog(&mut w, self.step);
            let h = if w.lp.is_finite() { self.hamiltonian(&w) } else { f64::INFINITY };
            let delta = h0 - h;
            let dir = if delta > 0.8f64.ln() { 1.0 } else { -1.0 };
            if direction == 0.0 {
                direction = dir;
            }
            if dir != direction {
                break;
            }
            if direction > 0.0 {
                self.step *= 2.0;
            } else {
                self.step *= 0.5;
            }
            if self.step > 1e7 || self.step < 1e-10 {
                self.step = self.step.clamp(1e-10, 1e7);
                break;
            }
        }
    }
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    target: f64,
}

impl DualAveraging {
    fn new(step: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * step).ln(),
            s_bar: 0.0,
            x_bar: 0.0,
            counter: 0.0,
            target,
        }
    }

    fn update(&mut self, accept: f64) -> f64 {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / GAMMA;
        let x_eta = self.counter.powf(-KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Metric-adaptation windows `[start, end)` within warmup.
fn windows(n_warmup: usize) -> Vec<(usize, usize)> {
    let (init, term, base) = if n_warmup < 150 {
        let init = (0.15 * n_warmup as f64) as usize;
        let term = (0.1 * n_warmup as f64) as usize;
        (init, term, n_warmup.saturating_sub(init + term))
    } else {
        (75, 50, 25)
    };
    let end = n_warmup.saturating_sub(term);
    let mut out = Vec::new();
    let mut start = init;
    let mut size = base.max(1);
    while start < end {
        let mut stop = start + size;
        if stop + 2 * size > end {
            stop = end;
        }
        out.push((start, stop));
        start = stop;
        size *= 2;
    }
    out
}

/// Runs warmup and sampling from `init`; only post-warmup draws are returned.
pub fn sample<D: LogDensity, R: Rng>(
    target: &D,
    init: &[f64],
    config: &NutsConfig,
    rng: &mut R,
) -> Vec<NutsDraw> {
    let dim = target.dim();
    let mut grad = vec![0.0; dim];
    let lp = target.log_density_grad(init, &mut grad);
    let mut current = Point { x: init.to_vec(), p: vec![0.0; dim], grad, lp };
    let mut s = Sampler {
        target,
        inv_metric: vec![1.0; dim],
        step: config.init_step,
        max_depth: config.max_depth,
        n_leapfrog: 0,
        sum_metro: 0.0,
        divergent: false,
    };
    s.find_reasonable_step(&current, rng);
    let mut da = DualAveraging::new(s.step, config.target_accept);
    let wins = windows(config.n_warmup);
    let mut win_idx = 0;
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    let mut count = 0.0;

    for it in 0..config.n_warmup {
        let (next, _) = s.transition(&current, rng);
        current = next;
        s.step = da.update(s.accept_stat());
        if let Some(&(start, stop)) = wins.get(win_idx) {
            if it >= start && it < stop {
                count += 1.0;
                for i in 0..dim {
                    let d = current.x[i] - mean[i];
                    mean[i] += d / count;
                    m2[i] += d * (current.x[i] - mean[i]);
                }
            }
            if it + 1 == stop {
                for i in 0..dim {
                    let var = if count > 1.0 { m2[i] / (count - 1.0) } else { 1.0 };
                    s.inv_metric[i] = (count / (count + 5.0)) * var + 1e-3 * (5.0 / (count + 5.0));
                }
                mean.iter_mut().for_each(|v| *v = 0.0);
                m2.iter_mut().for_each(|v| *v = 0.0);
                count = 0.0;
                win_idx += 1;
                s.find_reasonable_step(&current, rng);
                da = DualAveraging::new(s.step, config.target_accept);
            }
        }
    }
    if config.n_warmup > 0 {
        s.step = da.final_step();
    }

    let mut draws = Vec::with_capacity(config.n_samples);
    for _ in 0..config.n_samples {
        let (next, depth) = s.transition(&current, rng);
        current = next;
        draws.push(NutsDraw {
            position: current.x.clone(),
            log_density: current.lp,
            accept_stat: s.accept_stat(),
            depth,
            n_leapfrog: s.n_leapfrog,
            divergent: s.divergent,
            step_size: s.step,
        });
    }
    draws
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    struct Gaussian {
        mean: Vec<f64>,
        sd: Vec<f64>,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.mean.len()
        }
        fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for i in 0..x.len() {
                let z = (x[i] - self.mean[i]) / self.sd[i];
                lp -= 0.5 * z * z;
                grad[i] = -z / self.sd[i];
            }
            lp
        }
    }

    #[test]
    fn recovers_anisotropic_gaussian() {
        let target = Gaussian {
            mean: vec![1.0, -2.0, 50.0, 0.0],
            sd: vec![1.0, 0.01, 10.0, 3.0],
        };
        let cfg = NutsConfig { n_warmup: 500, n_samples: 2000, ..Default::default() };
        let draws = sample(&target, &[0.0; 4], &cfg, &mut rng_for(1, &[]));
        for i in 0..4 {
            let xs: Vec<f64> = draws.iter().map(|d| d.position[i]).collect();
            let m = crate::stats::mean(&xs);
            let sd = crate::stats::variance(&xs).sqrt();
            assert!((m - target.mean[i]).abs() < 0.15 * target.sd[i], "mean {i}: {m}");
            assert!((sd / target.sd[i] - 1.0).abs() < 0.15, "sd {i}: {sd}");
        }
        let acc = draws.iter().map(|d| d.accept_stat).sum::<f64>() / draws.len() as f64;
        assert!(acc > 0.6, "{acc}");
        assert!(draws.iter().all(|d| !d.divergent));
    }

    #[test]
    fn windows_cover_warmup() {
        let w = windows(1000);
        assert_eq!(w.first().unwrap().0, 75);
        assert_eq!(w.last().unwrap().1, 950);
        assert!(w.windows(2).all(|p| p[0].1 == p[1].0));
        let w = windows(100);
        assert_eq!(w.first().unwrap().0, 15);
        assert_eq!(w.last().unwrap().1, 90);
    }

    #[test]
    fn deterministic_given_seed() {
        let target = Gaussian { mean: vec![0.0; 3], sd: vec![1.0; 3] };
        let cfg = NutsConfig { n_warmup: 50, n_samples: 20, ..Default::default() };
        let a = sample(&target, &[0.5; 3], &cfg, &mut rng_for(9, &[]));
        let b = sample(&target, &[0.5; 3], &cfg, &mut rng_for(9, &[]));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.position, y.position);
        }
    }
}
