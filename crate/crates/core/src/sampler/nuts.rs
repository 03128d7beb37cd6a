//! Multinomial no-U-turn transitions with a diagonal metric.

use rand::Rng;
use rand_distr::StandardNormal;

use super::LogDensity;
use crate::special::log_sum_exp;

/// Energy error beyond which a trajectory is declared divergent.
const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl Point {
    /// Evaluates `target` at `q`; failures become `logp = -inf`.
    pub fn at<D: LogDensity + ?Sized>(target: &D, q: Vec<f64>) -> Point {
        let mut grad = vec![0.0; q.len()];
        let logp = match target.logp_and_grad(&q, &mut grad) {
            Ok(lp) if lp.is_finite() && grad.iter().all(|g| g.is_finite()) => lp,
            _ => f64::NEG_INFINITY,
        };
        let p = vec![0.0; q.len()];
        Point { q, p, grad, logp }
    }

    fn refresh<D: LogDensity + ?Sized>(&mut self, target: &D) {
        self.logp = match target.logp_and_grad(&self.q, &mut self.grad) {
            Ok(lp) if lp.is_finite() && self.grad.iter().all(|g| g.is_finite()) => lp,
            _ => f64::NEG_INFINITY,
        };
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Metric {
    pub inv_mass: Vec<f64>,
}

impl Metric {
    pub fn unit(dim: usize) -> Self {
        Metric {
            inv_mass: vec![1.0; dim],
        }
    }

    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(&self.inv_mass)
            .map(|(p, m)| p * p * m)
            .sum::<f64>()
    }

    fn velocity(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_mass).map(|(p, m)| p * m).collect()
    }

    pub fn sample_momentum<R: Rng>(&self, rng: &mut R, p: &mut [f64]) {
        for (pi, m) in p.iter_mut().zip(&self.inv_mass) {
            let z: f64 = rng.sample(StandardNormal);
            *pi = z / m.sqrt();
        }
    }

    pub fn hamiltonian(&self, z: &Point) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }
}

pub(crate) fn leapfrog<D: LogDensity + ?Sized>(target: &D, metric: &Metric, z: &mut Point, eps: f64) {
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += 0.5 * eps * g;
    }
    for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&metric.inv_mass) {
        *q += eps * m * p;
    }
    z.refresh(target);
    if z.logp.is_finite() {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct TransitionInfo {
    pub accept_stat: f64,
    pub n_leapfrog: usize,
    pub depth: usize,
    pub divergent: bool,
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

fn sum(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Ends of a subtree: momentum and velocity at its first and last states.
struct Edge {
    p: Vec<f64>,
    p_sharp: Vec<f64>,
}

struct Sampler<'a, D: ?Sized, R> {
    target: &'a D,
    metric: &'a Metric,
    eps: f64,
    rng: &'a mut R,
    h0: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

impl<D: LogDensity + ?Sized, R: Rng> Sampler<'_, D, R> {
    /// Builds a subtree of `2^depth` states continuing from `z`. Returns the
    /// edges and the subtree's summed momentum, or `None` on divergence or an
    /// internal U-turn.
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        rho: &mut [f64],
        log_sum_weight: &mut f64,
        sign: f64,
    ) -> Option<(Edge, Edge)> {
        if depth == 0 {
            leapfrog(self.target, self.metric, z, sign * self.eps);
            self.n_leapfrog += 1;
            let h = self.metric.hamiltonian(z);
            if h - self.h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, self.h0 - h);
            self.sum_metro_prob += if self.h0 - h > 0.0 {
                1.0
            } else {
                (self.h0 - h).exp()
            };
            if self.divergent {
                return None;
            }
            z_propose.clone_from(z);
            add_into(rho, &z.p);
            let edge = Edge {
                p: z.p.clone(),
                p_sharp: self.metric.velocity(&z.p),
            };
            let end = Edge {
                p: edge.p.clone(),
                p_sharp: edge.p_sharp.clone(),
            };
            return Some((edge, end));
        }

        let mut rho_init = vec![0.0; z.q.len()];
        let mut lsw_init = f64::NEG_INFINITY;
        let (beg, init_end) =
            self.build_tree(depth - 1, z, z_propose, &mut rho_init, &mut lsw_init, sign)?;

        let mut z_propose_final = z.clone();
        let mut rho_final = vec![0.0; z.q.len()];
        let mut lsw_final = f64::NEG_INFINITY;
        let (final_beg, end) = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut rho_final,
            &mut lsw_final,
            sign,
        )?;

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept = (lsw_final - lsw_subtree).exp();
            if self.rng.random::<f64>() < accept {
                *z_propose = z_propose_final;
            }
        }

        let rho_subtree = sum(&rho_init, &rho_final);
        add_into(rho, &rho_subtree);

        let mut persist = no_u_turn(&beg.p_sharp, &end.p_sharp, &rho_subtree);
        let rho_ext = sum(&rho_init, &final_beg.p);
        persist &= no_u_turn(&beg.p_sharp, &final_beg.p_sharp, &rho_ext);
        let rho_ext = sum(&rho_final, &init_end.p);
        persist &= no_u_turn(&init_end.p_sharp, &end.p_sharp, &rho_ext);

        persist.then_some((beg, end))
    }
}

/// One NUTS transition from `current` (whose momentum is resampled).
pub(crate) fn transition<D: LogDensity + ?Sized, R: Rng>(
    target: &D,
    metric: &Metric,
    eps: f64,
    max_depth: usize,
    current: &Point,
    rng: &mut R,
) -> (Point, TransitionInfo) {
    let mut z = current.clone();
    metric.sample_momentum(rng, &mut z.p);
    let h0 = metric.hamiltonian(&z);

    let mut z_fwd = z.clone();
    let mut z_bck = z.clone();
    let mut z_sample = z.clone();
    let mut z_propose = z.clone();

    let p_sharp = metric.velocity(&z.p);
    // Outer edges of the whole trajectory (bck_bck, fwd_fwd) and the inner
    // edges adjacent to the join (bck_fwd, fwd_bck).
    let mut fwd_fwd = Edge {
        p: z.p.clone(),
        p_sharp: p_sharp.clone(),
    };
    let mut fwd_bck = Edge {
        p: z.p.clone(),
        p_sharp: p_sharp.clone(),
    };
    let mut bck_fwd = Edge {
        p: z.p.clone(),
        p_sharp: p_sharp.clone(),
    };
    let mut bck_bck = Edge {
        p: z.p.clone(),
        p_sharp,
    };
    let mut rho = z.p.clone();
    let mut log_sum_weight = 0.0;

    let mut s = Sampler {
        target,
        metric,
        eps,
        rng,
        h0,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };

    let mut depth = 0;
    while depth < max_depth {
        let mut rho_fwd = vec![0.0; rho.len()];
        let mut rho_bck = vec![0.0; rho.len()];
        let mut lsw_subtree = f64::NEG_INFINITY;

        let forward = s.rng.random::<f64>() > 0.5;
        let built = if forward {
            rho_bck.clone_from(&rho);
            // The old trajectory becomes the backward part; its forward
            // edge sits next to the new subtree.
            bck_fwd = Edge {
                p: fwd_fwd.p.clone(),
                p_sharp: fwd_fwd.p_sharp.clone(),
            };
            let mut zz = z_fwd.clone();
            let r = s.build_tree(depth, &mut zz, &mut z_propose, &mut rho_fwd, &mut lsw_subtree, 1.0);
            z_fwd = zz;
            r.map(|(beg, end)| {
                fwd_bck = beg;
                fwd_fwd = end;
            })
        } else {
            rho_fwd.clone_from(&rho);
            fwd_bck = Edge {
                p: bck_bck.p.clone(),
                p_sharp: bck_bck.p_sharp.clone(),
            };
            let mut zz = z_bck.clone();
            let r = s.build_tree(depth, &mut zz, &mut z_propose, &mut rho_bck, &mut lsw_subtree, -1.0);
            z_bck = zz;
            r.map(|(beg, end)| {
                bck_fwd = beg;
                bck_bck = end;
            })
        };
        if built.is_none() {
            break;
        }
        depth += 1;

        if lsw_subtree > log_sum_weight {
            z_sample.clone_from(&z_propose);
        } else {
            let accept = (lsw_subtree - log_sum_weight).exp();
            if s.rng.random::<f64>() < accept {
                z_sample.clone_from(&z_propose);
            }
        }
        log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

        rho = sum(&rho_bck, &rho_fwd);
        let mut persist = no_u_turn(&bck_bck.p_sharp, &fwd_fwd.p_sharp, &rho);
        let rho_ext = sum(&rho_bck, &fwd_bck.p);
        persist &= no_u_turn(&bck_bck.p_sharp, &fwd_bck.p_sharp, &rho_ext);
        let rho_ext = sum(&rho_fwd, &bck_fwd.p);
        persist &= no_u_turn(&bck_fwd.p_sharp, &fwd_fwd.p_sharp, &rho_ext);
        if !persist {
            break;
        }
    }

    let info = TransitionInfo {
        accept_stat: if s.n_leapfrog > 0 {
            s.sum_metro_prob / s.n_leapfrog as f64
        } else {
            0.0
        },
        n_leapfrog: s.n_leapfrog,
        depth,
        divergent: s.divergent,
    };
    (z_sample, info)
}
