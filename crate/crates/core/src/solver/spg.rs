//! Nonmonotone spectral projected gradient on a box.

use alloc::vec;
use alloc::vec::Vec;

const MEMORY: usize = 10;
const SUFFICIENT_DECREASE: f64 = 1e-4;
const STEP_MIN: f64 = 1e-10;
const STEP_MAX: f64 = 1e10;

pub(crate) trait Objective {
    /// Value to minimize.
    fn value(&mut self, x: &[f64]) -> f64;
    fn value_grad(&mut self, x: &[f64]) -> (f64, Vec<f64>);
}

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

fn clamp_into(x: &mut [f64], lo: f64, hi: f64) {
    for v in x {
        *v = v.clamp(lo, hi);
    }
}

fn projected_step_norm(x: &[f64], g: &[f64], lo: f64, hi: f64) -> f64 {
    x.iter()
        .zip(g)
        .map(|(xi, gi)| crate::math::abs((xi - gi).clamp(lo, hi) - xi))
        .fold(0.0, f64::max)
}

pub(crate) fn minimize<F: Objective>(f: &mut F, x0: &[f64], lo: f64, hi: f64, tol: f64, max_iter: usize) -> Outcome {
    let mut x = x0.to_vec();
    clamp_into(&mut x, lo, hi);
    let (mut fx, mut g) = f.value_grad(&x);
    let mut history = vec![fx];
    let pg = projected_step_norm(&x, &g, lo, hi);
    let mut alpha = if pg > 0.0 { (1.0 / pg).clamp(STEP_MIN, STEP_MAX) } else { 1.0 };
    let mut iterations = 0;
    let mut trial = vec![0.0; x.len()];
    let mut d = vec![0.0; x.len()];
    while iterations < max_iter {
        if projected_step_norm(&x, &g, lo, hi) <= tol {
            break;
        }
        iterations += 1;
        for i in 0..x.len() {
            d[i] = (x[i] - alpha * g[i]).clamp(lo, hi) - x[i];
        }
        let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if gd >= 0.0 {
            break;
        }
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let f_new = loop {
            for i in 0..x.len() {
                trial[i] = (x[i] + t * d[i]).clamp(lo, hi);
            }
            let ft = f.value(&trial);
            if ft <= reference + SUFFICIENT_DECREASE * t * gd {
                break Some(ft);
            }
            // safeguarded quadratic backtrack
            let denom = 2.0 * (ft - fx - t * gd);
            let mut next = if denom > 0.0 { -gd * t * t / denom } else { 0.5 * t };
            if !(next >= 0.1 * t && next <= 0.9 * t) {
                next = 0.5 * t;
            }
            t = next;
            if t < 1e-14 {
                break None;
            }
        };
        let Some(_) = f_new else { break };
        let (f_trial, g_trial) = f.value_grad(&trial);
        let mut sy = 0.0;
        let mut ss = 0.0;
        for i in 0..x.len() {
            let s = trial[i] - x[i];
            ss += s * s;
            sy += s * (g_trial[i] - g[i]);
        }
        alpha = if sy > 0.0 { (ss / sy).clamp(STEP_MIN, STEP_MAX) } else { STEP_MAX };
        x.copy_from_slice(&trial);
        fx = f_trial;
        g = g_trial;
        history.push(fx);
        if history.len() > MEMORY {
            history.remove(0);
        }
        if ss == 0.0 {
            break;
        }
    }
    Outcome {
        x,
        value: fx,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        center: Vec<f64>,
        scale: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn value(&mut self, x: &[f64]) -> f64 {
            x.iter()
                .zip(&self.center)
                .zip(&self.scale)
                .map(|((x, c), s)| s * (x - c) * (x - c))
                .sum()
        }

        fn value_grad(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
            let g = x
                .iter()
                .zip(&self.center)
                .zip(&self.scale)
                .map(|((x, c), s)| 2.0 * s * (x - c))
                .collect();
            (self.value(x), g)
        }
    }

    #[test]
    fn finds_clamped_minimum_of_separable_quadratic() {
        let mut q = Quadratic {
            center: vec![0.3, -1.0, 2.0, 0.55],
            scale: vec![1.0, 50.0, 0.1, 1000.0],
        };
        let out = minimize(&mut q, &[0.5; 4], 0.1, 0.9, 1e-10, 1000);
        let want = [0.3, 0.1, 0.9, 0.55];
        for (a, b) in out.x.iter().zip(want) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}
