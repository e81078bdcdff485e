//! Test-only oracles, independent of the library's closed forms.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

/// `∫₀ᵗ e^{-2θ(t-s)} ds` by quadrature.
pub fn ou_integral_variance_quadrature(theta: f64, t: f64) -> f64 {
    integrate(&|s: f64| (-2.0 * theta * (t - s)).exp(), 0.0, t, 1e-14)
}

/// `∫₀ᵗ E[K_s] ds` by quadrature, with `E[K_s] = μ + (k0 - μ)e^{-θs}`.
pub fn premium_mean_integral_quadrature(theta: f64, mu: f64, k0: f64, t: f64) -> f64 {
    integrate(&|s: f64| mu + (k0 - mu) * (-theta * s).exp(), 0.0, t, 1e-14)
}

/// OU path sampled every `dt` with exact Gaussian transitions, started at `mu`.
pub fn simulate_ou(theta: f64, mu: f64, sigma: f64, n: usize, dt: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let a = (-theta * dt).exp();
    let sd = sigma * ((1.0 - a * a) / (2.0 * theta)).sqrt();
    let mut k = mu;
    let mut out = Vec::with_capacity(n);
    out.push(k);
    for _ in 1..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        k = mu + (k - mu) * a + sd * z;
        out.push(k);
    }
    out
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
