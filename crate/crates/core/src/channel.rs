//! Small-scale fading, imperfect CSIT and the outage-margin effective gain.
//!
//! A link is scheduled against `phi`, the `epsilon` quantile of `l |H|^2`
//! given the estimate. Conditioned on `Hhat`, `2|H|^2/sigma_e2` is a
//! noncentral chi-square with two degrees of freedom.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{invalid, Result};
use crate::scenario::{CsitModel, Topology};

/// Poisson mass left out of the mixture sum.
const TAIL_EPS: f64 = 1e-16;
/// Probability-space tolerance of the inverse.
const INV_TOL: f64 = 1e-12;

fn check_args(noncentrality: f64, x: f64) -> Result<()> {
    if !(noncentrality >= 0.0) || !noncentrality.is_finite() {
        return Err(invalid(format!("noncentrality must be finite and >= 0, got {noncentrality}")));
    }
    if x.is_nan() {
        return Err(invalid("argument is NaN"));
    }
    Ok(())
}

/// CDF and density of the two-degree-of-freedom noncentral chi-square at `x`.
///
/// The law is a Poisson(λ/2) mixture of central chi-squares with 2+2j degrees
/// of freedom. Terms are summed outward from the Poisson mode so both tails
/// stop early, and the central CDFs follow from a single incomplete gamma.
fn cdf_pdf(lambda: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, if lambda == 0.0 && x == 0.0 { 0.5 } else { 0.0 });
    }
    let y = 0.5 * x;
    if lambda == 0.0 {
        return (-(-y).exp_m1(), 0.5 * (-y).exp());
    }
    let h = 0.5 * lambda;
    let j0 = h.floor();
    let w0 = (-h + j0 * h.ln() - ln_gamma(j0 + 1.0)).exp();
    let t0 = (-y + j0 * y.ln() - ln_gamma(j0 + 1.0)).exp();
    let g0 = gamma_lr(j0 + 1.0, y);

    let mut cdf = w0 * g0;
    let mut pdf = w0 * t0;

    // Upward from the mode.
    let (mut w, mut t, mut g, mut j) = (w0, t0, g0, j0);
    loop {
        j += 1.0;
        w *= h / j;
        t *= y / j;
        g = (g - t).max(0.0);
        cdf += w * g;
        pdf += w * t;
        let ratio = h / (j + 1.0);
        if ratio < 1.0 && w * ratio / (1.0 - ratio) < TAIL_EPS {
            break;
        }
    }

    // Downward from the mode.
    let (mut w, mut t, mut g, mut j) = (w0, t0, g0, j0);
    while j > 0.0 {
        g = (g + t).min(1.0);
        w *= j / h;
        t *= j / y;
        j -= 1.0;
        cdf += w * g;
        pdf += w * t;
        // Remaining mass is at most j terms each no larger than w.
        if w * (j + 1.0) < TAIL_EPS {
            break;
        }
    }
    (cdf.clamp(0.0, 1.0), 0.5 * pdf)
}

/// CDF of χ'²(2, `noncentrality`) at `x`.
pub fn noncentral_chi2_cdf(noncentrality: f64, x: f64) -> Result<f64> {
    check_args(noncentrality, x)?;
    Ok(cdf_pdf(noncentrality, x).0)
}

/// Density of χ'²(2, `noncentrality`) at `x`.
pub fn noncentral_chi2_pdf(noncentrality: f64, x: f64) -> Result<f64> {
    check_args(noncentrality, x)?;
    Ok(cdf_pdf(noncentrality, x).1)
}

/// Quantile of χ'²(2, `noncentrality`).
///
/// Safeguarded Newton iteration inside a bisection bracket, started from the
/// normal approximation.
pub fn noncentral_chi2_inv_cdf(noncentrality: f64, prob: f64) -> Result<f64> {
    check_args(noncentrality, 0.0)?;
    if !(prob > 0.0 && prob < 1.0) {
        return Err(invalid(format!("probability must lie in (0, 1), got {prob}")));
    }
    let lambda = noncentrality;
    if lambda == 0.0 {
        return Ok(-2.0 * (-prob).ln_1p());
    }
    let mut lo = 0.0;
    let mut hi = lambda + 50.0 + 20.0 * (lambda + 25.0).sqrt();
    while cdf_pdf(lambda, hi).0 < prob {
        lo = hi;
        hi *= 2.0;
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(prob);
    let mut x = (2.0 + lambda + z * (4.0 + 4.0 * lambda).sqrt()).clamp(lo, hi);
    if x <= lo || x >= hi {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let (f, d) = cdf_pdf(lambda, x);
        let err = f - prob;
        if err.abs() <= INV_TOL {
            return Ok(x);
        }
        if err < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = if d > 0.0 { x - err / d } else { f64::NAN };
        x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Effective gain `phi` of a link with estimate `hhat`, long-term gain `l`.
///
/// Scheduling `rate <= g log2(1 + p phi)` gives an outage probability of
/// exactly `epsilon` when `H | Hhat ~ CN(Hhat, sigma_e2)`.
pub fn effective_gain_phi(hhat: Complex64, l: f64, sigma_e2: f64, epsilon: f64) -> f64 {
    let mag2 = hhat.norm_sqr();
    if sigma_e2 <= 0.0 {
        return l * mag2;
    }
    let lambda = mag2 / (0.5 * sigma_e2);
    let q = noncentral_chi2_inv_cdf(lambda, epsilon).expect("validated outage target");
    0.5 * l * sigma_e2 * q
}

/// Standard-normal draws behind one link: two for the channel, two for the error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDraw(pub [f64; 4]);

impl LinkDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut z = [0.0; 4];
        for v in &mut z {
            *v = rng.sample(StandardNormal);
        }
        Self(z)
    }

    /// True channel and estimate `(H, Hhat)` under `model`.
    pub fn realize(&self, sigma_e2: f64, model: CsitModel) -> (Complex64, Complex64) {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = Complex64::new(self.0[0], self.0[1]) * s;
        let e = Complex64::new(self.0[2], self.0[3]) * s * sigma_e2.sqrt();
        match model {
            CsitModel::Mmse => {
                let hhat = a * (1.0 - sigma_e2).max(0.0).sqrt();
                (hhat - e, hhat)
            }
            CsitModel::Forward => (a, a + e),
        }
    }
}

/// Links from one transmitter to its receivers on every subchannel.
/// Entries are stored subchannel-major: index `n * receivers + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSet {
    pub subchannels: usize,
    pub receivers: usize,
    pub h: Vec<Complex64>,
    pub hhat: Vec<Complex64>,
    pub gains: Vec<f64>,
    pub phi: Vec<f64>,
}

impl LinkSet {
    pub fn from_draws(
        draws: &[LinkDraw],
        gains: &[f64],
        subchannels: usize,
        sigma_e2: f64,
        epsilon: f64,
        model: CsitModel,
    ) -> Self {
        let receivers = gains.len();
        assert_eq!(draws.len(), subchannels * receivers);
        let mut h = Vec::with_capacity(draws.len());
        let mut hhat = Vec::with_capacity(draws.len());
        let mut phi = Vec::with_capacity(draws.len());
        for (i, d) in draws.iter().enumerate() {
            let (hv, hh) = d.realize(sigma_e2, model);
            let l = gains[i % receivers];
            h.push(hv);
            hhat.push(hh);
            phi.push(effective_gain_phi(hh, l, sigma_e2, epsilon));
        }
        Self { subchannels, receivers, h, hhat, gains: gains.to_vec(), phi }
    }

    pub fn idx(&self, n: usize, k: usize) -> usize {
        n * self.receivers + k
    }

    /// Realized gain `l |H|^2` used by the decoder.
    pub fn true_gain(&self, n: usize, k: usize) -> f64 {
        let i = self.idx(n, k);
        self.gains[k] * self.h[i].norm_sqr()
    }

    /// Gain `l |Hhat|^2` a perfect-CSIT design would assume.
    pub fn nominal_gain(&self, n: usize, k: usize) -> f64 {
        let i = self.idx(n, k);
        self.gains[k] * self.hhat[i].norm_sqr()
    }
}

/// Channel state of every cluster for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSnapshot {
    pub clusters: Vec<LinkSet>,
}

pub fn draw_links<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<LinkDraw> {
    (0..count).map(|_| LinkDraw::sample(rng)).collect()
}

/// Draws fading and CSIT for every server-to-receiver link of the cell.
pub fn draw_channel<R: Rng + ?Sized>(
    topology: &Topology,
    subchannels: usize,
    sigma_e2: f64,
    epsilon: f64,
    model: CsitModel,
    rng: &mut R,
) -> ChannelSnapshot {
    let clusters = topology
        .clusters
        .iter()
        .map(|c| {
            let draws = draw_links(subchannels * c.receiver_gains.len(), rng);
            LinkSet::from_draws(&draws, &c.receiver_gains, subchannels, sigma_e2, epsilon, model)
        })
        .collect();
    ChannelSnapshot { clusters }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_topology, ScenarioConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Modified Bessel I0 by its power series.
    fn bessel_i0(z: f64) -> f64 {
        let q = 0.25 * z * z;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..500 {
            term *= q / (k as f64 * k as f64);
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum
    }

    fn oracle_pdf(lambda: f64, x: f64) -> f64 {
        0.5 * (-(x + lambda) / 2.0).exp() * bessel_i0((lambda * x).sqrt())
    }

    /// Composite Simpson integral of the density.
    fn oracle_cdf(lambda: f64, x: f64) -> f64 {
        let n = 20_000;
        let h = x / n as f64;
        let mut s = oracle_pdf(lambda, 0.0) + oracle_pdf(lambda, x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * oracle_pdf(lambda, i as f64 * h);
        }
        s * h / 3.0
    }

    fn oracle_inv(lambda: f64, p: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, lambda + 100.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if oracle_cdf(lambda, mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn test_central_case_is_exponential() {
        for p in [0.01, 0.05, 0.5, 0.9] {
            let x = noncentral_chi2_inv_cdf(0.0, p).unwrap();
            assert!((x - (-2.0 * (1.0 - p).ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn test_round_trip() {
        let x = noncentral_chi2_inv_cdf(5.0, 0.05).unwrap();
        assert!((noncentral_chi2_cdf(5.0, x).unwrap() - 0.05).abs() < 1e-9);
    }

    #[test]
    fn test_cdf_matches_quadrature() {
        for &lambda in &[0.5, 3.0, 10.0, 40.0] {
            for &x in &[0.5, 2.0, 8.0, 20.0, 60.0] {
                let got = noncentral_chi2_cdf(lambda, x).unwrap();
                let want = oracle_cdf(lambda, x);
                assert!((got - want).abs() < 1e-9, "lambda {lambda} x {x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn test_quantile_matches_quadrature() {
        let got = noncentral_chi2_inv_cdf(10.0, 0.05).unwrap();
        let want = oracle_inv(10.0, 0.05);
        assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn test_pdf_matches_bessel_form() {
        for &(lambda, x) in &[(2.0, 1.0), (10.0, 7.0), (30.0, 25.0)] {
            let got = noncentral_chi2_pdf(lambda, x).unwrap();
            let want = oracle_pdf(lambda, x);
            assert!((got - want).abs() < 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn test_large_noncentrality() {
        let lambda = 20_000.0;
        let x = noncentral_chi2_inv_cdf(lambda, 0.05).unwrap();
        assert!((noncentral_chi2_cdf(lambda, x).unwrap() - 0.05).abs() < 1e-10);
        // Normal approximation is close at this size.
        let approx = 2.0 + lambda - 1.6449 * (4.0 + 4.0 * lambda).sqrt();
        assert!((x - approx).abs() / approx < 1e-3);
    }

    #[test]
    fn test_rejects_bad_probability() {
        assert!(noncentral_chi2_inv_cdf(1.0, 0.0).is_err());
        assert!(noncentral_chi2_inv_cdf(1.0, 1.0).is_err());
        assert!(noncentral_chi2_inv_cdf(-1.0, 0.5).is_err());
    }

    #[test]
    fn test_phi_central_closed_form() {
        let phi = effective_gain_phi(Complex64::new(0.0, 0.0), 1.0, 1.0, 0.05);
        assert!((phi - 0.051293).abs() < 1e-6);
    }

    #[test]
    fn test_phi_perfect_csit_limit() {
        let hhat = Complex64::new(0.8, -0.3);
        let exact = effective_gain_phi(hhat, 0.5, 0.0, 0.05);
        assert_eq!(exact, 0.5 * hhat.norm_sqr());
        let near = effective_gain_phi(hhat, 0.5, 1e-6, 0.05);
        assert!((near - exact).abs() / exact < 1e-2);
    }

    fn outage_fraction(hhat: Complex64, l: f64, s2: f64, eps: f64, seed: u64) -> f64 {
        let phi = effective_gain_phi(hhat, l, s2, eps);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 100_000;
        let sd = (s2 / 2.0).sqrt();
        let mut fails = 0;
        for _ in 0..n {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let h = hhat + Complex64::new(re, im) * sd;
            if l * h.norm_sqr() < phi {
                fails += 1;
            }
        }
        fails as f64 / n as f64
    }

    #[test]
    fn test_outage_calibration_grid() {
        let mut seed = 0;
        for &l in &[1e-3, 0.5, 1.0] {
            for &s2 in &[0.01, 0.1, 0.5] {
                for &eps in &[0.01, 0.05, 0.2] {
                    seed += 1;
                    let hhat = Complex64::new(0.7, 0.4);
                    let f = outage_fraction(hhat, l, s2, eps, seed);
                    assert!((f - eps).abs() < 0.01, "l {l} s2 {s2} eps {eps}: {f}");
                }
            }
        }
    }

    #[test]
    fn test_forward_draw_without_error_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let d = LinkDraw::sample(&mut rng);
            for model in [CsitModel::Forward, CsitModel::Mmse] {
                let (h, hhat) = d.realize(0.0, model);
                assert_eq!(h, hhat);
            }
        }
    }

    #[test]
    fn test_channel_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 1_000_000;
        for model in [CsitModel::Forward, CsitModel::Mmse] {
            let (mut p, mut e) = (0.0, 0.0);
            for _ in 0..n {
                let (h, hhat) = LinkDraw::sample(&mut rng).realize(0.01, model);
                p += h.norm_sqr();
                e += (hhat - h).norm_sqr();
            }
            assert!((p / n as f64 - 1.0).abs() < 0.01);
            assert!((e / n as f64 / 0.01 - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn test_draw_channel_shapes() {
        let cfg = ScenarioConfig::default();
        let topo = build_topology(&cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let snap = draw_channel(&topo, 4, 0.01, 0.05, CsitModel::Mmse, &mut rng);
        assert_eq!(snap.clusters.len(), 7);
        assert_eq!(snap.clusters[0].receivers, 16);
        assert_eq!(snap.clusters[3].receivers, 5);
        for ls in &snap.clusters {
            assert_eq!(ls.phi.len(), 4 * ls.receivers);
            assert!(ls.phi.iter().all(|p| *p >= 0.0));
        }
    }

    proptest! {
        #[test]
        fn prop_phi_monotone_in_estimate(a in 0.0f64..3.0, da in 0.0f64..1.0,
                                         s2 in 0.001f64..1.0, eps in 0.01f64..0.5) {
            let lo = effective_gain_phi(Complex64::new(a, 0.0), 1.0, s2, eps);
            let hi = effective_gain_phi(Complex64::new(a + da, 0.0), 1.0, s2, eps);
            prop_assert!(hi >= lo * (1.0 - 1e-9));
        }

        #[test]
        fn prop_phi_monotone_in_epsilon(a in 0.0f64..3.0, s2 in 0.001f64..1.0,
                                        e1 in 0.01f64..0.5, de in 0.0f64..0.4) {
            let h = Complex64::new(a, 0.2);
            let lo = effective_gain_phi(h, 1.0, s2, e1);
            let hi = effective_gain_phi(h, 1.0, s2, e1 + de);
            prop_assert!(hi >= lo * (1.0 - 1e-9));
        }

        #[test]
        fn prop_inverse_round_trip(lambda in 0.0f64..500.0, p in 0.001f64..0.999) {
            let x = noncentral_chi2_inv_cdf(lambda, p).unwrap();
            prop_assert!(x >= 0.0);
            prop_assert!((noncentral_chi2_cdf(lambda, x).unwrap() - p).abs() < 1e-10);
        }
    }
}
