//! Rational continuous filters, their bilinear discretization, and a
//! transposed direct-form II realization.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Evaluates a polynomial given in ascending powers at `x`.
pub fn polyval(coeffs: &[f64], x: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * x + c)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_pow(base: &[f64], exp: usize) -> Vec<f64> {
    (0..exp).fold(vec![1.0], |acc, _| poly_mul(&acc, base))
}

/// Continuous transfer function `num(s) / den(s)`, coefficients ascending in `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousTf {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl ContinuousTf {
    pub fn eval(&self, s: Complex64) -> Complex64 {
        polyval(&self.num, s) / polyval(&self.den, s)
    }

    pub fn order(&self) -> usize {
        self.den.len() - 1
    }

    /// Tustin transform: `s = (2/dt) (1 - z^-1) / (1 + z^-1)`.
    pub fn bilinear(&self, dt: f64) -> Result<DiscreteTf> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sample time must be positive, got {dt}"
            )));
        }
        let n = self.order();
        if self.num.len() > n + 1 {
            return Err(Error::InvalidParameter("improper transfer function".into()));
        }
        let k = 2.0 / dt;
        let minus = [1.0, -1.0];
        let plus = [1.0, 1.0];
        let map = |coeffs: &[f64]| {
            let mut out = vec![0.0; n + 1];
            let mut gain = 1.0;
            for (p, &c) in coeffs.iter().enumerate() {
                let term = poly_mul(&poly_pow(&minus, p), &poly_pow(&plus, n - p));
                for (o, t) in out.iter_mut().zip(term) {
                    *o += c * gain * t;
                }
                gain *= k;
            }
            out
        };
        let b = map(&self.num);
        let a = map(&self.den);
        let a0 = a[0];
        Ok(DiscreteTf {
            b: b.iter().map(|v| v / a0).collect(),
            a: a.iter().map(|v| v / a0).collect(),
            dt,
        })
    }
}

/// Discrete transfer function in powers of `z^-1`, normalized so `a[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTf {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub dt: f64,
}

impl DiscreteTf {
    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// `H(e^{j omega dt})`.
    pub fn frequency_response(&self, omega: f64) -> Complex64 {
        let zinv = Complex64::from_polar(1.0, -omega * self.dt);
        polyval(&self.b, zinv) / polyval(&self.a, zinv)
    }
}

/// Transposed direct-form II realization of a [`DiscreteTf`].
#[derive(Debug, Clone, PartialEq)]
pub struct IirFilter {
    tf: DiscreteTf,
    state: Vec<f64>,
}

impl IirFilter {
    pub fn new(tf: DiscreteTf) -> Self {
        let order = tf.a.len() - 1;
        Self {
            tf,
            state: vec![0.0; order],
        }
    }

    pub fn tf(&self) -> &DiscreteTf {
        &self.tf
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = 0.0);
    }

    pub fn step(&mut self, u: f64) -> f64 {
        let b = &self.tf.b;
        let a = &self.tf.a;
        let y = b[0] * u + self.state.first().copied().unwrap_or(0.0);
        let n = self.state.len();
        for i in 0..n {
            let next = if i + 1 < n { self.state[i + 1] } else { 0.0 };
            self.state[i] = next + b[i + 1] * u - a[i + 1] * y;
        }
        y
    }

    /// Loads the state a constant input `u` settles to.
    pub fn settle(&mut self, u: f64) {
        let y = self.tf.dc_gain() * u;
        let n = self.state.len();
        for i in (0..n).rev() {
            let next = if i + 1 < n { self.state[i + 1] } else { 0.0 };
            self.state[i] = next + self.tf.b[i + 1] * u - self.tf.a[i + 1] * y;
        }
    }
}

/// First-order lag `1 / (tau s + 1)` with step-invariant discretization:
/// `y_k = a y_{k-1} + (1 - a) u_k`, `a = exp(-dt / tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderLag {
    pole: f64,
    pub output: f64,
}

impl FirstOrderLag {
    pub fn new(tau: f64, dt: f64) -> Result<Self> {
        if !(tau > 0.0) || !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lag needs positive time constant and sample time (tau = {tau}, dt = {dt})"
            )));
        }
        Ok(Self {
            pole: (-dt / tau).exp(),
            output: 0.0,
        })
    }

    pub fn step(&mut self, u: f64) -> f64 {
        self.output = self.pole * self.output + (1.0 - self.pole) * u;
        self.output
    }

    pub fn reset(&mut self) {
        self.output = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_order_bilinear_matches_closed_form() {
        // 1/(s+1) at dt: b = [dt, dt]/(2+dt), a = [1, (dt-2)/(dt+2)]
        let tf = ContinuousTf {
            num: vec![1.0],
            den: vec![1.0, 1.0],
        };
        let dt = 0.1;
        let d = tf.bilinear(dt).unwrap();
        assert!((d.b[0] - dt / (2.0 + dt)).abs() < 1e-15);
        assert!((d.b[1] - dt / (2.0 + dt)).abs() < 1e-15);
        assert!((d.a[1] - (dt - 2.0) / (dt + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn settle_is_a_fixed_point() {
        let tf = ContinuousTf {
            num: vec![1.0, 0.03],
            den: vec![1.0, 0.05, 1e-3, 1e-5],
        };
        let mut f = IirFilter::new(tf.bilinear(1e-3).unwrap());
        f.settle(2.5);
        for _ in 0..10 {
            let y = f.step(2.5);
            assert!((y - 2.5).abs() < 1e-10, "{y}");
        }
        f.reset();
        assert!(f.state().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn lag_reaches_one_minus_inverse_e_after_tau() {
        let (tau, dt) = (0.05, 1e-3);
        let mut lag = FirstOrderLag::new(tau, dt).unwrap();
        let n = (tau / dt).round() as usize;
        let mut y = 0.0;
        for _ in 0..n {
            y = lag.step(3.0);
        }
        assert!((y - 3.0 * (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!(FirstOrderLag::new(0.0, dt).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let tf = ContinuousTf {
            num: vec![1.0, 1.0, 1.0],
            den: vec![1.0, 1.0],
        };
        assert!(tf.bilinear(1e-3).is_err());
        assert!(tf.bilinear(0.0).is_err());
    }
}
