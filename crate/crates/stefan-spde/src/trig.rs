//! Exact integrals over [0, 1] of products of sines and cosines.
//!
//! A [`TrigPoly`] is a finite sum of c·sin(fπx) and c·cos(fπx). Products
//! expand by the product-to-sum identities and integrate in closed form.

use std::f64::consts::{PI, SQRT_2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wave {
    Sin,
    Cos,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub wave: Wave,
    pub freq: u32,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrigPoly {
    pub terms: Vec<Term>,
}

impl TrigPoly {
    pub fn term(wave: Wave, freq: u32, coef: f64) -> Self {
        Self { terms: vec![Term { wave, freq, coef }] }
    }

    /// √2·sin(kπx).
    pub fn sine_mode(k: u32) -> Self {
        Self::term(Wave::Sin, k, SQRT_2)
    }

    /// d/dx of √2·sin(kπx).
    pub fn sine_mode_prime(k: u32) -> Self {
        Self::term(Wave::Cos, k, SQRT_2 * PI * k as f64)
    }

    pub fn scale(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.coef *= s;
        }
        self
    }

    pub fn mul(&self, other: &TrigPoly) -> TrigPoly {
        let mut terms = Vec::with_capacity(2 * self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                product(a, b, &mut terms);
            }
        }
        TrigPoly { terms }.collect()
    }

    pub fn derivative(&self) -> TrigPoly {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let w = PI * t.freq as f64;
                match t.wave {
                    Wave::Sin => Term { wave: Wave::Cos, freq: t.freq, coef: t.coef * w },
                    Wave::Cos => Term { wave: Wave::Sin, freq: t.freq, coef: -t.coef * w },
                }
            })
            .collect();
        TrigPoly { terms }
    }

    /// Merge equal terms and drop zeros, in a canonical order.
    fn collect(mut self) -> Self {
        self.terms.sort_by_key(|t| (t.wave == Wave::Cos, t.freq));
        let mut out: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in self.terms {
            if t.coef == 0.0 || (t.wave == Wave::Sin && t.freq == 0) {
                continue;
            }
            match out.last_mut() {
                Some(last) if last.wave == t.wave && last.freq == t.freq => last.coef += t.coef,
                _ => out.push(t),
            }
        }
        Self { terms: out }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let a = PI * t.freq as f64 * x;
                t.coef * if t.wave == Wave::Sin { a.sin() } else { a.cos() }
            })
            .sum()
    }

    /// ∫₀¹.
    pub fn integral(&self) -> f64 {
        self.terms.iter().map(term_integral).sum()
    }

    pub fn max_freq(&self) -> u32 {
        self.terms.iter().map(|t| t.freq).max().unwrap_or(0)
    }
}

fn term_integral(t: &Term) -> f64 {
    match t.wave {
        Wave::Cos => {
            if t.freq == 0 {
                t.coef
            } else {
                0.0
            }
        }
        Wave::Sin => {
            if t.freq % 2 == 1 {
                2.0 * t.coef / (PI * t.freq as f64)
            } else {
                0.0
            }
        }
    }
}

fn push(out: &mut Vec<Term>, wave: Wave, freq: i64, coef: f64) {
    let (freq, coef) = match wave {
        Wave::Cos => (freq.unsigned_abs(), coef),
        Wave::Sin if freq < 0 => (freq.unsigned_abs(), -coef),
        Wave::Sin => (freq as u64, coef),
    };
    out.push(Term { wave, freq: freq as u32, coef });
}

fn product(a: &Term, b: &Term, out: &mut Vec<Term>) {
    let (fa, fb) = (a.freq as i64, b.freq as i64);
    let c = 0.5 * a.coef * b.coef;
    match (a.wave, b.wave) {
        (Wave::Sin, Wave::Sin) => {
            push(out, Wave::Cos, fa - fb, c);
            push(out, Wave::Cos, fa + fb, -c);
        }
        (Wave::Cos, Wave::Cos) => {
            push(out, Wave::Cos, fa - fb, c);
            push(out, Wave::Cos, fa + fb, c);
        }
        (Wave::Sin, Wave::Cos) => {
            push(out, Wave::Sin, fa + fb, c);
            push(out, Wave::Sin, fa - fb, c);
        }
        (Wave::Cos, Wave::Sin) => {
            push(out, Wave::Sin, fb + fa, c);
            push(out, Wave::Sin, fb - fa, c);
        }
    }
}

/// Derivative order of a basis factor √2·sin(kπx).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Value,
    Slope,
}

fn basis_factor(k: u32, f: Factor) -> Term {
    match f {
        Factor::Value => Term { wave: Wave::Sin, freq: k, coef: SQRT_2 },
        Factor::Slope => Term { wave: Wave::Cos, freq: k, coef: SQRT_2 * PI * k as f64 },
    }
}

/// Table `[j−1, p−1] = ∫₀¹ w · D^fj φ_j · D^fp φ_p` for j ≤ `nj`, p ≤ `np`.
pub fn weighted_table(w: &TrigPoly, fj: Factor, nj: usize, fp: Factor, np: usize) -> ndarray::Array2<f64> {
    let mut out = ndarray::Array2::zeros((nj, np));
    let mut buf = Vec::with_capacity(4);
    for j in 0..nj {
        let tj = basis_factor(j as u32 + 1, fj);
        for p in 0..np {
            let tp = basis_factor(p as u32 + 1, fp);
            buf.clear();
            product(&tj, &tp, &mut buf);
            let mut s = 0.0;
            for wt in &w.terms {
                for bt in &buf {
                    let mut tmp = Vec::with_capacity(2);
                    product(wt, bt, &mut tmp);
                    for t in &tmp {
                        s += term_integral(t);
                    }
                }
            }
            out[[j, p]] = s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(f: impl Fn(f64) -> f64) -> f64 {
        let n = 20000;
        (0..n).map(|i| f((i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64
    }

    #[test]
    fn orthonormal_sines() {
        let t = weighted_table(&TrigPoly::term(Wave::Cos, 0, 1.0), Factor::Value, 6, Factor::Value, 6);
        for j in 0..6 {
            for p in 0..6 {
                let e = if j == p { 1.0 } else { 0.0 };
                assert!((t[[j, p]] - e).abs() < 1e-14);
            }
        }
        let t = weighted_table(&TrigPoly::term(Wave::Cos, 0, 1.0), Factor::Slope, 6, Factor::Slope, 6);
        assert!((t[[2, 2]] - 9.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn products_match_midpoint_rule() {
        let w = TrigPoly::sine_mode(3).mul(&TrigPoly::sine_mode_prime(2));
        let v = w.mul(&TrigPoly::sine_mode(5)).mul(&TrigPoly::sine_mode_prime(1));
        let exact = v.integral();
        let approx = quad(|x| v.eval(x));
        assert!((exact - approx).abs() < 1e-7);
        let direct = quad(|x| {
            let s = |k: f64| SQRT_2 * (k * PI * x).sin();
            let c = |k: f64| SQRT_2 * k * PI * (k * PI * x).cos();
            s(3.0) * c(2.0) * s(5.0) * c(1.0)
        });
        assert!((exact - direct).abs() < 1e-7);
    }

    #[test]
    fn derivative_matches_difference() {
        let w = TrigPoly::sine_mode(2).mul(&TrigPoly::sine_mode_prime(3));
        let d = w.derivative();
        let h = 1e-6;
        for i in 1..10 {
            let x = i as f64 / 10.0;
            let fd = (w.eval(x + h) - w.eval(x - h)) / (2.0 * h);
            assert!((fd - d.eval(x)).abs() < 1e-5);
        }
    }

    #[test]
    fn table_against_quadrature() {
        let w = TrigPoly::sine_mode(2).mul(&TrigPoly::sine_mode(2));
        let t = weighted_table(&w, Factor::Slope, 4, Factor::Value, 7);
        for j in 0..4 {
            for p in 0..7 {
                let q = quad(|x| {
                    w.eval(x)
                        * SQRT_2
                        * (j + 1) as f64
                        * PI
                        * ((j + 1) as f64 * PI * x).cos()
                        * SQRT_2
                        * ((p + 1) as f64 * PI * x).sin()
                });
                assert!((t[[j, p]] - q).abs() < 1e-6, "{j} {p}");
            }
        }
    }
}
