//! Fixed-step RK4 engines.
//!
//! For a linear autonomous system x' = Gx one RK4 step of size h is exactly
//! x ← M x with M = I + hG + (hG)²/2 + (hG)³/6 + (hG)⁴/24. Small networks
//! build G explicitly on real coordinates of the Hermitian density matrix and
//! advance by repeated squaring of M, which is the same RK4 scheme evaluated
//! in O(log steps) matrix products. Larger networks step the density matrix
//! directly.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use super::generator::Generator;

/// Density matrix plus the two population accumulators.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct State {
    pub rho: Vec<C64>,
    pub sink: f64,
    pub loss: f64,
}

impl State {
    pub(crate) fn trace(&self, n: usize) -> f64 {
        (0..n).map(|m| self.rho[m * n + m].re).sum()
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.sink.is_finite()
            && self.loss.is_finite()
            && self.rho.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Number of RK4 substeps for `interval` so that each is no longer than `h`.
fn substeps(interval: f64, h: f64) -> usize {
    ((interval / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

pub(crate) struct DirectRk4 {
    gen: Generator,
    h: f64,
    k: [Vec<C64>; 4],
    tmp: Vec<C64>,
}

impl DirectRk4 {
    pub(crate) fn new(gen: Generator, h: f64) -> Self {
        let nn = gen.n() * gen.n();
        DirectRk4 {
            gen,
            h,
            k: std::array::from_fn(|_| vec![C64::new(0.0, 0.0); nn]),
            tmp: vec![C64::new(0.0, 0.0); nn],
        }
    }

    fn step(&mut self, state: &mut State, h: f64) {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        let (s1, l1) = self.gen.apply(&state.rho, k1);
        for (t, (r, k)) in tmp.iter_mut().zip(state.rho.iter().zip(k1.iter())) {
            *t = r + k * (0.5 * h);
        }
        let (s2, l2) = self.gen.apply(tmp, k2);
        for (t, (r, k)) in tmp.iter_mut().zip(state.rho.iter().zip(k2.iter())) {
            *t = r + k * (0.5 * h);
        }
        let (s3, l3) = self.gen.apply(tmp, k3);
        for (t, (r, k)) in tmp.iter_mut().zip(state.rho.iter().zip(k3.iter())) {
            *t = r + k * h;
        }
        let (s4, l4) = self.gen.apply(tmp, k4);
        let w = h / 6.0;
        for (i, r) in state.rho.iter_mut().enumerate() {
            *r += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * w;
        }
        state.sink += (s1 + 2.0 * (s2 + s3) + s4) * w;
        state.loss += (l1 + 2.0 * (l2 + l3) + l4) * w;
    }

    fn advance(&mut self, state: &mut State, interval: f64) {
        let m = substeps(interval, self.h);
        let h = interval / m as f64;
        for _ in 0..m {
            self.step(state, h);
        }
    }
}

/// Real coordinates of (ρ, sink, loss): diagonal populations, then
/// (Re ρ_mk, Im ρ_mk) for m < k, then sink and loss.
pub(crate) struct RealCoordinates {
    n: usize,
}

impl RealCoordinates {
    pub(crate) fn new(n: usize) -> Self {
        RealCoordinates { n }
    }

    pub(crate) fn dim(&self) -> usize {
        self.n * self.n + 2
    }

    pub(crate) fn pack(&self, state: &State) -> DVector<f64> {
        let n = self.n;
        let mut x = DVector::zeros(self.dim());
        for m in 0..n {
            x[m] = state.rho[m * n + m].re;
        }
        let mut idx = n;
        for m in 0..n {
            for k in (m + 1)..n {
                let z = state.rho[m * n + k];
                x[idx] = z.re;
                x[idx + 1] = z.im;
                idx += 2;
            }
        }
        x[idx] = state.sink;
        x[idx + 1] = state.loss;
        x
    }

    pub(crate) fn unpack(&self, x: &DVector<f64>, state: &mut State) {
        let n = self.n;
        for m in 0..n {
            state.rho[m * n + m] = C64::new(x[m], 0.0);
        }
        let mut idx = n;
        for m in 0..n {
            for k in (m + 1)..n {
                let z = C64::new(x[idx], x[idx + 1]);
                state.rho[m * n + k] = z;
                state.rho[k * n + m] = z.conj();
                idx += 2;
            }
        }
        state.sink = x[idx];
        state.loss = x[idx + 1];
    }
}

pub(crate) struct MatrixRk4 {
    coords: RealCoordinates,
    generator: DMatrix<f64>,
    h: f64,
    cache: Vec<(u64, DMatrix<f64>)>,
}

impl MatrixRk4 {
    pub(crate) fn new(gen: &Generator, h: f64) -> Self {
        let n = gen.n();
        let coords = RealCoordinates::new(n);
        let dim = coords.dim();
        let mut g = DMatrix::zeros(dim, dim);
        let mut basis = State {
            rho: vec![C64::new(0.0, 0.0); n * n],
            sink: 0.0,
            loss: 0.0,
        };
        let mut out = vec![C64::new(0.0, 0.0); n * n];
        let mut e = DVector::zeros(dim);
        // sink and loss never feed back, so their columns stay zero
        for col in 0..n * n {
            e.fill(0.0);
            e[col] = 1.0;
            coords.unpack(&e, &mut basis);
            let (ds, dl) = gen.apply(&basis.rho, &mut out);
            let deriv = State {
                rho: out.clone(),
                sink: ds,
                loss: dl,
            };
            g.set_column(col, &coords.pack(&deriv));
        }
        MatrixRk4 {
            coords,
            generator: g,
            h,
            cache: Vec::new(),
        }
    }

    /// RK4 transfer matrix over `interval`, built from 2^k steps of equal size
    /// no longer than `h`.
    fn transfer(&mut self, interval: f64) -> &DMatrix<f64> {
        let key = interval.to_bits();
        if let Some(pos) = self.cache.iter().position(|(k, _)| *k == key) {
            return &self.cache[pos].1;
        }
        let steps = substeps(interval, self.h).next_power_of_two();
        let h = interval / steps as f64;
        let dim = self.coords.dim();
        let hg = &self.generator * h;
        let eye = DMatrix::<f64>::identity(dim, dim);
        // Horner form of the degree-4 Taylor polynomial
        let mut m = &eye + &hg * 0.25;
        m = &eye + (&hg * m) * (1.0 / 3.0);
        m = &eye + (&hg * m) * 0.5;
        m = &eye + &hg * m;
        let mut remaining = steps;
        while remaining > 1 {
            m = &m * &m;
            remaining /= 2;
        }
        if self.cache.len() >= 8 {
            self.cache.remove(0);
        }
        self.cache.push((key, m));
        &self.cache.last().expect("just pushed").1
    }

    fn advance(&mut self, state: &mut State, interval: f64) {
        let x = self.coords.pack(state);
        let y = self.transfer(interval) * x;
        self.coords.unpack(&y, state);
    }
}

pub(crate) enum Engine {
    Direct(DirectRk4),
    Matrix(MatrixRk4),
}

impl Engine {
    pub(crate) fn advance(&mut self, state: &mut State, interval: f64) {
        match self {
            Engine::Direct(e) => e.advance(state, interval),
            Engine::Matrix(e) => e.advance(state, interval),
        }
    }
}
