//! Right-hand side of the master equation on a flat row-major density matrix.
//!
//! dρ/dt = −i[H, ρ] + D(ρ) + S(ρ) + L(ρ) with
//!
//! * D: (Dρ)_mn = −d (1 − c_mn) ρ_mn for m ≠ n, c_mn = c on nearest
//!   neighbours and 0 elsewhere;
//! * S: −(κ/2){P_s, ρ}, draining the sink site into the sink accumulator;
//! * L: −Γ ρ, draining everything into the loss accumulator.
//!
//! D, S and L are all element-wise, so they are folded into one decay-rate
//! table.

use num_complex::Complex64 as C64;

use super::OpenSystemSpec;
use crate::network::SiteNetwork;

#[derive(Debug, Clone)]
pub(crate) struct Generator {
    n: usize,
    energies: Vec<f64>,
    /// Off-diagonal Hamiltonian entries per row: `(column, J)`.
    hops: Vec<Vec<(usize, f64)>>,
    /// Element-wise decay rate of ρ_mn, row-major.
    decay: Vec<f64>,
    sink: Option<usize>,
    sink_rate: f64,
    loss_rate: f64,
}

impl Generator {
    pub(crate) fn new(net: &SiteNetwork, env: &OpenSystemSpec) -> Self {
        let n = net.n_sites();
        let j = net.couplings();
        let hops = (0..n)
            .map(|m| {
                (0..n)
                    .filter(|&k| k != m && j[(m, k)] != 0.0)
                    .map(|k| (k, j[(m, k)]))
                    .collect()
            })
            .collect();

        let mut decay = vec![0.0; n * n];
        for m in 0..n {
            for k in 0..n {
                if m != k {
                    decay[m * n + k] = env.dephasing;
                }
            }
        }
        for (a, b) in net.neighbor_pairs() {
            let rate = env.dephasing * (1.0 - env.correlation);
            decay[a * n + b] = rate;
            decay[b * n + a] = rate;
        }
        let sink = if env.sink_rate > 0.0 { net.sink_site() } else { None };
        if let Some(s) = sink {
            for k in 0..n {
                decay[s * n + k] += 0.5 * env.sink_rate;
                decay[k * n + s] += 0.5 * env.sink_rate;
            }
        }
        for r in decay.iter_mut() {
            *r += env.loss_rate;
        }

        Generator {
            n,
            energies: net.site_energies().to_vec(),
            hops,
            decay,
            sink,
            sink_rate: env.sink_rate,
            loss_rate: env.loss_rate,
        }
    }

    pub(crate) fn n(&self) -> usize {
        self.n
    }

    /// Writes dρ/dt into `out` and returns (d sink/dt, d loss/dt).
    pub(crate) fn apply(&self, rho: &[C64], out: &mut [C64]) -> (f64, f64) {
        let n = self.n;
        let minus_i = C64::new(0.0, -1.0);
        for m in 0..n {
            let row = m * n;
            for k in 0..n {
                let idx = row + k;
                // (Hρ − ρH)_mk
                let mut comm = rho[idx] * (self.energies[m] - self.energies[k]);
                for &(l, jml) in &self.hops[m] {
                    comm += rho[l * n + k] * jml;
                }
                for &(l, jlk) in &self.hops[k] {
                    comm -= rho[row + l] * jlk;
                }
                out[idx] = minus_i * comm - rho[idx] * self.decay[idx];
            }
        }
        let dsink = match self.sink {
            Some(s) => self.sink_rate * rho[s * n + s].re,
            None => 0.0,
        };
        let trace: f64 = (0..n).map(|m| rho[m * n + m].re).sum();
        (dsink, self.loss_rate * trace)
    }

    /// Largest characteristic rate of the generator used to pick the default
    /// RK4 step: max(spectral radius of H, d, κ, Γ).
    pub(crate) fn rate_scale(spectral_radius: f64, env: &OpenSystemSpec) -> f64 {
        spectral_radius
            .max(env.dephasing)
            .max(env.sink_rate)
            .max(env.loss_rate)
    }
}
