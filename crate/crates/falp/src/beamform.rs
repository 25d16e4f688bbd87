//! Transmit beamformers from channel estimates, and the evaluation metrics:
//! NSE, effective SISO channel and water-filling rate.

use std::f64::consts::PI;

use crate::channel::WidebandChannel;
use crate::error::{FalpError, Result};
use crate::grid::{ComplexGrid, C64};

pub const NSE_FLOOR_DB: f64 = -300.0;
pub const DEFAULT_KB: usize = 6;

/// Phase-only TX weights with |entry| = 1/N; q = 0 means unquantized.
#[derive(Clone, Debug, PartialEq)]
pub struct Beamformer {
    grid: ComplexGrid,
    q: u32,
}

impl Beamformer {
    pub fn new(grid: ComplexGrid, q: u32) -> Result<Self> {
        let n = grid.n() as f64;
        for z in grid.as_slice() {
            if (z.norm() - 1.0 / n).abs() > 1e-12 {
                return Err(FalpError::InvalidSize(format!("beamformer entry magnitude {} != 1/N", z.norm())));
            }
            if q >= 1 {
                let t = z.arg().rem_euclid(2.0 * PI) / (2.0 * PI / (1u64 << q) as f64);
                if (t - t.round()).abs() > 1e-9 * (1u64 << q) as f64 {
                    return Err(FalpError::InvalidSize(format!("phase {} off the {q}-bit grid", z.arg())));
                }
            }
        }
        Ok(Beamformer { grid, q })
    }

    pub fn grid(&self) -> &ComplexGrid {
        &self.grid
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    /// ⟨H, F⟩ = Σ H·conj(F).
    pub fn gain(&self, h: &ComplexGrid) -> Result<C64> {
        h.inner(&self.grid)
    }

    pub fn to_text(&self) -> String {
        format!("q={}\n{}", self.q, self.grid.to_text())
    }
}

/// Phase(F) = β + phase(Ĥ); attains |⟨Ĥ, F⟩| = ‖Ĥ‖₁ / N.
pub fn optimal_phase_bf(h_hat: &ComplexGrid, beta: f64) -> Beamformer {
    let n = h_hat.n() as f64;
    let grid = h_hat.map(|z| C64::from_polar(1.0 / n, beta + if z.norm() > 0.0 { z.arg() } else { 0.0 }));
    Beamformer { grid, q: 0 }
}

fn quantize_angle(theta: f64, q: u32) -> f64 {
    let levels = (1u64 << q) as f64;
    let step = 2.0 * PI / levels;
    let t = theta.rem_euclid(2.0 * PI) / step;
    // exact halves go down
    let k = (t - 0.5).ceil().rem_euclid(levels);
    k * step
}

/// Snap every phase to the nearest multiple of 2π/2^q.
pub fn quantize_phases(f: &Beamformer, q: u32) -> Beamformer {
    if q == 0 {
        return f.clone();
    }
    let n = f.n() as f64;
    let grid = f.grid.map(|z| C64::from_polar(1.0 / n, quantize_angle(z.arg(), q)));
    Beamformer { grid, q }
}

fn quantization_error(h_hat: &ComplexGrid, beta: f64, q: u32) -> (f64, Beamformer) {
    let f = optimal_phase_bf(h_hat, beta);
    let fq = quantize_phases(&f, q);
    let err = fq.grid.sub(&f.grid).expect("same size").frob_norm();
    (err, fq)
}

/// Candidate offsets (i + ½)·Δ/k_b, i = 0..k_b, with Δ = 2π/2^q: evenly
/// spaced inside (0, Δ) and evenly spaced modulo Δ.
pub fn beta_grid(q: u32, k_b: usize) -> Vec<f64> {
    let delta = 2.0 * PI / (1u64 << q) as f64;
    (0..k_b).map(|i| (i as f64 + 0.5) * delta / k_b as f64).collect()
}

/// β minimising ‖𝒬_q(F^opt(β)) − F^opt(β)‖_F over the search grid (first on
/// ties) and the corresponding quantized beamformer.
pub fn beta_search(h_hat: &ComplexGrid, q: u32, k_b: usize) -> (f64, Beamformer) {
    let mut best: Option<(f64, f64, Beamformer)> = None;
    for beta in beta_grid(q, k_b.max(1)) {
        let (err, f) = quantization_error(h_hat, beta, q);
        if best.as_ref().is_none_or(|(e, _, _)| err < *e) {
            best = Some((err, beta, f));
        }
    }
    let (_, beta, f) = best.expect("k_b ≥ 1");
    (beta, f)
}

/// 𝒬_q(U(:, r) U(c, :)): the DFT beam that reads out beamspace entry (r, c).
pub fn dft_beam(n: usize, r: usize, c: usize, q: u32) -> Beamformer {
    let grid = ComplexGrid::from_fn(n, |i, j| {
        let t = ((i * r + c * j) % n) as f64 / n as f64;
        C64::from_polar(1.0 / n as f64, -2.0 * PI * t)
    });
    quantize_phases(&Beamformer { grid, q: 0 }, q)
}

/// Beam towards the largest-magnitude entry of the zero-filled estimate.
pub fn zfb_beamformer(s_bl: &ComplexGrid, q: u32) -> Beamformer {
    let (r, c) = s_bl.argmax_abs();
    dft_beam(s_bl.n(), r, c, q)
}

/// 20·log10(‖H − Ĥ‖ / ‖H‖), floored at −300 dB.
pub fn nse(h_true: &ComplexGrid, h_est: &ComplexGrid) -> Result<f64> {
    let r = h_true.frob_norm();
    if r == 0.0 {
        return Err(FalpError::ZeroReference);
    }
    let e = h_true.sub(h_est)?.frob_norm();
    if e == 0.0 {
        return Ok(NSE_FLOOR_DB);
    }
    Ok((20.0 * (e / r).log10()).max(NSE_FLOOR_DB))
}

/// Tap-wise ⟨H[ℓ], F⟩.
pub fn effective_siso(ch: &WidebandChannel, f: &Beamformer) -> Result<Vec<C64>> {
    ch.taps.iter().map(|h| f.gain(h)).collect()
}

/// Per-subcarrier SNR |h_k|²/noise of the n_sub-point frequency response.
fn subcarrier_gains(taps: &[C64], noise_power: f64, n_sub: usize) -> Vec<f64> {
    (0..n_sub)
        .map(|k| {
            let h: C64 = taps
                .iter()
                .enumerate()
                .map(|(l, &t)| t * C64::from_polar(1.0, -2.0 * PI * ((k * l) % n_sub) as f64 / n_sub as f64))
                .sum();
            h.norm_sqr() / noise_power
        })
        .collect()
}

/// Water level μ and the allocation p_k = max(0, μ − 1/g_k) with Σ p_k = total.
pub fn waterfill(gains: &[f64], total: f64) -> (f64, Vec<f64>) {
    let mut inv: Vec<f64> = gains.iter().filter(|&&g| g > 0.0).map(|g| 1.0 / g).collect();
    if inv.is_empty() {
        return (0.0, vec![0.0; gains.len()]);
    }
    inv.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut mu = 0.0;
    let mut sum = 0.0;
    for (i, &v) in inv.iter().enumerate() {
        sum += v;
        let cand = (total + sum) / (i + 1) as f64;
        if i + 1 == inv.len() || cand <= inv[i + 1] {
            mu = cand;
            break;
        }
    }
    let p = gains.iter().map(|&g| if g > 0.0 { (mu - 1.0 / g).max(0.0) } else { 0.0 }).collect();
    (mu, p)
}

/// Mean rate per subcarrier with water-filled power (mean power 1 per subcarrier).
pub fn waterfill_rate(siso_taps: &[C64], noise_power: f64, n_sub: usize) -> Result<f64> {
    if n_sub == 0 || n_sub < siso_taps.len() {
        return Err(FalpError::InvalidSize(format!("n_sub={n_sub} for {} taps", siso_taps.len())));
    }
    if noise_power.is_nan() || noise_power <= 0.0 {
        return Err(FalpError::InvalidSize(format!("noise power {noise_power}")));
    }
    let g = subcarrier_gains(siso_taps, noise_power, n_sub);
    let (_, p) = waterfill(&g, n_sub as f64);
    Ok(g.iter().zip(&p).map(|(g, p)| (1.0 + p * g).log2()).sum::<f64>() / n_sub as f64)
}

/// ℓ_opt: the tap with the most energy.
pub fn best_tap(ch: &WidebandChannel) -> usize {
    ch.strongest_tap()
}
