//! Geometric ray channels for a planar array and their beamspace view.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{FalpError, Result};
use crate::grid::{ComplexGrid, C64};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySpec {
    pub gain: C64,
    pub elev_aod: f64,
    pub azim_aod: f64,
}

impl RaySpec {
    /// (ω_e, ω_a) = (π sinθe cosθa, π sinθe sinθa)
    pub fn spatial_freqs(&self) -> (f64, f64) {
        let s = self.elev_aod.sin();
        (PI * s * self.azim_aod.cos(), PI * s * self.azim_aod.sin())
    }

    /// Ray whose spatial frequencies are exactly (ω_e, ω_a); None when the
    /// pair lies outside the visible region ω_e² + ω_a² ≤ π².
    pub fn from_spatial_freqs(gain: C64, omega_e: f64, omega_a: f64) -> Option<RaySpec> {
        let r = (omega_e * omega_e + omega_a * omega_a).sqrt() / PI;
        if r > 1.0 + 1e-12 {
            return None;
        }
        Some(RaySpec { gain, elev_aod: r.min(1.0).asin(), azim_aod: omega_a.atan2(omega_e) })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WidebandChannel {
    pub taps: Vec<ComplexGrid>,
    pub tap_duration: f64,
}

impl WidebandChannel {
    pub fn new(taps: Vec<ComplexGrid>, tap_duration: f64) -> Result<Self> {
        let n = taps.first().ok_or_else(|| FalpError::InvalidSize("channel needs at least one tap".into()))?.n();
        if let Some(t) = taps.iter().find(|t| t.n() != n) {
            return Err(FalpError::DimensionMismatch(n, t.n()));
        }
        Ok(WidebandChannel { taps, tap_duration })
    }

    pub fn n(&self) -> usize {
        self.taps[0].n()
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t.frob_norm().powi(2)).sum()
    }

    /// Tap with the largest Frobenius energy (first one on ties).
    pub fn strongest_tap(&self) -> usize {
        let mut best = 0;
        let mut best_e = f64::NEG_INFINITY;
        for (l, t) in self.taps.iter().enumerate() {
            let e = t.frob_norm();
            if e > best_e {
                best_e = e;
                best = l;
            }
        }
        best
    }

    pub fn scaled(&self, s: f64) -> Self {
        WidebandChannel { taps: self.taps.iter().map(|t| t.scale_re(s)).collect(), tap_duration: self.tap_duration }
    }
}

/// [1, e^{jω}, …, e^{j(n−1)ω}]
pub fn steering_vector(omega: f64, n: usize) -> Vec<C64> {
    (0..n).map(|i| C64::from_polar(1.0, omega * i as f64)).collect()
}

/// H = Σ γ a(ω_e) a(ω_a)ᵀ
pub fn synth_channel(rays: &[RaySpec], n: usize) -> ComplexGrid {
    let mut h = ComplexGrid::zeros(n);
    for ray in rays {
        let (we, wa) = ray.spatial_freqs();
        let ae = steering_vector(we, n);
        let aa = steering_vector(wa, n);
        let d = h.data_mut();
        for r in 0..n {
            let g = ray.gain * ae[r];
            for c in 0..n {
                d[r * n + c] += g * aa[c];
            }
        }
    }
    h
}

/// X = U* H U*
pub fn beamspace(h: &ComplexGrid) -> ComplexGrid {
    h.idft2()
}

/// H = U X U
pub fn from_beamspace(x: &ComplexGrid) -> ComplexGrid {
    x.dft2()
}

/// Beamspace cell where an on-grid ray with ω = 2π·k/n lands.
pub fn beam_index(omega: f64, n: usize) -> usize {
    let k = (-omega * n as f64 / (2.0 * PI)).round() as i64;
    k.rem_euclid(n as i64) as usize
}

pub fn synth_wideband(clusters: &[(usize, Vec<RaySpec>)], l: usize, n: usize) -> Result<WidebandChannel> {
    if l == 0 {
        return Err(FalpError::InvalidSize("L must be at least 1".into()));
    }
    let mut taps = vec![ComplexGrid::zeros(n); l];
    for (tap, rays) in clusters {
        if *tap >= l {
            return Err(FalpError::TapIndex { tap: *tap, l });
        }
        taps[*tap] = taps[*tap].add(&synth_channel(rays, n))?;
    }
    WidebandChannel::new(taps, 1.0)
}

pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

/// Settings for the stochastic channel generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelModel {
    pub n: usize,
    pub taps: usize,
    pub rays: usize,
    /// Probability that a ray sits exactly on a beamspace grid point.
    pub on_grid_prob: f64,
    /// Exponential power-delay decay, in taps.
    pub delay_spread: f64,
}

impl ChannelModel {
    pub fn new(n: usize, taps: usize, rays: usize) -> Self {
        ChannelModel { n, taps, rays, on_grid_prob: 0.5, delay_spread: taps as f64 / 8.0 }
    }

    /// Ray cluster list with uniformly random angles, complex-normal gains and
    /// an exponential delay profile; total energy normalised to n².
    pub fn sample_clusters<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<(usize, Vec<RaySpec>)> {
        let n = self.n;
        let mut clusters: Vec<(usize, Vec<RaySpec>)> = Vec::new();
        for _ in 0..self.rays {
            let tap = rng.random_range(0..self.taps);
            let power = (-(tap as f64) / self.delay_spread.max(1e-9)).exp();
            let gain = complex_normal(rng, power);
            let ray = if rng.random_bool(self.on_grid_prob) {
                loop {
                    let r = rng.random_range(0..n) as f64;
                    let c = rng.random_range(0..n) as f64;
                    let we = wrap_pi(2.0 * PI * r / n as f64);
                    let wa = wrap_pi(2.0 * PI * c / n as f64);
                    if let Some(ray) = RaySpec::from_spatial_freqs(gain, we, wa) {
                        break ray;
                    }
                }
            } else {
                RaySpec { gain, elev_aod: rng.random_range(0.0..PI / 2.0), azim_aod: rng.random_range(-PI..PI) }
            };
            match clusters.iter_mut().find(|(t, _)| *t == tap) {
                Some((_, rays)) => rays.push(ray),
                None => clusters.push((tap, vec![ray])),
            }
        }
        clusters.sort_by_key(|(t, _)| *t);
        let ch = synth_wideband(&clusters, self.taps, n).expect("taps in range");
        let s = n as f64 / ch.energy().sqrt();
        for (_, rays) in clusters.iter_mut() {
            for ray in rays.iter_mut() {
                ray.gain *= s;
            }
        }
        clusters
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WidebandChannel {
        synth_wideband(&self.sample_clusters(rng), self.taps, self.n).expect("taps in range")
    }
}

fn wrap_pi(w: f64) -> f64 {
    let mut w = w % (2.0 * PI);
    if w >= PI {
        w -= 2.0 * PI;
    }
    w
}

/// Ray list format: "tap gain_re gain_im elev_rad azim_rad" per line.
pub fn rays_to_text(clusters: &[(usize, Vec<RaySpec>)]) -> String {
    let mut s = String::new();
    for (tap, rays) in clusters {
        for r in rays {
            s.push_str(&format!("{tap} {} {} {} {}\n", r.gain.re, r.gain.im, r.elev_aod, r.azim_aod));
        }
    }
    s
}

pub fn rays_from_text(text: &str) -> Result<Vec<(usize, Vec<RaySpec>)>> {
    let mut clusters: Vec<(usize, Vec<RaySpec>)> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(FalpError::Parse(format!("bad ray line '{line}'")));
        }
        let tap: usize = f[0].parse().map_err(|e| FalpError::Parse(format!("tap: {e}")))?;
        let v: Vec<f64> = f[1..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| FalpError::Parse(format!("{s}: {e}"))))
            .collect::<Result<_>>()?;
        let ray = RaySpec { gain: C64::new(v[0], v[1]), elev_aod: v[2], azim_aod: v[3] };
        match clusters.iter_mut().find(|(t, _)| *t == tap) {
            Some((_, rays)) => rays.push(ray),
            None => clusters.push((tap, vec![ray])),
        }
    }
    Ok(clusters)
}
