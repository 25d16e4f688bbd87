//! Seeded end-to-end pipelines for the six beam-alignment methods, metric
//! sweeps and operator timing.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::beamform::{beta_search, best_tap, dft_beam, effective_siso, nse, waterfill_rate, zfb_beamformer, Beamformer};
use crate::channel::{ChannelModel, WidebandChannel};
use crate::error::{FalpError, Result};
use crate::grid::{ComplexGrid, C64};
use crate::perfect_arrays::{construct_pba, random_base, spectral_mask, BaseMatrix};
use crate::recovery::{dense_forward, demask, forward_op, omp, ConvOperator, PartialFourier, RecoveryConfig, SensingOperator};
use crate::sounding::{acquire_wideband, sample_omega, select_tap, MeasurementBlock, SubsamplingSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    CsFalp,
    CsRandomBase,
    Zfb,
    MpRandomBase,
    Exhaustive,
    PerfectCsi,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::CsFalp, Method::CsRandomBase, Method::Zfb, Method::MpRandomBase, Method::Exhaustive, Method::PerfectCsi];

    pub fn name(self) -> &'static str {
        match self {
            Method::CsFalp => "cs-falp",
            Method::CsRandomBase => "cs-random-base",
            Method::Zfb => "zfb",
            Method::MpRandomBase => "mp-random-base",
            Method::Exhaustive => "exhaustive",
            Method::PerfectCsi => "perfect-csi",
        }
    }

    fn uses_random_base(self) -> bool {
        matches!(self, Method::CsRandomBase | Method::MpRandomBase)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = FalpError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| FalpError::Parse(format!("unknown method '{s}' (expected one of cs-falp, cs-random-base, zfb, mp-random-base, exhaustive, perfect-csi)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub n: usize,
    pub q: u32,
    pub m_list: Vec<usize>,
    pub sigma: f64,
    pub ns: usize,
    pub l_taps: usize,
    pub k_rays: usize,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub oversample: usize,
    pub k_b: usize,
    pub on_grid_prob: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n: 32,
            q: 1,
            m_list: vec![60, 120, 200],
            sigma: 0.1f64.sqrt(),
            ns: 64,
            l_taps: 16,
            k_rays: 4,
            trials: 100,
            seed: 1,
            methods: Method::ALL.to_vec(),
            oversample: 1,
            k_b: 6,
            on_grid_prob: 0.5,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        construct_pba(self.n)?;
        if self.q == 0 {
            return Err(FalpError::InvalidSize("q must be ≥ 1".into()));
        }
        for &m in &self.m_list {
            if m == 0 || m > self.n * self.n {
                return Err(FalpError::MeasurementCount { m, max: self.n * self.n });
            }
        }
        if self.m_list.is_empty() || self.trials == 0 || self.l_taps == 0 || self.k_rays == 0 || self.k_b == 0 {
            return Err(FalpError::InvalidSize("m, trials, l, rays and kb must be positive".into()));
        }
        if !(self.oversample == 1 || self.oversample == 2) {
            return Err(FalpError::InvalidSize(format!("oversample {} not in {{1, 2}}", self.oversample)));
        }
        if self.sigma.is_nan() || self.sigma < 0.0 || self.ns == 0 || !self.ns.is_power_of_two() {
            return Err(FalpError::InvalidSize("sigma must be ≥ 0 and ns a power of two".into()));
        }
        Ok(())
    }

    pub fn channel_model(&self) -> ChannelModel {
        let mut cm = ChannelModel::new(self.n, self.l_taps, self.k_rays);
        cm.on_grid_prob = self.on_grid_prob;
        cm
    }

    /// Subcarriers for the rate metric.
    pub fn n_sub(&self) -> usize {
        self.l_taps.max(64)
    }

    /// Rate noise power; a noiseless run still needs a finite SNR.
    pub fn noise_power(&self) -> f64 {
        (self.sigma * self.sigma).max(1e-12)
    }

    pub fn recovery(&self, m: usize) -> RecoveryConfig {
        RecoveryConfig { oversample: self.oversample, ..RecoveryConfig::for_noise(self.sigma, m, self.ns) }
    }
}

/// Random streams of one trial: its channel, and one sounding per (M, base).
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub const CHANNEL_STREAM: u64 = 0;

pub fn sounding_stream(m_idx: usize, random: bool) -> u64 {
    1 + 2 * m_idx as u64 + random as u64
}

/// Ω, the post-correlation block and the tap chosen from it.
#[derive(Clone, Debug)]
pub struct Sounding {
    pub base: BaseMatrix,
    pub omega: SubsamplingSet,
    pub block: MeasurementBlock,
    pub tap: usize,
}

impl Sounding {
    pub fn measurements(&self) -> Vec<C64> {
        self.block.column(self.tap)
    }
}

/// Sound a channel with the PBA (or, when `random`, a q-bit IID random base).
pub fn sound(ch: &WidebandChannel, m: usize, random: bool, cfg: &SweepConfig, rng: &mut ChaCha8Rng) -> Result<Sounding> {
    let base = if random { random_base(cfg.n, cfg.q, rng) } else { construct_pba(cfg.n)? };
    let omega = sample_omega(cfg.n, m, rng)?;
    let block = acquire_wideband(ch, &base, &omega, cfg.sigma, cfg.ns, rng)?;
    let tap = select_tap(&block);
    Ok(Sounding { base, omega, block, tap })
}

/// CS with a perfect-array base: OMP on the partial DFT, then demask.
/// With oversample = 2 the estimate is synthesised from the fine dictionary.
pub fn cs_falp_estimate(s: &Sounding, rc: &RecoveryConfig) -> Result<ComplexGrid> {
    let y = s.measurements();
    if rc.oversample > 1 {
        let op = ConvOperator::new(&s.base, s.omega.clone(), rc.oversample)?;
        return Ok(op.synthesize(&omp(&op, &y, rc).grid));
    }
    let op = PartialFourier::new(s.omega.clone());
    let est = omp(&op, &y, rc);
    Ok(demask(&est.grid, &spectral_mask(&s.base))?.dft2())
}

/// CS with an arbitrary base: OMP over beamspace atoms of the 2D-CCS map.
pub fn cs_conv_estimate(s: &Sounding, rc: &RecoveryConfig) -> Result<ComplexGrid> {
    let op = ConvOperator::new(&s.base, s.omega.clone(), rc.oversample)?;
    Ok(op.synthesize(&omp(&op, &s.measurements(), rc).grid))
}

/// Single-step matching pursuit: best beamspace atom and its LS channel.
pub fn mp_estimate(s: &Sounding) -> Result<((usize, usize), ComplexGrid)> {
    let op = ConvOperator::new(&s.base, s.omega.clone(), 1)?;
    let est = omp(&op, &s.measurements(), &RecoveryConfig { max_iters: 1, stop_threshold: 0.0, oversample: 1 });
    let coord = est.support.first().copied().unwrap_or((0, 0));
    Ok((coord, op.synthesize(&est.grid)))
}

/// Zero filling with the PBA: beam towards the peak of S_bl; X_bl as estimate.
pub fn zfb_estimate(s: &Sounding, q: u32) -> Result<(Beamformer, ComplexGrid)> {
    let z = spectral_mask(&s.base);
    let s_bl = s.omega.scatter(&s.measurements()).idft2();
    let x_bl = demask(&s_bl, &z)?;
    Ok((zfb_beamformer(&s_bl, q), x_bl.dft2()))
}

/// Best q-bit quantized DFT beam for a known channel tap.
pub fn exhaustive_beam(h: &ComplexGrid, q: u32) -> Beamformer {
    let n = h.n();
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for r in 0..n {
        for c in 0..n {
            let g = dft_beam(n, r, c, q).gain(h).expect("same size").norm();
            if g > best.0 {
                best = (g, r, c);
            }
        }
    }
    dft_beam(n, best.1, best.2, q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub seed: u64,
    pub m: usize,
    pub rho: f64,
    pub method: Method,
    pub nse_db: Option<f64>,
    pub rate: f64,
    pub success: bool,
}

pub const METRICS_HEADER: &str = "seed,M,rho,method,nse_db,rate_bpshz,success";

impl MetricRow {
    pub fn csv(&self) -> String {
        let nse = self.nse_db.map_or("nan".to_string(), |v| format!("{v:.6}"));
        format!("{},{},{:.6},{},{},{:.9},{}", self.seed, self.m, self.rho, self.method, nse, self.rate, self.success as u8)
    }
}

/// Every configured method at every M on the channel of one seed.
/// A method succeeds when its beam keeps at least half the perfect-CSI
/// beamforming gain |⟨H[ℓ_opt], F⟩|² on the strongest tap.
pub fn run_trial(cfg: &SweepConfig, seed: u64) -> Result<Vec<MetricRow>> {
    let ch = cfg.channel_model().sample(&mut trial_rng(seed, CHANNEL_STREAM));
    let l_opt = best_tap(&ch);
    let h_opt = &ch.taps[l_opt];
    let (_, f_perfect) = beta_search(h_opt, cfg.q, cfg.k_b);
    let ref_gain = f_perfect.gain(h_opt)?.norm_sqr();
    let rate_of = |f: &Beamformer| -> Result<f64> { waterfill_rate(&effective_siso(&ch, f)?, cfg.noise_power(), cfg.n_sub()) };
    let nse_of = |tap: usize, est: &ComplexGrid| nse(&ch.taps[tap], est).ok();

    let mut rows = Vec::new();
    for (mi, &m) in cfg.m_list.iter().enumerate() {
        let rho = m as f64 / (cfg.n * cfg.n) as f64;
        let rc = cfg.recovery(m);
        let mut pba_sounding = None;
        let mut rand_sounding = None;
        for &method in &cfg.methods {
            let needs = !matches!(method, Method::Exhaustive | Method::PerfectCsi);
            let s = if !needs {
                None
            } else if method.uses_random_base() {
                if rand_sounding.is_none() {
                    rand_sounding = Some(sound(&ch, m, true, cfg, &mut trial_rng(seed, sounding_stream(mi, true)))?);
                }
                rand_sounding.as_ref()
            } else {
                if pba_sounding.is_none() {
                    pba_sounding = Some(sound(&ch, m, false, cfg, &mut trial_rng(seed, sounding_stream(mi, false)))?);
                }
                pba_sounding.as_ref()
            };
            let (f, nse_db) = match method {
                Method::CsFalp | Method::CsRandomBase => {
                    let s = s.expect("sounded");
                    let h_hat = if method == Method::CsFalp { cs_falp_estimate(s, &rc)? } else { cs_conv_estimate(s, &rc)? };
                    (beta_search(&h_hat, cfg.q, cfg.k_b).1, nse_of(s.tap, &h_hat))
                }
                Method::Zfb => {
                    let s = s.expect("sounded");
                    let (f, h_bl) = zfb_estimate(s, cfg.q)?;
                    (f, nse_of(s.tap, &h_bl))
                }
                Method::MpRandomBase => {
                    let s = s.expect("sounded");
                    let ((r, c), h_hat) = mp_estimate(s)?;
                    (dft_beam(cfg.n, r, c, cfg.q), nse_of(s.tap, &h_hat))
                }
                Method::Exhaustive => (exhaustive_beam(h_opt, cfg.q), None),
                Method::PerfectCsi => (f_perfect.clone(), None),
            };
            let gain = f.gain(h_opt)?.norm_sqr();
            rows.push(MetricRow { seed, m, rho, method, nse_db, rate: rate_of(&f)?, success: gain >= 0.5 * ref_gain });
        }
    }
    Ok(rows)
}

/// All trials (seeds seed..seed+trials), ordered by (M, method, seed).
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    let per_trial: Result<Vec<Vec<MetricRow>>> =
        (0..cfg.trials as u64).into_par_iter().map(|t| run_trial(cfg, cfg.seed + t)).collect();
    let mut rows: Vec<MetricRow> = per_trial?.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.m, r.method, r.seed));
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub m: usize,
    pub rho: f64,
    pub method: Method,
    pub mean_rate: f64,
    /// 10·log10 of the mean linear NSE over trials that produced an estimate.
    pub mean_nse_db: Option<f64>,
    pub success_rate: f64,
    pub trials: usize,
}

pub const SUMMARY_HEADER: &str = "M,rho,method,mean_rate_bpshz,mean_nse_db,success_rate,trials";

impl SummaryRow {
    pub fn csv(&self) -> String {
        let nse = self.mean_nse_db.map_or("nan".to_string(), |v| format!("{v:.6}"));
        format!("{},{:.6},{},{:.9},{},{:.4},{}", self.m, self.rho, self.method, self.mean_rate, nse, self.success_rate, self.trials)
    }
}

pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let (m, method) = (rows[i].m, rows[i].method);
        let group: Vec<&MetricRow> = rows[i..].iter().take_while(|r| r.m == m && r.method == method).collect();
        let k = group.len() as f64;
        let nses: Vec<f64> = group.iter().filter_map(|r| r.nse_db).map(|d| 10f64.powf(d / 10.0)).collect();
        out.push(SummaryRow {
            m,
            rho: rows[i].rho,
            method,
            mean_rate: group.iter().map(|r| r.rate).sum::<f64>() / k,
            mean_nse_db: (!nses.is_empty()).then(|| 10.0 * (nses.iter().sum::<f64>() / nses.len() as f64).log10()),
            success_rate: group.iter().filter(|r| r.success).count() as f64 / k,
            trials: group.len(),
        });
        i += group.len();
    }
    out
}

/// Per-seed rate of `method` at M, in seed order.
pub fn rates(rows: &[MetricRow], m: usize, method: Method) -> Vec<f64> {
    rows.iter().filter(|r| r.m == m && r.method == method).map(|r| r.rate).collect()
}

/// Lower end of the one-sided 95% percentile-bootstrap interval of mean(a − b).
pub fn paired_bootstrap_lower(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> f64 {
    use rand::Rng;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| d[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    means[((0.05 * resamples as f64).floor() as usize).min(resamples - 1)]
}

/// Measurements used for operator timing: round(20·log10 N²).
pub fn bench_m(n: usize) -> usize {
    (20.0 * ((n * n) as f64).log10()).round() as usize
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub m: usize,
    pub fft_seconds: f64,
    pub dense_seconds: f64,
}

pub const BENCH_HEADER: &str = "N,M,fft_seconds,dense_seconds";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!("{},{},{:.9},{:.9}", self.n, self.m, self.fft_seconds, self.dense_seconds)
    }
}

/// Best per-call time over five batches, each lasting at least `min_seconds`.
fn time_per_call(mut f: impl FnMut(), min_seconds: f64) -> f64 {
    f();
    let mut reps = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..reps {
            f();
        }
        if t.elapsed().as_secs_f64() >= min_seconds || reps >= 1 << 20 {
            break;
        }
        reps *= 2;
    }
    (0..5)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..reps {
                f();
            }
            t.elapsed().as_secs_f64() / reps as f64
        })
        .fold(f64::INFINITY, f64::min)
}

/// Wall time per forward application of the FFT path and the
/// direct-sum path, after checking both agree on a random input.
pub fn bench_operator(n: usize, m: usize, seed: u64, min_seconds: f64) -> Result<BenchRow> {
    let mut rng = trial_rng(seed, n as u64);
    let omega = sample_omega(n, m, &mut rng)?;
    let w = ComplexGrid::from_fn(n, |_, _| crate::channel::complex_normal(&mut rng, 1.0));
    let a = forward_op(&w, &omega)?;
    let b = dense_forward(&w, &omega);
    let scale = a.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let gap = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    if gap > 1e-10 * scale {
        return Err(FalpError::InvalidSize(format!("FFT and dense paths disagree by {gap:e} at N={n}")));
    }
    let op = PartialFourier::new(omega.clone());
    let fft_seconds = time_per_call(|| { std::hint::black_box(op.apply(std::hint::black_box(&w))); }, min_seconds);
    let dense_seconds = time_per_call(|| { std::hint::black_box(dense_forward(std::hint::black_box(&w), &omega)); }, min_seconds);
    Ok(BenchRow { n, m, fft_seconds, dense_seconds })
}
