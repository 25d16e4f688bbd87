use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use falp::analysis::{measurements_for, phase_transition_mc};
use falp::beamform::nse;
use falp::channel::{rays_from_text, rays_to_text, synth_wideband, WidebandChannel};
use falp::error::FalpError;
use falp::experiment::{
    bench_m, bench_operator, cs_conv_estimate, cs_falp_estimate, run_sweep, sound, sounding_stream, summarize, trial_rng,
    zfb_estimate, Method, Sounding, SweepConfig, BENCH_HEADER, CHANNEL_STREAM, METRICS_HEADER, SUMMARY_HEADER,
};
use falp::perfect_arrays::{construct_pba, mask_extremes, spectral_mask, verify_perfect, BaseMatrix};
use falp::recovery::{omp, ConvOperator, PartialFourier};
use falp::sounding::{select_tap, MeasurementBlock, SubsamplingSet};

#[derive(Parser)]
#[command(name = "falp", version, about = "Perfect-array beam alignment experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Cmd {
    /// Construct and certify a perfect binary array.
    Pba,
    /// Sound a seeded synthetic channel; writes the measurement block.
    Sound,
    /// Sparse recovery of one tap from a sounding.
    Recover,
    /// Zero-filling beam selection from a sounding.
    Zfb,
    /// Achievable rate against the number of measurements.
    RateVsMeas,
    /// Channel estimation error against the number of measurements.
    NseVsMeas,
    /// Zero-filling success probability over (rho, second-path strength).
    PhaseTransition,
    /// Wall time of the FFT and direct-sum measurement operators.
    Bench,
}

#[derive(Args, Default)]
struct Opts {
    /// key=value file; command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<String>,
    #[arg(long, global = true)]
    n: Option<String>,
    #[arg(long, global = true)]
    q: Option<String>,
    /// number of measurements (comma-separated list for sweeps)
    #[arg(long, global = true)]
    m: Option<String>,
    /// subsampling ratio M/N² (comma-separated list for sweeps)
    #[arg(long, global = true)]
    rho: Option<String>,
    #[arg(long, global = true)]
    sigma: Option<String>,
    #[arg(long, global = true)]
    ns: Option<String>,
    /// channel taps
    #[arg(long, global = true)]
    l: Option<String>,
    #[arg(long, global = true)]
    rays: Option<String>,
    #[arg(long, global = true)]
    trials: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// method name (comma-separated list for sweeps)
    #[arg(long, global = true)]
    method: Option<String>,
    #[arg(long, global = true)]
    oversample: Option<String>,
    #[arg(long, global = true)]
    kb: Option<String>,
    #[arg(long, global = true)]
    out: Option<String>,
    /// sounding file written by `sound --out`
    #[arg(long, global = true)]
    input: Option<String>,
    /// second-path strengths in dB for phase-transition
    #[arg(long = "a-db", global = true, allow_hyphen_values = true)]
    a_db: Option<String>,
    /// probability that a ray is on the beamspace grid
    #[arg(long = "on-grid", global = true)]
    on_grid: Option<String>,
}

struct CliError {
    code: u8,
    msg: String,
}

impl From<FalpError> for CliError {
    fn from(e: FalpError) -> Self {
        let code = if matches!(e, FalpError::UnsupportedSize(_) | FalpError::Parse(_)) { 2 } else { 1 };
        CliError { code, msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError { code: 2, msg: msg.into() }
}

fn io_err(path: &str, e: std::io::Error) -> CliError {
    CliError { code: 1, msg: format!("{path}: {e}") }
}

type CliResult<T> = Result<T, CliError>;

/// Flag values merged over the optional config file.
struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    fn new(o: &Opts) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = &o.config {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| usage(format!("{path}:{}: expected key=value", i + 1)))?;
                values.insert(k.trim().trim_start_matches("--").to_string(), v.trim().to_string());
            }
        }
        let flags = [
            ("n", &o.n),
            ("q", &o.q),
            ("m", &o.m),
            ("rho", &o.rho),
            ("sigma", &o.sigma),
            ("ns", &o.ns),
            ("l", &o.l),
            ("rays", &o.rays),
            ("trials", &o.trials),
            ("seed", &o.seed),
            ("method", &o.method),
            ("oversample", &o.oversample),
            ("kb", &o.kb),
            ("out", &o.out),
            ("input", &o.input),
            ("a-db", &o.a_db),
            ("on-grid", &o.on_grid),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                values.insert(k.to_string(), v.clone());
            }
        }
        Ok(Settings { values })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| usage(format!("invalid value '{v}' for --{key}"))),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| usage(format!("invalid value '{s}' in --{key}"))))
                .collect::<CliResult<Vec<T>>>()
                .map(Some),
        }
    }
}

fn sweep_config(s: &Settings, default_methods: &[Method]) -> CliResult<SweepConfig> {
    let d = SweepConfig::default();
    let n: usize = s.get("n", d.n)?;
    let m_list = match (s.list::<usize>("m")?, s.list::<f64>("rho")?) {
        (Some(_), Some(_)) => return Err(usage("give either --m or --rho, not both")),
        (Some(m), None) => m,
        (None, Some(r)) => r.iter().map(|&rho| measurements_for(n, rho)).collect(),
        (None, None) => d.m_list.clone(),
    };
    let methods = match s.raw("method") {
        Some(v) => v.split(',').map(|m| m.trim().parse::<Method>()).collect::<Result<Vec<_>, _>>()?,
        None => default_methods.to_vec(),
    };
    let cfg = SweepConfig {
        n,
        q: s.get("q", d.q)?,
        m_list,
        sigma: s.get("sigma", d.sigma)?,
        ns: s.get("ns", d.ns)?,
        l_taps: s.get("l", d.l_taps)?,
        k_rays: s.get("rays", d.k_rays)?,
        trials: s.get("trials", d.trials)?,
        seed: s.get("seed", d.seed)?,
        methods,
        oversample: s.get("oversample", d.oversample)?,
        k_b: s.get("kb", d.k_b)?,
        on_grid_prob: s.get("on-grid", d.on_grid_prob)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_out(path: Option<&str>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_pba(s: &Settings) -> CliResult<()> {
    let n: usize = s.get("n", 32)?;
    let p = construct_pba(n)?;
    if !verify_perfect(&p) {
        return Err(CliError { code: 1, msg: format!("construction for N={n} failed verification") });
    }
    let (zmin, zmax) = mask_extremes(&spectral_mask(&p));
    write_out(s.raw("out"), &p.to_text())?;
    println!("Zmin={zmin:.6} Zmax={zmax:.6}");
    Ok(())
}

/// A sounding together with the true channel, when known.
struct Loaded {
    cfg: SweepConfig,
    sounding: Sounding,
    channel: Option<WidebandChannel>,
}

fn simulate(cfg: &SweepConfig, random: bool) -> CliResult<(Sounding, WidebandChannel, String)> {
    let clusters = cfg.channel_model().sample_clusters(&mut trial_rng(cfg.seed, CHANNEL_STREAM));
    let ch = synth_wideband(&clusters, cfg.l_taps, cfg.n)?;
    let m = cfg.m_list[0];
    let s = sound(&ch, m, random, cfg, &mut trial_rng(cfg.seed, sounding_stream(0, random)))?;
    Ok((s, ch, rays_to_text(&clusters)))
}

fn uses_random(cfg: &SweepConfig) -> bool {
    matches!(cfg.methods.first(), Some(Method::CsRandomBase | Method::MpRandomBase))
}

fn read(path: &str) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn load(s: &Settings, default_method: Method) -> CliResult<Loaded> {
    let mut cfg = sweep_config(s, &[default_method])?;
    let Some(input) = s.raw("input") else {
        let (sounding, ch, _) = simulate(&cfg, uses_random(&cfg))?;
        return Ok(Loaded { cfg, sounding, channel: Some(ch) });
    };
    let (block, n, seed) = MeasurementBlock::from_text(&read(input)?)?;
    let omega = SubsamplingSet::from_text(n, &read(&format!("{input}.omega"))?)?;
    let base = BaseMatrix::from_text(&read(&format!("{input}.base"))?)?;
    cfg.n = n;
    cfg.seed = seed;
    cfg.sigma = block.sigma;
    cfg.ns = block.ns;
    cfg.l_taps = block.l;
    cfg.m_list = vec![block.m];
    let channel = match fs::read_to_string(format!("{input}.rays")) {
        Ok(t) => Some(synth_wideband(&rays_from_text(&t)?, block.l, n)?),
        Err(_) => None,
    };
    let tap = select_tap(&block);
    Ok(Loaded { cfg, sounding: Sounding { base, omega, block, tap }, channel })
}

fn cmd_sound(s: &Settings) -> CliResult<()> {
    let cfg = sweep_config(s, &[Method::CsFalp])?;
    let (sounding, _, rays) = simulate(&cfg, uses_random(&cfg))?;
    let text = sounding.block.to_text(cfg.n, cfg.seed);
    match s.raw("out") {
        Some(p) => {
            write_out(Some(p), &text)?;
            write_out(Some(&format!("{p}.omega")), &sounding.omega.to_text())?;
            write_out(Some(&format!("{p}.base")), &sounding.base.to_text())?;
            write_out(Some(&format!("{p}.rays")), &rays)?;
            println!("N={} M={} L={} tap={}", cfg.n, sounding.omega.m(), cfg.l_taps, sounding.tap);
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn nse_text(ch: &Option<WidebandChannel>, tap: usize, est: &falp::grid::ComplexGrid) -> String {
    match ch.as_ref().map(|c| nse(&c.taps[tap], est)) {
        Some(Ok(v)) => format!("{v:.6}"),
        _ => "nan".into(),
    }
}

fn cmd_recover(s: &Settings) -> CliResult<()> {
    let ld = load(s, Method::CsFalp)?;
    let method = *ld.cfg.methods.first().expect("non-empty");
    let rc = ld.cfg.recovery(ld.sounding.omega.m());
    let y = ld.sounding.measurements();
    let (dump, h_hat) = match method {
        Method::CsFalp if rc.oversample == 1 => {
            let est = omp(&PartialFourier::new(ld.sounding.omega.clone()), &y, &rc);
            (est.to_text(), cs_falp_estimate(&ld.sounding, &rc)?)
        }
        Method::CsFalp | Method::CsRandomBase => {
            let op = ConvOperator::new(&ld.sounding.base, ld.sounding.omega.clone(), rc.oversample)?;
            let est = omp(&op, &y, &rc);
            let h = if method == Method::CsFalp { cs_falp_estimate(&ld.sounding, &rc)? } else { cs_conv_estimate(&ld.sounding, &rc)? };
            (est.to_text(), h)
        }
        other => return Err(usage(format!("recover supports cs-falp and cs-random-base, not {other}"))),
    };
    write_out(s.raw("out"), &dump)?;
    println!("tap={} k={} nse_db={}", ld.sounding.tap, dump.lines().next().unwrap_or("0"), nse_text(&ld.channel, ld.sounding.tap, &h_hat));
    Ok(())
}

fn cmd_zfb(s: &Settings) -> CliResult<()> {
    let ld = load(s, Method::Zfb)?;
    let s_bl = ld.sounding.omega.scatter(&ld.sounding.measurements()).idft2();
    let (r, c) = s_bl.argmax_abs();
    let (f, h_bl) = zfb_estimate(&ld.sounding, ld.cfg.q)?;
    write_out(s.raw("out"), &f.to_text())?;
    println!("tap={} beam={r},{c} nse_db={}", ld.sounding.tap, nse_text(&ld.channel, ld.sounding.tap, &h_bl));
    Ok(())
}

fn cmd_sweep(s: &Settings, default_methods: &[Method]) -> CliResult<()> {
    let cfg = sweep_config(s, default_methods)?;
    let rows = run_sweep(&cfg)?;
    let mut body = format!("{METRICS_HEADER}\n");
    for r in &rows {
        body.push_str(&r.csv());
        body.push('\n');
    }
    let mut summary = format!("{SUMMARY_HEADER}\n");
    for r in summarize(&rows) {
        summary.push_str(&r.csv());
        summary.push('\n');
    }
    match s.raw("out") {
        Some(p) => {
            write_out(Some(p), &body)?;
            print!("{summary}");
        }
        None => {
            print!("{body}");
            eprint!("{summary}");
        }
    }
    Ok(())
}

fn cmd_phase_transition(s: &Settings) -> CliResult<()> {
    let n: usize = s.get("n", 32)?;
    let trials: usize = s.get("trials", 100)?;
    let seed: u64 = s.get("seed", 1)?;
    let rho = s.list::<f64>("rho")?.unwrap_or_else(|| (1..=10).map(|i| i as f64 / 100.0).collect());
    let a_db = s.list::<f64>("a-db")?.unwrap_or_else(|| (-20..=-1).map(f64::from).collect());
    if let Some(bad) = a_db.iter().find(|&&a| a >= 0.0) {
        return Err(usage(format!("second-path strength {bad} dB must be negative")));
    }
    if let Some(bad) = rho.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
        return Err(usage(format!("rho {bad} outside (0, 1]")));
    }
    let cells = phase_transition_mc(n, &rho, &a_db, trials, seed)?;
    let mut out = String::from("rho,a_db,empirical_p,bound_p,trials\n");
    for c in cells {
        out.push_str(&format!("{:.4},{:.2},{:.4},{:.6},{}\n", c.rho, c.a_db, c.empirical(), c.bound, c.trials));
    }
    write_out(s.raw("out"), &out)
}

fn cmd_bench(s: &Settings) -> CliResult<()> {
    let ns = s.list::<usize>("n")?.unwrap_or_else(|| vec![16, 32, 64, 128, 256]);
    let rho: Option<f64> = match s.raw("rho") {
        Some(_) => Some(s.get("rho", 0.0)?),
        None => None,
    };
    let seed: u64 = s.get("seed", 1)?;
    let mut out = format!("{BENCH_HEADER}\n");
    for n in ns {
        let m = match rho {
            Some(r) => measurements_for(n, r),
            None => bench_m(n).min(n * n),
        };
        out.push_str(&bench_operator(n, m, seed, 0.05)?.csv());
        out.push('\n');
    }
    write_out(s.raw("out"), &out)
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("FALP_THREADS") {
        let k: usize = v.trim().parse().map_err(|_| usage(format!("invalid FALP_THREADS '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build_global()
            .map_err(|e| usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    configure_threads()?;
    let s = Settings::new(&cli.opts)?;
    match cli.cmd {
        Cmd::Pba => cmd_pba(&s),
        Cmd::Sound => cmd_sound(&s),
        Cmd::Recover => cmd_recover(&s),
        Cmd::Zfb => cmd_zfb(&s),
        Cmd::RateVsMeas => cmd_sweep(&s, &Method::ALL),
        Cmd::NseVsMeas => cmd_sweep(&s, &[Method::CsFalp, Method::CsRandomBase]),
        Cmd::PhaseTransition => cmd_phase_transition(&s),
        Cmd::Bench => cmd_bench(&s),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.msg.replace('\n', " "));
            ExitCode::from(e.code)
        }
    }
}
