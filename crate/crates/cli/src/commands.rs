use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;

use transdim::ar_laplace::{self, ARData, ARState, ArSimConfig, OrderPrior, PredictorKind};
use transdim::finite_spectral::{
    parse_chain_file, random_decomposed_chain, verify_chain, EnsembleSpec, JumpTopology, VerifyReport,
};
use transdim::mvn_prob::SolveOptions;
use transdim::probit_rj::{self, ProbitData, ProbitState, SpambaseOptions};
use transdim::rng_dist::RngStream;
use transdim::uq::{
    ar_h_spec, read_report, simultaneous_cis, write_hash_line, write_report, CiOptions, DeltaSpec, SimCIReport,
    Trace, TraceMeta, TraceWriter,
};

use crate::config::Config;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn worker_pool(cfg: &Config) -> Result<rayon::ThreadPool> {
    let workers = cfg.usize_or("workers", 0)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building the worker pool")
}

// ---------------------------------------------------------------------------
// simulate-ar

fn sim_config(cfg: &Config) -> Result<ArSimConfig> {
    let preset = cfg.str_or("preset", "toy")?;
    let mut sim = match preset.as_str() {
        "toy" => ArSimConfig::toy(),
        "scenario2" | "scenario-2" => ArSimConfig::scenario_two(),
        other => bail!("unknown preset `{other}` (expected toy or scenario2)"),
    };
    if let Some(v) = cfg.opt_usize("n")? {
        sim.n = v;
    }
    if let Some(v) = cfg.opt_usize("p")? {
        sim.p = v;
    }
    if let Some(v) = cfg.opt_usize("k_max")? {
        sim.k_max = v;
    }
    if let Some(v) = cfg.opt_usize("k_true")? {
        sim.k_true = v;
    }
    if let Some(v) = cfg.opt_f64_list("alpha_true")? {
        sim.alpha_true = v;
    }
    if let Some(v) = cfg.opt_f64_list("beta_true")? {
        sim.beta_true = v;
    }
    if let Some(v) = cfg.opt_f64("tau_true")? {
        sim.tau_true = v;
    }
    if let Some(v) = cfg.opt_f64("sigma")? {
        sim.sigma = v;
    }
    if let Some(v) = cfg.opt_usize("warmup")? {
        sim.warmup = v;
    }
    if let Some(v) = cfg.opt_str("predictors")? {
        sim.predictors = match v.as_str() {
            "intercept" => PredictorKind::Intercept,
            "gaussian" => PredictorKind::Gaussian,
            "intercept-gaussian" | "intercept_gaussian" => PredictorKind::InterceptGaussian,
            other => bail!("unknown predictors `{other}`"),
        };
    }
    if let Some(v) = cfg.opt_str("prior")? {
        sim.prior = match v.as_str() {
            "uniform" => OrderPrior::Uniform,
            "poisson" => OrderPrior::TruncatedPoisson {
                mean: cfg.f64_or("poisson_mean", 2.0)?,
            },
            other => bail!("unknown prior `{other}` (expected uniform or poisson)"),
        };
    } else if let OrderPrior::TruncatedPoisson { .. } = sim.prior {
        sim.prior = OrderPrior::TruncatedPoisson {
            mean: cfg.f64_or("poisson_mean", 2.0)?,
        };
    }
    if sim.k_true > sim.k_max {
        bail!("k_true = {} exceeds k_max = {}", sim.k_true, sim.k_max);
    }
    if sim.alpha_true.len() != sim.k_true {
        bail!("alpha_true has {} entries but k_true = {}", sim.alpha_true.len(), sim.k_true);
    }
    if sim.beta_true.len() != sim.p {
        bail!("beta_true has {} entries but p = {}", sim.beta_true.len(), sim.p);
    }
    Ok(sim)
}

pub fn simulate_ar(cfg: &Config) -> Result<()> {
    let sim = sim_config(cfg)?;
    let seed = cfg.u64_or("seed", 1)?;
    let out = cfg.path("out")?;
    cfg.reject_unknown()?;
    let data = ar_laplace::simulate_ar_dataset(&sim, &mut RngStream::new(seed, 0))
        .context("simulating a data set satisfying the rank condition")?;
    let mut w = create(&out)?;
    ar_laplace::write_ar_data(&mut w, &data, &cfg.hash())?;
    w.flush()?;
    println!(
        "rank condition OK: N = {}, p = {}, k_max = {}; wrote {}",
        data.n(),
        data.p(),
        data.k_max(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// run

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SamplerKind {
    ArToy,
    ArOrder,
    Probit,
}

impl SamplerKind {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "ar-toy" => Ok(Self::ArToy),
            "ar-order" => Ok(Self::ArOrder),
            "probit" => Ok(Self::Probit),
            other => bail!("unknown sampler `{other}` (expected ar-toy, ar-order or probit)"),
        }
    }

    fn id(self) -> &'static str {
        match self {
            Self::ArToy => "ar-toy",
            Self::ArOrder => "ar-order",
            Self::Probit => "probit",
        }
    }
}

enum Model {
    Ar(ARData, ar_laplace::ARMoveProbs),
    Probit(ProbitData),
}

/// Sampler state plus the test functions it emits.
enum Chain<'a> {
    Ar {
        data: &'a ARData,
        probs: &'a ar_laplace::ARMoveProbs,
        state: ARState,
        order: bool,
    },
    Probit {
        data: &'a ProbitData,
        state: ProbitState,
    },
}

impl Chain<'_> {
    fn new(model: &Model, kind: SamplerKind) -> Chain<'_> {
        match model {
            Model::Ar(data, probs) => Chain::Ar {
                data,
                probs,
                state: ARState::initial(data),
                order: kind == SamplerKind::ArOrder,
            },
            Model::Probit(data) => Chain::Probit {
                data,
                state: ProbitState::empty(data.r()),
            },
        }
    }

    fn d(&self) -> usize {
        match self {
            Chain::Ar { data, order: true, .. } => data.k_max() + 1,
            Chain::Ar { .. } => 3,
            Chain::Probit { data, .. } => data.r(),
        }
    }

    fn step(&mut self, rng: &mut RngStream) -> transdim::Result<()> {
        match self {
            Chain::Ar {
                data, probs, state, ..
            } => {
                let s = std::mem::replace(state, ARState::initial(data));
                *state = ar_laplace::rj_step(data, s, probs, rng)?;
            }
            Chain::Probit { data, state } => {
                let s = std::mem::replace(state, ProbitState::empty(data.r()));
                *state = probit_rj::rj_step(data, s, rng)?;
            }
        }
        Ok(())
    }

    fn emit(&self, out: &mut Vec<f64>) {
        match self {
            Chain::Ar {
                state,
                order: true,
                data,
                ..
            } => out.extend(ar_laplace::order_indicators(state, data.k_max())),
            Chain::Ar { state, .. } => out.extend(ar_laplace::toy_test_functions(state)),
            Chain::Probit { state, .. } => out.extend(probit_rj::inclusion_indicators(state)),
        }
    }
}

fn load_model(cfg: &Config, kind: SamplerKind) -> Result<Model> {
    let path = cfg.path("data")?;
    match kind {
        SamplerKind::ArToy | SamplerKind::ArOrder => {
            let data = ar_laplace::read_ar_data(open(&path)?).with_context(|| format!("reading {}", path.display()))?;
            if kind == SamplerKind::ArToy && data.k_max() != 1 {
                bail!("sampler ar-toy needs k_max = 1; use ar-order for larger models");
            }
            let probs = ar_laplace::move_probs_green(data.f_k())?;
            Ok(Model::Ar(data, probs))
        }
        SamplerKind::Probit => {
            let opts = SpambaseOptions {
                standardize: cfg.bool_or("standardize", true)?,
                sigma: cfg.f64_or("sigma", 1.0)?,
                p_slab: cfg.f64_or("p_slab", 0.5)?,
            };
            Ok(Model::Probit(
                probit_rj::load_spambase(&path, &opts).with_context(|| format!("reading {}", path.display()))?,
            ))
        }
    }
}

struct ChainSettings {
    n: usize,
    burn_in: usize,
}

fn chain_settings(cfg: &Config, default_n: usize) -> Result<ChainSettings> {
    let n = cfg.usize_or("n", default_n)?;
    let burn_in = cfg.usize_or("burn_in", n / 10)?;
    if n == 0 {
        bail!("n must be positive");
    }
    Ok(ChainSettings { n, burn_in })
}

fn ci_options(cfg: &Config, m: usize) -> Result<CiOptions> {
    let alpha = cfg.f64_or("alpha", 0.05)?;
    let epsilon = cfg.f64_or("epsilon", 1e-3)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!("alpha must lie in (0, 1), got {alpha}");
    }
    if !(epsilon >= 0.0) {
        bail!("epsilon must be nonnegative, got {epsilon}");
    }
    let scale = cfg.f64_or("v_star_scale", 1.0)?;
    if !(scale > 0.0) {
        bail!("v_star_scale must be positive, got {scale}");
    }
    let defaults = SolveOptions::default();
    Ok(CiOptions {
        alpha,
        epsilon,
        v_star: Some(DMatrix::identity(m, m) * scale),
        batch_exponent: cfg.f64_or("batch_exponent", 0.6)?,
        solve: SolveOptions {
            tol: cfg.f64_or("xi_tol", defaults.tol)?,
            n_points: cfg.usize_or("n_points", defaults.n_points)?,
            seed: defaults.seed,
        },
        center_without_noise: cfg.bool_or("center_without_noise", false)?,
    })
}

fn delta_spec(kind: SamplerKind, d: usize) -> DeltaSpec<f64> {
    match kind {
        SamplerKind::ArToy => ar_h_spec(),
        _ => DeltaSpec::identity(d),
    }
}

pub fn run(cfg: &Config) -> Result<()> {
    let kind = SamplerKind::parse(&cfg.str_or("sampler", "ar-toy")?)?;
    let settings = chain_settings(cfg, 10_000)?;
    let seed = cfg.u64_or("seed", 1)?;
    let trace_out = cfg.path("trace_out")?;
    let report_out = cfg.path("report_out")?;
    let model = load_model(cfg, kind)?;
    let mut chain = Chain::new(&model, kind);
    let d = chain.d();
    let spec = delta_spec(kind, d);
    let opts = ci_options(cfg, spec.m)?;
    cfg.reject_unknown()?;
    let hash = cfg.hash();

    let meta = TraceMeta {
        sampler_id: kind.id().into(),
        seed,
        config_hash: hash.clone(),
    };
    let mut rng = RngStream::new(seed, 0);
    for _ in 0..settings.burn_in {
        chain.step(&mut rng)?;
    }
    let mut writer = TraceWriter::new(create(&trace_out)?, settings.n, d, &meta)?;
    let mut rows = Vec::with_capacity(settings.n * d);
    let mut row = Vec::with_capacity(d);
    for _ in 0..settings.n {
        chain.step(&mut rng)?;
        row.clear();
        chain.emit(&mut row);
        writer.push(&row)?;
        rows.extend_from_slice(&row);
    }
    writer.finish()?;
    let trace = Trace::from_rows(settings.n, d, &rows, meta)?;
    let report = simultaneous_cis(&trace, &spec, &opts, &mut rng.sibling(1))
        .context("building simultaneous confidence intervals")?;
    let mut w = create(&report_out)?;
    write_report(&mut w, &report, &hash)?;
    w.flush()?;
    println!(
        "{}: n = {}, burn-in = {}, {} intervals, xi = {:.5}; wrote {} and {}",
        kind.id(),
        settings.n,
        settings.burn_in,
        report.m(),
        report.xi,
        trace_out.display(),
        report_out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// coverage

pub struct CoverageRow {
    pub epsilon: f64,
    pub coverage: f64,
    pub widths: Vec<f64>,
}

pub fn coverage(cfg: &Config) -> Result<()> {
    let data_path = cfg.path("data")?;
    let settings = chain_settings(cfg, 10_000)?;
    let reps = cfg.u64_or("replications", 500)?;
    let seed = cfg.u64_or("seed", 1)?;
    let eps = cfg
        .opt_f64_list("epsilons")?
        .unwrap_or_else(|| vec![10.0, 1.0, 0.1, 0.01, 0.001]);
    let out = cfg.opt_path("out")?;
    let opts = ci_options(cfg, 4)?;
    let pool = worker_pool(cfg)?;
    cfg.reject_unknown()?;
    let n_eps = eps.len() as u64;
    if reps == 0 {
        bail!("replications must be positive");
    }
    let data = ar_laplace::read_ar_data(open(&data_path)?)
        .with_context(|| format!("reading {}", data_path.display()))?;
    let truth = ar_laplace::toy_quadrature_oracle(&data)
        .map_err(|e| {
            anyhow!("the quadrature truth is unavailable ({e}); coverage needs a toy data set with k_max = p = 1 and N <= 5, e.g. from `simulate-ar --preset toy`")
        })?
        .as_array();
    let probs = ar_laplace::move_probs_green(data.f_k())?;
    let spec = ar_h_spec::<f64>();

    let per_rep: Vec<transdim::Result<Vec<(bool, Vec<f64>)>>> = pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = RngStream::new(seed, rep);
                let mut s = ARState::initial(&data);
                for _ in 0..settings.burn_in {
                    s = ar_laplace::rj_step(&data, s, &probs, &mut rng)?;
                }
                let mut rows = Vec::with_capacity(3 * settings.n);
                for _ in 0..settings.n {
                    s = ar_laplace::rj_step(&data, s, &probs, &mut rng)?;
                    rows.extend_from_slice(&ar_laplace::toy_test_functions(&s));
                }
                let meta = TraceMeta {
                    sampler_id: "ar-toy".into(),
                    seed,
                    config_hash: String::new(),
                };
                let trace = Trace::from_rows(settings.n, 3, &rows, meta)?;
                eps.iter()
                    .enumerate()
                    .map(|(e, &epsilon)| {
                        let o = CiOptions {
                            epsilon,
                            ..opts.clone()
                        };
                        // Noise streams sit after the chain streams 0..reps, one per (rep, epsilon).
                        let mut noise = RngStream::new(seed, reps + rep * n_eps + e as u64);
                        let r = simultaneous_cis(&trace, &spec, &o, &mut noise)?;
                        let w = r.intervals.iter().map(|(lo, hi)| hi - lo).collect();
                        Ok((r.covers(&truth), w))
                    })
                    .collect()
            })
            .collect()
    });
    let mut rows: Vec<CoverageRow> = eps
        .iter()
        .map(|&epsilon| CoverageRow {
            epsilon,
            coverage: 0.0,
            widths: vec![0.0; 4],
        })
        .collect();
    for (rep, res) in per_rep.into_iter().enumerate() {
        let res = res.with_context(|| format!("replication {rep}"))?;
        for (row, (covered, w)) in rows.iter_mut().zip(res) {
            row.coverage += f64::from(u8::from(covered)) / reps as f64;
            for (acc, v) in row.widths.iter_mut().zip(w) {
                *acc += v / reps as f64;
            }
        }
    }
    let mut text = Vec::new();
    write_hash_line(&mut text, &cfg.hash())?;
    writeln!(
        text,
        "# truth\t{}\t{}\t{}\t{}\n# replications\t{reps}\tn\t{}",
        truth[0], truth[1], truth[2], truth[3], settings.n
    )?;
    writeln!(text, "epsilon\tcoverage\tcoverage_se\twidth_p0\twidth_p1\twidth_mean\twidth_sd")?;
    for r in &rows {
        let se = (r.coverage * (1.0 - r.coverage) / reps as f64).sqrt();
        write!(text, "{}\t{:.4}\t{:.4}", r.epsilon, r.coverage, se)?;
        for w in &r.widths {
            write!(text, "\t{w:.5}")?;
        }
        writeln!(text)?;
    }
    std::io::stdout().write_all(&text)?;
    if let Some(p) = out {
        let mut w = create(&p)?;
        w.write_all(&text)?;
        w.flush()?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// finite-verify

fn format_verify(name: &str, r: &VerifyReport) -> String {
    let mut s = format!(
        "chain {name}: {} states, {} models, lambda1 = {:.6}, reachability steps = {}\n",
        r.n_states,
        r.n_models,
        r.lambda1,
        r.h2_steps.map_or("none".to_string(), |v| v.to_string())
    );
    for (t, norm) in r.norms.iter().enumerate() {
        s.push_str(&format!("  t = {}: ||P^t|| = {norm:.6}\n", t + 1));
    }
    for (t, (b, d)) in r.bounds.iter().zip(&r.decompositions).enumerate() {
        s.push_str(&format!(
            "  t = {}: bound lhs = {:.6e} rhs = {:.6e} {}; decomposition lhs = {:.6e} rhs = {:.6e} {}\n",
            t + 1,
            b.lhs,
            b.rhs,
            if b.holds { "holds" } else { "VIOLATED" },
            d.lhs,
            d.rhs,
            if d.holds { "holds" } else { "VIOLATED" },
        ));
    }
    s
}

pub fn finite_verify(cfg: &Config) -> Result<()> {
    let steps = cfg.usize_or("steps", 3)?;
    let chain_path = cfg.opt_path("chain")?;
    let ensemble = cfg.opt_usize("random_ensemble")?;
    let seed = cfg.u64_or("seed", 1)?;
    let out = cfg.opt_path("out")?;
    cfg.reject_unknown()?;
    if steps == 0 {
        bail!("steps must be at least 1");
    }
    let mut text = Vec::new();
    write_hash_line(&mut text, &cfg.hash())?;
    let (held, total) = match (chain_path, ensemble) {
        (Some(path), None) => {
            let src = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let (chain, kernels) = parse_chain_file(&src).with_context(|| format!("parsing {}", path.display()))?;
            let r = verify_chain(&chain, &kernels, steps, steps)?;
            text.extend_from_slice(format_verify(&path.display().to_string(), &r).as_bytes());
            (usize::from(r.all_hold()), 1)
        }
        (None, Some(count)) => {
            let mut rng = RngStream::new(seed, 0);
            let mut held = 0;
            for i in 0..count {
                let topo = if i % 2 == 0 {
                    JumpTopology::Complete
                } else {
                    JumpTopology::Neighbors
                };
                let (chain, kernels) = random_decomposed_chain(&EnsembleSpec::default(), topo, &mut rng);
                let r = verify_chain(&chain, &kernels, steps, steps)?;
                if r.all_hold() {
                    held += 1;
                } else {
                    text.extend_from_slice(format_verify(&format!("#{i}"), &r).as_bytes());
                }
            }
            (held, count)
        }
        (Some(_), Some(_)) => bail!("give either `chain` or `random_ensemble`, not both"),
        (None, None) => bail!("give a chain file (--chain) or --random-ensemble R"),
    };
    writeln!(text, "{held}/{total} bounds hold")?;
    std::io::stdout().write_all(&text)?;
    if let Some(p) = out {
        let mut w = create(&p)?;
        w.write_all(&text)?;
        w.flush()?;
    }
    if held != total {
        bail!("{} of {total} chains violate a bound", total - held);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// plotdata

pub fn write_plot_rows<W: Write>(mut w: W, report: &SimCIReport, hash: &str) -> Result<()> {
    write_hash_line(&mut w, hash)?;
    writeln!(w, "index\tpoint\tcenter\tlo\thi")?;
    for (i, &(lo, hi)) in report.intervals.iter().enumerate() {
        writeln!(w, "{i}\t{}\t{}\t{lo}\t{hi}", report.h_point[i], report.center(i))?;
    }
    Ok(())
}

pub fn plotdata(cfg: &Config) -> Result<()> {
    let input = cfg.path("report")?;
    let out = cfg.path("out")?;
    cfg.reject_unknown()?;
    let report = read_report(open(&input)?).with_context(|| format!("reading {}", input.display()))?;
    let mut w = create(&out)?;
    write_plot_rows(&mut w, &report, &cfg.hash())?;
    w.flush()?;
    println!("{} rows; wrote {}", report.m(), out.display());
    Ok(())
}
