//! Executes a validated scenario and writes its CSV outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use thiserror::Error;

use super::config::{Metric, ScenarioConfig, Violation};
use super::manifest::RunManifest;
use crate::channel_geometry::{los_gain, power_map, ChannelGain, Luminaire, Receiver, Vec3};
use crate::csv_fmt::fmt_sig;
use crate::multicell::{
    area_map, assign_frequency_groups, handover_count, write_area_csv, CellLayout, FovPolicy,
    MobilityTrace,
};
use crate::noma_link::{
    ber_montecarlo, coverage_probability, rate_montecarlo, CoverageScenario, LinkScenario,
    LinkStats, LinkUser, Scheme, UserGeometry,
};
use crate::pairing::{schedule_hybrid, write_plan_csv, HybridScenario};
use crate::rng::{self, derive_seed};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl RunError {
    /// Process exit code: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Invalid(_) => 1,
            _ => 2,
        }
    }
}

fn runtime(context: &str) -> impl Fn(&dyn std::fmt::Display) -> RunError + '_ {
    move |e| RunError::Runtime(format!("{context}: {e}"))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    /// Worker threads; `None` uses the available parallelism.
    pub threads: Option<usize>,
    /// Directory that relative paths in the config are resolved against.
    pub base_dir: Option<PathBuf>,
}

/// One generated file, before it is written.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub file_name: String,
    pub contents: String,
}

/// Applies the seed override and validates.
pub fn prepare(config: &ScenarioConfig, seed: Option<u64>) -> Result<ScenarioConfig, RunError> {
    let mut cfg = config.clone();
    if seed.is_some() {
        cfg.seed = seed;
    }
    let violations = cfg.validate();
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(RunError::Invalid(violations))
    }
}

/// Runs every requested metric, writes the CSVs and `manifest.json` into
/// `opts.out_dir`, and returns the manifest.
pub fn run(config: &ScenarioConfig, opts: &RunOptions) -> Result<RunManifest, RunError> {
    let started = Instant::now();
    let cfg = prepare(config, opts.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| RunError::Runtime(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    let base = opts.base_dir.clone().unwrap_or_default();
    let outputs = pool.install(|| generate(&cfg, &base))?;

    fs::create_dir_all(&opts.out_dir).map_err(|source| RunError::Io {
        path: opts.out_dir.clone(),
        source,
    })?;
    let mut files: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (metric, outs) in &outputs {
        for o in outs {
            let path = opts.out_dir.join(&o.file_name);
            fs::write(&path, &o.contents).map_err(|source| RunError::Io { path, source })?;
            files
                .entry(metric.name().to_string())
                .or_default()
                .push(o.file_name.clone());
        }
    }
    let manifest = RunManifest {
        name: cfg.name.clone(),
        config_digest: cfg.digest(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        threads,
        outputs: files,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.write(&opts.out_dir.join("manifest.json"))?;
    log::info!(
        "{}: {} metric(s) in {:.2} s",
        if cfg.name.is_empty() { "run" } else { &cfg.name },
        outputs.len(),
        manifest.wall_clock_seconds
    );
    Ok(manifest)
}

/// Computes every output in memory. `cfg` must already be validated.
pub fn generate(cfg: &ScenarioConfig, base_dir: &Path) -> Result<Vec<(Metric, Vec<Output>)>, RunError> {
    let digest = cfg.digest();
    let header = format!("# digest={digest}\n");
    let mut metrics = cfg.metrics.clone();
    metrics.sort();
    metrics.dedup();

    let link_needed = metrics.contains(&Metric::Ber) || metrics.contains(&Metric::Throughput);
    let link_stats = if link_needed {
        Some(link_sweep(cfg)?)
    } else {
        None
    };

    let mut out = Vec::new();
    for m in metrics {
        let files = match m {
            Metric::PowerMap => vec![power_map_csv(cfg, &digest)?],
            Metric::SumRate => vec![csv(m, &header, sum_rate_body(cfg)?)],
            Metric::Throughput => vec![csv(
                m,
                &header,
                throughput_body(cfg, link_stats.as_ref().expect("computed")),
            )],
            Metric::Ber => vec![csv(m, &header, ber_body(cfg, link_stats.as_ref().expect("computed")))],
            Metric::Coverage => vec![csv(m, &header, coverage_body(cfg)?)],
            Metric::Handover => vec![csv(m, &header, handover_body(cfg, base_dir)?)],
            Metric::AreaMap => vec![area_map_csv(cfg, &digest)?],
            Metric::Pairing => pairing_outputs(cfg, &digest)?,
        };
        out.push((m, files));
    }
    Ok(out)
}

fn csv(m: Metric, header: &str, body: String) -> Output {
    Output {
        file_name: format!("{}.csv", m.name()),
        contents: format!("{header}{body}"),
    }
}

fn seed(cfg: &ScenarioConfig) -> u64 {
    cfg.seed.unwrap_or(0)
}

fn plane_receiver(cfg: &ScenarioConfig) -> Receiver {
    cfg.receiver.build(cfg.room.receiver_plane_height)
}

fn check_geometry(cfg: &ScenarioConfig) -> Result<Vec<Luminaire>, RunError> {
    let leds = cfg.luminaires();
    for l in &leds {
        l.validate().map_err(|e| runtime("luminaire")(&e))?;
    }
    plane_receiver(cfg)
        .validate()
        .map_err(|e| runtime("receiver")(&e))?;
    Ok(leds)
}

fn power_map_csv(cfg: &ScenarioConfig, digest: &str) -> Result<Output, RunError> {
    let leds = check_geometry(cfg)?;
    let map = power_map(&cfg.room, &leds, cfg.power_map.grid_step, &plane_receiver(cfg))
        .map_err(|e| runtime("power map")(&e))?;
    let mut buf = Vec::new();
    map.write_csv(&mut buf, Some(&format!("digest={digest}")))
        .expect("writing to memory");
    Ok(Output {
        file_name: "power_map.csv".into(),
        contents: String::from_utf8(buf).expect("ascii"),
    })
}

/// Normalized gains, physical reference gain and optional geometry.
struct LinkUsers {
    gains: Vec<f64>,
    reference: f64,
    geometry: Option<Vec<UserGeometry>>,
}

fn link_users(cfg: &ScenarioConfig) -> Result<LinkUsers, RunError> {
    if let Some(g) = &cfg.users.gains {
        let max = g.iter().copied().fold(0.0, f64::max);
        return Ok(LinkUsers {
            gains: g.iter().map(|v| v / max).collect(),
            reference: 1.0,
            geometry: None,
        });
    }
    let leds = check_geometry(cfg)?;
    let led = &leds[0];
    let z = cfg.room.receiver_plane_height;
    let rx = plane_receiver(cfg);
    let positions = cfg.users.positions.as_deref().unwrap_or_default();
    let mut geometry = Vec::with_capacity(positions.len());
    let mut physical = Vec::with_capacity(positions.len());
    for (i, &[x, y]) in positions.iter().enumerate() {
        let r = rx.at(Vec3::new(x, y, z));
        let h = los_gain(led, &r).map_err(|e| runtime("user gain")(&e))?.value();
        if h == 0.0 {
            return Err(RunError::Runtime(format!("user {i} at ({x}, {y}) receives no light")));
        }
        physical.push(h);
        geometry.push(UserGeometry {
            luminaire: led.clone(),
            receiver: r,
        });
    }
    let reference = physical.iter().copied().fold(0.0, f64::max);
    Ok(LinkUsers {
        gains: physical.iter().map(|h| h / reference).collect(),
        reference,
        geometry: Some(geometry),
    })
}

fn link_scenario(cfg: &ScenarioConfig, users: &LinkUsers, scheme: Scheme, snr_db: f64) -> LinkScenario {
    let total = cfg.allocation.total_power;
    LinkScenario {
        users: users
            .gains
            .iter()
            .enumerate()
            .map(|(i, &g)| LinkUser {
                gain: g,
                qam: cfg.users.qam,
                geometry: users.geometry.as_ref().map(|v| v[i].clone()),
            })
            .collect(),
        reference_gain: users.reference,
        total_power: total,
        noise_power: total / 10f64.powf(snr_db / 10.0),
        ofdm: cfg.ofdm.modem(),
        ofdm_symbols_per_frame: cfg.ofdm.symbols_per_frame,
        csi: cfg.csi,
        strategy: cfg.allocation.strategy(),
        scheme,
        cancellation_residual: cfg.ofdm.cancellation_residual,
    }
}

const METRIC_HEADER: &str = "snr_db,scheme,user,value,ci_halfwidth\n";

fn row(out: &mut String, snr: f64, scheme: &str, user: &str, value: f64, ci: f64) {
    writeln!(out, "{},{scheme},{user},{},{}", fmt_sig(snr), fmt_sig(value), fmt_sig(ci))
        .expect("writing to a string");
}

fn sum_rate_body(cfg: &ScenarioConfig) -> Result<String, RunError> {
    let users = link_users(cfg)?;
    let schemes = cfg.link_schemes();
    let mut body = String::from(METRIC_HEADER);
    for (i, &snr) in cfg.sweep.snr_db.iter().enumerate() {
        let sc = link_scenario(cfg, &users, Scheme::Noma, snr);
        let s = derive_seed(seed(cfg), &[Metric::SumRate.tag(), i as u64]);
        let r = rate_montecarlo(&sc, cfg.trials, s).map_err(|e| runtime("sum rate")(&e))?;
        for &scheme in &schemes {
            let (per_user, sum) = match scheme {
                Scheme::Noma => (&r.noma, r.noma_sum),
                Scheme::Ofdma => (&r.ofdma, r.ofdma_sum),
            };
            for (u, m) in per_user.iter().enumerate() {
                row(&mut body, snr, scheme.name(), &u.to_string(), m.mean, m.ci_halfwidth);
            }
            row(&mut body, snr, scheme.name(), "sum", sum.mean, sum.ci_halfwidth);
        }
    }
    Ok(body)
}

/// `(snr, stats)` per scheme and sweep point, shared by BER and throughput.
type LinkSweep = Vec<(f64, Vec<LinkStats>)>;

fn link_sweep(cfg: &ScenarioConfig) -> Result<LinkSweep, RunError> {
    let users = link_users(cfg)?;
    cfg.sweep
        .snr_db
        .iter()
        .enumerate()
        .map(|(i, &snr)| {
            // Both schemes see the same data and noise streams.
            let s = derive_seed(seed(cfg), &[Metric::Ber.tag(), i as u64]);
            let stats = cfg
                .link_schemes()
                .into_iter()
                .map(|scheme| {
                    ber_montecarlo(&link_scenario(cfg, &users, scheme, snr), cfg.trials, s)
                        .map_err(|e| runtime("link simulation")(&e))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((snr, stats))
        })
        .collect()
}

fn rss(values: impl Iterator<Item = f64>) -> f64 {
    values.map(|v| v * v).sum::<f64>().sqrt()
}

fn ber_body(_cfg: &ScenarioConfig, sweep: &LinkSweep) -> String {
    let mut body = String::from(METRIC_HEADER);
    for (snr, per_scheme) in sweep {
        for st in per_scheme {
            for u in &st.users {
                row(&mut body, *snr, st.scheme.name(), &u.user_id.to_string(), u.ber, u.ci_halfwidth);
            }
            let n = st.users.len() as f64;
            let ci = rss(st.users.iter().map(|u| u.ci_halfwidth)) / n;
            row(&mut body, *snr, st.scheme.name(), "mean", st.mean_ber(), ci);
        }
    }
    body
}

fn throughput_body(_cfg: &ScenarioConfig, sweep: &LinkSweep) -> String {
    let mut body = String::from(METRIC_HEADER);
    for (snr, per_scheme) in sweep {
        for st in per_scheme {
            let share_ci = |u: &crate::noma_link::UserLinkStats| {
                if u.ber < 1.0 {
                    u.ci_halfwidth * u.throughput / (1.0 - u.ber)
                } else {
                    0.0
                }
            };
            for u in &st.users {
                row(&mut body, *snr, st.scheme.name(), &u.user_id.to_string(), u.throughput, share_ci(u));
            }
            let sum: f64 = st.users.iter().map(|u| u.throughput).sum();
            row(&mut body, *snr, st.scheme.name(), "sum", sum, rss(st.users.iter().map(share_ci)));
        }
    }
    body
}

fn coverage_body(cfg: &ScenarioConfig) -> Result<String, RunError> {
    let leds = check_geometry(cfg)?;
    let cov = &cfg.coverage;
    let mut body = String::from("target_rate,scheme,value,ci_halfwidth\n");
    let s = derive_seed(seed(cfg), &[Metric::Coverage.tag()]);
    for &target in &cov.targets {
        for scheme in cfg.link_schemes() {
            let sc = CoverageScenario {
                luminaire: leds[0].clone(),
                receiver: plane_receiver(cfg),
                placement: cfg.region_or_room(cov.region),
                n_users: cov.n_users,
                total_power: cfg.allocation.total_power,
                noise_power: cfg.receiver.noise_power,
                scheme,
                strategy: cfg.allocation.strategy(),
            };
            // The same seed at every target reuses the same placements.
            let (p, ci) = coverage_probability(&sc, &vec![target; cov.n_users], cfg.trials, s)
                .map_err(|e| runtime("coverage")(&e))?;
            writeln!(body, "{},{},{},{}", fmt_sig(target), scheme.name(), fmt_sig(p), fmt_sig(ci))
                .expect("writing to a string");
        }
    }
    Ok(body)
}

fn layout(cfg: &ScenarioConfig) -> Result<CellLayout, RunError> {
    let leds = check_geometry(cfg)?;
    let reuse = cfg.multicell.reuse && leds.len() > 1;
    let raw = CellLayout {
        room: cfg.room,
        luminaires: leds,
        reuse,
    };
    let l = if cfg.multicell.assign_groups {
        let mut l = assign_frequency_groups(&raw);
        l.reuse = reuse;
        l
    } else {
        raw
    };
    l.validate().map_err(|e| runtime("layout")(&e))?;
    Ok(l)
}

fn handover_body(cfg: &ScenarioConfig, base_dir: &Path) -> Result<String, RunError> {
    let layout = layout(cfg)?;
    let m = &cfg.multicell;
    let threshold = m.threshold.expect("validated");
    let z = cfg.room.receiver_plane_height;
    let paths: Vec<(usize, Vec<Vec3>)> = match &m.trace_file {
        Some(file) => {
            let path = base_dir.join(file);
            let f = fs::File::open(&path).map_err(|source| RunError::Io {
                path: path.clone(),
                source,
            })?;
            let trace = MobilityTrace::from_csv(f).map_err(|e| runtime("trace")(&e))?;
            trace
                .by_user()
                .into_iter()
                .map(|(u, pts)| (u, pts.iter().map(|&(_, x, y)| Vec3::new(x, y, z)).collect()))
                .collect()
        }
        None => (0..m.random_traces)
            .map(|k| {
                let mut r = rng::stream(seed(cfg), &[Metric::Handover.tag(), k as u64]);
                let mut point = || {
                    (
                        r.random_range(0.0..cfg.room.width),
                        r.random_range(0.0..cfg.room.depth),
                    )
                };
                let (a, b) = (point(), point());
                let steps = m.trace_steps;
                let path = (0..=steps)
                    .map(|i| {
                        let s = i as f64 / steps as f64;
                        Vec3::new(a.0 + (b.0 - a.0) * s, a.1 + (b.1 - a.1) * s, z)
                    })
                    .collect();
                (k, path)
            })
            .collect(),
    };
    let rx = plane_receiver(cfg);
    let mut body = String::from("trace,fov_policy,handovers\n");
    for (id, path) in &paths {
        for &policy in &m.fov_policies {
            let n = handover_count(path, &layout, &rx, policy, &m.edge, threshold)
                .map_err(|e| runtime("handover")(&e))?;
            let name = match policy {
                FovPolicy::Fixed => "fixed",
                FovPolicy::WidenAtEdge => "widen_at_edge",
            };
            writeln!(body, "{id},{name},{n}").expect("writing to a string");
        }
    }
    Ok(body)
}

fn area_map_csv(cfg: &ScenarioConfig, digest: &str) -> Result<Output, RunError> {
    let layout = layout(cfg)?;
    let m = &cfg.multicell;
    let cells = area_map(&layout, &plane_receiver(cfg), m.grid_step, m.threshold.expect("validated"))
        .map_err(|e| runtime("area map")(&e))?;
    let mut buf = Vec::new();
    write_area_csv(&cells, &mut buf, Some(&format!("digest={digest}"))).expect("writing to memory");
    Ok(Output {
        file_name: "area_map.csv".into(),
        contents: String::from_utf8(buf).expect("ascii"),
    })
}

fn pairing_outputs(cfg: &ScenarioConfig, digest: &str) -> Result<Vec<Output>, RunError> {
    let leds = check_geometry(cfg)?;
    let p = &cfg.pairing;
    let rx = plane_receiver(cfg);
    let z = cfg.room.receiver_plane_height;
    let region = cfg.region_or_room(p.region);
    let scenario = HybridScenario {
        total_power: cfg.allocation.total_power,
        noise_power: cfg.receiver.noise_power,
        strategy: cfg.allocation.strategy(),
    };
    let mut plans: BTreeMap<&str, Vec<(usize, crate::pairing::PairingPlan)>> = BTreeMap::new();
    let mut rates = format!("# digest={digest}\nepoch,strategy,user,value\n");
    for epoch in 0..p.epochs {
        let mut r = rng::stream(seed(cfg), &[Metric::Pairing.tag(), epoch as u64]);
        let gains = (0..p.n_users)
            .map(|u| {
                let pos = region.sample(z, &mut r);
                let g = los_gain(&leds[0], &rx.at(pos)).map_err(|e| runtime("pairing")(&e))?;
                if g.value() == 0.0 {
                    return Err(RunError::Runtime(format!(
                        "pairing epoch {epoch}: user {u} receives no light"
                    )));
                }
                Ok(g)
            })
            .collect::<Result<Vec<ChannelGain>, _>>()?;
        let plan_seed = derive_seed(seed(cfg), &[Metric::Pairing.tag(), epoch as u64, 1]);
        for &strategy in &p.strategies {
            let plan = strategy
                .plan(&gains, p.group_size, plan_seed)
                .map_err(|e| runtime("pairing")(&e))?
                .with_mode(p.mode);
            let user_rates =
                schedule_hybrid(&plan, &gains, &scenario).map_err(|e| runtime("hybrid schedule")(&e))?;
            for (u, v) in user_rates.iter().enumerate() {
                writeln!(rates, "{epoch},{},{u},{}", strategy.name(), fmt_sig(*v))
                    .expect("writing to a string");
            }
            let sum: f64 = user_rates.iter().sum();
            writeln!(rates, "{epoch},{},sum,{}", strategy.name(), fmt_sig(sum))
                .expect("writing to a string");
            plans.entry(strategy.name()).or_default().push((epoch, plan));
        }
    }
    let mut out = vec![Output {
        file_name: "hybrid_rate.csv".into(),
        contents: rates,
    }];
    for (name, list) in plans {
        let mut buf = Vec::new();
        write_plan_csv(&list, &mut buf, Some(&format!("digest={digest}"))).expect("writing to memory");
        out.push(Output {
            file_name: format!("pairing_plan_{name}.csv"),
            contents: String::from_utf8(buf).expect("ascii"),
        });
    }
    Ok(out)
}
