//! The four subcommands. Each one computes everything in memory and then
//! writes all of its files in one commit.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use msgp::dataset::{map_to_lattice, Dataset};
use msgp::kernels::SeParams;
use msgp::predict::{metrics, posterior_predict, Metrics, PredictOptions, PredictionResult};
use msgp::sampler::checkpoint::sidecar_path;
use msgp::sampler::{fit_trend, Coupling, FitResult, Sampler};
use msgp::simdata::{
    default_cube_components, pintore_dataset, simulate_st_cube, simulate_two_region_1d, PintoreField, RhoMap,
    TwoRegionConfig,
};
use msgp::summary::{summarize, ChainSummary};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::io::{dataset_csv, json_bytes, numeric_csv, read_table, Outputs, FORMAT_VERSION};
use crate::settings::{parse_sizes, parse_windows, RhoMapKind, Scenario, Settings};

/// Seed of stream `stream` derived from the run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Worker count: `MSGP_THREADS` if set, else the available cores, at most `jobs`.
pub fn thread_count(jobs: usize) -> usize {
    let cap = std::env::var("MSGP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

/// `f(0..jobs)` on a small thread pool; results come back in job order.
fn parallel_map<T: Send>(jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..thread_count(jobs) {
            scope.spawn(|| loop {
                let job = {
                    let mut n = next.lock().unwrap();
                    if *n == jobs {
                        break;
                    }
                    *n += 1;
                    *n - 1
                };
                let r = f(job);
                results.lock().unwrap()[job] = Some(r);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.expect("job ran")).collect()
}

pub fn simulate(settings: &Settings, out: &Path) -> CliResult<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let (generator, params, data) = match settings.scenario {
        Scenario::TwoRegion => {
            let config = TwoRegionConfig {
                n: settings.n,
                split: settings.split,
                left: SeParams::isotropic(settings.region_phi, settings.rho_left, 1)?,
                right: SeParams::isotropic(settings.region_phi, settings.rho_right, 1)?,
                sigma2: settings.sigma2,
                zero_cross: settings.zero_cross,
            };
            let data = simulate_two_region_1d(&config, &mut rng)?;
            ("two_region_1d", serde_json::to_value(&config).unwrap(), data)
        }
        Scenario::Pintore => {
            let grid = parse_sizes(&settings.grid, 2, "grid")?;
            let rho = match settings.rho_map {
                RhoMapKind::Smooth => RhoMap::Smooth,
                RhoMapKind::ThreeLevel => RhoMap::three_level([settings.levels[0], settings.levels[1], settings.levels[2]]),
            };
            let field = PintoreField::new(settings.pintore_phi, rho)?;
            let data = pintore_dataset(grid[0], grid[1], &field, settings.sigma2, &mut rng)?;
            let params = json!({ "grid": grid, "field": field, "sigma2": settings.sigma2 });
            ("pintore", params, data)
        }
        Scenario::StCube => {
            let dims = parse_sizes(&settings.dims, 3, "dims")?;
            let components = default_cube_components();
            let data = simulate_st_cube(dims[0], dims[1], dims[2], &components, settings.sigma2, &mut rng)?;
            let params = json!({ "dims": dims, "components": components, "sigma2": settings.sigma2 });
            ("st_cube", params, data)
        }
    };
    let provenance = json!({
        "format_version": FORMAT_VERSION,
        "generator": generator,
        "params": params,
        "seed": settings.seed,
        "rows": data.len(),
    });
    let mut outputs = Outputs::default();
    outputs.add(out, dataset_csv(&data)?);
    outputs.add(provenance_path(out), json_bytes(&provenance)?);
    outputs.commit()?;
    log::info!("wrote {} rows to {}", data.len(), out.display());
    Ok(())
}

/// `data.csv` -> `data.provenance.json`.
pub fn provenance_path(out: &Path) -> PathBuf {
    out.with_extension("provenance.json")
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    read_table(path)?.into_dataset(path)
}

/// Run `settings.chains` chains of one model; finished samplers in chain order.
fn run_chains(
    dataset: &Dataset,
    settings: &Settings,
    coupling: Coupling,
    cover: Vec<Vec<f64>>,
    seed: u64,
) -> CliResult<Vec<Sampler>> {
    let data = map_to_lattice(dataset, &settings.mapping(cover))?;
    let (trend, _) = fit_trend(&data.coords, &data.y, settings.trend_degree)?;
    let configs: Vec<_> = (0..settings.chains)
        .map(|c| settings.sampler_config(derive_seed(seed, c as u64), coupling))
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let results = parallel_map(configs.len(), |c| -> CliResult<Sampler> {
        let mut sampler = Sampler::new(data.clone(), trend.clone(), configs[c].clone())?;
        sampler.run_until(configs[c].iters)?;
        Ok(sampler)
    });
    results.into_iter().collect()
}

fn fit_result(sampler: &Sampler) -> FitResult {
    FitResult {
        config: sampler.config().clone(),
        data: sampler.data().clone(),
        trend: sampler.trend().clone(),
        chain: sampler.chain().clone(),
    }
}

/// Draws of all chains appended in chain order to the first chain's fit.
fn pool(mut fits: Vec<FitResult>) -> CliResult<FitResult> {
    if fits.is_empty() {
        return Err(CliError::Data("no chains to pool".into()));
    }
    let mut first = fits.remove(0);
    for f in fits {
        if f.data.sites != first.data.sites || f.data.mapping != first.data.mapping {
            return Err(CliError::Data("chains were fitted to different data".into()));
        }
        first.chain.draws.extend(f.chain.draws);
    }
    Ok(first)
}

#[derive(Serialize)]
struct Estimate {
    name: String,
    mean: f64,
    sd: f64,
    /// `mean (sd)`.
    table: String,
}

impl Estimate {
    fn new(name: &str, mean: f64, sd: f64) -> Self {
        Estimate {
            name: name.to_string(),
            mean,
            sd,
            table: format!("{mean:.3} ({sd:.3})"),
        }
    }
}

#[derive(Serialize)]
struct ComponentReport {
    label: usize,
    occupancy: f64,
    effective: bool,
    acceptance_rate: Option<f64>,
    parameters: Vec<Estimate>,
}

#[derive(Serialize)]
struct ChainReport {
    chain: usize,
    seed: u64,
    draws: usize,
    effective_components: usize,
    sigma2: Estimate,
    /// Components that held any observations, by decreasing occupancy.
    components: Vec<ComponentReport>,
    warnings: Vec<String>,
}

fn chain_report(chain: usize, seed: u64, s: ChainSummary) -> ChainReport {
    ChainReport {
        chain,
        seed,
        draws: s.draws,
        effective_components: s.effective_components,
        sigma2: Estimate::new("sigma2", s.sigma2.mean, s.sigma2.sd),
        components: s
            .components
            .into_iter()
            .filter(|c| c.occupancy > 0.0)
            .map(|c| ComponentReport {
                label: c.label,
                occupancy: c.occupancy,
                effective: c.effective,
                acceptance_rate: c.acceptance_rate,
                parameters: c.parameters.iter().map(|p| Estimate::new(&p.name, p.mean, p.sd)).collect(),
            })
            .collect(),
        warnings: s.warnings,
    }
}

pub fn fit(settings: &Settings, data_path: &Path, out: &Path, cover: Option<&Path>) -> CliResult<()> {
    let dataset = load_dataset(data_path)?;
    let cover = match cover {
        Some(p) => read_table(p)?.coords,
        None => Vec::new(),
    };
    let samplers = run_chains(&dataset, settings, Coupling::Shared, cover, settings.seed)?;
    let mut outputs = Outputs::default();
    let mut reports = Vec::new();
    for (c, sampler) in samplers.iter().enumerate() {
        let (bytes, sidecar) = sampler.to_checkpoint_bytes()?;
        let path = out.join(format!("chain-{c}.ckpt"));
        outputs.add(sidecar_path(&path), json_bytes(&sidecar)?);
        outputs.add(path, bytes);

        let chain = sampler.chain();
        let summary = summarize(chain, settings.k0, settings.threshold);
        for w in &summary.warnings {
            log::warn!("chain {c}: {w}");
        }
        reports.push(chain_report(c, sampler.config().seed, summary));

        let d = sampler.data().coords.first().map_or(0, Vec::len);
        let mut header: Vec<String> = (1..=d).map(|l| format!("x{l}")).collect();
        header.extend((0..settings.k0).map(|k| format!("p{k}")));
        let probs = chain.assignment_probabilities(settings.k0);
        let rows = sampler.data().coords.iter().zip(probs).map(|(x, p)| {
            let mut row = x.clone();
            row.extend(p);
            row
        });
        outputs.add(out.join(format!("occupancy-{c}.csv")), numeric_csv(&header, rows)?);
    }
    let summary = json!({
        "format_version": FORMAT_VERSION,
        "data": data_path.display().to_string(),
        "observations": dataset.len(),
        "kernel": settings.family().key(),
        "k0": settings.k0,
        "alpha": settings.alpha,
        "iters": settings.iters,
        "burn_in": settings.iters / 2,
        "seed": settings.seed,
        "chains": reports,
    });
    outputs.add(out.join("summary.json"), json_bytes(&summary)?);
    outputs.commit()
}

/// Checkpoint files named by `path`: the file itself, or a directory's
/// `chain-<c>.ckpt` files in chain order.
pub fn checkpoint_files(path: &Path) -> CliResult<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut found: Vec<(usize, PathBuf)> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let c = name.strip_prefix("chain-")?.strip_suffix(".ckpt")?.parse().ok()?;
            Some((c, e.path()))
        })
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(CliError::Data(format!("no chain-<c>.ckpt files in {}", path.display())));
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn options(settings: &Settings) -> PredictOptions {
    PredictOptions {
        model: settings.prediction_model(),
        include_covariance: false,
        thin: settings.thin,
        keep_draws: false,
    }
}

fn prediction_csv(targets: &[Vec<f64>], p: &PredictionResult) -> CliResult<Vec<u8>> {
    let d = targets.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (1..=d).map(|l| format!("x{l}")).collect();
    header.extend(["mean".to_string(), "variance".to_string()]);
    let rows = targets.iter().enumerate().map(|(i, x)| {
        let mut row = x.clone();
        row.extend([p.mean[i], p.variance[i]]);
        row
    });
    numeric_csv(&header, rows)
}

pub fn predict(settings: &Settings, checkpoint: &Path, targets_path: &Path, out: &Path) -> CliResult<()> {
    let fits = checkpoint_files(checkpoint)?
        .iter()
        .map(|p| {
            let s = Sampler::load_checkpoint(p)?;
            if !s.is_finished() {
                log::warn!("{} stopped at iteration {} of {}", p.display(), s.iteration(), s.config().iters);
            }
            Ok(fit_result(&s))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let fit = pool(fits)?;
    let table = read_table(targets_path)?;
    let prediction = posterior_predict(&table.coords, &fit, &options(settings))?;

    let mut outputs = Outputs::default();
    outputs.add(out.join("predictions.csv"), prediction_csv(&table.coords, &prediction)?);
    let scores = table.outcomes().map(|y| metrics(&prediction, &y)).transpose()?;
    if scores.is_none() {
        log::warn!("targets lack outcomes; metrics are null");
    }
    let report = json!({
        "format_version": FORMAT_VERSION,
        "model": settings.model,
        "targets": table.coords.len(),
        "draws": fit.chain.draws.len().div_ceil(settings.thin),
        "rmse": scores.map(|m| m.rmse),
        "avg_uncertainty": scores.map(|m| m.avg_uncertainty),
    });
    outputs.add(out.join("metrics.json"), json_bytes(&report)?);
    outputs.commit()
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionReport {
    pub from: f64,
    pub to: f64,
    pub held_out: usize,
    pub msgp: Metrics,
    pub igp: Metrics,
}

/// Per held-out window: both models fitted to the remaining data,
/// predicted at every site of the dataset.
pub struct Experiment {
    pub report: RegionReport,
    pub held_out: Vec<bool>,
    pub msgp: PredictionResult,
    pub igp: PredictionResult,
}

pub fn run_comparison(settings: &Settings, dataset: &Dataset) -> CliResult<Vec<Experiment>> {
    let windows = parse_windows(&settings.holdout)?;
    let jobs: Vec<(usize, Coupling)> = (0..windows.len())
        .flat_map(|r| [(r, Coupling::Shared), (r, Coupling::Independent)])
        .collect();
    let held: Vec<Vec<bool>> = windows
        .iter()
        .map(|&(a, b)| dataset.coords.iter().map(|x| a < x[0] && x[0] < b).collect())
        .collect();
    for (r, h) in held.iter().enumerate() {
        if !h.contains(&true) || !h.contains(&false) {
            return Err(CliError::Config(format!(
                "holdout window {:?} must leave both held-out and training observations",
                windows[r]
            )));
        }
    }
    let fits = parallel_map(jobs.len(), |j| -> CliResult<PredictionResult> {
        let (r, coupling) = jobs[j];
        let keep: Vec<usize> = (0..dataset.len()).filter(|&i| !held[r][i]).collect();
        let train = dataset.subset(&keep);
        let mut s = settings.clone();
        s.chains = 1;
        s.model = match coupling {
            Coupling::Shared => crate::settings::ModelKey::Msgp,
            Coupling::Independent => crate::settings::ModelKey::Igp,
        };
        let seed = derive_seed(settings.seed, r as u64);
        let sampler = run_chains(&train, &s, coupling, dataset.coords.clone(), seed)?.remove(0);
        Ok(posterior_predict(&dataset.coords, &fit_result(&sampler), &options(&s))?)
    });
    let mut fits = fits.into_iter().collect::<CliResult<Vec<_>>>()?.into_iter();
    let mut out = Vec::new();
    for (r, &(from, to)) in windows.iter().enumerate() {
        let (msgp, igp) = (fits.next().unwrap(), fits.next().unwrap());
        let idx: Vec<usize> = (0..dataset.len()).filter(|&i| held[r][i]).collect();
        let score = |p: &PredictionResult| {
            let sub = PredictionResult {
                mean: idx.iter().map(|&i| p.mean[i]).collect(),
                variance: idx.iter().map(|&i| p.variance[i]).collect(),
                covariance: None,
                per_draw: None,
            };
            metrics(&sub, &idx.iter().map(|&i| dataset.y[i]).collect::<Vec<_>>())
        };
        out.push(Experiment {
            report: RegionReport {
                from,
                to,
                held_out: idx.len(),
                msgp: score(&msgp)?,
                igp: score(&igp)?,
            },
            held_out: held[r].clone(),
            msgp,
            igp,
        });
    }
    Ok(out)
}

pub fn compare(settings: &Settings, data_path: &Path, out: &Path) -> CliResult<()> {
    let dataset = load_dataset(data_path)?;
    let experiments = run_comparison(settings, &dataset)?;
    let reports: Vec<&RegionReport> = experiments.iter().map(|e| &e.report).collect();

    let mut table = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    table.write_record(["region", "model", "rmse", "avg_uncertainty"]).map_err(csv_err)?;
    for r in &reports {
        for (model, m) in [("MSGP", r.msgp), ("IGP", r.igp)] {
            let region = format!("({}, {})", r.from, r.to);
            table
                .write_record([region, model.to_string(), m.rmse.to_string(), m.avg_uncertainty.to_string()])
                .map_err(csv_err)?;
        }
    }
    let table = table.into_inner().map_err(|e| CliError::Data(e.to_string()))?;

    let d = dataset.dims();
    let mut header = vec!["from".to_string(), "to".to_string()];
    header.extend((1..=d).map(|l| format!("x{l}")));
    header.extend(
        ["y", "held_out", "msgp_mean", "msgp_variance", "igp_mean", "igp_variance"].map(String::from),
    );
    let rows = experiments.iter().flat_map(|e| {
        let dataset = &dataset;
        (0..dataset.len()).map(move |i| {
            let mut row = vec![e.report.from, e.report.to];
            row.extend(&dataset.coords[i]);
            row.extend([
                dataset.y[i],
                f64::from(u8::from(e.held_out[i])),
                e.msgp.mean[i],
                e.msgp.variance[i],
                e.igp.mean[i],
                e.igp.variance[i],
            ]);
            row
        })
    });

    let report = json!({
        "format_version": FORMAT_VERSION,
        "data": data_path.display().to_string(),
        "seed": settings.seed,
        "iters": settings.iters,
        "k0": settings.k0,
        "regions": reports,
    });
    let mut outputs = Outputs::default();
    outputs.add(out.join("report.json"), json_bytes(&report)?);
    outputs.add(out.join("report.csv"), table);
    outputs.add(out.join("variance_curves.csv"), numeric_csv(&header, rows)?);
    outputs.commit()?;
    for r in &reports {
        log::info!(
            "({}, {}): MSGP rmse {:.3} unc {:.3} | IGP rmse {:.3} unc {:.3}",
            r.from,
            r.to,
            r.msgp.rmse,
            r.msgp.avg_uncertainty,
            r.igp.rmse,
            r.igp.avg_uncertainty
        );
    }
    Ok(())
}
