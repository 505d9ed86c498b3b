use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tomodeq::classical::{fbp, tune_tv_lambda, tv_reconstruct, TvConfig};
use tomodeq::denoiser::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use tomodeq::deq::fixed_point_solve;
use tomodeq::experiment::{baseline_scores, desk_data, run_training};
use tomodeq::io::{export_pgm, read_image, read_measurement, write_container, write_csv, fmt_f64, Measurement, Payload};
use tomodeq::linalg::derive_seed;
use tomodeq::metrics::{psnr, ssim};
use tomodeq::phantom::phantom_set;
use tomodeq::plot::{write_svg, Series};
use tomodeq::radon::radon_forward;
use tomodeq::sampling::sample_mask;
use tomodeq::training::{measure, train, write_history_csv, EpochRecord, LossKind};
use tomodeq::verify::{
    gradcheck_all, render_text, thm1_denoiser_spec, verify_prop1, verify_prop2, verify_thm1, write_reports_csv,
    write_reports_text, VerificationReport, VerifyMode,
};
use tomodeq::{Geometry, MaskDistribution, TomoError};

use crate::config::RunConfig;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Tomo(TomoError),
    VerificationFailed(usize),
}

impl From<TomoError> for CliError {
    fn from(e: TomoError) -> Self {
        CliError::Tomo(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Tomo(e) => write!(f, "{e}"),
            CliError::VerificationFailed(n) => write!(f, "{n} verification check(s) failed"),
        }
    }
}

impl CliError {
    /// 1 usage/config, 2 verification failure, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::VerificationFailed(_) => 2,
            CliError::Tomo(TomoError::NonFinite(_)) => 3,
            CliError::Tomo(_) => 1,
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Tomo(TomoError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    cfg.write_resolved(out)?;
    Ok(())
}

pub const MANIFEST_HEADER: [&str; 7] = ["id", "phantom", "full_sinogram", "measurement", "s", "n_angles_total", "noise_sigma"];

/// Phantoms, full sinograms and masked noisy measurements plus a manifest.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let g = cfg.geometry()?;
    let dist = cfg.sampling()?;
    let noise = cfg.noise()?;
    let (count, n_min, n_max) = cfg.phantom_range()?;
    let seed = cfg.seed()?;
    let phantoms = phantom_set(count, g.n_pixels, n_min, n_max, cfg.data_seed()?)?;
    let mut rows = Vec::with_capacity(count);
    for (i, x) in phantoms.iter().enumerate() {
        let full = radon_forward(x, &g)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x51, i as u64]));
        let mask = sample_mask(&dist, &mut rng)?;
        let sigma = noise.relative_level * full.max_abs();
        let y = measure(&full, &mask, sigma, &mut rng)?;
        let id = format!("{i:03}");
        let names = [format!("phantom_{id}.tsdq"), format!("full_{id}.tsdq"), format!("meas_{id}.tsdq")];
        write_container(&out.join(&names[0]), &Payload::Image(x.clone()))?;
        write_container(&out.join(&names[1]), &Payload::Sinogram(full))?;
        write_container(&out.join(&names[2]), &Payload::Measurement(Measurement { mask, sinogram: y }))?;
        let [a, b, c] = names;
        rows.push(vec![
            id,
            a,
            b,
            c,
            dist.mask_size().to_string(),
            g.n_angles_total.to_string(),
            fmt_f64(sigma),
        ]);
    }
    write_csv(&out.join("manifest.csv"), &MANIFEST_HEADER, &rows)?;
    println!("simulate: {count} phantoms written to {}", out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fbp,
    Tv,
    Deq,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::Tv => "tv",
            Method::Deq => "deq",
        }
    }
}

struct ManifestRow {
    id: String,
    phantom: String,
    measurement: String,
}

fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dir.join("manifest.csv");
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(TomoError::from)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("{}: missing column '{name}'", path.display())))
    };
    let (ci, cp, cm) = (col("id")?, col("phantom")?, col("measurement")?);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(TomoError::from)?;
        rows.push(ManifestRow {
            id: rec[ci].to_string(),
            phantom: rec[cp].to_string(),
            measurement: rec[cm].to_string(),
        });
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{}: no measurements listed", path.display())));
    }
    Ok(rows)
}

pub const METRICS_HEADER: [&str; 5] = ["id", "method", "s", "psnr", "ssim"];

fn tv_lambda(cfg: &RunConfig, g: &Geometry, m: &Measurement, base: &TvConfig) -> Result<f64> {
    let (_, fixed) = cfg.tv()?;
    if let Some(l) = fixed {
        return Ok(l);
    }
    // held-out phantom outside the simulated set
    let (_, n_min, n_max) = cfg.phantom_range()?;
    let tuning = phantom_set(1, g.n_pixels, n_min, n_max, derive_seed(cfg.data_seed()?, &[0x7e5]))?.remove(0);
    let full = radon_forward(&tuning, g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.data_seed()?, &[0x7e6]));
    let y = measure(&full, &m.mask, cfg.noise()?.relative_level * full.max_abs(), &mut rng)?;
    let grid = tomodeq::classical::log_grid(1e-5, 1e-1, 10);
    Ok(tune_tv_lambda(&y, &m.mask, g, &tuning, base, &grid)?.0)
}

pub fn reconstruct(cfg: &RunConfig, method: Method, input: &Path, out: &Path, checkpoint: Option<PathBuf>) -> Result<()> {
    let g = cfg.geometry()?;
    let ck = match method {
        Method::Deq => {
            let path = checkpoint
                .or_else(|| cfg.checkpoint())
                .ok_or_else(|| CliError::Usage("method deq needs --checkpoint (or paths.checkpoint)".into()))?;
            Some(load_checkpoint(&path)?)
        }
        _ => None,
    };
    let rows = read_manifest(input)?;
    let (tv_base, _) = cfg.tv()?;
    let mut lambda = None;
    let mut metrics = Vec::new();
    for row in &rows {
        let m = read_measurement(&input.join(&row.measurement))?;
        if m.mask.n_angles_total() != g.n_angles_total || m.sinogram.n_detectors != g.n_detectors {
            return Err(CliError::Usage(format!(
                "{}: measurement does not match the configured geometry",
                row.measurement
            )));
        }
        let rec = match method {
            Method::Fbp => fbp(&m.sinogram, &m.mask, &g, cfg.fbp_filter()?)?,
            Method::Tv => {
                let l = match lambda {
                    Some(l) => l,
                    None => *lambda.insert(tv_lambda(cfg, &g, &m, &tv_base)?),
                };
                tv_reconstruct(&m.sinogram, &m.mask, &g, &TvConfig { lambda: l, ..tv_base })?.image
            }
            Method::Deq => {
                let ck = ck.as_ref().expect("loaded above");
                fixed_point_solve(&m.sinogram, &m.mask, &ck.params, &cfg.deq()?, &g)?.x_bar
            }
        };
        if !rec.data.iter().all(|v| v.is_finite()) {
            return Err(TomoError::NonFinite(format!("reconstruction {}", row.id)).into());
        }
        write_container(&out.join(format!("recon_{}.tsdq", row.id)), &Payload::Image(rec.clone()))?;
        export_pgm(&rec, &out.join(format!("recon_{}.pgm", row.id)), 0.0, 1.0)?;
        let truth_path = input.join(&row.phantom);
        if !row.phantom.is_empty() && truth_path.exists() {
            let x = read_image(&truth_path)?;
            let r = x.max();
            metrics.push(vec![
                row.id.clone(),
                method.name().to_string(),
                m.mask.len().to_string(),
                fmt_f64(psnr(&rec, &x, r)?),
                fmt_f64(ssim(&rec, &x, r)?),
            ]);
        }
    }
    if !metrics.is_empty() {
        write_csv(&out.join("metrics.csv"), &METRICS_HEADER, &metrics)?;
    }
    println!("reconstruct: {} images ({}) written to {}", rows.len(), method.name(), out.display());
    Ok(())
}

fn append_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    if !path.exists() {
        return Ok(write_history_csv(path, history)?);
    }
    let mut f = OpenOptions::new().append(true).open(path).map_err(|e| io_err(path, e))?;
    for r in history {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.epoch,
            r.loss_kind.name(),
            fmt_f64(r.train_loss),
            fmt_f64(r.val_psnr),
            fmt_f64(r.val_ssim),
            fmt_f64(r.mean_fp_iters)
        )
        .map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

fn read_history_psnr(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(TomoError::from)?;
    let mut pts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(TomoError::from)?;
        let parse = |i: usize| rec[i].parse::<f64>().map_err(|_| CliError::Usage(format!("{}: bad number", path.display())));
        pts.push((parse(0)?, parse(3)?));
    }
    Ok(pts)
}

/// Trains one network per requested loss on the desk data. Writes
/// `history_<loss>.csv`, `checkpoint_<loss>.tsdq`, `baselines.csv` and
/// `training_curves.svg`.
pub fn train_cmd(cfg: &RunConfig, out: &Path, resume: Option<PathBuf>) -> Result<()> {
    let desk = cfg.desk()?;
    let data = desk_data(&desk)?;
    let losses = cfg.losses()?;
    if resume.is_some() && losses.len() != 1 {
        return Err(CliError::Usage("--resume needs a single train.loss".into()));
    }
    let (b, _) = baseline_scores(&desk, &data)?;
    write_csv(
        &out.join("baselines.csv"),
        &["method", "s", "psnr", "ssim", "tv_lambda"],
        &[
            vec!["fbp".into(), desk.s.to_string(), fmt_f64(b.fbp_psnr), fmt_f64(b.fbp_ssim), String::new()],
            vec!["tv".into(), desk.s.to_string(), fmt_f64(b.tv_psnr), fmt_f64(b.tv_ssim), fmt_f64(b.tv_lambda)],
        ],
    )?;
    for &loss in &losses {
        let hist_path = out.join(format!("history_{}.csv", loss.name()));
        let log = |r: &EpochRecord| {
            eprintln!(
                "[{}] epoch {:>4}  loss {:.5e}  val psnr {:.3}  ssim {:.4}  fp iters {:.1}",
                loss.name(),
                r.epoch,
                r.train_loss,
                r.val_psnr,
                r.val_ssim,
                r.mean_fp_iters
            )
        };
        let outcome = match &resume {
            Some(path) => {
                let ck = load_checkpoint(path)?;
                let state = ck
                    .resume
                    .ok_or_else(|| CliError::Usage(format!("{}: checkpoint has no optimizer state", path.display())))?;
                train(&data.train, &data.val, &desk.train_config(loss)?, &data.geometry, ck.params, Some(&state), log)?
            }
            None => {
                if hist_path.exists() {
                    std::fs::remove_file(&hist_path).map_err(|e| io_err(&hist_path, e))?;
                }
                run_training(&desk, &data, loss, log)?
            }
        };
        append_history(&hist_path, &outcome.history)?;
        save_checkpoint(
            &out.join(format!("checkpoint_{}.tsdq", loss.name())),
            &Checkpoint {
                params: outcome.params.clone(),
                resume: Some(outcome.resume.clone()),
            },
        )?;
        if outcome.eval_params != outcome.params {
            save_checkpoint(
                &out.join(format!("eval_{}.tsdq", loss.name())),
                &Checkpoint {
                    params: outcome.eval_params,
                    resume: None,
                },
            )?;
        }
    }
    let mut series = Vec::new();
    for loss in [LossKind::SelfWeighted, LossKind::SupOperator, LossKind::SupPlain] {
        let p = out.join(format!("history_{}.csv", loss.name()));
        if p.exists() {
            series.push(Series {
                name: loss.name().to_string(),
                points: read_history_psnr(&p)?,
            });
        }
    }
    series.push(Series {
        name: "tv".into(),
        points: series.first().map_or(vec![], |s| s.points.iter().map(|&(e, _)| (e, b.tv_psnr)).collect()),
    });
    write_svg(&out.join("training_curves.svg"), &format!("validation PSNR, s = {}", desk.s), "epoch", "PSNR [dB]", &series)?;
    println!("train: fbp {:.3} dB, tv {:.3} dB; outputs in {}", b.fbp_psnr, b.tv_psnr, out.display());
    Ok(())
}

/// Fixed small-instance suite; the seed drives the Monte-Carlo streams and
/// the gradient checks.
pub fn verify_suite(seed: u64, mc_draws: usize, prop2_draws: usize) -> tomodeq::Result<Vec<VerificationReport>> {
    let g = Geometry::new(8, 6)?;
    let d62 = MaskDistribution::uniform(2, 6)?;
    let mut reports = vec![
        verify_prop1(&g, &d62, VerifyMode::Exact)?,
        verify_prop1(&g, &d62, VerifyMode::MonteCarlo { n_draws: mc_draws, seed })?,
        verify_prop2(&d62, VerifyMode::Exact)?,
        verify_prop2(&MaskDistribution::uniform(3, 8)?, VerifyMode::Exact)?,
        verify_prop2(&d62, VerifyMode::MonteCarlo { n_draws: prop2_draws, seed })?,
    ];
    let deq = tomodeq::deq::DeqConfig {
        gamma: tomodeq::deq::Gamma::AutoFromSpectralNorm { s_ref: 2 },
        ..Default::default()
    };
    let xs = phantom_set(2, 8, 1, 3, 5)?;
    for k in 0..10 {
        let p = tomodeq::denoiser::init_denoiser(&thm1_denoiser_spec(8), derive_seed(seed, &[0x71, k]))?;
        let mut r = verify_thm1(&g, &d62, &p, &xs, &deq, VerifyMode::Exact, 0.0)?;
        r.label = format!("{} (params {k})", r.label);
        reports.push(r);
    }
    let p = tomodeq::denoiser::init_denoiser(&thm1_denoiser_spec(8), derive_seed(seed, &[0x72]))?;
    reports.push(verify_thm1(&g, &d62, &p, &xs, &deq, VerifyMode::MonteCarlo { n_draws: mc_draws, seed }, 0.01)?);
    reports.extend(gradcheck_all(seed)?);
    Ok(reports)
}

pub fn verify_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (mc, p2) = cfg.verify_draws()?;
    let reports = verify_suite(cfg.seed()?, mc, p2)?;
    write_reports_csv(&out.join("verify_reports.csv"), &reports)?;
    write_reports_text(&out.join("verify_reports.txt"), &reports)?;
    print!("{}", render_text(&reports));
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::VerificationFailed(failed));
    }
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 5] = ["method", "s", "n_images", "psnr", "ssim"];

/// Averages per-image metrics grouped by `(method, s)`.
pub fn evaluate(dirs: &[PathBuf], out: &Path) -> Result<()> {
    if dirs.is_empty() {
        return Err(CliError::Usage("evaluate needs at least one reconstruction directory".into()));
    }
    let mut groups: BTreeMap<(String, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for d in dirs {
        let path = d.join("metrics.csv");
        if !path.exists() {
            return Err(CliError::Usage(format!("{}: no metrics.csv found", d.display())));
        }
        let mut rdr = csv::Reader::from_path(&path).map_err(TomoError::from)?;
        let mut n = 0;
        for rec in rdr.records() {
            let rec = rec.map_err(TomoError::from)?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| CliError::Usage(format!("{}: malformed row", path.display())))
            };
            let s = num(2)? as usize;
            groups.entry((rec[1].to_string(), s)).or_default().push((num(3)?, num(4)?));
            n += 1;
        }
        if n == 0 {
            return Err(CliError::Usage(format!("{}: metrics.csv is empty", d.display())));
        }
    }
    let rows: Vec<Vec<String>> = groups
        .iter()
        .map(|((m, s), v)| {
            let k = v.len() as f64;
            vec![
                m.clone(),
                s.to_string(),
                v.len().to_string(),
                fmt_f64(v.iter().map(|p| p.0).sum::<f64>() / k),
                fmt_f64(v.iter().map(|p| p.1).sum::<f64>() / k),
            ]
        })
        .collect();
    write_csv(&out.join("summary.csv"), &SUMMARY_HEADER, &rows)?;
    for r in &rows {
        println!("{:<6} s={:<4} n={:<4} psnr {:>8}  ssim {}", r[0], r[1], r[2], r[3], r[4]);
    }
    Ok(())
}
