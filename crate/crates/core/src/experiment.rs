//! Desk-scale end-to-end experiment: synthetic phantoms, FBP / TV baselines
//! and DEQ training on a shared validation split.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classical::{fbp, log_grid, tune_tv_lambda, tv_reconstruct, FbpFilter, TvConfig};
use crate::denoiser::{init_denoiser, DenoiserSpec};
use crate::deq::{DeqConfig, Gamma};
use crate::error::Result;
use crate::linalg::derive_seed;
use crate::metrics::{psnr, ssim};
use crate::phantom::phantom_set;
use crate::radon::radon_forward;
use crate::training::{
    measure, train, AdamConfig, EpochRecord, LossKind, NoiseConfig, TrainConfig, TrainOutcome, ValidationSet,
};
use crate::{AngleMask, Geometry, Image, MaskDistribution};

#[derive(Debug, Clone, PartialEq)]
pub struct DeskConfig {
    pub side: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_angles_total: usize,
    pub s: usize,
    pub n_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub noise_level: f64,
    pub denoiser: DenoiserSpec,
    pub deq: DeqConfig,
    pub polyak: bool,
    /// Phantoms, validation noise and the TV tuning phantom.
    pub data_seed: u64,
    /// Network init and training streams.
    pub seed: u64,
    pub tv_grid: Vec<f64>,
    pub tv: TvConfig,
}

impl DeskConfig {
    /// 32x32 random ellipses, 24 / 8 split, 60-angle grid, 1% noise.
    pub fn new(s: usize) -> Self {
        DeskConfig {
            side: 32,
            n_train: 24,
            n_val: 8,
            n_angles_total: 60,
            s,
            n_epochs: 300,
            batch_size: 4,
            lr: 1e-3,
            noise_level: 0.01,
            denoiser: DenoiserSpec {
                channels: 8,
                resolution: 32,
                ..Default::default()
            },
            deq: DeqConfig {
                gamma: Gamma::AutoFromSpectralNorm { s_ref: s },
                ..Default::default()
            },
            polyak: false,
            data_seed: 2024,
            seed: 1,
            tv_grid: log_grid(1e-5, 1e-1, 10),
            tv: TvConfig::default(),
        }
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.side, self.n_angles_total)
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            relative_level: self.noise_level,
            seed: derive_seed(self.data_seed, &[0x7a1]),
        }
    }

    pub fn train_config(&self, loss_kind: LossKind) -> Result<TrainConfig> {
        Ok(TrainConfig {
            loss_kind,
            lr: self.lr,
            batch_size: self.batch_size,
            n_epochs: self.n_epochs,
            optimizer: AdamConfig {
                polyak: self.polyak,
                ..Default::default()
            },
            deq: self.deq,
            sampling: MaskDistribution::uniform(self.s, self.n_angles_total)?,
            noise: self.noise(),
            val_angles: self.s,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DeskData {
    pub geometry: Geometry,
    pub train: Vec<Image>,
    pub val: ValidationSet,
    /// Held-out phantom for TV parameter selection.
    pub tuning: Image,
}

pub fn desk_data(cfg: &DeskConfig) -> Result<DeskData> {
    let g = cfg.geometry()?;
    let mut imgs = phantom_set(cfg.n_train + cfg.n_val + 1, cfg.side, 3, 6, cfg.data_seed)?;
    let tuning = imgs.pop().expect("nonempty");
    let val_imgs = imgs.split_off(cfg.n_train);
    let val = ValidationSet::new(&val_imgs, &g, cfg.s, &cfg.noise())?;
    Ok(DeskData {
        geometry: g,
        train: imgs,
        val,
        tuning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineScores {
    pub fbp_psnr: f64,
    pub fbp_ssim: f64,
    pub tv_psnr: f64,
    pub tv_ssim: f64,
    pub tv_lambda: f64,
}

/// Per-image `(psnr, ssim)` for FBP and TV on the validation split; TV's
/// lambda is chosen on the held-out tuning phantom.
pub fn baseline_scores(cfg: &DeskConfig, data: &DeskData) -> Result<(BaselineScores, Vec<[f64; 4]>)> {
    let g = &data.geometry;
    let mask = &data.val.mask;
    let full = radon_forward(&data.tuning, g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.data_seed, &[0x7e5]));
    let y_tune = measure(&full, mask, cfg.noise_level * full.max_abs(), &mut rng)?;
    let (lambda, _) = tune_tv_lambda(&y_tune, mask, g, &data.tuning, &cfg.tv, &cfg.tv_grid)?;
    let tv_cfg = TvConfig { lambda, ..cfg.tv };
    let rows: Vec<[f64; 4]> = data
        .val
        .items
        .par_iter()
        .map(|(x, y)| {
            let r = x.max();
            let f = fbp(y, mask, g, FbpFilter::RamLak)?;
            let t = tv_reconstruct(y, mask, g, &tv_cfg)?.image;
            Ok([psnr(&f, x, r)?, ssim(&f, x, r)?, psnr(&t, x, r)?, ssim(&t, x, r)?])
        })
        .collect::<Result<Vec<_>>>()?;
    let k = rows.len() as f64;
    let mean = |i: usize| rows.iter().map(|r| r[i]).sum::<f64>() / k;
    Ok((
        BaselineScores {
            fbp_psnr: mean(0),
            fbp_ssim: mean(1),
            tv_psnr: mean(2),
            tv_ssim: mean(3),
            tv_lambda: lambda,
        },
        rows,
    ))
}

/// Train from a fresh network on the desk data.
pub fn run_training(
    cfg: &DeskConfig,
    data: &DeskData,
    loss_kind: LossKind,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let init = init_denoiser(&cfg.denoiser, derive_seed(cfg.seed, &[0x1417]))?;
    train(
        &data.train,
        &data.val,
        &cfg.train_config(loss_kind)?,
        &data.geometry,
        init,
        None,
        on_epoch,
    )
}

/// Equispaced validation mask of the desk configuration.
pub fn validation_mask(cfg: &DeskConfig) -> Result<AngleMask> {
    AngleMask::equispaced(cfg.s, cfg.n_angles_total)
}
