//! `section.key = value` run configuration.
//!
//! Every key has a default; files and `--set` overrides are applied in
//! order, later assignments winning. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tomodeq::classical::{FbpFilter, StepRule, TvConfig};
use tomodeq::denoiser::{Activation, DenoiserSpec};
use tomodeq::deq::{AndersonConfig, DeqConfig, Gamma, InitPolicy};
use tomodeq::experiment::DeskConfig;
use tomodeq::training::{LossKind, NoiseConfig};
use tomodeq::{Geometry, MaskDistribution, MaskKind, TomoError};

type Result<T> = std::result::Result<T, TomoError>;

const DEFAULTS: &[(&str, &str)] = &[
    ("geometry.n_pixels", "32"),
    ("geometry.n_angles_total", "60"),
    ("sampling.kind", "uniform"),
    ("sampling.s", "12"),
    ("noise.level", "0.01"),
    ("phantom.count", "8"),
    ("phantom.n_min", "3"),
    ("phantom.n_max", "6"),
    ("denoiser.n_scales", "2"),
    ("denoiser.channels", "8"),
    ("denoiser.kernel_size", "3"),
    ("denoiser.depth", "3"),
    ("denoiser.activation", "leaky_relu"),
    ("denoiser.leaky_slope", "0.1"),
    ("denoiser.use_skip", "true"),
    ("denoiser.sn_power_iters", "1"),
    ("deq.alpha", "0.5"),
    ("deq.gamma", "auto"),
    ("deq.fp_tol", "1e-3"),
    ("deq.fp_max_iter", "100"),
    ("deq.anderson", "true"),
    ("deq.anderson_depth", "5"),
    ("deq.anderson_ridge", "1e-8"),
    ("deq.init", "zero"),
    ("train.loss", "self"),
    ("train.lr", "1e-3"),
    ("train.batch_size", "4"),
    ("train.n_epochs", "300"),
    ("train.n_train", "24"),
    ("train.n_val", "8"),
    ("train.polyak", "false"),
    ("tv.lambda", "auto"),
    ("tv.max_iters", "300"),
    ("tv.tol", "1e-5"),
    ("tv.inner_iters", "30"),
    ("fbp.filter", "ram-lak"),
    ("verify.mc_draws", "10000"),
    ("verify.prop2_draws", "1000000"),
    ("paths.checkpoint", ""),
    ("run.seed", "1"),
    ("run.data_seed", "2024"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> TomoError {
    TomoError::Config(format!("{key} = '{value}': expected {what}"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(TomoError::Config(format!("unknown config key '{key}'"))),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TomoError::Config(format!("{origin}:{}: expected 'section.key = value'", i + 1)))?;
            let k = k.trim();
            if !k.contains('.') {
                return Err(TomoError::Config(format!("{origin}:{}: key '{k}' needs a section", i + 1)));
            }
            self.set(k, v.trim())
                .map_err(|e| TomoError::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TomoError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut c = RunConfig::default();
        c.apply_text(&text, &path.display().to_string())?;
        Ok(c)
    }

    /// `KEY=VALUE` command-line override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| TomoError::Config(format!("override '{kv}' must look like section.key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Every key with its resolved value, one per line, sorted.
    pub fn resolved_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join("config.resolved");
        std::fs::write(&p, self.resolved_text()).map_err(|e| TomoError::Io { path: p.clone(), source: e })?;
        Ok(p)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse().map_err(|_| bad(key, v, what))
    }

    fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key, "a nonnegative integer")
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.parse(key, "a number")
    }

    fn bool(&self, key: &str) -> Result<bool> {
        self.parse(key, "true or false")
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("run.seed", "an unsigned integer")
    }

    pub fn data_seed(&self) -> Result<u64> {
        self.parse("run.data_seed", "an unsigned integer")
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.usize("geometry.n_pixels")?, self.usize("geometry.n_angles_total")?)
    }

    pub fn s(&self) -> Result<usize> {
        self.usize("sampling.s")
    }

    pub fn sampling(&self) -> Result<MaskDistribution> {
        let s = self.s()?;
        let kind = match self.raw("sampling.kind") {
            "uniform" => MaskKind::UniformSubset(s),
            "equispaced" => MaskKind::EquispacedFixed(s),
            "complementary" => MaskKind::ComplementarySplit(s),
            v => return Err(bad("sampling.kind", v, "uniform, equispaced or complementary")),
        };
        MaskDistribution::new(kind, self.usize("geometry.n_angles_total")?)
    }

    pub fn noise(&self) -> Result<NoiseConfig> {
        Ok(NoiseConfig {
            relative_level: self.f64("noise.level")?,
            seed: self.data_seed()?,
        })
    }

    pub fn phantom_range(&self) -> Result<(usize, usize, usize)> {
        Ok((self.usize("phantom.count")?, self.usize("phantom.n_min")?, self.usize("phantom.n_max")?))
    }

    pub fn denoiser(&self) -> Result<DenoiserSpec> {
        let activation = match self.raw("denoiser.activation") {
            "relu" => Activation::Relu,
            "leaky_relu" => Activation::LeakyRelu(self.f64("denoiser.leaky_slope")?),
            v => return Err(bad("denoiser.activation", v, "relu or leaky_relu")),
        };
        let spec = DenoiserSpec {
            n_scales: self.usize("denoiser.n_scales")?,
            channels: self.usize("denoiser.channels")?,
            kernel_size: self.usize("denoiser.kernel_size")?,
            depth: self.usize("denoiser.depth")?,
            activation,
            use_skip: self.bool("denoiser.use_skip")?,
            sn_power_iters: self.usize("denoiser.sn_power_iters")?,
            resolution: self.usize("geometry.n_pixels")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn deq(&self) -> Result<DeqConfig> {
        let gamma = match self.raw("deq.gamma") {
            "auto" => Gamma::AutoFromSpectralNorm { s_ref: self.s()? },
            v => Gamma::Value(v.parse().map_err(|_| bad("deq.gamma", v, "auto or a positive number"))?),
        };
        let init = match self.raw("deq.init") {
            "zero" => InitPolicy::Zero,
            "fbp" => InitPolicy::Fbp,
            v => return Err(bad("deq.init", v, "zero or fbp")),
        };
        let anderson = if self.bool("deq.anderson")? {
            Some(AndersonConfig {
                depth: self.usize("deq.anderson_depth")?,
                ridge: self.f64("deq.anderson_ridge")?,
                ..Default::default()
            })
        } else {
            None
        };
        let cfg = DeqConfig {
            alpha: self.f64("deq.alpha")?,
            gamma,
            fp_tol: self.f64("deq.fp_tol")?,
            fp_max_iter: self.usize("deq.fp_max_iter")?,
            anderson,
            init,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Comma-separated loss list; several entries request a sweep.
    pub fn losses(&self) -> Result<Vec<LossKind>> {
        self.raw("train.loss").split(',').map(|s| LossKind::parse(s.trim())).collect()
    }

    /// `None` when lambda is `auto` (tuned on a held-out phantom).
    pub fn tv(&self) -> Result<(TvConfig, Option<f64>)> {
        let lambda = match self.raw("tv.lambda") {
            "auto" => None,
            v => Some(v.parse().map_err(|_| bad("tv.lambda", v, "auto or a number >= 0"))?),
        };
        let cfg = TvConfig {
            lambda: lambda.unwrap_or(TvConfig::default().lambda),
            max_iters: self.usize("tv.max_iters")?,
            tol: self.f64("tv.tol")?,
            step_rule: StepRule::Adaptive,
            inner_iters: self.usize("tv.inner_iters")?,
        };
        Ok((cfg, lambda))
    }

    pub fn fbp_filter(&self) -> Result<FbpFilter> {
        match self.raw("fbp.filter") {
            "ram-lak" => Ok(FbpFilter::RamLak),
            "shepp-logan" => Ok(FbpFilter::SheppLogan),
            "none" => Ok(FbpFilter::None),
            v => Err(bad("fbp.filter", v, "ram-lak, shepp-logan or none")),
        }
    }

    pub fn checkpoint(&self) -> Option<PathBuf> {
        let v = self.raw("paths.checkpoint");
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn verify_draws(&self) -> Result<(usize, usize)> {
        Ok((self.usize("verify.mc_draws")?, self.usize("verify.prop2_draws")?))
    }

    /// Desk experiment description for training.
    pub fn desk(&self) -> Result<DeskConfig> {
        let g = self.geometry()?;
        let mut d = DeskConfig::new(self.s()?);
        d.side = g.n_pixels;
        d.n_angles_total = g.n_angles_total;
        d.n_train = self.usize("train.n_train")?;
        d.n_val = self.usize("train.n_val")?;
        d.n_epochs = self.usize("train.n_epochs")?;
        d.batch_size = self.usize("train.batch_size")?;
        d.lr = self.f64("train.lr")?;
        d.noise_level = self.f64("noise.level")?;
        d.denoiser = self.denoiser()?;
        d.deq = self.deq()?;
        d.polyak = self.bool("train.polyak")?;
        d.data_seed = self.data_seed()?;
        d.seed = self.seed()?;
        let (tv, _) = self.tv()?;
        d.tv = tv;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn later_keys_override_and_comments_are_ignored() {
        let mut c = RunConfig::default();
        c.apply_text("# header\ntrain.lr = 0.1 # first\n\ntrain.lr=0.2\n", "t").unwrap();
        assert_eq!(c.raw("train.lr"), "0.2");
    }

    #[test]
    fn unknown_keys_are_errors() {
        let mut c = RunConfig::default();
        let e = c.apply_text("train.lrr = 1\n", "cfg").unwrap_err().to_string();
        assert!(e.contains("train.lrr") && e.contains("cfg:1"), "{e}");
        assert!(c.apply_text("nosection = 1\n", "cfg").is_err());
        assert!(c.apply_text("just text\n", "cfg").is_err());
    }

    #[test]
    fn resolved_echo_round_trips() {
        let mut c = RunConfig::default();
        c.apply_override("sampling.s=20").unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.resolved_text(), "echo").unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn typed_views_validate() {
        let c = RunConfig::default();
        assert_eq!(c.geometry().unwrap().n_pixels, 32);
        assert_eq!(c.losses().unwrap(), vec![LossKind::SelfWeighted]);
        assert!(c.deq().unwrap().anderson.is_some());
        let mut bad_cfg = RunConfig::default();
        bad_cfg.set("deq.alpha", "abc").unwrap();
        assert!(bad_cfg.deq().is_err());
        bad_cfg.set("deq.alpha", "1.5").unwrap();
        assert!(bad_cfg.deq().is_err());
    }
}
