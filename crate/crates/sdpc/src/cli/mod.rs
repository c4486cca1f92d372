//! Command-line front end: run configuration, experiment manifests and the
//! pipeline commands (`preprocess`, `train`, `denoise`, `maps`, `sparsity`,
//! `show-rfs`).
//!
//! Configuration is a flat UTF-8 `key=value` file; command-line `--set`
//! overrides win over the file, which wins over the defaults. The resolved
//! configuration is echoed verbatim into every output directory, and its
//! hash ties outputs to the exact settings that produced them.

pub mod commands;
pub mod render;

use crate::error::{Result, SdpcError};
use crate::util::fnv1a;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Spatial geometry and sparsity of one layer, as configured.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub features: usize,
    pub kernel: usize,
    pub stride: usize,
    pub lambda: f32,
}

/// The resolved run configuration. Defaults reproduce the natural-image
/// protocol: a two-layer net with 64 stride-2 8x8 atoms under 128 stride-1
/// 8x8 atoms, trained 250 epochs with feedback strength 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,

    pub data_format: String,
    pub data_train_path: String,
    pub data_test_path: String,
    pub data_channels: usize,
    pub data_resize_h: usize,
    pub data_resize_w: usize,
    pub data_train_count: usize,
    pub data_test_count: usize,

    pub lcn_kernel: usize,
    pub lcn_epsilon: f32,
    pub whiten_epsilon_scale: f64,
    pub whiten_patch: usize,
    pub whiten_max_patches: usize,

    pub layers: Vec<LayerSpec>,
    pub k_fb: f32,
    pub t_stab: f32,
    pub max_iters: usize,

    pub epochs: usize,
    pub eta_l: Vec<f32>,
    pub momentum: f32,
    pub batch: usize,
    pub subset: usize,
    pub step_refresh: String,

    pub k_fb_grid: Vec<f32>,
    pub sigma_grid: Vec<f32>,
    pub theta_grid: usize,
    pub top_k: usize,
    pub map_radius: usize,
    pub gabor_r2: f32,
    pub test_subset: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "out".into(),
            data_format: "stl10".into(),
            data_train_path: String::new(),
            data_test_path: String::new(),
            data_channels: 3,
            data_resize_h: 96,
            data_resize_w: 96,
            data_train_count: 5000,
            data_test_count: 1200,
            lcn_kernel: 9,
            lcn_epsilon: 0.01,
            whiten_epsilon_scale: 1e-5,
            whiten_patch: 9,
            whiten_max_patches: 100_000,
            layers: vec![
                LayerSpec {
                    features: 64,
                    kernel: 8,
                    stride: 2,
                    lambda: 0.4,
                },
                LayerSpec {
                    features: 128,
                    kernel: 8,
                    stride: 1,
                    lambda: 1.2,
                },
            ],
            k_fb: 1.0,
            t_stab: 5e-3,
            max_iters: 500,
            epochs: 250,
            eta_l: vec![1e-4, 5e-3],
            momentum: 0.9,
            batch: 10,
            subset: 0,
            step_refresh: "epoch".into(),
            k_fb_grid: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            sigma_grid: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            theta_grid: 0,
            top_k: 10,
            map_radius: 4,
            gabor_r2: 0.5,
            test_subset: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| {
        SdpcError::Config(format!("cannot parse '{value}' for key '{key}'"))
    })
}

fn parse_list_f32(key: &str, value: &str) -> Result<Vec<f32>> {
    value
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| parse_num::<f32>(key, s.trim()))
        .collect()
}

fn fmt_list_f32(list: &[f32]) -> String {
    list.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "out.dir" => self.out_dir = value.to_string(),
            "data.format" => {
                if value != "stl10" && value != "imagedir" {
                    return Err(SdpcError::Config(format!(
                        "data.format must be stl10 or imagedir, got '{value}'"
                    )));
                }
                self.data_format = value.to_string();
            }
            "data.train_path" => self.data_train_path = value.to_string(),
            "data.test_path" => self.data_test_path = value.to_string(),
            "data.channels" => self.data_channels = parse_num(key, value)?,
            "data.resize_h" => self.data_resize_h = parse_num(key, value)?,
            "data.resize_w" => self.data_resize_w = parse_num(key, value)?,
            "data.train_count" => self.data_train_count = parse_num(key, value)?,
            "data.test_count" => self.data_test_count = parse_num(key, value)?,
            "lcn.kernel" => self.lcn_kernel = parse_num(key, value)?,
            "lcn.epsilon" => self.lcn_epsilon = parse_num(key, value)?,
            "whiten.epsilon_scale" => self.whiten_epsilon_scale = parse_num(key, value)?,
            "whiten.patch" => self.whiten_patch = parse_num(key, value)?,
            "whiten.max_patches" => self.whiten_max_patches = parse_num(key, value)?,
            "net.layers" => {
                let n: usize = parse_num(key, value)?;
                if n == 0 {
                    return Err(SdpcError::Config("net.layers must be at least 1".into()));
                }
                self.layers.resize(
                    n,
                    LayerSpec {
                        features: 64,
                        kernel: 8,
                        stride: 1,
                        lambda: 1.0,
                    },
                );
                self.eta_l.resize(n, 1e-3);
            }
            "net.k_fb" => self.k_fb = parse_num(key, value)?,
            "net.t_stab" => self.t_stab = parse_num(key, value)?,
            "net.max_iters" => self.max_iters = parse_num(key, value)?,
            "train.epochs" => self.epochs = parse_num(key, value)?,
            "train.momentum" => self.momentum = parse_num(key, value)?,
            "train.step_refresh" => {
                if value != "epoch" && value != "batch" {
                    return Err(SdpcError::Config(format!(
                        "train.step_refresh must be epoch or batch, got '{value}'"
                    )));
                }
                self.step_refresh = value.to_string();
            }
            "train.batch" => self.batch = parse_num(key, value)?,
            "train.subset" => self.subset = parse_num(key, value)?,
            "exp.k_fb_grid" => self.k_fb_grid = parse_list_f32(key, value)?,
            "exp.sigma_grid" => self.sigma_grid = parse_list_f32(key, value)?,
            "exp.theta_grid" => self.theta_grid = parse_num(key, value)?,
            "exp.top_k" => self.top_k = parse_num(key, value)?,
            "exp.map_radius" => self.map_radius = parse_num(key, value)?,
            "exp.gabor_r2" => self.gabor_r2 = parse_num(key, value)?,
            "exp.test_subset" => self.test_subset = parse_num(key, value)?,
            _ => {
                if let Some(rest) = key.strip_prefix("net.l") {
                    let (idx_text, field) = rest.split_once('.').ok_or_else(|| {
                        SdpcError::Config(format!("unknown config key '{key}'"))
                    })?;
                    let idx: usize = parse_num(key, idx_text)?;
                    if idx == 0 || idx > self.layers.len() {
                        return Err(SdpcError::Config(format!(
                            "layer index {idx} out of range in '{key}' (set net.layers first)"
                        )));
                    }
                    let layer = &mut self.layers[idx - 1];
                    match field {
                        "features" => layer.features = parse_num(key, value)?,
                        "kernel" => layer.kernel = parse_num(key, value)?,
                        "stride" => layer.stride = parse_num(key, value)?,
                        "lambda" => layer.lambda = parse_num(key, value)?,
                        _ => {
                            return Err(SdpcError::Config(format!("unknown config key '{key}'")))
                        }
                    }
                } else if let Some(rest) = key.strip_prefix("train.eta_l") {
                    let idx: usize = parse_num(key, rest)?;
                    if idx == 0 || idx > self.eta_l.len() {
                        return Err(SdpcError::Config(format!(
                            "layer index {idx} out of range in '{key}' (set net.layers first)"
                        )));
                    }
                    self.eta_l[idx - 1] = parse_num(key, value)?;
                } else {
                    return Err(SdpcError::Config(format!("unknown config key '{key}'")));
                }
            }
        }
        Ok(())
    }

    /// Canonical text form: sorted `key=value` lines. Parsing this text back
    /// reproduces the configuration exactly.
    pub fn to_text(&self) -> String {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        map.insert("seed".into(), self.seed.to_string());
        map.insert("out.dir".into(), self.out_dir.clone());
        map.insert("data.format".into(), self.data_format.clone());
        map.insert("data.train_path".into(), self.data_train_path.clone());
        map.insert("data.test_path".into(), self.data_test_path.clone());
        map.insert("data.channels".into(), self.data_channels.to_string());
        map.insert("data.resize_h".into(), self.data_resize_h.to_string());
        map.insert("data.resize_w".into(), self.data_resize_w.to_string());
        map.insert("data.train_count".into(), self.data_train_count.to_string());
        map.insert("data.test_count".into(), self.data_test_count.to_string());
        map.insert("lcn.kernel".into(), self.lcn_kernel.to_string());
        map.insert("lcn.epsilon".into(), self.lcn_epsilon.to_string());
        map.insert(
            "whiten.epsilon_scale".into(),
            self.whiten_epsilon_scale.to_string(),
        );
        map.insert("whiten.patch".into(), self.whiten_patch.to_string());
        map.insert(
            "whiten.max_patches".into(),
            self.whiten_max_patches.to_string(),
        );
        map.insert("net.layers".into(), self.layers.len().to_string());
        for (i, l) in self.layers.iter().enumerate() {
            let n = i + 1;
            map.insert(format!("net.l{n}.features"), l.features.to_string());
            map.insert(format!("net.l{n}.kernel"), l.kernel.to_string());
            map.insert(format!("net.l{n}.stride"), l.stride.to_string());
            map.insert(format!("net.l{n}.lambda"), l.lambda.to_string());
        }
        map.insert("net.k_fb".into(), self.k_fb.to_string());
        map.insert("net.t_stab".into(), self.t_stab.to_string());
        map.insert("net.max_iters".into(), self.max_iters.to_string());
        map.insert("train.epochs".into(), self.epochs.to_string());
        for (i, e) in self.eta_l.iter().enumerate() {
            map.insert(format!("train.eta_l{}", i + 1), e.to_string());
        }
        map.insert("train.momentum".into(), self.momentum.to_string());
        map.insert("train.step_refresh".into(), self.step_refresh.clone());
        map.insert("train.batch".into(), self.batch.to_string());
        map.insert("train.subset".into(), self.subset.to_string());
        map.insert("exp.k_fb_grid".into(), fmt_list_f32(&self.k_fb_grid));
        map.insert("exp.sigma_grid".into(), fmt_list_f32(&self.sigma_grid));
        map.insert("exp.theta_grid".into(), self.theta_grid.to_string());
        map.insert("exp.top_k".into(), self.top_k.to_string());
        map.insert("exp.map_radius".into(), self.map_radius.to_string());
        map.insert("exp.gabor_r2".into(), self.gabor_r2.to_string());
        map.insert("exp.test_subset".into(), self.test_subset.to_string());

        let mut text = String::new();
        for (k, v) in map {
            text.push_str(&k);
            text.push('=');
            text.push_str(&v);
            text.push('\n');
        }
        text
    }

    /// Parses a config file's text over the defaults. `net.layers` keys are
    /// applied first so per-layer assignments always land in range.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                SdpcError::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            pairs.push((k.trim(), v.trim()));
        }
        pairs.sort_by_key(|(k, _)| if *k == "net.layers" { 0 } else { 1 });
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn config_hash(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }

    pub fn out_path(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }

    /// Cache root: `SDPC_CACHE_DIR` when set, otherwise `<out>/cache`.
    pub fn cache_dir(&self) -> PathBuf {
        match std::env::var("SDPC_CACHE_DIR") {
            Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.out_path().join("cache"),
        }
    }

    /// Builds an untrained network from the layer specs, seeded dictionaries
    /// included.
    pub fn build_network(&self, input_channels: usize) -> Result<crate::model::NetworkConfig> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut channels = input_channels;
        for spec in &self.layers {
            let dict = crate::model::ConvDictionary::random(
                spec.features,
                channels,
                spec.kernel,
                spec.stride,
                &mut rng,
            )?;
            layers.push(crate::model::LayerConfig::new(dict, spec.lambda)?);
            channels = spec.features;
        }
        crate::model::NetworkConfig::new(layers, self.k_fb, self.t_stab, self.max_iters)
    }
}

/// Provenance record written atomically on command completion.
#[derive(Debug, Clone, Default)]
pub struct ExperimentManifest {
    pub command: String,
    pub config_hash: u64,
    pub inputs: Vec<(String, u64)>,
    pub outputs: Vec<String>,
    pub wall_clock_secs: f64,
    pub converged: bool,
}

impl ExperimentManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config.config_hash(),
            converged: true,
            ..Default::default()
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<u64> {
        let bytes = std::fs::read(path)?;
        let hash = fnv1a(&bytes);
        self.inputs.push((path.display().to_string(), hash));
        Ok(hash)
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn to_text(&self) -> String {
        let mut text = String::new();
        text.push_str(&format!("command={}\n", self.command));
        text.push_str(&format!("config_hash={:016x}\n", self.config_hash));
        for (path, hash) in &self.inputs {
            text.push_str(&format!("input.{path}={hash:016x}\n"));
        }
        for (i, path) in self.outputs.iter().enumerate() {
            text.push_str(&format!("output.{i}={path}\n"));
        }
        text.push_str(&format!("wall_clock_secs={:.3}\n", self.wall_clock_secs));
        text.push_str(&format!("converged={}\n", self.converged));
        text
    }

    /// Atomic write: temp file then rename.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join("manifest.txt.tmp");
        std::fs::write(&tmp, self.to_text())?;
        std::fs::rename(&tmp, dir.join("manifest.txt"))?;
        Ok(())
    }
}

/// Echoes the resolved configuration into an output directory.
pub fn echo_config(config: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.txt"), config.to_text())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_protocol() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.layers[0].features, 64);
        assert_eq!(cfg.layers[0].kernel, 8);
        assert_eq!(cfg.layers[0].stride, 2);
        assert_eq!(cfg.layers[0].lambda, 0.4);
        assert_eq!(cfg.layers[1].features, 128);
        assert_eq!(cfg.layers[1].stride, 1);
        assert_eq!(cfg.layers[1].lambda, 1.2);
        assert_eq!(cfg.k_fb, 1.0);
        assert_eq!(cfg.t_stab, 5e-3);
        assert_eq!(cfg.epochs, 250);
        assert_eq!(cfg.eta_l, vec![1e-4, 5e-3]);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.batch, 10);
        assert_eq!(cfg.data_train_count, 5000);
        assert_eq!(cfg.data_test_count, 1200);
        assert_eq!(cfg.k_fb_grid, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(cfg.sigma_grid, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(cfg.map_radius, 4);
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let mut cfg = RunConfig::default();
        cfg.set("net.l1.lambda", "0.33").unwrap();
        cfg.set("exp.k_fb_grid", "0,0.5,2").unwrap();
        cfg.set("train.eta_l2", "0.077").unwrap();
        let text = cfg.to_text();
        let back = RunConfig::from_text(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("nonsense.key", "1").is_err());
        assert!(cfg.set("net.l3.lambda", "1").is_err());
    }

    #[test]
    fn layer_count_changes_are_applied_first() {
        let text = "net.l3.features=16\nnet.layers=3\n";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.layers.len(), 3);
        assert_eq!(cfg.layers[2].features, 16);
        assert_eq!(cfg.eta_l.len(), 3);
    }

    #[test]
    fn manifest_text_lists_inputs_and_outputs() {
        let cfg = RunConfig::default();
        let mut m = ExperimentManifest::new("train", &cfg);
        m.record_output(Path::new("out/losses.csv"));
        m.wall_clock_secs = 1.5;
        let text = m.to_text();
        assert!(text.contains("command=train"));
        assert!(text.contains("output.0=out/losses.csv"));
        assert!(text.contains("converged=true"));
    }
}
