//! The synthetic source/target domain pair, in memory and on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::io::{read_srf32, write_srf32, Domain, Manifest, ManifestEntry, Split};
use super::synth::{degrade, synthesize_hr, DegradationSpec, Image};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub hr_size: usize,
    pub scale: usize,
    pub source_pairs: usize,
    pub target_train: usize,
    pub target_val: usize,
    pub target_test: usize,
    pub source: DegradationSpec,
    pub target: DegradationSpec,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            hr_size: 256,
            scale: 4,
            source_pairs: 64,
            target_train: 64,
            target_val: 16,
            target_test: 16,
            source: DegradationSpec::bicubic(4),
            target: DegradationSpec {
                blur_sigma: Some(1.8),
                scale: 4,
                noise_std: 0.01,
            },
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = self.scale * 16;
        if self.scale == 0 || self.hr_size == 0 || self.hr_size % unit != 0 {
            return Err(Error::Config(format!(
                "hr_size {} must be a positive multiple of scale·16 = {}",
                self.hr_size, unit
            )));
        }
        if self.source.scale != self.scale || self.target.scale != self.scale {
            return Err(Error::Config("degradation scales must match the SR scale".into()));
        }
        self.source.validate()?;
        self.target.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pairs {
    pub lr: Vec<Image>,
    pub hr: Vec<Image>,
}

impl Pairs {
    pub fn len(&self) -> usize {
        self.lr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lr.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Datasets {
    pub source_train: Pairs,
    /// Unlabeled: LR only.
    pub target_train: Vec<Image>,
    pub target_val: Pairs,
    pub target_test: Pairs,
}

fn degrade_all(hr: Vec<Image>, spec: &DegradationSpec, seed: u64, stream_offset: u64) -> Result<Pairs> {
    // One noise stream per image keeps each LR independent of list order.
    let lr = hr
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = stream_rng(seed ^ (stream_offset + i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), Stream::Degradation);
            degrade(img, spec, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pairs { lr, hr })
}

/// Source HR images and target HR images come from different streams.
pub fn generate(cfg: &DataConfig) -> Result<Datasets> {
    cfg.validate()?;
    let src_hr = synthesize_hr(cfg.source_pairs, cfg.hr_size, &mut stream_rng(cfg.seed, Stream::SourceImages));
    let n_target = cfg.target_train + cfg.target_val + cfg.target_test;
    let mut tgt_hr = synthesize_hr(n_target, cfg.hr_size, &mut stream_rng(cfg.seed, Stream::TargetImages));
    let test_hr = tgt_hr.split_off(cfg.target_train + cfg.target_val);
    let val_hr = tgt_hr.split_off(cfg.target_train);
    let train = degrade_all(tgt_hr, &cfg.target, cfg.seed, 1 << 20)?;
    Ok(Datasets {
        source_train: degrade_all(src_hr, &cfg.source, cfg.seed, 0)?,
        target_train: train.lr,
        target_val: degrade_all(val_hr, &cfg.target, cfg.seed, 2 << 20)?,
        target_test: degrade_all(test_hr, &cfg.target, cfg.seed, 3 << 20)?,
    })
}

fn rel(domain: Domain, split: Split, kind: &str, i: usize) -> PathBuf {
    PathBuf::from(domain.name())
        .join(split.name())
        .join(kind)
        .join(format!("{:04}.srf", i))
}

impl Datasets {
    /// Writes every image plus the manifest. Refuses a non-empty directory
    /// unless `force`.
    pub fn save(&self, dir: impl AsRef<Path>, force: bool) -> Result<Manifest> {
        let dir = dir.as_ref();
        if dir.exists() && fs::read_dir(dir)?.next().is_some() && !force {
            return Err(Error::Config(format!(
                "{} exists and is not empty (use --force)",
                dir.display()
            )));
        }
        let mut manifest = Manifest::default();
        let mut put = |domain, split, kind: &str, imgs: &[Image]| -> Result<()> {
            for (i, img) in imgs.iter().enumerate() {
                let r = rel(domain, split, kind, i);
                let p = dir.join(&r);
                fs::create_dir_all(p.parent().expect("nested path"))?;
                write_srf32(img, &p)?;
                manifest.entries.push(ManifestEntry { split, path: r, domain });
            }
            Ok(())
        };
        put(Domain::Source, Split::Train, "lr", &self.source_train.lr)?;
        put(Domain::Source, Split::Train, "hr", &self.source_train.hr)?;
        put(Domain::Target, Split::Train, "lr", &self.target_train)?;
        for (split, pairs) in [(Split::Val, &self.target_val), (Split::Test, &self.target_test)] {
            put(Domain::Target, split, "lr", &pairs.lr)?;
            put(Domain::Target, split, "hr", &pairs.hr)?;
        }
        manifest.save(dir)?;
        Ok(manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = Manifest::load(dir)?;
        let mut groups: BTreeMap<(Domain, Split, String), Vec<(PathBuf, Image)>> = BTreeMap::new();
        for e in &manifest.entries {
            let kind = e
                .path
                .parent()
                .and_then(|p| p.file_name())
                .and_then(|s| s.to_str())
                .unwrap_or("")
                .to_string();
            if kind != "lr" && kind != "hr" {
                return Err(Error::Format(format!("cannot tell LR/HR for {}", e.path.display())));
            }
            let img = read_srf32(dir.join(&e.path))?;
            groups.entry((e.domain, e.split, kind)).or_default().push((e.path.clone(), img));
        }
        let mut take = |d, s, k: &str| -> Vec<Image> {
            let mut v = groups.remove(&(d, s, k.to_string())).unwrap_or_default();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            v.into_iter().map(|(_, img)| img).collect()
        };
        let mut pairs = |d, s| -> Result<Pairs> {
            let p = Pairs {
                lr: take(d, s, "lr"),
                hr: take(d, s, "hr"),
            };
            if p.lr.len() != p.hr.len() {
                return Err(Error::Format(format!(
                    "{} {}: {} LR vs {} HR images",
                    d.name(),
                    s.name(),
                    p.lr.len(),
                    p.hr.len()
                )));
            }
            Ok(p)
        };
        let source_train = pairs(Domain::Source, Split::Train)?;
        let target_val = pairs(Domain::Target, Split::Val)?;
        let target_test = pairs(Domain::Target, Split::Test)?;
        Ok(Self {
            source_train,
            target_train: take(Domain::Target, Split::Train, "lr"),
            target_val,
            target_test,
        })
    }
}
