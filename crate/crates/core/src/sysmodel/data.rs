//! Datasets: synthetic Gaussian mixtures, IDX files, and device partitions.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DataShard;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: DataShard,
    pub test: DataShard,
    pub classes: usize,
}

/// Isotropic Gaussian clusters, one per class, with centers drawn from
/// `N(0, separation^2)` per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub separation: f64,
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            dim: 10,
            train_size: 2000,
            test_size: 600,
            separation: 1.0,
            noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum Partition {
    Iid,
    Noniid { shards_per_device: usize },
}

pub fn synthetic_mixture(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    if spec.classes < 2 || spec.dim == 0 || spec.train_size == 0 || spec.test_size == 0 {
        return Err(Error::InvalidArgument(
            "synthetic data needs >= 2 classes, dim >= 1 and non-empty splits".into(),
        ));
    }
    if !(spec.separation > 0.0 && spec.noise > 0.0) {
        return Err(Error::InvalidArgument("separation and noise must be positive".into()));
    }
    let mut rng = rng::stream(seed, Purpose::Data, 0, 0);
    let centers: Vec<Vec<f64>> = {
        let n = Normal::new(0.0, spec.separation).expect("positive std");
        (0..spec.classes)
            .map(|_| (0..spec.dim).map(|_| n.sample(&mut rng)).collect())
            .collect()
    };
    let noise = Normal::new(0.0, spec.noise).expect("positive std");
    let draw = |count: usize, rng: &mut rng::StreamRng| -> Result<DataShard> {
        let mut features = Vec::with_capacity(count * spec.dim);
        let mut labels = Vec::with_capacity(count);
        for k in 0..count {
            // balanced classes, then shuffled below
            let c = k % spec.classes;
            labels.push(c as u32);
            features.extend(centers[c].iter().map(|&m| (m + noise.sample(rng)) as f32));
        }
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(rng);
        let features = order
            .iter()
            .flat_map(|&i| features[i * spec.dim..(i + 1) * spec.dim].iter().copied())
            .collect();
        let labels = order.iter().map(|&i| labels[i]).collect();
        DataShard::new(spec.dim, features, labels)
    };
    let train = draw(spec.train_size, &mut rng)?;
    let test = draw(spec.test_size, &mut rng)?;
    Ok(Dataset {
        train,
        test,
        classes: spec.classes,
    })
}

fn read_u32_be(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

/// Reads an IDX image file (unsigned bytes, any rank >= 2) and its label
/// file; pixels are scaled to `[0, 1]`.
pub fn read_idx(images: &Path, labels: &Path) -> Result<DataShard> {
    let mut img = std::io::BufReader::new(std::fs::File::open(images)?);
    let magic = read_u32_be(&mut img)?;
    let rank = (magic & 0xff) as usize;
    if magic >> 8 != 0x08 || rank < 2 {
        return Err(Error::corrupt(format!("{}: not an unsigned-byte IDX tensor", images.display())));
    }
    let dims = (0..rank).map(|_| read_u32_be(&mut img).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n = dims[0];
    let dim: usize = dims[1..].iter().product();
    let mut pixels = Vec::new();
    img.read_to_end(&mut pixels)?;
    if pixels.len() != n * dim {
        return Err(Error::corrupt(format!(
            "{}: expected {} bytes of pixels, found {}",
            images.display(),
            n * dim,
            pixels.len()
        )));
    }

    let mut lab = std::io::BufReader::new(std::fs::File::open(labels)?);
    if read_u32_be(&mut lab)? != 0x0801 {
        return Err(Error::corrupt(format!("{}: not an IDX label vector", labels.display())));
    }
    let count = read_u32_be(&mut lab)? as usize;
    let mut raw = Vec::new();
    lab.read_to_end(&mut raw)?;
    if count != n || raw.len() != n {
        return Err(Error::corrupt(format!(
            "{}: {} labels for {} images",
            labels.display(),
            raw.len(),
            n
        )));
    }
    DataShard::new(
        dim,
        pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        raw.iter().map(|&l| l as u32).collect(),
    )
}

fn gather(data: &DataShard, idx: &[usize]) -> Result<DataShard> {
    let features = idx.iter().flat_map(|&i| data.sample(i).iter().copied()).collect();
    let labels = idx.iter().map(|&i| data.labels[i]).collect();
    DataShard::new(data.dim, features, labels)
}

/// Splits `data` across `devices`. IID: shuffled near-equal split. Non-IID:
/// single-label shards, `shards_per_device` of them per device.
pub fn partition_data(data: &DataShard, mode: Partition, devices: usize, seed: u64) -> Result<Vec<DataShard>> {
    if devices == 0 {
        return Err(Error::InvalidArgument("at least one device required".into()));
    }
    let n = data.size();
    let mut rng = rng::stream(seed, Purpose::Partition, 0, 0);
    match mode {
        Partition::Iid => {
            if n < devices {
                return Err(Error::TooFewSamples(format!("{n} samples for {devices} devices")));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let (base, extra) = (n / devices, n % devices);
            let mut start = 0;
            (0..devices)
                .map(|i| {
                    let len = base + usize::from(i < extra);
                    let part = gather(data, &idx[start..start + len]);
                    start += len;
                    part
                })
                .collect()
        }
        Partition::Noniid { shards_per_device } => {
            if shards_per_device == 0 {
                return Err(Error::InvalidArgument("shards_per_device must be >= 1".into()));
            }
            let total = devices * shards_per_device;
            if n < total {
                return Err(Error::TooFewSamples(format!("{n} samples for {total} shards")));
            }
            let classes = data.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
            for (i, &l) in data.labels.iter().enumerate() {
                by_class[l as usize].push(i);
            }
            for members in &mut by_class {
                members.shuffle(&mut rng);
            }
            let counts = allocate_shards(&by_class.iter().map(Vec::len).collect::<Vec<_>>(), total)?;
            let mut shards: Vec<Vec<usize>> = Vec::with_capacity(total);
            for (members, &m) in by_class.iter().zip(&counts) {
                let (base, extra) = (members.len() / m.max(1), members.len() % m.max(1));
                let mut start = 0;
                for s in 0..m {
                    let len = base + usize::from(s < extra);
                    shards.push(members[start..start + len].to_vec());
                    start += len;
                }
            }
            shards.shuffle(&mut rng);
            shards
                .chunks(shards_per_device)
                .map(|group| gather(data, &group.concat()))
                .collect()
        }
    }
}

/// Largest-remainder allocation of `total` shards over classes, at least one
/// per non-empty class and never more than its sample count.
fn allocate_shards(sizes: &[usize], total: usize) -> Result<Vec<usize>> {
    let n: usize = sizes.iter().sum();
    let nonempty = sizes.iter().filter(|&&s| s > 0).count();
    if total < nonempty {
        return Err(Error::TooFewSamples(format!(
            "{total} shards cannot cover {nonempty} classes"
        )));
    }
    let quota: Vec<f64> = sizes.iter().map(|&s| s as f64 * total as f64 / n as f64).collect();
    let mut counts: Vec<usize> = sizes
        .iter()
        .zip(&quota)
        .map(|(&s, &q)| if s == 0 { 0 } else { (q.floor() as usize).clamp(1, s) })
        .collect();
    let mut assigned: usize = counts.iter().sum();
    while assigned < total {
        let c = (0..sizes.len())
            .filter(|&c| counts[c] < sizes[c])
            .max_by(|&a, &b| {
                (quota[a] - counts[a] as f64)
                    .total_cmp(&(quota[b] - counts[b] as f64))
                    .then(b.cmp(&a))
            })
            .expect("n >= total leaves room");
        counts[c] += 1;
        assigned += 1;
    }
    while assigned > total {
        let c = (0..sizes.len())
            .filter(|&c| counts[c] > 1)
            .max_by(|&a, &b| {
                (counts[a] as f64 - quota[a])
                    .total_cmp(&(counts[b] as f64 - quota[b]))
                    .then(b.cmp(&a))
            })
            .expect("total >= nonempty classes");
        counts[c] -= 1;
        assigned -= 1;
    }
    Ok(counts)
}
