//! Self-describing binary model files.
//!
//! Layout, all integers little-endian:
//!
//! | field          | encoding                                                  |
//! |----------------|-----------------------------------------------------------|
//! | magic          | `SVCM`                                                    |
//! | version        | `u32`                                                     |
//! | artifact type  | `u8`: 0 cluster, 1 stage1, 2 stage2                       |
//! | config         | `u32` length + UTF-8 JSON                                 |
//! | vocabulary     | `u32` count, then `u32` length + UTF-8 per service id     |
//! | tensors        | `u32` count, then per tensor: `u32` name length + name,   |
//! |                | `u32` rank, `u32` extents, `f64` values                   |
//! | checksum       | SHA-256 of every preceding byte                           |

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::availability::{build_stage1_network, Stage1Config, Stage1Model};
use crate::duration::{build_dual_model, Stage2Config, Stage2Model};
use crate::error::{Error, Result};
use crate::features::{EncodingConfig, ServiceVocabulary};
use crate::geo_cluster::{ClusterModel, GeoPoint};
use crate::nn::{Network, Tensor};
use crate::scalar::Scalar;
use crate::series_gaf::GafOptions;

pub const CONTAINER_MAGIC: &[u8; 4] = b"SVCM";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactType {
    Cluster,
    Stage1,
    Stage2,
}

impl ArtifactType {
    fn tag(self) -> u8 {
        match self {
            ArtifactType::Cluster => 0,
            ArtifactType::Stage1 => 1,
            ArtifactType::Stage2 => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(ArtifactType::Cluster),
            1 => Ok(ArtifactType::Stage1),
            2 => Ok(ArtifactType::Stage2),
            t => Err(Error::Corrupt(format!("unknown artifact type tag {t}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArtifactType::Cluster => "cluster",
            ArtifactType::Stage1 => "stage1",
            ArtifactType::Stage2 => "stage2",
        }
    }
}

impl fmt::Display for ArtifactType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelContainer {
    pub artifact: ArtifactType,
    /// JSON snapshot of the configuration the model was built with.
    pub config: String,
    pub vocabulary: Vec<String>,
    /// Parameters and buffers in 64-bit, sorted by name.
    pub tensors: BTreeMap<String, Tensor<f64>>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::validation(format!("{v} does not fit the container's u32 fields")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Corrupt("container is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("string field is not UTF-8".into()))
    }
}

impl ModelContainer {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.push(self.artifact.tag());
        put_str(&mut out, &self.config)?;
        put_u32(&mut out, self.vocabulary.len())?;
        for s in &self.vocabulary {
            put_str(&mut out, s)?;
        }
        put_u32(&mut out, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_str(&mut out, name)?;
            put_u32(&mut out, t.shape().len())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Checks magic, version and checksum, in that order.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != CONTAINER_MAGIC {
            return Err(Error::Corrupt("not a model container (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CONTAINER_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: CONTAINER_VERSION,
            });
        }
        if bytes.len() < 8 + 32 {
            return Err(Error::Corrupt("container is truncated".into()));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let mut c = Cursor { bytes: body, pos: 8 };
        let artifact = ArtifactType::from_tag(c.take(1)?[0])?;
        let config = c.string()?;
        let vocabulary = (0..c.u32()?).map(|_| c.string()).collect::<Result<Vec<_>>>()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..c.u32()? {
            let name = c.string()?;
            let rank = c.u32()?;
            let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::Corrupt(format!("tensor {name} is too large")))?;
            let data = c
                .take(n)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        if c.pos != body.len() {
            return Err(Error::Corrupt("trailing bytes before checksum".into()));
        }
        Ok(Self {
            artifact,
            config,
            vocabulary,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Errors unless the container holds `expected`.
    pub fn expect(self, expected: ArtifactType) -> Result<Self> {
        if self.artifact != expected {
            return Err(Error::WrongArtifact {
                expected: expected.name(),
                found: self.artifact.to_string(),
            });
        }
        Ok(self)
    }

    fn snapshot<C: for<'de> Deserialize<'de>>(&self) -> Result<C> {
        serde_json::from_str(&self.config).map_err(|e| Error::Corrupt(format!("config snapshot: {e}")))
    }

    fn tensors_as<T: Scalar>(&self, prefix: &str) -> BTreeMap<String, Tensor<T>> {
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|k| (k.to_string(), v.cast::<T>())))
            .collect()
    }
}

fn to_json<C: Serialize>(c: &C) -> Result<String> {
    serde_json::to_string(c).map_err(|e| Error::validation(format!("config snapshot: {e}")))
}

fn f64_tensors<T: Scalar>(named: Vec<(String, Tensor<T>)>, prefix: &str) -> impl Iterator<Item = (String, Tensor<f64>)> + '_ {
    named.into_iter().map(move |(k, v)| (format!("{prefix}{k}"), v.cast::<f64>()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClusterSnapshot {
    earth_radius_km: f64,
    k: usize,
}

pub fn cluster_container(model: &ClusterModel) -> Result<ModelContainer> {
    let data: Vec<f64> = model.centroids().iter().flat_map(|p| [p.lat(), p.lon()]).collect();
    Ok(ModelContainer {
        artifact: ArtifactType::Cluster,
        config: to_json(&ClusterSnapshot {
            earth_radius_km: model.earth_radius_km(),
            k: model.k(),
        })?,
        vocabulary: Vec::new(),
        tensors: BTreeMap::from([("centroids".to_string(), Tensor::new(vec![model.k(), 2], data)?)]),
    })
}

pub fn cluster_from_container(c: &ModelContainer) -> Result<ClusterModel> {
    if c.artifact != ArtifactType::Cluster {
        return Err(Error::WrongArtifact {
            expected: "cluster",
            found: c.artifact.to_string(),
        });
    }
    let snap: ClusterSnapshot = c.snapshot()?;
    let t = c
        .tensors
        .get("centroids")
        .ok_or_else(|| Error::Corrupt("missing tensor centroids".into()))?;
    if t.shape() != [snap.k, 2] {
        return Err(Error::Corrupt(format!("centroid tensor has shape {:?}", t.shape())));
    }
    let pts = t
        .data()
        .chunks_exact(2)
        .map(|p| GeoPoint::new(p[0], p[1]))
        .collect::<Result<Vec<_>>>()?;
    ClusterModel::new(pts, snap.earth_radius_km)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Stage1Snapshot {
    config: Stage1Config,
    encoding: EncodingConfig,
    clusters: ClusterModel,
}

pub fn stage1_container<T: Scalar>(model: &Stage1Model<T>) -> Result<ModelContainer> {
    let mut net = model.network.clone();
    Ok(ModelContainer {
        artifact: ArtifactType::Stage1,
        config: to_json(&Stage1Snapshot {
            config: model.config.clone(),
            encoding: model.encoding.clone(),
            clusters: model.clusters.clone(),
        })?,
        vocabulary: model.vocabulary.ids().to_vec(),
        tensors: f64_tensors(net.named_tensors(), "").collect(),
    })
}

/// Rebuilds the stage-1 network from the snapshot and loads its weights.
pub fn stage1_from_container<T: Scalar>(c: &ModelContainer) -> Result<Stage1Model<T>> {
    if c.artifact != ArtifactType::Stage1 {
        return Err(Error::WrongArtifact {
            expected: "stage1",
            found: c.artifact.to_string(),
        });
    }
    let snap: Stage1Snapshot = c.snapshot()?;
    let vocabulary = ServiceVocabulary::new(c.vocabulary.iter().cloned());
    let spec = build_stage1_network(&snap.config, snap.encoding.input_len(), vocabulary.len())?;
    let mut network = Network::<T>::build(&spec, snap.config.seed)?;
    network.load_named(&c.tensors_as::<T>(""))?;
    Ok(Stage1Model {
        config: snap.config,
        encoding: snap.encoding,
        clusters: snap.clusters,
        vocabulary,
        network,
    })
}

/// How stage-2 inputs are produced from presence series; stored with the
/// model so forecasting encodes windows the same way.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowEncoding {
    pub window: usize,
    pub stride: usize,
    pub granularity_s: u32,
    pub gaf: GafOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Stage2Snapshot {
    config: Stage2Config,
    encoding: WindowEncoding,
}

pub fn stage2_container<T: Scalar>(model: &Stage2Model<T>, encoding: &WindowEncoding) -> Result<ModelContainer> {
    let mut m = model.clone();
    Ok(ModelContainer {
        artifact: ArtifactType::Stage2,
        config: to_json(&Stage2Snapshot {
            config: model.config.clone(),
            encoding: *encoding,
        })?,
        vocabulary: Vec::new(),
        tensors: f64_tensors(m.named_tensors(), "").collect(),
    })
}

pub fn stage2_from_container<T: Scalar>(c: &ModelContainer) -> Result<(Stage2Model<T>, WindowEncoding)> {
    if c.artifact != ArtifactType::Stage2 {
        return Err(Error::WrongArtifact {
            expected: "stage2",
            found: c.artifact.to_string(),
        });
    }
    let snap: Stage2Snapshot = c.snapshot()?;
    let mut model = build_dual_model::<T>(&snap.config)?;
    model.load_named(&c.tensors_as::<T>(""))?;
    Ok((model, snap.encoding))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::availability::HiddenLayer;
    use crate::features::EncodingOptions;

    fn cluster() -> ClusterModel {
        ClusterModel::new(
            vec![GeoPoint::new(41.0, -8.0).unwrap(), GeoPoint::new(48.0, 2.0).unwrap()],
            6371.0,
        )
        .unwrap()
    }

    #[test]
    fn cluster_round_trip_is_byte_exact() {
        let c = cluster_container(&cluster()).unwrap();
        let bytes = c.encode().unwrap();
        let back = ModelContainer::decode(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.encode().unwrap(), bytes);
        assert_eq!(cluster_from_container(&back).unwrap(), cluster());
    }

    #[test]
    fn corruption_version_and_type() {
        let bytes = cluster_container(&cluster()).unwrap().encode().unwrap();
        let mut flipped = bytes.clone();
        let mid = bytes.len() - 40;
        flipped[mid] ^= 0x10;
        assert!(matches!(ModelContainer::decode(&flipped), Err(Error::Corrupt(m)) if m.contains("checksum")));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            ModelContainer::decode(&v2),
            Err(Error::UnsupportedVersion { found: 2, supported: 1 })
        ));
        assert!(matches!(ModelContainer::decode(b"nope"), Err(Error::Corrupt(_))));
        let c = ModelContainer::decode(&bytes).unwrap();
        assert!(matches!(c.clone().expect(ArtifactType::Stage1), Err(Error::WrongArtifact { .. })));
        assert!(stage1_from_container::<f64>(&c).is_err());
        assert!(c.expect(ArtifactType::Cluster).is_ok());
    }

    #[test]
    fn stage1_round_trip_preserves_outputs() {
        let cfg = Stage1Config {
            hidden: vec![HiddenLayer::new(5, 0.01), HiddenLayer::new(4, 0.02)],
            ..Stage1Config::default()
        };
        let enc = EncodingConfig {
            options: EncodingOptions::default(),
            lat_mean: 44.0,
            lat_std: 3.0,
            lon_mean: -3.0,
            lon_std: 5.0,
            n_clusters: 2,
        };
        let vocab = ServiceVocabulary::new(["a".to_string(), "b".to_string(), "c".to_string()]);
        let spec = build_stage1_network(&cfg, enc.input_len(), 3).unwrap();
        let mut network = Network::<f32>::build(&spec, 99).unwrap();
        network.visit_buffers(&mut |_, t| t.fill(0.25));
        let model = Stage1Model {
            config: cfg,
            encoding: enc,
            clusters: cluster(),
            vocabulary: vocab,
            network,
        };
        let c = stage1_container(&model).unwrap();
        let bytes = c.encode().unwrap();
        let back: Stage1Model<f32> = stage1_from_container(&ModelContainer::decode(&bytes).unwrap()).unwrap();
        let x = Tensor::<f32>::from_f64(&[2, 14], &(0..28).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>())
            .unwrap();
        assert_eq!(back.network.infer(&x).unwrap(), model.network.infer(&x).unwrap());
        assert_eq!(stage1_container(&back).unwrap().encode().unwrap(), bytes);
    }

    #[test]
    fn stage2_round_trip() {
        let cfg = Stage2Config {
            input_size: 16,
            channels: vec![4, 8, 8],
            gamma: 2,
            ..Stage2Config::default()
        };
        let model = build_dual_model::<f64>(&cfg).unwrap();
        let enc = WindowEncoding {
            window: 16,
            stride: 4,
            granularity_s: 60,
            gaf: GafOptions::default(),
        };
        let c = stage2_container(&model, &enc).unwrap();
        let (mut back, e2) = stage2_from_container::<f64>(&ModelContainer::decode(&c.encode().unwrap()).unwrap()).unwrap();
        assert_eq!(e2, enc);
        assert_eq!(back.named_tensors(), model.clone().named_tensors());
    }
}
