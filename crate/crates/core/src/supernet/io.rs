use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{schema_hash, FieldSchema};
use crate::dlrm::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::Parameter;
use crate::rng::RngStream;
use crate::tensor::Matrix;

use super::{CandidateSet, EmbeddingNet, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Supernet,
    Standalone,
}

/// Header stored in the checkpoint's JSON meta block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetMeta {
    pub kind: NetKind,
    pub scheme: Option<Scheme>,
    pub candidates: CandidateSet,
    pub assignment: Option<Vec<usize>>,
    pub unified_dim: usize,
    pub schema_hash: String,
    pub model_config: ModelConfig,
}

impl NetMeta {
    pub fn of(net: &EmbeddingNet, schemas: &[FieldSchema]) -> Self {
        Self {
            kind: if net.store.scheme().is_some() { NetKind::Supernet } else { NetKind::Standalone },
            scheme: net.store.scheme(),
            candidates: net.candidates().clone(),
            assignment: net.store.assignment().map(<[usize]>::to_vec),
            unified_dim: net.config.unified_dim,
            schema_hash: schema_hash(schemas),
            model_config: net.config.clone(),
        }
    }
}

fn copy_into(ck: &Checkpoint, name: &str, p: &mut Parameter) -> Result<()> {
    let m = ck.get(name)?;
    if m.shape() != p.value.shape() {
        return Err(Error::Checkpoint(format!(
            "record {name} has shape {:?}, expected {:?}",
            m.shape(),
            p.value.shape()
        )));
    }
    p.value = m.clone();
    p.reset_state();
    Ok(())
}

/// Serializes every parameter, including batch-norm running statistics.
pub fn net_checkpoint(net: &EmbeddingNet, schemas: &[FieldSchema]) -> Result<Checkpoint> {
    let meta = serde_json::to_value(NetMeta::of(net, schemas))?;
    let mut ck = Checkpoint::new(serde_json::json!({ "kind": "embedding_net", "net": meta }));
    for (name, t) in net.store.tables() {
        ck.push(format!("emb.{name}"), t.weight.value.clone());
    }
    ck.push_module("bank", &net.bank);
    ck.push_module("main", &net.main);
    Ok(ck)
}

/// Rebuilds a net from a checkpoint, refusing one built for other schemas.
pub fn net_from_checkpoint(ck: &Checkpoint, schemas: &[FieldSchema]) -> Result<EmbeddingNet> {
    if ck.meta.get("kind").and_then(|k| k.as_str()) != Some("embedding_net") {
        return Err(Error::Checkpoint("container does not hold an embedding net".into()));
    }
    let meta: NetMeta = serde_json::from_value(ck.meta["net"].clone())?;
    let found = schema_hash(schemas);
    if meta.schema_hash != found {
        return Err(Error::SchemaMismatch { expected: meta.schema_hash, found });
    }
    let rng = RngStream::new(0);
    let mut net = match (&meta.scheme, &meta.assignment) {
        (Some(s), _) => EmbeddingNet::supernet(schemas, &meta.candidates, *s, &meta.model_config, &rng)?,
        (None, Some(a)) => EmbeddingNet::standalone(schemas, &meta.candidates, a, &meta.model_config, &rng)?,
        (None, None) => return Err(Error::Checkpoint("net meta has neither scheme nor assignment".into())),
    };
    let names: Vec<String> = net.store.tables().map(|(n, _)| format!("emb.{n}")).collect();
    for (name, t) in names.iter().zip(net.store.tables_mut()) {
        copy_into(ck, name, &mut t.weight)?;
    }
    ck.load_module("bank", &mut net.bank)?;
    ck.load_module("main", &mut net.main)?;
    Ok(net)
}

pub fn save_net(net: &EmbeddingNet, schemas: &[FieldSchema], extra: &[(String, Matrix)], path: impl AsRef<Path>) -> Result<()> {
    let mut ck = net_checkpoint(net, schemas)?;
    for (n, m) in extra {
        ck.push(n.clone(), m.clone());
    }
    ck.save(path)
}

pub fn load_net(path: impl AsRef<Path>, schemas: &[FieldSchema]) -> Result<(EmbeddingNet, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let net = net_from_checkpoint(&ck, schemas)?;
    Ok((net, ck))
}
