//! Binary model files: magic, version, kind tag, vocabulary, parameters.
//! All integers and floats are little-endian.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::count::{CountModel, TrieNode};
use super::neural::{NeuralConfig, NeuralModel};
use super::{AnyModel, ModelError};
use crate::triplet::Vocab;

pub const MAGIC: &[u8; 8] = b"SYNGENM\0";
pub const VERSION: u32 = 1;

const KIND_COUNT: u8 = 0;
const KIND_NEURAL: u8 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.0.write_all(b)
    }
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.bytes(&[v])
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn len(&mut self, n: usize) -> std::io::Result<()> {
        self.u32(u32::try_from(n).map_err(|_| std::io::Error::other("length exceeds u32"))?)
    }
    fn str(&mut self, s: &str) -> std::io::Result<()> {
        self.len(s.len())?;
        self.bytes(s.as_bytes())
    }
    fn trie(&mut self, node: &TrieNode) -> std::io::Result<()> {
        self.u64(node.total)?;
        self.len(node.children.len())?;
        for (&id, (count, child)) in &node.children {
            self.u32(id)?;
            self.u64(*count)?;
            self.trie(child)?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

fn truncated(e: std::io::Error) -> ModelError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        ModelError::Format("truncated file".into())
    } else {
        ModelError::Io(e)
    }
}

impl<R: Read> Reader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(truncated)?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.array::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn str(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        let mut b = Vec::new();
        (&mut self.0).take(n as u64).read_to_end(&mut b)?;
        if b.len() != n {
            return Err(ModelError::Format("truncated file".into()));
        }
        String::from_utf8(b).map_err(|e| ModelError::Format(e.to_string()))
    }
    fn trie(&mut self, depth: usize) -> Result<TrieNode, ModelError> {
        if depth > 100_000 {
            return Err(ModelError::Format("trie too deep".into()));
        }
        let total = self.u64()?;
        let n = self.u32()?;
        let mut children = BTreeMap::new();
        for _ in 0..n {
            let id = self.u32()?;
            let count = self.u64()?;
            children.insert(id, (count, self.trie(depth + 1)?));
        }
        Ok(TrieNode { total, children })
    }
}

fn write_model<W: Write>(model: &AnyModel, w: W) -> std::io::Result<()> {
    let mut w = Writer(w);
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    let vocab = match model {
        AnyModel::Count(m) => &m.vocab,
        AnyModel::Neural(m) => &m.vocab,
    };
    w.u8(match model {
        AnyModel::Count(_) => KIND_COUNT,
        AnyModel::Neural(_) => KIND_NEURAL,
    })?;
    w.len(vocab.len())?;
    for t in vocab.tokens() {
        w.str(t)?;
    }
    match model {
        AnyModel::Count(m) => {
            w.f64(m.smoothing)?;
            let mut pairs: Vec<_> = m.pairs.iter().collect();
            pairs.sort_unstable_by_key(|(k, _)| **k);
            w.u64(pairs.len() as u64)?;
            for ((s, c), node) in pairs {
                w.u64(*s)?;
                w.u64(*c)?;
                w.trie(node)?;
            }
            let mut contexts: Vec<_> = m.contexts.iter().collect();
            contexts.sort_unstable_by_key(|(k, _)| **k);
            w.u64(contexts.len() as u64)?;
            for (c, node) in contexts {
                w.u64(*c)?;
                w.trie(node)?;
            }
        }
        AnyModel::Neural(m) => {
            w.str(&serde_json::to_string(&m.config).map_err(std::io::Error::other)?)?;
            w.len(m.params.len())?;
            for p in &m.params {
                w.len(p.nrows())?;
                w.len(p.ncols())?;
                for &x in p.iter() {
                    w.f64(x)?;
                }
            }
        }
    }
    Ok(())
}

fn read_model<R: Read>(r: R) -> Result<AnyModel, ModelError> {
    let mut r = Reader(r);
    if &r.array::<8>()? != MAGIC {
        return Err(ModelError::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelError::Version(version));
    }
    let kind = r.u8()?;
    let n = r.u32()? as usize;
    let tokens = (0..n).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
    let vocab = Vocab::from_ordered(tokens).map_err(|e| ModelError::Format(e.to_string()))?;
    let model = match kind {
        KIND_COUNT => {
            let smoothing = r.f64()?;
            let np = r.u64()?;
            let mut pairs = HashMap::new();
            for _ in 0..np {
                let key = (r.u64()?, r.u64()?);
                pairs.insert(key, r.trie(0)?);
            }
            let nc = r.u64()?;
            let mut contexts = HashMap::new();
            for _ in 0..nc {
                let key = r.u64()?;
                contexts.insert(key, r.trie(0)?);
            }
            AnyModel::Count(CountModel {
                vocab,
                smoothing,
                pairs,
                contexts,
            })
        }
        KIND_NEURAL => {
            let config: NeuralConfig = serde_json::from_str(&r.str()?).map_err(|e| ModelError::Format(e.to_string()))?;
            let count = r.u32()? as usize;
            let mut params = Vec::with_capacity(count.min(4096));
            for _ in 0..count {
                let rows = r.u32()? as usize;
                let cols = r.u32()? as usize;
                let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
                params.push(Array2::from_shape_vec((rows, cols), data).map_err(|e| ModelError::Format(e.to_string()))?);
            }
            AnyModel::Neural(NeuralModel::from_parts(vocab, config, params)?)
        }
        k => return Err(ModelError::Format(format!("unknown model kind tag {k}"))),
    };
    let mut rest = [0u8; 1];
    if r.0.read(&mut rest)? != 0 {
        return Err(ModelError::Format("trailing bytes after parameters".into()));
    }
    Ok(model)
}

pub fn save_model(model: &AnyModel, path: &Path) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<AnyModel, ModelError> {
    read_model(BufReader::new(File::open(path)?))
}

pub fn to_bytes(model: &AnyModel) -> Vec<u8> {
    let mut out = Vec::new();
    write_model(model, &mut out).expect("writing to memory");
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<AnyModel, ModelError> {
    read_model(bytes)
}
