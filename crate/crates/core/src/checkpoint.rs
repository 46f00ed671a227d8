//! Binary checkpoints: parameters, optional Adam state, and the relation
//! vocabulary they were trained against. All numbers are little-endian and
//! parameters are stored as `f64` whatever the in-memory scalar.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{GraphOptions, RelationVocab, Vocab};
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::trainer::{OptimizerState, TrainState};

const MAGIC: &[u8; 8] = b"CPSRCKPT";
const VERSION: u32 = 1;

const FLAG_SHARED_MIX: u32 = 1;
const FLAG_OPTIMIZER: u32 = 1 << 1;
const FLAG_SELF_LOOP: u32 = 1 << 2;
const FLAG_INVERSE: u32 = 1 << 3;

/// Contents of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub relations: RelationVocab,
    pub params: ModelParams<T>,
    pub optimizer: Option<OptimizerState<T>>,
    pub epochs_done: u64,
    pub best_valid_mrr: f64,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_state(relations: &RelationVocab, state: &TrainState<T>, with_optimizer: bool) -> Self {
        Self {
            relations: relations.clone(),
            params: state.params.clone(),
            optimizer: with_optimizer.then(|| state.optimizer.clone()),
            epochs_done: state.epochs_done,
            best_valid_mrr: state.best_valid_mrr,
        }
    }

    /// Training state to resume from; fails when no optimizer state was saved.
    pub fn into_state(self) -> Result<TrainState<T>> {
        let optimizer = self.optimizer.ok_or_else(|| Error::Checkpoint("no optimizer state saved".into()))?;
        Ok(TrainState {
            params: self.params,
            optimizer,
            epochs_done: self.epochs_done,
            best_valid_mrr: self.best_valid_mrr,
        })
    }

    /// Errors unless this checkpoint was trained on exactly `relations`.
    pub fn check_relations(&self, relations: &RelationVocab) -> Result<()> {
        if &self.relations != relations {
            return Err(Error::VocabularyMismatch("checkpoint relation vocabulary differs from the graph's".into()));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let p = &self.params;
        let mut flags = 0;
        if p.mix.len() == 1 {
            flags |= FLAG_SHARED_MIX;
        }
        if self.optimizer.is_some() {
            flags |= FLAG_OPTIMIZER;
        }
        let opts = self.relations.options();
        if opts.add_self_loop {
            flags |= FLAG_SELF_LOOP;
        }
        if opts.add_inverse {
            flags |= FLAG_INVERSE;
        }
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION)?;
        put_u32(&mut w, p.dim() as u32)?;
        put_u32(&mut w, p.num_relations() as u32)?;
        put_u32(&mut w, p.mix.len() as u32)?;
        put_u32(&mut w, flags)?;
        put_u64(&mut w, self.epochs_done)?;
        put_f64(&mut w, self.best_valid_mrr)?;
        let names = self.relations.base().names();
        put_u32(&mut w, names.len() as u32)?;
        for n in names {
            put_u32(&mut w, n.len() as u32)?;
            w.write_all(n.as_bytes())?;
        }
        put_params(&mut w, p)?;
        if let Some(o) = &self.optimizer {
            put_u64(&mut w, o.step)?;
            for x in [o.lr, o.beta1, o.beta2, o.eps] {
                put_f64(&mut w, x)?;
            }
            put_params(&mut w, &o.m)?;
            put_params(&mut w, &o.v)?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = get_u32(&mut r)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let dim = get_u32(&mut r)? as usize;
        let nrel = get_u32(&mut r)? as usize;
        let n_mix = get_u32(&mut r)? as usize;
        let flags = get_u32(&mut r)?;
        let epochs_done = get_u64(&mut r)?;
        let best_valid_mrr = get_f64(&mut r)?;
        let n_names = get_u32(&mut r)? as usize;
        let mut names = Vec::with_capacity(n_names.min(1 << 16));
        for _ in 0..n_names {
            let len = get_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            read_exact(&mut r, &mut buf)?;
            names.push(String::from_utf8(buf).map_err(|_| bad("relation name is not UTF-8"))?);
        }
        let options =
            GraphOptions { add_inverse: flags & FLAG_INVERSE != 0, add_self_loop: flags & FLAG_SELF_LOOP != 0 };
        let relations = RelationVocab::new(Vocab::from_names(names), options);
        if relations.len() != nrel {
            return Err(bad(&format!("{nrel} relation embeddings but the vocabulary implies {}", relations.len())));
        }
        let shared = flags & FLAG_SHARED_MIX != 0;
        if n_mix != if shared { 1 } else { nrel } {
            return Err(bad("mixing matrix count disagrees with flags"));
        }
        let params = get_params(&mut r, nrel, dim, shared)?;
        let optimizer = if flags & FLAG_OPTIMIZER != 0 {
            let step = get_u64(&mut r)?;
            let lr = get_f64(&mut r)?;
            let beta1 = get_f64(&mut r)?;
            let beta2 = get_f64(&mut r)?;
            let eps = get_f64(&mut r)?;
            let m = get_params(&mut r, nrel, dim, shared)?;
            let v = get_params(&mut r, nrel, dim, shared)?;
            Some(OptimizerState { m, v, step, lr, beta1, beta2, eps })
        } else {
            None
        };
        let mut tail = [0u8; 1];
        if r.read(&mut tail).map_err(|e| bad(&e.to_string()))? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { relations, params, optimizer, epochs_done, best_valid_mrr })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file)).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

fn bad(msg: &str) -> Error {
    Error::Checkpoint(msg.to_owned())
}

fn put_u32<W: Write>(w: &mut W, x: u32) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn put_u64<W: Write>(w: &mut W, x: u64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn put_f64<W: Write>(w: &mut W, x: f64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn put_params<W: Write, T: Scalar>(w: &mut W, p: &ModelParams<T>) -> std::io::Result<()> {
    for block in p.blocks() {
        for x in block {
            put_f64(w, x.as_f64())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| bad("file is truncated"))
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    get_u64(r).map(f64::from_bits)
}

fn get_params<R: Read, T: Scalar>(r: &mut R, nrel: usize, dim: usize, shared: bool) -> Result<ModelParams<T>> {
    let mut p = ModelParams::<T>::zeros(nrel, dim, shared);
    for block in p.blocks_mut() {
        for x in block.iter_mut() {
            *x = T::of(get_f64(r)?);
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn relations() -> RelationVocab {
        RelationVocab::new(Vocab::from_names(["likes", "knows"]), GraphOptions::default())
    }

    fn state() -> TrainState<f64> {
        let params = ModelParams::init(5, 3, false, &mut stream(1, Purpose::Init, 0, 0, 0));
        let mut optimizer = OptimizerState::new(&params, 1e-3);
        optimizer.step = 7;
        optimizer.m.w_out[1] = 0.25;
        TrainState { params, optimizer, epochs_done: 4, best_valid_mrr: 0.5 }
    }

    #[test]
    fn round_trip_with_optimizer() {
        let ck = Checkpoint::from_state(&relations(), &state(), true);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::<f64>::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.into_state().unwrap(), state());
    }

    #[test]
    fn round_trip_without_optimizer_and_to_f32() {
        let ck = Checkpoint::from_state(&relations(), &state(), false);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::<f32>::read_from(buf.as_slice()).unwrap();
        assert!(back.optimizer.is_none());
        assert_eq!(back.params, ck.params.cast::<f32>());
        assert!(matches!(back.into_state(), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let ck = Checkpoint::from_state(&relations(), &state(), true);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert!(Checkpoint::<f64>::read_from(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(Checkpoint::<f64>::read_from(extra.as_slice()).is_err());
        let mut wrong = buf;
        wrong[0] = b'X';
        assert!(Checkpoint::<f64>::read_from(wrong.as_slice()).is_err());
    }

    #[test]
    fn relation_check() {
        let ck = Checkpoint::from_state(&relations(), &state(), false);
        assert!(ck.check_relations(&relations()).is_ok());
        let other = RelationVocab::new(Vocab::from_names(["knows", "likes"]), GraphOptions::default());
        assert!(matches!(ck.check_relations(&other), Err(Error::VocabularyMismatch(_))));
    }
}
