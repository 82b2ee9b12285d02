//! Run state serialization: a single little-endian binary file holding the
//! run configuration verbatim, the step counter, the batch-sampler state,
//! every parameter tensor by name, and the optimizer moments.
//!
//! The format is fully deterministic — the same run state always produces
//! byte-identical files — which is what makes the reproducibility checks
//! meaningful. Layout:
//!
//! ```text
//! magic      8 bytes  "UEMCKPT\x01"
//! config     u64 length + that many UTF-8 bytes (TOML, verbatim)
//! step       u64
//! rng        4 × u64 sampler state words
//! tensors    u64 count, then per tensor:
//!              u64 name length + name bytes
//!              u64 rank + u64 dims…
//!              f64 bits × product(dims)
//! optimizer  u64 step count, then per tensor: m then v (f64 bits × numel)
//! ```

use crate::data::shards::atomic_write;
use crate::layers::ParamSet;
use crate::tensor::Tensor;
use crate::train::{AdamState, Trainer};
use std::path::Path;

const MAGIC: &[u8; 8] = b"UEMCKPT\x01";

#[derive(Debug, PartialEq, Eq)]
pub enum CkptError {
    Io { path: String, msg: String },
    BadMagic,
    Corrupt { msg: String },
    /// Checkpoint does not fit the parameter set it is being applied to.
    Mismatch { msg: String },
}

impl std::fmt::Display for CkptError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CkptError::Io { path, msg } => write!(f, "checkpoint io {path}: {msg}"),
            CkptError::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            CkptError::Corrupt { msg } => write!(f, "corrupt checkpoint: {msg}"),
            CkptError::Mismatch { msg } => write!(f, "checkpoint mismatch: {msg}"),
        }
    }
}

impl std::error::Error for CkptError {}

/// Everything needed to resume a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// The run's TOML configuration, byte for byte.
    pub config_toml: String,
    pub step: u64,
    pub rng_words: [u64; 4],
    /// `(name, tensor)` in canonical parameter order.
    pub tensors: Vec<(String, Tensor)>,
    pub adam_t: u64,
    pub adam_m: Vec<Vec<f64>>,
    pub adam_v: Vec<Vec<f64>>,
}

impl Checkpoint {
    /// Snapshot a trainer. The configuration text is supplied by the caller
    /// because the trainer does not know how it was configured.
    pub fn from_trainer(t: &Trainer, config_toml: String) -> Checkpoint {
        let tensors = t
            .params
            .refs()
            .map(|r| (t.params.name(r).to_string(), t.params.get(r).clone()))
            .collect();
        Checkpoint {
            config_toml,
            step: t.step,
            rng_words: t.rng.state_words(),
            tensors,
            adam_t: t.adam.t,
            adam_m: t.adam.m.clone(),
            adam_v: t.adam.v.clone(),
        }
    }

    /// Overwrite a freshly initialized parameter set with the checkpoint's
    /// tensors. Names, order, and shapes must match exactly.
    pub fn apply_params(&self, ps: &mut ParamSet) -> Result<(), CkptError> {
        if ps.len() != self.tensors.len() {
            return Err(CkptError::Mismatch {
                msg: format!("{} tensors in file, {} registered", self.tensors.len(), ps.len()),
            });
        }
        for (r, (name, tensor)) in ps.refs().collect::<Vec<_>>().into_iter().zip(&self.tensors) {
            if ps.name(r) != name {
                return Err(CkptError::Mismatch {
                    msg: format!("parameter {:?} where file has {:?}", ps.name(r), name),
                });
            }
            if ps.get(r).shape() != tensor.shape() {
                return Err(CkptError::Mismatch {
                    msg: format!(
                        "{name}: shape {:?} in file, {:?} registered",
                        tensor.shape(),
                        ps.get(r).shape()
                    ),
                });
            }
            *ps.get_mut(r) = tensor.clone();
        }
        Ok(())
    }

    /// Rebuild the optimizer state captured in the checkpoint.
    pub fn adam_state(&self) -> AdamState {
        AdamState { m: self.adam_m.clone(), v: self.adam_v.clone(), t: self.adam_t }
    }
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CkptError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u64(&mut buf, ckpt.config_toml.len() as u64);
    buf.extend_from_slice(ckpt.config_toml.as_bytes());
    push_u64(&mut buf, ckpt.step);
    for w in ckpt.rng_words {
        push_u64(&mut buf, w);
    }
    push_u64(&mut buf, ckpt.tensors.len() as u64);
    for (name, tensor) in &ckpt.tensors {
        push_u64(&mut buf, name.len() as u64);
        buf.extend_from_slice(name.as_bytes());
        push_u64(&mut buf, tensor.rank() as u64);
        for &d in tensor.shape() {
            push_u64(&mut buf, d as u64);
        }
        push_f64s(&mut buf, tensor.data());
    }
    push_u64(&mut buf, ckpt.adam_t);
    if ckpt.adam_m.len() != ckpt.tensors.len() || ckpt.adam_v.len() != ckpt.tensors.len() {
        return Err(CkptError::Mismatch {
            msg: "optimizer moment count differs from tensor count".into(),
        });
    }
    for ((m, v), (name, tensor)) in ckpt.adam_m.iter().zip(&ckpt.adam_v).zip(&ckpt.tensors) {
        if m.len() != tensor.numel() || v.len() != tensor.numel() {
            return Err(CkptError::Mismatch {
                msg: format!("optimizer moments for {name} have the wrong length"),
            });
        }
        push_f64s(&mut buf, m);
        push_f64s(&mut buf, v);
    }
    atomic_write(path, &buf)
        .map_err(|e| CkptError::Io { path: path.display().to_string(), msg: e.to_string() })
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CkptError> {
        if self.at + n > self.buf.len() {
            return Err(CkptError::Corrupt {
                msg: format!("truncated at byte {} (wanted {n} more)", self.at),
            });
        }
        let out = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, CkptError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CkptError> {
        let bytes = self.take(8 * n)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }

    fn string(&mut self) -> Result<String, CkptError> {
        let len = self.u64()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CkptError::Corrupt { msg: "non-UTF-8 string".into() })
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CkptError> {
    let buf = std::fs::read(path)
        .map_err(|e| CkptError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    let mut r = Reader { buf: &buf, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(CkptError::BadMagic);
    }
    let config_toml = r.string()?;
    let step = r.u64()?;
    let rng_words = [r.u64()?, r.u64()?, r.u64()?, r.u64()?];
    let n_tensors = r.u64()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = r.string()?;
        let rank = r.u64()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64()? as usize);
        }
        let numel: usize = dims.iter().product();
        let data = r.f64s(numel)?;
        let tensor = Tensor::new(dims, data)
            .map_err(|e| CkptError::Corrupt { msg: format!("tensor {name}: {e}") })?;
        tensors.push((name, tensor));
    }
    let adam_t = r.u64()?;
    let mut adam_m = Vec::with_capacity(n_tensors);
    let mut adam_v = Vec::with_capacity(n_tensors);
    for (_, tensor) in &tensors {
        adam_m.push(r.f64s(tensor.numel())?);
        adam_v.push(r.f64s(tensor.numel())?);
    }
    if r.at != buf.len() {
        return Err(CkptError::Corrupt {
            msg: format!("{} trailing bytes", buf.len() - r.at),
        });
    }
    Ok(Checkpoint { config_toml, step, rng_words, tensors, adam_t, adam_m, adam_v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn sample() -> Checkpoint {
        let mut rng = RngState::from_seed(3);
        let t1 = crate::layers::normal_matrix(&mut rng, 2, 3, 1.0);
        let t2 = crate::layers::normal_matrix(&mut rng, 4, 1, 0.5);
        Checkpoint {
            config_toml: "[run]\nseed = 42\n".into(),
            step: 17,
            rng_words: RngState::from_seed(9).state_words(),
            adam_m: vec![vec![0.1; 6], vec![0.2; 4]],
            adam_v: vec![vec![0.3; 6], vec![0.4; 4]],
            adam_t: 17,
            tensors: vec![("a.w".into(), t1), ("b.w".into(), t2)],
        }
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("ckpt-{name}-{}.bin", std::process::id()))
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ckpt = sample();
        let p1 = tmp("a");
        let p2 = tmp("b");
        save_checkpoint(&p1, &ckpt).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded, ckpt);
        save_checkpoint(&p2, &loaded).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
        std::fs::remove_file(&p1).unwrap();
        std::fs::remove_file(&p2).unwrap();
    }

    #[test]
    fn bad_magic_and_truncation_are_distinct_errors() {
        let p = tmp("bad");
        std::fs::write(&p, b"NOTACKPT").unwrap();
        assert_eq!(load_checkpoint(&p), Err(CkptError::BadMagic));

        let ckpt = sample();
        save_checkpoint(&p, &ckpt).unwrap();
        let full = std::fs::read(&p).unwrap();
        std::fs::write(&p, &full[..full.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(CkptError::Corrupt { .. })));

        std::fs::write(&p, [full.clone(), vec![0u8]].concat()).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(CkptError::Corrupt { .. })));
        std::fs::remove_file(&p).unwrap();
    }

    #[test]
    fn apply_params_validates_names_and_shapes() {
        let ckpt = sample();
        let mut ps = ParamSet::new();
        ps.add("a.w", Tensor::zeros(vec![2, 3]));
        ps.add("b.w", Tensor::zeros(vec![4, 1]));
        ckpt.apply_params(&mut ps).unwrap();
        assert_eq!(ps.get(ps.find("a.w").unwrap()), &ckpt.tensors[0].1);

        let mut wrong_name = ParamSet::new();
        wrong_name.add("a.w", Tensor::zeros(vec![2, 3]));
        wrong_name.add("c.w", Tensor::zeros(vec![4, 1]));
        assert!(matches!(ckpt.apply_params(&mut wrong_name), Err(CkptError::Mismatch { .. })));

        let mut wrong_shape = ParamSet::new();
        wrong_shape.add("a.w", Tensor::zeros(vec![3, 2]));
        wrong_shape.add("b.w", Tensor::zeros(vec![4, 1]));
        assert!(matches!(ckpt.apply_params(&mut wrong_shape), Err(CkptError::Mismatch { .. })));
    }

    #[test]
    fn resumed_trainer_continues_the_exact_loss_curve() {
        use crate::data::labels::build_preference_labels;
        use crate::data::render::{render_item_text, INSTRUCTION};
        use crate::data::synth::{synth_generate, SynthConfig};
        use crate::embedder::EmbedderConfig;
        use crate::lm::vocab::Vocab;
        use crate::lm::{LmConfig, LmModel};
        use crate::train::{prepare_embedding_examples, AdamConfig, Trainer};
        use crate::uem::{UemConfig, UemModel};

        let synth =
            synth_generate(&SynthConfig { n_users: 4, ..SynthConfig::default() }).unwrap();
        let mut corpus: Vec<String> = vec![INSTRUCTION.to_string()];
        for user in &synth.users {
            corpus.push(build_preference_labels(user).target_text);
            for item in &user.items {
                corpus.push(render_item_text(item));
            }
        }
        let vocab = Vocab::build(corpus.iter().map(String::as_str), 256);
        let embed_cfg = EmbedderConfig { s: 8, buckets: 64, seed: 5 };
        let uem_cfg = UemConfig {
            layers: 1,
            heads: 2,
            d_model: 8,
            d_mlp: 16,
            s: 8,
            e: 16,
            max_p: 8,
            use_positions: true,
        };
        let lm_cfg = LmConfig {
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            e: 16,
            d_mlp: 32,
            k: 2,
            max_input: 32,
            max_output: 40,
            max_history_rows: 8,
        };
        let examples =
            prepare_embedding_examples(&synth.users, 4, &embed_cfg, &vocab, &lm_cfg).unwrap();

        let build = || {
            let mut ps = ParamSet::new();
            let mut rng = RngState::from_seed(11);
            let uem = UemModel::init(&mut ps, &mut rng, &uem_cfg).unwrap();
            let lm = LmModel::init(&mut ps, &mut rng, &lm_cfg, vocab.len()).unwrap();
            Trainer::new(ps, Some(uem), lm, AdamConfig::default(), 2, 17)
        };

        // Reference run: 3 warm-up steps, snapshot, then a long tail. The
        // resumed curve must match bit for bit over at least 100 steps.
        let mut a = build();
        for _ in 0..3 {
            a.train_step(&examples).unwrap();
        }
        let snap = Checkpoint::from_trainer(&a, "[run]\n".into());
        let path = tmp("resume");
        save_checkpoint(&path, &snap).unwrap();
        let tail: Vec<u64> =
            (0..120).map(|_| a.train_step(&examples).unwrap().loss.to_bits()).collect();

        // Resume from the file into a freshly initialized trainer.
        let loaded = load_checkpoint(&path).unwrap();
        let mut b = build();
        loaded.apply_params(&mut b.params).unwrap();
        b.adam = loaded.adam_state();
        b.rng = RngState::from_state_words(loaded.rng_words);
        b.step = loaded.step;
        let resumed: Vec<u64> =
            (0..120).map(|_| b.train_step(&examples).unwrap().loss.to_bits()).collect();

        assert_eq!(tail, resumed, "resumed loss curve diverged from the original");
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn config_text_survives_verbatim() {
        let mut ckpt = sample();
        ckpt.config_toml = "# exact\n[run]\nname = \"x\"\n\n".into();
        let p = tmp("cfg");
        save_checkpoint(&p, &ckpt).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap().config_toml, ckpt.config_toml);
        std::fs::remove_file(&p).unwrap();
    }
}
