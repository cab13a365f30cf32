//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `IFCK`, version u32, section count u32, then
//! per section: tag (4 ASCII bytes), payload length u64, payload, CRC-32 of
//! tag + length + payload. See `docs/formats.md`.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::features::{ByteReader, FeatureFile, FLAG_MEMORY_BANK};
use crate::diffcore::{LinearClassifier, Parameter, Parameterized, ProjectionHead};
use crate::error::{Error, Result};
use crate::hierarchy::{AnchorSet, NewModel, Taxonomy};
use crate::linalg::Matrix;
use crate::memory_bank::MemoryBank;
use crate::model::AttributionModel;
use crate::protocol::{Experiment, MetricRecord, ProtocolKind, ProtocolState, Task, TaskStream, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const SECTIONS: [&[u8; 4]; 8] = [b"CONF", b"META", b"TAXO", b"STRM", b"PARM", b"BANK", b"RNGS", b"HIST"];

#[derive(Default)]
struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn matrix(&mut self, m: &Matrix) {
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        for &v in m.as_slice() {
            self.f64(v);
        }
    }
}

impl<'a> ByteReader<'a> {
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn usize32(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    /// A count whose elements occupy at least `min_size` bytes each.
    fn count(&mut self, min_size: usize) -> Result<usize> {
        let at = self.offset();
        let n = self.u32()? as usize;
        if n.saturating_mul(min_size.max(1)) > self.remaining() {
            return Err(Error::format(at as u64, format!("count {n} exceeds remaining bytes")));
        }
        Ok(n)
    }

    fn string(&mut self) -> Result<String> {
        let at = self.offset();
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(at as u64, "string is not UTF-8"))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let at = self.offset() as u64;
        let (r, c) = (self.u64()?, self.u64()?);
        let bytes = r
            .checked_mul(c)
            .and_then(|n| n.checked_mul(8))
            .filter(|&b| b <= self.remaining() as u64)
            .ok_or_else(|| Error::format(at, format!("matrix {r}x{c} exceeds remaining bytes")))?;
        let data = self
            .take(bytes as usize)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Matrix::from_vec(r as usize, c as usize, data)
    }

    fn finish(&self, what: &str) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(
                self.offset() as u64,
                format!("{} trailing bytes in {what}", self.remaining()),
            ));
        }
        Ok(())
    }
}

fn section_crc(tag: &[u8], payload: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(tag);
    h.update(&(payload.len() as u64).to_le_bytes());
    h.update(payload);
    h.finalize()
}

/// Serializes the full experiment: stream, state, optimizer moments and rng.
pub fn save_checkpoint(exp: &Experiment) -> Vec<u8> {
    let st = &exp.state;
    let mut sections: Vec<(&[u8; 4], Vec<u8>)> = Vec::new();

    sections.push((b"CONF", st.config.to_toml().into_bytes()));

    let mut w = ByteWriter::default();
    w.u8(match exp.kind {
        ProtocolKind::Ep1 => 1,
        ProtocolKind::Ep2 => 2,
    });
    w.f64(st.tau);
    w.u32(st.input_dim());
    sections.push((b"META", w.0));

    let mut w = ByteWriter::default();
    w.u32(st.taxonomy.num_classes());
    for (c, m) in st.taxonomy.models().iter().enumerate() {
        w.str(&m.name);
        w.str(&st.taxonomy.families()[m.family]);
        w.u64(m.release_date.num_days_from_ce() as i64 as u64);
        w.u8(u8::from(st.taxonomy.real_class() == Some(c)));
        w.u32(st.class_source[c]);
    }
    sections.push((b"TAXO", w.0));

    let mut w = ByteWriter::default();
    w.u32(exp.stream.tasks.len());
    for t in &exp.stream.tasks {
        w.u32(t.index);
        w.u32(t.classes.len());
        t.classes.iter().for_each(|&c| w.u32(c));
    }
    w.u32(exp.stream.holdout.len());
    exp.stream.holdout.iter().for_each(|&c| w.u32(c));
    sections.push((b"STRM", w.0));

    let mut w = ByteWriter::default();
    let params = st.model.params();
    w.u32(params.len());
    for p in params {
        w.str(p.name());
        w.u64(p.step_count());
        w.matrix(p.values());
        w.matrix(p.adam_m());
        w.matrix(p.adam_v());
    }
    sections.push((b"PARM", w.0));

    let mut w = ByteWriter::default();
    match &st.bank {
        None => w.u8(0),
        Some(bank) => {
            w.u8(1);
            w.u64(bank.budget() as u64);
            w.u64(bank.feature_dim() as u64);
            w.u32(bank.num_classes());
            for c in bank.classes() {
                w.u32(c);
                w.matrix(bank.entries(c).expect("listed class"));
            }
        }
    }
    sections.push((b"BANK", w.0));

    let mut w = ByteWriter::default();
    w.0.extend_from_slice(&st.rng.get_seed());
    w.u64(st.rng.get_stream());
    w.0.extend_from_slice(&st.rng.get_word_pos().to_le_bytes());
    sections.push((b"RNGS", w.0));

    let mut w = ByteWriter::default();
    w.u32(st.history.len());
    for r in &st.history {
        w.u32(r.task_index);
        w.u32(r.num_classes);
        w.f64(r.tau);
        w.f64(r.avg_acc);
        w.f64(r.auth_acc);
        match r.unseen_acc {
            None => w.u8(0),
            Some(u) => {
                w.u8(1);
                w.f64(u);
            }
        }
        w.u32(r.per_class_acc.len());
        for (k, v) in &r.per_class_acc {
            w.str(k);
            w.f64(*v);
        }
    }
    sections.push((b"HIST", w.0));

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (tag, payload) in sections {
        out.extend_from_slice(tag);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&section_crc(tag, &payload).to_le_bytes());
    }
    out
}

/// Splits the container into verified sections keyed by tag, with each
/// payload's absolute offset.
fn read_sections(bytes: &[u8]) -> Result<BTreeMap<[u8; 4], (usize, &[u8])>> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected IFCK"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let n = r.u32()? as usize;
    if n != SECTIONS.len() {
        return Err(Error::format(8, format!("expected {} sections, found {n}", SECTIONS.len())));
    }
    let mut out = BTreeMap::new();
    for _ in 0..n {
        let at = r.offset() as u64;
        let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
        let name = String::from_utf8_lossy(&tag).into_owned();
        if !SECTIONS.contains(&&tag) {
            return Err(Error::format(at, format!("unknown section `{name}`")));
        }
        let len = r.u64()?;
        if len > r.remaining() as u64 {
            return Err(Error::format(at + 4, format!("section `{name}` length {len} exceeds file")));
        }
        let start = r.offset();
        let payload = r.take(len as usize)?;
        let crc = r.u32()?;
        if crc != section_crc(&tag, payload) {
            return Err(Error::Checksum { section: name });
        }
        if out.insert(tag, (start, payload)).is_some() {
            return Err(Error::format(at, format!("duplicate section `{name}`")));
        }
    }
    if r.remaining() != 0 {
        return Err(Error::format(r.offset() as u64, "trailing bytes after last section"));
    }
    Ok(out)
}

fn inconsistent(msg: impl Into<String>) -> Error {
    Error::State(format!("inconsistent checkpoint: {}", msg.into()))
}

/// Inverse of [`save_checkpoint`]; every malformed input yields an error.
pub fn load_checkpoint(bytes: &[u8]) -> Result<Experiment> {
    let sections = read_sections(bytes)?;
    // error offsets are absolute within the file
    let reader = |tag: &[u8; 4]| -> (usize, ByteReader<'_>) {
        let (start, payload) = sections[tag];
        (start, ByteReader::new(payload))
    };
    let rebase = |start: usize, e: Error| match e {
        Error::Format { offset, msg } => Error::Format {
            offset: offset + start as u64,
            msg,
        },
        e => e,
    };

    let (_, conf) = sections[b"CONF"];
    let text = std::str::from_utf8(conf).map_err(|_| inconsistent("config is not UTF-8"))?;
    let config = TrainConfig::parse(text)?;

    let (start, mut r) = reader(b"META");
    let (kind, tau, input_dim) = (|| -> Result<_> {
        let kind = match r.u8()? {
            1 => ProtocolKind::Ep1,
            2 => ProtocolKind::Ep2,
            k => return Err(Error::format(0, format!("unknown protocol kind {k}"))),
        };
        let out = (kind, r.f64()?, r.usize32()?);
        r.finish("META")?;
        Ok(out)
    })()
    .map_err(|e| rebase(start, e))?;

    let (start, mut r) = reader(b"TAXO");
    let (taxonomy, class_source) = (|| -> Result<_> {
        let n = r.count(21)?;
        let mut models = Vec::with_capacity(n);
        let mut sources = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let family = r.string()?;
            let at = r.offset() as u64;
            let date = i32::try_from(r.u64()? as i64)
                .ok()
                .and_then(NaiveDate::from_num_days_from_ce_opt)
                .ok_or_else(|| Error::format(at, "release date out of range"))?;
            let is_real = r.u8()? == 1;
            sources.push(r.usize32()?);
            models.push(NewModel {
                name,
                family,
                release_date: date,
                is_real,
            });
        }
        r.finish("TAXO")?;
        let mut tax = Taxonomy::new();
        tax.register_classes(&models)?;
        Ok((tax, sources))
    })()
    .map_err(|e| rebase(start, e))?;

    let (start, mut r) = reader(b"STRM");
    let stream = (|| -> Result<_> {
        let n = r.count(8)?;
        let mut tasks = Vec::with_capacity(n);
        for _ in 0..n {
            let index = r.usize32()?;
            let k = r.count(4)?;
            let classes = (0..k).map(|_| r.usize32()).collect::<Result<_>>()?;
            tasks.push(Task { index, classes });
        }
        let k = r.count(4)?;
        let holdout = (0..k).map(|_| r.usize32()).collect::<Result<_>>()?;
        r.finish("STRM")?;
        Ok(TaskStream { tasks, holdout })
    })()
    .map_err(|e| rebase(start, e))?;

    let (start, mut r) = reader(b"PARM");
    let mut params: BTreeMap<String, Parameter> = (|| -> Result<_> {
        let n = r.count(16)?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let name = r.string()?;
            let step = r.u64()?;
            let (v, m, s) = (r.matrix()?, r.matrix()?, r.matrix()?);
            let p = Parameter::from_parts(name.clone(), v, m, s, step)?;
            if out.insert(name.clone(), p).is_some() {
                return Err(inconsistent(format!("parameter `{name}` stored twice")));
            }
        }
        r.finish("PARM")?;
        Ok(out)
    })()
    .map_err(|e| rebase(start, e))?;
    let mut take = |name: &str| params.remove(name).ok_or_else(|| inconsistent(format!("missing `{name}`")));
    let mut layers = Vec::new();
    while let Ok(w) = take(&format!("head.{}.weight", layers.len())) {
        let b = take(&format!("head.{}.bias", layers.len()))?;
        layers.push((w, b));
    }
    let head = ProjectionHead::from_params(layers)?;
    let classifier = LinearClassifier::from_params(take("classifier.weight")?, take("classifier.bias")?)?;
    let anchors = AnchorSet::from_params(take("anchors.fine")?, take("anchors.coarse")?);
    if let Some(extra) = params.keys().next() {
        return Err(inconsistent(format!("unexpected parameter `{extra}`")));
    }
    let model = AttributionModel {
        head,
        classifier,
        anchors,
    };

    let (start, mut r) = reader(b"BANK");
    let bank = (|| -> Result<_> {
        let bank = match r.u8()? {
            0 => None,
            1 => {
                let budget = r.u64()? as usize;
                let dim = r.u64()? as usize;
                let mut bank = MemoryBank::new(budget, dim)?;
                let n = r.count(20)?;
                for _ in 0..n {
                    let c = r.usize32()?;
                    bank.insert_raw(c, r.matrix()?)?;
                }
                Some(bank)
            }
            f => return Err(Error::format(0, format!("bad bank flag {f}"))),
        };
        r.finish("BANK")?;
        Ok(bank)
    })()
    .map_err(|e| rebase(start, e))?;

    let (start, mut r) = reader(b"RNGS");
    let rng = (|| -> Result<_> {
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        r.finish("RNGS")?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    })()
    .map_err(|e| rebase(start, e))?;

    let (start, mut r) = reader(b"HIST");
    let history = (|| -> Result<_> {
        let n = r.count(33)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let task_index = r.usize32()?;
            let num_classes = r.usize32()?;
            let tau = r.f64()?;
            let avg_acc = r.f64()?;
            let auth_acc = r.f64()?;
            let unseen_acc = match r.u8()? {
                0 => None,
                _ => Some(r.f64()?),
            };
            let k = r.count(12)?;
            let mut per_class_acc = BTreeMap::new();
            for _ in 0..k {
                let name = r.string()?;
                per_class_acc.insert(name, r.f64()?);
            }
            out.push(MetricRecord {
                task_index,
                num_classes,
                tau,
                avg_acc,
                auth_acc,
                unseen_acc,
                per_class_acc,
            });
        }
        r.finish("HIST")?;
        Ok(out)
    })()
    .map_err(|e| rebase(start, e))?;

    let state = ProtocolState {
        config,
        taxonomy,
        model,
        bank,
        tau,
        rng,
        history,
        class_source,
    };
    validate(&state, &stream, input_dim)?;
    Ok(Experiment { kind, stream, state })
}

fn validate(st: &ProtocolState, stream: &TaskStream, input_dim: usize) -> Result<()> {
    let c = st.taxonomy.num_classes();
    let m = &st.model;
    if m.head.input_dim() != input_dim {
        return Err(inconsistent("head input dim"));
    }
    if m.head.output_dim() != m.classifier.latent_dim() || m.anchors.latent_dim() != m.classifier.latent_dim() {
        return Err(inconsistent("latent dims disagree"));
    }
    if m.classifier.num_classes() != c || m.anchors.num_fine() != c {
        return Err(inconsistent("class count disagrees with taxonomy"));
    }
    if m.anchors.num_coarse() != st.taxonomy.num_families() {
        return Err(inconsistent("family count disagrees with taxonomy"));
    }
    if st.class_source.len() != c {
        return Err(inconsistent("class source table"));
    }
    if let Some(bank) = &st.bank {
        if bank.feature_dim() != input_dim || bank.classes().any(|k| k >= c) {
            return Err(inconsistent("memory bank"));
        }
    }
    if st.history.len() > stream.tasks.len() {
        return Err(inconsistent("history longer than stream"));
    }
    let trained: usize = stream.tasks[..st.history.len()].iter().map(|t| t.classes.len()).sum();
    if trained != c {
        return Err(inconsistent("registered classes do not match completed tasks"));
    }
    if !m.params().iter().all(|p| p.values().is_finite()) {
        return Err(Error::Numeric("non-finite parameter in checkpoint".into()));
    }
    Ok(())
}

pub fn write_checkpoint(exp: &Experiment, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, save_checkpoint(exp)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Experiment> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint(&bytes)
}

/// The bank as a feature file flagged as a memory-bank export. Records carry
/// the checkpoint's class and family ids, in herding order per class.
pub fn export_bank(state: &ProtocolState) -> Result<FeatureFile> {
    let bank = state
        .bank
        .as_ref()
        .ok_or_else(|| Error::State("replay is disabled; no memory bank".into()))?;
    let mut file = FeatureFile::new(bank.feature_dim() as u32);
    file.flags |= FLAG_MEMORY_BANK;
    for c in bank.classes() {
        for row in bank.entries(c).expect("listed class").iter_rows() {
            file.push(c as u32, state.taxonomy.family_of(c) as u32, row.iter().map(|&v| v as f32).collect())?;
        }
    }
    Ok(file)
}
