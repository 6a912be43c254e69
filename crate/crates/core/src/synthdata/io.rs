//! Corpus layout on disk:
//!
//! ```text
//! <dir>/corpus.txt              key = value corpus description
//! <dir>/<split>/manifest.txt    utt_id \t offset \t src ids \t tgt ids \t class (or -)
//! <dir>/<split>/features.bin    one record per utterance, in manifest order
//! ```
//!
//! A feature record is the magic `ADST`, then little-endian `u32` fields
//! `version`, `utt_id` byte length, the `utt_id` bytes, `L`, `F`, and
//! finally `L * F` little-endian `f32` values.

use std::fs;
use std::path::Path;

use super::{Corpus, CorpusInfo, Utterance};
use crate::error::{Error, Result};

pub const CORPUS_FILE: &str = "corpus.txt";
const MANIFEST: &str = "manifest.txt";
const FEATURES: &str = "features.bin";
const MAGIC: &[u8; 4] = b"ADST";
const RECORD_VERSION: u32 = 1;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

/// Writes one split directory (`manifest.txt` + `features.bin`).
pub fn write_split(utts: &[Utterance], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    let mut blob = Vec::new();
    for u in utts {
        if u.utt_id.contains(['\t', '\n']) || u.utt_id.is_empty() {
            return Err(Error::validation(format!("invalid utterance id {:?}", u.utt_id)));
        }
        if u.features.len() != u.frames * u.feature_dim {
            return Err(Error::dim(format!(
                "utterance {} has {} values for {} x {} features",
                u.utt_id,
                u.features.len(),
                u.frames,
                u.feature_dim
            )));
        }
        let class = u.class_id.map_or("-".to_string(), |c| c.to_string());
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            u.utt_id,
            blob.len(),
            join_ids(&u.src),
            join_ids(&u.tgt),
            class
        ));
        blob.extend_from_slice(MAGIC);
        blob.extend_from_slice(&RECORD_VERSION.to_le_bytes());
        blob.extend_from_slice(&(u.utt_id.len() as u32).to_le_bytes());
        blob.extend_from_slice(u.utt_id.as_bytes());
        blob.extend_from_slice(&(u.frames as u32).to_le_bytes());
        blob.extend_from_slice(&(u.feature_dim as u32).to_le_bytes());
        for v in &u.features {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(&dir.join(FEATURES), &blob)?;
    write_file(&dir.join(MANIFEST), manifest.as_bytes())
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let i = &corpus.info;
    let header = format!(
        "format_version = {RECORD_VERSION}\nvocab_size = {}\nfeature_dim = {}\nmode = {}\nn_classes = {}\n",
        i.vocab_size, i.feature_dim, i.mode, i.n_classes
    );
    for (name, utts) in corpus.splits() {
        write_split(utts, &dir.join(name))?;
    }
    write_file(&dir.join(CORPUS_FILE), header.as_bytes())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.to_path_buf(),
            offset: at as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.fail(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

struct ManifestRow {
    utt_id: String,
    offset: usize,
    src: Vec<usize>,
    tgt: Vec<usize>,
    class_id: Option<usize>,
}

fn parse_manifest(path: &Path, text: &str) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    let mut at = 0u64;
    for line in text.split_inclusive('\n') {
        let start = at;
        at += line.len() as u64;
        let bad = |msg: String| Error::Parse {
            file: path.to_path_buf(),
            offset: start,
            msg,
        };
        let line = line.trim_end_matches('\n');
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated fields, found {}", fields.len())));
        }
        let ids = |s: &str| -> Result<Vec<usize>> {
            s.split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(format!("bad token id `{t}`"))))
                .collect()
        };
        rows.push(ManifestRow {
            utt_id: fields[0].to_string(),
            offset: fields[1]
                .parse()
                .map_err(|_| bad(format!("bad offset `{}`", fields[1])))?,
            src: ids(fields[2])?,
            tgt: ids(fields[3])?,
            class_id: match fields[4] {
                "-" => None,
                c => Some(c.parse().map_err(|_| bad(format!("bad class id `{c}`")))?),
            },
        });
    }
    Ok(rows)
}

/// Reads one split directory; every record must have `feature_dim` columns.
pub fn read_split(dir: &Path, feature_dim: usize) -> Result<Vec<Utterance>> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let rows = parse_manifest(&mpath, &text)?;
    let bpath = dir.join(FEATURES);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let mut r = Reader {
        bytes: &blob,
        pos: 0,
        file: &bpath,
    };
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        if row.offset != r.pos {
            return Err(r.fail(
                r.pos,
                format!("manifest places `{}` at byte {}, record found here", row.utt_id, row.offset),
            ));
        }
        let start = r.pos;
        if r.take(4, "magic")? != MAGIC {
            return Err(r.fail(start, "bad record magic"));
        }
        let version = r.u32("version")?;
        if version != RECORD_VERSION {
            return Err(Error::Version {
                found: version,
                expected: RECORD_VERSION,
            });
        }
        let n = r.u32("id length")? as usize;
        let id_at = r.pos;
        let id = std::str::from_utf8(r.take(n, "utterance id")?)
            .map_err(|_| r.fail(id_at, "utterance id is not UTF-8"))?;
        if id != row.utt_id {
            return Err(r.fail(id_at, format!("record id `{id}` differs from manifest `{}`", row.utt_id)));
        }
        let dims_at = r.pos;
        let frames = r.u32("frame count")? as usize;
        let f = r.u32("feature dim")? as usize;
        if f != feature_dim {
            return Err(r.fail(dims_at, format!("record has {f} features per frame, corpus has {feature_dim}")));
        }
        let data = r.take(frames * f * 4, "feature data")?;
        let features = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push(Utterance {
            utt_id: row.utt_id,
            features,
            frames,
            feature_dim: f,
            src: row.src,
            tgt: row.tgt,
            class_id: row.class_id,
        });
    }
    if r.pos != blob.len() {
        return Err(r.fail(r.pos, format!("{} trailing bytes after the last record", blob.len() - r.pos)));
    }
    Ok(out)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let cpath = dir.join(CORPUS_FILE);
    let text = fs::read_to_string(&cpath).map_err(|e| Error::io(&cpath, e))?;
    let mut fields = std::collections::BTreeMap::new();
    let mut at = 0u64;
    for line in text.split_inclusive('\n') {
        let start = at;
        at += line.len() as u64;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            file: cpath.clone(),
            offset: start,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        fields.insert(k.trim().to_string(), (v.trim().to_string(), start));
    }
    let get = |k: &str| -> Result<&(String, u64)> {
        fields.get(k).ok_or_else(|| Error::Parse {
            file: cpath.clone(),
            offset: 0,
            msg: format!("missing `{k}`"),
        })
    };
    let num = |k: &str| -> Result<usize> {
        let (v, at) = get(k)?;
        v.parse().map_err(|_| Error::Parse {
            file: cpath.clone(),
            offset: *at,
            msg: format!("bad value `{v}` for `{k}`"),
        })
    };
    let version = num("format_version")? as u32;
    if version != RECORD_VERSION {
        return Err(Error::Version {
            found: version,
            expected: RECORD_VERSION,
        });
    }
    let (mode, mode_at) = get("mode")?;
    let info = CorpusInfo {
        vocab_size: num("vocab_size")?,
        feature_dim: num("feature_dim")?,
        mode: mode.parse().map_err(|e: Error| Error::Parse {
            file: cpath.clone(),
            offset: *mode_at,
            msg: e.to_string(),
        })?,
        n_classes: num("n_classes")?,
    };
    let f = info.feature_dim;
    Ok(Corpus {
        train: read_split(&dir.join("train"), f)?,
        dev: read_split(&dir.join("dev"), f)?,
        test: read_split(&dir.join("test"), f)?,
        info,
    })
}
