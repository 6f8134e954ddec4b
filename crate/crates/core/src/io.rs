//! File ingestion and emission: WAV audio, embedding sequences (CSV or the
//! EMB1 binary layout), JSON-lines corpus manifests.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{preprocess, EmbeddingSequence, Label, Segment, Waveform, TARGET_SAMPLE_RATE};

const EMB_MAGIC: &[u8; 4] = b"EMB1";

pub(crate) fn read_u32_le<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32_le<R: Read>(r: &mut R, count: usize) -> std::io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Read a mono WAV file (16-bit PCM or 32-bit float).
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Malformed {
            kind: "wav",
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let unsupported = |reason: String| Error::UnsupportedAudio {
        path: path.to_path_buf(),
        reason,
    };
    if spec.channels != 1 {
        return Err(unsupported(format!(
            "{} channels; only mono input is accepted",
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(unsupported(format!(
                "{bits}-bit {fmt:?} samples; expected 16-bit PCM or 32-bit float"
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Write a mono 32-bit float WAV.
pub fn write_wav_f32(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in w.samples() {
        writer.write_sample(s as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Write a mono 16-bit PCM WAV; samples are clamped to [-1, 1].
pub fn write_wav_i16(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in w.samples() {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

/// EMB1 layout: magic, u32 T, u32 D, u32 frame_rate_hz (16-byte header),
/// then T×D little-endian f32 row-major.
pub fn write_embedding_bin<W: Write>(mut w: W, e: &EmbeddingSequence) -> std::io::Result<()> {
    w.write_all(EMB_MAGIC)?;
    w.write_all(&(e.len() as u32).to_le_bytes())?;
    w.write_all(&(e.dim() as u32).to_le_bytes())?;
    w.write_all(&e.frame_rate().to_le_bytes())?;
    for v in e.frames().iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_embedding_bin<R: Read>(mut r: R, path: &Path) -> Result<EmbeddingSequence> {
    let bad = |reason: &str| Error::Malformed {
        kind: "embedding",
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != EMB_MAGIC {
        return Err(bad("bad magic, expected EMB1"));
    }
    let t = read_u32_le(&mut r).map_err(|_| bad("truncated header"))? as usize;
    let d = read_u32_le(&mut r).map_err(|_| bad("truncated header"))? as usize;
    let rate = read_u32_le(&mut r).map_err(|_| bad("truncated header"))?;
    if t == 0 || d == 0 {
        return Err(bad("zero-sized embedding"));
    }
    let values = read_f32_le(&mut r, t * d).map_err(|_| bad("payload shorter than T×D"))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad("trailing bytes after payload"));
    }
    let frames = Array2::from_shape_vec((t, d), values).expect("length checked");
    EmbeddingSequence::new(frames, rate).map_err(|e| bad(&e.to_string()))
}

/// CSV embeddings: one frame per row, D numeric columns, no header.
pub fn read_embedding_csv<R: Read>(
    r: R,
    frame_rate: u32,
    path: &Path,
) -> Result<EmbeddingSequence> {
    let bad = |reason: String| Error::Malformed {
        kind: "embedding",
        path: path.to_path_buf(),
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut values = Vec::new();
    let mut dims = None;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if dims.is_some_and(|d| d != rec.len()) {
            return Err(bad(format!("row {} has {} columns", rows + 1, rec.len())));
        }
        dims = Some(rec.len());
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("row {}: `{field}` is not a number", rows + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    let d = dims.ok_or_else(|| bad("no rows".into()))?;
    let frames = Array2::from_shape_vec((rows, d), values).expect("row lengths checked");
    EmbeddingSequence::new(frames, frame_rate).map_err(|e| bad(e.to_string()))
}

pub fn write_embedding_csv<W: Write>(w: W, e: &EmbeddingSequence) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in e.frames().rows() {
        wtr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::io("embedding csv", e))?;
    Ok(())
}

/// Load an embedding by extension: `.csv` as CSV (at `csv_frame_rate`),
/// anything else as EMB1 binary.
pub fn load_embedding(path: &Path, csv_frame_rate: u32) -> Result<EmbeddingSequence> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => {
            read_embedding_csv(reader, csv_frame_rate, path)
        }
        _ => read_embedding_bin(reader, path),
    }
}

pub fn save_embedding_bin(path: &Path, e: &EmbeddingSequence) -> Result<()> {
    let mut buf = Vec::new();
    write_embedding_bin(&mut buf, e).map_err(|err| Error::io(path, err))?;
    write_atomic(path, &buf)
}

/// One corpus manifest record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub source_id: String,
    pub label: Label,
    pub wav_path: PathBuf,
    pub emb_path: PathBuf,
}

/// Parse a JSON-lines manifest. Relative paths resolve against the
/// manifest's directory. Blank lines are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| Error::Malformed {
                kind: "manifest",
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", lineno + 1),
            })?;
        if rec.wav_path.is_relative() {
            rec.wav_path = base.join(&rec.wav_path);
        }
        if rec.emb_path.is_relative() {
            rec.emb_path = base.join(&rec.emb_path);
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(mut w: W, records: &[ManifestRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("manifest", e))?;
    }
    Ok(())
}

/// Load one manifest record as a segment: the WAV is preprocessed and its
/// first 3-second window kept.
pub fn load_segment(rec: &ManifestRecord, csv_frame_rate: u32) -> Result<Segment> {
    let raw = read_wav(&rec.wav_path)?;
    let window = preprocess(&raw, TARGET_SAMPLE_RATE)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Malformed {
            kind: "audio",
            path: rec.wav_path.clone(),
            reason: format!(
                "{:.3} s is shorter than one 3-second window",
                raw.duration_secs()
            ),
        })?;
    let embedding = load_embedding(&rec.emb_path, csv_frame_rate)?;
    Ok(Segment::new(
        rec.source_id.clone(),
        rec.label,
        window,
        embedding,
    ))
}

/// Write a corpus to `dir` as `<source_id>.wav` (32-bit float),
/// `<source_id>.emb` and `manifest.jsonl` with relative paths.
pub fn write_corpus(dir: &Path, segments: &[Segment]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(segments.len());
    for seg in segments {
        let wav = PathBuf::from(format!("{}.wav", seg.source_id()));
        let emb = PathBuf::from(format!("{}.emb", seg.source_id()));
        write_wav_f32(&dir.join(&wav), seg.waveform())?;
        save_embedding_bin(&dir.join(&emb), seg.embedding())?;
        records.push(ManifestRecord {
            source_id: seg.source_id().to_string(),
            label: seg.label(),
            wav_path: wav,
            emb_path: emb,
        });
    }
    let manifest = dir.join("manifest.jsonl");
    let mut buf = Vec::new();
    write_manifest(&mut buf, &records)?;
    write_atomic(&manifest, &buf)?;
    Ok(manifest)
}
