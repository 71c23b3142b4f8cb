//! Comma-separated formats: sample fixtures, alignment spans and frame dumps.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::{FrameMatrix, PhonemeSample, PhonemeSpan};
use crate::error::{Error, Result};

const SAMPLE_KEYS: [&str; 4] = ["speaker_id", "phoneme", "layer", "sample_index"];
const SPAN_KEYS: [&str; 4] = ["utterance_id", "phoneme", "start_frame", "end_frame"];
const FRAME_KEYS: [&str; 4] = ["utterance_id", "speaker_id", "layer", "frame"];

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn check_header(path: &Path, header: &csv::StringRecord, keys: &[&str]) -> Result<usize> {
    let got: Vec<&str> = header.iter().collect();
    if got.len() < keys.len() || got[..keys.len()] != *keys {
        return Err(Error::parse(path, format!("expected header starting with {}", keys.join(","))));
    }
    for (i, name) in got[keys.len()..].iter().enumerate() {
        if *name != format!("v{i}") {
            return Err(Error::parse(path, format!("vector column {i} should be named v{i}, found {name:?}")));
        }
    }
    Ok(got.len() - keys.len())
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> std::result::Result<T, String> {
    let raw = rec.get(i).ok_or_else(|| format!("missing {name}"))?;
    raw.trim().parse().map_err(|_| format!("bad {name} {raw:?}"))
}

fn vector(rec: &csv::StringRecord, from: usize) -> std::result::Result<Vec<f64>, String> {
    (from..rec.len())
        .map(|i| {
            let v: f64 = field(rec, i, &format!("v{}", i - from))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("non-finite v{}", i - from))
            }
        })
        .collect()
}

fn collect_errors<T>(path: &Path, rows: Vec<std::result::Result<T, String>>) -> Result<Vec<T>> {
    let mut ok = Vec::with_capacity(rows.len());
    let mut bad = Vec::new();
    for r in rows {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => bad.push(e),
        }
    }
    if bad.is_empty() {
        Ok(ok)
    } else {
        Err(Error::parse(path, format!("{} malformed row(s): {}", bad.len(), bad.join("; "))))
    }
}

/// Reads pooled samples from the small-fixture CSV format.
pub fn read_samples_csv(path: impl AsRef<Path>) -> Result<Vec<PhonemeSample>> {
    let path = path.as_ref();
    samples_from_reader(path, open(path)?)
}

fn samples_from_reader<R: Read>(path: &Path, input: R) -> Result<Vec<PhonemeSample>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    let header = rdr.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
    let dim = check_header(path, &header, &SAMPLE_KEYS)?;
    let rows = rdr
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            let line = line_of(&rec);
            (|| {
                let v = vector(&rec, SAMPLE_KEYS.len())?;
                if v.len() != dim {
                    return Err(format!("expected {dim} values"));
                }
                Ok(PhonemeSample {
                    speaker_id: field(&rec, 0, "speaker_id")?,
                    phoneme: field(&rec, 1, "phoneme")?,
                    layer: field(&rec, 2, "layer")?,
                    sample_index: field(&rec, 3, "sample_index")?,
                    groups: BTreeMap::new(),
                    vector: v.into_iter().map(|x| x as f32).collect(),
                })
            })()
            .map_err(|e: String| format!("line {line}: {e}"))
        })
        .collect();
    collect_errors(path, rows)
}

pub fn write_samples_csv<W: Write>(out: W, samples: &[PhonemeSample]) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.vector.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = SAMPLE_KEYS.iter().map(|s| s.to_string()).collect();
    header.extend((0..dim).map(|i| format!("v{i}")));
    let wrap = |e: csv::Error| Error::InvalidInput(e.to_string());
    w.write_record(&header).map_err(wrap)?;
    for s in samples {
        if s.vector.len() != dim {
            return Err(Error::DimMismatch { expected: dim, found: s.vector.len() });
        }
        let mut row = vec![s.speaker_id.clone(), s.phoneme.clone(), s.layer.to_string(), s.sample_index.to_string()];
        row.extend(s.vector.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Reads alignment spans. Every malformed row is reported with its line number.
pub fn read_spans_csv(path: impl AsRef<Path>) -> Result<Vec<PhonemeSpan>> {
    let path = path.as_ref();
    spans_from_reader(path, open(path)?)
}

pub(crate) fn spans_from_reader<R: Read>(path: &Path, input: R) -> Result<Vec<PhonemeSpan>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = rdr.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != SPAN_KEYS {
        return Err(Error::parse(path, format!("expected header {}", SPAN_KEYS.join(","))));
    }
    let rows = rdr
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            let line = line_of(&rec);
            (|| {
                if rec.len() != SPAN_KEYS.len() {
                    return Err(format!("expected 4 fields, found {}", rec.len()));
                }
                let span = PhonemeSpan {
                    utterance_id: field(&rec, 0, "utterance_id")?,
                    phoneme: field(&rec, 1, "phoneme")?,
                    start_frame: field(&rec, 2, "start_frame")?,
                    end_frame: field(&rec, 3, "end_frame")?,
                };
                if span.start_frame >= span.end_frame {
                    return Err(format!("start_frame {} not before end_frame {}", span.start_frame, span.end_frame));
                }
                Ok(span)
            })()
            .map_err(|e: String| format!("line {line}: {e}"))
        })
        .collect();
    collect_errors(path, rows)
}

pub fn write_spans_csv<W: Write>(out: W, spans: &[PhonemeSpan]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::InvalidInput(e.to_string());
    w.write_record(SPAN_KEYS).map_err(wrap)?;
    for s in spans {
        w.write_record([
            s.utterance_id.as_str(),
            s.phoneme.as_str(),
            &s.start_frame.to_string(),
            &s.end_frame.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// All layers of one utterance as read from a frame dump.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFrames {
    pub speaker_id: String,
    pub layers: BTreeMap<u32, FrameMatrix>,
}

/// Reads a frame dump (`utterance_id,speaker_id,layer,frame,v0..`). Frames of
/// each (utterance, layer) must be numbered 0..T without gaps.
pub fn read_frames_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, UtteranceFrames>> {
    let path = path.as_ref();
    frames_from_reader(path, open(path)?)
}

pub(crate) fn frames_from_reader<R: Read>(path: &Path, input: R) -> Result<BTreeMap<String, UtteranceFrames>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    let header = rdr.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
    let dim = check_header(path, &header, &FRAME_KEYS)?;
    if dim == 0 {
        return Err(Error::parse(path, "frame dump has no vector columns"));
    }
    type Row = (String, String, u32, usize, Vec<f64>);
    let rows: Vec<std::result::Result<Row, String>> = rdr
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            let line = line_of(&rec);
            (|| {
                Ok((
                    field(&rec, 0, "utterance_id")?,
                    field(&rec, 1, "speaker_id")?,
                    field(&rec, 2, "layer")?,
                    field(&rec, 3, "frame")?,
                    vector(&rec, FRAME_KEYS.len())?,
                ))
            })()
            .map_err(|e: String| format!("line {line}: {e}"))
        })
        .collect();
    let rows = collect_errors(path, rows)?;

    let mut grouped: BTreeMap<(String, u32), (String, BTreeMap<usize, Vec<f64>>)> = BTreeMap::new();
    for (utt, spk, layer, frame, v) in rows {
        let entry = grouped.entry((utt.clone(), layer)).or_insert_with(|| (spk.clone(), BTreeMap::new()));
        if entry.0 != spk {
            return Err(Error::parse(path, format!("utterance {utt} assigned to speakers {} and {spk}", entry.0)));
        }
        if entry.1.insert(frame, v).is_some() {
            return Err(Error::parse(path, format!("duplicate frame {frame} for {utt} layer {layer}")));
        }
    }
    let mut out: BTreeMap<String, UtteranceFrames> = BTreeMap::new();
    for ((utt, layer), (spk, frames)) in grouped {
        let t = frames.len();
        if frames.keys().next_back() != Some(&(t - 1)) {
            return Err(Error::parse(path, format!("frames of {utt} layer {layer} are not numbered 0..{t}")));
        }
        let rows: Vec<&Vec<f64>> = frames.values().collect();
        let m = DMatrix::from_fn(t, dim, |r, c| rows[r][c]);
        let fm = FrameMatrix::new(utt.clone(), layer, m)?;
        let entry = out
            .entry(utt.clone())
            .or_insert_with(|| UtteranceFrames { speaker_id: spk.clone(), layers: BTreeMap::new() });
        if entry.speaker_id != spk {
            return Err(Error::parse(
                path,
                format!("utterance {utt} assigned to speakers {} and {spk}", entry.speaker_id),
            ));
        }
        entry.layers.insert(layer, fm);
    }
    Ok(out)
}

/// Writes a frame dump in the format [`read_frames_csv`] accepts.
pub fn write_frames_csv<W: Write>(out: W, utterances: &BTreeMap<String, UtteranceFrames>) -> Result<()> {
    let dim = utterances.values().flat_map(|u| u.layers.values()).map(FrameMatrix::dim).next().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::InvalidInput(e.to_string());
    let mut header: Vec<String> = FRAME_KEYS.iter().map(|s| s.to_string()).collect();
    header.extend((0..dim).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(wrap)?;
    for (utt, u) in utterances {
        for (layer, fm) in &u.layers {
            if fm.dim() != dim {
                return Err(Error::DimMismatch { expected: dim, found: fm.dim() });
            }
            for (t, row) in fm.frames.row_iter().enumerate() {
                let mut rec = vec![utt.clone(), u.speaker_id.clone(), layer.to_string(), t.to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec).map_err(wrap)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_report_line_numbers() {
        let text = "utterance_id,phoneme,start_frame,end_frame\nu1,AA,0,3\nu1,B,5,2\nu2,S,x,4\nu3,T,1,2\n";
        let err = spans_from_reader(Path::new("spans.csv"), text.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("line 4"), "{msg}");
        assert!(!msg.contains("line 2"), "{msg}");
        assert!(!msg.contains("line 5"), "{msg}");
    }

    #[test]
    fn spans_round_trip() {
        let spans = vec![
            PhonemeSpan { utterance_id: "u1".into(), phoneme: "AA".into(), start_frame: 5, end_frame: 20 },
            PhonemeSpan { utterance_id: "u2".into(), phoneme: "IY".into(), start_frame: 0, end_frame: 1 },
        ];
        let mut buf = Vec::new();
        write_spans_csv(&mut buf, &spans).unwrap();
        assert_eq!(spans_from_reader(Path::new("x"), &buf[..]).unwrap(), spans);
    }

    #[test]
    fn empty_span_file_is_empty() {
        let spans =
            spans_from_reader(Path::new("x"), "utterance_id,phoneme,start_frame,end_frame\n".as_bytes()).unwrap();
        assert!(spans.is_empty());
    }

    #[test]
    fn samples_fixture_parses() {
        let text = "speaker_id,phoneme,layer,sample_index,v0,v1\ns1,AA,0,0,1.5,-2\ns1,AA,0,1,0.25,3\n";
        let s = samples_from_reader(Path::new("x"), text.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].vector, vec![1.5, -2.0]);
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &s).unwrap();
        assert_eq!(samples_from_reader(Path::new("x"), &buf[..]).unwrap(), s);
    }

    #[test]
    fn frames_need_contiguous_indices() {
        let text = "utterance_id,speaker_id,layer,frame,v0\nu1,s1,0,0,1\nu1,s1,0,2,1\n";
        assert!(frames_from_reader(Path::new("x"), text.as_bytes()).is_err());
        let ok = "utterance_id,speaker_id,layer,frame,v0\nu1,s1,0,1,2\nu1,s1,0,0,1\nu1,s1,1,0,5\n";
        let f = frames_from_reader(Path::new("x"), ok.as_bytes()).unwrap();
        assert_eq!(f["u1"].layers[&0].frames.as_slice(), &[1.0, 2.0]);
        assert_eq!(f["u1"].layers[&1].n_frames(), 1);
    }
}
