//! Event-stream data model, the line-delimited `mpstream/1` file format, and
//! seeded synthetic generators (stationary, drifting, deletion-interleaved).
//!
//! A stream file is UTF-8 with LF line endings: the first line is the manifest
//! object carrying `"format": "mpstream/1"`, every following line is one event
//! object with exactly the fields `{op, id?, x, y?}`. Files ending in `.gz`
//! are gzip-compressed.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MpError, Result};
use crate::model::{sigmoid, LossKind, WeightVector};
use crate::theory;
use crate::vecops;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventOp {
    Insert,
    Delete,
    Predict,
}

/// One stream record. `t_index` is the zero-based position assigned by the
/// reader; it is not part of the wire format.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub op: EventOp,
    pub id: Option<String>,
    pub x: Vec<f64>,
    pub y: Option<f64>,
    pub t_index: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireEvent {
    op: EventOp,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
}

/// Parse one event line. Unknown fields are rejected; insert/delete must carry
/// a label and predict must not.
pub fn parse_event(line: &str, line_no: usize) -> Result<Event> {
    let wire: WireEvent =
        serde_json::from_str(line).map_err(|e| MpError::MalformedRecord {
            line: line_no,
            msg: e.to_string(),
        })?;
    match wire.op {
        EventOp::Insert | EventOp::Delete => {
            if wire.y.is_none() {
                return Err(MpError::MalformedRecord {
                    line: line_no,
                    msg: format!("{:?} event requires a label", wire.op),
                });
            }
        }
        EventOp::Predict => {
            if wire.y.is_some() {
                return Err(MpError::MalformedRecord {
                    line: line_no,
                    msg: "predict event must not carry a label".into(),
                });
            }
        }
    }
    Ok(Event {
        op: wire.op,
        id: wire.id,
        x: wire.x,
        y: wire.y,
        t_index: 0,
    })
}

fn emit_event(event: &Event) -> Result<String> {
    let wire = WireEvent {
        op: event.op,
        id: event.id.clone(),
        x: event.x.clone(),
        y: event.y,
    };
    Ok(serde_json::to_string(&wire)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeletePattern {
    Uniform,
    Burst,
    AdversarialLatest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeletionScheduleSpec {
    pub m: u64,
    pub pattern: DeletePattern,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub length: u64,
    pub center: Vec<f64>,
}

/// Stream header: dimensionality, loss kind, seed, generator parameters, and
/// (for drift fixtures) the generating comparator path with its path length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub format: String,
    pub d: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub diameter: f64,
    pub noise_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_w: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<SegmentSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparator_path: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path_length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deletion_schedule: Option<DeletionScheduleSpec>,
}

pub const STREAM_FORMAT: &str = "mpstream/1";

impl StreamManifest {
    fn new(d: usize, loss: LossKind, seed: u64, diameter: f64, noise_std: f64) -> Self {
        Self {
            format: STREAM_FORMAT.to_string(),
            d,
            loss,
            seed,
            diameter,
            noise_std,
            hidden_w: None,
            segments: None,
            comparator_path: None,
            path_length: None,
            deletion_schedule: None,
        }
    }
}

pub fn write_stream(path: &Path, manifest: &StreamManifest, events: &[Event]) -> Result<()> {
    let mut buf = String::new();
    buf.push_str(&serde_json::to_string(manifest)?);
    buf.push('\n');
    for event in events {
        buf.push_str(&emit_event(event)?);
        buf.push('\n');
    }
    let file = File::create(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(buf.as_bytes())?;
        enc.finish()?;
    } else {
        let mut file = file;
        file.write_all(buf.as_bytes())?;
    }
    Ok(())
}

pub fn read_stream(path: &Path) -> Result<(StreamManifest, Vec<Event>)> {
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let reader = BufReader::new(reader);
    let mut lines = reader.lines();
    let manifest_line = lines
        .next()
        .ok_or_else(|| MpError::MalformedRecord {
            line: 1,
            msg: "empty stream file".into(),
        })??;
    let manifest: StreamManifest =
        serde_json::from_str(&manifest_line).map_err(|e| MpError::MalformedRecord {
            line: 1,
            msg: format!("manifest: {e}"),
        })?;
    if manifest.format != STREAM_FORMAT {
        return Err(MpError::MalformedRecord {
            line: 1,
            msg: format!("unsupported format {:?}", manifest.format),
        });
    }
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut event = parse_event(&line, i + 2)?;
        event.t_index = events.len() as u64;
        events.push(event);
    }
    Ok((manifest, events))
}

/// Referential-integrity validation: event dimensions match the manifest,
/// insert ids are unique, and every delete names a previously inserted,
/// not-yet-deleted id with an identical payload.
pub fn validate_stream(manifest: &StreamManifest, events: &[Event]) -> Result<()> {
    use std::collections::HashMap;
    let mut live: HashMap<&str, (&[f64], f64)> = HashMap::new();
    for (i, event) in events.iter().enumerate() {
        let line = i + 2;
        if event.x.len() != manifest.d {
            return Err(MpError::StreamValidation {
                line,
                msg: format!(
                    "event dimension {} does not match manifest d = {}",
                    event.x.len(),
                    manifest.d
                ),
            });
        }
        match event.op {
            EventOp::Insert => {
                if let Some(id) = &event.id {
                    if live.insert(id, (&event.x, event.y.unwrap())).is_some() {
                        return Err(MpError::StreamValidation {
                            line,
                            msg: format!("duplicate insert id {id:?}"),
                        });
                    }
                }
            }
            EventOp::Delete => {
                let id = event.id.as_deref().ok_or(MpError::StreamValidation {
                    line,
                    msg: "delete event requires an id".into(),
                })?;
                match live.remove(id) {
                    None => {
                        return Err(MpError::StreamValidation {
                            line,
                            msg: format!("delete references unknown or already-deleted id {id:?}"),
                        })
                    }
                    Some((x, y)) => {
                        if x != event.x.as_slice() || y != event.y.unwrap() {
                            return Err(MpError::StreamValidation {
                                line,
                                msg: format!("delete payload for id {id:?} differs from insert"),
                            });
                        }
                    }
                }
            }
            EventOp::Predict => {}
        }
    }
    Ok(())
}

fn draw_unit_sphere(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = vecops::norm2(&v);
        if norm > 1e-12 {
            return v.iter().map(|a| a / norm).collect();
        }
    }
}

fn draw_label(rng: &mut ChaCha8Rng, loss: LossKind, center: &[f64], x: &[f64], noise_std: f64) -> f64 {
    let score = vecops::dot(center, x);
    match loss {
        LossKind::Squared => {
            let noise: f64 = rng.sample(StandardNormal);
            score + noise_std * noise
        }
        LossKind::Logistic => {
            if rng.gen_bool(sigmoid(score).clamp(0.0, 1.0)) {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// Stationary stream: a hidden center drawn uniformly inside the domain ball
/// (radius `0.8 · D/2` keeps it comfortably interior), features on the unit
/// sphere, labels from the center plus observation noise.
pub fn gen_stationary(
    seed: u64,
    n: u64,
    d: usize,
    noise_std: f64,
    diameter: f64,
    loss: LossKind,
) -> (StreamManifest, Vec<Event>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = draw_center(&mut rng, d, diameter);
    let mut manifest = StreamManifest::new(d, loss, seed, diameter, noise_std);
    manifest.hidden_w = Some(center.clone());
    let mut events = Vec::with_capacity(n as usize);
    for i in 0..n {
        let x = draw_unit_sphere(&mut rng, d);
        let y = draw_label(&mut rng, loss, &center, &x, noise_std);
        events.push(Event {
            op: EventOp::Insert,
            id: Some(format!("s{i}")),
            x,
            y: Some(y),
            t_index: i,
        });
    }
    (manifest, events)
}

fn draw_center(rng: &mut ChaCha8Rng, d: usize, diameter: f64) -> Vec<f64> {
    let dir = draw_unit_sphere(rng, d);
    let r = 0.8 * diameter / 2.0 * rng.gen_range(0.0f64..1.0).powf(1.0 / d as f64);
    dir.iter().map(|v| v * r).collect()
}

/// Piecewise-stationary stream over explicit segment centers. The manifest
/// records the generating path and its length.
pub fn gen_drift(
    seed: u64,
    segments: &[SegmentSpec],
    d: usize,
    noise_std: f64,
    diameter: f64,
    loss: LossKind,
) -> Result<(StreamManifest, Vec<Event>)> {
    if segments.is_empty() {
        return Err(MpError::InvalidParameter("gen_drift needs >= 1 segment".into()));
    }
    for seg in segments {
        if seg.center.len() != d {
            return Err(MpError::DimensionMismatch {
                expected: d,
                got: seg.center.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = StreamManifest::new(d, loss, seed, diameter, noise_std);
    manifest.segments = Some(segments.to_vec());
    let path: Vec<WeightVector> = segments
        .iter()
        .map(|s| WeightVector::new(s.center.clone()))
        .collect();
    manifest.comparator_path = Some(segments.iter().map(|s| s.center.clone()).collect());
    manifest.path_length = Some(theory::path_length(&path)?);
    let mut events = Vec::new();
    let mut i = 0u64;
    for seg in segments {
        for _ in 0..seg.length {
            let x = draw_unit_sphere(&mut rng, d);
            let y = draw_label(&mut rng, loss, &seg.center, &x, noise_std);
            events.push(Event {
                op: EventOp::Insert,
                id: Some(format!("s{i}")),
                x,
                y: Some(y),
                t_index: i,
            });
            i += 1;
        }
    }
    Ok((manifest, events))
}

/// Interleave `m` delete events into an insert-only stream.
///
/// `Uniform` and `AdversarialLatest` place the k-th delete after insert number
/// `min(k·⌈n/(m+1)⌉, n−m+k)`; `Burst` places all deletes consecutively after
/// the stream midpoint. Uniform and burst target a seeded-random live insert;
/// adversarial always targets the most recent live insert.
pub fn gen_delete_schedule(
    manifest: &StreamManifest,
    events: &[Event],
    m: u64,
    pattern: DeletePattern,
) -> Result<(StreamManifest, Vec<Event>)> {
    let inserts: Vec<&Event> = events.iter().filter(|e| e.op == EventOp::Insert).collect();
    if inserts.len() != events.len() {
        return Err(MpError::InvalidParameter(
            "gen_delete_schedule expects an insert-only stream".into(),
        ));
    }
    let n = inserts.len() as u64;
    if m > n {
        return Err(MpError::InvalidParameter(format!(
            "cannot schedule {m} deletions into {n} inserts"
        )));
    }
    if m == 0 {
        return Ok((manifest.clone(), events.to_vec()));
    }
    // positions[k] = number of inserts that precede delete k
    let positions: Vec<u64> = match pattern {
        DeletePattern::Uniform | DeletePattern::AdversarialLatest => {
            let gap = n.div_ceil(m + 1).max(1);
            (1..=m).map(|k| (k * gap).min(n - m + k)).collect()
        }
        DeletePattern::Burst => {
            let start = (n / 2).max(m);
            vec![start; m as usize]
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(manifest.seed ^ 0x6465_6c65_7465);
    let mut out = Vec::with_capacity(events.len() + m as usize);
    let mut live: Vec<usize> = Vec::new();
    let mut delete_iter = positions.iter().peekable();
    let mut emitted = 0u64;
    for (idx, event) in events.iter().enumerate() {
        out.push((*event).clone());
        live.push(idx);
        emitted += 1;
        while delete_iter.peek() == Some(&&emitted) {
            delete_iter.next();
            let pick = match pattern {
                DeletePattern::AdversarialLatest => live.len() - 1,
                _ => rng.gen_range(0..live.len()),
            };
            let target = &events[live.swap_remove(pick)];
            out.push(Event {
                op: EventOp::Delete,
                id: target.id.clone(),
                x: target.x.clone(),
                y: target.y,
                t_index: 0,
            });
        }
    }
    for (i, event) in out.iter_mut().enumerate() {
        event.t_index = i as u64;
    }
    let mut manifest = manifest.clone();
    manifest.deletion_schedule = Some(DeletionScheduleSpec { m, pattern });
    Ok((manifest, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn parse_happy_paths() {
        let e = parse_event(r#"{"op":"insert","id":"a1","x":[1.0,2.0],"y":0.5}"#, 2).unwrap();
        assert_eq!(e.op, EventOp::Insert);
        assert_eq!(e.id.as_deref(), Some("a1"));
        assert_eq!(e.x, vec![1.0, 2.0]);
        assert_eq!(e.y, Some(0.5));

        let p = parse_event(r#"{"op":"predict","x":[0.0]}"#, 3).unwrap();
        assert_eq!(p.op, EventOp::Predict);
        assert_eq!(p.y, None);
    }

    #[test]
    fn parse_rejects_malformed_records() {
        // unknown field
        assert!(matches!(
            parse_event(r#"{"op":"insert","x":[1.0],"y":1.0,"extra":1}"#, 5),
            Err(MpError::MalformedRecord { line: 5, .. })
        ));
        // missing label
        assert!(parse_event(r#"{"op":"insert","x":[1.0]}"#, 6).is_err());
        // predict with label
        assert!(parse_event(r#"{"op":"predict","x":[1.0],"y":1.0}"#, 7).is_err());
        // not json
        assert!(parse_event("nope", 8).is_err());
    }

    #[test]
    fn unknown_delete_id_fails_validation() {
        let (manifest, mut events) = gen_stationary(1, 3, 2, 0.0, 4.0, LossKind::Squared);
        events.push(Event {
            op: EventOp::Delete,
            id: Some("zz".into()),
            x: vec![0.0, 0.0],
            y: Some(1.0),
            t_index: 3,
        });
        assert!(matches!(
            validate_stream(&manifest, &events),
            Err(MpError::StreamValidation { .. })
        ));
    }

    #[test]
    fn generator_determinism_and_roundtrip() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.mps");
        let p2 = dir.path().join("b.mps");
        let (m1, e1) = gen_stationary(42, 50, 3, 0.1, 6.0, LossKind::Squared);
        let (m2, e2) = gen_stationary(42, 50, 3, 0.1, 6.0, LossKind::Squared);
        write_stream(&p1, &m1, &e1).unwrap();
        write_stream(&p2, &m2, &e2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let (m_read, e_read) = read_stream(&p1).unwrap();
        assert_eq!(m_read, m1);
        assert_eq!(e_read, e1);

        // re-emit byte-for-byte
        let p3 = dir.path().join("c.mps");
        write_stream(&p3, &m_read, &e_read).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p3).unwrap());
    }

    #[test]
    fn gzip_roundtrip_by_extension() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.mps.gz");
        let (m, e) = gen_stationary(7, 20, 2, 0.05, 4.0, LossKind::Logistic);
        write_stream(&p, &m, &e).unwrap();
        let (m_read, e_read) = read_stream(&p).unwrap();
        assert_eq!(m_read, m);
        assert_eq!(e_read, e);
    }

    #[test]
    fn empty_stream_is_valid() {
        let (manifest, events) = gen_stationary(5, 0, 2, 0.0, 4.0, LossKind::Squared);
        assert!(events.is_empty());
        assert!(validate_stream(&manifest, &events).is_ok());
    }

    #[test]
    fn drift_manifest_path_length() {
        let segments = vec![
            SegmentSpec {
                length: 5,
                center: vec![0.0, 0.0],
            },
            SegmentSpec {
                length: 5,
                center: vec![3.0, 4.0],
            },
        ];
        let (m, e) = gen_drift(9, &segments, 2, 0.0, 20.0, LossKind::Squared).unwrap();
        assert_eq!(m.path_length, Some(5.0));
        assert_eq!(e.len(), 10);

        let single = vec![SegmentSpec {
            length: 4,
            center: vec![1.0, 1.0],
        }];
        let (m1, _) = gen_drift(9, &single, 2, 0.0, 20.0, LossKind::Squared).unwrap();
        assert_eq!(m1.path_length, Some(0.0));

        // consistency with the calculator on the expanded per-step path
        let expanded: Vec<WeightVector> = segments
            .iter()
            .flat_map(|s| std::iter::repeat_n(WeightVector::new(s.center.clone()), s.length as usize))
            .collect();
        assert_eq!(
            theory::path_length(&expanded).unwrap(),
            m.path_length.unwrap()
        );
    }

    #[test]
    fn delete_schedule_uniform_positions() {
        let (manifest, events) = gen_stationary(3, 10, 2, 0.0, 4.0, LossKind::Squared);
        let (m2, with_deletes) =
            gen_delete_schedule(&manifest, &events, 2, DeletePattern::Uniform).unwrap();
        assert_eq!(with_deletes.len(), 12);
        // gap = ceil(10/3) = 4: deletes land after inserts 4 and 8
        let delete_positions: Vec<usize> = with_deletes
            .iter()
            .enumerate()
            .filter(|(_, e)| e.op == EventOp::Delete)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(delete_positions, vec![4, 9]);
        validate_stream(&m2, &with_deletes).unwrap();

        // m = 0 leaves the stream unchanged
        let (_, unchanged) =
            gen_delete_schedule(&manifest, &events, 0, DeletePattern::Uniform).unwrap();
        assert_eq!(unchanged, events);
    }

    #[test]
    fn delete_schedule_patterns_are_valid() {
        let (manifest, events) = gen_stationary(11, 30, 3, 0.1, 4.0, LossKind::Squared);
        for pattern in [
            DeletePattern::Uniform,
            DeletePattern::Burst,
            DeletePattern::AdversarialLatest,
        ] {
            let (m2, stream) = gen_delete_schedule(&manifest, &events, 7, pattern).unwrap();
            validate_stream(&m2, &stream).unwrap();
            assert_eq!(
                stream.iter().filter(|e| e.op == EventOp::Delete).count(),
                7
            );
        }
        // over-scheduling errors out
        assert!(gen_delete_schedule(&manifest, &events, 31, DeletePattern::Uniform).is_err());
    }

    #[test]
    fn adversarial_latest_targets_most_recent() {
        let (manifest, events) = gen_stationary(2, 6, 2, 0.0, 4.0, LossKind::Squared);
        let (_, stream) =
            gen_delete_schedule(&manifest, &events, 2, DeletePattern::AdversarialLatest).unwrap();
        let mut last_insert_id = None;
        for e in &stream {
            match e.op {
                EventOp::Insert => last_insert_id = e.id.clone(),
                EventOp::Delete => assert_eq!(e.id, last_insert_id),
                EventOp::Predict => {}
            }
        }
    }

    #[test]
    fn noise_free_stationary_labels_are_exact() {
        let (m, e) = gen_stationary(13, 25, 3, 0.0, 6.0, LossKind::Squared);
        let center = m.hidden_w.unwrap();
        for ev in &e {
            let score = vecops::dot(&center, &ev.x);
            assert!((ev.y.unwrap() - score).abs() < 1e-12);
        }
    }
}
