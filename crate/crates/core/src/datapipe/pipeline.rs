use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::container::Clip;
use super::filter::{filter_tier, ClipRecord, FilterConfig, Removal};
use super::preprocess::{preprocess_admit, segment_clips, Admission, VideoAttrs};
use super::scores::{score_clip, FixedTextDetector, FrameScorer, TextBox};
use super::stats::stats_report;
use crate::error::{Error, Result};

/// One line of the input metadata file. Missing geometry, frame rate and
/// duration fall back to the container header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub id: String,
    /// Relative to the metadata file's directory.
    pub path: PathBuf,
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub fps: Option<f64>,
    pub codec_profile: String,
    #[serde(default)]
    pub bpp: Option<f64>,
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default)]
    pub height: Option<usize>,
    #[serde(default)]
    pub duration: Option<f64>,
    /// Boxes reported by an external text detector.
    #[serde(default)]
    pub text_boxes: Vec<TextBox>,
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Corrupt(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierList {
    pub name: String,
    pub kept: Vec<String>,
    pub removed: Vec<Removal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    /// Admitted, segmented and scored clips with the tiers they pass.
    pub records: Vec<ClipRecord>,
    /// Raw videos refused at admission, by first violated rule.
    pub rejected: Vec<Removal>,
    pub tiers: Vec<TierList>,
}

/// Admits, segments, scores and tiers every clip listed in `metadata`.
pub fn run_pipeline(
    metadata: &Path,
    config: &FilterConfig,
    aesthetic: &dyn FrameScorer,
) -> Result<PipelineOutput> {
    config.validate()?;
    let base = metadata.parent().unwrap_or(Path::new("."));
    let metas: Vec<ClipMeta> = read_jsonl(metadata)?;
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for m in &metas {
        let clip = Clip::read(&base.join(&m.path))?;
        let attrs = VideoAttrs {
            duration: Some(m.duration.unwrap_or_else(|| clip.duration())),
            fps: Some(m.fps.unwrap_or(clip.fps as f64)),
            width: Some(m.width.unwrap_or(clip.width)),
            height: Some(m.height.unwrap_or(clip.height)),
            bpp: m.bpp,
            codec_profile: Some(m.codec_profile.clone()),
        };
        if let Admission::Reject(reason) = preprocess_admit(&attrs, &config.preprocess)? {
            rejected.push(Removal {
                id: m.id.clone(),
                reason,
            });
            continue;
        }
        let detector = FixedTextDetector {
            boxes: m.text_boxes.clone(),
        };
        let spans = segment_clips(&clip, &config.preprocess);
        if spans.is_empty() {
            rejected.push(Removal {
                id: m.id.clone(),
                reason: "segment".into(),
            });
            continue;
        }
        for (k, span) in spans.iter().enumerate() {
            let piece = clip.slice(span.start, span.end)?;
            let scores = score_clip(&piece, aesthetic, &detector, &config.scoring);
            records.push(ClipRecord {
                id: format!("{}#{k}", m.id),
                source_id: m.id.clone(),
                start_frame: span.start,
                end_frame: span.end,
                duration: piece.duration(),
                fps: attrs.fps.unwrap_or_default(),
                width: attrs.width.unwrap_or_default(),
                height: attrs.height.unwrap_or_default(),
                bpp: m.bpp.unwrap_or_default(),
                codec_profile: m.codec_profile.clone(),
                caption: m.caption.clone(),
                scores: Some(scores),
                tiers: vec![],
            });
        }
    }
    let mut tiers = Vec::new();
    for (i, t) in config.tiers.iter().enumerate() {
        let res = filter_tier(&records, config, i)?;
        tiers.push(TierList {
            name: t.name.clone(),
            kept: res.kept.iter().map(|r| r.id.clone()).collect(),
            removed: res.removed,
        });
    }
    for r in &mut records {
        r.tiers = tiers
            .iter()
            .filter(|t| t.kept.contains(&r.id))
            .map(|t| t.name.clone())
            .collect();
    }
    Ok(PipelineOutput {
        records,
        rejected,
        tiers,
    })
}

/// Writes `records.jsonl`, `rejected.jsonl`, `report.json` and one
/// `{tier}.txt` id list per tier into `dir`.
pub fn write_outputs(dir: &Path, out: &PipelineOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_jsonl(&dir.join("records.jsonl"), &out.records)?;
    write_jsonl(&dir.join("rejected.jsonl"), &out.rejected)?;
    if !out.records.is_empty() {
        let report = stats_report(&out.records)?;
        fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
    }
    for t in &out.tiers {
        let mut body = t.kept.join("\n");
        if !body.is_empty() {
            body.push('\n');
        }
        fs::write(dir.join(format!("{}.txt", t.name)), body)?;
    }
    Ok(())
}
