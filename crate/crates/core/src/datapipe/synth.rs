//! Synthetic corpus with planted defects, for exercising the curation
//! pipeline end to end.
//!
//! Every clip is a periodic texture viewed through a moving window, so
//! camera motion is an exact integer translation. Defects are planted by
//! changing one ingredient at a time: the metadata, the window path, a
//! blur, a posterization or the detector's text boxes.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::container::Clip;
use super::pipeline::{write_jsonl, ClipMeta};
use super::scores::TextBox;
use crate::error::Result;
use crate::rng::{stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub clean: usize,
    pub size: usize,
    pub frames: usize,
    pub fps: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            clean: 38,
            size: 32,
            frames: 40,
            fps: 16.0,
        }
    }
}

/// What a clip is expected to trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub id: String,
    pub defect: String,
    /// Admission rule expected to reject the raw video.
    pub rejected: Option<String>,
    /// First tier (index) that removes the clip, and the reason given.
    pub removed_from: Option<usize>,
    pub reason: Option<String>,
    /// Number of clips segmentation should produce.
    pub segments: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Path2 {
    /// Steady horizontal pan, pixels per frame.
    Pan(i64),
    /// Pan plus a vertical offset of `amp` on every `period`-th frame.
    Shake { speed: i64, amp: i64, period: usize },
}

#[derive(Debug, Clone)]
struct Recipe {
    id: String,
    defect: &'static str,
    frames: usize,
    fps: f32,
    width: usize,
    height: usize,
    path: Path2,
    blur: usize,
    levels: Option<usize>,
    /// Frame index where a second, unrelated shot takes over.
    cut: Option<usize>,
    bpp: f64,
    profile: &'static str,
    boxes: Vec<TextBox>,
    rejected: Option<&'static str>,
    removed_from: Option<usize>,
    reason: Option<&'static str>,
    segments: usize,
}

/// Smoothed periodic noise, stretched to `[24, 232]`.
fn texture(rng: &mut Rng, h: usize, w: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
    let smooth = periodic_box(&raw, h, w, 1);
    let (lo, hi) = smooth
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    smooth
        .iter()
        .map(|v| 24.0 + 208.0 * (v - lo) / (hi - lo))
        .collect()
}

fn periodic_box(img: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return img.to_vec();
    }
    let r = r as i64;
    let (hi, wi) = (h as i64, w as i64);
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut out = vec![0.0; h * w];
    for y in 0..hi {
        for x in 0..wi {
            let mut s = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    s += img[((y + dy).rem_euclid(hi) * wi + (x + dx).rem_euclid(wi)) as usize];
                }
            }
            out[(y * wi + x) as usize] = s / n;
        }
    }
    out
}

fn offset(path: Path2, t: usize) -> (i64, i64) {
    match path {
        Path2::Pan(s) => (0, s * t as i64),
        Path2::Shake { speed, amp, period } => (
            if t % period == period - 1 { amp } else { 0 },
            speed * t as i64,
        ),
    }
}

fn render(r: &Recipe, rng: &mut Rng) -> Clip {
    let (h, w) = (r.height, r.width);
    let mut tex_a = periodic_box(&texture(rng, h, w), h, w, r.blur);
    let mut tex_b = periodic_box(&texture(rng, h, w), h, w, r.blur);
    if r.cut.is_some() {
        // A bright shot followed by a dark one, far enough apart in level
        // that the cut clears the scene threshold.
        let squeeze = |v: &mut f64, lo: f64| *v = lo + (*v - 24.0) * 130.0 / 208.0;
        tex_a.iter_mut().for_each(|v| squeeze(v, 120.0));
        tex_b.iter_mut().for_each(|v| squeeze(v, 5.0));
    }
    let tint: f64 = rng.random_range(40.0..200.0);
    let mut data = Vec::with_capacity(r.frames * 3 * h * w);
    let quant = |v: f64| match r.levels {
        None => v,
        Some(l) => {
            let step = 256.0 / l as f64;
            ((v / step).floor().min(l as f64 - 1.0) + 0.5) * step
        }
    };
    for t in 0..r.frames {
        let tex = if r.cut.is_some_and(|c| t >= c) {
            &tex_b
        } else {
            &tex_a
        };
        let (oy, ox) = offset(r.path, t);
        let plane: Vec<f64> = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as i64, (i % w) as i64);
                quant(
                    tex[((y + oy).rem_euclid(h as i64) * w as i64 + (x + ox).rem_euclid(w as i64))
                        as usize],
                )
            })
            .collect();
        for c in 0..3 {
            for &v in &plane {
                let px = match c {
                    2 => match r.levels {
                        None => tint,
                        Some(_) => v,
                    },
                    _ => v,
                };
                data.push(px.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Clip::new(r.frames, h, w, 3, r.fps, data).expect("synthetic geometry is valid")
}

fn boxed(area: f64, confidence: f64, size: usize) -> Vec<TextBox> {
    let w = size as f64 / 2.0;
    vec![TextBox {
        x: 0.0,
        y: 0.0,
        w,
        h: area * (size * size) as f64 / w,
        confidence,
    }]
}

fn recipes(cfg: &SynthConfig) -> Vec<Recipe> {
    let base = |id: String, defect: &'static str| Recipe {
        id,
        defect,
        frames: cfg.frames,
        fps: cfg.fps,
        width: cfg.size,
        height: cfg.size,
        path: Path2::Pan(1),
        blur: 0,
        levels: None,
        cut: None,
        bpp: 0.1,
        profile: "High",
        boxes: vec![],
        rejected: None,
        removed_from: None,
        reason: None,
        segments: 1,
    };
    let mut out = Vec::new();
    for i in 0..cfg.clean {
        let mut r = base(format!("clean{i:03}"), "clean");
        r.path = Path2::Pan(if i % 2 == 0 { 1 } else { -1 });
        out.push(r);
    }
    let mut add = |name: &str, defect: &'static str, f: &dyn Fn(&mut Recipe)| {
        let mut r = base(name.to_string(), defect);
        f(&mut r);
        out.push(r);
    };
    let fps = cfg.fps as f64;
    add("cut", "scene cut", &|r| {
        r.frames = 80;
        r.cut = Some(40);
        r.segments = 2;
    });
    add("long", "longer than 8 s", &|r| {
        r.frames = (10.0 * fps) as usize;
        r.segments = 2;
    });
    add("decoy", "low-confidence text", &|r| {
        r.boxes = boxed(0.5, 0.5, cfg.size)
    });

    add("short", "too short", &|r| {
        r.frames = (1.5 * fps) as usize;
        r.rejected = Some("duration");
    });
    add("lowbpp", "low bit rate", &|r| {
        r.bpp = 0.01;
        r.rejected = Some("bpp");
    });
    add("lowfps", "low frame rate", &|r| {
        r.fps = 12.0;
        r.frames = 36;
        r.rejected = Some("fps");
    });
    add("tall", "extreme aspect", &|r| {
        r.width = cfg.size / 2;
        r.height = cfg.size * 2;
        r.rejected = Some("aspect");
    });
    add("baseline", "banned profile", &|r| {
        r.profile = "Constrained Baseline";
        r.rejected = Some("profile");
    });

    let grades = [(0usize, "heavy"), (1, "medium"), (2, "mild")];
    for (tier, grade) in grades {
        let name = format!("blur-{grade}");
        add(&name, "blur", &|r| {
            r.blur = [4, 2, 1][tier];
            r.removed_from = Some(tier);
            r.reason = Some("blur");
        });
        let name = format!("text-{grade}");
        add(&name, "text overlay", &|r| {
            r.boxes = boxed([0.30, 0.15, 0.07][tier], 0.9, cfg.size);
            r.removed_from = Some(tier);
            r.reason = Some("ocr");
        });
        let name = format!("shake-{grade}");
        add(&name, "camera shake", &|r| {
            r.path = Path2::Shake {
                speed: 1,
                amp: [3, 2, 1][tier],
                period: [3, 4, 4][tier],
            };
            r.removed_from = Some(tier);
            r.reason = Some("jitter");
        });
        let name = format!("flat-{grade}");
        add(&name, "low aesthetic", &|r| {
            r.levels = Some([3, 6, 12][tier]);
            r.removed_from = Some(tier);
            r.reason = Some("aesthetic");
        });
    }
    add("static", "no motion", &|r| {
        r.path = Path2::Pan(0);
        r.removed_from = Some(0);
        r.reason = Some("motion");
    });
    add("fast", "excessive motion", &|r| {
        r.path = Path2::Pan(6);
        r.removed_from = Some(0);
        r.reason = Some("motion");
    });
    out
}

const CAPTION_WORDS: [&str; 12] = [
    "grass", "water", "gravel", "bark", "fabric", "sand", "leaves", "stone", "clouds", "moss",
    "snow", "brick",
];

/// Writes `clips/*.vclp`, `metadata.jsonl` and `truth.jsonl` under `dir`.
pub fn synth_corpus(dir: &Path, cfg: &SynthConfig) -> Result<Vec<Truth>> {
    fs::create_dir_all(dir.join("clips"))?;
    let mut metas = Vec::new();
    let mut truths = Vec::new();
    for r in recipes(cfg) {
        let mut rng = stream(cfg.seed, &format!("synth/{}", r.id));
        let clip = render(&r, &mut rng);
        let rel = Path::new("clips").join(format!("{}.vclp", r.id));
        clip.write(&dir.join(&rel))?;
        let subject = CAPTION_WORDS[rng.random_range(0..CAPTION_WORDS.len())];
        let verb = match r.path {
            Path2::Pan(0) => "held still",
            Path2::Pan(s) if s < 0 => "drifting right",
            _ => "drifting left",
        };
        metas.push(ClipMeta {
            id: r.id.clone(),
            path: rel,
            caption: format!("A close view of {subject}, {verb}."),
            fps: Some(r.fps as f64),
            codec_profile: r.profile.to_string(),
            bpp: Some(r.bpp),
            width: None,
            height: None,
            duration: None,
            text_boxes: r.boxes.clone(),
        });
        truths.push(Truth {
            id: r.id,
            defect: r.defect.to_string(),
            rejected: r.rejected.map(String::from),
            removed_from: r.removed_from,
            reason: r.reason.map(String::from),
            segments: if r.rejected.is_some() { 0 } else { r.segments },
        });
    }
    write_jsonl(&dir.join("metadata.jsonl"), &metas)?;
    write_jsonl(&dir.join("truth.jsonl"), &truths)?;
    Ok(truths)
}
