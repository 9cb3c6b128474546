use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::filter::ClipRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    /// Exclusive, except for the last bin of a closed range.
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<Bin>,
    pub below: usize,
    pub above: usize,
}

impl Histogram {
    /// Bins `[e0, e1), [e1, e2), ...`; the last bin includes its upper edge.
    pub fn from_edges(edges: &[f64], values: impl IntoIterator<Item = f64>) -> Self {
        let mut bins: Vec<Bin> = edges
            .windows(2)
            .map(|w| Bin {
                lo: w[0],
                hi: w[1],
                count: 0,
            })
            .collect();
        let (mut below, mut above) = (0, 0);
        let last = *edges.last().expect("at least two edges");
        for v in values {
            if v < edges[0] {
                below += 1;
            } else if v > last {
                above += 1;
            } else if v == last {
                bins.last_mut().expect("non-empty").count += 1;
            } else {
                let i = edges.partition_point(|&e| e <= v) - 1;
                bins[i].count += 1;
            }
        }
        Self { bins, below, above }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordCount {
    pub word: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub clips: usize,
    pub aesthetic: Histogram,
    pub duration: Histogram,
    pub aspect: Histogram,
    pub caption_words: Histogram,
    /// Share of captions longer than 75 words.
    pub captions_over_75_words: f64,
    /// Sorted by count, then word.
    pub word_frequency: Vec<WordCount>,
}

pub const ASPECT_EDGES: [f64; 8] = [1.0 / 3.0, 0.5, 0.75, 1.0, 4.0 / 3.0, 2.0, 3.0, f64::MAX];
pub const CAPTION_EDGES: [f64; 6] = [0.0, 25.0, 50.0, 75.0, 100.0, f64::MAX];

/// Lowercased words with leading and trailing punctuation removed.
pub fn caption_words(caption: &str) -> Vec<String> {
    caption
        .split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

pub fn stats_report(records: &[ClipRecord]) -> Result<StatsReport> {
    if records.is_empty() {
        return Err(Error::Config("no records to summarize".into()));
    }
    let aes_edges: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
    let aesthetic = Histogram::from_edges(
        &aes_edges,
        records
            .iter()
            .filter_map(|r| r.scores.as_ref().map(|s| s.aesthetic)),
    );
    let duration = Histogram::from_edges(&[2.0, 4.0, 6.0, 8.0], records.iter().map(|r| r.duration));
    let aspect = Histogram::from_edges(&ASPECT_EDGES, records.iter().map(ClipRecord::aspect));
    let lens: Vec<usize> = records
        .iter()
        .map(|r| caption_words(&r.caption).len())
        .collect();
    let caption_words_hist = Histogram::from_edges(&CAPTION_EDGES, lens.iter().map(|&n| n as f64));
    let over = lens.iter().filter(|&&n| n > 75).count() as f64 / lens.len() as f64;

    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        for w in caption_words(&r.caption) {
            *freq.entry(w).or_default() += 1;
        }
    }
    let mut word_frequency: Vec<WordCount> = freq
        .into_iter()
        .map(|(word, count)| WordCount { word, count })
        .collect();
    word_frequency.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.word.cmp(&b.word)));

    Ok(StatsReport {
        clips: records.len(),
        aesthetic,
        duration,
        aspect,
        caption_words: caption_words_hist,
        captions_over_75_words: over,
        word_frequency,
    })
}
