//! Data curation: admission, scene segmentation, clip scoring, tiered
//! filtering and dataset statistics.

pub mod container;
pub mod filter;
pub mod pipeline;
pub mod preprocess;
pub mod scores;
pub mod stats;
pub mod synth;

pub use container::{Clip, HEADER_LEN, MAGIC};
pub use filter::{
    filter_tier, tier_violation, ClipRecord, FilterConfig, Removal, TierResult, TierThresholds,
};
pub use pipeline::{
    read_jsonl, run_pipeline, write_jsonl, write_outputs, ClipMeta, PipelineOutput, TierList,
};
pub use preprocess::{
    conform_output, frame_differences, preprocess_admit, segment_clips, segment_spans, Admission,
    PreprocessConfig, Span, VideoAttrs,
};
pub use scores::{
    blur_frames, global_shift, is_blurry, jitter_score, key_frames, laplacian_variance,
    motion_score, score_clip, text_area, EntropyAesthetic, FixedTextDetector, FrameScorer,
    ScoreConfig, Scores, TextBox, TextDetector, OCR_CONFIDENCE,
};
pub use stats::{caption_words, stats_report, Bin, Histogram, StatsReport, WordCount};
pub use synth::{synth_corpus, SynthConfig, Truth};
