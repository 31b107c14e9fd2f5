//! Word/letter segmentations of one utterance.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LetterSpan {
    pub letter: usize,
    pub duration: usize,
}

/// One word token covering frames `start..end`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub word: usize,
    pub start: usize,
    pub end: usize,
    pub letters: Vec<LetterSpan>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn letter_ids(&self) -> Vec<usize> {
        self.letters.iter().map(|l| l.letter).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WordSequence {
    pub segments: Vec<Segment>,
}

impl WordSequence {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    pub fn words(&self) -> impl Iterator<Item = usize> + '_ {
        self.segments.iter().map(|s| s.word)
    }

    pub fn n_frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    /// The letter alignment across all segments, one entry per letter span.
    pub fn letters(&self) -> Vec<usize> {
        self.segments.iter().flat_map(Segment::letter_ids).collect()
    }

    /// Checks that segments tile `0..n_frames` contiguously and that every
    /// segment's letter durations sum to its length.
    pub fn check_tiling(&self, n_frames: usize) -> Result<(), String> {
        let mut cursor = 0;
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.start != cursor {
                return Err(if seg.start > cursor {
                    format!("gap before segment {i} (frames {cursor}..{})", seg.start)
                } else {
                    format!("segment {i} overlaps its predecessor at frame {}", seg.start)
                });
            }
            if seg.end <= seg.start {
                return Err(format!("segment {i} is empty"));
            }
            let letter_total: usize = seg.letters.iter().map(|l| l.duration).sum();
            if !seg.letters.is_empty() && letter_total != seg.len() {
                return Err(format!(
                    "segment {i}: letter durations sum to {letter_total}, segment has {} frames",
                    seg.len()
                ));
            }
            if seg.letters.iter().any(|l| l.duration == 0) {
                return Err(format!("segment {i} has a zero-length letter"));
            }
            cursor = seg.end;
        }
        if cursor != n_frames {
            return Err(format!("segments cover {cursor} of {n_frames} frames"));
        }
        Ok(())
    }

    /// Per-frame word ids.
    pub fn frame_words(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_frames());
        for seg in &self.segments {
            out.extend(std::iter::repeat_n(seg.word, seg.len()));
        }
        out
    }

    /// Per-frame letter ids. Segments without letter alignment contribute
    /// their word id.
    pub fn frame_letters(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_frames());
        for seg in &self.segments {
            if seg.letters.is_empty() {
                out.extend(std::iter::repeat_n(seg.word, seg.len()));
            }
            for l in &seg.letters {
                out.extend(std::iter::repeat_n(l.letter, l.duration));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(word: usize, start: usize, end: usize) -> Segment {
        Segment {
            word,
            start,
            end,
            letters: vec![LetterSpan {
                letter: word,
                duration: end - start,
            }],
        }
    }

    #[test]
    fn tiling_detects_gap_and_overlap() {
        let ok = WordSequence::new(vec![seg(0, 0, 2), seg(1, 2, 4)]);
        assert!(ok.check_tiling(4).is_ok());
        let gap = WordSequence::new(vec![seg(0, 0, 2), seg(1, 3, 4)]);
        assert!(gap.check_tiling(4).unwrap_err().contains("gap"));
        let overlap = WordSequence::new(vec![seg(0, 0, 3), seg(1, 2, 4)]);
        assert!(overlap.check_tiling(4).unwrap_err().contains("overlap"));
        assert!(ok.check_tiling(5).is_err());
    }

    #[test]
    fn frame_labels_switch_at_boundary() {
        let ws = WordSequence::new(vec![seg(3, 0, 2), seg(5, 2, 4)]);
        assert_eq!(ws.frame_words(), vec![3, 3, 5, 5]);
        assert_eq!(ws.frame_letters(), vec![3, 3, 5, 5]);
    }
}
