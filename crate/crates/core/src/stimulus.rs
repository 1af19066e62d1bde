//! Binary 14×14 macro-pixel patterns, presentation schedules, degradation
//! and Poisson encoding into retina sources.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;

use crate::error::{Result, SimError};
use crate::event::{Address, Population, RandomStream};
use crate::network::{SourceSpec, GRID, GRID_CELLS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StimulusPattern {
    pub name: String,
    /// Row-major, `GRID_CELLS` long.
    pub cells: Vec<bool>,
}

const HAPPY: [&str; GRID] = [
    "....######....",
    "...##....##...",
    "..#........#..",
    ".#..##..##..#.",
    "##..##..##..##",
    "#............#",
    "#............#",
    "#............#",
    "#..#......#..#",
    "##.##....##.##",
    ".#...####...#.",
    "..##......##..",
    "...##...###...",
    "....######....",
];

const SAD: [&str; GRID] = [
    "..............",
    ".....####.....",
    "...########...",
    "..##......##..",
    "..##......##..",
    ".##.##..##.##.",
    ".##.##..##.##.",
    ".##........##.",
    ".##...##...##.",
    "..#..####..#..",
    "..##......##..",
    "....######....",
    ".....###......",
    "..............",
];

impl StimulusPattern {
    pub fn new(name: &str, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != GRID_CELLS {
            return Err(SimError::param("pattern", format!("expected {GRID_CELLS} cells, got {}", cells.len())));
        }
        Ok(StimulusPattern {
            name: name.to_string(),
            cells,
        })
    }

    pub fn empty(name: &str) -> Self {
        StimulusPattern {
            name: name.to_string(),
            cells: vec![false; GRID_CELLS],
        }
    }

    fn from_art(name: &str, art: &[&str; GRID]) -> Self {
        let cells = art.iter().flat_map(|row| row.chars().map(|c| c == '#')).collect();
        StimulusPattern {
            name: name.to_string(),
            cells,
        }
    }

    pub fn active_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn active_cells(&self) -> Vec<usize> {
        self.cells.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i).collect()
    }

    pub fn coding_level(&self) -> f64 {
        self.active_count() as f64 / GRID_CELLS as f64
    }

    pub fn overlap(&self, other: &StimulusPattern) -> usize {
        self.cells.iter().zip(&other.cells).filter(|(a, b)| **a && **b).count()
    }

    /// Fresh copy with `round(fraction * active)` active cells switched off,
    /// chosen uniformly.
    pub fn degrade(&self, removal_fraction: f64, stream: &RandomStream, substream: u64) -> Result<StimulusPattern> {
        if !(0.0..=1.0).contains(&removal_fraction) {
            return Err(SimError::param("removal_fraction", "must lie in [0, 1]"));
        }
        let mut active = self.active_cells();
        let n_remove = (removal_fraction * active.len() as f64).round() as usize;
        let mut rng = stream.substream(substream);
        active.shuffle(&mut rng);
        let mut out = self.clone();
        for &c in &active[..n_remove] {
            out.cells[c] = false;
        }
        Ok(out)
    }

    /// Retina sources: active cells fire at `rate_on`, inactive ones at
    /// `rate_off`, over `window`. Sub-streams are keyed by
    /// `(presentation, cell)` so each presentation draws fresh trains.
    pub fn encode(
        &self,
        window: (f64, f64),
        rate_on: f64,
        rate_off: f64,
        stream: RandomStream,
        presentation: u64,
    ) -> Result<Vec<SourceSpec>> {
        if !(rate_on >= 0.0 && rate_off >= 0.0) {
            return Err(SimError::param("rate", "encoding rates must be >= 0"));
        }
        if !(window.1 >= window.0 && window.0 >= 0.0) {
            return Err(SimError::param("window", "invalid encoding window"));
        }
        Ok(self
            .cells
            .iter()
            .enumerate()
            .filter_map(|(cell, &on)| {
                let rate = if on { rate_on } else { rate_off };
                (rate > 0.0).then(|| SourceSpec {
                    address: Address::new(Population::Retina, cell as u16),
                    rate,
                    t0: window.0,
                    t1: window.1,
                    stream,
                    substream: (presentation << 16) | cell as u64,
                })
            })
            .collect())
    }

    /// 14 lines of 14 `0`/`1` characters.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        for r in 0..GRID {
            let line: String = (0..GRID).map(|c| if self.cells[r * GRID + c] { '1' } else { '0' }).collect();
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(name: &str, r: R) -> Result<StimulusPattern> {
        let mut cells = Vec::with_capacity(GRID_CELLS);
        let mut rows = 0;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line.len() != GRID {
                return Err(SimError::parse(n + 1, format!("expected {GRID} characters")));
            }
            for ch in line.chars() {
                match ch {
                    '0' => cells.push(false),
                    '1' => cells.push(true),
                    other => return Err(SimError::parse(n + 1, format!("unexpected `{other}`"))),
                }
            }
            rows += 1;
        }
        if rows != GRID {
            return Err(SimError::parse(rows, format!("expected {GRID} rows, got {rows}")));
        }
        StimulusPattern::new(name, cells)
    }
}

/// The two orthogonal face patterns, 65 active cells each.
pub fn builtin_patterns() -> Vec<StimulusPattern> {
    vec![
        StimulusPattern::from_art("happy", &HAPPY),
        StimulusPattern::from_art("sad", &SAD),
    ]
}

/// `n` mutually disjoint patterns of `size` cells each. The first two are the
/// built-in faces when `size` is 65; the rest are drawn from unused cells.
pub fn disjoint_patterns(n: usize, size: usize, stream: &RandomStream) -> Result<Vec<StimulusPattern>> {
    if n * size > GRID_CELLS {
        return Err(SimError::param("patterns", format!("{n} disjoint patterns of {size} cells do not fit in {GRID_CELLS}")));
    }
    let mut out: Vec<StimulusPattern> = if size == 65 {
        builtin_patterns().into_iter().take(n).collect()
    } else {
        Vec::new()
    };
    let mut used = vec![false; GRID_CELLS];
    for p in &out {
        for c in p.active_cells() {
            used[c] = true;
        }
    }
    let mut free: Vec<usize> = (0..GRID_CELLS).filter(|&c| !used[c]).collect();
    let mut rng = stream.substream(0xD15_0000);
    free.shuffle(&mut rng);
    let mut free = free.into_iter();
    while out.len() < n {
        let mut p = StimulusPattern::empty(&format!("pattern{}", out.len()));
        for c in free.by_ref().take(size) {
            p.cells[c] = true;
        }
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Presentation {
    /// Index into the experiment's pattern list.
    pub pattern: usize,
    pub onset: f64,
    pub duration: f64,
}

impl Presentation {
    pub fn offset(&self) -> f64 {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PresentationSchedule {
    pub items: Vec<Presentation>,
}

impl PresentationSchedule {
    pub fn new(mut items: Vec<Presentation>) -> Result<Self> {
        items.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        for p in &items {
            if !(p.duration > 0.0) || !(p.onset >= 0.0) {
                return Err(SimError::param("schedule", "onsets must be >= 0 and durations > 0"));
            }
        }
        for w in items.windows(2) {
            if w[1].onset < w[0].offset() {
                return Err(SimError::param("schedule", format!("presentation at {} s overlaps the previous one", w[1].onset)));
            }
        }
        Ok(PresentationSchedule { items })
    }

    /// Cyclic order over `n_patterns`, one onset every `duration + gap` seconds.
    pub fn alternating(n_patterns: usize, count: usize, duration: f64, gap: f64, start: f64) -> Result<Self> {
        if n_patterns == 0 {
            return Err(SimError::param("schedule", "need at least one pattern"));
        }
        let period = duration + gap;
        PresentationSchedule::new(
            (0..count)
                .map(|k| Presentation {
                    pattern: k % n_patterns,
                    onset: start + k as f64 * period,
                    duration,
                })
                .collect(),
        )
    }

    pub fn end(&self) -> f64 {
        self.items.last().map_or(0.0, |p| p.offset())
    }

    /// `pattern_name,onset_s,duration_s` per line.
    pub fn write_text<W: Write>(&self, mut w: W, patterns: &[StimulusPattern]) -> Result<()> {
        for p in &self.items {
            writeln!(w, "{},{},{}", patterns[p.pattern].name, p.onset, p.duration)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R, patterns: &[StimulusPattern]) -> Result<Self> {
        let mut items = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(SimError::parse(n + 1, "expected pattern_name,onset_s,duration_s"));
            }
            let pattern = patterns
                .iter()
                .position(|p| p.name == f[0])
                .ok_or_else(|| SimError::parse(n + 1, format!("unknown pattern `{}`", f[0])))?;
            let num = |s: &str| s.parse::<f64>().map_err(|e| SimError::parse(n + 1, e.to_string()));
            items.push(Presentation {
                pattern,
                onset: num(f[1])?,
                duration: num(f[2])?,
            });
        }
        PresentationSchedule::new(items)
    }
}
