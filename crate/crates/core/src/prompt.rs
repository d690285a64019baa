//! Modular text-prompt generation.
//!
//! A prompt is the concatenation, in fixed order, of a start phrase, a
//! geographic location, a traffic setting, an optional class-uniform-sampling
//! (CUS) class, the classes present in the source label map, and an optional
//! image condition:
//!
//! ```text
//! A high quality photo; Europe, highway, road, car, building, vegetation, winter
//! ```
//!
//! CUS keeps a per-class occurrence histogram across the whole dataset and
//! appends the rarest class to each prompt. Because the histogram carries state
//! from one image to the next, prompts must be built strictly in dataset order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{class_pixel_counts, ClassCatalog, ClassId, LabelMap};
use crate::seed;

pub const DEFAULT_START: &str = "A high quality photo";

pub const BASE_LOCATIONS: [&str; 2] = ["Europe", "Germany"];

pub const EXTENDED_LOCATIONS: [&str; 5] = ["Europe", "Germany", "USA", "China", "India"];

/// Traffic settings; the empty string stands for "no traffic location".
pub const TRAFFIC: [&str; 3] = ["", "highway", "city"];

/// Image conditions. Slash-separated entries are alternatives; the spelling
/// `autuum` is kept verbatim unless [`PromptConfig::correct_autumn_spelling`] is set.
pub const CONDITIONS: [&str; 21] = [
    "rain",
    "fog/mist",
    "snowy",
    "sunny",
    "overcast",
    "stormy",
    "overexposure",
    "underexposure",
    "evening",
    "morning",
    "night/darkness",
    "backlighting",
    "artificial lighting",
    "harsh light",
    "dappled light",
    "sun flare",
    "hazy/haze",
    "spring",
    "autuum",
    "winter",
    "summer",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("vocabulary `{0}` is empty")]
    EmptyVocabulary(&'static str),
    #[error("vocabulary `{0}` contains a blank entry; only the traffic block may be blank")]
    BlankEntry(&'static str),
    #[error("max_class_names must be at least 1")]
    ZeroClassCap,
    #[error("start phrase is empty")]
    EmptyStart,
    #[error("class id {0} is not in the catalog")]
    InvalidClass(ClassId),
    #[error("cannot parse prompt `{rendered}`: {reason}")]
    Parse { rendered: String, reason: String },
}

/// How the occurrence histogram evolves per image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramUpdate {
    /// Count every class present in the source label map, then +1 for the CUS pick.
    #[default]
    PresenceAndCommit,
    /// Only the CUS pick increments the histogram.
    CommitOnly,
}

/// Order in which present classes are listed in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassOrder {
    /// Ascending class id.
    #[default]
    Id,
    /// Descending pixel area, ties by ascending id.
    Area,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub start: String,
    pub locations: Vec<String>,
    pub locations_extended: Vec<String>,
    /// Draw from `locations_extended` instead of `locations`.
    pub extended_locations: bool,
    pub traffic: Vec<String>,
    pub conditions_enabled: bool,
    pub conditions: Vec<String>,
    pub correct_autumn_spelling: bool,
    pub cus_enabled: bool,
    pub histogram_update: HistogramUpdate,
    pub max_class_names: usize,
    pub class_order: ClassOrder,
    pub seed: u64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        PromptConfig {
            start: DEFAULT_START.to_string(),
            locations: owned(&BASE_LOCATIONS),
            locations_extended: owned(&EXTENDED_LOCATIONS),
            extended_locations: false,
            traffic: owned(&TRAFFIC),
            conditions_enabled: false,
            conditions: owned(&CONDITIONS),
            correct_autumn_spelling: false,
            cus_enabled: true,
            histogram_update: HistogramUpdate::default(),
            max_class_names: 19,
            class_order: ClassOrder::default(),
            seed: 0,
        }
    }
}

impl PromptConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.start.trim().is_empty() {
            return Err(PromptError::EmptyStart);
        }
        check_vocab("locations", self.active_locations())?;
        if self.conditions_enabled {
            check_vocab("conditions", &self.conditions)?;
        }
        if self.traffic.is_empty() {
            return Err(PromptError::EmptyVocabulary("traffic"));
        }
        if self.max_class_names == 0 {
            return Err(PromptError::ZeroClassCap);
        }
        Ok(())
    }

    pub fn active_locations(&self) -> &[String] {
        if self.extended_locations {
            &self.locations_extended
        } else {
            &self.locations
        }
    }

    fn condition_entry(&self, raw: &str) -> String {
        if self.correct_autumn_spelling && raw == "autuum" {
            "autumn".to_string()
        } else {
            raw.to_string()
        }
    }
}

fn check_vocab(name: &'static str, vocab: &[String]) -> Result<(), PromptError> {
    if vocab.is_empty() {
        return Err(PromptError::EmptyVocabulary(name));
    }
    if vocab.iter().any(|s| s.trim().is_empty()) {
        return Err(PromptError::BlankEntry(name));
    }
    Ok(())
}

/// Occurrence histogram driving class-uniform sampling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CusState {
    counts: Vec<u64>,
}

impl CusState {
    pub fn new(num_classes: usize) -> Self {
        CusState { counts: vec![0; num_classes] }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        CusState { counts }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn slot(&mut self, id: ClassId) -> Result<&mut u64, PromptError> {
        self.counts.get_mut(usize::from(id)).ok_or(PromptError::InvalidClass(id))
    }

    /// Adds one occurrence for every class in `present`.
    pub fn update(&mut self, present: &[ClassId]) -> Result<(), PromptError> {
        if let Some(&bad) = present.iter().find(|&&id| usize::from(id) >= self.counts.len()) {
            return Err(PromptError::InvalidClass(bad));
        }
        for &id in present {
            *self.slot(id)? += 1;
        }
        Ok(())
    }

    /// Rarest class; ties go to the lowest id. Does not modify the histogram.
    pub fn select(&self) -> ClassId {
        let mut best = 0;
        for (id, &count) in self.counts.iter().enumerate() {
            if count < self.counts[best] {
                best = id;
            }
        }
        best as ClassId
    }

    pub fn commit(&mut self, chosen: ClassId) -> Result<(), PromptError> {
        *self.slot(chosen)? += 1;
        Ok(())
    }
}

/// The chosen building blocks of one prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBlocks {
    pub start: String,
    pub location: String,
    /// Empty when the blank traffic option was drawn.
    pub traffic: String,
    pub cus_class: Option<ClassId>,
    pub present_classes: Vec<ClassId>,
    pub condition: Option<String>,
}

impl PromptBlocks {
    /// Renders the blocks: `start; seg, seg, ...` with blank traffic omitted.
    pub fn render(&self, catalog: &ClassCatalog) -> Result<String, PromptError> {
        let name = |id: ClassId| catalog.name(id).ok_or(PromptError::InvalidClass(id));
        let mut segments: Vec<&str> = vec![self.location.as_str()];
        if !self.traffic.is_empty() {
            segments.push(&self.traffic);
        }
        if let Some(id) = self.cus_class {
            segments.push(name(id)?);
        }
        for &id in &self.present_classes {
            segments.push(name(id)?);
        }
        if let Some(c) = &self.condition {
            segments.push(c);
        }
        Ok(format!("{}; {}", self.start, segments.join(", ")))
    }

    /// Splits a rendered prompt back into blocks.
    ///
    /// The grammar is not self-describing, so the caller states which optional
    /// blocks were emitted; traffic is recognised by membership in `traffic_vocab`.
    pub fn parse(
        rendered: &str,
        catalog: &ClassCatalog,
        traffic_vocab: &[String],
        has_cus: bool,
        has_condition: bool,
    ) -> Result<Self, PromptError> {
        let fail = |reason: &str| PromptError::Parse {
            rendered: rendered.to_string(),
            reason: reason.to_string(),
        };
        let (start, rest) = rendered.split_once("; ").ok_or_else(|| fail("missing `; `"))?;
        let mut segments: Vec<&str> = rest.split(", ").collect();
        let condition = if has_condition {
            if segments.len() < 2 {
                return Err(fail("missing condition"));
            }
            segments.pop().map(str::to_string)
        } else {
            None
        };
        let mut iter = segments.into_iter().peekable();
        let location = iter.next().ok_or_else(|| fail("missing location"))?.to_string();
        let traffic = match iter.peek() {
            Some(seg) if traffic_vocab.iter().any(|t| !t.is_empty() && t == seg) => {
                iter.next().unwrap().to_string()
            }
            _ => String::new(),
        };
        let mut ids = Vec::new();
        for seg in iter {
            ids.push(catalog.id_of(seg).ok_or_else(|| fail(&format!("unknown class `{seg}`")))?);
        }
        let cus_class = if has_cus {
            if ids.is_empty() {
                return Err(fail("missing CUS class"));
            }
            Some(ids.remove(0))
        } else {
            None
        };
        Ok(PromptBlocks {
            start: start.to_string(),
            location,
            traffic,
            cus_class,
            present_classes: ids,
            condition,
        })
    }
}

/// One generated prompt with everything needed to reconstruct it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub index: u64,
    /// Seed of the stream that drew the blocks.
    pub seed: u64,
    pub blocks: PromptBlocks,
    pub rendered: String,
}

impl PromptRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("prompt record serializes")
    }

    /// Whether re-rendering the stored blocks reproduces the stored string.
    pub fn is_reconstructible(&self, catalog: &ClassCatalog) -> bool {
        self.blocks.render(catalog).is_ok_and(|r| r == self.rendered)
    }
}

/// Classes of `label` in the order they should be listed in the prompt.
pub fn ordered_present_classes(
    label: &LabelMap,
    catalog: &ClassCatalog,
    order: ClassOrder,
) -> Vec<ClassId> {
    let counts = class_pixel_counts(label, catalog);
    let mut present: Vec<(ClassId, u64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(id, &n)| (id as ClassId, n))
        .collect();
    if order == ClassOrder::Area {
        present.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    }
    present.into_iter().map(|(id, _)| id).collect()
}

/// Sequential prompt builder; owns the CUS histogram and the draw stream.
#[derive(Debug, Clone)]
pub struct PromptGenerator {
    config: PromptConfig,
    catalog: ClassCatalog,
    state: CusState,
    rng: ChaCha8Rng,
    next_index: u64,
    pre_commit: Option<Vec<u64>>,
}

impl PromptGenerator {
    pub fn new(config: PromptConfig, catalog: ClassCatalog) -> Result<Self, PromptError> {
        config.validate()?;
        let rng = seed::rng(config.seed);
        let state = CusState::new(catalog.len());
        Ok(PromptGenerator { config, catalog, state, rng, next_index: 0, pre_commit: None })
    }

    pub fn config(&self) -> &PromptConfig {
        &self.config
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    pub fn state(&self) -> &CusState {
        &self.state
    }

    /// Histogram as it stood when the last CUS class was selected.
    pub fn last_pre_commit(&self) -> Option<&[u64]> {
        self.pre_commit.as_deref()
    }

    /// Builds the prompt for the next image given its present classes in listing order.
    pub fn build(&mut self, present: &[ClassId]) -> Result<PromptRecord, PromptError> {
        if let Some(&bad) = present.iter().find(|&&id| !self.catalog.contains(id)) {
            return Err(PromptError::InvalidClass(bad));
        }
        let location = draw(&mut self.rng, self.config.active_locations(), "locations")?.clone();
        let traffic = draw(&mut self.rng, &self.config.traffic, "traffic")?.clone();
        let condition = if self.config.conditions_enabled {
            let entry = draw(&mut self.rng, &self.config.conditions, "conditions")?;
            let alternatives: Vec<&str> = entry.split('/').map(str::trim).collect();
            let pick = alternatives[self.rng.gen_range(0..alternatives.len() as u32) as usize];
            Some(self.config.condition_entry(pick))
        } else {
            None
        };

        if self.config.histogram_update == HistogramUpdate::PresenceAndCommit {
            self.state.update(present)?;
        }
        let cus_class = if self.config.cus_enabled {
            self.pre_commit = Some(self.state.counts().to_vec());
            let chosen = self.state.select();
            self.state.commit(chosen)?;
            Some(chosen)
        } else {
            None
        };

        let keep = present.len().min(self.config.max_class_names);
        let blocks = PromptBlocks {
            start: self.config.start.clone(),
            location,
            traffic,
            cus_class,
            present_classes: present[..keep].to_vec(),
            condition,
        };
        let rendered = blocks.render(&self.catalog)?;
        let record = PromptRecord { index: self.next_index, seed: self.config.seed, blocks, rendered };
        self.next_index += 1;
        Ok(record)
    }
}

fn draw<'a>(
    rng: &mut ChaCha8Rng,
    vocab: &'a [String],
    name: &'static str,
) -> Result<&'a String, PromptError> {
    if vocab.is_empty() {
        return Err(PromptError::EmptyVocabulary(name));
    }
    Ok(&vocab[rng.gen_range(0..vocab.len() as u32) as usize])
}
