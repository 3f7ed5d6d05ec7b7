//! Synthetic QA data: answer candidates from hyperlinked anchor texts,
//! question-word selection by entity type, and the prompts used to rewrite
//! cloze sentences into natural questions.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_META_EXAMPLES: usize = 3;
pub const RESPONSE_MARKER: &str = "The transformed question is:";
pub const ICL_HEADER: &str =
    "Rewrite sentences into short and precise questions, using given question words and answers:";
/// Stands in for the model's answer inside the requested response format.
pub const QUESTION_SLOT: &str = "<question>";

/// Named-entity labels (OntoNotes style).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EntityType {
    Person,
    Norp,
    Org,
    Gpe,
    Loc,
    Fac,
    Product,
    Event,
    WorkOfArt,
    Law,
    Language,
    Time,
    Date,
    Percent,
    Money,
    Quantity,
    Ordinal,
    Cardinal,
}

impl EntityType {
    pub const ALL: [EntityType; 18] = [
        EntityType::Person,
        EntityType::Norp,
        EntityType::Org,
        EntityType::Gpe,
        EntityType::Loc,
        EntityType::Fac,
        EntityType::Product,
        EntityType::Event,
        EntityType::WorkOfArt,
        EntityType::Law,
        EntityType::Language,
        EntityType::Time,
        EntityType::Date,
        EntityType::Percent,
        EntityType::Money,
        EntityType::Quantity,
        EntityType::Ordinal,
        EntityType::Cardinal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EntityType::Person => "PERSON",
            EntityType::Norp => "NORP",
            EntityType::Org => "ORG",
            EntityType::Gpe => "GPE",
            EntityType::Loc => "LOC",
            EntityType::Fac => "FAC",
            EntityType::Product => "PRODUCT",
            EntityType::Event => "EVENT",
            EntityType::WorkOfArt => "WORK_OF_ART",
            EntityType::Law => "LAW",
            EntityType::Language => "LANGUAGE",
            EntityType::Time => "TIME",
            EntityType::Date => "DATE",
            EntityType::Percent => "PERCENT",
            EntityType::Money => "MONEY",
            EntityType::Quantity => "QUANTITY",
            EntityType::Ordinal => "ORDINAL",
            EntityType::Cardinal => "CARDINAL",
        }
    }

    pub fn category(self) -> WhCategory {
        use EntityType::*;
        match self {
            Person | Norp | Org => WhCategory::Who,
            Gpe | Loc | Fac => WhCategory::Where,
            Product | Event | WorkOfArt | Law | Language => WhCategory::What,
            Time | Date => WhCategory::When,
            Percent | Money | Quantity => WhCategory::HowMuch,
            Ordinal | Cardinal => WhCategory::HowMany,
        }
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| *c != '_' && *c != '-' && *c != ' ')
            .flat_map(char::to_uppercase)
            .collect();
        EntityType::ALL
            .into_iter()
            .find(|t| t.label().replace('_', "") == norm)
            .ok_or_else(|| Error::invalid(format!("unknown entity type `{s}`")))
    }
}

impl TryFrom<String> for EntityType {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EntityType> for String {
    fn from(t: EntityType) -> String {
        t.label().to_string()
    }
}

impl std::fmt::Display for EntityType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhCategory {
    Who,
    Where,
    What,
    When,
    HowMuch,
    HowMany,
}

/// Question words per language and category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WhLexicon(BTreeMap<String, BTreeMap<WhCategory, String>>);

impl WhLexicon {
    pub fn builtin() -> &'static WhLexicon {
        static LEXICON: OnceLock<WhLexicon> = OnceLock::new();
        LEXICON.get_or_init(|| {
            serde_json::from_str(include_str!("../data/wh_words.json"))
                .expect("bundled wh-word lexicon is valid")
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    /// The word for `category` in `lang`, falling back to English.
    pub fn word(&self, category: WhCategory, lang: &str) -> Result<String> {
        if let Some(w) = self.0.get(lang).and_then(|m| m.get(&category)) {
            return Ok(w.clone());
        }
        log::warn!("no {category:?} question word for `{lang}`, using English");
        self.0
            .get("en")
            .and_then(|m| m.get(&category))
            .cloned()
            .ok_or_else(|| Error::invalid(format!("lexicon has no English {category:?} word")))
    }
}

/// Question word for an answer of `entity_type`, in `lang`.
pub fn choose_wh_word(entity_type: &str, lang: &str) -> Result<String> {
    let t: EntityType = entity_type.parse()?;
    WhLexicon::builtin().word(t.category(), lang)
}

/// A hyperlink inside a sentence, as a character range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub start: usize,
    pub end: usize,
    /// Linked page id.
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchoredSentence {
    #[serde(default)]
    pub id: String,
    pub lang: String,
    pub text: String,
    #[serde(default)]
    pub anchors: Vec<Anchor>,
}

/// Link-graph node: a page's English counterpart title and the entity type
/// tagged on its first paragraph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageInfo {
    pub id: String,
    #[serde(default)]
    pub english_title: Option<String>,
    #[serde(default)]
    pub entity_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorExample {
    pub cloze_sentence: String,
    pub answer_l: String,
    pub answer_en: String,
    pub entity_type: EntityType,
    pub lang: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnchorExtraction {
    pub examples: Vec<AnchorExample>,
    /// Anchors without an English page or a recognized entity type.
    pub skipped: usize,
}

/// One example per anchor whose linked page has an English title and a known
/// entity type; the anchor text is the answer and is masked in the sentence.
pub fn extract_anchor_examples(
    sentence: &AnchoredSentence,
    pages: &HashMap<String, PageInfo>,
    placeholder: &str,
) -> Result<AnchorExtraction> {
    let chars: Vec<(usize, char)> = sentence.text.char_indices().collect();
    let len = chars.len();
    let byte_at = |c: usize| chars.get(c).map_or(sentence.text.len(), |(b, _)| *b);
    let mut out = AnchorExtraction::default();
    for a in &sentence.anchors {
        if a.start >= a.end || a.end > len {
            return Err(Error::InvalidSpan {
                start: a.start,
                end: a.end,
                len,
            });
        }
        let (s, e) = (byte_at(a.start), byte_at(a.end));
        let resolved = pages.get(&a.target).and_then(|p| {
            let title = p.english_title.as_deref().filter(|t| !t.trim().is_empty())?;
            let ty: EntityType = p.entity_type.as_deref()?.parse().ok()?;
            Some((title.to_string(), ty))
        });
        let Some((answer_en, entity_type)) = resolved else {
            out.skipped += 1;
            continue;
        };
        out.examples.push(AnchorExample {
            cloze_sentence: format!("{}{placeholder}{}", &sentence.text[..s], &sentence.text[e..]),
            answer_l: sentence.text[s..e].to_string(),
            answer_en,
            entity_type,
            lang: sentence.lang.clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaExample {
    pub sentence: String,
    pub wh_word: String,
    pub answer: String,
    pub transformed_question: String,
    pub lang: String,
}

impl MetaExample {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sentence", &self.sentence),
            ("wh_word", &self.wh_word),
            ("answer", &self.answer),
            ("transformed_question", &self.transformed_question),
            ("lang", &self.lang),
        ] {
            if v.trim().is_empty() {
                return Err(Error::invalid(format!("meta example has empty {name}")));
            }
        }
        Ok(())
    }
}

/// A sentence to be rewritten.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclInstance {
    pub sentence: String,
    pub wh_word: String,
    pub answer: String,
    pub lang: String,
}

impl IclInstance {
    pub fn from_anchor(example: &AnchorExample) -> Result<Self> {
        Ok(Self {
            sentence: example.cloze_sentence.clone(),
            wh_word: choose_wh_word(example.entity_type.label(), &example.lang)?,
            answer: example.answer_l.clone(),
            lang: example.lang.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    MetaGeneration,
    Icl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub kind: PromptKind,
}

fn require_non_empty(fields: &[(&str, &str)]) -> Result<()> {
    match fields.iter().find(|(_, v)| v.trim().is_empty()) {
        Some((name, _)) => Err(Error::invalid(format!("{name} must be non-empty"))),
        None => Ok(()),
    }
}

/// Prompt asking a strong model to rewrite one cloze sentence, used to
/// collect meta-examples.
pub fn build_meta_prompt(example: &AnchorExample, wh_word: &str) -> Result<PromptText> {
    meta_prompt_text(&example.cloze_sentence, wh_word, &example.answer_l)
}

pub fn meta_prompt_text(sentence: &str, wh_word: &str, answer: &str) -> Result<PromptText> {
    require_non_empty(&[("sentence", sentence), ("wh_word", wh_word), ("answer", answer)])?;
    Ok(PromptText {
        text: format!(
            "Rewrite this sentence \"{sentence}\" into a natural question whose question word is \"{wh_word}\" and answer is \"{answer}\". Please respond in the format: \"{RESPONSE_MARKER} {QUESTION_SLOT}\""
        ),
        kind: PromptKind::MetaGeneration,
    })
}

/// Permutation applied to `n` meta examples for `seed`.
pub fn meta_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Few-shot prompt: header, one block per meta example in seeded order, then
/// the instance block left open after `Transformed Question:`.
pub fn build_icl_prompt(meta: &[MetaExample], instance: &IclInstance, seed: u64) -> Result<PromptText> {
    let ordered: Vec<&MetaExample> = meta_order(meta.len(), seed).into_iter().map(|i| &meta[i]).collect();
    render_icl_prompt(&ordered, instance)
}

/// Render with the meta examples in the given order.
pub fn render_icl_prompt(meta: &[&MetaExample], instance: &IclInstance) -> Result<PromptText> {
    if meta.is_empty() {
        return Err(Error::invalid("at least one meta example is required"));
    }
    require_non_empty(&[
        ("sentence", &instance.sentence),
        ("wh_word", &instance.wh_word),
        ("answer", &instance.answer),
    ])?;
    let mut text = String::from(ICL_HEADER);
    text.push_str("\n\n");
    for m in meta {
        m.validate()?;
        if m.lang != instance.lang {
            return Err(Error::invalid(format!(
                "meta example language `{}` differs from instance language `{}`",
                m.lang, instance.lang
            )));
        }
        text.push_str(&format!(
            "Sentence: {}\nQuestion word: {}\nAnswer: {}\nTransformed Question: {}\n\n",
            m.sentence.trim(),
            m.wh_word.trim(),
            m.answer.trim(),
            m.transformed_question.trim()
        ));
    }
    text.push_str(&format!(
        "Sentence: {}\nQuestion word: {}\nAnswer: {}\nTransformed Question:",
        instance.sentence.trim(),
        instance.wh_word.trim(),
        instance.answer.trim()
    ));
    Ok(PromptText {
        text,
        kind: PromptKind::Icl,
    })
}

/// Draw `n` distinct meta examples in `lang` from `pool`.
pub fn sample_meta_examples<'a, R: Rng + ?Sized>(
    pool: &'a [MetaExample],
    lang: &str,
    n: usize,
    rng: &mut R,
) -> Result<Vec<&'a MetaExample>> {
    let same: Vec<&MetaExample> = pool.iter().filter(|m| m.lang == lang).collect();
    if same.len() < n || n == 0 {
        return Err(Error::invalid(format!(
            "need {n} meta examples in `{lang}`, pool has {}",
            same.len()
        )));
    }
    Ok(same.choose_multiple(rng, n).copied().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub meta_examples: usize,
    /// Prompts generated per instance, by language; default 1.
    pub oversample: BTreeMap<String, usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            meta_examples: DEFAULT_META_EXAMPLES,
            oversample: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub lang: String,
    pub answer: String,
    pub answer_en: String,
    pub entity_type: EntityType,
    pub prompt: String,
}

/// ICL prompts for every `(id, example)`; record ids are `{id}#{copy}`.
/// All randomness derives from `seed`.
pub fn generate_icl_prompts(
    examples: &[(String, AnchorExample)],
    meta_pool: &[MetaExample],
    config: &SynthConfig,
    seed: u64,
) -> Result<Vec<PromptRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (id, ex) in examples {
        let instance = IclInstance::from_anchor(ex)?;
        let copies = config.oversample.get(&ex.lang).copied().unwrap_or(1);
        for rep in 0..copies {
            let meta = sample_meta_examples(meta_pool, &ex.lang, config.meta_examples, &mut rng)?;
            let prompt_seed: u64 = rng.random();
            let owned: Vec<MetaExample> = meta.into_iter().cloned().collect();
            let prompt = build_icl_prompt(&owned, &instance, prompt_seed)?;
            out.push(PromptRecord {
                id: format!("{id}#{rep}"),
                lang: ex.lang.clone(),
                answer: ex.answer_l.clone(),
                answer_en: ex.answer_en.clone(),
                entity_type: ex.entity_type,
                prompt: prompt.text,
            });
        }
    }
    Ok(out)
}

fn strip_quotes(s: &str) -> &str {
    const PAIRS: [(char, char); 5] = [('"', '"'), ('\'', '\''), ('“', '”'), ('「', '」'), ('«', '»')];
    let t = s.trim();
    for (open, close) in PAIRS {
        if let Some(inner) = t.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            return inner.trim();
        }
    }
    t
}

/// Question text from a model response.
///
/// Takes what follows the first response marker (quotes removed); without a
/// marker, the first line ending in a question mark.
pub fn parse_transformed_question(response: &str) -> Result<String> {
    if let Some(pos) = response.find(RESPONSE_MARKER) {
        let rest = &response[pos + RESPONSE_MARKER.len()..];
        if let Some(line) = rest.lines().map(strip_quotes).find(|l| !l.is_empty()) {
            return Ok(line.to_string());
        }
    }
    response
        .lines()
        .map(strip_quotes)
        .find(|l| l.ends_with('?') || l.ends_with('？') || l.ends_with('؟'))
        .map(str::to_string)
        .ok_or_else(|| Error::Unparseable(response.chars().take(200).collect()))
}
