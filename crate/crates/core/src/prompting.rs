//! Prompt rendering for the two LLM call shapes — gloss generation and
//! correction of a tagger's first attempt — plus extraction of the gloss
//! from raw model output.
//!
//! The template text lives in `resources/prompts/` and is compiled into the
//! binary. Rendering is pure string assembly: byte-identical inputs yield
//! byte-identical prompts, pinned by golden files under `tests/golden/`.
//! Rendered prompts never end with a trailing newline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::GlossarySubset;

const SYSTEM_TEXT: &str = include_str!("../resources/prompts/system.txt");
const GENERATION_HEADER: &str = include_str!("../resources/prompts/generation_header.txt");
const EXAMPLE_BLOCK: &str = include_str!("../resources/prompts/example_block.txt");
const GENERATION_GLOSSARY: &str = include_str!("../resources/prompts/generation_glossary.txt");
const GENERATION_FOOTER: &str = include_str!("../resources/prompts/generation_footer.txt");
const HYBRID_HEADER: &str = include_str!("../resources/prompts/hybrid_header.txt");
const HYBRID_EXAMPLES_INTRO: &str = include_str!("../resources/prompts/hybrid_examples_intro.txt");
const HYBRID_GLOSSARY: &str = include_str!("../resources/prompts/hybrid_glossary.txt");
const HYBRID_FOOTER: &str = include_str!("../resources/prompts/hybrid_footer.txt");

/// Which call shape a prompt belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    /// Gloss from scratch, guided by retrieved examples.
    Generation,
    /// Correct a statistical model's first attempt.
    Hybrid,
}

/// A fully rendered prompt, ready for a chat-completion backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub system_text: String,
    pub user_text: String,
    pub mode: PromptMode,
    /// Number of in-context examples included.
    pub shot_count: usize,
    /// Which dictionary subset the prompt carries.
    pub glossary_mode: GlossarySubset,
}

/// One in-context example, already rendered to surface strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedExample {
    /// 1-based position in the prompt.
    pub ordinal: usize,
    pub segmented: String,
    pub gloss: String,
}

impl RenderedExample {
    /// Builds an example, checking that `segmented` and `gloss` agree in
    /// word count and per-word morpheme count (hyphen structure).
    pub fn new(ordinal: usize, segmented: impl Into<String>, gloss: impl Into<String>) -> Result<RenderedExample> {
        let segmented = segmented.into();
        let gloss = gloss.into();
        let seg_words: Vec<&str> = segmented.split(' ').filter(|w| !w.is_empty()).collect();
        let gloss_words: Vec<&str> = gloss.split(' ').filter(|w| !w.is_empty()).collect();
        if seg_words.is_empty() {
            return Err(Error::Argument("example segmented text is empty".into()));
        }
        if seg_words.len() != gloss_words.len() {
            return Err(Error::Argument(format!(
                "example {ordinal}: segmented text has {} words but gloss has {}",
                seg_words.len(),
                gloss_words.len()
            )));
        }
        for (i, (s, g)) in seg_words.iter().zip(&gloss_words).enumerate() {
            let s_hyphens = s.matches('-').count();
            let g_hyphens = g.matches('-').count();
            if s_hyphens != g_hyphens {
                return Err(Error::Argument(format!(
                    "example {ordinal}, word {}: segmented form has {} hyphens but gloss has {}",
                    i + 1,
                    s_hyphens,
                    g_hyphens
                )));
            }
        }
        Ok(RenderedExample {
            ordinal,
            segmented,
            gloss,
        })
    }
}

/// Replaces each `{{name}}` in `template` with its value. Values are
/// inserted verbatim and never rescanned, so placeholder-looking text in
/// the data cannot trigger a second substitution.
fn fill(template: &str, vars: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after.find("}}").ok_or_else(|| {
            Error::parse("prompt template", "unterminated {{ placeholder".to_string())
        })?;
        let name = &after[..close];
        let value = vars
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| {
                Error::parse(
                    "prompt template",
                    format!("placeholder {{{{{name}}}}} has no value"),
                )
            })?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders dictionary pairs as `[m1: g1, m2: g2, ...]`, preserving input
/// order.
pub fn format_glossary_pairs(pairs: &[(String, String)]) -> String {
    let mut out = String::from("[");
    for (i, (morpheme, gloss)) in pairs.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(morpheme);
        out.push_str(": ");
        out.push_str(gloss);
    }
    out.push(']');
    out
}

fn render_example_blocks(examples: &[RenderedExample]) -> Result<String> {
    let mut out = String::new();
    for (i, example) in examples.iter().enumerate() {
        if example.ordinal != i + 1 {
            return Err(Error::Argument(format!(
                "example ordinals must run 1..{}, position {} carries ordinal {}",
                examples.len(),
                i + 1,
                example.ordinal
            )));
        }
        let ordinal = example.ordinal.to_string();
        out.push_str(&fill(
            EXAMPLE_BLOCK,
            &[
                ("ordinal", ordinal.as_str()),
                ("segmented", example.segmented.as_str()),
                ("gloss", example.gloss.as_str()),
            ],
        )?);
    }
    Ok(out)
}

fn check_glossary(glossary: &Option<(GlossarySubset, &[(String, String)])>) -> Result<()> {
    if let Some((GlossarySubset::None, _)) = glossary {
        return Err(Error::Argument(
            "a prompt with a dictionary section cannot use the \"none\" subset; pass no glossary instead".into(),
        ));
    }
    Ok(())
}

/// Renders the gloss-generation prompt: example blocks, an optional
/// morpheme dictionary, the test sentence, and the output-format rule.
pub fn render_generation_prompt(
    examples: &[RenderedExample],
    glossary: Option<(GlossarySubset, &[(String, String)])>,
    test_segmented: &str,
) -> Result<PromptRequest> {
    if examples.is_empty() {
        return Err(Error::Argument(
            "gloss generation needs at least one in-context example".into(),
        ));
    }
    if test_segmented.is_empty() {
        return Err(Error::Argument("test sentence is empty".into()));
    }
    check_glossary(&glossary)?;

    let mut user_text = String::from(GENERATION_HEADER);
    user_text.push_str(&render_example_blocks(examples)?);
    if let Some((_, pairs)) = glossary {
        let rendered = format_glossary_pairs(pairs);
        user_text.push_str(&fill(GENERATION_GLOSSARY, &[("glossary", rendered.as_str())])?);
    }
    user_text.push_str(&fill(GENERATION_FOOTER, &[("test_segmented", test_segmented)])?);

    Ok(PromptRequest {
        system_text: SYSTEM_TEXT.to_string(),
        user_text,
        mode: PromptMode::Generation,
        shot_count: examples.len(),
        glossary_mode: glossary.map_or(GlossarySubset::None, |(mode, _)| mode),
    })
}

/// Renders the correction prompt: the framing header, optional example
/// blocks (omitted entirely for zero-shot), an optional dictionary, the
/// test sentence, and the tagger's initial attempt.
pub fn render_hybrid_prompt(
    examples: &[RenderedExample],
    glossary: Option<(GlossarySubset, &[(String, String)])>,
    test_segmented: &str,
    initial_attempt: &str,
) -> Result<PromptRequest> {
    if initial_attempt.is_empty() {
        return Err(Error::Argument(
            "the hybrid prompt needs a non-empty initial attempt".into(),
        ));
    }
    if test_segmented.is_empty() {
        return Err(Error::Argument("test sentence is empty".into()));
    }
    check_glossary(&glossary)?;

    let mut user_text = String::from(HYBRID_HEADER);
    if !examples.is_empty() {
        user_text.push_str(HYBRID_EXAMPLES_INTRO);
        user_text.push_str(&render_example_blocks(examples)?);
    }
    if let Some((_, pairs)) = glossary {
        let rendered = format_glossary_pairs(pairs);
        user_text.push_str(&fill(HYBRID_GLOSSARY, &[("glossary", rendered.as_str())])?);
    }
    user_text.push_str(&fill(
        HYBRID_FOOTER,
        &[
            ("test_segmented", test_segmented),
            ("initial_attempt", initial_attempt),
        ],
    )?);

    Ok(PromptRequest {
        system_text: SYSTEM_TEXT.to_string(),
        user_text,
        mode: PromptMode::Hybrid,
        shot_count: examples.len(),
        glossary_mode: glossary.map_or(GlossarySubset::None, |(mode, _)| mode),
    })
}

/// Pulls the predicted gloss out of raw model output: the text between the
/// first two `###` markers, trimmed. With fewer than two markers the whole
/// raw string is returned unchanged.
pub fn extract_gloss(raw: &str) -> String {
    if let Some(open) = raw.find("###") {
        let after = &raw[open + 3..];
        if let Some(close) = after.find("###") {
            return after[..close].trim().to_string();
        }
    }
    raw.to_string()
}
