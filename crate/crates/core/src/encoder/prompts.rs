use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const MS_PROMPT: &str = "a multispectral image";
pub const PAN_PROMPT: &str = "a panchromatic image";
pub const WALD_PROMPT: &str = "High-quality reference image adhering to Wald's protocol: spectrally consistent with original data and spatially sharp";
pub const KHAN_PROMPT: &str = "High-quality fused image adhering to Khan's protocol: spectrally consistent after MTF degradation and spatially consistent with panchromatic details";
pub const NOISE_PROMPT: &str = "an image independent of the inputs";
pub const DESC1_PROMPT: &str = "This image is the fusion image of the input image";
pub const DESC2_PROMPT: &str = "a fused product of the MS and PAN images";

/// Which sentence describes the HRMS / fusion target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum PromptVariant {
    #[default]
    Wald,
    Khan,
    Noise,
    DescI,
    DescII,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 5] = [
        PromptVariant::Wald,
        PromptVariant::Khan,
        PromptVariant::Noise,
        PromptVariant::DescI,
        PromptVariant::DescII,
    ];

    pub fn hrms_text(self) -> &'static str {
        match self {
            PromptVariant::Wald => WALD_PROMPT,
            PromptVariant::Khan => KHAN_PROMPT,
            PromptVariant::Noise => NOISE_PROMPT,
            PromptVariant::DescI => DESC1_PROMPT,
            PromptVariant::DescII => DESC2_PROMPT,
        }
    }

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptVariant::Wald => "Wald",
            PromptVariant::Khan => "Khan",
            PromptVariant::Noise => "Noise",
            PromptVariant::DescI => "DescI",
            PromptVariant::DescII => "DescII",
        })
    }
}

impl FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown prompt variant {s:?}")))
    }
}

/// Lowercases and splits on anything that is not alphanumeric or an
/// apostrophe.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Closed vocabulary over every prompt the encoder can see, in sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    max_len: usize,
}

impl Vocabulary {
    pub fn standard() -> Self {
        let texts = [MS_PROMPT, PAN_PROMPT]
            .into_iter()
            .chain(PromptVariant::ALL.iter().map(|v| v.hrms_text()));
        let mut set = BTreeSet::new();
        let mut max_len = 0;
        for t in texts {
            let toks = tokenize(t);
            max_len = max_len.max(toks.len());
            set.extend(toks);
        }
        Vocabulary {
            tokens: set.into_iter().collect(),
            max_len,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Longest prompt, in tokens.
    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let ids = tokenize(text)
            .into_iter()
            .map(|t| {
                self.tokens
                    .binary_search(&t)
                    .map_err(|_| Error::Vocabulary(t.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        if ids.is_empty() {
            return Err(Error::Vocabulary(text.to_string()));
        }
        Ok(ids)
    }
}

/// Token ids of the three type prompts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptSet {
    pub ms: Vec<usize>,
    pub pan: Vec<usize>,
    pub hrms: Vec<usize>,
    pub variant: PromptVariant,
}

impl PromptSet {
    pub fn new(vocab: &Vocabulary, variant: PromptVariant) -> Result<Self> {
        Ok(PromptSet {
            ms: vocab.encode(MS_PROMPT)?,
            pan: vocab.encode(PAN_PROMPT)?,
            hrms: vocab.encode(variant.hrms_text())?,
            variant,
        })
    }
}
