use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How codes become vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    /// Table learned end to end.
    Learned,
    /// Learned table row evolved by a neural ODE over the elapsed time.
    Ode,
    /// Learned table row with the elapsed time appended.
    ConcatTime,
    /// Frozen pretrained medical concept embedding.
    Mce,
}

/// Treatment of the time gap between consecutive events inside the GRU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeMode {
    None,
    ConcatDelta,
    ExpDecay,
    OdeDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Attention,
    FinalState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArchitectureSpec {
    OdeRnnAttn,
    OdeRnn,
    RnnOdeDecayAttn,
    RnnOdeDecay,
    RnnExpDecayAttn,
    RnnExpDecay,
    RnnConcatAttn,
    RnnConcat,
    OdeAttn,
    AttnConcatTime,
    MceRnnAttn,
    MceRnn,
    MceAttn,
    LogisticBaseline,
}

use ArchitectureSpec::*;

impl ArchitectureSpec {
    pub const ALL: [ArchitectureSpec; 14] = [
        OdeRnnAttn,
        OdeRnn,
        RnnOdeDecayAttn,
        RnnOdeDecay,
        RnnExpDecayAttn,
        RnnExpDecay,
        RnnConcatAttn,
        RnnConcat,
        OdeAttn,
        AttnConcatTime,
        MceRnnAttn,
        MceRnn,
        MceAttn,
        LogisticBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OdeRnnAttn => "OdeRnnAttn",
            OdeRnn => "OdeRnn",
            RnnOdeDecayAttn => "RnnOdeDecayAttn",
            RnnOdeDecay => "RnnOdeDecay",
            RnnExpDecayAttn => "RnnExpDecayAttn",
            RnnExpDecay => "RnnExpDecay",
            RnnConcatAttn => "RnnConcatAttn",
            RnnConcat => "RnnConcat",
            OdeAttn => "OdeAttn",
            AttnConcatTime => "AttnConcatTime",
            MceRnnAttn => "MceRnnAttn",
            MceRnn => "MceRnn",
            MceAttn => "MceAttn",
            LogisticBaseline => "LogisticBaseline",
        }
    }

    /// Human-readable name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            OdeRnnAttn => "ODE + RNN + Attention",
            OdeRnn => "ODE + RNN",
            RnnOdeDecayAttn => "RNN (ODE time decay) + Attention",
            RnnOdeDecay => "RNN (ODE time decay)",
            RnnExpDecayAttn => "RNN (exp time decay) + Attention",
            RnnExpDecay => "RNN (exp time decay)",
            RnnConcatAttn => "RNN (concatenated Δtime) + Attention",
            RnnConcat => "RNN (concatenated Δtime)",
            OdeAttn => "ODE + Attention",
            AttnConcatTime => "Attention (concatenated time)",
            MceRnnAttn => "MCE + RNN + Attention",
            MceRnn => "MCE + RNN",
            MceAttn => "MCE + Attention",
            LogisticBaseline => "Logistic Regression",
        }
    }

    pub fn is_deep(self) -> bool {
        self != LogisticBaseline
    }

    pub fn embedding(self) -> Option<EmbeddingKind> {
        Some(match self {
            OdeRnnAttn | OdeRnn | OdeAttn => EmbeddingKind::Ode,
            RnnOdeDecayAttn | RnnOdeDecay | RnnExpDecayAttn | RnnExpDecay | RnnConcatAttn | RnnConcat => {
                EmbeddingKind::Learned
            }
            AttnConcatTime => EmbeddingKind::ConcatTime,
            MceRnnAttn | MceRnn | MceAttn => EmbeddingKind::Mce,
            LogisticBaseline => return None,
        })
    }

    /// Recurrent layer and its time mode, if the variant has one.
    pub fn recurrence(self) -> Option<TimeMode> {
        match self {
            OdeRnnAttn | OdeRnn | MceRnnAttn | MceRnn => Some(TimeMode::None),
            RnnOdeDecayAttn | RnnOdeDecay => Some(TimeMode::OdeDecay),
            RnnExpDecayAttn | RnnExpDecay => Some(TimeMode::ExpDecay),
            RnnConcatAttn | RnnConcat => Some(TimeMode::ConcatDelta),
            OdeAttn | AttnConcatTime | MceAttn | LogisticBaseline => None,
        }
    }

    pub fn pooling(self) -> Option<Pooling> {
        match self {
            OdeRnn | RnnOdeDecay | RnnExpDecay | RnnConcat | MceRnn => Some(Pooling::FinalState),
            LogisticBaseline => None,
            _ => Some(Pooling::Attention),
        }
    }

    pub fn needs_mce(self) -> bool {
        self.embedding() == Some(EmbeddingKind::Mce)
    }
}

impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchitectureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|a| a.name().to_ascii_lowercase() == norm)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!(
                    "unknown architecture {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}
