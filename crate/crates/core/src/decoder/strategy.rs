use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const TOP_K_SWEEP: [usize; 3] = [50, 100, 200];
pub const TOP_P_SWEEP: [f64; 3] = [0.90, 0.95, 0.97];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    NoContrast,
    NoContrastVhead,
    NoContrastTopk,
    NoContrastTopp,
    Cd,
    CdTopk,
    CdTopp,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::NoContrast,
        StrategyKind::NoContrastVhead,
        StrategyKind::NoContrastTopk,
        StrategyKind::NoContrastTopp,
        StrategyKind::Cd,
        StrategyKind::CdTopk,
        StrategyKind::CdTopp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::NoContrast => "no_contrast",
            StrategyKind::NoContrastVhead => "no_contrast_vhead",
            StrategyKind::NoContrastTopk => "no_contrast_topk",
            StrategyKind::NoContrastTopp => "no_contrast_topp",
            StrategyKind::Cd => "cd",
            StrategyKind::CdTopk => "cd_topk",
            StrategyKind::CdTopp => "cd_topp",
        }
    }

    pub fn is_contrastive(self) -> bool {
        matches!(self, StrategyKind::Cd | StrategyKind::CdTopk | StrategyKind::CdTopp)
    }

    /// Whether the plausibility mask is applied before any truncation.
    pub fn uses_vhead(self) -> bool {
        self.is_contrastive() || self == StrategyKind::NoContrastVhead
    }

    pub fn uses_top_k(self) -> bool {
        matches!(self, StrategyKind::NoContrastTopk | StrategyKind::CdTopk)
    }

    pub fn uses_top_p(self) -> bool {
        matches!(self, StrategyKind::NoContrastTopp | StrategyKind::CdTopp)
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::argument(format!("unknown decoding strategy `{s}`")))
    }
}

/// One decoding strategy as a flat record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingStrategy {
    pub kind: StrategyKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default)]
    pub ban_eos: bool,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

impl DecodingStrategy {
    fn base(kind: StrategyKind) -> Self {
        DecodingStrategy { kind, alpha: DEFAULT_ALPHA, lambda: DEFAULT_LAMBDA, k: None, p: None, ban_eos: false }
    }

    pub fn no_contrast() -> Self {
        Self::base(StrategyKind::NoContrast)
    }

    pub fn no_contrast_vhead() -> Self {
        Self::base(StrategyKind::NoContrastVhead)
    }

    pub fn no_contrast_topk(k: usize) -> Self {
        DecodingStrategy { k: Some(k), ..Self::base(StrategyKind::NoContrastTopk) }
    }

    pub fn no_contrast_topp(p: f64) -> Self {
        DecodingStrategy { p: Some(p), ..Self::base(StrategyKind::NoContrastTopp) }
    }

    pub fn cd() -> Self {
        Self::base(StrategyKind::Cd)
    }

    pub fn cd_topk(k: usize) -> Self {
        DecodingStrategy { k: Some(k), ..Self::base(StrategyKind::CdTopk) }
    }

    pub fn cd_topp(p: f64) -> Self {
        DecodingStrategy { p: Some(p), ..Self::base(StrategyKind::CdTopp) }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_ban_eos(mut self, ban: bool) -> Self {
        self.ban_eos = ban;
        self
    }

    pub fn is_contrastive(&self) -> bool {
        self.kind.is_contrastive()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        match (self.kind.uses_top_k(), self.k) {
            (true, Some(k)) if k >= 1 => {}
            (true, _) => return Err(Error::config(format!("{} needs k >= 1", self.kind.name()))),
            (false, Some(_)) => return Err(Error::config(format!("{} takes no k", self.kind.name()))),
            (false, None) => {}
        }
        match (self.kind.uses_top_p(), self.p) {
            (true, Some(p)) if p > 0.0 && p <= 1.0 => {}
            (true, _) => return Err(Error::config(format!("{} needs p in (0, 1]", self.kind.name()))),
            (false, Some(_)) => return Err(Error::config(format!("{} takes no p", self.kind.name()))),
            (false, None) => {}
        }
        Ok(())
    }

    /// Short name used in family ids and report rows, e.g. `cd_topk50`.
    pub fn label(&self) -> String {
        let mut s = self.kind.name().to_string();
        if let Some(k) = self.k {
            s.push_str(&k.to_string());
        }
        if let Some(p) = self.p {
            s.push_str(&format!("{}", (p * 100.0).round() as u32));
        }
        if self.uses_vhead_alpha() && self.alpha != DEFAULT_ALPHA {
            s.push_str(&format!("-a{}", self.alpha));
        }
        if self.is_contrastive() && self.lambda != DEFAULT_LAMBDA {
            s.push_str(&format!("-l{}", self.lambda));
        }
        if self.ban_eos {
            s.push_str("-noeos");
        }
        s
    }

    fn uses_vhead_alpha(&self) -> bool {
        self.kind.uses_vhead()
    }
}

impl fmt::Display for DecodingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Parses `kind` or `kind:param`, e.g. `cd_topk:50`, `no_contrast_topp:0.95`.
impl FromStr for DecodingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let kind: StrategyKind = name.parse()?;
        let mut st = Self::base(kind);
        match param {
            Some(p) if kind.uses_top_k() => {
                st.k = Some(p.parse().map_err(|_| Error::argument(format!("bad k `{p}`")))?);
            }
            Some(p) if kind.uses_top_p() => {
                st.p = Some(p.parse().map_err(|_| Error::argument(format!("bad p `{p}`")))?);
            }
            Some(p) => return Err(Error::argument(format!("{name} takes no parameter, got `{p}`"))),
            None if kind.uses_top_k() || kind.uses_top_p() => {
                return Err(Error::argument(format!("{name} needs a parameter, e.g. `{name}:{}`", if kind.uses_top_k() { "100" } else { "0.95" })));
            }
            None => {}
        }
        st.validate()?;
        Ok(st)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_label() {
        let s: DecodingStrategy = "cd_topk:50".parse().unwrap();
        assert_eq!(s, DecodingStrategy::cd_topk(50));
        assert_eq!(s.label(), "cd_topk50");
        assert_eq!("no_contrast_topp:0.95".parse::<DecodingStrategy>().unwrap().label(), "no_contrast_topp95");
        assert!("cd_topk".parse::<DecodingStrategy>().is_err());
        assert!("cd:3".parse::<DecodingStrategy>().is_err());
        assert!("beam".parse::<DecodingStrategy>().is_err());
    }

    #[test]
    fn validation_ranges() {
        assert!(DecodingStrategy::cd().with_alpha(0.0).validate().is_err());
        assert!(DecodingStrategy::cd().with_alpha(1.0).validate().is_ok());
        assert!(DecodingStrategy::cd().with_lambda(-0.1).validate().is_err());
        assert!(DecodingStrategy::cd_topk(0).validate().is_err());
        assert!(DecodingStrategy::cd_topp(1.2).validate().is_err());
        assert!(DecodingStrategy::no_contrast_topp(1.0).validate().is_ok());
    }

    #[test]
    fn flat_record_round_trip() {
        let s = DecodingStrategy::cd_topp(0.9).with_ban_eos(true);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"kind":"cd_topp","alpha":0.1,"lambda":1.0,"p":0.9,"ban_eos":true}"#);
        assert_eq!(serde_json::from_str::<DecodingStrategy>(&json).unwrap(), s);
        let minimal: DecodingStrategy = serde_json::from_str(r#"{"kind":"cd"}"#).unwrap();
        assert_eq!(minimal, DecodingStrategy::cd());
    }
}
