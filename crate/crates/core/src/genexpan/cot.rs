//! Chain-of-thought prompting: ask the generator for the seeds' class name
//! and shared attributes first, then condition entity generation on them.
//!
//! The reply format is one line of `|`-separated fields:
//!
//! ```text
//! Class: Airports in Michigan | Attr: location=Michigan | Neg: owner=private
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::LanguageModel;

/// Token budget for the class/attribute reply.
pub const COT_MAX_TOKENS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CotMode {
    #[serde(rename = "class_name")]
    ClassName,
    #[serde(rename = "class+pos_attrs")]
    ClassPos,
    #[serde(rename = "class+pos+neg_attrs")]
    ClassPosNeg,
}

impl std::str::FromStr for CotMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_name" => Ok(Self::ClassName),
            "class+pos_attrs" => Ok(Self::ClassPos),
            "class+pos+neg_attrs" => Ok(Self::ClassPosNeg),
            _ => Err(Error::invalid(format!(
                "unknown CoT mode `{s}` (expected class_name, class+pos_attrs or class+pos+neg_attrs)"
            ))),
        }
    }
}

impl std::fmt::Display for CotMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ClassName => "class_name",
            Self::ClassPos => "class+pos_attrs",
            Self::ClassPosNeg => "class+pos+neg_attrs",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotContext {
    pub class_name: String,
    pub pos_attrs: Vec<String>,
    pub neg_attrs: Vec<String>,
}

impl CotContext {
    pub fn is_empty(&self) -> bool {
        self.class_name.is_empty() && self.pos_attrs.is_empty() && self.neg_attrs.is_empty()
    }

    /// Sentences prepended to the generation prompt; empty for an empty
    /// context.
    pub fn preamble(&self) -> String {
        let mut out = String::new();
        if !self.class_name.is_empty() {
            out.push_str(&format!("The class is {}. ", self.class_name));
        }
        if !self.pos_attrs.is_empty() {
            out.push_str(&format!("Shared attributes: {}. ", self.pos_attrs.join(", ")));
        }
        if !self.neg_attrs.is_empty() {
            out.push_str(&format!("Excluded attributes: {}. ", self.neg_attrs.join(", ")));
        }
        out
    }
}

/// One CoT exchange, as logged to the transcript file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotRecord {
    pub mode: CotMode,
    pub prompt: String,
    pub reply: String,
    pub parsed: CotContext,
}

/// The reasoning prompt for `mode`.
pub fn cot_prompt(pos_names: &[&str], neg_names: Option<&[&str]>, mode: CotMode) -> String {
    let mut p = format!("Entities: {}.", pos_names.join(", "));
    let negs = neg_names.filter(|n| !n.is_empty() && mode == CotMode::ClassPosNeg);
    if let Some(neg) = negs {
        p.push_str(&format!(" Entities to exclude: {}.", neg.join(", ")));
    }
    p.push_str(match mode {
        CotMode::ClassName => " Name the fine-grained class they share. Reply as: Class: <name>",
        CotMode::ClassPos => {
            " Name the fine-grained class they share and the attributes on which they agree. \
             Reply as: Class: <name> | Attr: <attribute>=<value>, ..."
        }
        CotMode::ClassPosNeg => {
            " Name the fine-grained class they share, the attributes on which they agree, and \
             the attributes of the entities to exclude. \
             Reply as: Class: <name> | Attr: <attribute>=<value>, ... | Neg: <attribute>=<value>, ..."
        }
    });
    p
}

/// Parses a reply, or `None` if it has no non-empty `Class:` field.
pub fn parse_cot_reply(reply: &str) -> Option<CotContext> {
    let list = |s: &str| -> Vec<String> {
        s.split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(String::from)
            .collect()
    };
    let mut ctx = CotContext::default();
    for field in reply.lines().next().unwrap_or("").split('|') {
        let field = field.trim();
        if let Some(v) = field.strip_prefix("Class:") {
            ctx.class_name = v.trim().to_string();
        } else if let Some(v) = field.strip_prefix("Attr:") {
            ctx.pos_attrs = list(v);
        } else if let Some(v) = field.strip_prefix("Neg:") {
            ctx.neg_attrs = list(v);
        }
    }
    (!ctx.class_name.is_empty()).then_some(ctx)
}

/// Asks the LM for the class and attributes and keeps the fields `mode`
/// allows. An unparseable reply gives an empty context and a warning.
pub fn cot_augment(
    lm: &dyn LanguageModel,
    pos_names: &[&str],
    neg_names: Option<&[&str]>,
    mode: CotMode,
) -> Result<CotRecord> {
    if pos_names.is_empty() {
        return Err(Error::invalid("CoT needs at least one positive seed"));
    }
    let prompt = cot_prompt(pos_names, neg_names, mode);
    let reply = lm
        .complete(&prompt, COT_MAX_TOKENS)
        .map_err(|e| Error::provider_in("complete", e))?;
    let parsed = match parse_cot_reply(&reply) {
        Some(mut ctx) => {
            if mode != CotMode::ClassPosNeg {
                ctx.neg_attrs.clear();
            }
            if mode == CotMode::ClassName {
                ctx.pos_attrs.clear();
            }
            ctx
        }
        None => {
            log::debug!("could not parse CoT reply {reply:?}; continuing without it");
            CotContext::default()
        }
    };
    Ok(CotRecord {
        mode,
        prompt,
        reply,
        parsed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{StubLm, Tokenizer};

    fn lm(reply: &str) -> StubLm {
        StubLm::random(0, Tokenizer::character()).with_default_reply(reply)
    }

    #[test]
    fn parses_case_study_reply() {
        let rec = cot_augment(
            &lm("Class: Airports in Michigan | Attr: location=Michigan"),
            &["A", "B"],
            None,
            CotMode::ClassPos,
        )
        .unwrap();
        assert_eq!(rec.parsed.class_name, "Airports in Michigan");
        assert_eq!(rec.parsed.pos_attrs, ["location=Michigan"]);
        assert!(rec.parsed.neg_attrs.is_empty());
    }

    #[test]
    fn mode_limits_fields() {
        let reply = "Class: Phones | Attr: os=android, brand=x | Neg: origin=asia";
        let names = ["a"];
        let negs: &[&str] = &["b"];
        let c = cot_augment(&lm(reply), &names, Some(negs), CotMode::ClassName).unwrap();
        assert_eq!(c.parsed.class_name, "Phones");
        assert!(c.parsed.pos_attrs.is_empty() && c.parsed.neg_attrs.is_empty());
        let c = cot_augment(&lm(reply), &names, Some(negs), CotMode::ClassPos).unwrap();
        assert_eq!(c.parsed.pos_attrs.len(), 2);
        assert!(c.parsed.neg_attrs.is_empty());
        let c = cot_augment(&lm(reply), &names, Some(negs), CotMode::ClassPosNeg).unwrap();
        assert_eq!(c.parsed.neg_attrs, ["origin=asia"]);
        assert!(c.prompt.contains("Entities to exclude: b."));
    }

    #[test]
    fn garbage_reply_degrades() {
        let rec = cot_augment(&lm("no idea, sorry"), &["a"], None, CotMode::ClassPos).unwrap();
        assert!(rec.parsed.is_empty());
        assert_eq!(rec.parsed.preamble(), "");
        assert!(parse_cot_reply("Class:   | Attr: a=b").is_none());
    }

    #[test]
    fn preamble_layout() {
        let ctx = CotContext {
            class_name: "Android phones".into(),
            pos_attrs: vec!["os=android".into()],
            neg_attrs: vec![],
        };
        assert_eq!(ctx.preamble(), "The class is Android phones. Shared attributes: os=android. ");
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [CotMode::ClassName, CotMode::ClassPos, CotMode::ClassPosNeg] {
            assert_eq!(m.to_string().parse::<CotMode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{m}\""));
        }
        assert!("class".parse::<CotMode>().is_err());
    }
}
