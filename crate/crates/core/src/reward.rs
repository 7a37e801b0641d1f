//! Composite reward: environment reward, invalid-action penalty and the three
//! format penalties (length, tag structure, trailing text).

use serde::{Deserialize, Serialize};

use crate::tmsg::EpisodeRecord;

pub const INVALID_ACTION_PENALTY: f64 = -0.5;
pub const DEFECT_PENALTY: f64 = -0.5;
pub const EXTRA_TEXT_PENALTY: f64 = -0.5;
pub const LENGTH_FREE_TOKENS: usize = 180;
pub const LENGTH_FULL_TOKENS: usize = 200;
pub const LENGTH_MAX_PENALTY: f64 = -0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FormatPenalty {
    pub length: f64,
    pub structure: f64,
    pub extra_text: f64,
}

impl FormatPenalty {
    pub fn of(completion: &str, n_tokens: usize) -> Self {
        FormatPenalty {
            length: length_penalty(n_tokens),
            structure: structure_penalty(completion),
            extra_text: extra_text_penalty(completion),
        }
    }

    pub fn total(&self) -> f64 {
        self.length + self.structure + self.extra_text
    }
}

/// Zero up to 180 tokens, then linear down to −0.5 at 200 tokens and beyond.
pub fn length_penalty(n_tokens: usize) -> f64 {
    let span = (LENGTH_FULL_TOKENS - LENGTH_FREE_TOKENS) as f64;
    let excess = (n_tokens as f64 - LENGTH_FREE_TOKENS as f64) / span;
    LENGTH_MAX_PENALTY * excess.clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TagKind {
    Think,
    Action,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct TagEvent {
    kind: TagKind,
    open: bool,
}

const TAGS: [(&str, TagKind, bool); 4] = [
    ("<think>", TagKind::Think, true),
    ("</think>", TagKind::Think, false),
    ("<action>", TagKind::Action, true),
    ("</action>", TagKind::Action, false),
];

fn tag_events(text: &str) -> Vec<TagEvent> {
    let mut events = Vec::new();
    let mut rest = text;
    while let Some(lt) = rest.find('<') {
        rest = &rest[lt..];
        match TAGS.iter().find(|(s, _, _)| rest.starts_with(s)) {
            Some(&(s, kind, open)) => {
                events.push(TagEvent { kind, open });
                rest = &rest[s.len()..];
            }
            None => rest = &rest[1..],
        }
    }
    events
}

/// Number of structural defects relative to `<think>…</think><action>…</action>`.
///
/// Closing tags are matched to the most recent unmatched opening tag of the
/// same kind. Then, for each kind, each unmatched tag is one defect (a missing
/// partner or a stray tag), a kind with no tags at all is two defects, and
/// each matched pair after the first is one defect. Every pair that starts
/// inside another pair (nested or crossing) is one more defect. The relative
/// order of the two sections is not checked.
pub fn structure_defects(text: &str) -> usize {
    let events = tag_events(text);
    let mut open_stack: Vec<(usize, TagKind)> = Vec::new();
    let mut pairs: Vec<(TagKind, usize, usize)> = Vec::new();
    let mut unmatched = 0;
    for (i, e) in events.iter().enumerate() {
        if e.open {
            open_stack.push((i, e.kind));
        } else if let Some(pos) = open_stack.iter().rposition(|&(_, k)| k == e.kind) {
            let (start, kind) = open_stack.remove(pos);
            pairs.push((kind, start, i));
        } else {
            unmatched += 1;
        }
    }
    unmatched += open_stack.len();

    let mut defects = unmatched;
    for kind in [TagKind::Think, TagKind::Action] {
        if !events.iter().any(|e| e.kind == kind) {
            defects += 2;
        }
        let n = pairs.iter().filter(|p| p.0 == kind).count();
        defects += n.saturating_sub(1);
    }
    for &(_, s1, _) in &pairs {
        if pairs.iter().any(|&(_, s2, e2)| s2 < s1 && s1 < e2) {
            defects += 1;
        }
    }
    defects
}

/// −0.5 per structural defect.
pub fn structure_penalty(text: &str) -> f64 {
    DEFECT_PENALTY * structure_defects(text) as f64
}

/// −0.5 if anything other than whitespace follows the last `</action>`.
pub fn extra_text_penalty(text: &str) -> f64 {
    match text.rfind("</action>") {
        Some(i) if !text[i + "</action>".len()..].trim().is_empty() => EXTRA_TEXT_PENALTY,
        _ => 0.0,
    }
}

/// Σ over steps of environment reward, invalid penalty and format penalties.
pub fn composite_reward(episode: &EpisodeRecord) -> f64 {
    episode.steps.iter().map(|s| s.total()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn length_penalty_values() {
        assert_eq!(length_penalty(100), 0.0);
        assert_eq!(length_penalty(180), 0.0);
        assert_eq!(length_penalty(190), -0.25);
        assert_eq!(length_penalty(200), -0.5);
        assert_eq!(length_penalty(250), -0.5);
    }

    #[test]
    fn structure_examples() {
        assert_eq!(
            structure_penalty("<think>a</think><action>up</action>"),
            0.0
        );
        assert_eq!(structure_penalty("<think>a<action>up</action>"), -0.5);
        assert_eq!(
            structure_penalty("<action><think>x</think>up</action><think></think>"),
            -1.0
        );
    }

    #[test]
    fn structure_edge_cases() {
        assert_eq!(structure_defects(""), 4);
        assert_eq!(structure_defects("<action>up</action>"), 2);
        assert_eq!(structure_defects("<think><action></think></action>"), 1);
        assert_eq!(
            structure_defects("<think></think><action>up</action></action>"),
            1
        );
        // Order alone is not a defect.
        assert_eq!(structure_defects("<action>up</action><think></think>"), 0);
        // Unknown tags are ignored.
        assert_eq!(
            structure_defects("<b><think></think></b><action>up</action>"),
            0
        );
    }

    #[test]
    fn extra_text_examples() {
        assert_eq!(extra_text_penalty("<action>up</action>"), 0.0);
        assert_eq!(extra_text_penalty("<action>up</action> ok"), -0.5);
        assert_eq!(extra_text_penalty("<action>up</action>\n  "), 0.0);
        assert_eq!(extra_text_penalty("no tags at all"), 0.0);
    }

    proptest! {
        #[test]
        fn length_penalty_monotone(a in 0usize..400, b in 0usize..400) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(length_penalty(hi) <= length_penalty(lo));
            prop_assert!((-0.5..=0.0).contains(&length_penalty(a)));
        }

        #[test]
        fn structure_penalty_is_half_multiple(s in "(<think>|</think>|<action>|</action>|up|x| ){0,12}") {
            let p = structure_penalty(&s);
            prop_assert!(p <= 0.0);
            prop_assert_eq!((p / -0.5).fract(), 0.0);
        }
    }
}
