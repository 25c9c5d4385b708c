//! HTML to text: the full document, its raw visible text, and a cleaned
//! main-content text with boilerplate removed. Also flags pages whose
//! content is replaced by paywalls, logins and similar walls.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ego_tree::iter::Edge;
use ego_tree::NodeRef;
use scraper::{Html, Node};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TERMS: &str = include_str!("../data/terms/restriction_terms.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    HtmlFull,
    RawText,
    CleanedText,
}

impl Representation {
    pub const ALL: [Representation; 3] = [
        Representation::HtmlFull,
        Representation::RawText,
        Representation::CleanedText,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Representation::HtmlFull => "html_full",
            Representation::RawText => "raw_text",
            Representation::CleanedText => "cleaned_text",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Representation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown representation {s:?}")))
    }
}

const DROPPED: [&str; 4] = ["script", "style", "noscript", "template"];
const BOILERPLATE: [&str; 5] = ["nav", "header", "footer", "aside", "form"];
const BOILERPLATE_ROLES: [&str; 3] = ["navigation", "banner", "contentinfo"];
const CONTENT_TAGS: [&str; 8] = ["p", "li", "h1", "h2", "h3", "h4", "h5", "h6"];
const CANDIDATE_TAGS: [&str; 7] = ["div", "section", "body", "td", "blockquote", "center", "table"];

const BLOCK_TAGS: [&str; 46] = [
    "address", "article", "aside", "blockquote", "body", "br", "button", "caption", "center",
    "dd", "details", "dialog", "div", "dl", "dt", "fieldset", "figcaption", "figure", "footer",
    "form", "h1", "h2", "h3", "h4", "h5", "h6", "head", "header", "hr", "html", "li", "main",
    "nav", "ol", "option", "p", "pre", "section", "summary", "table", "td", "th", "title", "tr",
    "ul", "textarea",
];

fn element_name(node: NodeRef<'_, Node>) -> Option<&str> {
    match node.value() {
        Node::Element(e) => Some(e.name()),
        _ => None,
    }
}

fn is_dropped(node: NodeRef<'_, Node>) -> bool {
    element_name(node).is_some_and(|n| DROPPED.contains(&n))
}

fn is_boilerplate(node: NodeRef<'_, Node>) -> bool {
    let Node::Element(e) = node.value() else {
        return false;
    };
    BOILERPLATE.contains(&e.name())
        || e
            .attr("role")
            .is_some_and(|r| BOILERPLATE_ROLES.contains(&r.trim().to_ascii_lowercase().as_str()))
}

fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Visible text under `root`, skipping subtrees for which `skip` holds.
fn text_of(root: NodeRef<'_, Node>, skip: &dyn Fn(NodeRef<'_, Node>) -> bool) -> String {
    let mut buf = String::new();
    let mut skipping: Option<ego_tree::NodeId> = None;
    for edge in root.traverse() {
        match edge {
            Edge::Open(node) => {
                if skipping.is_some() {
                    continue;
                }
                if skip(node) {
                    skipping = Some(node.id());
                    continue;
                }
                match node.value() {
                    Node::Text(t) => buf.push_str(t),
                    Node::Element(e) if BLOCK_TAGS.contains(&e.name()) => buf.push(' '),
                    _ => {}
                }
            }
            Edge::Close(node) => {
                if skipping == Some(node.id()) {
                    skipping = None;
                    buf.push(' ');
                    continue;
                }
                if skipping.is_none() && element_name(node).is_some_and(|n| BLOCK_TAGS.contains(&n))
                {
                    buf.push(' ');
                }
            }
        }
    }
    collapse_whitespace(&buf)
}

fn parse(html: &str) -> Html {
    Html::parse_document(html)
}

/// Visible text of the whole document: scripts, styles, templates and
/// comments dropped, whitespace collapsed.
pub fn raw_text(html: &str) -> String {
    if html.trim().is_empty() {
        return String::new();
    }
    let doc = parse(html);
    text_of(doc.tree.root(), &is_dropped)
}

fn stripped(node: NodeRef<'_, Node>) -> bool {
    is_dropped(node) || is_boilerplate(node)
}

/// Walks the document in order without descending into stripped subtrees.
fn kept_nodes<'a>(root: NodeRef<'a, Node>) -> Vec<NodeRef<'a, Node>> {
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(node) = stack.pop() {
        if stripped(node) {
            continue;
        }
        out.push(node);
        let children: Vec<_> = node.children().collect();
        stack.extend(children.into_iter().rev());
    }
    out
}

fn is_main(node: NodeRef<'_, Node>) -> bool {
    match node.value() {
        Node::Element(e) => {
            e.name() == "main"
                || e
                    .attr("role")
                    .is_some_and(|r| r.trim().eq_ignore_ascii_case("main"))
        }
        _ => false,
    }
}

/// Picks the content root by the density rule: score is the text length
/// inside p/li/h* descendants minus twice the text length inside anchors.
fn densest_block<'a>(nodes: &[NodeRef<'a, Node>]) -> Option<(NodeRef<'a, Node>, i64)> {
    let mut scores: HashMap<ego_tree::NodeId, i64> = HashMap::new();
    for node in nodes {
        let Node::Text(t) = node.value() else {
            continue;
        };
        let len = collapse_whitespace(t).chars().count() as i64;
        if len == 0 {
            continue;
        }
        let mut in_content = false;
        let mut in_anchor = false;
        for ancestor in node.ancestors() {
            let Some(name) = element_name(ancestor) else {
                continue;
            };
            if CANDIDATE_TAGS.contains(&name) {
                let delta = if in_content { len } else { 0 } - if in_anchor { 2 * len } else { 0 };
                *scores.entry(ancestor.id()).or_insert(0) += delta;
            }
            if CONTENT_TAGS.contains(&name) {
                in_content = true;
            }
            if name == "a" {
                in_anchor = true;
            }
        }
    }
    let mut best: Option<(NodeRef<'a, Node>, i64)> = None;
    for node in nodes {
        if !element_name(*node).is_some_and(|n| CANDIDATE_TAGS.contains(&n)) {
            continue;
        }
        let score = scores.get(&node.id()).copied().unwrap_or(0);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((*node, score));
        }
    }
    best
}

/// Main-content text.
///
/// Boilerplate containers (nav, header, footer, aside, form and landmark
/// roles) are removed first. The content root is the first `article`, else
/// the first `main`/`role=main`, else the densest block. When no block
/// scores above zero the whole stripped document is used.
pub fn cleaned_text(html: &str) -> String {
    if html.trim().is_empty() {
        return String::new();
    }
    let doc = parse(html);
    let root = doc.tree.root();
    let nodes = kept_nodes(root);
    let chosen = nodes
        .iter()
        .find(|n| element_name(**n) == Some("article"))
        .or_else(|| nodes.iter().find(|n| is_main(**n)))
        .copied()
        .or_else(|| match densest_block(&nodes) {
            Some((node, score)) if score > 0 => Some(node),
            _ => None,
        })
        .unwrap_or(root);
    text_of(chosen, &stripped)
}

pub fn decode_lossy(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

pub fn extract(html: &str, representation: Representation) -> String {
    match representation {
        Representation::HtmlFull => html.to_string(),
        Representation::RawText => raw_text(html),
        Representation::CleanedText => cleaned_text(html),
    }
}

pub fn extract_bytes(html: &[u8], representation: Representation) -> String {
    extract(&decode_lossy(html), representation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestrictionKind {
    JsRequired,
    Paywall,
    Login,
    CookieWall,
    Captcha,
    None,
}

impl RestrictionKind {
    /// Detection priority, highest first.
    pub const PRIORITY: [RestrictionKind; 5] = [
        RestrictionKind::JsRequired,
        RestrictionKind::Paywall,
        RestrictionKind::Login,
        RestrictionKind::CookieWall,
        RestrictionKind::Captcha,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestrictionTerms {
    #[serde(default)]
    pub js_required: Vec<String>,
    #[serde(default)]
    pub paywall: Vec<String>,
    #[serde(default)]
    pub login: Vec<String>,
    #[serde(default)]
    pub cookie_wall: Vec<String>,
    #[serde(default)]
    pub captcha: Vec<String>,
}

impl Default for RestrictionTerms {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_TERMS).expect("bundled restriction terms parse")
    }
}

impl RestrictionTerms {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn terms(&self, kind: RestrictionKind) -> &[String] {
        match kind {
            RestrictionKind::JsRequired => &self.js_required,
            RestrictionKind::Paywall => &self.paywall,
            RestrictionKind::Login => &self.login,
            RestrictionKind::CookieWall => &self.cookie_wall,
            RestrictionKind::Captcha => &self.captcha,
            RestrictionKind::None => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RestrictedFlag {
    pub kind: RestrictionKind,
    pub matched_terms: Vec<String>,
    pub short_content: bool,
}

pub const DEFAULT_SHORT_LIMIT: usize = 500;

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn contains_phrase(haystack: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty()
        && haystack
            .windows(phrase.len())
            .any(|w| w.iter().zip(phrase).all(|(a, b)| a == b))
}

/// Flags restricted content by scanning both texts for per-kind terms.
/// Terms match on whole tokens, so `js` does not fire inside `json`.
pub fn detect_restricted(
    cleaned: &str,
    raw: &str,
    terms: &RestrictionTerms,
    short_limit: usize,
) -> RestrictedFlag {
    let cleaned_tokens = tokens(cleaned);
    let raw_tokens = tokens(raw);
    let short_content = cleaned.chars().count() < short_limit;
    for kind in RestrictionKind::PRIORITY {
        let matched: Vec<String> = terms
            .terms(kind)
            .iter()
            .filter(|term| {
                let phrase = tokens(term);
                contains_phrase(&cleaned_tokens, &phrase) || contains_phrase(&raw_tokens, &phrase)
            })
            .cloned()
            .collect();
        if !matched.is_empty() {
            return RestrictedFlag {
                kind,
                matched_terms: matched,
                short_content,
            };
        }
    }
    RestrictedFlag {
        kind: RestrictionKind::None,
        matched_terms: Vec::new(),
        short_content,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_text_basics() {
        assert_eq!(raw_text("<p>Hello <b>world</b></p>"), "Hello world");
        assert_eq!(raw_text("<script>x=1</script><p>Hi</p>"), "Hi");
        assert_eq!(raw_text(""), "");
        assert_eq!(
            raw_text("<div>a</div><div>b</div><!-- hidden --><style>p{}</style>"),
            "a b"
        );
        assert_eq!(raw_text("<p>a\n\t  b&nbsp;c</p>"), "a b c");
        assert_eq!(raw_text("<p>unclosed <div>tags"), "unclosed tags");
    }

    #[test]
    fn cleaned_prefers_article() {
        let html = "<nav>MENU</nav><article><p>BODY TEXT</p></article><footer>LEGAL</footer>";
        assert_eq!(cleaned_text(html), "BODY TEXT");
    }

    #[test]
    fn cleaned_uses_main_then_density() {
        let html = "<body><div><p>side</p></div><main><p>core</p></main></body>";
        assert_eq!(cleaned_text(html), "core");
        let html = "<body>\
            <div id=links><p><a href=a>one link</a> <a href=b>two link</a></p></div>\
            <div id=story><p>The story text is here.</p><p>More of the story.</p></div>\
            </body>";
        assert_eq!(cleaned_text(html), "The story text is here. More of the story.");
    }

    #[test]
    fn cleaned_falls_back_to_stripped_document() {
        assert_eq!(cleaned_text("<footer>LEGAL</footer>"), "");
        assert_eq!(
            cleaned_text("<footer>LEGAL</footer><span>loose words</span>"),
            "loose words"
        );
        assert_eq!(cleaned_text(""), "");
    }

    #[test]
    fn cleaned_drops_landmark_roles() {
        let html = "<div role=navigation>Home News</div><div role=main><p>Body</p><div role=banner>Ad</div></div>";
        assert_eq!(cleaned_text(html), "Body");
    }

    #[test]
    fn extract_dispatch() {
        let html = "<nav>x</nav><article><p>y</p></article>";
        assert_eq!(extract(html, Representation::HtmlFull), html);
        assert_eq!(extract(html, Representation::RawText), raw_text(html));
        assert_eq!(extract(html, Representation::CleanedText), cleaned_text(html));
        for r in Representation::ALL {
            assert_eq!(extract_bytes(b"", r), "");
            assert_eq!(r.as_str().parse::<Representation>().unwrap(), r);
        }
        assert_eq!(extract_bytes(b"<p>caf\xff</p>", Representation::RawText), "caf\u{fffd}");
    }

    #[test]
    fn restricted_js() {
        let t = RestrictionTerms::default();
        let f = detect_restricted(
            "Bitte aktivieren Sie JavaScript / please activate javascript",
            "",
            &t,
            DEFAULT_SHORT_LIMIT,
        );
        assert_eq!(f.kind, RestrictionKind::JsRequired);
        assert!(f.matched_terms.contains(&"activate javascript".to_string()));
        let f = detect_restricted("this json payload", "", &t, DEFAULT_SHORT_LIMIT);
        assert_eq!(f.kind, RestrictionKind::None);
    }

    #[test]
    fn restricted_paywall_and_plain() {
        let t = RestrictionTerms::default();
        let f = detect_restricted(
            "The first lines of the story. Subscribe now to continue.",
            "",
            &t,
            DEFAULT_SHORT_LIMIT,
        );
        assert_eq!(f.kind, RestrictionKind::Paywall);
        assert!(f.short_content);

        let article = "The council met on Tuesday to discuss the harbour project. ".repeat(40);
        assert!(article.len() >= 2000);
        let f = detect_restricted(&article, &article, &t, DEFAULT_SHORT_LIMIT);
        assert_eq!(f.kind, RestrictionKind::None);
        assert!(f.matched_terms.is_empty());
        assert!(!f.short_content);
    }

    #[test]
    fn restricted_login_from_raw() {
        let t = RestrictionTerms::default();
        let f = detect_restricted("teaser", "Enter your username and password", &t, 10);
        assert_eq!(f.kind, RestrictionKind::Login);
        assert!(f.short_content);
    }
}
