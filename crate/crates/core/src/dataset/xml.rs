//! Just enough XML to read cascade model files: elements and text, with
//! attributes, comments, processing instructions and doctypes skipped.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub(crate) struct Element {
    pub name: String,
    pub text: String,
    pub children: Vec<Element>,
}

impl Element {
    pub fn child(&self, name: &str) -> Option<&Element> {
        self.children.iter().find(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Element> {
        self.child(name)
            .ok_or_else(|| Error::Detector(format!("<{}> lacks <{name}>", self.name)))
    }

    /// Depth-first search for the first element called `name`.
    pub fn find(&self, name: &str) -> Option<&Element> {
        if self.name == name {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(name))
    }
}

fn decode_entities(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&apos;", "'")
        .replace("&amp;", "&")
}

fn err(msg: impl Into<String>) -> Error {
    Error::Detector(format!("cascade XML: {}", msg.into()))
}

pub(crate) fn parse(src: &str) -> Result<Element> {
    let mut stack: Vec<Element> = vec![Element::default()];
    let mut rest = src;
    while !rest.is_empty() {
        let Some(lt) = rest.find('<') else {
            stack.last_mut().expect("root").text.push_str(&decode_entities(rest));
            break;
        };
        stack
            .last_mut()
            .expect("root")
            .text
            .push_str(&decode_entities(&rest[..lt]));
        rest = &rest[lt..];
        if let Some(r) = rest.strip_prefix("<!--") {
            let end = r.find("-->").ok_or_else(|| err("unterminated comment"))?;
            rest = &r[end + 3..];
        } else if rest.starts_with("<?") || rest.starts_with("<!") {
            let end = rest.find('>').ok_or_else(|| err("unterminated declaration"))?;
            rest = &rest[end + 1..];
        } else if let Some(r) = rest.strip_prefix("</") {
            let end = r.find('>').ok_or_else(|| err("unterminated end tag"))?;
            let name = r[..end].trim();
            let done = stack.pop().ok_or_else(|| err("unbalanced tags"))?;
            if done.name != name || stack.is_empty() {
                return Err(err(format!("mismatched </{name}>")));
            }
            stack.last_mut().expect("parent").children.push(done);
            rest = &r[end + 1..];
        } else {
            let end = rest.find('>').ok_or_else(|| err("unterminated tag"))?;
            let inner = &rest[1..end];
            let self_closing = inner.ends_with('/');
            let inner = inner.trim_end_matches('/');
            let name = inner
                .split(|c: char| c.is_whitespace())
                .next()
                .filter(|n| !n.is_empty())
                .ok_or_else(|| err("empty tag name"))?;
            let el = Element {
                name: name.to_string(),
                ..Default::default()
            };
            if self_closing {
                stack.last_mut().expect("parent").children.push(el);
            } else {
                stack.push(el);
            }
            rest = &rest[end + 1..];
        }
    }
    if stack.len() != 1 {
        return Err(err("unclosed elements"));
    }
    Ok(stack.pop().expect("root"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_elements() {
        let doc = r#"<?xml version="1.0"?>
<!-- header -->
<root kind="x"><a>1 2</a><b><_>x &amp; y</_><_/></b></root>"#;
        let root = parse(doc).unwrap();
        let r = root.child("root").unwrap();
        assert_eq!(r.require("a").unwrap().text, "1 2");
        let b = r.child("b").unwrap();
        assert_eq!(b.children.len(), 2);
        assert_eq!(b.children[0].text, "x & y");
        assert!(root.find("b").is_some());
    }

    #[test]
    fn rejects_mismatched_tags() {
        assert!(parse("<a><b></a></b>").is_err());
        assert!(parse("<a>").is_err());
    }
}
