//! `key = value` files with `[section]` headers.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Parsed file: section name to ordered key/value pairs. Keys before any
/// header land in the "" section.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IniFile {
    pub sections: BTreeMap<String, Vec<(String, String, usize)>>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

pub fn parse_ini(text: &str, source: &str) -> Result<IniFile> {
    let mut out = IniFile::default();
    let mut section = String::new();
    let err = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(line_no, "unterminated section header".into()))?
                .trim();
            if !valid_name(name) {
                return Err(err(line_no, format!("bad section name {name:?}")));
            }
            section = name.to_string();
            out.sections.entry(section.clone()).or_default();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("expected key = value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if !valid_name(k) {
            return Err(err(line_no, format!("bad key {k:?}")));
        }
        let entries = out.sections.entry(section.clone()).or_default();
        if entries.iter().any(|(key, _, _)| key == k) {
            return Err(err(line_no, format!("duplicate key {k:?} in [{section}]")));
        }
        entries.push((k.to_string(), v.to_string(), line_no));
    }
    Ok(out)
}

impl IniFile {
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)?
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
    }

    pub fn section(&self, name: &str) -> &[(String, String, usize)] {
        self.sections.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Renders back to text; parsing the result gives an equal file modulo line numbers.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            if !name.is_empty() {
                out.push_str(&format!("[{name}]\n"));
            }
            for (k, v, _) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_comments_and_errors() {
        let f = parse_ini("# top\nseed = 3\n\n[train]\nepochs=2 \n; note\n[model]\nembed_dim = 16\n", "c.ini").unwrap();
        assert_eq!(f.get("", "seed"), Some("3"));
        assert_eq!(f.get("train", "epochs"), Some("2"));
        assert_eq!(f.get("model", "embed_dim"), Some("16"));
        assert_eq!(f.get("model", "nope"), None);
        let e = parse_ini("[train]\nepochs 2\n", "c.ini").unwrap_err().to_string();
        assert!(e.starts_with("c.ini:2:"), "{e}");
        assert!(parse_ini("[train\n", "x").is_err());
        assert!(parse_ini("a = 1\na = 2\n", "x").is_err());
        assert!(parse_ini("[bad name]\n", "x").is_err());
    }
}
