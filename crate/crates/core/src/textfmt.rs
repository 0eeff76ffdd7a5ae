//! Line-oriented text container shared by datasets, checkpoints and stats
//! tables: a header line `<kind> v<version>`, `#`-prefixed metadata lines,
//! then whitespace-separated data rows.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A parsed container. Line numbers are 1-based and refer to the source.
#[derive(Debug)]
pub struct Container<'a> {
    pub meta: Vec<(usize, &'a str)>,
    pub rows: Vec<(usize, Vec<&'a str>)>,
}

pub fn parse<'a>(text: &'a str, header: &str) -> Result<Container<'a>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
    match lines.next() {
        None => return Err(Error::format(1, "empty file")),
        Some((n, first)) if first.trim() != header => {
            return Err(Error::format(
                n,
                format!("expected header `{header}`, found `{first}`"),
            ));
        }
        Some(_) => {}
    }
    let mut meta = Vec::new();
    let mut rows = Vec::new();
    for (n, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            meta.push((n, rest.trim()));
        } else {
            rows.push((n, line.split_whitespace().collect()));
        }
    }
    Ok(Container { meta, rows })
}

/// Parses `key=value` pairs from a metadata line that starts with `tag`.
pub fn key_values<'a>(
    container: &Container<'a>,
    tag: &str,
) -> Result<(usize, BTreeMap<&'a str, &'a str>)> {
    for &(n, line) in &container.meta {
        let mut words = line.split_whitespace();
        if words.next() != Some(tag) {
            continue;
        }
        let mut map = BTreeMap::new();
        for word in words {
            let (k, v) = word
                .split_once('=')
                .ok_or_else(|| Error::format(n, format!("expected key=value, found `{word}`")))?;
            map.insert(k, v);
        }
        return Ok((n, map));
    }
    Err(Error::format(1, format!("missing `# {tag} ...` line")))
}

pub fn field<T: FromStr>(map: &BTreeMap<&str, &str>, line: usize, key: &str) -> Result<T> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::format(line, format!("missing field `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::format(line, format!("field `{key}`: cannot parse `{raw}`")))
}

pub fn parse_word<T: FromStr>(word: &str, line: usize, what: &str) -> Result<T> {
    word.parse()
        .map_err(|_| Error::format(line, format!("{what}: cannot parse `{word}`")))
}

/// Writes `contents` next to `path` and renames it into place, so readers
/// see either the old file or the complete new one.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_header_and_empty_input() {
        assert!(matches!(parse("", "x v1"), Err(Error::Format { line: 1, .. })));
        assert!(matches!(parse("y v1\n", "x v1"), Err(Error::Format { line: 1, .. })));
    }

    #[test]
    fn splits_meta_and_rows() {
        let c = parse("x v1\n# a k=1 j=2\n\n0 1 2\n1 3\n", "x v1").unwrap();
        assert_eq!(c.meta, vec![(2, "a k=1 j=2")]);
        assert_eq!(c.rows.len(), 2);
        assert_eq!(c.rows[1], (5, vec!["1", "3"]));
        let (n, kv) = key_values(&c, "a").unwrap();
        assert_eq!(n, 2);
        assert_eq!(field::<u32>(&kv, n, "j").unwrap(), 2);
        assert!(field::<u32>(&kv, n, "zz").is_err());
    }
}
