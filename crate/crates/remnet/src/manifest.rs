//! Tab-separated dataset manifest.
//!
//! First line is the header `path  model_label  device_id  scene_id  width
//! height`; one image per following line. Paths are relative to the
//! manifest's directory unless absolute.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use remnet_core::data::ImageRecord;

use crate::error::{IoError, IoResult};

pub const HEADER: [&str; 6] = ["path", "model_label", "device_id", "scene_id", "width", "height"];

pub fn format_manifest(records: &[ImageRecord]) -> String {
    let mut out = HEADER.join("\t");
    out.push('\n');
    for r in records {
        writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", r.path, r.model_label, r.device_id, r.scene_id, r.width, r.height).unwrap();
    }
    out
}

pub fn parse_manifest(text: &str, origin: &Path) -> IoResult<Vec<ImageRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split('\t').eq(HEADER) => {}
        _ => return Err(IoError::schema(origin, 1, format!("header must be `{}`", HEADER.join("\\t")))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != HEADER.len() {
            return Err(IoError::schema(origin, n, format!("expected {} fields, found {}", HEADER.len(), f.len())));
        }
        let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| IoError::schema(origin, n, format!("{what} `{s}` is not a non-negative integer")));
        if f[0].is_empty() || f[2].is_empty() || f[3].is_empty() {
            return Err(IoError::schema(origin, n, "path, device_id and scene_id must be non-empty"));
        }
        out.push(ImageRecord {
            path: f[0].to_string(),
            model_label: num(f[1], "model_label")?,
            device_id: f[2].to_string(),
            scene_id: f[3].to_string(),
            width: num(f[4], "width")?,
            height: num(f[5], "height")?,
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> IoResult<Vec<ImageRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_manifest(&text, path)
}

pub fn write_manifest(path: &Path, records: &[ImageRecord]) -> IoResult<()> {
    std::fs::write(path, format_manifest(records)).map_err(|e| IoError::io(path, e))
}

/// Absolute location of a record's image.
pub fn resolve(manifest: &Path, record: &ImageRecord) -> PathBuf {
    let p = Path::new(&record.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Rewrites relative paths so they stay valid from another directory.
pub fn rebase(records: &[ImageRecord], from_manifest: &Path, to_dir: &Path) -> Vec<ImageRecord> {
    records
        .iter()
        .map(|r| {
            let abs = resolve(from_manifest, r);
            let path = std::path::absolute(&abs).unwrap_or(abs);
            let rel = pathdiff(&path, &std::path::absolute(to_dir).unwrap_or_else(|_| to_dir.to_path_buf()));
            ImageRecord {
                path: rel.to_string_lossy().into_owned(),
                ..r.clone()
            }
        })
        .collect()
}

/// `path` relative to `base` when `base` is a prefix, else `path` itself.
fn pathdiff(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize) -> ImageRecord {
        ImageRecord {
            path: format!("m/{i}.png"),
            model_label: i % 3,
            device_id: format!("d{i}"),
            scene_id: "s001".into(),
            width: 512,
            height: 384,
        }
    }

    #[test]
    fn round_trip() {
        let rs: Vec<_> = (0..5).map(rec).collect();
        assert_eq!(parse_manifest(&format_manifest(&rs), Path::new("m.tsv")).unwrap(), rs);
    }

    #[test]
    fn schema_errors_name_the_line() {
        let text = format!("{}\nx\t1\td\ts\t5\n", HEADER.join("\t"));
        match parse_manifest(&text, Path::new("m.tsv")).unwrap_err() {
            IoError::Schema { line, .. } => assert_eq!(line, 2),
            e => panic!("{e:?}"),
        }
        assert!(parse_manifest("a\tb\n", Path::new("m.tsv")).is_err());
        let bad_num = format!("{}\nx\tone\td\ts\t5\t5\n", HEADER.join("\t"));
        assert!(matches!(parse_manifest(&bad_num, Path::new("m.tsv")), Err(IoError::Schema { line: 2, .. })));
    }
}
