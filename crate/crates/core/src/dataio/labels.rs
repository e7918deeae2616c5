use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DataError, EventLabel, StrongLabels, WeakLabels};

const STRONG_HEADER: &str = "filename\tonset\toffset\tevent_label";
const WEAK_HEADER: &str = "filename\tevent_labels";

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse { path: path.to_string(), line, msg: msg.into() }
}

/// Lines starting with `#` and blank lines are skipped. A header line is
/// accepted as the first content line. A row with empty onset, offset and
/// label registers a clip with no events.
pub fn parse_strong(text: &str, path: &str) -> Result<StrongLabels, DataError> {
    let mut out = StrongLabels::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if std::mem::take(&mut first) && line == STRONG_HEADER {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(path, n, format!("expected 4 tab-separated fields, got {}", fields.len())));
        }
        let file = fields[0];
        if file.is_empty() {
            return Err(parse_err(path, n, "empty filename"));
        }
        let events = out.entry(file.to_string()).or_default();
        if fields[1..].iter().all(|f| f.is_empty()) {
            continue;
        }
        let num = |s: &str, what: &str| -> Result<f64, DataError> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, n, format!("bad {what} {s:?}")))
        };
        let onset = num(fields[1], "onset")?;
        let offset = num(fields[2], "offset")?;
        if onset < 0.0 {
            return Err(parse_err(path, n, "negative onset"));
        }
        if onset >= offset {
            return Err(parse_err(path, n, format!("onset {onset} not before offset {offset}")));
        }
        if fields[3].is_empty() {
            return Err(parse_err(path, n, "empty event label"));
        }
        events.push(EventLabel::new(onset, offset, fields[3]));
    }
    Ok(out)
}

pub fn write_strong(labels: &StrongLabels, comment: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(c) = comment {
        let _ = writeln!(s, "# {c}");
    }
    s.push_str(STRONG_HEADER);
    s.push('\n');
    for (file, events) in labels {
        if events.is_empty() {
            let _ = writeln!(s, "{file}\t\t\t");
        }
        let mut sorted: Vec<&EventLabel> = events.iter().collect();
        sorted.sort_by(|a, b| a.onset.total_cmp(&b.onset).then_with(|| a.class_name.cmp(&b.class_name)));
        for e in sorted {
            let _ = writeln!(s, "{file}\t{:.3}\t{:.3}\t{}", e.onset, e.offset, e.class_name);
        }
    }
    s
}

pub fn load_strong(path: &Path) -> Result<StrongLabels, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_strong(&text, &path.display().to_string())
}

pub fn save_strong(path: &Path, labels: &StrongLabels, comment: Option<&str>) -> Result<(), DataError> {
    fs::write(path, write_strong(labels, comment)).map_err(|e| DataError::io(path, e))
}

pub fn parse_weak(text: &str, path: &str) -> Result<WeakLabels, DataError> {
    let mut out = WeakLabels::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if std::mem::take(&mut first) && line == WEAK_HEADER {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(parse_err(path, n, format!("expected 2 tab-separated fields, got {}", fields.len())));
        }
        if fields[0].is_empty() {
            return Err(parse_err(path, n, "empty filename"));
        }
        let tags: BTreeSet<String> =
            fields[1].split(',').filter(|t| !t.is_empty()).map(String::from).collect();
        if out.insert(fields[0].to_string(), tags).is_some() {
            return Err(parse_err(path, n, format!("duplicate filename {}", fields[0])));
        }
    }
    Ok(out)
}

pub fn write_weak(labels: &WeakLabels, comment: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(c) = comment {
        let _ = writeln!(s, "# {c}");
    }
    s.push_str(WEAK_HEADER);
    s.push('\n');
    for (file, tags) in labels {
        let joined: Vec<&str> = tags.iter().map(String::as_str).collect();
        let _ = writeln!(s, "{file}\t{}", joined.join(","));
    }
    s
}

pub fn load_weak(path: &Path) -> Result<WeakLabels, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_weak(&text, &path.display().to_string())
}

pub fn save_weak(path: &Path, labels: &WeakLabels, comment: Option<&str>) -> Result<(), DataError> {
    fs::write(path, write_weak(labels, comment)).map_err(|e| DataError::io(path, e))
}
