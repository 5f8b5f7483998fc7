//! CSV series and JSON output with round-trippable floats.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{ArhmcError, Result};

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

struct RoundTripFormatter(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for RoundTripFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        if v.is_finite() {
            w.write_all(format_float(v).as_bytes())
        } else {
            w.write_all(b"null")
        }
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with every float written to 17 significant digits.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, RoundTripFormatter(serde_json::ser::PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| ArhmcError::Io(e.to_string()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)?)?;
    Ok(())
}

/// Parses a CSV series. A first line that is not numeric is taken as a
/// header; `column` selects a column by header name or 0-based index,
/// defaulting to the first one.
pub fn parse_series_csv(text: &str, column: Option<&str>) -> Result<Vec<f64>> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).peekable();
    let first = lines.peek().ok_or_else(|| ArhmcError::Structural("empty CSV input".into()))?;
    let mut col = 0usize;
    let header_fields: Vec<&str> = first.split(',').map(|s| s.trim().trim_matches('"')).collect();
    let has_header = header_fields.iter().any(|f| f.parse::<f64>().is_err());
    if has_header {
        if let Some(c) = column {
            col = match header_fields.iter().position(|h| *h == c) {
                Some(i) => i,
                None => c.parse().map_err(|_| ArhmcError::Structural(format!("no column `{c}` in CSV header")))?,
            };
        }
        lines.next();
    } else if let Some(c) = column {
        col = c.parse().map_err(|_| ArhmcError::Structural(format!("CSV has no header, column `{c}` must be an index")))?;
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let field = line
            .split(',')
            .nth(col)
            .ok_or_else(|| ArhmcError::Structural(format!("row {} has no column {col}", i + 1)))?
            .trim()
            .trim_matches('"');
        let v: f64 = field
            .parse()
            .map_err(|_| ArhmcError::Structural(format!("row {}: `{field}` is not a number", i + 1)))?;
        if !v.is_finite() {
            return Err(ArhmcError::Domain(format!("row {}: non-finite value", i + 1)));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(ArhmcError::Structural("CSV contains no data rows".into()));
    }
    Ok(out)
}

pub fn read_series_csv(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| ArhmcError::Io(format!("{}: {e}", path.display())))?;
    parse_series_csv(&text, column)
}

/// Writes a single `x` column, optionally with the latent state and noise.
pub fn write_series_csv<W: Write>(x: &[f64], states: Option<&[usize]>, eta: Option<&[f64]>, mut w: W) -> Result<()> {
    let mut header = vec!["x"];
    if states.is_some() {
        header.push("state");
    }
    if eta.is_some() {
        header.push("eta");
    }
    writeln!(w, "{}", header.join(","))?;
    for (t, v) in x.iter().enumerate() {
        let mut line = format_float(*v);
        if let Some(s) = states {
            line.push_str(&format!(",{}", s[t] + 1));
        }
        if let Some(e) = eta {
            line.push(',');
            line.push_str(&format_float(e[t]));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
