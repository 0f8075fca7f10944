use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use super::{AttributionReport, ExplainError};
use crate::corpus::HttpRequestDoc;
use crate::tokenizer::{BbpeVocab, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HighlightFormat {
    Ansi,
    Html,
}

impl FromStr for HighlightFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ansi" => Ok(HighlightFormat::Ansi),
            "html" => Ok(HighlightFormat::Html),
            other => Err(format!("unknown highlight format {other:?} (expected ansi or html)")),
        }
    }
}

/// Per-character intensity in `[0, 1]` for one line.
fn char_intensities(line: &str, vocab: &BbpeVocab, intensity: &HashMap<TokenId, f64>) -> Vec<(char, f64)> {
    let mut per_byte = Vec::with_capacity(line.len());
    for id in vocab.encode(line, false) {
        let len = vocab.token_bytes(id).map_or(0, <[u8]>::len);
        let v = intensity.get(&id).copied().unwrap_or(0.0);
        per_byte.extend(std::iter::repeat_n(v, len));
    }
    line.char_indices()
        .map(|(i, c)| {
            let v = per_byte[i..i + c.len_utf8()].iter().copied().fold(0.0, f64::max);
            (c, v)
        })
        .collect()
}

/// Runs of equal intensity.
fn runs(chars: &[(char, f64)]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for &(c, v) in chars {
        match out.last_mut() {
            Some((text, last)) if *last == v => text.push(c),
            _ => out.push((c.to_string(), v)),
        }
    }
    out
}

fn escape_html(text: &str, out: &mut String) {
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c if c.is_control() => write!(out, "&#x{:x};", 0x2400 + (c as u32 & 0x1f)).unwrap(),
            c => out.push(c),
        }
    }
}

/// Control characters are shown as their Unicode control pictures so that
/// request bytes cannot drive the terminal.
fn sanitize_terminal(text: &str) -> String {
    text.chars()
        .map(|c| match c as u32 {
            n @ 0..=0x1f => char::from_u32(0x2400 + n).unwrap(),
            0x7f => '\u{2421}',
            _ if c.is_control() => '\u{fffd}',
            _ => c,
        })
        .collect()
}

/// Colours tokens with positive score; intensity is the score divided by the
/// largest positive score in the report.
pub fn render_highlight(
    doc: &HttpRequestDoc,
    report: &AttributionReport,
    vocab: &BbpeVocab,
    format: HighlightFormat,
) -> Result<String, ExplainError> {
    if report.doc_id != doc.id {
        return Err(ExplainError::MismatchedReport {
            report: report.doc_id.clone(),
            doc: doc.id.clone(),
        });
    }
    let max = report.entries.iter().map(|e| e.score).fold(0.0, f64::max);
    let intensity: HashMap<TokenId, f64> = if max > 0.0 {
        report
            .entries
            .iter()
            .filter(|e| e.score > 0.0)
            .map(|e| (e.token_id, e.score / max))
            .collect()
    } else {
        HashMap::new()
    };

    let mut out = String::new();
    if format == HighlightFormat::Html {
        out.push_str("<pre class=\"reqvec-highlight\" data-doc=\"");
        escape_html(&doc.id, &mut out);
        out.push_str("\">");
    }
    for (n, line) in doc.lines.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        for (text, v) in runs(&char_intensities(line, vocab, &intensity)) {
            match format {
                HighlightFormat::Html if v > 0.0 => {
                    write!(out, "<span style=\"background-color: rgba(220, 20, 60, {v:.3})\">").unwrap();
                    escape_html(&text, &mut out);
                    out.push_str("</span>");
                }
                HighlightFormat::Html => escape_html(&text, &mut out),
                HighlightFormat::Ansi if v > 0.0 => {
                    let fade = (255.0 * (1.0 - v)).round() as u8;
                    write!(out, "\x1b[48;2;255;{fade};{fade}m\x1b[30m{}\x1b[0m", sanitize_terminal(&text)).unwrap();
                }
                HighlightFormat::Ansi => out.push_str(&sanitize_terminal(&text)),
            }
        }
    }
    if format == HighlightFormat::Html {
        out.push_str("</pre>");
    }
    Ok(out)
}

/// Wraps rendered fragments in a standalone XHTML-compatible page.
pub fn html_document(title: &str, fragments: &[String]) -> String {
    let mut out = String::from("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\" /><title>");
    escape_html(title, &mut out);
    out.push_str("</title></head><body>\n");
    for f in fragments {
        out.push_str(f);
        out.push('\n');
    }
    out.push_str("</body></html>\n");
    out
}
