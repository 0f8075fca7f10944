use super::{CorpusError, HttpRequestDoc, Label};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// Line 0 must be `METHOD SP URI SP VERSION`.
    FullRequest,
    /// Accept any non-empty text, e.g. bare first lines or URIs.
    Lines,
}

/// Splits a raw request into lines.
///
/// CRLF is the line terminator when present anywhere in the input; otherwise
/// bare LF is used. A stray LF inside a CRLF-terminated request stays in its
/// line so normalization can literalize it. Trailing empty lines are dropped.
pub fn parse_http_request(
    raw: &[u8],
    mode: ParseMode,
    id: impl Into<String>,
    label: Label,
    source: impl Into<String>,
) -> Result<HttpRequestDoc, CorpusError> {
    if raw.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let text = String::from_utf8_lossy(raw);
    let mut lines: Vec<String> = if text.contains("\r\n") {
        text.split("\r\n").map(str::to_owned).collect()
    } else {
        text.split('\n').map(str::to_owned).collect()
    };
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    if mode == ParseMode::FullRequest && !is_request_line(&lines[0]) {
        return Err(CorpusError::MalformedRequestLine(lines[0].clone()));
    }
    Ok(HttpRequestDoc::new(id, label, lines, source))
}

pub(crate) fn is_request_line(line: &str) -> bool {
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() < 3 {
        return false;
    }
    let method = fields[0];
    let version = fields[fields.len() - 1];
    let uri = fields[1..fields.len() - 1].join(" ");
    !method.is_empty()
        && method.bytes().all(|b| b.is_ascii_uppercase() || b == b'-' || b == b'_')
        && !uri.is_empty()
        && version.starts_with("HTTP/")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(raw: &[u8]) -> Result<HttpRequestDoc, CorpusError> {
        parse_http_request(raw, ParseMode::FullRequest, "t", Label::Unlabeled, "test")
    }

    #[test]
    fn minimal_request() {
        let doc = parse(b"GET / HTTP/1.1\r\nHost: a\r\n\r\n").unwrap();
        assert_eq!(doc.lines, vec!["GET / HTTP/1.1", "Host: a"]);
    }

    #[test]
    fn uri_preserved() {
        let uri = "/tienda1/publico/vaciar.jsp?B2=Vaciar+carrito%27%3B+DROP+TABLE+usuarios%3B+SELECT+*+FROM+datos+WHERE+nombre+LIKE+%27%25";
        let raw = format!("GET {uri} HTTP/1.1\r\nHost: localhost:8080\r\n\r\n");
        let doc = parse(raw.as_bytes()).unwrap();
        assert_eq!(doc.lines[0], format!("GET {uri} HTTP/1.1"));
    }

    #[test]
    fn malformed_and_empty() {
        assert!(matches!(parse(b"???"), Err(CorpusError::MalformedRequestLine(_))));
        assert!(matches!(parse(b""), Err(CorpusError::EmptyInput)));
        assert!(matches!(parse(b"\r\n\r\n"), Err(CorpusError::EmptyInput)));
        let lines = parse_http_request(b"???", ParseMode::Lines, "t", Label::Unlabeled, "x").unwrap();
        assert_eq!(lines.lines, vec!["???"]);
    }

    #[test]
    fn bare_lf_fallback_and_embedded_lf() {
        let doc = parse(b"GET / HTTP/1.1\nHost: a\n").unwrap();
        assert_eq!(doc.lines, vec!["GET / HTTP/1.1", "Host: a"]);

        // CRLF framing with a body that ends in bare LF keeps the LF.
        let doc = parse(b"POST /x HTTP/1.1\r\nHost: a\r\n\r\nid=1\n").unwrap();
        assert_eq!(doc.lines, vec!["POST /x HTTP/1.1", "Host: a", "", "id=1\n"]);
        assert_eq!(doc.body_separator(), Some(2));
    }

    #[test]
    fn header_lookup() {
        let doc = parse(b"GET / HTTP/1.1\r\nHost: example\r\nAccept: */*\r\n\r\nhost: body").unwrap();
        assert_eq!(doc.header_value("host"), Some("example"));
        assert_eq!(doc.header_value("Cookie"), None);
    }
}
