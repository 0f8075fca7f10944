//! Rendered HTML and SVG must parse as well-formed XML.

use quick_xml::events::Event;
use quick_xml::Reader;

use reqvec_core::corpus::{HttpRequestDoc, Label};
use reqvec_core::explain::{html_document, render_highlight, AttributionEntry, AttributionReport, HighlightFormat};
use reqvec_core::project::{scatter_svg, ProjectionPoint};
use reqvec_core::tokenizer::{BbpeVocab, TokenId, BYTE_OFFSET};

fn assert_well_formed(text: &str) {
    let mut reader = Reader::from_str(text);
    let mut depth = 0i32;
    loop {
        match reader.read_event() {
            Ok(Event::Start(_)) => depth += 1,
            Ok(Event::End(_)) => depth -= 1,
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(e) => panic!("malformed at {}: {e}\n{text}", reader.buffer_position()),
        }
    }
    assert_eq!(depth, 0, "unbalanced elements\n{text}");
}

fn hostile_doc() -> (HttpRequestDoc, AttributionReport, BbpeVocab) {
    let lines = vec![
        "GET /a?q=<script>alert('x')</script>&b=\"1\" HTTP/1.1".to_owned(),
        "X-Ctl: \u{1}\u{7}\u{1b}[31m ]]> <!-- & é".to_owned(),
        String::new(),
        "body=%3Cb%3E".to_owned(),
    ];
    let doc = HttpRequestDoc::new("id<&>\"", Label::Anomaly, lines, "t");
    let entries = [b'<', b's', b'&', 0x1b, b'"', b'e']
        .iter()
        .enumerate()
        .map(|(i, &b)| AttributionEntry {
            token_id: BYTE_OFFSET + b as TokenId,
            token: (b as char).to_string(),
            occurrences: 1,
            distance: 0.0,
            scaled: 0.0,
            score: i as f64 - 2.5,
        })
        .collect();
    let report = AttributionReport {
        doc_id: doc.id.clone(),
        base_distance: 1.0,
        degenerate_scale: false,
        entries,
    };
    (doc, report, BbpeVocab::from_merges(300, vec![]).unwrap())
}

#[test]
fn highlight_fragment_and_page_are_well_formed() {
    let (doc, report, vocab) = hostile_doc();
    let fragment = render_highlight(&doc, &report, &vocab, HighlightFormat::Html).unwrap();
    assert!(fragment.contains("<span"));
    assert_well_formed(&fragment);
    assert_well_formed(&html_document("a <title> & more", &[fragment.clone(), fragment]));
}

#[test]
fn ansi_output_contains_no_raw_controls_besides_styling() {
    let (doc, report, vocab) = hostile_doc();
    let ansi = render_highlight(&doc, &report, &vocab, HighlightFormat::Ansi).unwrap();
    let stripped: String = ansi
        .split('\x1b')
        .enumerate()
        .map(|(i, part)| if i == 0 { part } else { part.split_once('m').map_or("", |(_, rest)| rest) })
        .collect();
    assert!(!stripped.chars().any(|c| c.is_control() && c != '\n'), "{stripped:?}");
}

#[test]
fn scatter_svg_is_well_formed() {
    let points: Vec<ProjectionPoint> = (0..12)
        .map(|i| ProjectionPoint {
            doc_id: format!("doc<{i}>&\"x\""),
            x: (i as f64).sin() * 3.0,
            y: i as f64 * 0.5,
            label: [Label::Normal, Label::Anomaly, Label::Unlabeled][i % 3],
        })
        .collect();
    assert_well_formed(&scatter_svg(&points, "t-SNE <map> & co"));
    // A single point has zero extent on both axes.
    assert_well_formed(&scatter_svg(&points[..1], "one"));
}
