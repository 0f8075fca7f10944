use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{CorpusError, HttpRequestDoc};
use crate::rng;

/// URI prefixes stripped by the ids2018 profile, longest first.
pub const DVWA_PREFIXES: [&str; 4] = ["/DVWA/vulnerabilities/xss", "/DVWA/dvwa", "DVWA/dvwa", "/DVWA"];

const DEFAULT_TEXT_CONTENT_TYPES: [&str; 4] = [
    "application/json",
    "application/x-www-form-urlencoded",
    "application/xml",
    "text/",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    Csic,
    Ids2018,
    UmpFirstline,
    Identity,
}

impl ProfileName {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileName::Csic => "csic",
            ProfileName::Ids2018 => "ids2018",
            ProfileName::UmpFirstline => "ump_firstline",
            ProfileName::Identity => "identity",
        }
    }
}

impl fmt::Display for ProfileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileName {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csic" => Ok(ProfileName::Csic),
            "ids2018" => Ok(ProfileName::Ids2018),
            "ump" | "ump_firstline" => Ok(ProfileName::UmpFirstline),
            "identity" => Ok(ProfileName::Identity),
            other => Err(CorpusError::UnknownProfile(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ids2018Options {
    pub host_pool: Vec<String>,
    pub seed: u64,
    pub drop_headers: Vec<String>,
    /// Reject requests whose body is not declared as text (see
    /// [`passes_content_type_filter`]).
    pub require_text_content_type: bool,
    pub text_content_types: Vec<String>,
}

impl Default for Ids2018Options {
    fn default() -> Self {
        Self {
            host_pool: Vec::new(),
            seed: 0,
            drop_headers: vec!["Upgrade-Insecure-Requests".to_owned()],
            require_text_content_type: true,
            text_content_types: DEFAULT_TEXT_CONTENT_TYPES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationProfile {
    pub name: ProfileName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids2018: Option<Ids2018Options>,
}

impl NormalizationProfile {
    pub fn new(name: ProfileName) -> Self {
        let ids2018 = (name == ProfileName::Ids2018).then(Ids2018Options::default);
        Self { name, ids2018 }
    }

    pub fn from_name(name: &str) -> Result<Self, CorpusError> {
        Ok(Self::new(name.parse()?))
    }

    pub fn ids2018(options: Ids2018Options) -> Self {
        Self {
            name: ProfileName::Ids2018,
            ids2018: Some(options),
        }
    }
}

/// Applies a normalization profile. Every profile is idempotent.
///
/// All profiles except `identity` replace raw CR and LF characters inside a
/// line with the two-character escapes `\r` and `\n`, so CRLF-injection
/// payloads stay visible to the tokenizer.
pub fn normalize_request(doc: &HttpRequestDoc, profile: &NormalizationProfile) -> HttpRequestDoc {
    match profile.name {
        ProfileName::Identity => doc.clone(),
        ProfileName::Csic => literalize(doc.clone()),
        ProfileName::UmpFirstline => {
            let mut out = doc.clone();
            out.lines.truncate(1);
            literalize(out)
        }
        ProfileName::Ids2018 => {
            let default = Ids2018Options::default();
            let options = profile.ids2018.as_ref().unwrap_or(&default);
            literalize(sanitize_with(doc, options))
        }
    }
}

fn literalize(mut doc: HttpRequestDoc) -> HttpRequestDoc {
    for line in &mut doc.lines {
        if line.contains(['\r', '\n']) {
            *line = line.replace('\r', "\\r").replace('\n', "\\n");
        }
    }
    doc
}

/// Removes the artefacts that make the IDS2018 web-attack captures trivially
/// separable: the fixed Host value, DVWA URI prefixes and the
/// `Upgrade-Insecure-Requests` header.
///
/// The replacement host is drawn from a stream keyed by `seed` and the doc id,
/// so the result is a pure function of its inputs.
pub fn ids2018_sanitize(doc: &HttpRequestDoc, host_pool: &[String], seed: u64) -> HttpRequestDoc {
    let options = Ids2018Options {
        host_pool: host_pool.to_vec(),
        seed,
        ..Ids2018Options::default()
    };
    sanitize_with(doc, &options)
}

fn sanitize_with(doc: &HttpRequestDoc, options: &Ids2018Options) -> HttpRequestDoc {
    let mut out = doc.clone();
    if let Some(first) = out.lines.first_mut() {
        *first = strip_dvwa(first);
    }

    let headers = out.header_range();
    let mut kept = Vec::with_capacity(out.lines.len());
    for (i, line) in out.lines.into_iter().enumerate() {
        if headers.contains(&i) {
            let name = line.split_once(':').map(|(k, _)| k.trim()).unwrap_or("");
            if options.drop_headers.iter().any(|h| h.eq_ignore_ascii_case(name)) {
                continue;
            }
            if name.eq_ignore_ascii_case("host") && !options.host_pool.is_empty() {
                let mut rng = rng::keyed(options.seed, &doc.id);
                let host = &options.host_pool[rng.random_range(0..options.host_pool.len())];
                kept.push(format!("Host: {host}"));
                continue;
            }
        }
        kept.push(line);
    }
    out.lines = kept;
    out
}

fn strip_dvwa(request_line: &str) -> String {
    let mut fields: Vec<&str> = request_line.split(' ').collect();
    if fields.len() < 3 {
        return request_line.to_owned();
    }
    let mut uri = fields[1].to_owned();
    'outer: loop {
        for prefix in DVWA_PREFIXES {
            if let Some(rest) = uri.strip_prefix(prefix) {
                uri = if rest.starts_with('/') {
                    rest.to_owned()
                } else {
                    format!("/{rest}")
                };
                continue 'outer;
            }
        }
        break;
    }
    fields[1] = &uri;
    fields.join(" ")
}

/// True when the request either has no body or declares a text content type.
pub fn passes_content_type_filter(doc: &HttpRequestDoc, options: &Ids2018Options) -> bool {
    if !options.require_text_content_type {
        return true;
    }
    let has_body = doc
        .body_separator()
        .is_some_and(|sep| doc.lines[sep + 1..].iter().any(|l| !l.is_empty()));
    if !has_body {
        return true;
    }
    match doc.header_value("Content-Type") {
        Some(ct) => {
            let ct = ct.to_ascii_lowercase();
            options.text_content_types.iter().any(|allowed| ct.starts_with(allowed.as_str()))
        }
        None => false,
    }
}
