//! Desk-scale stand-in for an e-commerce request log.
//!
//! Normal traffic is drawn from shop templates (catalogue pages, cart
//! operations, logins, registration forms). Anomalies reuse the same
//! templates with one parameter value replaced by an attack payload. Every
//! payload contains at least one entry of [`PAYLOAD_TOKENS`], and no normal
//! request contains any of them.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, HttpRequestDoc, Label, Split};
use crate::rng::{self, Rng};

/// Substrings that only ever occur inside anomaly payloads.
pub const PAYLOAD_TOKENS: [&str; 12] = [
    "DROP", "TABLE", "SELECT", "FROM", "WHERE", "LIKE", "script", "alert", "passwd", "exec", "Tamper", "..%2F",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    SqlInjection,
    Xss,
    PathTraversal,
    CommandInjection,
    CrlfInjection,
    /// The given marker alone, substituted for one parameter value.
    Planted(String),
}

impl AnomalyKind {
    pub fn standard() -> Vec<AnomalyKind> {
        vec![
            AnomalyKind::SqlInjection,
            AnomalyKind::Xss,
            AnomalyKind::PathTraversal,
            AnomalyKind::CommandInjection,
            AnomalyKind::CrlfInjection,
        ]
    }

    fn payload(&self, rng: &mut Rng) -> String {
        match self {
            AnomalyKind::SqlInjection => [
                "%27%3B+DROP+TABLE+usuarios%3B+SELECT+*+FROM+datos+WHERE+nombre+LIKE+%27%25",
                "%27+OR+1%3D1+UNION+SELECT+login%2C+password+FROM+usuarios+WHERE+%27a%27+LIKE+%27a",
                "1%27%3B+DROP+TABLE+datos%3B--",
            ]
            .choose(rng)
            .unwrap()
            .to_string(),
            AnomalyKind::Xss => [
                "%3Cscript%3Ealert%28%22Paros%22%29%3B%3C%2Fscript%3E",
                "%22%3E%3Cscript%3Ealert%28document.cookie%29%3C%2Fscript%3E",
            ]
            .choose(rng)
            .unwrap()
            .to_string(),
            AnomalyKind::PathTraversal => {
                let depth = rng.random_range(2..6);
                format!("{}etc%2Fpasswd", "..%2F".repeat(depth))
            }
            AnomalyKind::CommandInjection => [
                "%3C%21--%23exec+cmd%3D%22rm+-rf+%2F%3Bcat+%2Fetc%2Fpasswd%22+--%3E",
                "86%22%3E%3C%21--%23EXEC+cmd%3D%22dir+%22--%3E%3C%21--%23exec+cmd%3D%22ls%22--%3E",
            ]
            .choose(rng)
            .unwrap()
            .to_string(),
            AnomalyKind::CrlfInjection => "%0D%0ASet-cookie%3A+Tamper%3D1041264011025374727".to_owned(),
            AnomalyKind::Planted(marker) => marker.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub normal: usize,
    pub anomaly: usize,
    pub seed: u64,
    pub split: Split,
    pub kinds: Vec<AnomalyKind>,
    pub id_prefix: String,
}

impl SynthSpec {
    pub fn new(normal: usize, anomaly: usize, seed: u64) -> Self {
        Self {
            normal,
            anomaly,
            seed,
            split: if anomaly == 0 { Split::Train } else { Split::Inference },
            kinds: AnomalyKind::standard(),
            id_prefix: "syn".to_owned(),
        }
    }
}

const PRODUCTS: [&str; 8] = [
    "Jam%F3n+Ib%E9rico",
    "Queso+Manchego",
    "Vino+Rioja",
    "Aceite+de+oliva",
    "Turr%F3n",
    "Chorizo+picante",
    "Mazap%E1n",
    "Caf%E9+molido",
];
const NAMES: [&str; 10] = [
    "maria", "jose", "lucia", "pedro", "carmen", "antonio", "elena", "pablo", "sara", "diego",
];
const CITIES: [&str; 6] = ["Madrid", "Sevilla", "Valencia", "Bilbao", "Granada", "Zaragoza"];
const STATIC: [&str; 5] = [
    "/tienda1/index.jsp",
    "/tienda1/publico/productos.jsp",
    "/tienda1/global/menum.jsp",
    "/tienda1/publico/caracteristicas.jsp",
    "/tienda1/miembros/salir.jsp",
];

const USER_AGENTS: [&str; 4] = [
    "Mozilla/5.0 (compatible; Konqueror/3.5; Linux) KHTML/3.5.8 (like Gecko)",
    "Mozilla/5.0 (X11; Linux x86_64; rv:102.0) Gecko/20100101 Firefox/102.0",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/110.0 Safari/537.36",
    "Wget/1.21.3",
];
const ACCEPTS: [&str; 3] = [
    "Accept: text/xml,application/xml,application/xhtml+xml,text/html;q=0.9,text/plain;q=0.8,image/png,*/*;q=0.5",
    "Accept: text/html,application/xhtml+xml,application/xml;q=0.9,*/*;q=0.8",
    "Accept: */*",
];
const LANGUAGES: [&str; 4] = ["en", "es", "es-ES,es;q=0.9,en;q=0.5", "en-US,en;q=0.8"];

struct Request {
    method: &'static str,
    path: String,
    params: Vec<(String, String)>,
    in_body: bool,
}

impl Request {
    fn query(&self) -> String {
        self.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("&")
    }
}

fn random_digits(rng: &mut Rng, n: usize) -> String {
    (0..n).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect()
}

fn random_hex(rng: &mut Rng, n: usize) -> String {
    (0..n).map(|_| char::from_digit(rng.random_range(0..16), 16).unwrap().to_ascii_uppercase()).collect()
}

fn template(rng: &mut Rng) -> Request {
    let name = *NAMES.choose(rng).unwrap();
    let p = |k: &str, v: String| (k.to_owned(), v);
    match rng.random_range(0..7) {
        0 => Request {
            method: "GET",
            path: STATIC.choose(rng).unwrap().to_string(),
            params: Vec::new(),
            in_body: false,
        },
        1 => Request {
            method: "GET",
            path: "/tienda1/publico/anadir.jsp".into(),
            params: vec![
                p("id", rng.random_range(1..5).to_string()),
                p("nombre", PRODUCTS.choose(rng).unwrap().to_string()),
                p("precio", rng.random_range(10..120).to_string()),
                p("cantidad", rng.random_range(1..99).to_string()),
                p("B1", "A%F1adir+al+carrito".into()),
            ],
            in_body: false,
        },
        2 => Request {
            method: if rng.random_bool(0.5) { "GET" } else { "POST" },
            path: "/tienda1/publico/autenticar.jsp".into(),
            params: vec![
                p("modo", "entrar".into()),
                p("login", format!("{name}{}", random_digits(rng, 2))),
                p("pwd", format!("{}{}", random_hex(rng, 4).to_ascii_lowercase(), random_digits(rng, 3))),
                p("remember", if rng.random_bool(0.5) { "on" } else { "off" }.into()),
                p("B1", "Entrar".into()),
            ],
            in_body: false,
        },
        3 => Request {
            method: "POST",
            path: "/tienda1/publico/registro.jsp".into(),
            params: vec![
                p("modo", "registro".into()),
                p("login", name.to_owned()),
                p("password", random_hex(rng, 8).to_ascii_lowercase()),
                p("nombre", name.to_owned()),
                p("email", format!("{name}%40correo.es")),
                p("dni", format!("{}{}", random_digits(rng, 8), char::from(b'A' + rng.random_range(0..26u8)))),
                p("direccion", format!("Calle+Mayor+{}", rng.random_range(1..200))),
                p("ciudad", CITIES.choose(rng).unwrap().to_string()),
                p("cp", random_digits(rng, 5)),
                p("ntc", random_digits(rng, 16)),
                p("B1", "Registrar".into()),
            ],
            in_body: true,
        },
        4 => Request {
            method: "GET",
            path: "/tienda1/publico/vaciar.jsp".into(),
            params: vec![p("B2", "Vaciar+carrito".into())],
            in_body: false,
        },
        5 => Request {
            method: "GET",
            path: "/tienda1/publico/pagar.jsp".into(),
            params: vec![
                p("modo", "insertar".into()),
                p("precio", rng.random_range(20..900).to_string()),
                p("B1", "Confirmar".into()),
            ],
            in_body: false,
        },
        _ => Request {
            method: "GET",
            path: format!("/tienda1/imagenes/{}.gif", rng.random_range(1..12)),
            params: Vec::new(),
            in_body: false,
        },
    }
}

fn render(req: &Request, rng: &mut Rng) -> Vec<String> {
    let query = req.query();
    let uri = if req.in_body || query.is_empty() {
        req.path.clone()
    } else {
        format!("{}?{}", req.path, query)
    };
    let mut lines = vec![
        format!("{} http://localhost:8080{} HTTP/1.1", req.method, uri),
        format!("User-Agent: {}", USER_AGENTS.choose(rng).unwrap()),
    ];
    // Optional headers vary so that no header line is shared by every request.
    if rng.random_bool(0.7) {
        lines.push("Pragma: no-cache".into());
        lines.push("Cache-control: no-cache".into());
    }
    lines.push(ACCEPTS.choose(rng).unwrap().to_string());
    if rng.random_bool(0.8) {
        lines.push("Accept-Encoding: x-gzip, x-deflate, gzip, deflate".into());
    }
    if rng.random_bool(0.6) {
        lines.push("Accept-Charset: utf-8, utf-8;q=0.5, *;q=0.5".into());
    }
    lines.push(format!("Accept-Language: {}", LANGUAGES.choose(rng).unwrap()));
    lines.push("Host: localhost:8080".into());
    lines.push(format!("Cookie: JSESSIONID={}", random_hex(rng, 32)));
    let connection = if rng.random_bool(0.5) { "Connection: close" } else { "Connection: keep-alive" };
    if req.in_body {
        lines.push("Content-Type: application/x-www-form-urlencoded".into());
        lines.push(connection.into());
        lines.push(format!("Content-Length: {}", query.len()));
        lines.push(String::new());
        lines.push(query);
    } else {
        lines.push(connection.into());
    }
    lines
}

fn inject(req: &mut Request, kind: &AnomalyKind, rng: &mut Rng) {
    let payload = kind.payload(rng);
    if req.params.is_empty() {
        req.params.push(("id".into(), payload));
        return;
    }
    let slot = rng.random_range(0..req.params.len());
    let keep_prefix = !matches!(kind, AnomalyKind::Planted(_)) && rng.random_bool(0.5);
    let value = &mut req.params[slot].1;
    *value = if keep_prefix { format!("{value}{payload}") } else { payload };
}

/// Generates a labelled corpus; identical specs give identical corpora.
pub fn generate_synthetic_corpus(spec: &SynthSpec) -> Result<Corpus, CorpusError> {
    if spec.split == Split::Train && spec.anomaly > 0 {
        return Err(CorpusError::Invalid("a train split cannot contain anomalies".into()));
    }
    if spec.anomaly > 0 && spec.kinds.is_empty() {
        return Err(CorpusError::Invalid("anomalies requested without payload kinds".into()));
    }
    let mut rng = rng::seeded(spec.seed);
    let total = spec.normal + spec.anomaly;
    // Interleave classes deterministically so prefixes of the corpus stay mixed.
    let mut labels: Vec<Label> = std::iter::repeat_n(Label::Normal, spec.normal)
        .chain(std::iter::repeat_n(Label::Anomaly, spec.anomaly))
        .collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);

    let width = total.to_string().len();
    let docs = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut req = template(&mut rng);
            let source = if label == Label::Anomaly {
                let kind = spec.kinds.choose(&mut rng).unwrap();
                inject(&mut req, kind, &mut rng);
                format!("synthetic:{}", serde_json::to_string(kind).unwrap().trim_matches('"'))
            } else {
                "synthetic:normal".to_owned()
            };
            let lines = render(&req, &mut rng);
            HttpRequestDoc::new(format!("{}-{:0width$}", spec.id_prefix, i), label, lines, source)
        })
        .collect();
    Corpus::new(docs, spec.split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse::is_request_line;

    #[test]
    fn normal_only() {
        let c = generate_synthetic_corpus(&SynthSpec::new(10, 0, 1)).unwrap();
        assert_eq!(c.len(), 10);
        assert!(c.docs().iter().all(|d| d.label == Label::Normal));
        assert_eq!(c.split(), Split::Train);
    }

    #[test]
    fn payload_tokens_only_in_anomalies() {
        let c = generate_synthetic_corpus(&SynthSpec::new(300, 300, 9)).unwrap();
        for doc in c.docs() {
            let text = doc.lines.join("\n");
            let hits = PAYLOAD_TOKENS.iter().filter(|t| text.contains(*t)).count();
            match doc.label {
                Label::Normal => assert_eq!(hits, 0, "normal doc {} carries a payload token", doc.id),
                _ => assert!(hits > 0, "anomaly {} has no payload token", doc.id),
            }
            assert!(is_request_line(&doc.lines[0]));
        }
        for needle in ["DROP", "SELECT", "FROM"] {
            assert!(c.docs().iter().any(|d| d.lines.join(" ").contains(needle)));
        }
    }

    #[test]
    fn deterministic() {
        let spec = SynthSpec::new(20, 20, 5);
        assert_eq!(generate_synthetic_corpus(&spec).unwrap(), generate_synthetic_corpus(&spec).unwrap());
        let other = SynthSpec { seed: 6, ..spec.clone() };
        assert_ne!(generate_synthetic_corpus(&spec).unwrap(), generate_synthetic_corpus(&other).unwrap());
    }

    #[test]
    fn planted_marker() {
        let spec = SynthSpec {
            kinds: vec![AnomalyKind::Planted("DROP".into())],
            ..SynthSpec::new(30, 30, 2)
        };
        let c = generate_synthetic_corpus(&spec).unwrap();
        for doc in c.docs() {
            let has = doc.lines.iter().any(|l| l.contains("DROP"));
            assert_eq!(has, doc.label == Label::Anomaly);
        }
    }
}
