//! Length-prefixed text protocol over TCP.
//!
//! Every message is a frame: a `u32` little-endian byte count followed by
//! that many bytes of UTF-8. Frames larger than [`MAX_FRAME`] are discarded
//! and answered with an error. A connection may carry any number of
//! request/response pairs.
//!
//! Requests:
//!
//! ```text
//! TXTREC/1 HEALTH
//!
//! TXTREC/1 RECOMMEND
//! item: <name>              zero or more, oldest first
//! timestamp: 2021-03-04T12:30:00
//! temperature: 18.5         degrees Celsius
//! weather: <token>
//! store: <token>
//! region: <token>
//! k: 3                      optional, default 3
//! exclude-basket: true      optional, default true
//! ```
//!
//! Responses:
//!
//! ```text
//! TXTREC/1 OK
//! version: <tag>
//! kind: <model kind>        health only
//! cold-start: false         recommend only
//! rec: <name>\t<probability>   one per result, best first
//!
//! TXTREC/1 ERROR
//! version: <tag>
//! code: <category>
//! message: <one line>
//! ```
//!
//! Lines end with `\n`. Probabilities use the shortest decimal form that
//! reads back to the same `f64`.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use crate::data::transactions::parse_timestamp;
use crate::data::RawContext;
use crate::error::{Error, Result};
use crate::store::{AnyBundle, RecommendRequest, RecommendResponse, Recommendation};

pub const PROTOCOL: &str = "TXTREC/1";
pub const MAX_FRAME: usize = 1 << 20;
pub const DEFAULT_K: usize = 3;

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// A frame read from the wire.
#[derive(Debug, PartialEq, Eq)]
pub enum Frame {
    Payload(Vec<u8>),
    /// Announced length exceeded [`MAX_FRAME`]; the bytes were skipped.
    Oversized(usize),
}

/// Reads one frame, or `None` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Frame>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        io::copy(&mut r.take(len as u64), &mut io::sink())?;
        return Ok(Some(Frame::Oversized(len)));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(Frame::Payload(buf)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Health,
    Recommend(RecommendRequest),
}

pub fn encode_request(req: &Request) -> String {
    match req {
        Request::Health => format!("{PROTOCOL} HEALTH\n"),
        Request::Recommend(r) => {
            let mut s = format!("{PROTOCOL} RECOMMEND\n");
            for item in &r.items {
                s.push_str(&format!("item: {item}\n"));
            }
            s.push_str(&format!(
                "timestamp: {}\ntemperature: {}\nweather: {}\nstore: {}\nregion: {}\nk: {}\nexclude-basket: {}\n",
                crate::data::transactions::format_timestamp(&r.context.timestamp),
                r.context.temperature_c,
                r.context.weather,
                r.context.store,
                r.context.region,
                r.k,
                r.exclude_basket
            ));
            s
        }
    }
}

fn fields(lines: std::str::Lines<'_>) -> Result<Vec<(&str, &str)>> {
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once(':')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::format(format!("expected 'key: value', got '{l}'")))
        })
        .collect()
}

pub fn parse_request(text: &str) -> Result<Request> {
    let mut lines = text.lines();
    let head = lines.next().unwrap_or("").trim_end();
    let verb = head
        .strip_prefix(PROTOCOL)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::format(format!("request must start with '{PROTOCOL} <VERB>'")))?;
    let kv = fields(lines)?;
    match verb {
        "HEALTH" => {
            if !kv.is_empty() {
                return Err(Error::format("HEALTH takes no fields"));
            }
            Ok(Request::Health)
        }
        "RECOMMEND" => {
            let mut items = Vec::new();
            let mut single: Vec<(&str, &str)> = Vec::new();
            for (k, v) in kv {
                match k {
                    "item" => items.push(v.to_string()),
                    "timestamp" | "temperature" | "weather" | "store" | "region" | "k" | "exclude-basket" => {
                        if single.iter().any(|(s, _)| *s == k) {
                            return Err(Error::format(format!("field '{k}' given twice")));
                        }
                        single.push((k, v));
                    }
                    other => return Err(Error::format(format!("unknown field '{other}'"))),
                }
            }
            let get = |k: &str| single.iter().find(|(s, _)| *s == k).map(|(_, v)| *v);
            let need = |k: &str| get(k).ok_or_else(|| Error::format(format!("missing field '{k}'")));
            let temperature: f64 = need("temperature")?
                .parse()
                .ok()
                .filter(|t: &f64| t.is_finite())
                .ok_or_else(|| Error::format("temperature must be a finite number"))?;
            let k = match get("k") {
                Some(v) => v.parse().map_err(|_| Error::format(format!("bad k '{v}'")))?,
                None => DEFAULT_K,
            };
            let exclude_basket = match get("exclude-basket") {
                Some("true") | None => true,
                Some("false") => false,
                Some(v) => return Err(Error::format(format!("exclude-basket must be true or false, got '{v}'"))),
            };
            Ok(Request::Recommend(RecommendRequest {
                items,
                context: RawContext {
                    timestamp: parse_timestamp(need("timestamp")?)?,
                    temperature_c: temperature,
                    weather: need("weather")?.to_string(),
                    store: need("store")?.to_string(),
                    region: need("region")?.to_string(),
                },
                k,
                exclude_basket,
            }))
        }
        other => Err(Error::format(format!("unknown verb '{other}'"))),
    }
}

pub fn encode_response(resp: &RecommendResponse) -> String {
    let mut s = format!("{PROTOCOL} OK\nversion: {}\ncold-start: {}\n", resp.version_tag, resp.cold_start);
    for r in &resp.recommendations {
        s.push_str(&format!("rec: {}\t{}\n", r.item, r.probability));
    }
    s
}

pub fn encode_error(version_tag: &str, err: &Error) -> String {
    let message = err.to_string().replace(['\n', '\r'], " ");
    format!(
        "{PROTOCOL} ERROR\nversion: {version_tag}\ncode: {}\nmessage: {message}\n",
        err.category()
    )
}

/// Parses an OK recommend response; an ERROR response becomes `Err`.
/// Item ids are not on the wire and come back as 0.
pub fn parse_response(text: &str) -> Result<RecommendResponse> {
    let mut lines = text.lines();
    let head = lines.next().unwrap_or("");
    let kv = fields(lines)?;
    let get = |k: &str| kv.iter().find(|(s, _)| *s == k).map(|(_, v)| *v);
    if head == format!("{PROTOCOL} ERROR") {
        return Err(Error::Contract(format!(
            "server error [{}]: {}",
            get("code").unwrap_or("?"),
            get("message").unwrap_or("")
        )));
    }
    if head != format!("{PROTOCOL} OK") {
        return Err(Error::format(format!("bad response line '{head}'")));
    }
    let mut recs = Vec::new();
    for (k, v) in &kv {
        if *k == "rec" {
            let (item, p) = v
                .rsplit_once('\t')
                .ok_or_else(|| Error::format(format!("bad rec line '{v}'")))?;
            recs.push(Recommendation {
                item: item.to_string(),
                id: 0,
                probability: p.parse().map_err(|_| Error::format(format!("bad probability '{p}'")))?,
            });
        }
    }
    Ok(RecommendResponse {
        version_tag: get("version").unwrap_or("").to_string(),
        cold_start: get("cold-start") == Some("true"),
        recommendations: recs,
    })
}

/// Answers one request payload against `bundle`.
pub fn respond(bundle: &AnyBundle, payload: &[u8]) -> String {
    let version = bundle.version_tag();
    let text = match std::str::from_utf8(payload) {
        Ok(t) => t,
        Err(_) => return encode_error(version, &Error::format("request is not UTF-8")),
    };
    match parse_request(text) {
        Ok(Request::Health) => format!("{PROTOCOL} OK\nversion: {version}\nkind: {}\n", bundle.kind()),
        Ok(Request::Recommend(req)) => match bundle.predict_top_k(&req) {
            Ok(resp) => encode_response(&resp),
            Err(e) => encode_error(version, &e),
        },
        Err(e) => encode_error(version, &e),
    }
}

struct Shared {
    bundle: RwLock<Arc<AnyBundle>>,
    stop: AtomicBool,
}

impl Shared {
    fn current(&self) -> Arc<AnyBundle> {
        Arc::clone(&self.bundle.read().unwrap_or_else(|p| p.into_inner()))
    }
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
}

/// Controls a running server from another thread.
#[derive(Clone)]
pub struct ServerHandle {
    shared: Arc<Shared>,
    addr: SocketAddr,
}

impl ServerHandle {
    /// Replaces the bundle; requests already in flight finish on the old one.
    pub fn swap(&self, bundle: AnyBundle) {
        *self.shared.bundle.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(bundle);
    }

    pub fn version_tag(&self) -> String {
        self.shared.current().version_tag().to_string()
    }

    /// Stops accepting connections; open connections run until closed.
    pub fn shutdown(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
    }
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, bundle: AnyBundle) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::io("<listen address>", e))?;
        Ok(Server {
            listener,
            shared: Arc::new(Shared {
                bundle: RwLock::new(Arc::new(bundle)),
                stop: AtomicBool::new(false),
            }),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener.local_addr().map_err(|e| Error::io("<listen address>", e))
    }

    pub fn handle(&self) -> Result<ServerHandle> {
        Ok(ServerHandle {
            shared: Arc::clone(&self.shared),
            addr: self.local_addr()?,
        })
    }

    /// Accepts connections until [`ServerHandle::shutdown`], one thread each.
    pub fn run(self) -> Result<()> {
        for stream in self.listener.incoming() {
            if self.shared.stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let shared = Arc::clone(&self.shared);
            std::thread::spawn(move || {
                let _ = serve_connection(stream, &shared);
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> Result<(ServerHandle, std::thread::JoinHandle<Result<()>>)> {
        let handle = self.handle()?;
        Ok((handle, std::thread::spawn(move || self.run())))
    }
}

fn serve_connection(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(frame) = read_frame(&mut reader)? {
        let bundle = shared.current();
        let reply = match frame {
            Frame::Payload(p) => respond(&bundle, &p),
            Frame::Oversized(n) => encode_error(
                bundle.version_tag(),
                &Error::format(format!("frame of {n} bytes exceeds the {MAX_FRAME}-byte limit")),
            ),
        };
        write_frame(&mut writer, reply.as_bytes())?;
    }
    Ok(())
}

/// A blocking client holding one connection.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let io = |e| Error::io("<server address>", e);
        let stream = TcpStream::connect(addr).map_err(io)?;
        stream.set_nodelay(true).map_err(io)?;
        Ok(Client {
            reader: BufReader::new(stream.try_clone().map_err(io)?),
            writer: BufWriter::new(stream),
        })
    }

    /// Sends one raw payload and returns the raw reply text.
    pub fn send(&mut self, payload: &[u8]) -> Result<String> {
        let io = |e| Error::io("<server connection>", e);
        write_frame(&mut self.writer, payload).map_err(io)?;
        match read_frame(&mut self.reader).map_err(io)? {
            Some(Frame::Payload(p)) => String::from_utf8(p).map_err(|_| Error::format("reply is not UTF-8")),
            Some(Frame::Oversized(n)) => Err(Error::format(format!("reply of {n} bytes is too large"))),
            None => Err(Error::format("server closed the connection")),
        }
    }

    pub fn request(&mut self, req: &Request) -> Result<String> {
        self.send(encode_request(req).as_bytes())
    }
}
