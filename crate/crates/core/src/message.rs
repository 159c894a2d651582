//! TiD message model and the XML attribute codec.
//!
//! A message on the wire is a single empty-element tag:
//!
//! ```text
//! <tid version="0.3.0.0" description="beep" block="1732" family="biosig" event="785" absolute="1330691458,821096" relative="34687,761248" source="P300 detector" value="3,14159"/>
//! ```
//!
//! Tag and attribute names are case sensitive. Numbers accept either `,` or
//! `.` as decimal separator on input; output always uses `,`.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use thiserror::Error;

/// Block number meaning "not known by the sender".
pub const UNKNOWN_BLOCK: i64 = -1;

/// Event family for codes from the biosig event table.
pub const FAMILY_BIOSIG: &str = "biosig";
/// Event family for codes not defined anywhere else.
pub const FAMILY_CUSTOM: &str = "custom";

/// Protocol version spoken by this library.
pub const LIBRARY_VERSION: ProtocolVersion = ProtocolVersion::new(0, 3, 0, 0);

const MICROS_PER_SECOND: u64 = 1_000_000;
const VALUE_FRACTION_DIGITS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessageError {
    #[error("malformed tid element: {0}")]
    MalformedXml(String),
    #[error("missing mandatory attribute `{0}`")]
    MissingMandatory(&'static str),
    #[error("attribute `{0}` is not a valid number")]
    BadNumber(&'static str),
    #[error("bad version format `{0}`, expected CURRENT.REVISION.MINOR.BUGFIX")]
    BadVersionFormat(String),
    #[error("field `{0}` must not be empty")]
    EmptyField(&'static str),
    #[error("block must be -1 or a non-negative block index, got {0}")]
    InvalidBlock(i64),
    #[error("value must be a finite number")]
    NonFiniteValue,
}

/// `CURRENT.REVISION.MINOR.BUGFIX`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProtocolVersion {
    pub current: u32,
    pub revision: u32,
    pub minor: u32,
    pub bugfix: u32,
}

impl ProtocolVersion {
    pub const fn new(current: u32, revision: u32, minor: u32, bugfix: u32) -> Self {
        Self {
            current,
            revision,
            minor,
            bugfix,
        }
    }

    /// Only a change of `current` breaks compatibility; lower fields never do.
    pub fn is_compatible_with(&self, other: &ProtocolVersion) -> bool {
        self.current == other.current
    }
}

pub fn versions_compatible(a: &ProtocolVersion, b: &ProtocolVersion) -> bool {
    a.is_compatible_with(b)
}

impl fmt::Display for ProtocolVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{}.{}.{}",
            self.current, self.revision, self.minor, self.bugfix
        )
    }
}

impl FromStr for ProtocolVersion {
    type Err = MessageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MessageError::BadVersionFormat(s.to_owned());
        let mut fields = [0u32; 4];
        let mut parts = s.split('.');
        for field in fields.iter_mut() {
            let part = parts.next().ok_or_else(bad)?;
            if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            *field = part.parse().map_err(|_| bad())?;
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(Self::new(fields[0], fields[1], fields[2], fields[3]))
    }
}

/// Wall-clock instant, microseconds since 1970-01-01 00:00:00 UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct MicroTime {
    seconds: u64,
    micros: u32,
}

/// Elapsed time from some reference point, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct MicroDuration {
    seconds: u64,
    micros: u32,
}

macro_rules! micro_pair {
    ($ty:ident) => {
        impl $ty {
            pub const ZERO: $ty = $ty {
                seconds: 0,
                micros: 0,
            };

            /// Builds a value, carrying whole seconds out of `micros`.
            pub const fn new(seconds: u64, micros: u64) -> Self {
                Self {
                    seconds: seconds + micros / MICROS_PER_SECOND,
                    micros: (micros % MICROS_PER_SECOND) as u32,
                }
            }

            pub const fn from_micros(total: u64) -> Self {
                Self::new(0, total)
            }

            pub const fn seconds(&self) -> u64 {
                self.seconds
            }

            pub const fn micros(&self) -> u32 {
                self.micros
            }

            pub const fn as_micros(&self) -> u128 {
                self.seconds as u128 * MICROS_PER_SECOND as u128 + self.micros as u128
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{},{:06}", self.seconds, self.micros)
            }
        }

        impl FromStr for $ty {
            type Err = MessageError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let (seconds, micros) =
                    parse_micro_pair(s).ok_or(MessageError::BadNumber(stringify!($ty)))?;
                Ok(Self { seconds, micros })
            }
        }
    };
}

micro_pair!(MicroTime);
micro_pair!(MicroDuration);

impl MicroTime {
    pub fn now() -> Self {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(Self::from)
            .unwrap_or_default()
    }
}

impl From<Duration> for MicroTime {
    /// Interprets the duration as an offset from the Unix epoch.
    fn from(since_epoch: Duration) -> Self {
        Self::new(
            since_epoch.as_secs(),
            u64::from(since_epoch.subsec_micros()),
        )
    }
}

impl From<Duration> for MicroDuration {
    fn from(d: Duration) -> Self {
        Self::new(d.as_secs(), u64::from(d.subsec_micros()))
    }
}

impl From<MicroDuration> for Duration {
    fn from(d: MicroDuration) -> Self {
        Duration::new(d.seconds, d.micros * 1_000)
    }
}

/// Parses `<seconds><sep><fraction>` where `sep` is `,` or `.`.
///
/// The fraction is read as a decimal fraction of a second, so `"5,5"` is
/// 5.5 s. It carries at most six digits.
fn parse_micro_pair(text: &str) -> Option<(u64, u32)> {
    let sep = text.find([',', '.'])?;
    let (whole, frac) = (&text[..sep], &text[sep + 1..]);
    let all_digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(whole) || !all_digits(frac) || frac.len() > VALUE_FRACTION_DIGITS {
        return None;
    }
    let seconds = whole.parse().ok()?;
    let mut micros: u32 = frac.parse().ok()?;
    for _ in frac.len()..VALUE_FRACTION_DIGITS {
        micros *= 10;
    }
    Some((seconds, micros))
}

/// Parses a timestamp attribute; `attr` names it in the error.
pub fn parse_microtime(text: &str, attr: &'static str) -> Result<MicroTime, MessageError> {
    text.parse::<MicroTime>()
        .map_err(|_| MessageError::BadNumber(attr))
}

pub fn parse_microduration(text: &str, attr: &'static str) -> Result<MicroDuration, MessageError> {
    text.parse::<MicroDuration>()
        .map_err(|_| MessageError::BadNumber(attr))
}

/// One TiD event.
///
/// `absolute` and `relative` are `None` when the sender left them for the
/// server to fill in. Such messages serialize without those attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct TidMessage {
    version: ProtocolVersion,
    description: String,
    block: i64,
    family: String,
    event: i64,
    absolute: Option<MicroTime>,
    relative: Option<MicroDuration>,
    source: Option<String>,
    value: Option<f64>,
}

impl TidMessage {
    /// A message with the library version, unknown block and unset
    /// timestamps.
    pub fn new(
        description: impl Into<String>,
        family: impl Into<String>,
        event: i64,
    ) -> Result<Self, MessageError> {
        let description = description.into();
        let family = family.into();
        if description.is_empty() {
            return Err(MessageError::EmptyField("description"));
        }
        if family.is_empty() {
            return Err(MessageError::EmptyField("family"));
        }
        Ok(Self {
            version: LIBRARY_VERSION,
            description,
            block: UNKNOWN_BLOCK,
            family,
            event,
            absolute: None,
            relative: None,
            source: None,
            value: None,
        })
    }

    pub fn with_version(mut self, version: ProtocolVersion) -> Self {
        self.version = version;
        self
    }

    pub fn with_block(mut self, block: i64) -> Result<Self, MessageError> {
        self.set_block(block)?;
        Ok(self)
    }

    pub fn with_absolute(mut self, absolute: MicroTime) -> Self {
        self.absolute = Some(absolute);
        self
    }

    pub fn with_relative(mut self, relative: MicroDuration) -> Self {
        self.relative = Some(relative);
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn with_value(mut self, value: f64) -> Result<Self, MessageError> {
        if !value.is_finite() {
            return Err(MessageError::NonFiniteValue);
        }
        self.value = Some(value);
        Ok(self)
    }

    pub fn set_block(&mut self, block: i64) -> Result<(), MessageError> {
        if block < UNKNOWN_BLOCK {
            return Err(MessageError::InvalidBlock(block));
        }
        self.block = block;
        Ok(())
    }

    pub fn set_absolute(&mut self, absolute: MicroTime) {
        self.absolute = Some(absolute);
    }

    pub fn set_relative(&mut self, relative: MicroDuration) {
        self.relative = Some(relative);
    }

    pub fn version(&self) -> ProtocolVersion {
        self.version
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn block(&self) -> i64 {
        self.block
    }

    pub fn has_known_block(&self) -> bool {
        self.block != UNKNOWN_BLOCK
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn event(&self) -> i64 {
        self.event
    }

    pub fn absolute(&self) -> Option<MicroTime> {
        self.absolute
    }

    pub fn relative(&self) -> Option<MicroDuration> {
        self.relative
    }

    pub fn source(&self) -> Option<&str> {
        self.source.as_deref()
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }

    /// Block known and both timestamps present.
    pub fn is_fully_stamped(&self) -> bool {
        self.has_known_block() && self.absolute.is_some() && self.relative.is_some()
    }

    pub fn to_xml(&self) -> String {
        serialize_message(self)
    }
}

impl fmt::Display for TidMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_message(self))
    }
}

impl FromStr for TidMessage {
    type Err = MessageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_message(s)
    }
}

/// Serializes to the canonical single-line form.
pub fn serialize_message(msg: &TidMessage) -> String {
    let mut out = String::with_capacity(160 + msg.description.len());
    out.push_str("<tid");
    push_attr(&mut out, "version", &msg.version.to_string());
    push_attr(&mut out, "description", &msg.description);
    push_attr(&mut out, "block", &msg.block.to_string());
    push_attr(&mut out, "family", &msg.family);
    push_attr(&mut out, "event", &msg.event.to_string());
    if let Some(absolute) = msg.absolute {
        push_attr(&mut out, "absolute", &absolute.to_string());
    }
    if let Some(relative) = msg.relative {
        push_attr(&mut out, "relative", &relative.to_string());
    }
    if let Some(source) = &msg.source {
        push_attr(&mut out, "source", source);
    }
    if let Some(value) = msg.value {
        push_attr(&mut out, "value", &format_value(value));
    }
    out.push_str("/>");
    out
}

fn push_attr(out: &mut String, name: &str, value: &str) {
    out.push(' ');
    out.push_str(name);
    out.push_str("=\"");
    for c in value.chars() {
        match c {
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            // Literal whitespace controls would be normalized away by an XML
            // reader, and LF would split the frame.
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Up to six fractional digits, trailing zeros trimmed to at least one,
/// `,` as separator.
fn format_value(value: f64) -> String {
    let mut text = format!("{:.*}", VALUE_FRACTION_DIGITS, value);
    while text.ends_with('0') && !text.ends_with(".0") {
        text.pop();
    }
    text.replace('.', ",")
}

fn parse_value(text: &str) -> Option<f64> {
    // Optional sign, digits, at most one separator, optional exponent.
    let bytes = text.as_bytes();
    let mut i = 0;
    if matches!(bytes.first(), Some(b'+' | b'-')) {
        i += 1;
    }
    let mut digits = 0;
    let mut seps = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'0'..=b'9' => digits += 1,
            b',' | b'.' => seps += 1,
            b'e' | b'E' => break,
            _ => return None,
        }
        i += 1;
    }
    if digits == 0 || seps > 1 {
        return None;
    }
    if i < bytes.len() {
        let exp = &text[i + 1..];
        let exp = exp.strip_prefix(['+', '-']).unwrap_or(exp);
        if exp.is_empty() || !exp.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    let value: f64 = text.replace(',', ".").parse().ok()?;
    value.is_finite().then_some(value)
}

fn parse_integer(text: &str) -> Option<i64> {
    let digits = text.strip_prefix(['-', '+']).unwrap_or(text);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    text.parse().ok()
}

/// Decoded attribute slots. Unknown attributes are dropped.
#[derive(Default)]
struct RawAttributes {
    version: Option<String>,
    description: Option<String>,
    block: Option<String>,
    family: Option<String>,
    event: Option<String>,
    absolute: Option<String>,
    relative: Option<String>,
    source: Option<String>,
    value: Option<String>,
}

impl RawAttributes {
    fn slot(&mut self, name: &str) -> Option<&mut Option<String>> {
        Some(match name {
            "version" => &mut self.version,
            "description" => &mut self.description,
            "block" => &mut self.block,
            "family" => &mut self.family,
            "event" => &mut self.event,
            "absolute" => &mut self.absolute,
            "relative" => &mut self.relative,
            "source" => &mut self.source,
            "value" => &mut self.value,
            _ => return None,
        })
    }
}

/// Parses one `<tid .../>` element.
pub fn parse_message(raw: &str) -> Result<TidMessage, MessageError> {
    let attrs = TagScanner::new(raw).scan()?;

    let version = attrs
        .version
        .ok_or(MessageError::MissingMandatory("version"))?
        .parse::<ProtocolVersion>()?;
    let description = attrs
        .description
        .filter(|d| !d.is_empty())
        .ok_or(MessageError::MissingMandatory("description"))?;
    let family = attrs
        .family
        .filter(|f| !f.is_empty())
        .ok_or(MessageError::MissingMandatory("family"))?;
    let event = attrs
        .event
        .ok_or(MessageError::MissingMandatory("event"))
        .and_then(|e| parse_integer(&e).ok_or(MessageError::BadNumber("event")))?;
    let block = match attrs.block {
        None => UNKNOWN_BLOCK,
        Some(b) => match parse_integer(&b) {
            Some(b) if b >= UNKNOWN_BLOCK => b,
            _ => return Err(MessageError::BadNumber("block")),
        },
    };
    let absolute = attrs
        .absolute
        .map(|a| parse_microtime(&a, "absolute"))
        .transpose()?;
    let relative = attrs
        .relative
        .map(|r| parse_microduration(&r, "relative"))
        .transpose()?;
    let value = attrs
        .value
        .map(|v| parse_value(&v).ok_or(MessageError::BadNumber("value")))
        .transpose()?;

    Ok(TidMessage {
        version,
        description,
        block,
        family,
        event,
        absolute,
        relative,
        source: attrs.source,
        value,
    })
}

/// Scanner for the restricted grammar `ws* "<tid" (ws+ attr)* ws* "/>" ws*`.
struct TagScanner<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> TagScanner<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn malformed(&self, what: &str) -> MessageError {
        MessageError::MalformedXml(format!("{what} at byte {}", self.pos))
    }

    fn skip_ws(&mut self) -> bool {
        let rest = self.rest();
        let trimmed = rest.trim_start_matches([' ', '\t']);
        self.pos += rest.len() - trimmed.len();
        rest.len() != trimmed.len()
    }

    fn scan(mut self) -> Result<RawAttributes, MessageError> {
        self.skip_ws();
        if !self.rest().starts_with("<tid") {
            return Err(self.malformed("expected `<tid`"));
        }
        self.pos += 4;

        let mut attrs = RawAttributes::default();
        let mut seen: Vec<&str> = Vec::new();
        loop {
            let had_ws = self.skip_ws();
            if self.rest().starts_with("/>") {
                self.pos += 2;
                break;
            }
            if self.rest().is_empty() {
                return Err(self.malformed("unterminated element"));
            }
            if !had_ws {
                return Err(self.malformed("expected whitespace or `/>`"));
            }
            let name = self.name()?;
            if seen.contains(&name) {
                return Err(self.malformed(&format!("duplicate attribute `{name}`")));
            }
            seen.push(name);
            self.skip_ws();
            if !self.rest().starts_with('=') {
                return Err(self.malformed("expected `=`"));
            }
            self.pos += 1;
            self.skip_ws();
            let value = self.quoted()?;
            if let Some(slot) = attrs.slot(name) {
                *slot = Some(value);
            }
        }
        self.skip_ws();
        if !self.rest().is_empty() {
            return Err(self.malformed("trailing content after element"));
        }
        Ok(attrs)
    }

    fn name(&mut self) -> Result<&'a str, MessageError> {
        let rest = self.rest();
        let mut chars = rest.char_indices();
        match chars.next() {
            Some((_, c)) if c.is_alphabetic() || c == '_' || c == ':' => {}
            _ => return Err(self.malformed("expected attribute name")),
        }
        let end = chars
            .find(|&(_, c)| !(c.is_alphanumeric() || matches!(c, '_' | ':' | '.' | '-')))
            .map_or(rest.len(), |(i, _)| i);
        self.pos += end;
        Ok(&rest[..end])
    }

    fn quoted(&mut self) -> Result<String, MessageError> {
        let rest = self.rest();
        let quote = match rest.chars().next() {
            Some(q @ ('"' | '\'')) => q,
            _ => return Err(self.malformed("expected quoted attribute value")),
        };
        let body_len = rest[1..]
            .find(quote)
            .ok_or_else(|| self.malformed("unterminated attribute value"))?;
        let body = &rest[1..1 + body_len];
        let value = unescape(body).map_err(|what| self.malformed(&what))?;
        self.pos += body_len + 2;
        Ok(value)
    }
}

fn unescape(body: &str) -> Result<String, String> {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(i) = rest.find(['&', '<']) {
        out.push_str(&rest[..i]);
        if rest.as_bytes()[i] == b'<' {
            return Err("`<` inside attribute value".into());
        }
        let after = &rest[i + 1..];
        let end = after
            .find(';')
            .ok_or_else(|| "unterminated entity reference".to_string())?;
        let entity = &after[..end];
        let c = match entity {
            "lt" => '<',
            "gt" => '>',
            "amp" => '&',
            "quot" => '"',
            "apos" => '\'',
            _ => {
                let code = if let Some(hex) = entity.strip_prefix("#x") {
                    u32::from_str_radix(hex, 16).ok()
                } else if let Some(dec) = entity.strip_prefix('#') {
                    dec.parse().ok()
                } else {
                    None
                };
                code.and_then(char::from_u32)
                    .ok_or_else(|| format!("unknown entity `&{entity};`"))?
            }
        };
        out.push(c);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
