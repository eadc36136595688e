//! NMEA 0183 ingestion: checksum-validated sentence parsing and GGA → fix
//! conversion, plus the matching GGA formatter used by the simulator.

use std::fmt;

use thiserror::Error;

use crate::geodesy::GeodeticPosition;

/// Structural failures of a single line. Each variant names the exact
/// defect so corpus diagnostics can be tallied by kind.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line does not start with '$'")]
    MissingStart,
    #[error("checksum mismatch: computed {expected:02X}, sentence declares {actual:02X}")]
    BadChecksum { expected: u8, actual: u8 },
    #[error("sentence truncated before a complete checksum")]
    Truncated,
    #[error("non-ASCII byte at offset {position}")]
    NonAsciiByte { position: usize },
    #[error("checksum field is not two hex digits")]
    MalformedChecksum,
    #[error("missing or malformed address field")]
    BadAddress,
}

impl ParseError {
    pub fn kind(&self) -> ParseErrorKind {
        match self {
            ParseError::MissingStart => ParseErrorKind::MissingStart,
            ParseError::BadChecksum { .. } => ParseErrorKind::BadChecksum,
            ParseError::Truncated => ParseErrorKind::Truncated,
            ParseError::NonAsciiByte { .. } => ParseErrorKind::NonAsciiByte,
            ParseError::MalformedChecksum => ParseErrorKind::MalformedChecksum,
            ParseError::BadAddress => ParseErrorKind::BadAddress,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParseErrorKind {
    MissingStart,
    BadChecksum,
    Truncated,
    NonAsciiByte,
    MalformedChecksum,
    BadAddress,
}

/// Content failures of a structurally valid GGA sentence.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixError {
    #[error("GGA needs {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("field {0} is not a valid number")]
    BadNumber(usize),
    #[error("unsupported fix quality {0}")]
    InvalidFixQuality(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NmeaSentence {
    /// Talker + sentence type, e.g. `GPGGA`.
    pub address: String,
    pub fields: Vec<String>,
    pub checksum: u8,
    pub raw_line: String,
}

impl NmeaSentence {
    pub fn talker(&self) -> &str {
        &self.address[..self.address.len().saturating_sub(3)]
    }

    /// Last three characters of the address (`GGA`, `RMC`, ...).
    pub fn sentence_type(&self) -> &str {
        &self.address[self.address.len().saturating_sub(3)..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixQuality {
    Invalid,
    Gps,
    Dgps,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsFix {
    /// UTC seconds; time of day plus the caller-supplied day start.
    pub timestamp: f64,
    pub position: GeodeticPosition,
    pub fix_quality: FixQuality,
    pub num_satellites: u32,
    pub hdop: f64,
}

/// XOR of every byte in `payload` (the text between `$` and `*`).
pub fn checksum(payload: &[u8]) -> u8 {
    payload.iter().fold(0u8, |acc, b| acc ^ b)
}

pub fn parse_sentence(line: &str) -> Result<NmeaSentence, ParseError> {
    parse_sentence_bytes(line.as_bytes())
}

/// Byte-level entry point; never panics on arbitrary input.
pub fn parse_sentence_bytes(line: &[u8]) -> Result<NmeaSentence, ParseError> {
    let line = trim_line_end(line);
    if line.first() != Some(&b'$') {
        return Err(ParseError::MissingStart);
    }
    if let Some(position) = line.iter().position(|b| !b.is_ascii()) {
        return Err(ParseError::NonAsciiByte { position });
    }
    let star = line.iter().rposition(|&b| b == b'*').ok_or(ParseError::Truncated)?;
    let payload = &line[1..star];
    let tail = &line[star + 1..];
    if tail.len() < 2 {
        return Err(ParseError::Truncated);
    }
    if tail.len() > 2 {
        return Err(ParseError::MalformedChecksum);
    }
    let actual = std::str::from_utf8(tail)
        .ok()
        .filter(|s| s.bytes().all(|b| b.is_ascii_hexdigit()))
        .and_then(|s| u8::from_str_radix(s, 16).ok())
        .ok_or(ParseError::MalformedChecksum)?;
    let expected = checksum(payload);
    if expected != actual {
        return Err(ParseError::BadChecksum { expected, actual });
    }

    // ASCII was checked above, so this cannot fail.
    let text = std::str::from_utf8(payload).map_err(|_| ParseError::BadAddress)?;
    let mut parts = text.split(',');
    let address = parts.next().unwrap_or_default();
    if !(3..=6).contains(&address.len()) || !address.bytes().all(|b| b.is_ascii_alphanumeric()) {
        return Err(ParseError::BadAddress);
    }
    Ok(NmeaSentence {
        address: address.to_string(),
        fields: parts.map(str::to_string).collect(),
        checksum: actual,
        raw_line: String::from_utf8_lossy(line).into_owned(),
    })
}

fn trim_line_end(mut line: &[u8]) -> &[u8] {
    while let Some((&last, rest)) = line.split_last() {
        if last == b'\n' || last == b'\r' || last == b' ' || last == b'\t' {
            line = rest;
        } else {
            break;
        }
    }
    line
}

const GGA_FIELDS: usize = 14;

/// Converts a GGA sentence into a fix. Non-GGA sentences and fixes with
/// quality 0 yield `Ok(None)`. `day_start_s` is added to the GGA time of day.
pub fn sentence_to_fix(s: &NmeaSentence, day_start_s: f64) -> Result<Option<GpsFix>, FixError> {
    if s.sentence_type() != "GGA" {
        return Ok(None);
    }
    let f = &s.fields;
    if f.len() < GGA_FIELDS {
        return Err(FixError::FieldCount {
            expected: GGA_FIELDS,
            found: f.len(),
        });
    }
    let quality: u8 = f[5].parse().map_err(|_| FixError::BadNumber(5))?;
    let fix_quality = match quality {
        0 => return Ok(None),
        1 => FixQuality::Gps,
        2 => FixQuality::Dgps,
        q => return Err(FixError::InvalidFixQuality(q)),
    };
    let tod = parse_time_of_day(&f[0]).ok_or(FixError::BadNumber(0))?;
    let lat = parse_coordinate(&f[1], 90.0).ok_or(FixError::BadNumber(1))?;
    let lat = match f[2].as_str() {
        "N" => lat,
        "S" => -lat,
        _ => return Err(FixError::BadNumber(2)),
    };
    let lon = parse_coordinate(&f[3], 180.0).ok_or(FixError::BadNumber(3))?;
    let lon = match f[4].as_str() {
        "E" => lon,
        "W" => -lon,
        _ => return Err(FixError::BadNumber(4)),
    };
    let num_satellites: u32 = f[6].parse().map_err(|_| FixError::BadNumber(6))?;
    let hdop = parse_finite(&f[7]).ok_or(FixError::BadNumber(7))?;
    let altitude = parse_finite(&f[8]).ok_or(FixError::BadNumber(8))?;
    let position = GeodeticPosition::new(lat, lon, altitude).map_err(|_| FixError::BadNumber(1))?;
    Ok(Some(GpsFix {
        timestamp: day_start_s + tod,
        position,
        fix_quality,
        num_satellites,
        hdop,
    }))
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_time_of_day(s: &str) -> Option<f64> {
    if s.len() < 6 || !s.as_bytes()[..6].iter().all(u8::is_ascii_digit) {
        return None;
    }
    let hh: f64 = s[0..2].parse().ok()?;
    let mm: f64 = s[2..4].parse().ok()?;
    let ss: f64 = if s.len() > 6 { s[4..].parse().ok()? } else { s[4..6].parse().ok()? };
    if hh >= 24.0 || mm >= 60.0 || !(0.0..61.0).contains(&ss) {
        return None;
    }
    Some(hh * 3600.0 + mm * 60.0 + ss)
}

fn parse_coordinate(s: &str, max_deg: f64) -> Option<f64> {
    if s.starts_with('-') || s.starts_with('+') {
        return None;
    }
    let deg = ddmm_to_degrees(parse_finite(s)?)?;
    (deg <= max_deg).then_some(deg)
}

/// NMEA `[d]ddmm.mmmm` → decimal degrees (unsigned).
pub fn ddmm_to_degrees(value: f64) -> Option<f64> {
    if !(value.is_finite() && value >= 0.0) {
        return None;
    }
    let degrees = (value / 100.0).floor();
    let minutes = value - degrees * 100.0;
    (minutes < 60.0).then(|| degrees + minutes / 60.0)
}

/// Decimal degrees (unsigned) → `[d]ddmm.mmmm…` with `deg_width` degree
/// digits and `decimals` fractional minute digits.
pub fn format_ddmm(degrees: f64, deg_width: usize, decimals: usize) -> String {
    let mut whole = degrees.abs().floor();
    let scale = 10f64.powi(decimals as i32);
    let mut minutes = ((degrees.abs() - whole) * 60.0 * scale).round() / scale;
    if minutes >= 60.0 {
        whole += 1.0;
        minutes -= 60.0;
    }
    format!(
        "{:0dw$}{:0mw$.prec$}",
        whole as u32,
        minutes,
        dw = deg_width,
        mw = decimals + 3,
        prec = decimals
    )
}

/// Fractional minute digits written by [`format_gga`]; 1e-7 minutes is
/// about 0.2 mm on the ground.
pub const GGA_MINUTE_DECIMALS: usize = 7;

/// Writes a checksummed GGA sentence (no line terminator).
pub fn format_gga(time_of_day_s: f64, position: &GeodeticPosition, num_satellites: u32, hdop: f64) -> String {
    let tod = time_of_day_s.rem_euclid(86_400.0);
    let centis = (tod * 100.0).round() as u64;
    let (hh, rem) = (centis / 360_000, centis % 360_000);
    let (mm, rem) = (rem / 6000, rem % 6000);
    let lat = position.latitude_deg();
    let lon = position.longitude_deg();
    let payload = format!(
        "GPGGA,{:02}{:02}{:02}.{:02},{},{},{},{},1,{:02},{:.1},{:.3},M,0.0,M,,",
        hh % 24,
        mm,
        rem / 100,
        rem % 100,
        format_ddmm(lat, 2, GGA_MINUTE_DECIMALS),
        if lat < 0.0 { 'S' } else { 'N' },
        format_ddmm(lon, 3, GGA_MINUTE_DECIMALS),
        if lon < 0.0 { 'W' } else { 'E' },
        num_satellites,
        hdop,
        position.altitude_m(),
    );
    format!("${}*{:02X}", payload, checksum(payload.as_bytes()))
}

/// Per-run diagnostics of a [`FixStream`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreamTally {
    pub lines: usize,
    pub fixes: usize,
    /// Valid sentences that carry no usable fix (other types, quality 0).
    pub skipped: usize,
    /// Fixes dropped for having too few satellites.
    pub low_satellites: usize,
    pub parse_errors: Vec<(usize, ParseErrorKind)>,
    pub fix_errors: Vec<(usize, FixError)>,
}

impl StreamTally {
    pub fn error_count(&self) -> usize {
        self.parse_errors.len() + self.fix_errors.len()
    }
}

impl fmt::Display for StreamTally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} lines, {} fixes, {} skipped, {} low-satellite, {} errors",
            self.lines,
            self.fixes,
            self.skipped,
            self.low_satellites,
            self.error_count()
        )
    }
}

/// Minimum satellites for a 3D fix.
pub const MIN_SATELLITES: u32 = 4;

/// Lazily turns a line source into fixes. Malformed lines are tallied and
/// skipped; they never end the stream.
pub struct FixStream<I> {
    lines: I,
    day_start_s: f64,
    min_satellites: u32,
    tally: StreamTally,
}

pub fn stream_fixes<I, S>(lines: I) -> FixStream<I::IntoIter>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    FixStream {
        lines: lines.into_iter(),
        day_start_s: 0.0,
        min_satellites: MIN_SATELLITES,
        tally: StreamTally::default(),
    }
}

impl<I> FixStream<I> {
    pub fn with_day_start(mut self, day_start_s: f64) -> Self {
        self.day_start_s = day_start_s;
        self
    }

    pub fn with_min_satellites(mut self, min: u32) -> Self {
        self.min_satellites = min;
        self
    }

    pub fn tally(&self) -> &StreamTally {
        &self.tally
    }
}

impl<I, S> Iterator for FixStream<I>
where
    I: Iterator<Item = S>,
    S: AsRef<[u8]>,
{
    type Item = GpsFix;

    fn next(&mut self) -> Option<GpsFix> {
        for line in self.lines.by_ref() {
            let line = line.as_ref();
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            self.tally.lines += 1;
            let line_no = self.tally.lines;
            let sentence = match parse_sentence_bytes(line) {
                Ok(s) => s,
                Err(e) => {
                    self.tally.parse_errors.push((line_no, e.kind()));
                    continue;
                }
            };
            match sentence_to_fix(&sentence, self.day_start_s) {
                Ok(Some(fix)) if fix.num_satellites < self.min_satellites => self.tally.low_satellites += 1,
                Ok(Some(fix)) => {
                    self.tally.fixes += 1;
                    return Some(fix);
                }
                Ok(None) => self.tally.skipped += 1,
                Err(e) => self.tally.fix_errors.push((line_no, e)),
            }
        }
        None
    }
}
