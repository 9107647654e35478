//! Line-delimited JSON dumps: one header line, then one record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use cascadekit_core::{GenerationRecord, Header, LogitsRecord, Mode, Record};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Line {
    Header(Header),
    Logits(LogitsRecord),
    Gen(GenerationRecord),
}

impl From<Record> for Line {
    fn from(r: Record) -> Self {
        match r {
            Record::Logits(r) => Line::Logits(r),
            Record::Generation(r) => Line::Gen(r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Stop at the first bad line.
    #[default]
    Strict,
    /// Skip bad record lines and report them as diagnostics.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    /// 1-based.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dump {
    pub header: Header,
    pub records: Vec<Record>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Dump {
    pub fn mode(&self) -> Mode {
        self.header.mode
    }
}

fn parse_record(text: &str, header: &Header) -> std::result::Result<Record, String> {
    let record = match serde_json::from_str::<Line>(text).map_err(|e| e.to_string())? {
        Line::Header(_) => return Err("header may only appear on the first line".into()),
        Line::Logits(r) => Record::Logits(r),
        Line::Gen(r) => Record::Generation(r),
    };
    record.validate(header).map_err(|e| e.to_string())?;
    Ok(record)
}

/// Parses a dump from `reader`. `name` labels diagnostics and errors.
///
/// A missing or malformed header is always fatal; an empty input is an error.
pub fn parse_dump(reader: impl BufRead, name: &str, strictness: Strictness) -> Result<Dump> {
    let line_error = |line: usize, reason: String| Error::Line {
        path: name.into(),
        line,
        reason,
    };
    let mut header: Option<Header> = None;
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let number = i + 1;
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(h) = &header else {
            match serde_json::from_str::<Line>(&line) {
                Ok(Line::Header(h)) => {
                    h.validate().map_err(|e| line_error(number, e.to_string()))?;
                    header = Some(h);
                    continue;
                }
                Ok(_) => return Err(line_error(number, "first line must be a header".into())),
                Err(e) => return Err(line_error(number, format!("bad header: {e}"))),
            }
        };
        match parse_record(&line, h) {
            Ok(r) => records.push(r),
            Err(reason) if strictness == Strictness::Lenient => {
                diagnostics.push(Diagnostic {
                    line: number,
                    reason,
                })
            }
            Err(reason) => return Err(line_error(number, reason)),
        }
    }
    let header = header.ok_or_else(|| Error::file(name, "empty file"))?;
    Ok(Dump {
        header,
        records,
        diagnostics,
    })
}

pub fn read_dump(path: &Path, strictness: Strictness) -> Result<Dump> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dump(BufReader::new(file), &path.display().to_string(), strictness)
}

/// Writes `header` then one line per record.
pub fn write_dump<'a>(
    mut writer: impl Write,
    header: &Header,
    records: impl IntoIterator<Item = &'a Record>,
) -> std::io::Result<()> {
    let mut put = |line: &Line| -> std::io::Result<()> {
        serde_json::to_writer(&mut writer, line)?;
        writer.write_all(b"\n")
    };
    put(&Line::Header(header.clone()))?;
    for r in records {
        put(&Line::from(r.clone()))?;
    }
    writer.flush()
}

pub fn write_dump_file(path: &Path, header: &Header, records: &[Record]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dump(BufWriter::new(file), header, records).map_err(|e| Error::io(path, e))
}
