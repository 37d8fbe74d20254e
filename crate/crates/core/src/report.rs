//! JSON and CSV report files.
//!
//! JSON is pretty-printed with struct fields in declaration order and every
//! real written with 17 significant digits (`{:.16e}`), which round-trips
//! `f64` exactly. Non-finite reals become `null`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::training::{EpochRecord, ExperimentReport};

struct ReportFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for ReportFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_writer<T: Serialize + ?Sized, W: Write>(value: &T, w: W) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(w, ReportFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    Ok(())
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    to_json_writer(value, &mut buf)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    to_json_writer(value, &mut w)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// One row of the certification output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub index: usize,
    pub predicted: u32,
    #[serde(rename = "true")]
    pub true_label: u32,
    pub margin: f64,
    pub certified_radius: f64,
}

pub const HISTOGRAM_HEADER: &str = "bin_start,count";
pub const EXPERIMENT_HEADER: &str =
    "method,train_acc,test_acc,adv_train_acc,adv_test_acc,test_lipschitz,gap,adv_gap";
pub const HISTORY_HEADER: &str = "epoch,lr,loss,train_acc";

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_lines(path: &Path, header: &str, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram_csv(hist: &[(f64, usize)], path: &Path) -> Result<()> {
    csv_lines(
        path,
        HISTOGRAM_HEADER,
        hist.iter().map(|(b, c)| format!("{},{c}", real(*b))),
    )
}

pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    csv_lines(
        path,
        HISTORY_HEADER,
        history.iter().map(|h| {
            format!("{},{},{},{}", h.epoch, real(h.lr), real(h.loss), real(h.train_acc))
        }),
    )
}

/// Method names must not contain commas.
pub fn write_experiment_csv(rows: &[(String, ExperimentReport)], path: &Path) -> Result<()> {
    if let Some((m, _)) = rows.iter().find(|(m, _)| m.contains(',') || m.contains('\n')) {
        return Err(Error::invalid(format!("method name `{m}` cannot be written to CSV")));
    }
    csv_lines(
        path,
        EXPERIMENT_HEADER,
        rows.iter().map(|(m, r)| {
            format!(
                "{m},{},{},{},{},{},{},{}",
                real(r.train_acc),
                real(r.test_acc),
                real(r.adv_train_acc),
                real(r.adv_test_acc),
                real(r.test_lipschitz),
                real(r.gap),
                real(r.adv_gap)
            )
        }),
    )
}

pub fn read_experiment_csv(path: &Path) -> Result<Vec<(String, ExperimentReport)>> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    match lines.next().transpose()? {
        Some(h) if h == EXPERIMENT_HEADER => {}
        other => {
            return Err(Error::format(
                "csv header",
                format!("expected `{EXPERIMENT_HEADER}`, found {other:?}"),
            ))
        }
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(Error::format("csv row", format!("row {} has {} columns", n + 1, cols.len())));
        }
        let v = cols[1..]
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|e| Error::format("csv value", format!("row {}: `{c}`: {e}", n + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((
            cols[0].to_string(),
            ExperimentReport {
                train_acc: v[0],
                test_acc: v[1],
                adv_train_acc: v[2],
                adv_test_acc: v[3],
                test_lipschitz: v[4],
                gap: v[5],
                adv_gap: v[6],
            },
        ));
    }
    Ok(rows)
}
