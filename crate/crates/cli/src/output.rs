use std::io::{self, Write};

use serde_json::Value;

use crate::args::Format;

/// One command result, renderable in every output format. `json` is the
/// full document; `header` and `rows` are its tabular view.
pub struct Rendered {
    pub json: Value,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Rendered {
    pub fn write_to<W: Write>(&self, format: Format, mut w: W) -> io::Result<()> {
        match format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut w, &self.json)?;
                writeln!(w)?;
            }
            Format::Csv => {
                let mut out = csv::Writer::from_writer(&mut w);
                out.write_record(&self.header)?;
                for row in &self.rows {
                    out.write_record(row)?;
                }
                out.flush()?;
            }
            Format::Table => w.write_all(table(&self.header, &self.rows).as_bytes())?,
        }
        w.flush()
    }
}

pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("{}\n", padded.join("  ").trim_end())
    };
    let mut s = line(header.to_vec());
    s.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
    for row in rows {
        s.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    s
}

pub fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_aligns() {
        let t = table(&["id", "score"], &[vec!["A".into(), "50.080".into()], vec!["long".into(), "1".into()]]);
        assert_eq!(t, "id    score\n----  ------\nA     50.080\nlong  1\n");
    }

    #[test]
    fn csv_quotes() {
        let r = Rendered { json: Value::Null, header: vec!["a", "b"], rows: vec![vec!["x,y".into(), "1".into()]] };
        let mut buf = Vec::new();
        r.write_to(Format::Csv, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n\"x,y\",1\n");
    }
}
