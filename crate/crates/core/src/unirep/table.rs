//! Template linearization of tables and the inverse parser.
//!
//! A table renders as a sequence of sentences separated by single spaces:
//!
//! ```text
//! [Table: <title>.] Row one's <h1> is <c1>, the <h2> is <c2>. Row two's ...
//! ```
//!
//! A table with no rows renders its header as `Columns: <h1>, <h2>.` so the
//! column names survive the round trip. Any header, cell or title that could
//! be confused with the surrounding template is wrapped in double quotes, with
//! embedded quotes doubled.

use serde::{Deserialize, Serialize};

use super::UnirepError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDoc {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub header: Vec<String>,
    #[serde(default)]
    pub rows: Vec<Vec<String>>,
}

impl TableDoc {
    pub fn validate(&self) -> Result<(), UnirepError> {
        if self.header.is_empty() {
            return Err(UnirepError::EmptyHeader);
        }
        for (index, row) in self.rows.iter().enumerate() {
            if row.len() != self.header.len() {
                return Err(UnirepError::RaggedRow {
                    row: index,
                    expected: self.header.len(),
                    found: row.len(),
                });
            }
        }
        Ok(())
    }
}

/// Failure to read a linearized table back. `position` is a byte offset.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("table parse error at byte {position}: {message}")]
pub struct TableParseError {
    pub position: usize,
    pub message: String,
}

const ORDINAL_WORDS: [&str; 10] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

/// English ordinal word through ten, decimal numeral afterwards. `index` is 1-based.
pub fn ordinal(index: usize) -> String {
    match index {
        1..=10 => ORDINAL_WORDS[index - 1].to_string(),
        _ => index.to_string(),
    }
}

fn needs_quotes(value: &str) -> bool {
    value.is_empty()
        || value.starts_with(char::is_whitespace)
        || value.ends_with(char::is_whitespace)
        || value.contains([',', '.', '\'', ':', '"'])
        || value.starts_with("Row")
        || value.split_whitespace().any(|word| word == "is")
}

fn push_field(out: &mut String, value: &str) {
    if needs_quotes(value) {
        out.push('"');
        out.push_str(&value.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(value);
    }
}

pub fn linearize_table(table: &TableDoc) -> Result<String, UnirepError> {
    table.validate()?;
    let mut sentences = Vec::with_capacity(table.rows.len() + 2);

    if let Some(title) = &table.title {
        let mut s = String::from("Table: ");
        push_field(&mut s, title);
        s.push('.');
        sentences.push(s);
    }

    if table.rows.is_empty() {
        let mut s = String::from("Columns: ");
        for (j, name) in table.header.iter().enumerate() {
            if j > 0 {
                s.push_str(", ");
            }
            push_field(&mut s, name);
        }
        s.push('.');
        sentences.push(s);
    }

    for (i, row) in table.rows.iter().enumerate() {
        let mut s = format!("Row {}'s ", ordinal(i + 1));
        for (j, (name, cell)) in table.header.iter().zip(row).enumerate() {
            if j > 0 {
                s.push_str(", the ");
            }
            push_field(&mut s, name);
            s.push_str(" is ");
            push_field(&mut s, cell);
        }
        s.push('.');
        sentences.push(s);
    }

    Ok(sentences.join(" "))
}

#[derive(Clone, Copy)]
enum Stop {
    /// Unquoted value runs up to the next ` is `.
    Is,
    /// Unquoted value runs up to the next `,` or `.`.
    CommaOrDot,
    /// Unquoted value runs up to the next `.`.
    Dot,
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn error(&self, message: impl Into<String>) -> TableParseError {
        TableParseError {
            position: self.pos,
            message: message.into(),
        }
    }

    fn eat(&mut self, literal: &str) -> bool {
        if self.rest().starts_with(literal) {
            self.pos += literal.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, literal: &str) -> Result<(), TableParseError> {
        if self.eat(literal) {
            Ok(())
        } else {
            Err(self.error(format!("expected {literal:?}")))
        }
    }

    fn field(&mut self, stop: Stop) -> Result<String, TableParseError> {
        if self.rest().starts_with('"') {
            return self.quoted();
        }
        let rest = self.rest();
        let end = match stop {
            Stop::Is => rest.find(" is "),
            Stop::CommaOrDot => rest.find([',', '.']),
            Stop::Dot => rest.find('.'),
        };
        let Some(end) = end else {
            return Err(self.error("unterminated value"));
        };
        if end == 0 {
            return Err(self.error("empty unquoted value"));
        }
        self.pos += end;
        Ok(rest[..end].to_string())
    }

    fn quoted(&mut self) -> Result<String, TableParseError> {
        let start = self.pos;
        self.pos += 1;
        let mut value = String::new();
        loop {
            let rest = self.rest();
            let Some(q) = rest.find('"') else {
                return Err(TableParseError {
                    position: start,
                    message: "unterminated quote".into(),
                });
            };
            value.push_str(&rest[..q]);
            self.pos += q + 1;
            if self.rest().starts_with('"') {
                value.push('"');
                self.pos += 1;
            } else {
                return Ok(value);
            }
        }
    }

    /// Consumes the single space between sentences, or succeeds at end of input.
    fn sentence_break(&mut self) -> Result<(), TableParseError> {
        if self.at_end() {
            Ok(())
        } else {
            self.expect(" ")
        }
    }
}

/// Reads a table back from the output of [`linearize_table`]. The returned
/// table has an empty `id`.
pub fn reconstruct_table(text: &str) -> Result<TableDoc, TableParseError> {
    if text.is_empty() {
        return Err(TableParseError {
            position: 0,
            message: "empty input".into(),
        });
    }
    let mut cur = Cursor { src: text, pos: 0 };

    let title = if cur.eat("Table: ") {
        let title = cur.field(Stop::Dot)?;
        cur.expect(".")?;
        cur.sentence_break()?;
        Some(title)
    } else {
        None
    };

    if cur.at_end() {
        return Err(cur.error("missing rows or column list"));
    }

    if cur.eat("Columns: ") {
        let mut header = vec![cur.field(Stop::CommaOrDot)?];
        while cur.eat(", ") {
            header.push(cur.field(Stop::CommaOrDot)?);
        }
        cur.expect(".")?;
        if !cur.at_end() {
            return Err(cur.error("trailing input after column list"));
        }
        return Ok(TableDoc {
            id: String::new(),
            title,
            header,
            rows: Vec::new(),
        });
    }

    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    while !cur.at_end() {
        let row_start = cur.pos;
        cur.expect("Row ")?;
        let expected = ordinal(rows.len() + 1);
        if !cur.eat(&expected) {
            return Err(cur.error(format!("expected row ordinal {expected:?}")));
        }
        cur.expect("'s ")?;

        let mut names = Vec::new();
        let mut cells = Vec::new();
        loop {
            names.push(cur.field(Stop::Is)?);
            cur.expect(" is ")?;
            cells.push(cur.field(Stop::CommaOrDot)?);
            if !cur.eat(", the ") {
                break;
            }
        }
        cur.expect(".")?;

        match &header {
            None => header = Some(names),
            Some(h) if *h == names => {}
            Some(_) => {
                return Err(TableParseError {
                    position: row_start,
                    message: "inconsistent headers across rows".into(),
                })
            }
        }
        rows.push(cells);
        cur.sentence_break()?;
    }

    Ok(TableDoc {
        id: String::new(),
        title,
        header: header.unwrap_or_default(),
        rows,
    })
}
