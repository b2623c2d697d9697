//! Shared helpers for the versioned structured-text files (model weights and
//! fitted initializers). Floats are stored with 17 significant decimal
//! digits, which round-trips every f64 exactly.

/// A parse failure with enough context to name the offending field.
#[derive(Debug, Clone)]
pub(crate) struct TextError {
    pub line: usize,
    pub field: String,
    pub reason: String,
}

impl TextError {
    pub fn new(line: usize, field: &str, reason: impl Into<String>) -> Self {
        Self { line, field: field.to_string(), reason: reason.into() }
    }
}

/// 17-significant-digit scientific notation; `parse::<f64>()` restores the
/// exact bit pattern.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn parse_f64(token: &str, line: usize, field: &str) -> Result<f64, TextError> {
    let value: f64 = token
        .parse()
        .map_err(|_| TextError::new(line, field, format!("not a number: {token:?}")))?;
    if !value.is_finite() {
        return Err(TextError::new(line, field, format!("non-finite value: {token:?}")));
    }
    Ok(value)
}

pub(crate) fn parse_usize(token: &str, line: usize, field: &str) -> Result<usize, TextError> {
    token
        .parse()
        .map_err(|_| TextError::new(line, field, format!("not a count: {token:?}")))
}

/// Line-oriented cursor that skips blank lines and tracks line numbers for
/// error reporting.
pub(crate) struct LineCursor<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineCursor<'a> {
    pub fn new(text: &'a str) -> Self {
        Self { lines: text.lines().enumerate() }
    }

    /// Next non-blank line as `(1-based line number, trimmed content)`.
    pub fn next_line(&mut self) -> Option<(usize, &'a str)> {
        for (idx, raw) in self.lines.by_ref() {
            let trimmed = raw.trim();
            if !trimmed.is_empty() {
                return Some((idx + 1, trimmed));
            }
        }
        None
    }

    /// Next line, failing with the expected field name on EOF.
    pub fn expect_line(&mut self, field: &str) -> Result<(usize, &'a str), TextError> {
        self.next_line()
            .ok_or_else(|| TextError::new(0, field, "file truncated"))
    }

    /// Fails if any non-blank content remains.
    pub fn expect_end(&mut self) -> Result<(), TextError> {
        if let Some((line, content)) = self.next_line() {
            return Err(TextError::new(
                line,
                "end",
                format!("unexpected trailing content: {content:?}"),
            ));
        }
        Ok(())
    }
}

/// Parses `count` whitespace-separated floats from one line.
pub(crate) fn parse_f64_row(
    line_no: usize,
    content: &str,
    count: usize,
    field: &str,
) -> Result<Vec<f64>, TextError> {
    let tokens: Vec<&str> = content.split_whitespace().collect();
    if tokens.len() != count {
        return Err(TextError::new(
            line_no,
            field,
            format!("expected {count} values, got {}", tokens.len()),
        ));
    }
    tokens
        .iter()
        .map(|t| parse_f64(t, line_no, field))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact() {
        for v in [0.1, -1.0 / 3.0, 1e-300, -0.0, 123456.789, f64::MIN_POSITIVE] {
            let text = format_f64(v);
            let back: f64 = text.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{text}");
        }
    }

    #[test]
    fn cursor_skips_blanks_and_reports_lines() {
        let mut cursor = LineCursor::new("a\n\n  \nb\n");
        assert_eq!(cursor.next_line(), Some((1, "a")));
        assert_eq!(cursor.next_line(), Some((4, "b")));
        assert_eq!(cursor.next_line(), None);
    }

    #[test]
    fn row_parse_validates_count_and_content() {
        assert!(parse_f64_row(1, "1.0 2.0", 2, "w").is_ok());
        assert!(parse_f64_row(1, "1.0", 2, "w").is_err());
        assert!(parse_f64_row(1, "1.0 abc", 2, "w").is_err());
        assert!(parse_f64_row(1, "1.0 inf", 2, "w").is_err());
    }
}
