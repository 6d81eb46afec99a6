use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubmissionIssue {
    Missing,
    Unparseable(String),
    HeaderMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    RowCountMismatch {
        expected: usize,
        found: usize,
    },
}

impl fmt::Display for SubmissionIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubmissionIssue::Missing => f.write_str("Missing: no submission file"),
            SubmissionIssue::Unparseable(e) => write!(f, "Unparseable: {e}"),
            SubmissionIssue::HeaderMismatch { expected, found } => write!(
                f,
                "HeaderMismatch: expected [{}], found [{}]",
                expected.join(","),
                found.join(",")
            ),
            SubmissionIssue::RowCountMismatch { expected, found } => {
                write!(
                    f,
                    "RowCountMismatch: expected {expected} rows, found {found}"
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionCheck {
    pub valid: bool,
    pub reasons: Vec<SubmissionIssue>,
}

fn read_table(bytes: &[u8]) -> Result<(Vec<String>, usize), String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = 0;
    for rec in rdr.records() {
        rec.map_err(|e| e.to_string())?;
        rows += 1;
    }
    Ok((header, rows))
}

/// Parses the header of a delimited table, rejecting files whose first row
/// looks like data (any empty or numeric field).
pub fn parse_table_header(bytes: &[u8]) -> Result<Vec<String>, String> {
    let (header, _) = read_table(bytes)?;
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err("empty file or header".into());
    }
    if let Some(bad) = header
        .iter()
        .find(|h| h.is_empty() || h.parse::<f64>().is_ok())
    {
        return Err(format!("first row is not a header (field `{bad}`)"));
    }
    Ok(header)
}

/// A submission is valid iff it exists, parses, and matches the sample's
/// header (same names, same order) and row count.
pub fn validate_submission(file: Option<&[u8]>, sample: &[u8]) -> SubmissionCheck {
    let invalid = |reasons| SubmissionCheck {
        valid: false,
        reasons,
    };
    let Some(file) = file else {
        return invalid(vec![SubmissionIssue::Missing]);
    };
    let (expected_header, expected_rows) = match read_table(sample) {
        Ok(t) => t,
        Err(e) => return invalid(vec![SubmissionIssue::Unparseable(format!("sample: {e}"))]),
    };
    let (header, rows) = match read_table(file) {
        Ok(t) => t,
        Err(e) => return invalid(vec![SubmissionIssue::Unparseable(e)]),
    };
    let mut reasons = Vec::new();
    if header != expected_header {
        reasons.push(SubmissionIssue::HeaderMismatch {
            expected: expected_header,
            found: header,
        });
    }
    if rows != expected_rows {
        reasons.push(SubmissionIssue::RowCountMismatch {
            expected: expected_rows,
            found: rows,
        });
    }
    SubmissionCheck {
        valid: reasons.is_empty(),
        reasons,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &[u8] = b"id,target,extra\n1,0,a\n2,0,b\n3,0,c\n";

    #[test]
    fn identical_shape_is_valid() {
        let sub = b"id,target,extra\n1,0.4,x\n2,0.9,y\n3,0.1,z\n";
        assert_eq!(
            validate_submission(Some(sub), SAMPLE),
            SubmissionCheck {
                valid: true,
                reasons: vec![]
            }
        );
    }

    #[test]
    fn missing_row() {
        let sub = b"id,target,extra\n1,0.4,x\n2,0.9,y\n";
        let c = validate_submission(Some(sub), SAMPLE);
        assert!(!c.valid);
        assert_eq!(
            c.reasons,
            vec![SubmissionIssue::RowCountMismatch {
                expected: 3,
                found: 2
            }]
        );
    }

    #[test]
    fn every_header_permutation_but_identity_fails() {
        let cols = ["id", "target", "extra"];
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for p in perms {
            let header: Vec<&str> = p.iter().map(|&i| cols[i]).collect();
            let sub = format!("{}\n1,0,a\n2,0,b\n3,0,c\n", header.join(","));
            let c = validate_submission(Some(sub.as_bytes()), SAMPLE);
            assert_eq!(c.valid, p == [0, 1, 2], "{header:?}");
            if p != [0, 1, 2] {
                assert!(matches!(
                    c.reasons[0],
                    SubmissionIssue::HeaderMismatch { .. }
                ));
            }
        }
    }

    #[test]
    fn missing_and_ragged() {
        assert_eq!(
            validate_submission(None, SAMPLE).reasons,
            vec![SubmissionIssue::Missing]
        );
        let ragged = b"id,target,extra\n1,0\n";
        assert!(matches!(
            validate_submission(Some(ragged), SAMPLE).reasons[0],
            SubmissionIssue::Unparseable(_)
        ));
    }

    #[test]
    fn header_detection() {
        assert_eq!(parse_table_header(b"id,y\n1,2\n").unwrap(), vec!["id", "y"]);
        assert!(parse_table_header(b"1,0.5\n2,0.1\n").is_err());
        assert!(parse_table_header(b"").is_err());
        assert!(parse_table_header(b"id,\n1,2\n").is_err());
    }
}
