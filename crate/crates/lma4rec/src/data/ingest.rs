use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{DataError, Interaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Csv,
    Tsv,
    JsonLines,
}

impl std::str::FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(InputFormat::Csv),
            "tsv" => Ok(InputFormat::Tsv),
            "jsonl" | "json-lines" | "jsonlines" => Ok(InputFormat::JsonLines),
            other => Err(format!("unknown input format {other:?} (expected csv, tsv, or jsonl)")),
        }
    }
}

/// Parse `(user, item, timestamp)` records in file order. Delimited files
/// need a header naming the three columns; JSON-lines records carry the keys
/// directly. Errors report 1-based line numbers.
pub fn ingest(path: &Path, format: InputFormat) -> Result<Vec<Interaction>, DataError> {
    let file = std::fs::File::open(path)
        .map_err(|e| DataError::Io { path: path.display().to_string(), source: e })?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let mut out = Vec::new();
    match format {
        InputFormat::Csv | InputFormat::Tsv => {
            let sep = if format == InputFormat::Csv { ',' } else { '\t' };
            let header = loop {
                match lines.next() {
                    None => return Err(DataError::Empty),
                    Some((n, line)) => {
                        let line = read_line(path, n, line)?;
                        if !line.trim().is_empty() {
                            break line;
                        }
                    }
                }
            };
            let cols: Vec<&str> = header.trim().split(sep).map(str::trim).collect();
            let col = |name: &str| {
                cols.iter().position(|c| *c == name).ok_or_else(|| DataError::Parse {
                    line: 1,
                    msg: format!("header is missing a {name:?} column (found {cols:?})"),
                })
            };
            let (ui, ii, ti) = (col("user")?, col("item")?, col("timestamp")?);
            for (n, line) in lines {
                let line = read_line(path, n, line)?;
                if line.trim().is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split(sep).map(str::trim).collect();
                let need = ui.max(ii).max(ti);
                if fields.len() <= need {
                    return Err(DataError::Parse {
                        line: n + 1,
                        msg: format!("expected at least {} fields, found {}", need + 1, fields.len()),
                    });
                }
                let timestamp = fields[ti].parse::<i64>().map_err(|_| DataError::Parse {
                    line: n + 1,
                    msg: format!("timestamp {:?} is not an integer", fields[ti]),
                })?;
                if fields[ui].is_empty() || fields[ii].is_empty() {
                    return Err(DataError::Parse { line: n + 1, msg: "empty user or item key".into() });
                }
                out.push(Interaction {
                    user: fields[ui].to_string(),
                    item: fields[ii].to_string(),
                    timestamp,
                });
            }
        }
        InputFormat::JsonLines => {
            for (n, line) in lines {
                let line = read_line(path, n, line)?;
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value = serde_json::from_str(&line)
                    .map_err(|e| DataError::Parse { line: n + 1, msg: e.to_string() })?;
                let field = |key: &str| {
                    value.get(key).ok_or_else(|| DataError::Parse {
                        line: n + 1,
                        msg: format!("record is missing the {key:?} key"),
                    })
                };
                let key_string = |v: &serde_json::Value, key: &str| match v {
                    serde_json::Value::String(s) => Ok(s.clone()),
                    serde_json::Value::Number(num) => Ok(num.to_string()),
                    _ => Err(DataError::Parse {
                        line: n + 1,
                        msg: format!("{key} must be a string or number"),
                    }),
                };
                let user = key_string(field("user")?, "user")?;
                let item = key_string(field("item")?, "item")?;
                let timestamp = field("timestamp")?.as_i64().ok_or_else(|| DataError::Parse {
                    line: n + 1,
                    msg: "timestamp must be an integer".into(),
                })?;
                out.push(Interaction { user, item, timestamp });
            }
        }
    }
    if out.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(out)
}

fn read_line(path: &Path, _n: usize, line: std::io::Result<String>) -> Result<String, DataError> {
    line.map_err(|e| DataError::Io { path: path.display().to_string(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(name: &str, body: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("lma4rec-ingest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn tsv_parses_three_records() {
        let path = write_temp("three.tsv", "user\titem\ttimestamp\nu1\ti1\t10\nu1\ti2\t11\nu2\ti1\t12\n");
        let got = ingest(&path, InputFormat::Tsv).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0], Interaction { user: "u1".into(), item: "i1".into(), timestamp: 10 });
    }

    #[test]
    fn missing_timestamp_names_the_line() {
        let path = write_temp("bad.tsv", "user\titem\ttimestamp\nu1\ti1\t10\nu1\ti2\n");
        let err = ingest(&path, InputFormat::Tsv).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn empty_file_is_an_error() {
        let path = write_temp("empty.tsv", "");
        assert!(matches!(ingest(&path, InputFormat::Tsv), Err(DataError::Empty)));
    }

    #[test]
    fn jsonl_and_tsv_agree_on_the_same_data() {
        let tsv = write_temp("same.tsv", "user\titem\ttimestamp\na\tx\t1\nb\ty\t2\n");
        let jsonl = write_temp(
            "same.jsonl",
            "{\"user\":\"a\",\"item\":\"x\",\"timestamp\":1}\n{\"user\":\"b\",\"item\":\"y\",\"timestamp\":2}\n",
        );
        assert_eq!(ingest(&tsv, InputFormat::Tsv).unwrap(), ingest(&jsonl, InputFormat::JsonLines).unwrap());
    }

    #[test]
    fn csv_header_order_is_flexible() {
        let path = write_temp("cols.csv", "timestamp,item,user\n5,i9,u3\n");
        let got = ingest(&path, InputFormat::Csv).unwrap();
        assert_eq!(got[0], Interaction { user: "u3".into(), item: "i9".into(), timestamp: 5 });
    }
}
