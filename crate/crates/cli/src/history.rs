//! Line-delimited operation history files for the standalone checker.
//!
//! One record per line:
//!
//! ```text
//! op id=0 node=0 kind=write key=x value=1 inv=0 resp=1
//! op id=1 node=1 kind=read key=x returned=0 inv=2 resp=3
//! op id=2 node=0 kind=inc key=c amount=2 inv=4 resp=-
//! ```
//!
//! `resp=-` marks a pending operation. Blank lines and `#` comments are
//! ignored.

use anyhow::{anyhow, bail, Context, Result};

use capsim_core::automaton::NodeId;
use capsim_core::metrics::{ObjectSpec, OpKind, OperationHistory, OperationRecord};

fn field<'a>(parts: &'a [&'a str], name: &str) -> Result<&'a str> {
    parts
        .iter()
        .find_map(|p| p.strip_prefix(&format!("{name}=")))
        .ok_or_else(|| anyhow!("missing field `{name}`"))
}

fn parse_record(line: &str) -> Result<OperationRecord> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.first() != Some(&"op") {
        bail!("records must start with `op`");
    }
    let id: u64 = field(&parts, "id")?.parse().context("field `id`")?;
    let node: u32 = field(&parts, "node")?.parse().context("field `node`")?;
    let key = field(&parts, "key")?.to_string();
    let kind = match field(&parts, "kind")? {
        "write" => OpKind::Write {
            key,
            value: field(&parts, "value")?.parse().context("field `value`")?,
        },
        "read" => OpKind::Read {
            key,
            returned: field(&parts, "returned")?
                .parse()
                .context("field `returned`")?,
        },
        "inc" => OpKind::Inc {
            key,
            amount: field(&parts, "amount")?.parse().context("field `amount`")?,
        },
        other => bail!("unknown kind `{other}`"),
    };
    let inv: u64 = field(&parts, "inv")?.parse().context("field `inv`")?;
    let resp = match field(&parts, "resp")? {
        "-" => None,
        text => Some(text.parse::<u64>().context("field `resp`")?),
    };
    Ok(OperationRecord {
        id,
        node: NodeId(node),
        kind,
        inv,
        resp,
    })
}

/// Parses a history file body against the given object semantics.
pub fn parse_history(text: &str, object: ObjectSpec) -> Result<OperationHistory> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let record =
            parse_record(line).with_context(|| format!("history line {}", lineno + 1))?;
        records.push(record);
    }
    Ok(OperationHistory { records, object })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mixed_records() {
        let text = "\
# sample
op id=0 node=0 kind=write key=x value=1 inv=0 resp=1

op id=1 node=1 kind=read key=x returned=1 inv=2 resp=3
op id=2 node=0 kind=inc key=c amount=2 inv=4 resp=-
";
        let h = parse_history(text, ObjectSpec::Register).unwrap();
        assert_eq!(h.records.len(), 3);
        assert_eq!(h.records[2].resp, None);
    }

    #[test]
    fn reports_line_numbers() {
        let text = "op id=0 node=0 kind=write key=x inv=0 resp=1";
        let err = format!("{:#}", parse_history(text, ObjectSpec::Register).unwrap_err());
        assert!(err.contains("line 1"), "{err}");
        assert!(err.contains("value"), "{err}");
    }
}
