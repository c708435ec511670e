//! Instance file format: a single JSON object with rational strings.

use crate::error::{JrpError, Result};
use crate::model::{Instance, RequestId};

/// Parses and validates an instance. Errors carry the 1-based line of the
/// offending token or request when it can be located.
pub fn parse_instance(text: &str) -> Result<Instance> {
    let instance: Instance = serde_json::from_str(text).map_err(|e| JrpError::Parse {
        line: Some(e.line()).filter(|l| *l > 0),
        message: e.to_string(),
    })?;
    instance.check().map_err(|(id, message)| JrpError::Parse {
        line: id.and_then(|id| line_of_request(text, id)),
        message,
    })?;
    Ok(instance)
}

/// Compact canonical form: fixed field order, rationals in lowest terms,
/// overrides omitted when absent.
pub fn serialize_instance(instance: &Instance) -> String {
    serde_json::to_string(instance).expect("instance serialization is infallible")
}

/// Line of the first `"id": <id>` occurrence inside the requests array.
fn line_of_request(text: &str, id: RequestId) -> Option<usize> {
    let start = text.find("\"requests\"")?;
    let body = &text[start..];
    let bytes = body.as_bytes();
    let mut from = 0;
    while let Some(pos) = body[from..].find("\"id\"") {
        let mut k = from + pos + 4;
        while k < bytes.len() && (bytes[k] == b':' || bytes[k].is_ascii_whitespace()) {
            k += 1;
        }
        let digits_end = body[k..]
            .find(|c: char| !c.is_ascii_digit())
            .map_or(body.len(), |e| k + e);
        if body[k..digits_end].parse::<RequestId>().ok() == Some(id) {
            let offset = start + from + pos;
            return Some(text[..offset].matches('\n').count() + 1);
        }
        from = digits_end.max(from + pos + 4);
    }
    None
}
