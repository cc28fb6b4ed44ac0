use super::{propagate_shapes, IrError, NetworkSpec};

/// Parse and validate a NetworkSpec JSON document.
pub fn parse_netspec(text: &str) -> Result<NetworkSpec, IrError> {
    let net: NetworkSpec = serde_json::from_str(text).map_err(|e| IrError::Parse {
        line: e.line(),
        reason: e.to_string(),
    })?;
    propagate_shapes(&net)?;
    Ok(net)
}

pub fn emit_netspec(net: &NetworkSpec) -> String {
    // NetworkSpec holds only plain data; serialization cannot fail.
    let mut s = serde_json::to_string_pretty(net).expect("NetworkSpec serializes");
    s.push('\n');
    s
}
