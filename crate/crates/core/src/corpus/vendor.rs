//! Adapters for stored vendor attribute responses.
//!
//! Microsoft Face: a face object, an array of faces (first is used), or an
//! object wrapping `faceAttributes`. Consumed fields are
//! `facialHair.{beard, moustache, sideburns}` and `hair.bald`.
//!
//! Amazon Rekognition: a `DetectFaces` response (`FaceDetails[0]` is used)
//! or a bare face detail. Consumed field is `Beard.{Value, Confidence}`.

use std::str::FromStr;

use serde_json::Value;

use super::AttributeScores;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VendorKind {
    MsFace,
    Rekognition,
}

impl FromStr for VendorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "msface" | "ms" | "microsoft" => Ok(VendorKind::MsFace),
            "rekognition" | "rek" | "amazon" => Ok(VendorKind::Rekognition),
            _ => Err(format!("unknown vendor `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PayloadError {
    #[error("unparsable payload: {0}")]
    UnparsablePayload(String),
    #[error("missing field `{0}`")]
    MissingField(String),
}

/// Extracts the attribute scores a vendor response contributes. Unknown
/// fields are ignored; range checks happen at corpus ingest.
pub fn parse_vendor_payload(kind: VendorKind, payload: &str) -> Result<AttributeScores, PayloadError> {
    let value: Value = serde_json::from_str(payload).map_err(|e| PayloadError::UnparsablePayload(e.to_string()))?;
    match kind {
        VendorKind::MsFace => parse_ms_face(&value),
        VendorKind::Rekognition => parse_rekognition(&value),
    }
}

fn first_face<'a>(value: &'a Value, list_key: Option<&str>) -> Result<&'a Value, PayloadError> {
    let value = match (value, list_key) {
        (Value::Object(map), Some(key)) if map.contains_key(key) => &map[key],
        _ => value,
    };
    match value {
        Value::Array(faces) => faces.first().ok_or_else(|| PayloadError::MissingField("face".into())),
        Value::Object(_) => Ok(value),
        _ => Err(PayloadError::UnparsablePayload(
            "expected a JSON object or array".into(),
        )),
    }
}

fn number(obj: &Value, path: &str, key: &str) -> Result<f64, PayloadError> {
    match obj.get(key) {
        Some(v) => v
            .as_f64()
            .ok_or_else(|| PayloadError::UnparsablePayload(format!("`{path}.{key}` is not a number"))),
        None => Err(PayloadError::MissingField(format!("{path}.{key}"))),
    }
}

fn parse_ms_face(value: &Value) -> Result<AttributeScores, PayloadError> {
    let face = first_face(value, None)?;
    let attrs = face.get("faceAttributes").unwrap_or(face);
    let facial_hair = attrs
        .get("facialHair")
        .filter(|v| v.is_object())
        .ok_or_else(|| PayloadError::MissingField("facialHair".into()))?;
    let moustache = match facial_hair.get("moustache") {
        Some(_) => number(facial_hair, "facialHair", "moustache")?,
        None => number(facial_hair, "facialHair", "mustache")?,
    };
    let ms_bald = match attrs.get("hair") {
        Some(hair) if hair.get("bald").is_some() => Some(number(hair, "hair", "bald")?),
        _ => None,
    };
    Ok(AttributeScores {
        ms_beard: Some(number(facial_hair, "facialHair", "beard")?),
        ms_mustache: Some(moustache),
        ms_sideburns: Some(number(facial_hair, "facialHair", "sideburns")?),
        ms_bald,
        ..Default::default()
    })
}

fn parse_rekognition(value: &Value) -> Result<AttributeScores, PayloadError> {
    let face = first_face(value, Some("FaceDetails"))?;
    let beard = face
        .get("Beard")
        .filter(|v| v.is_object())
        .ok_or_else(|| PayloadError::MissingField("Beard".into()))?;
    let flag = match beard.get("Value") {
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(PayloadError::UnparsablePayload("`Beard.Value` is not a boolean".into())),
        None => return Err(PayloadError::MissingField("Beard.Value".into())),
    };
    Ok(AttributeScores {
        rek_facial_hair: Some(flag),
        rek_confidence: Some(number(beard, "Beard", "Confidence")?),
        ..Default::default()
    })
}
