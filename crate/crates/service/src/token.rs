//! Opaque display tokens: the served permutation, signed with HMAC-SHA256 so
//! clients cannot alter which algorithm sits at which position.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use layoutpref::layout::is_permutation;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayClaims {
    #[serde(rename = "g")]
    pub graph_id: String,
    #[serde(rename = "a")]
    pub annotator: String,
    #[serde(rename = "o")]
    pub display_order: [usize; 8],
    /// Serve counter, so two serves of the same graph get distinct tokens.
    #[serde(rename = "n")]
    pub serial: u64,
}

#[derive(Clone)]
pub struct TokenSigner {
    secret: Vec<u8>,
}

impl std::fmt::Debug for TokenSigner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TokenSigner(..)")
    }
}

impl TokenSigner {
    pub fn new(secret: impl Into<Vec<u8>>) -> Self {
        Self { secret: secret.into() }
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.secret).expect("HMAC accepts keys of any length")
    }

    pub fn sign(&self, claims: &DisplayClaims) -> String {
        let payload = URL_SAFE_NO_PAD.encode(serde_json::to_vec(claims).expect("claims serialize"));
        let mut mac = self.mac();
        mac.update(payload.as_bytes());
        let sig = URL_SAFE_NO_PAD.encode(mac.finalize().into_bytes());
        format!("{payload}.{sig}")
    }

    /// Checks the signature in constant time and decodes the claims.
    pub fn verify(&self, token: &str) -> Option<DisplayClaims> {
        let (payload, sig) = token.split_once('.')?;
        let sig = URL_SAFE_NO_PAD.decode(sig).ok()?;
        let mut mac = self.mac();
        mac.update(payload.as_bytes());
        mac.verify_slice(&sig).ok()?;
        let claims: DisplayClaims = serde_json::from_slice(&URL_SAFE_NO_PAD.decode(payload).ok()?).ok()?;
        is_permutation(&claims.display_order).then_some(claims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn claims() -> DisplayClaims {
        DisplayClaims {
            graph_id: "g1".into(),
            annotator: "ann".into(),
            display_order: [7, 6, 5, 4, 3, 2, 1, 0],
            serial: 3,
        }
    }

    #[test]
    fn round_trip() {
        let s = TokenSigner::new("secret");
        assert_eq!(s.verify(&s.sign(&claims())), Some(claims()));
    }

    #[test]
    fn tampering_is_detected() {
        let s = TokenSigner::new("secret");
        let token = s.sign(&claims());
        let (_, sig) = token.split_once('.').unwrap();
        let mut forged_claims = claims();
        forged_claims.display_order = [0, 1, 2, 3, 4, 5, 6, 7];
        let forged_payload = URL_SAFE_NO_PAD.encode(serde_json::to_vec(&forged_claims).unwrap());
        assert_eq!(s.verify(&format!("{forged_payload}.{sig}")), None);
        assert_eq!(TokenSigner::new("other").verify(&token), None);
        assert_eq!(s.verify("garbage"), None);
        assert_eq!(s.verify(""), None);
    }
}
