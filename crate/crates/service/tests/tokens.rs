use layoutpref::layout::display_permutation;
use layoutpref_service::{DisplayClaims, TokenSigner};
use proptest::prelude::*;

fn claims() -> impl Strategy<Value = DisplayClaims> {
    ("[a-zA-Z0-9_-]{1,12}", "\\PC{0,16}", any::<u64>(), any::<u64>()).prop_map(|(g, a, seed, serial)| DisplayClaims {
        graph_id: g,
        annotator: a,
        display_order: display_permutation(seed),
        serial,
    })
}

proptest! {
    #[test]
    fn signed_claims_verify_under_the_same_key(c in claims(), key in prop::collection::vec(any::<u8>(), 1..40)) {
        let s = TokenSigner::new(key);
        prop_assert_eq!(s.verify(&s.sign(&c)), Some(c));
    }

    #[test]
    fn other_keys_reject(c in claims(), k1 in prop::collection::vec(any::<u8>(), 1..40), k2 in prop::collection::vec(any::<u8>(), 1..40)) {
        prop_assume!(k1 != k2);
        let token = TokenSigner::new(k1).sign(&c);
        prop_assert_eq!(TokenSigner::new(k2).verify(&token), None);
    }

    #[test]
    fn any_single_character_edit_is_rejected(c in claims(), at in any::<prop::sample::Index>(), repl in "[A-Za-z0-9_.-]") {
        let s = TokenSigner::new(b"k".to_vec());
        let token = s.sign(&c);
        let i = at.index(token.len());
        let r = repl.chars().next().unwrap();
        prop_assume!(token.as_bytes()[i] as char != r);
        let mut forged = token.clone();
        forged.replace_range(i..i + 1, &r.to_string());
        // A changed trailing base64 char can decode to the same bytes; anything accepted must be the original.
        if let Some(got) = s.verify(&forged) {
            prop_assert_eq!(got, c);
            prop_assert_eq!(i, token.len() - 1);
        }
    }
}
