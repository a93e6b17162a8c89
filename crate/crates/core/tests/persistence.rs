use std::collections::BTreeMap;

use clonebot_core::embedding::{load_vectors, save_vectors, EmbeddingVector};
use clonebot_core::index::{HnswParams, IndexBuilder, IndexKind, Metric, SealedIndex};
use proptest::prelude::*;

fn vectors(raw: &[Vec<f32>]) -> BTreeMap<u64, EmbeddingVector> {
    raw.iter()
        .enumerate()
        .map(|(i, v)| (i as u64 * 3, EmbeddingVector::new(v.clone()).unwrap()))
        .collect()
}

fn sealed(kind: IndexKind, raw: &[Vec<f32>]) -> SealedIndex {
    let mut b = IndexBuilder::new(kind, Metric::L2, raw[0].len()).unwrap();
    for (i, v) in raw.iter().enumerate() {
        b.add_slice(1000 - i as u64, v).unwrap();
    }
    b.build()
}

fn raw_vectors() -> impl Strategy<Value = Vec<Vec<f32>>> {
    (1usize..6).prop_flat_map(|dim| prop::collection::vec(prop::collection::vec(-1e6f32..1e6, dim), 1..40))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cbve_round_trip_is_bit_exact(raw in raw_vectors()) {
        let vs = vectors(&raw);
        let mut buf = Vec::new();
        save_vectors(&vs, raw[0].len(), &mut buf).unwrap();
        prop_assert_eq!(buf.len(), 18 + vs.len() * (8 + 4 * raw[0].len()));
        let back = load_vectors(&buf[..]).unwrap();
        let mut again = Vec::new();
        save_vectors(&back, raw[0].len(), &mut again).unwrap();
        prop_assert_eq!(&again, &buf);
        for (id, v) in &vs {
            let b = &back[id];
            prop_assert!(v.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn cbix_round_trip_is_bit_exact(raw in raw_vectors(), hnsw in any::<bool>()) {
        let kind = if hnsw { IndexKind::Hnsw(HnswParams::default()) } else { IndexKind::Flat };
        let index = sealed(kind, &raw);
        let mut buf = Vec::new();
        index.write_to(&mut buf).unwrap();
        let back = SealedIndex::read_from(&buf[..]).unwrap();
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        prop_assert_eq!(again, buf);
    }

    #[test]
    fn any_flipped_bit_is_rejected(raw in raw_vectors(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let index = sealed(IndexKind::Hnsw(HnswParams::default()), &raw);
        let mut buf = Vec::new();
        index.write_to(&mut buf).unwrap();
        let i = pos.index(buf.len());
        buf[i] ^= 1 << bit;
        prop_assert!(SealedIndex::read_from(&buf[..]).is_err());
    }
}

#[test]
fn cbve_rejects_trailing_and_truncated_data() {
    let vs = vectors(&[vec![1.0, 2.0]]);
    let mut buf = Vec::new();
    save_vectors(&vs, 2, &mut buf).unwrap();
    let mut long = buf.clone();
    long.push(0);
    assert!(load_vectors(&long[..]).is_err());
    assert!(load_vectors(&buf[..buf.len() - 1]).is_err());
}
