use std::collections::HashMap;

use memexplain_core::feature_store::memf::{self, MemfData};
use memexplain_core::feature_store::*;
use memexplain_core::Error;
use proptest::prelude::*;

fn matrix_strategy() -> impl Strategy<Value = FeatureMatrix> {
    (1usize..6, 0usize..8).prop_flat_map(|(dim, n)| {
        (
            Just(dim),
            proptest::collection::hash_set("[a-z0-9_-]{1,12}", n),
            proptest::collection::vec(-1e6f32..1e6f32, n * dim),
        )
            .prop_map(|(dim, ids, vectors)| {
                FeatureMatrix::new(FeatureSource::Synthetic, dim, ids.into_iter().collect(), vectors)
                    .unwrap()
            })
    })
}

proptest! {
    #[test]
    fn write_then_read_is_bit_identical(m in matrix_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("synthetic.memf");
        write_feature_file(&path, &m).unwrap();
        let back = read_feature_file(&path).unwrap();
        prop_assert_eq!(&back, &m);
        let first = std::fs::read(&path).unwrap();
        write_feature_file(&path, &back).unwrap();
        prop_assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn concat_prefix_is_first_matrix(a in matrix_strategy(), extra in 1usize..4, seed in any::<u64>()) {
        let mut rows: Vec<(String, Vec<f32>)> = a
            .ids()
            .iter()
            .map(|id| (id.clone(), (0..extra).map(|j| (j as f32) + (seed % 97) as f32).collect()))
            .collect();
        rows.reverse();
        let b = FeatureMatrix::new(
            FeatureSource::Bertweet,
            extra,
            rows.iter().map(|r| r.0.clone()).collect(),
            rows.iter().flat_map(|r| r.1.clone()).collect(),
        )
        .unwrap();
        let c = concat_features(&a, &b).unwrap();
        prop_assert_eq!(c.dim(), a.dim() + extra);
        for (i, id) in a.ids().iter().enumerate() {
            let row = c.row_by_id(id).unwrap();
            prop_assert_eq!(&row[..a.dim()], a.row(i));
            prop_assert_eq!(&row[a.dim()..], b.row_by_id(id).unwrap());
        }
    }

    #[test]
    fn validation_counts_match_scan(
        rows in proptest::collection::vec((0u8..2, 0u8..2, 0u8..2, 0u8..2, 0u8..2), 0..60)
    ) {
        let entries: Vec<MemeEntry> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| MemeEntry {
                id: format!("m{i}"),
                text: String::new(),
                image_path: None,
                labels: MAMI_B_LABELS
                    .iter()
                    .zip([r.0, r.1, r.2, r.3, r.4])
                    .map(|(l, v)| (l.to_string(), v))
                    .collect(),
            })
            .collect();
        let m = Manifest::new(Task::MamiB, Split::Train, entries);
        let report = validate_manifest(&m, None);
        let mut scan: HashMap<&str, usize> = HashMap::new();
        for e in &m.entries {
            for (k, v) in &e.labels {
                *scan.entry(k.as_str()).or_default() += *v as usize;
            }
        }
        prop_assert_eq!(report.total, rows.len());
        for label in MAMI_B_LABELS {
            prop_assert_eq!(report.positives_for(label).unwrap(), scan.get(label).copied().unwrap_or(0));
        }
    }
}

#[test]
fn empty_file_keeps_dim() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.memf");
    let m = FeatureMatrix::new(FeatureSource::Clip, 4, vec![], vec![]).unwrap();
    write_feature_file(&path, &m).unwrap();
    let back = read_feature_file(&path).unwrap();
    assert_eq!(back.dim(), 4);
    assert!(back.is_empty());
    assert_eq!(back.source(), FeatureSource::Clip);
}

/// Builds a valid file of 10 records, then drops the last record while
/// keeping the header count and recomputing the checksum.
#[test]
fn short_body_is_corruption() {
    let data = MemfData {
        dim: 3,
        ids: (0..10).map(|i| format!("id{i}")).collect(),
        vectors: (0..30).map(|i| i as f32).collect(),
    };
    let full = memf::encode(&data).unwrap();
    let record = 2 + 3 + 3 * 4;
    let mut truncated = full[..full.len() - 4 - record].to_vec();
    assert_eq!(u64::from_le_bytes(truncated[12..20].try_into().unwrap()), 10);
    let crc = crc32fast_hash(&truncated);
    truncated.extend_from_slice(&crc.to_le_bytes());
    assert!(matches!(memf::decode(&truncated), Err(Error::Corruption(_))));

    // plain truncation (no valid trailer) is also corruption
    assert!(matches!(memf::decode(&full[..full.len() - 9]), Err(Error::Corruption(_))));
}

/// Independent CRC-32 (IEEE, reflected, poly 0xEDB88320).
fn crc32fast_hash(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

#[test]
fn stored_checksum_matches_reference_crc() {
    let data = MemfData {
        dim: 2,
        ids: vec!["x".into()],
        vectors: vec![1.5, -3.0],
    };
    let bytes = memf::encode(&data).unwrap();
    let body = &bytes[..bytes.len() - 4];
    assert_eq!(memf::trailer_crc(&bytes).unwrap(), crc32fast_hash(body));
}

#[test]
fn duplicate_id_in_file_is_integrity_error() {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"MEMF");
    bytes.extend_from_slice(&1u16.to_le_bytes());
    bytes.extend_from_slice(&0u16.to_le_bytes());
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&2u64.to_le_bytes());
    for _ in 0..2 {
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.push(b'a');
        bytes.extend_from_slice(&0.5f32.to_le_bytes());
    }
    let crc = crc32fast_hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    assert!(matches!(memf::decode(&bytes), Err(Error::Integrity(_))));
}

#[test]
fn nan_is_rejected_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.memf");
    let data = MemfData {
        dim: 2,
        ids: vec!["a".into()],
        vectors: vec![1.0, f32::NAN],
    };
    assert!(memf::write(&path, &data).is_err());
    assert!(!path.exists());
}

#[test]
fn three_record_file_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.memf");
    let ids = vec!["a".to_string(), "meme-02".into(), "xyz".into()];
    let id_bytes: usize = ids.iter().map(|i| 2 + i.len()).sum();
    let m = FeatureMatrix::new(FeatureSource::Synthetic, 2, ids, vec![0.0; 6]).unwrap();
    write_feature_file(&path, &m).unwrap();
    let size = std::fs::metadata(&path).unwrap().len() as usize;
    assert_eq!(size, 20 + id_bytes + 3 * 2 * 4 + 4);
}

#[test]
fn manifest_jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    std::fs::write(
        &path,
        "{\"id\":\"m1\",\"text\":\"hi\",\"image_path\":null,\"labels\":{\"misogynous\":1}}\n\n\
         {\"id\":\"m2\",\"text\":\"\",\"image_path\":\"img/m2.jpg\",\"labels\":{\"misogynous\":0}}\n",
    )
    .unwrap();
    let m = read_manifest(&path, Task::MamiA, Split::Train).unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(m.entries[1].image_path.as_deref(), Some("img/m2.jpg"));
    m.check().unwrap();
    let out = dir.path().join("copy.jsonl");
    write_manifest(&out, &m).unwrap();
    assert_eq!(read_manifest(&out, Task::MamiA, Split::Train).unwrap(), m);

    std::fs::write(&path, "{\"id\": 3}\n").unwrap();
    assert!(matches!(read_manifest(&path, Task::MamiA, Split::Train), Err(Error::Format(_))));
}

#[test]
fn zero_spread_data_is_one_nn_separable() {
    let (m, manifest) = gen_synthetic(&SyntheticSpec {
        label_count: 3,
        clusters_per_label: 2,
        dim: 16,
        samples_per_cluster: 5,
        cluster_spread: 0.0,
        seed: 21,
    })
    .unwrap();
    for (i, e) in manifest.entries.iter().enumerate() {
        let x = m.row(i);
        // nearest other sample by squared distance
        let nn = (0..m.len())
            .filter(|&j| j != i)
            .min_by(|&a, &b| {
                let d = |j: usize| m.row(j).iter().zip(x).map(|(u, v)| (u - v) * (u - v)).sum::<f32>();
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        assert_eq!(manifest.entries[nn].labels, e.labels);
    }
}
