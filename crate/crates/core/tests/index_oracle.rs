mod common;

use common::{brute_knn, random_vectors};
use urbanform::index::VectorIndex;

#[test]
fn matches_full_sort_for_every_k() {
    let data = random_vectors(1000, 64, 1);
    let queries = random_vectors(50, 64, 2);
    let index = VectorIndex::build(data.clone()).unwrap();
    for k in [1, 6, 50] {
        for q in &queries {
            let got = index.knn(&q.values, k, None).unwrap();
            let want = brute_knn(&data, &q.values, k, None);
            let ids: Vec<&str> = got.neighbors.iter().map(|n| n.place_id.as_str()).collect();
            let want_ids: Vec<&str> = want.iter().map(|w| w.0.as_str()).collect();
            assert_eq!(ids, want_ids, "k={k}");
            for (n, w) in got.neighbors.iter().zip(&want) {
                assert!((n.distance - w.1).abs() <= 1e-9 * w.1.max(1.0), "{} vs {}", n.distance, w.1);
            }
        }
    }
}

#[test]
fn by_id_excludes_the_query() {
    let data = random_vectors(300, 16, 3);
    let index = VectorIndex::build(data.clone()).unwrap();
    for v in data.iter().step_by(37) {
        let got = index.knn_by_id(&v.place_id, 6, true).unwrap();
        let want = brute_knn(&data, &v.values, 6, Some(&v.place_id));
        assert_eq!(got.query_id.as_deref(), Some(v.place_id.as_str()));
        let ids: Vec<&str> = got.neighbors.iter().map(|n| n.place_id.as_str()).collect();
        assert_eq!(ids, want.iter().map(|w| w.0.as_str()).collect::<Vec<_>>());
    }
}

#[test]
fn duplicate_vectors_order_by_id() {
    let mut data = random_vectors(20, 4, 4);
    for v in data.iter_mut().skip(10) {
        v.values = vec![0.5; 4];
    }
    let index = VectorIndex::build(data.clone()).unwrap();
    let got = index.knn(&[0.5; 4], 10, None).unwrap();
    let ids: Vec<&str> = got.neighbors.iter().map(|n| n.place_id.as_str()).collect();
    let mut want: Vec<&str> = data[10..].iter().map(|v| v.place_id.as_str()).collect();
    want.sort();
    assert_eq!(ids, want);
}

#[test]
fn survives_a_file_round_trip() {
    let data = random_vectors(100, 8, 5);
    let index = VectorIndex::build(data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.msvx");
    std::fs::write(&path, index.to_bytes().unwrap()).unwrap();
    let back = VectorIndex::from_bytes(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(back, index);
    let q = back.vector("p00042").unwrap().to_vec();
    assert_eq!(back.knn(&q, 3, None).unwrap(), index.knn(&q, 3, None).unwrap());
}
