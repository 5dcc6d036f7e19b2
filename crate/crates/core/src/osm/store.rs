use std::collections::BTreeSet;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::{PlaceRecord, RoadClass, RoadSegment};
use crate::codec;
use crate::error::{Error, Result};

/// The place universe of a corpus, sorted by `place_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    places: Vec<PlaceRecord>,
    pub source_digest: String,
    /// Seconds since the Unix epoch.
    pub extraction_timestamp: u64,
}

#[derive(Serialize, Deserialize)]
struct ManifestMeta {
    source_digest: String,
    extraction_timestamp: u64,
    count: usize,
}

impl CorpusManifest {
    /// Sorts `places` by id; duplicate ids are rejected.
    pub fn new(mut places: Vec<PlaceRecord>, source_digest: String, extraction_timestamp: u64) -> Result<Self> {
        places.sort_by(|a, b| a.place_id.cmp(&b.place_id));
        if let Some(w) = places.windows(2).find(|w| w[0].place_id == w[1].place_id) {
            return Err(Error::Argument(format!(
                "duplicate place_id '{}' in manifest",
                w[0].place_id
            )));
        }
        Ok(Self {
            places,
            source_digest,
            extraction_timestamp,
        })
    }

    pub fn places(&self) -> &[PlaceRecord] {
        &self.places
    }

    pub fn get(&self, place_id: &str) -> Option<&PlaceRecord> {
        self.places
            .binary_search_by(|p| p.place_id.as_str().cmp(place_id))
            .ok()
            .map(|i| &self.places[i])
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.places.iter().map(|p| p.place_id.as_str()).collect()
    }

    /// One JSON object per line, keys in `PlaceRecord` field order.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        for p in &self.places {
            serde_json::to_writer(&mut *w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// The digest and timestamp sidecar that accompanies the JSONL body.
    pub fn meta_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(&ManifestMeta {
            source_digest: self.source_digest.clone(),
            extraction_timestamp: self.extraction_timestamp,
            count: self.places.len(),
        })?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn read<R: BufRead>(jsonl: R, meta: &[u8]) -> Result<Self> {
        let meta: ManifestMeta = serde_json::from_slice(meta)?;
        let mut places = Vec::new();
        for (i, line) in jsonl.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let p: PlaceRecord = serde_json::from_str(&line).map_err(|e| {
                Error::format("manifest", format!("line {}: {e}", i + 1))
            })?;
            places.push(p);
        }
        if places.len() != meta.count {
            return Err(Error::format(
                "manifest",
                format!("sidecar declares {} places, body has {}", meta.count, places.len()),
            ));
        }
        Self::new(places, meta.source_digest, meta.extraction_timestamp)
    }
}

const ROADS_MAGIC: &[u8; 4] = b"MSRD";
const ROADS_VERSION: u16 = 1;
const ROADS_FORMAT: &str = "road segment";

/// `MSRD` columnar road file: header, then per segment the length-prefixed
/// way id, class code u8, vertex count u32 and `f64` lat/lon pairs.
pub fn write_roads<W: Write>(w: &mut W, roads: &[RoadSegment]) -> Result<()> {
    codec::write_magic(w, ROADS_MAGIC, ROADS_VERSION)?;
    for r in roads {
        codec::write_str(w, &r.way_id)?;
        w.write_all(&[r.road_class.code()])?;
        w.write_all(&(r.polyline.len() as u32).to_le_bytes())?;
        for &(lat, lon) in &r.polyline {
            w.write_all(&lat.to_le_bytes())?;
            w.write_all(&lon.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_roads<R: Read>(r: &mut R) -> Result<Vec<RoadSegment>> {
    codec::read_magic(r, ROADS_MAGIC, ROADS_FORMAT, ROADS_VERSION)?;
    let mut roads = Vec::new();
    loop {
        // a clean end of file can only fall on a record boundary
        let mut len = [0u8; 4];
        match r.read(&mut len[..1])? {
            0 => break,
            _ => r.read_exact(&mut len[1..]).map_err(|_| Error::format(ROADS_FORMAT, "truncated file"))?,
        }
        let mut id = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut id)
            .map_err(|_| Error::format(ROADS_FORMAT, "truncated file"))?;
        let way_id = String::from_utf8(id)
            .map_err(|_| Error::format(ROADS_FORMAT, "way id is not UTF-8"))?;
        let code = codec::read_u8(r, ROADS_FORMAT)?;
        let road_class = RoadClass::from_code(code)
            .ok_or_else(|| Error::format(ROADS_FORMAT, format!("unknown road class {code}")))?;
        let n = codec::read_u32(r, ROADS_FORMAT)? as usize;
        let mut polyline = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let lat = codec::read_f64(r, ROADS_FORMAT)?;
            let lon = codec::read_f64(r, ROADS_FORMAT)?;
            polyline.push((lat, lon));
        }
        let seg = RoadSegment::new(way_id, road_class, polyline)
            .map_err(|e| Error::format(ROADS_FORMAT, e.to_string()))?;
        roads.push(seg);
    }
    Ok(roads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::osm::PlaceClass;
    use proptest::prelude::*;

    fn arb_place() -> impl Strategy<Value = PlaceRecord> {
        (
            "[a-z0-9]{1,8}",
            "\\PC{0,12}",
            prop::sample::select(PlaceClass::ALL.to_vec()),
            -90.0f64..=90.0,
            -180.0f64..=180.0,
            prop::option::of("[a-z]{1,6}"),
        )
            .prop_map(|(id, name, class, lat, lon, family)| {
                let mut p = PlaceRecord::new(id, name, class, lat, lon).unwrap();
                p.family = family;
                p
            })
    }

    proptest! {
        #[test]
        fn manifest_round_trip(places in prop::collection::btree_map("[a-z0-9]{1,8}", arb_place(), 0..20)) {
            let places: Vec<PlaceRecord> = places
                .into_iter()
                .map(|(id, mut p)| { p.place_id = id; p })
                .collect();
            let m = CorpusManifest::new(places, "abc".into(), 17).unwrap();
            let mut body = Vec::new();
            m.write_jsonl(&mut body).unwrap();
            let back = CorpusManifest::read(&body[..], &m.meta_json().unwrap()).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn roads_round_trip(raw in prop::collection::vec(
            ("[a-z0-9]{0,6}", 0u8..8, prop::collection::vec((-90.0f64..90.0, -180.0f64..180.0), 2..6)),
            0..10,
        )) {
            let roads: Vec<RoadSegment> = raw
                .into_iter()
                .filter_map(|(id, c, pts)| RoadSegment::new(id, RoadClass::from_code(c).unwrap(), pts).ok())
                .collect();
            let mut bytes = Vec::new();
            write_roads(&mut bytes, &roads).unwrap();
            prop_assert_eq!(read_roads(&mut &bytes[..]).unwrap(), roads);
        }
    }

    #[test]
    fn manifest_keys_in_fixed_order() {
        let p = PlaceRecord::new("1", "A", PlaceClass::Town, 52.0, 4.3).unwrap();
        let m = CorpusManifest::new(vec![p], String::new(), 0).unwrap();
        let mut body = Vec::new();
        m.write_jsonl(&mut body).unwrap();
        assert_eq!(
            String::from_utf8(body).unwrap(),
            "{\"place_id\":\"1\",\"name\":\"A\",\"place_class\":\"town\",\"lat\":52.0,\"lon\":4.3}\n"
        );
    }

    #[test]
    fn duplicates_rejected_and_sorted() {
        let a = PlaceRecord::new("b", "", PlaceClass::Town, 0.0, 0.0).unwrap();
        let b = PlaceRecord::new("a", "", PlaceClass::Town, 0.0, 0.0).unwrap();
        let m = CorpusManifest::new(vec![a.clone(), b.clone()], String::new(), 0).unwrap();
        assert_eq!(m.places()[0].place_id, "a");
        assert_eq!(m.get("b"), Some(&a));
        assert!(m.get("c").is_none());
        assert!(CorpusManifest::new(vec![a.clone(), a], String::new(), 0).is_err());
    }

    #[test]
    fn roads_reject_truncation() {
        let seg = RoadSegment::new("w1", RoadClass::Rail, vec![(0.0, 0.0), (1.0, 1.0)]).unwrap();
        let mut bytes = Vec::new();
        write_roads(&mut bytes, &[seg]).unwrap();
        assert_eq!(&bytes[..6], b"MSRD\x01\x00");
        for cut in 7..bytes.len() {
            assert!(read_roads(&mut &bytes[..cut]).is_err(), "cut at {cut}");
        }
    }
}
