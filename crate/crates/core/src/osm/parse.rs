use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::bufread::GzDecoder;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{PlaceClass, PlaceRecord, RoadClass, RoadSegment};
use crate::error::{Error, Result};

/// Counters for input the parser tolerated rather than rejected.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ParseReport {
    pub nodes: u64,
    pub ways: u64,
    /// Road ways with fewer than two resolvable vertices.
    pub skipped_ways: u64,
    /// Road ways kept after dropping unresolvable node references.
    pub truncated_ways: u64,
    pub missing_node_refs: u64,
    /// Place nodes with out-of-range coordinates.
    pub invalid_places: u64,
}

impl ParseReport {
    fn merge(&mut self, other: &ParseReport) {
        self.nodes += other.nodes;
        self.ways += other.ways;
        self.skipped_ways += other.skipped_ways;
        self.truncated_ways += other.truncated_ways;
        self.missing_node_refs += other.missing_node_refs;
        self.invalid_places += other.invalid_places;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OsmExtract {
    pub places: Vec<PlaceRecord>,
    pub roads: Vec<RoadSegment>,
    pub report: ParseReport,
}

enum Element {
    None,
    Node {
        id: String,
        lat: f64,
        lon: f64,
        tags: Tags,
    },
    Way {
        id: String,
        refs: Vec<i64>,
        tags: Tags,
    },
}

#[derive(Default)]
struct Tags {
    place: Option<String>,
    name: Option<String>,
    highway: Option<String>,
    railway: Option<String>,
    tunnel: Option<String>,
}

impl Tags {
    fn set(&mut self, key: &[u8], value: String) {
        let slot = match key {
            b"place" => &mut self.place,
            b"name" => &mut self.name,
            b"highway" => &mut self.highway,
            b"railway" => &mut self.railway,
            b"tunnel" => &mut self.tunnel,
            _ => return,
        };
        *slot = Some(value);
    }
}

struct Parser<R> {
    reader: Reader<R>,
    coords: HashMap<i64, (f64, f64)>,
    out: OsmExtract,
}

/// Parses one OSM XML document in a single streaming pass. Gzip input is
/// detected from its magic bytes. Nodes must precede the ways that use them,
/// as in every OSM export.
pub fn parse_osm_xml<R: Read>(input: R) -> Result<OsmExtract> {
    let mut buffered = BufReader::new(input);
    let head = buffered.fill_buf()?;
    if head.starts_with(&[0x1f, 0x8b]) {
        parse_plain(BufReader::new(GzDecoder::new(buffered)))
    } else {
        parse_plain(buffered)
    }
}

pub fn parse_osm_file(path: &Path) -> Result<OsmExtract> {
    let file = File::open(path).map_err(|e| Error::path_io(path, e))?;
    parse_osm_xml(file)
}

/// Parses several files on separate threads and concatenates the results in
/// argument order.
pub fn parse_osm_files(paths: &[PathBuf]) -> Result<OsmExtract> {
    let results: Vec<Result<OsmExtract>> = std::thread::scope(|scope| {
        let handles: Vec<_> = paths
            .iter()
            .map(|p| scope.spawn(move || parse_osm_file(p)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("parser thread panicked"))
            .collect()
    });
    let mut merged = OsmExtract::default();
    for r in results {
        let r = r?;
        merged.places.extend(r.places);
        merged.roads.extend(r.roads);
        merged.report.merge(&r.report);
    }
    Ok(merged)
}

fn parse_plain<R: BufRead>(input: R) -> Result<OsmExtract> {
    let mut parser = Parser {
        reader: Reader::from_reader(input),
        coords: HashMap::new(),
        out: OsmExtract::default(),
    };
    parser.run()?;
    Ok(parser.out)
}

impl<R: BufRead> Parser<R> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Xml {
            offset: self.reader.buffer_position(),
            message: message.into(),
        }
    }

    fn run(&mut self) -> Result<()> {
        let mut buf = Vec::new();
        let mut current = Element::None;
        let mut depth = 0usize;
        let mut seen_root = false;
        loop {
            let event = self.reader.read_event_into(&mut buf).map_err(|e| Error::Xml {
                offset: self.reader.error_position(),
                message: e.to_string(),
            })?;
            match event {
                Event::Start(e) => {
                    depth += 1;
                    seen_root = true;
                    self.open(&e, &mut current, false)?;
                }
                Event::Empty(e) => {
                    seen_root = true;
                    self.open(&e, &mut current, true)?;
                }
                Event::End(e) => {
                    depth = depth.saturating_sub(1);
                    if matches!(e.name().as_ref(), b"node" | b"way") {
                        let done = std::mem::replace(&mut current, Element::None);
                        self.finish(done);
                    }
                }
                Event::Eof => break,
                _ => {}
            }
            buf.clear();
        }
        if depth != 0 {
            return Err(self.error("unexpected end of document inside an open element"));
        }
        if !seen_root {
            return Err(self.error("document has no root element"));
        }
        Ok(())
    }

    fn open(&mut self, e: &BytesStart<'_>, current: &mut Element, empty: bool) -> Result<()> {
        match e.name().as_ref() {
            b"node" => {
                self.out.report.nodes += 1;
                let id = self.required(e, b"id")?;
                let lat = self.coordinate(e, b"lat")?;
                let lon = self.coordinate(e, b"lon")?;
                let numeric: i64 = id
                    .parse()
                    .map_err(|_| self.error(format!("node id '{id}' is not an integer")))?;
                self.coords.insert(numeric, (lat, lon));
                let node = Element::Node {
                    id,
                    lat,
                    lon,
                    tags: Tags::default(),
                };
                if empty {
                    self.finish(node);
                } else {
                    *current = node;
                }
            }
            b"way" => {
                self.out.report.ways += 1;
                let id = self.required(e, b"id")?;
                let way = Element::Way {
                    id,
                    refs: Vec::new(),
                    tags: Tags::default(),
                };
                if empty {
                    self.finish(way);
                } else {
                    *current = way;
                }
            }
            b"nd" => {
                if let Element::Way { refs, .. } = current {
                    let r = self.required(e, b"ref")?;
                    let r = r
                        .parse()
                        .map_err(|_| self.error(format!("nd ref '{r}' is not an integer")))?;
                    refs.push(r);
                }
            }
            b"tag" => {
                let tags = match current {
                    Element::Node { tags, .. } | Element::Way { tags, .. } => tags,
                    Element::None => return Ok(()),
                };
                let k = self.required(e, b"k")?;
                let v = self.required(e, b"v")?;
                tags.set(k.as_bytes(), v);
            }
            _ => {}
        }
        Ok(())
    }

    fn attribute(&self, e: &BytesStart<'_>, key: &[u8]) -> Result<Option<String>> {
        for attr in e.attributes() {
            let attr = attr.map_err(|err| self.error(err.to_string()))?;
            if attr.key.as_ref() == key {
                let value = attr
                    .decode_and_unescape_value(self.reader.decoder())
                    .map_err(|err| self.error(err.to_string()))?;
                return Ok(Some(value.into_owned()));
            }
        }
        Ok(None)
    }

    fn required(&self, e: &BytesStart<'_>, key: &[u8]) -> Result<String> {
        self.attribute(e, key)?.ok_or_else(|| {
            self.error(format!(
                "<{}> is missing attribute '{}'",
                String::from_utf8_lossy(e.name().as_ref()),
                String::from_utf8_lossy(key)
            ))
        })
    }

    fn coordinate(&self, e: &BytesStart<'_>, key: &[u8]) -> Result<f64> {
        let raw = self.required(e, key)?;
        raw.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.error(format!("bad coordinate '{raw}'")))
    }

    fn finish(&mut self, element: Element) {
        match element {
            Element::None => {}
            Element::Node { id, lat, lon, tags } => {
                let Some(class) = tags.place.as_deref().and_then(|p| p.parse::<PlaceClass>().ok())
                else {
                    return;
                };
                match PlaceRecord::new(id, tags.name.unwrap_or_default(), class, lat, lon) {
                    Ok(place) => self.out.places.push(place),
                    Err(_) => self.out.report.invalid_places += 1,
                }
            }
            Element::Way { id, refs, tags } => {
                let Some(class) = RoadClass::from_tags(
                    tags.highway.as_deref(),
                    tags.railway.as_deref(),
                    tags.tunnel.as_deref(),
                ) else {
                    return;
                };
                let (polyline, missing) = self.resolve(&refs);
                self.out.report.missing_node_refs += missing as u64;
                match RoadSegment::new(id, class, polyline) {
                    Ok(segment) => {
                        if missing > 0 {
                            self.out.report.truncated_ways += 1;
                        }
                        self.out.roads.push(segment);
                    }
                    Err(_) => self.out.report.skipped_ways += 1,
                }
            }
        }
    }

    /// Resolves node references to coordinates and returns the longest run of
    /// consecutive resolvable references (earliest on ties), with consecutive
    /// duplicate vertices collapsed, plus the number of missing references.
    fn resolve(&self, refs: &[i64]) -> (Vec<(f64, f64)>, usize) {
        let mut missing = 0;
        let mut best: Vec<(f64, f64)> = Vec::new();
        let mut run: Vec<(f64, f64)> = Vec::new();
        for r in refs {
            match self.coords.get(r) {
                Some(&c) => {
                    if run.last() != Some(&c) {
                        run.push(c);
                    }
                }
                None => {
                    missing += 1;
                    if run.len() > best.len() {
                        best = std::mem::take(&mut run);
                    } else {
                        run.clear();
                    }
                }
            }
        }
        if run.len() > best.len() {
            best = run;
        }
        (best, missing)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(xml: &str) -> Result<OsmExtract> {
        parse_osm_xml(xml.as_bytes())
    }

    #[test]
    fn single_town() {
        let out = parse(
            r#"<osm><node id="7" lat="52.0" lon="4.3"><tag k="place" v="town"/><tag k="name" v="Delft"/></node></osm>"#,
        )
        .unwrap();
        assert_eq!(out.places.len(), 1);
        let p = &out.places[0];
        assert_eq!(
            (p.place_id.as_str(), p.place_class, p.lat, p.lon, p.name.as_str()),
            ("7", PlaceClass::Town, 52.0, 4.3, "Delft")
        );
    }

    #[test]
    fn single_primary_way() {
        let out = parse(
            r#"<osm>
              <node id="1" lat="0" lon="0"/><node id="2" lat="0" lon="1"/><node id="3" lat="1" lon="1"/>
              <way id="9"><nd ref="1"/><nd ref="2"/><nd ref="3"/><tag k="highway" v="primary"/></way>
            </osm>"#,
        )
        .unwrap();
        assert_eq!(out.roads.len(), 1);
        assert_eq!(out.roads[0].road_class, RoadClass::Primary);
        assert_eq!(out.roads[0].polyline, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn keeps_longest_resolvable_run() {
        let out = parse(
            r#"<osm>
              <node id="1" lat="0" lon="0"/><node id="2" lat="0" lon="1"/><node id="3" lat="1" lon="1"/>
              <node id="4" lat="2" lon="1"/>
              <way id="a"><nd ref="1"/><nd ref="99"/><nd ref="2"/><nd ref="3"/><nd ref="4"/><tag k="highway" v="residential"/></way>
              <way id="b"><nd ref="1"/><nd ref="98"/><nd ref="4"/><tag k="railway" v="rail"/></way>
            </osm>"#,
        )
        .unwrap();
        assert_eq!(out.roads.len(), 1);
        assert_eq!(out.roads[0].polyline.len(), 3);
        assert_eq!(out.report.truncated_ways, 1);
        assert_eq!(out.report.skipped_ways, 1);
        assert_eq!(out.report.missing_node_refs, 2);
    }

    #[test]
    fn untagged_and_non_place_nodes_ignored() {
        let out = parse(
            r#"<osm><node id="1" lat="0" lon="0"><tag k="place" v="hamlet"/></node>
               <node id="2" lat="0" lon="1"/><way id="3"><nd ref="1"/><nd ref="2"/><tag k="building" v="yes"/></way></osm>"#,
        )
        .unwrap();
        assert!(out.places.is_empty() && out.roads.is_empty());
    }

    #[test]
    fn malformed_reports_offset() {
        let err = parse(r#"<osm><node id="1" lat="0" lon="0"></way></osm>"#).unwrap_err();
        match err {
            Error::Xml { offset, .. } => assert!(offset > 0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("<osm><node id=\"1\" lat=\"x\" lon=\"0\"/></osm>"), Err(Error::Xml { .. })));
        assert!(matches!(parse("<osm><node id=\"1\""), Err(Error::Xml { .. })));
        assert!(matches!(parse("<osm>"), Err(Error::Xml { .. })));
        assert!(matches!(parse(""), Err(Error::Xml { .. })));
    }

    #[test]
    fn gzip_detected_by_magic() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let xml = r#"<osm><node id="5" lat="1" lon="2"><tag k="place" v="city"/></node></osm>"#;
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(xml.as_bytes()).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(parse_osm_xml(&gz[..]).unwrap(), parse(xml).unwrap());
    }

    #[test]
    fn collapses_repeated_vertices() {
        let out = parse(
            r#"<osm><node id="1" lat="0" lon="0"/><node id="2" lat="0" lon="0"/><node id="3" lat="0" lon="1"/>
               <way id="w"><nd ref="1"/><nd ref="2"/><nd ref="3"/><tag k="highway" v="tertiary"/></way>
               <way id="v"><nd ref="1"/><nd ref="2"/><tag k="highway" v="tertiary"/></way></osm>"#,
        )
        .unwrap();
        assert_eq!(out.roads.len(), 1);
        assert_eq!(out.roads[0].polyline.len(), 2);
        assert_eq!(out.report.skipped_ways, 1);
    }
}
